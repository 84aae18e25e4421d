//! A two-unit surrogate process: exothermic CSTR with a coolant jacket,
//! draining into a separator with level and temperature loops.
//!
//! Eight measured channels, four manipulated ones:
//!
//! | idx | channel        | idx | channel         |
//! |-----|----------------|-----|-----------------|
//! | 0   | `feed_flow`    | 6   | `sep_temp`      |
//! | 1   | `feed_temp`    | 7   | `product_flow`  |
//! | 2   | `reactor_temp` | 8   | `feed_valve`    |
//! | 3   | `reactor_conc` | 9   | `coolant_valve` |
//! | 4   | `coolant_temp` | 10  | `drain_valve`   |
//! | 5   | `sep_level`    | 11  | `cond_valve`    |
//!
//! Integration is explicit Euler at a fixed timestep with a stability
//! guard. Sensor noise is Gaussian per measured channel and drawn in fixed
//! channel order every sample from a stream seeded by the run seed; fault
//! noise draws come from a separate stream seeded by the scenario and start
//! exactly at the onset sample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MEAS_CHANNELS: [&str; 8] = [
    "feed_flow",
    "feed_temp",
    "reactor_temp",
    "reactor_conc",
    "coolant_temp",
    "sep_level",
    "sep_temp",
    "product_flow",
];

pub const MV_CHANNELS: [&str; 4] = ["feed_valve", "coolant_valve", "drain_valve", "cond_valve"];

/// Boundary variables usable as step/random/drift fault targets.
pub const SIM_BOUNDARY_VARS: [&str; 5] = [
    "coolant_inlet_temp",
    "feed_inlet_temp",
    "feed_conc",
    "reaction_rate_factor",
    "cond_duty_factor",
];

pub fn sim_schema() -> Vec<String> {
    MEAS_CHANNELS
        .iter()
        .chain(MV_CHANNELS.iter())
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("integration became unstable at step {step}: {what}")]
    Unstable { step: usize, what: String },
    #[error("unknown fault target '{target}' for archetype {archetype}; valid: {valid}")]
    UnknownTarget {
        target: String,
        archetype: String,
        valid: String,
    },
    #[error("invalid scenario '{id}': {reason}")]
    InvalidScenario { id: String, reason: String },
    #[error("invalid process spec: {0}")]
    InvalidSpec(String),
}

/// Physical constants and boundary nominals. Defaults are tuned so the
/// design steady state sits at reactor 350 K / 0.5 mol/L with every valve
/// near 50 %.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantParams {
    /// Reactor holdup, liters (liquid-full, overflow to the separator).
    pub reactor_volume: f64,
    /// Feed flow at a wide-open feed valve, L/min.
    pub feed_flow_max: f64,
    /// First-order valve/flow lag, minutes.
    pub feed_valve_tau: f64,
    /// Arrhenius pre-exponential, 1/min.
    pub k0: f64,
    /// Activation energy over R, kelvin.
    pub e_over_r: f64,
    /// Adiabatic heat-rise gain: K per (mol/L reacted per min).
    pub heat_gain: f64,
    /// Reactor-to-jacket heat transfer, 1/min.
    pub jacket_coupling: f64,
    pub jacket_volume: f64,
    pub coolant_flow_max: f64,
    /// Jacket-side transfer coefficient, 1/min.
    pub jacket_transfer: f64,
    pub sep_volume_max: f64,
    pub sep_nominal_volume: f64,
    pub drain_flow_max: f64,
    /// Condenser duty at a wide-open cond valve, K/min.
    pub cond_duty: f64,
    // Boundary nominals (fault targets).
    pub coolant_inlet_temp: f64,
    pub feed_inlet_temp: f64,
    pub feed_conc: f64,
    pub reaction_rate_factor: f64,
    pub cond_duty_factor: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            reactor_volume: 100.0,
            feed_flow_max: 20.0,
            feed_valve_tau: 0.5,
            // k(350 K) = 0.1 /min with E/R = 5000 K.
            k0: 0.1 * (5000.0_f64 / 350.0).exp(),
            e_over_r: 5000.0,
            heat_gain: 200.0,
            jacket_coupling: 0.7,
            jacket_volume: 20.0,
            coolant_flow_max: 20.0,
            jacket_transfer: 2.0,
            sep_volume_max: 100.0,
            sep_nominal_volume: 50.0,
            drain_flow_max: 20.0,
            cond_duty: 8.0,
            coolant_inlet_temp: 300.0,
            feed_inlet_temp: 320.0,
            feed_conc: 1.0,
            reaction_rate_factor: 1.0,
            cond_duty_factor: 1.0,
        }
    }
}

/// True process state (pre-noise).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantState {
    pub feed_flow: f64,
    pub conc: f64,
    pub reactor_temp: f64,
    pub coolant_temp: f64,
    pub sep_volume: f64,
    pub sep_temp: f64,
}

impl Default for PlantState {
    fn default() -> Self {
        // Design steady state for the default parameters.
        Self {
            feed_flow: 10.0,
            conc: 0.5,
            reactor_temp: 350.0,
            coolant_temp: 340.0,
            sep_volume: 50.0,
            sep_temp: 330.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    /// Output rises when the measurement exceeds the setpoint.
    Direct,
    /// Output rises when the measurement falls below the setpoint.
    Reverse,
}

/// A PI loop binding one measured channel to one manipulated channel.
/// Output is `bias ± (Kc·e + Kc/τI·∫e)` clamped to `[0, 100]` %, with
/// conditional integration as anti-windup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiController {
    pub measured: String,
    pub manipulated: String,
    pub setpoint: f64,
    pub gain: f64,
    pub reset_minutes: f64,
    pub bias: f64,
    pub action: ControlAction,
}

/// Process structure: state initial values, PI bindings, sensor noise per
/// measured channel, timestep and duration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub plant: PlantParams,
    pub initial: PlantState,
    pub controllers: Vec<PiController>,
    /// One std per measured channel, in channel units.
    pub noise_std: Vec<f64>,
    pub dt_minutes: f64,
    /// Samples per run (one sample per Euler step).
    pub duration: usize,
}

impl Default for ProcessSpec {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            initial: PlantState::default(),
            controllers: default_controllers(),
            noise_std: vec![0.1, 0.2, 0.2, 0.02, 0.2, 0.3, 0.2, 0.1],
            dt_minutes: 0.1,
            duration: 500,
        }
    }
}

pub fn default_controllers() -> Vec<PiController> {
    vec![
        PiController {
            measured: "feed_flow".into(),
            manipulated: "feed_valve".into(),
            setpoint: 10.0,
            gain: 2.0,
            reset_minutes: 1.0,
            bias: 50.0,
            action: ControlAction::Reverse,
        },
        PiController {
            measured: "reactor_temp".into(),
            manipulated: "coolant_valve".into(),
            setpoint: 350.0,
            gain: 8.0,
            reset_minutes: 3.0,
            bias: 50.0,
            action: ControlAction::Direct,
        },
        PiController {
            measured: "sep_level".into(),
            manipulated: "drain_valve".into(),
            setpoint: 50.0,
            gain: 5.0,
            reset_minutes: 10.0,
            bias: 50.0,
            action: ControlAction::Direct,
        },
        PiController {
            measured: "sep_temp".into(),
            manipulated: "cond_valve".into(),
            setpoint: 330.0,
            gain: 10.0,
            reset_minutes: 4.0,
            bias: 50.0,
            action: ControlAction::Direct,
        },
    ]
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.noise_std.len() != MEAS_CHANNELS.len() {
            return Err(SimError::InvalidSpec(format!(
                "noise_std has {} entries, expected {}",
                self.noise_std.len(),
                MEAS_CHANNELS.len()
            )));
        }
        if self.noise_std.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(SimError::InvalidSpec("noise stds must be finite and >= 0".into()));
        }
        if !(self.dt_minutes > 0.0) || self.duration == 0 {
            return Err(SimError::InvalidSpec(
                "timestep must be positive and duration nonzero".into(),
            ));
        }
        for c in &self.controllers {
            if !MEAS_CHANNELS.contains(&c.measured.as_str()) {
                return Err(SimError::InvalidSpec(format!(
                    "controller measures unknown channel '{}'",
                    c.measured
                )));
            }
            if !MV_CHANNELS.contains(&c.manipulated.as_str()) {
                return Err(SimError::InvalidSpec(format!(
                    "controller manipulates unknown channel '{}'",
                    c.manipulated
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultArchetype {
    /// Additive constant offset on a boundary variable from onset.
    Step,
    /// Zero-mean Gaussian noise of std `magnitude` added from onset.
    Random,
    /// Linear ramp of `magnitude` per sample from onset.
    SlowDrift,
    /// The targeted manipulated variable freezes at its onset value.
    Sticking,
}

impl FaultArchetype {
    pub fn as_str(&self) -> &'static str {
        match self {
            FaultArchetype::Step => "step",
            FaultArchetype::Random => "random",
            FaultArchetype::SlowDrift => "slow_drift",
            FaultArchetype::Sticking => "sticking",
        }
    }
}

/// One fault specification (the IDV analogue).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultScenario {
    pub id: String,
    pub archetype: FaultArchetype,
    /// Boundary variable (step/random/drift) or manipulated channel
    /// (sticking).
    pub target: String,
    /// Target units: offset for step, noise std for random, slope per
    /// sample for drift. Ignored for sticking.
    pub magnitude: f64,
    pub onset_index: usize,
    /// Seeds the fault's own noise stream (random archetype).
    pub rng_seed: u64,
}

impl FaultScenario {
    pub fn validate(&self, spec: &ProcessSpec) -> Result<(), SimError> {
        if self.onset_index >= spec.duration {
            return Err(SimError::InvalidScenario {
                id: self.id.clone(),
                reason: format!(
                    "onset {} outside run duration {}",
                    self.onset_index, spec.duration
                ),
            });
        }
        match self.archetype {
            FaultArchetype::Sticking => {
                if !MV_CHANNELS.contains(&self.target.as_str()) {
                    return Err(SimError::UnknownTarget {
                        target: self.target.clone(),
                        archetype: self.archetype.as_str().into(),
                        valid: MV_CHANNELS.join(", "),
                    });
                }
            }
            _ => {
                if !SIM_BOUNDARY_VARS.contains(&self.target.as_str()) {
                    return Err(SimError::UnknownTarget {
                        target: self.target.clone(),
                        archetype: self.archetype.as_str().into(),
                        valid: SIM_BOUNDARY_VARS.join(", "),
                    });
                }
                if matches!(self.archetype, FaultArchetype::Step | FaultArchetype::SlowDrift)
                    && self.magnitude == 0.0
                {
                    return Err(SimError::InvalidScenario {
                        id: self.id.clone(),
                        reason: "step/drift magnitude must be nonzero".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// The default fault set used by the shipped experiment config: one of each
/// archetype, centred on the reactor cooling loop plus one feed-side fault.
pub fn default_scenarios(onset_index: usize) -> Vec<FaultScenario> {
    vec![
        FaultScenario {
            id: "coolant-step".into(),
            archetype: FaultArchetype::Step,
            target: "coolant_inlet_temp".into(),
            magnitude: 2.0,
            onset_index,
            rng_seed: 101,
        },
        FaultScenario {
            id: "coolant-random".into(),
            archetype: FaultArchetype::Random,
            target: "coolant_inlet_temp".into(),
            magnitude: 1.5,
            onset_index,
            rng_seed: 102,
        },
        FaultScenario {
            id: "kinetics-drift".into(),
            archetype: FaultArchetype::SlowDrift,
            target: "reaction_rate_factor".into(),
            magnitude: -4e-4,
            onset_index,
            rng_seed: 103,
        },
        FaultScenario {
            id: "coolant-valve-stick".into(),
            archetype: FaultArchetype::Sticking,
            target: "coolant_valve".into(),
            magnitude: 0.0,
            onset_index,
            rng_seed: 104,
        },
    ]
}

/// One simulated run: noisy measurements (what a dataset keeps) plus the
/// clean pre-noise trace (for oracle checks and deviation plots).
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub schema: Vec<String>,
    /// `[duration × 12]` row-major, sensor noise applied to measured
    /// channels; manipulated channels are recorded exactly.
    pub measured: Vec<f64>,
    /// Same layout, without sensor noise.
    pub clean: Vec<f64>,
    pub scenario_id: Option<String>,
    pub onset_index: Option<usize>,
}

impl RunOutput {
    pub fn num_samples(&self) -> usize {
        self.measured.len() / self.schema.len()
    }

    pub fn channel(&self, idx: usize) -> impl Iterator<Item = f64> + '_ {
        let m = self.schema.len();
        self.measured[idx..].iter().step_by(m).copied()
    }

    pub fn clean_channel(&self, idx: usize) -> impl Iterator<Item = f64> + '_ {
        let m = self.schema.len();
        self.clean[idx..].iter().step_by(m).copied()
    }
}

struct Boundaries {
    coolant_inlet_temp: f64,
    feed_inlet_temp: f64,
    feed_conc: f64,
    reaction_rate_factor: f64,
    cond_duty_factor: f64,
}

/// Simulate one run.
///
/// `run_seed` drives the sensor-noise stream; the fault's own draws come
/// from `scenario.rng_seed`, so the same `run_seed` with and without a
/// fault produces bitwise identical samples before the onset.
pub fn simulate(
    spec: &ProcessSpec,
    scenario: Option<&FaultScenario>,
    run_seed: u64,
) -> Result<RunOutput, SimError> {
    spec.validate()?;
    if let Some(sc) = scenario {
        sc.validate(spec)?;
    }

    let p = &spec.plant;
    let dt = spec.dt_minutes;
    let n_meas = MEAS_CHANNELS.len();
    let n_cols = n_meas + MV_CHANNELS.len();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut fault_rng = scenario.map(|sc| ChaCha8Rng::seed_from_u64(sc.rng_seed));
    let unit_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let mut state = spec.initial.clone();
    let mut integrals = vec![0.0; spec.controllers.len()];
    let mut prev_mv: Vec<f64> = {
        // Manipulated values before the first controller update: biases.
        let mut mv = vec![50.0; MV_CHANNELS.len()];
        for c in &spec.controllers {
            let idx = mv_index(&c.manipulated);
            mv[idx] = c.bias.clamp(0.0, 100.0);
        }
        mv
    };
    let mut stuck_value: Option<f64> = None;

    let mut measured = Vec::with_capacity(spec.duration * n_cols);
    let mut clean = Vec::with_capacity(spec.duration * n_cols);

    for t in 0..spec.duration {
        // Boundary values, with any boundary-target fault applied.
        let mut bounds = Boundaries {
            coolant_inlet_temp: p.coolant_inlet_temp,
            feed_inlet_temp: p.feed_inlet_temp,
            feed_conc: p.feed_conc,
            reaction_rate_factor: p.reaction_rate_factor,
            cond_duty_factor: p.cond_duty_factor,
        };
        if let Some(sc) = scenario {
            if t >= sc.onset_index && !matches!(sc.archetype, FaultArchetype::Sticking) {
                let effect = match sc.archetype {
                    FaultArchetype::Step => sc.magnitude,
                    FaultArchetype::SlowDrift => sc.magnitude * (t - sc.onset_index) as f64,
                    FaultArchetype::Random => {
                        let rng = fault_rng.as_mut().expect("scenario rng");
                        unit_normal.sample(rng) * sc.magnitude.abs()
                    }
                    FaultArchetype::Sticking => unreachable!(),
                };
                let slot = match sc.target.as_str() {
                    "coolant_inlet_temp" => &mut bounds.coolant_inlet_temp,
                    "feed_inlet_temp" => &mut bounds.feed_inlet_temp,
                    "feed_conc" => &mut bounds.feed_conc,
                    "reaction_rate_factor" => &mut bounds.reaction_rate_factor,
                    "cond_duty_factor" => &mut bounds.cond_duty_factor,
                    other => {
                        return Err(SimError::UnknownTarget {
                            target: other.into(),
                            archetype: sc.archetype.as_str().into(),
                            valid: SIM_BOUNDARY_VARS.join(", "),
                        })
                    }
                };
                *slot += effect;
            }
        }

        // Sensor noise, fixed draw order every sample.
        let noise: Vec<f64> = spec
            .noise_std
            .iter()
            .map(|s| unit_normal.sample(&mut noise_rng) * s)
            .collect();

        // True measured quantities at t. Product flow reflects the drain
        // valve of the previous sample (the flow the valve is commanding).
        let sep_level = state.sep_volume / p.sep_volume_max * 100.0;
        let product_flow = prev_mv[mv_index("drain_valve")] / 100.0 * p.drain_flow_max;
        let clean_meas = [
            state.feed_flow,
            bounds.feed_inlet_temp,
            state.reactor_temp,
            state.conc,
            state.coolant_temp,
            sep_level,
            state.sep_temp,
            product_flow,
        ];
        let meas: Vec<f64> = clean_meas
            .iter()
            .zip(&noise)
            .map(|(v, n)| v + n)
            .collect();

        // PI updates on the noisy measurements.
        let mut mv = prev_mv.clone();
        for (ci, c) in spec.controllers.iter().enumerate() {
            let y = meas[meas_index(&c.measured)];
            let e = y - c.setpoint;
            let sign = match c.action {
                ControlAction::Direct => 1.0,
                ControlAction::Reverse => -1.0,
            };
            let candidate_integral = integrals[ci] + e * dt;
            let raw = c.bias + sign * (c.gain * e + c.gain / c.reset_minutes * candidate_integral);
            if (0.0..=100.0).contains(&raw) {
                integrals[ci] = candidate_integral;
            }
            mv[mv_index(&c.manipulated)] = raw.clamp(0.0, 100.0);
        }

        // Sticking fault: freeze the targeted valve at its pre-onset value.
        if let Some(sc) = scenario {
            if matches!(sc.archetype, FaultArchetype::Sticking) && t >= sc.onset_index {
                let idx = mv_index(&sc.target);
                let frozen = *stuck_value.get_or_insert(prev_mv[idx]);
                mv[idx] = frozen;
            }
        }

        for (row, values) in [(&mut measured, &meas[..]), (&mut clean, &clean_meas[..])] {
            row.extend_from_slice(values);
            row.extend_from_slice(&mv);
        }

        // Euler step with mv(t) and boundaries(t).
        let feed_cmd = mv[mv_index("feed_valve")] / 100.0 * p.feed_flow_max;
        let coolant_flow = mv[mv_index("coolant_valve")] / 100.0 * p.coolant_flow_max;
        let drain_flow = mv[mv_index("drain_valve")] / 100.0 * p.drain_flow_max;
        let cond_frac = mv[mv_index("cond_valve")] / 100.0;

        let k = bounds.reaction_rate_factor
            * p.k0
            * (-p.e_over_r / state.reactor_temp.max(1.0)).exp();
        let dilution = state.feed_flow / p.reactor_volume;
        let reaction = k * state.conc;

        let d_feed = (feed_cmd - state.feed_flow) / p.feed_valve_tau;
        let d_conc = dilution * (bounds.feed_conc - state.conc) - reaction;
        let d_tr = dilution * (bounds.feed_inlet_temp - state.reactor_temp)
            + p.heat_gain * reaction
            - p.jacket_coupling * (state.reactor_temp - state.coolant_temp);
        let d_tc = coolant_flow / p.jacket_volume
            * (bounds.coolant_inlet_temp - state.coolant_temp)
            + p.jacket_transfer * (state.reactor_temp - state.coolant_temp);
        let d_vs = state.feed_flow - drain_flow;
        let d_ts = state.feed_flow / p.sep_nominal_volume * (state.reactor_temp - state.sep_temp)
            - p.cond_duty * cond_frac * bounds.cond_duty_factor;

        state.feed_flow += dt * d_feed;
        state.conc += dt * d_conc;
        state.reactor_temp += dt * d_tr;
        state.coolant_temp += dt * d_tc;
        state.sep_volume = (state.sep_volume + dt * d_vs).clamp(0.0, p.sep_volume_max);
        state.sep_temp += dt * d_ts;

        let fields = [
            ("feed_flow", state.feed_flow),
            ("conc", state.conc),
            ("reactor_temp", state.reactor_temp),
            ("coolant_temp", state.coolant_temp),
            ("sep_volume", state.sep_volume),
            ("sep_temp", state.sep_temp),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v.abs() > 1e7 {
                return Err(SimError::Unstable {
                    step: t,
                    what: format!("state '{name}' = {v}"),
                });
            }
        }

        prev_mv = mv;
    }

    Ok(RunOutput {
        schema: sim_schema(),
        measured,
        clean,
        scenario_id: scenario.map(|s| s.id.clone()),
        onset_index: scenario.map(|s| s.onset_index),
    })
}

pub(crate) fn meas_index(name: &str) -> usize {
    MEAS_CHANNELS
        .iter()
        .position(|c| *c == name)
        .expect("validated measured channel")
}

pub(crate) fn mv_index(name: &str) -> usize {
    MV_CHANNELS
        .iter()
        .position(|c| *c == name)
        .expect("validated manipulated channel")
}
