//! Downstream analysis of attribution maps: post-fault averaging, z-score
//! normalization across features, top-k extraction, cross-method agreement
//! and fault-to-subsystem localization against an expected-variable map.
//!
//! Two maps ship with the crate: one for TEP channel layouts and one for
//! the built-in simulator (see `assets/*.toml`); custom maps load from the
//! same TOML shape (`[subsystems]` name → channel list, `[faults]` fault →
//! subsystem).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{AttributionMap, AttributionMethod};

pub const TEP_SUBSYSTEMS_TOML: &str = include_str!("../assets/tep_subsystems.toml");
pub const SIM_SUBSYSTEMS_TOML: &str = include_str!("../assets/sim_subsystems.toml");

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no attribution maps to aggregate")]
    EmptyAggregation,
    #[error("mixed {what} in aggregation input: {a} vs {b}")]
    MixedInput { what: String, a: String, b: String },
    #[error("no windows fall inside the first {horizon} post-onset samples")]
    NoWindowsInHorizon { horizon: usize },
    #[error("score vectors have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("k = {k} is invalid for {m} features (need 1 <= k <= m)")]
    InvalidK { k: usize, m: usize },
    #[error("need at least 2 features to normalize, got {0}")]
    TooFewFeatures(usize),
    #[error("fault class '{0}' is not in the subsystem map")]
    UnknownFault(String),
    #[error("subsystem map references unknown channel '{channel}' in subsystem '{subsystem}'")]
    UnknownChannel { subsystem: String, channel: String },
    #[error("fault '{fault}' references undeclared subsystem '{subsystem}'")]
    UnknownSubsystem { fault: String, subsystem: String },
    #[error("subsystem map: {0}")]
    Map(String),
}

/// Mean attribution per feature over the post-fault windows of one
/// (fault class, method) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregatedScores {
    pub fault_class: String,
    pub method: AttributionMethod,
    pub mean_scores: Vec<f64>,
    pub num_windows: usize,
    /// Post-onset sample offsets covered: `(0, horizon)`.
    pub window_span: (usize, usize),
}

/// Z-scored feature vector; `degenerate` flags a zero-variance input that
/// normalized to all zeros.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizedScores {
    pub fault_class: String,
    pub method: AttributionMethod,
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Average the maps of one fault class and method over windows inside the
/// post-onset horizon.
///
/// A window is inside the horizon when its whole span sits in the first
/// `horizon` post-onset samples (`offset + window_len <= horizon`); maps
/// without window metadata are always included. Aggregation is an
/// arithmetic mean, so it commutes with permutation of the input.
pub fn aggregate(
    maps: &[AttributionMap],
    horizon: usize,
) -> Result<AggregatedScores, AnalysisError> {
    let first = maps.first().ok_or(AnalysisError::EmptyAggregation)?;
    for m in maps {
        if m.method.family() != first.method.family() {
            return Err(AnalysisError::MixedInput {
                what: "methods".into(),
                a: first.method.as_str().into(),
                b: m.method.as_str().into(),
            });
        }
        if m.fault_class != first.fault_class {
            return Err(AnalysisError::MixedInput {
                what: "fault classes".into(),
                a: format!("{:?}", first.fault_class),
                b: format!("{:?}", m.fault_class),
            });
        }
        if m.scores.len() != first.scores.len() {
            return Err(AnalysisError::LengthMismatch {
                a: first.scores.len(),
                b: m.scores.len(),
            });
        }
    }

    let included: Vec<&AttributionMap> = maps
        .iter()
        .filter(|m| match m.window_offset {
            Some(offset) => offset + m.window_len <= horizon,
            None => true,
        })
        .collect();
    if included.is_empty() {
        return Err(AnalysisError::NoWindowsInHorizon { horizon });
    }

    let n = first.scores.len();
    let mut mean = vec![0.0; n];
    for m in &included {
        for (acc, s) in mean.iter_mut().zip(&m.scores) {
            *acc += s;
        }
    }
    for v in &mut mean {
        *v /= included.len() as f64;
    }

    Ok(AggregatedScores {
        fault_class: first.fault_class.clone().unwrap_or_default(),
        method: first.method,
        mean_scores: mean,
        num_windows: included.len(),
        window_span: (0, horizon),
    })
}

/// Z-score across features with the population standard deviation.
/// Zero-variance input normalizes to all zeros and sets `degenerate`.
pub fn normalize(scores: &AggregatedScores) -> Result<NormalizedScores, AnalysisError> {
    let (values, degenerate) = normalize_values(&scores.mean_scores)?;
    if degenerate {
        log::warn!(
            "scores for '{}' ({}) have zero variance; normalized to zeros",
            scores.fault_class,
            scores.method.as_str()
        );
    }
    Ok(NormalizedScores {
        fault_class: scores.fault_class.clone(),
        method: scores.method,
        values,
        degenerate,
    })
}

pub fn normalize_values(scores: &[f64]) -> Result<(Vec<f64>, bool), AnalysisError> {
    let m = scores.len();
    if m < 2 {
        return Err(AnalysisError::TooFewFeatures(m));
    }
    let mean: f64 = scores.iter().sum::<f64>() / m as f64;
    let var: f64 = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / m as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok((vec![0.0; m], true));
    }
    Ok((scores.iter().map(|s| (s - mean) / std).collect(), false))
}

/// Indices of the `k` largest values; ties break toward the lower channel
/// index, so the output is deterministic.
pub fn top_k(values: &[f64], k: usize) -> Result<Vec<usize>, AnalysisError> {
    let m = values.len();
    if k == 0 || k > m {
        return Err(AnalysisError::InvalidK { k, m });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// Cross-method agreement: top-k overlap plus Spearman rank correlation
/// over all features. Symmetric in its arguments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementResult {
    pub top_k_overlap: f64,
    pub rank_correlation: f64,
    pub top_a: Vec<usize>,
    pub top_b: Vec<usize>,
}

pub fn agreement(a: &[f64], b: &[f64], k: usize) -> Result<AgreementResult, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch { a: a.len(), b: b.len() });
    }
    let top_a = top_k(a, k)?;
    let top_b = top_k(b, k)?;
    let set_a: BTreeSet<usize> = top_a.iter().copied().collect();
    let overlap = top_b.iter().filter(|i| set_a.contains(i)).count() as f64 / k as f64;
    Ok(AgreementResult {
        top_k_overlap: overlap,
        rank_correlation: spearman(a, b),
        top_a,
        top_b,
    })
}

/// Spearman ρ with average ranks for ties (Pearson on the rank vectors).
/// When either rank vector is constant, ρ is 1 if the two rank vectors are
/// identical and 0 otherwise.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let mean_a = ra.iter().sum::<f64>() / n;
    let mean_b = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return if ra == rb { 1.0 } else { 0.0 };
    }
    cov / (var_a.sqrt() * var_b.sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Subsystem name → expected-important channels, fault class → subsystem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsystemMap {
    pub subsystems: BTreeMap<String, BTreeSet<String>>,
    pub faults: BTreeMap<String, String>,
}

impl SubsystemMap {
    pub fn from_toml(text: &str) -> Result<Self, AnalysisError> {
        let map: SubsystemMap =
            toml::from_str(text).map_err(|e| AnalysisError::Map(e.to_string()))?;
        for (fault, subsystem) in &map.faults {
            if !map.subsystems.contains_key(subsystem) {
                return Err(AnalysisError::UnknownSubsystem {
                    fault: fault.clone(),
                    subsystem: subsystem.clone(),
                });
            }
        }
        Ok(map)
    }

    pub fn from_path(path: &Path) -> Result<Self, AnalysisError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AnalysisError::Map(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The map for TEP channel layouts shipped with the crate.
    pub fn builtin_tep() -> Self {
        Self::from_toml(TEP_SUBSYSTEMS_TOML).expect("shipped TEP map is valid")
    }

    /// The map for the built-in simulator shipped with the crate.
    pub fn builtin_simulator() -> Self {
        Self::from_toml(SIM_SUBSYSTEMS_TOML).expect("shipped simulator map is valid")
    }

    /// Every referenced channel must exist in the dataset schema.
    pub fn validate_against_schema(&self, schema: &[String]) -> Result<(), AnalysisError> {
        for (name, channels) in &self.subsystems {
            for c in channels {
                if !schema.contains(c) {
                    return Err(AnalysisError::UnknownChannel {
                        subsystem: name.clone(),
                        channel: c.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn expected_channels(&self, fault_class: &str) -> Result<&BTreeSet<String>, AnalysisError> {
        let subsystem = self
            .faults
            .get(fault_class)
            .ok_or_else(|| AnalysisError::UnknownFault(fault_class.to_string()))?;
        self.subsystems
            .get(subsystem)
            .ok_or_else(|| AnalysisError::UnknownSubsystem {
                fault: fault_class.to_string(),
                subsystem: subsystem.clone(),
            })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub fault_class: String,
    /// True iff the top-k intersects the expected channel set.
    pub hit: bool,
    /// Top-k channels that are in the expected set, in top-k order.
    pub matched: Vec<String>,
    /// `|top-k ∩ expected| / k`.
    pub fraction: f64,
}

/// Check a normalized score vector against the expected channels for a
/// fault class.
pub fn localization_score(
    normalized: &[f64],
    map: &SubsystemMap,
    fault_class: &str,
    k: usize,
    schema: &[String],
) -> Result<LocalizationResult, AnalysisError> {
    let expected = map.expected_channels(fault_class)?;
    let top = top_k(normalized, k)?;
    let matched: Vec<String> = top
        .iter()
        .filter_map(|&i| schema.get(i))
        .filter(|name| expected.contains(*name))
        .cloned()
        .collect();
    Ok(LocalizationResult {
        fault_class: fault_class.to_string(),
        hit: !matched.is_empty(),
        fraction: matched.len() as f64 / k as f64,
        matched,
    })
}

/// Per-channel deviation of a faulty trace from a normal one, the raw
/// material for "which variables moved most" comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationStats {
    pub mean_abs_dev: f64,
    pub max_abs_dev: f64,
    /// Standard deviation of the pointwise deviation — high values mean the
    /// channel's error fluctuates rather than shifting cleanly.
    pub dev_std: f64,
}

pub fn deviation_stats(faulty: &[f64], normal: &[f64]) -> Result<DeviationStats, AnalysisError> {
    if faulty.len() != normal.len() {
        return Err(AnalysisError::LengthMismatch {
            a: faulty.len(),
            b: normal.len(),
        });
    }
    let n = faulty.len() as f64;
    let devs: Vec<f64> = faulty.iter().zip(normal).map(|(f, c)| f - c).collect();
    let mean_abs = devs.iter().map(|d| d.abs()).sum::<f64>() / n;
    let max_abs = devs.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let mean = devs.iter().sum::<f64>() / n;
    let var = devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok(DeviationStats {
        mean_abs_dev: mean_abs,
        max_abs_dev: max_abs,
        dev_std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Diagnostics;
    use proptest::prelude::*;

    fn map_with(scores: Vec<f64>, method: AttributionMethod) -> AttributionMap {
        AttributionMap {
            method,
            target_class: 1,
            scores,
            per_timestep: None,
            diagnostics: Diagnostics::default(),
            fault_class: Some("f".into()),
            window_offset: None,
            window_len: 4,
        }
    }

    #[test]
    fn aggregate_takes_elementwise_mean() {
        let maps = vec![
            map_with(vec![1.0, 2.0, 3.0], AttributionMethod::Ig),
            map_with(vec![3.0, 2.0, 1.0], AttributionMethod::Ig),
        ];
        let agg = aggregate(&maps, 100).unwrap();
        assert_eq!(agg.mean_scores, vec![2.0, 2.0, 2.0]);
        assert_eq!(agg.num_windows, 2);
    }

    #[test]
    fn aggregate_of_single_map_is_identity() {
        let maps = vec![map_with(vec![0.5, -1.5], AttributionMethod::ShapExact)];
        let agg = aggregate(&maps, 100).unwrap();
        assert_eq!(agg.mean_scores, vec![0.5, -1.5]);
    }

    #[test]
    fn aggregate_rejects_mixed_methods() {
        let maps = vec![
            map_with(vec![1.0], AttributionMethod::Ig),
            map_with(vec![2.0], AttributionMethod::ShapExact),
        ];
        assert!(matches!(
            aggregate(&maps, 100),
            Err(AnalysisError::MixedInput { .. })
        ));
    }

    #[test]
    fn aggregate_filters_windows_outside_horizon() {
        let mut inside = map_with(vec![1.0, 1.0], AttributionMethod::Ig);
        inside.window_offset = Some(10);
        let mut outside = map_with(vec![9.0, 9.0], AttributionMethod::Ig);
        outside.window_offset = Some(97);
        let agg = aggregate(&[inside, outside], 100).unwrap();
        assert_eq!(agg.num_windows, 1);
        assert_eq!(agg.mean_scores, vec![1.0, 1.0]);
    }

    #[test]
    fn normalize_hand_computed_zscore() {
        let (values, degenerate) = normalize_values(&[1.0, 2.0, 3.0]).unwrap();
        assert!(!degenerate);
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (v, e) in values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_constant_vector_is_degenerate_zeros() {
        let (values, degenerate) = normalize_values(&[4.0, 4.0, 4.0]).unwrap();
        assert!(degenerate);
        assert_eq!(values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn top_k_breaks_ties_by_lower_index() {
        let top = top_k(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(top, vec![0, 1]);
    }

    #[test]
    fn top_k_validates_k() {
        assert!(matches!(top_k(&[1.0, 2.0], 0), Err(AnalysisError::InvalidK { .. })));
        assert!(matches!(top_k(&[1.0, 2.0], 3), Err(AnalysisError::InvalidK { .. })));
    }

    #[test]
    fn agreement_of_identical_vectors_is_perfect() {
        let v = [0.3, -1.0, 2.0, 0.7];
        let r = agreement(&v, &v, 2).unwrap();
        assert_eq!(r.top_k_overlap, 1.0);
        assert!((r.rank_correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn agreement_of_reversed_ranking_is_minus_one() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [4.0, 3.0, 2.0, 1.0];
        let r = agreement(&a, &b, 2).unwrap();
        assert!((r.rank_correlation + 1.0).abs() < 1e-12);
        assert_eq!(r.top_k_overlap, 0.0);
    }

    #[test]
    fn builtin_maps_parse_and_resolve() {
        let tep = SubsystemMap::builtin_tep();
        let expected = tep.expected_channels("idv_11").unwrap();
        assert!(expected.contains("xmeas_9"));
        assert!(expected.contains("xmeas_21"));
        assert!(expected.contains("xmv_10"));

        let sim = SubsystemMap::builtin_simulator();
        let schema = crate::procsim::MEAS_CHANNELS
            .iter()
            .chain(crate::procsim::MV_CHANNELS.iter())
            .map(|s| s.to_string())
            .collect::<Vec<_>>();
        sim.validate_against_schema(&schema).unwrap();
    }

    #[test]
    fn localization_miss_and_bad_k() {
        let map = SubsystemMap::builtin_simulator();
        let schema: Vec<String> = crate::procsim::MEAS_CHANNELS
            .iter()
            .chain(crate::procsim::MV_CHANNELS.iter())
            .map(|s| s.to_string())
            .collect();
        // Scores peak on separator channels but the fault is a reactor one.
        let mut scores = vec![0.0; schema.len()];
        scores[5] = 3.0; // sep_level
        scores[6] = 2.0; // sep_temp
        let res = localization_score(&scores, &map, "coolant-step", 2, &schema).unwrap();
        assert!(!res.hit);
        assert_eq!(res.fraction, 0.0);

        assert!(matches!(
            localization_score(&scores, &map, "coolant-step", 0, &schema),
            Err(AnalysisError::InvalidK { .. })
        ));
        assert!(matches!(
            localization_score(&scores, &map, "no-such-fault", 2, &schema),
            Err(AnalysisError::UnknownFault(_))
        ));
    }

    #[test]
    fn deviation_stats_separate_shift_from_fluctuation() {
        let normal = vec![0.0; 100];
        let shifted: Vec<f64> = vec![2.0; 100];
        let noisy: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 2.0 } else { -2.0 }).collect();
        let s1 = deviation_stats(&shifted, &normal).unwrap();
        let s2 = deviation_stats(&noisy, &normal).unwrap();
        assert!(s1.dev_std < 1e-12, "clean shift has no dev variation");
        assert!(s2.dev_std > 1.9, "alternating error has high dev variation");
        assert!((s1.mean_abs_dev - s2.mean_abs_dev).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// normalize(c·s) = sign(c)·normalize(s) for c ≠ 0, hence top_k is
        /// invariant under positive scaling.
        #[test]
        fn normalize_is_scale_invariant_up_to_sign(
            s in proptest::collection::vec(-10.0f64..10.0, 4..12),
            c in prop_oneof![(-8.0f64..-0.1), (0.1f64..8.0)],
        ) {
            prop_assume!(s.iter().any(|v| (v - s[0]).abs() > 1e-9));
            let (base, _) = normalize_values(&s).unwrap();
            let scaled: Vec<f64> = s.iter().map(|v| c * v).collect();
            let (normed, _) = normalize_values(&scaled).unwrap();
            for (n, b) in normed.iter().zip(&base) {
                prop_assert!((n - c.signum() * b).abs() < 1e-9);
            }
            if c > 0.0 {
                prop_assert_eq!(top_k(&scaled, 3).unwrap(), top_k(&s, 3).unwrap());
            }
        }

        /// aggregate commutes with permutation of its input list.
        #[test]
        fn aggregate_commutes_with_permutation(
            rows in proptest::collection::vec(
                proptest::collection::vec(-5.0f64..5.0, 4), 2..6),
            swap_a in 0usize..6,
            swap_b in 0usize..6,
        ) {
            let maps: Vec<AttributionMap> = rows
                .iter()
                .map(|r| map_with(r.clone(), AttributionMethod::Ig))
                .collect();
            let mut shuffled = maps.clone();
            let (a, b) = (swap_a % maps.len(), swap_b % maps.len());
            shuffled.swap(a, b);
            let x = aggregate(&maps, 100).unwrap();
            let y = aggregate(&shuffled, 100).unwrap();
            for (p, q) in x.mean_scores.iter().zip(&y.mean_scores) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        /// agreement is symmetric.
        #[test]
        fn agreement_is_symmetric(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            let ab = agreement(&a, &b, 3).unwrap();
            let ba = agreement(&b, &a, 3).unwrap();
            prop_assert!((ab.top_k_overlap - ba.top_k_overlap).abs() < 1e-12);
            prop_assert!((ab.rank_correlation - ba.rank_correlation).abs() < 1e-12);
        }
    }
}
