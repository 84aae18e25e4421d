//! Shapley values over sensor-channel features.
//!
//! `shapley_exact` enumerates all `2^M` coalitions with the factorial
//! weights `|S|!(M−|S|−1)!/M!`; `shapley_sampled` is an unbiased
//! permutation estimator with antithetic pairs (each sampled permutation is
//! walked forward and reversed). Both satisfy efficiency:
//! `Σφ = f(x) − f(baseline)` — exactly for enumeration, and exactly per
//! permutation average for the sampler, because each walk telescopes to
//! `f(x) − f(baseline)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::TimeSeriesWindow;

use super::{
    check_class, check_window_dims, AttributionError, AttributionMap, AttributionMethod,
    AttributionTarget, Baseline, Diagnostics,
};

/// Exact enumeration refuses above this many features (2^M blowup).
pub const EXACT_FEATURE_LIMIT: usize = 16;

/// A subset of channels considered present. Materializing a coalition
/// keeps the window's values on present channels and substitutes baseline
/// values, at every timestep, on absent ones.
#[derive(Debug, Clone, Copy)]
pub struct Coalition {
    mask: u32,
    num_features: usize,
}

impl Coalition {
    pub fn new(mask: u32, num_features: usize) -> Self {
        debug_assert!(num_features <= 32);
        Self { mask, num_features }
    }

    pub fn contains(&self, channel: usize) -> bool {
        self.mask & (1 << channel) != 0
    }

    pub fn size(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn materialize(&self, window: &TimeSeriesWindow, baseline: &Baseline) -> Vec<f64> {
        let m = self.num_features;
        window
            .values()
            .iter()
            .zip(baseline.values())
            .enumerate()
            .map(|(j, (x, b))| if self.contains(j % m) { *x } else { *b })
            .collect()
    }
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

/// Exact Shapley values by full subset enumeration.
pub fn shapley_exact(
    target: &impl AttributionTarget,
    window: &TimeSeriesWindow,
    baseline: &Baseline,
    target_class: usize,
) -> Result<AttributionMap, AttributionError> {
    check_window_dims(target, window, baseline)?;
    check_class(target, target_class)?;
    let m = target.num_features();
    if m > EXACT_FEATURE_LIMIT {
        return Err(AttributionError::TooManyFeatures {
            m,
            limit: EXACT_FEATURE_LIMIT,
        });
    }

    // Value function over every coalition, cached by mask.
    let n_masks = 1usize << m;
    let mut v = vec![0.0; n_masks];
    for (mask, slot) in v.iter_mut().enumerate() {
        let composed = Coalition::new(mask as u32, m).materialize(window, baseline);
        *slot = target.value(&composed, target_class)?;
    }

    let fact = factorials(m);
    let mut scores = vec![0.0; m];
    for (i, score) in scores.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in 0..n_masks {
            if mask & bit != 0 {
                continue;
            }
            let s = (mask as u32).count_ones() as usize;
            let weight = fact[s] * fact[m - s - 1] / fact[m];
            *score += weight * (v[mask | bit] - v[mask]);
        }
    }

    let f_x = v[n_masks - 1];
    let f_b = v[0];
    let total: f64 = scores.iter().sum();
    Ok(AttributionMap {
        method: AttributionMethod::ShapExact,
        target_class,
        scores,
        per_timestep: None,
        diagnostics: Diagnostics {
            completeness_gap: None,
            efficiency_gap: Some((total - (f_x - f_b)).abs()),
            stderr: None,
            value_at_input: f_x,
            value_at_baseline: f_b,
        },
        fault_class: None,
        window_offset: None,
        window_len: window.window_len(),
    })
}

/// Permutation-sampling Shapley estimate with antithetic pairs.
///
/// `num_permutations` counts evaluated permutations and is rounded up to
/// an even number so every sampled ordering is paired with its reverse.
/// The per-feature standard error in the diagnostics is computed over
/// pair means (pairs are independent; the two walks inside a pair are not).
pub fn shapley_sampled(
    target: &impl AttributionTarget,
    window: &TimeSeriesWindow,
    baseline: &Baseline,
    target_class: usize,
    num_permutations: usize,
    rng_seed: u64,
) -> Result<AttributionMap, AttributionError> {
    if num_permutations == 0 {
        return Err(AttributionError::ZeroPermutations);
    }
    check_window_dims(target, window, baseline)?;
    check_class(target, target_class)?;
    let m = target.num_features();
    let pairs = num_permutations.div_ceil(2);

    let f_b = target.value(baseline.values(), target_class)?;
    let f_x = target.value(window.values(), target_class)?;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut pair_means: Vec<Vec<f64>> = Vec::with_capacity(pairs);

    let walk = |perm: &[usize]| -> Result<Vec<f64>, AttributionError> {
        let mut composed = baseline.values().to_vec();
        let mut marginals = vec![0.0; m];
        let mut prev = f_b;
        for &channel in perm {
            for t in 0..window.window_len() {
                let j = t * m + channel;
                composed[j] = window.values()[j];
            }
            let value = target.value(&composed, target_class)?;
            marginals[channel] = value - prev;
            prev = value;
        }
        Ok(marginals)
    };

    for _ in 0..pairs {
        order.shuffle(&mut rng);
        let forward = walk(&order)?;
        let reversed: Vec<usize> = order.iter().rev().copied().collect();
        let backward = walk(&reversed)?;
        let mean: Vec<f64> = forward
            .iter()
            .zip(&backward)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        pair_means.push(mean);
    }

    let mut scores = vec![0.0; m];
    for pair in &pair_means {
        for (s, v) in scores.iter_mut().zip(pair) {
            *s += v;
        }
    }
    for s in &mut scores {
        *s /= pairs as f64;
    }

    let stderr: Vec<f64> = (0..m)
        .map(|i| {
            if pairs < 2 {
                return 0.0;
            }
            let mean = scores[i];
            let var: f64 = pair_means
                .iter()
                .map(|p| (p[i] - mean) * (p[i] - mean))
                .sum::<f64>()
                / (pairs - 1) as f64;
            (var / pairs as f64).sqrt()
        })
        .collect();

    let total: f64 = scores.iter().sum();
    Ok(AttributionMap {
        method: AttributionMethod::ShapSampled,
        target_class,
        scores,
        per_timestep: None,
        diagnostics: Diagnostics {
            completeness_gap: None,
            efficiency_gap: Some((total - (f_x - f_b)).abs()),
            stderr: Some(stderr),
            value_at_input: f_x,
            value_at_baseline: f_b,
        },
        fault_class: None,
        window_offset: None,
        window_len: window.window_len(),
    })
}
