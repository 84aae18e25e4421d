//! Analytic surrogate targets with hand-derivable attributions, for
//! verifying attribution implementations against closed forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttributionError, AttributionTarget};

/// `f(x) = Σ w_j x_j + bias` over the flattened window; its exact IG and
/// Shapley attributions are both `w_j (x_j − x′_j)`.
#[derive(Debug, Clone)]
pub struct LinearSurrogate {
    window_len: usize,
    num_features: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSurrogate {
    pub fn new(window_len: usize, num_features: usize, weights: Vec<f64>, bias: f64) -> Self {
        assert_eq!(weights.len(), window_len * num_features);
        Self {
            window_len,
            num_features,
            weights,
            bias,
        }
    }
}

impl AttributionTarget for LinearSurrogate {
    fn window_len(&self) -> usize {
        self.window_len
    }

    fn num_features(&self) -> usize {
        self.num_features
    }

    fn num_classes(&self) -> usize {
        1
    }

    fn value(&self, window_values: &[f64], _class: usize) -> Result<f64, AttributionError> {
        Ok(self
            .weights
            .iter()
            .zip(window_values)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias)
    }

    fn gradient(
        &self,
        _window_values: &[f64],
        _class: usize,
    ) -> Result<Vec<f64>, AttributionError> {
        Ok(self.weights.clone())
    }
}

/// `f(x) = x_a · x_b` over a one-timestep window: a minimal interaction
/// game whose Shapley values are hand-computable.
#[derive(Debug, Clone)]
pub struct ProductSurrogate {
    num_features: usize,
    a: usize,
    b: usize,
}

impl ProductSurrogate {
    pub fn new(num_features: usize, a: usize, b: usize) -> Self {
        assert!(a < num_features && b < num_features && a != b);
        Self { num_features, a, b }
    }
}

impl AttributionTarget for ProductSurrogate {
    fn window_len(&self) -> usize {
        1
    }

    fn num_features(&self) -> usize {
        self.num_features
    }

    fn num_classes(&self) -> usize {
        1
    }

    fn value(&self, window_values: &[f64], _class: usize) -> Result<f64, AttributionError> {
        Ok(window_values[self.a] * window_values[self.b])
    }

    fn gradient(
        &self,
        window_values: &[f64],
        _class: usize,
    ) -> Result<Vec<f64>, AttributionError> {
        let mut g = vec![0.0; self.num_features];
        g[self.a] = window_values[self.b];
        g[self.b] = window_values[self.a];
        Ok(g)
    }
}

/// One-hidden-layer tanh network over the flattened window with seeded
/// random weights: a smooth nonlinear target for estimator-vs-oracle
/// comparisons.
#[derive(Debug, Clone)]
pub struct MlpSurrogate {
    window_len: usize,
    num_features: usize,
    w1: Vec<f64>, // [hidden × n] row-major
    b1: Vec<f64>,
    w2: Vec<f64>, // [hidden]
    hidden: usize,
}

impl MlpSurrogate {
    pub fn random(window_len: usize, num_features: usize, hidden: usize, seed: u64) -> Self {
        let n = window_len * num_features;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize, scale: f64| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-scale..scale)).collect()
        };
        Self {
            window_len,
            num_features,
            w1: draw(hidden * n, (2.0 / n as f64).sqrt()),
            b1: draw(hidden, 0.3),
            w2: draw(hidden, (2.0 / hidden as f64).sqrt()),
            hidden,
        }
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..self.hidden)
            .map(|h| {
                self.b1[h]
                    + self.w1[h * n..(h + 1) * n]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }
}

impl AttributionTarget for MlpSurrogate {
    fn window_len(&self) -> usize {
        self.window_len
    }

    fn num_features(&self) -> usize {
        self.num_features
    }

    fn num_classes(&self) -> usize {
        1
    }

    fn value(&self, window_values: &[f64], _class: usize) -> Result<f64, AttributionError> {
        Ok(self
            .hidden_pre(window_values)
            .iter()
            .zip(&self.w2)
            .map(|(pre, w)| w * pre.tanh())
            .sum())
    }

    fn gradient(
        &self,
        window_values: &[f64],
        _class: usize,
    ) -> Result<Vec<f64>, AttributionError> {
        let n = window_values.len();
        let pre = self.hidden_pre(window_values);
        let mut grad = vec![0.0; n];
        for h in 0..self.hidden {
            let t = pre[h].tanh();
            let scale = self.w2[h] * (1.0 - t * t);
            for (g, w) in grad.iter_mut().zip(&self.w1[h * n..(h + 1) * n]) {
                *g += scale * w;
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mlp = MlpSurrogate::random(2, 4, 6, 13);
        let x: Vec<f64> = (0..8).map(|i| (i as f64) * 0.17 - 0.5).collect();
        let grad = mlp.gradient(&x, 0).unwrap();
        let h = 1e-6;
        for j in 0..x.len() {
            let mut probe = x.clone();
            probe[j] += h;
            let plus = mlp.value(&probe, 0).unwrap();
            probe[j] -= 2.0 * h;
            let minus = mlp.value(&probe, 0).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            assert!((grad[j] - fd).abs() < 1e-6, "entry {j}: {} vs {fd}", grad[j]);
        }
    }
}
