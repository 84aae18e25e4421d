//! Attribution axiom suite.
//!
//! The Shapley oracle here is independent of the implementation it checks:
//! the library enumerates subsets with factorial weights, while the oracle
//! averages marginal contributions over every one of the M! permutations —
//! the two routes agree only if both are right.

use faultlens::attribution::{
    integrated_gradients, shapley_exact, shapley_sampled, AttributionError, AttributionTarget,
    Baseline,
};
use faultlens::attribution::surrogate::{LinearSurrogate, MlpSurrogate, ProductSurrogate};
use faultlens::autodiff::{Bindings, Graph, NodeId, Tensor};
use faultlens::model::TimeSeriesWindow;
use proptest::prelude::*;

/// Average-over-all-permutations definition of the Shapley value.
fn shapley_by_permutation_enumeration(
    target: &impl AttributionTarget,
    window: &TimeSeriesWindow,
    baseline: &Baseline,
    class: usize,
) -> Vec<f64> {
    let m = target.num_features();
    assert!(m <= 8, "oracle is factorial in M");
    let mut perm: Vec<usize> = (0..m).collect();
    let mut totals = vec![0.0; m];
    let mut count = 0u64;

    fn permutations(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permutations(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    let t_len = target.window_len();
    permutations(&mut perm, 0, &mut |order: &[usize]| {
        let mut composed = baseline.values().to_vec();
        let mut prev = target.value(&composed, class).unwrap();
        for &channel in order {
            for t in 0..t_len {
                let j = t * m + channel;
                composed[j] = window.values()[j];
            }
            let value = target.value(&composed, class).unwrap();
            totals[channel] += value - prev;
            prev = value;
        }
        count += 1;
    });

    totals.iter().map(|t| t / count as f64).collect()
}

#[test]
fn exact_shapley_matches_permutation_oracle_on_product_game() {
    let target = ProductSurrogate::new(3, 0, 1);
    let window = TimeSeriesWindow::new(vec![1.0, 1.0, 5.0], 1, 3).unwrap();
    let baseline = Baseline::zeros(1, 3);
    let oracle = shapley_by_permutation_enumeration(&target, &window, &baseline, 0);
    let map = shapley_exact(&target, &window, &baseline, 0).unwrap();
    assert_eq!(oracle.len(), 3);
    for (got, want) in map.scores.iter().zip(&oracle) {
        assert!((got - want).abs() < 1e-12, "{got} vs oracle {want}");
    }
    // Hand check: the two product factors split f(x) − f(0) = 1 evenly.
    assert!((oracle[0] - 0.5).abs() < 1e-12);
    assert!((oracle[1] - 0.5).abs() < 1e-12);
}

#[test]
fn exact_shapley_matches_permutation_oracle_on_random_mlp() {
    let target = MlpSurrogate::random(1, 5, 7, 99);
    let window =
        TimeSeriesWindow::new(vec![0.8, -0.3, 1.2, 0.4, -0.9], 1, 5).unwrap();
    let baseline = Baseline::custom(vec![0.1, 0.0, -0.2, 0.3, 0.0], 1, 5).unwrap();
    let oracle = shapley_by_permutation_enumeration(&target, &window, &baseline, 0);
    let map = shapley_exact(&target, &window, &baseline, 0).unwrap();
    for (i, (got, want)) in map.scores.iter().zip(&oracle).enumerate() {
        assert!((got - want).abs() < 1e-10, "feature {i}: {got} vs {want}");
    }
}

#[test]
fn dummy_feature_gets_exactly_zero_exact_and_within_stderr_sampled() {
    // Channel 2 never enters the value function.
    let target = ProductSurrogate::new(4, 0, 1);
    let window = TimeSeriesWindow::new(vec![1.3, -0.7, 9.0, 2.0], 1, 4).unwrap();
    let baseline = Baseline::zeros(1, 4);

    let exact = shapley_exact(&target, &window, &baseline, 0).unwrap();
    assert_eq!(exact.scores[2], 0.0);
    assert_eq!(exact.scores[3], 0.0);

    let sampled = shapley_sampled(&target, &window, &baseline, 0, 100, 5).unwrap();
    let stderr = sampled.diagnostics.stderr.as_ref().unwrap();
    for i in [2usize, 3] {
        assert!(
            sampled.scores[i].abs() <= 3.0 * stderr[i] + 1e-12,
            "dummy feature {i}: {} vs 3·stderr {}",
            sampled.scores[i],
            3.0 * stderr[i]
        );
    }
}

#[test]
fn sampled_tracks_exact_on_nonlinear_game() {
    let target = MlpSurrogate::random(1, 8, 12, 42);
    let values: Vec<f64> = (0..8).map(|i| (i as f64 * 0.61).sin() + 0.4).collect();
    let window = TimeSeriesWindow::new(values, 1, 8).unwrap();
    let baseline = Baseline::zeros(1, 8);

    let exact = shapley_exact(&target, &window, &baseline, 0).unwrap();
    let sampled = shapley_sampled(&target, &window, &baseline, 0, 2000, 7).unwrap();

    let range = exact.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - exact.scores.iter().cloned().fold(f64::INFINITY, f64::min);
    for (i, (s, e)) in sampled.scores.iter().zip(&exact.scores).enumerate() {
        assert!(
            (s - e).abs() <= 0.05 * range,
            "feature {i}: sampled {s} vs exact {e} (range {range})"
        );
    }
}

#[test]
fn sensitivity_axiom_single_differing_channel_scores_nonzero() {
    let target = MlpSurrogate::random(3, 4, 8, 7);
    let base_values: Vec<f64> = (0..12).map(|i| (i as f64) * 0.1 - 0.5).collect();
    let mut diff_values = base_values.clone();
    // Only channel 1 differs, at every timestep.
    for t in 0..3 {
        diff_values[t * 4 + 1] += 1.5;
    }
    let window = TimeSeriesWindow::new(diff_values, 3, 4).unwrap();
    let baseline = Baseline::custom(base_values, 3, 4).unwrap();

    let f_x = target.value(window.values(), 0).unwrap();
    let f_b = target.value(baseline.values(), 0).unwrap();
    assert!((f_x - f_b).abs() > 1e-6, "test setup: outputs must differ");

    let map = integrated_gradients(&target, &window, &baseline, 0, 128).unwrap();
    assert!(map.scores[1].abs() > 1e-9, "differing channel scored zero");
    for c in [0usize, 2, 3] {
        assert_eq!(map.scores[c], 0.0, "unchanged channel {c} must score zero");
    }
}

/// A scalar function of the window realized as an autodiff graph; value and
/// gradient both go through the graph, so two `GraphTarget`s with different
/// topologies are genuinely different implementations.
struct GraphTarget {
    graph: Graph,
    input: NodeId,
    weights: Vec<(NodeId, Tensor)>,
    output: NodeId,
    window_len: usize,
    num_features: usize,
}

impl AttributionTarget for GraphTarget {
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
        let mut bind = Bindings::new(&self.graph);
        bind.set(
            self.input,
            Tensor::new(vec![self.window_len, self.num_features], window_values.to_vec())
                .unwrap(),
        )
        .unwrap();
        for (id, w) in &self.weights {
            bind.set(*id, w.clone()).unwrap();
        }
        let eval = self.graph.forward(&bind).unwrap();
        Ok(eval.value(self.output).scalar_value())
    }

    fn gradient(
        &self,
        window_values: &[f64],
        _class: usize,
    ) -> Result<Vec<f64>, AttributionError> {
        let mut bind = Bindings::new(&self.graph);
        bind.set(
            self.input,
            Tensor::new(vec![self.window_len, self.num_features], window_values.to_vec())
                .unwrap(),
        )
        .unwrap();
        for (id, w) in &self.weights {
            bind.set(*id, w.clone()).unwrap();
        }
        let eval = self.graph.forward(&bind).unwrap();
        let grads = self.graph.backward(&eval, self.output, &[self.input]).unwrap();
        Ok(grads.expect(self.input).data().to_vec())
    }
}

/// Implementation invariance: two networks that compute the same function
/// through different graph structures must receive identical attributions.
#[test]
fn implementation_invariance_on_functionally_equal_graphs() {
    let (t_len, m) = (2usize, 4usize);
    let w: Vec<f64> = vec![0.7, -1.2, 0.3, 1.9, -0.6, 0.8, 1.1, -0.4];

    // Implementation A: elementwise product with the weights, then sum.
    let impl_a = {
        let mut g = Graph::new();
        let input = g.leaf("input", &[t_len, m]).unwrap();
        let weights = g.leaf("w", &[t_len, m]).unwrap();
        let prod = g.mul(input, weights).unwrap();
        let out = g.sum(prod).unwrap();
        GraphTarget {
            graph: g,
            input,
            weights: vec![(weights, Tensor::new(vec![t_len, m], w.clone()).unwrap())],
            output: out,
            window_len: t_len,
            num_features: m,
        }
    };

    // Implementation B: split the window by timestep, run each row through
    // its own matmul column, concatenate and sum.
    let impl_b = {
        let mut g = Graph::new();
        let input = g.leaf("input", &[t_len, m]).unwrap();
        let w0 = g.leaf("w0", &[m, 1]).unwrap();
        let w1 = g.leaf("w1", &[m, 1]).unwrap();
        let row0 = g.slice(input, 0, 1, 0, m).unwrap();
        let row1 = g.slice(input, 1, 1, 0, m).unwrap();
        let y0 = g.matmul(row0, w0).unwrap();
        let y1 = g.matmul(row1, w1).unwrap();
        let both = g.concat(&[y0, y1]).unwrap();
        let out = g.sum(both).unwrap();
        GraphTarget {
            graph: g,
            input,
            weights: vec![
                (w0, Tensor::new(vec![m, 1], w[..m].to_vec()).unwrap()),
                (w1, Tensor::new(vec![m, 1], w[m..].to_vec()).unwrap()),
            ],
            output: out,
            window_len: t_len,
            num_features: m,
        }
    };

    let window =
        TimeSeriesWindow::new(vec![0.5, 1.5, -0.7, 0.2, 1.1, -0.3, 0.8, 0.4], t_len, m).unwrap();
    let baseline = Baseline::custom(vec![0.1; t_len * m], t_len, m).unwrap();

    // The two implementations agree as functions...
    let fa = impl_a.value(window.values(), 0).unwrap();
    let fb = impl_b.value(window.values(), 0).unwrap();
    assert!((fa - fb).abs() < 1e-12);

    // ...so their attributions must agree too.
    let map_a = integrated_gradients(&impl_a, &window, &baseline, 0, 32).unwrap();
    let map_b = integrated_gradients(&impl_b, &window, &baseline, 0, 32).unwrap();
    for (a, b) in map_a.scores.iter().zip(&map_b.scores) {
        assert!((a - b).abs() <= 1e-2, "attributions diverged: {a} vs {b}");
    }
    let shap_a = shapley_exact(&impl_a, &window, &baseline, 0).unwrap();
    let shap_b = shapley_exact(&impl_b, &window, &baseline, 0).unwrap();
    for (a, b) in shap_a.scores.iter().zip(&shap_b.scores) {
        assert!((a - b).abs() <= 1e-2);
    }
}

#[test]
fn ig_completeness_gap_shrinks_with_steps_on_nonlinear_target() {
    let target = MlpSurrogate::random(2, 5, 10, 21);
    for seed in 0..10u64 {
        let values: Vec<f64> = (0..10)
            .map(|i| ((i as f64) * 0.37 + seed as f64).sin())
            .collect();
        let window = TimeSeriesWindow::new(values, 2, 5).unwrap();
        let baseline = Baseline::zeros(2, 5);
        let coarse = integrated_gradients(&target, &window, &baseline, 0, 8).unwrap();
        let fine = integrated_gradients(&target, &window, &baseline, 0, 128).unwrap();
        let (g_coarse, g_fine) = (
            coarse.diagnostics.completeness_gap.unwrap(),
            fine.diagnostics.completeness_gap.unwrap(),
        );
        assert!(
            g_fine <= g_coarse,
            "seed {seed}: gap grew from {g_coarse} to {g_fine}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// IG on a linear target equals w_j (x_j − x′_j) at steps = 1, for any
    /// weights, input and baseline — and Shapley agrees with IG exactly.
    #[test]
    fn linear_attributions_are_closed_form(
        w in proptest::collection::vec(-3.0f64..3.0, 4),
        x in proptest::collection::vec(-3.0f64..3.0, 4),
        b in proptest::collection::vec(-3.0f64..3.0, 4),
    ) {
        let target = LinearSurrogate::new(1, 4, w.clone(), 0.7);
        let window = TimeSeriesWindow::new(x.clone(), 1, 4).unwrap();
        let baseline = Baseline::custom(b.clone(), 1, 4).unwrap();

        let ig = integrated_gradients(&target, &window, &baseline, 0, 1).unwrap();
        let shap = shapley_exact(&target, &window, &baseline, 0).unwrap();
        for j in 0..4 {
            let closed_form = w[j] * (x[j] - b[j]);
            prop_assert!((ig.scores[j] - closed_form).abs() <= 1e-9);
            prop_assert!((ig.scores[j] - shap.scores[j]).abs() <= 1e-9);
        }
    }

    /// Shapley efficiency holds on arbitrary nonlinear games.
    #[test]
    fn efficiency_holds_on_random_games(
        seed in 0u64..1000,
        x in proptest::collection::vec(-2.0f64..2.0, 6),
    ) {
        let target = MlpSurrogate::random(1, 6, 9, seed);
        let window = TimeSeriesWindow::new(x, 1, 6).unwrap();
        let baseline = Baseline::zeros(1, 6);
        let map = shapley_exact(&target, &window, &baseline, 0).unwrap();
        prop_assert!(map.diagnostics.efficiency_gap.unwrap() <= 1e-9);
    }
}
