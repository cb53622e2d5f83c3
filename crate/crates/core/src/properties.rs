//! Randomized structural properties of the sampler, the aggregation and the
//! forward pass.

use ndarray::Array3;
use proptest::prelude::*;
use rand::Rng;
use rand::seq::SliceRandom;

use crate::bounds::{Cascade, degree_constant, zeta};
use crate::mpnn::{Aggregation, GraphSageWeights, aggregate, compute_deterministic_bound, mpnn_forward};
use crate::rng::{Role, stream};
use crate::sampler::{GraphSignal, SampleOptions, sample_rgsm};
use crate::space::{NoiseKind, NoiseModel, edge_probability, make_paper_graphons};

fn aggregation() -> impl Strategy<Value = Aggregation> {
    prop_oneof![Just(Aggregation::Mean), Just(Aggregation::NormalizedSum)]
}

fn sampled_graph(seed: u64, n: usize, alpha: f64, epsilon: f64) -> GraphSignal {
    let [_, (w, f)] = make_paper_graphons();
    let noise = NoiseModel { epsilon, kind: NoiseKind::Bump { width: 0.2 } };
    sample_rgsm(&w, &f, &noise, n, alpha, SampleOptions::default(), &mut stream(seed, 0, Role::Trial)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pooled_output_is_permutation_invariant(
        seed in 0u64..10_000,
        n in 1usize..40,
        depth in 1usize..4,
        agg in aggregation(),
        relu in any::<bool>(),
    ) {
        let gs = sampled_graph(seed, n, 0.0, 0.05);
        let w = GraphSageWeights::init(depth, 1, 5, 2, &mut stream(seed, 1, Role::Init)).unwrap();
        let arch = w.arch(agg, relu).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut stream(seed, 2, Role::Probe));
        let base = mpnn_forward(&arch, &gs).unwrap();
        let moved = mpnn_forward(&arch, &gs.permuted(&perm)).unwrap();
        // node features are permuted along with the nodes
        let last = base.features.last().unwrap();
        let last_moved = moved.features.last().unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for k in 0..last.ncols() {
                prop_assert!((last_moved[[i, k]] - last[[p, k]]).abs() <= 1e-12 * (1.0 + last[[p, k]].abs()));
            }
        }
        for (a, b) in base.output.iter().zip(&moved.output) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn aggregation_is_linear_in_the_messages(
        seed in 0u64..10_000,
        n in 1usize..12,
        h in 1usize..4,
        agg in aggregation(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let gs = sampled_graph(seed, n, 0.2, 0.0);
        let mut rng = stream(seed, 3, Role::Probe);
        let mut tensor = || Array3::from_shape_fn((n, n, h), |_| rng.random_range(-1.0..1.0));
        let (m1, m2) = (tensor(), tensor());
        let combined = &m1 * a + &m2 * b;
        let (g1, _) = aggregate(&gs.adjacency, &m1, agg).unwrap();
        let (g2, _) = aggregate(&gs.adjacency, &m2, agg).unwrap();
        let (gc, _) = aggregate(&gs.adjacency, &combined, agg).unwrap();
        let expected = &g1 * a + &g2 * b;
        for (x, y) in gc.iter().zip(expected.iter()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn noisy_edge_probabilities_stay_within_epsilon(
        seed in 0u64..10_000,
        epsilon in 0.0f64..0.3,
        bump in any::<bool>(),
        w in 0.0f64..=1.0,
        x in 0.0f64..=1.0,
        y in 0.0f64..=1.0,
    ) {
        let kind = if bump { NoiseKind::Bump { width: 0.1 } } else { NoiseKind::ConstantOffset };
        let draw = NoiseModel { epsilon, kind }.draw(&mut stream(seed, 4, Role::Trial));
        prop_assert!(draw.kernel(x, y).abs() <= epsilon && draw.signal(x).abs() <= epsilon);
        let p = edge_probability(w, draw.kernel(x, y), 1.0);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p - w).abs() <= epsilon + 1e-15);
    }

    #[test]
    fn features_stay_inside_the_layer_envelopes(
        seed in 0u64..10_000,
        n in 1usize..60,
        depth in 1usize..4,
        agg in aggregation(),
        relu in any::<bool>(),
        alpha in 0.0f64..0.6,
    ) {
        let gs = sampled_graph(seed, n, alpha, 0.1);
        let w = GraphSageWeights::init(depth, 1, 6, 2, &mut stream(seed, 5, Role::Init)).unwrap();
        let arch = w.arch(agg, relu).unwrap();
        let meta = arch.meta();
        let [_, (graphon, signal)] = make_paper_graphons();
        let d = degree_constant(agg, graphon.meta().d_min).unwrap();
        let cascade = Cascade::new(&meta.layers, &graphon.meta(), &signal.meta(), d, zeta(1.0)).unwrap();
        let trace = mpnn_forward(&arch, &gs).unwrap();
        let input_sup = gs.features.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (t, feats) in trace.features.iter().enumerate() {
            let sup = feats.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let (b1, b2) = cascade.b[t];
            prop_assert!(sup <= (b1 + b2 * input_sup) * (1.0 + 1e-12), "layer {t}: {sup} > {b1} + {b2}·{input_sup}");
        }
        let (a1, a2) = compute_deterministic_bound(&meta.layers);
        let pooled_sup = trace.pooled.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(pooled_sup <= (a1 + a2 * input_sup) * (1.0 + 1e-12));
    }
}
