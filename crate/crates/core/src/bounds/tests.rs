// Oracle values are kept exactly as printed by the oracle.
#![allow(clippy::excessive_precision)]

use super::*;
use crate::space::{make_paper_graphons, paper_mixture};

fn layer(lip_phi: f64, lip_psi: f64, bias_phi: f64, bias_psi: f64) -> LayerMeta {
    LayerMeta { lip_phi, lip_psi, bias_phi, bias_psi }
}

fn paper_meta() -> (GraphonMeta, SignalMeta) {
    let [(w, f), _] = make_paper_graphons();
    (w.meta(), f.meta())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn zeta_values() {
    assert!((zeta(1.0) - 17.9404).abs() < 5e-5);
    assert_eq!(zeta(2.0), 2.0 * zeta(1.0));
    assert_eq!(zeta(0.0), 0.0);
}

#[test]
fn b_single_layer() {
    let b = compute_b(&[layer(1.0, 1.0, 0.5, 0.25)]).unwrap();
    assert_eq!(b[0], (0.0, 1.0));
    assert_eq!(b[1], (0.75, 2.0));
}

#[test]
fn b_two_layers() {
    let l = layer(1.0, 1.0, 0.5, 0.25);
    let b = compute_b(&[l, l]).unwrap();
    assert_eq!(b[2], (2.25, 4.0));
}

#[test]
fn b_zero_biases() {
    let b = compute_b(&[layer(0.7, 1.3, 0.0, 0.0), layer(2.0, 0.4, 0.0, 0.0), layer(1.0, 1.0, 0.0, 0.0)]).unwrap();
    assert!(b.iter().all(|p| p.0 == 0.0));
}

#[test]
fn z_examples() {
    let g = GraphonMeta { lip_w: 0.5, sup_norm: 0.4, d_min: 0.4, dim_d: 1.0, cover_c: 1.0 };
    let z = compute_z(&[layer(1.0, 1.0, 0.0, 0.0)], &g, 0.4).unwrap();
    assert!((z[1][2] - 2.0).abs() < 1e-15);
    let flat = GraphonMeta { lip_w: 0.0, ..g };
    let z = compute_z(&[layer(1.0, 2.0, 0.3, 0.1), layer(0.5, 1.5, 0.2, 0.0)], &flat, 0.4).unwrap();
    assert!(z.iter().all(|t| t[0] == 0.0 && t[1] == 0.0));
    assert!(compute_z(&[layer(1.0, 1.0, 0.0, 0.0)], &g, 0.0).is_err());
}

#[test]
fn mean_rejects_zero_d_min() {
    assert!(degree_constant(Aggregation::Mean, 0.0).is_err());
    assert_eq!(degree_constant(Aggregation::NormalizedSum, 0.0).unwrap(), 1.0);
}

#[test]
fn k_uses_max_one() {
    let (g, s) = paper_meta();
    let regime = SampleRegime { n: 50, p: 0.05, epsilon: 0.0 };
    let (k, _) = compute_kq(&[layer(0.5, 2.0, 0.0, 0.0)], &g, &s, 0.25, zeta(1.0), regime).unwrap();
    assert_eq!(k, vec![2.0]);
}

#[test]
fn q_noise_term_and_p_monotonicity() {
    let (g, s) = paper_meta();
    let layers = [layer(1.0, 1.5, 0.5, 0.25), layer(0.8, 1.2, 0.1, 0.0)];
    let c = Cascade::new(&layers, &g, &s, 0.25, zeta(1.0)).unwrap();
    let q0 = c.q(SampleRegime { n: 200, p: 0.05, epsilon: 0.0 }).unwrap();
    let q1 = c.q(SampleRegime { n: 200, p: 0.05, epsilon: 0.1 }).unwrap();
    // The ε summand is linear in ε and vanishes at ε = 0.
    let q2 = c.q(SampleRegime { n: 200, p: 0.05, epsilon: 0.2 }).unwrap();
    for t in 0..2 {
        assert!(q1[t] > q0[t]);
        assert!(rel(q2[t] - q0[t], 2.0 * (q1[t] - q0[t])) < 1e-12);
    }
    let mut prev = vec![0.0; 2];
    for p in [0.2, 0.1, 0.05, 0.01, 1e-4] {
        let q = c.q(SampleRegime { n: 200, p, epsilon: 0.0 }).unwrap();
        assert!(q.iter().zip(&prev).all(|(a, b)| a >= b));
        prev = q;
    }
    assert!(c.q(SampleRegime { n: 200, p: 0.3, epsilon: 0.0 }).is_err());
    assert!(c.q(SampleRegime { n: 1, p: 0.05, epsilon: 0.0 }).is_err());
}

#[test]
fn recurrence_examples() {
    assert_eq!(solve_recurrence(&[2.0, 3.0], &[1.0, 1.0], 0.0).unwrap(), 4.0);
    let b = [0.3, 1.2, 0.7, 2.5];
    assert!((solve_recurrence(&[1.0; 4], &b, 0.4).unwrap() - (b.iter().sum::<f64>() + 0.4)).abs() < 1e-15);
    assert!(solve_recurrence(&[1.0], &[], 0.0).is_err());
}

#[test]
fn recurrence_matches_closed_form() {
    use rand::Rng;
    let mut rng = crate::rng::stream(11, 0, crate::rng::Role::Probe);
    for _ in 0..50 {
        let len = rng.random_range(1..8);
        let a: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..3.0)).collect();
        let b: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..3.0)).collect();
        let eta0: f64 = rng.random_range(0.0..1.0);
        // Σ_t b_t Π_{t'>t} a_t' + η₀ Π a
        let closed: f64 = (0..len).map(|t| b[t] * a[t + 1..].iter().product::<f64>()).sum::<f64>()
            + eta0 * a.iter().product::<f64>();
        assert!(rel(solve_recurrence(&a, &b, eta0).unwrap(), closed) < 1e-12);
    }
}

#[test]
fn precondition_examples() {
    let (g, _) = paper_meta();
    let cfg = BoundConfig::default();
    let pre = min_nodes_precondition(&g, &cfg, Aggregation::NormalizedSum, 0.05).unwrap();
    assert!((pre.hoeffding_branch(50.0) - 15.595).abs() < 1e-3);
    assert!(!pre.check(50));
    assert!((pre.dudley_branch - 109.25).abs() < 5e-3);
    assert!(pre.check(pre.n0) && !pre.check(pre.n0 - 1));
    assert!(pre.n0 > 11_000 && pre.n0 < 13_000, "N0 = {}", pre.n0);
    assert_eq!(pre.n0, (pre.dudley_branch * pre.dudley_branch).ceil() as u64);
    let mean = min_nodes_precondition(&g, &cfg, Aggregation::Mean, 0.05).unwrap();
    assert!(mean.n0 > pre.n0);
    let zero = GraphonMeta { lip_w: 0.0, sup_norm: 0.0, ..g };
    assert_eq!(min_nodes_precondition(&zero, &cfg, Aggregation::NormalizedSum, 0.05).unwrap().dudley_branch, 0.0);
    assert!(min_nodes_precondition(&g, &cfg, Aggregation::Mean, 0.25).is_err());
    assert!(min_nodes_precondition(&g, &cfg, Aggregation::Mean, 0.0).is_err());
}

fn t1_arch(agg: Aggregation) -> ArchMeta {
    ArchMeta { layers: vec![layer(1.0, 1.5, 0.0, 0.0)], aggregation: agg, lip_k: 1.0 }
}

#[test]
fn convergence_noise_term_and_warning() {
    let (g, s) = paper_meta();
    let arch = t1_arch(Aggregation::Mean);
    let cfg = BoundConfig::default();
    let base = ConvergenceInputs { graphon: &g, signal: &s, arch: &arch, n: 50, alpha: 0.0, epsilon: 0.0 };
    let b0 = convergence_bound(base, &cfg).unwrap();
    assert_eq!(b0.warnings.len(), 1);
    let b1 = convergence_bound(ConvergenceInputs { epsilon: 0.1, ..base }, &cfg).unwrap();
    assert!(b1.squared > b0.squared);
    let strict = BoundConfig { enforce_precondition: true, ..cfg };
    assert!(convergence_bound(base, &strict).is_err());
}

#[test]
fn convergence_decreasing_dense() {
    let (g, s) = paper_meta();
    let arch = t1_arch(Aggregation::Mean);
    let cfg = BoundConfig::default();
    let mut prev = f64::INFINITY;
    for e in 3..=6 {
        for k in [1usize, 2, 5] {
            let n = k * 10usize.pow(e);
            let b = convergence_bound(ConvergenceInputs { graphon: &g, signal: &s, arch: &arch, n, alpha: 0.0, epsilon: 0.0 }, &cfg).unwrap();
            assert!(b.squared <= prev, "N = {n}");
            prev = b.squared;
        }
    }
}

#[test]
fn sparsity_modes_agree_at_alpha_zero() {
    let (g, s) = paper_meta();
    let arch = t1_arch(Aggregation::Mean);
    let inp = ConvergenceInputs { graphon: &g, signal: &s, arch: &arch, n: 500, alpha: 0.0, epsilon: 0.05 };
    let a = convergence_bound(inp, &BoundConfig::default()).unwrap();
    let b = convergence_bound(inp, &BoundConfig { sparsity: SparsityMode::Substitute, ..Default::default() }).unwrap();
    assert!(rel(a.squared, b.squared) < 1e-12);
    let sparse = ConvergenceInputs { alpha: 0.2, ..inp };
    let a = convergence_bound(sparse, &BoundConfig::default()).unwrap();
    let b = convergence_bound(sparse, &BoundConfig { sparsity: SparsityMode::Substitute, ..Default::default() }).unwrap();
    assert!(b.squared >= a.squared);
}

#[test]
fn t_identities() {
    let (g, s) = paper_meta();
    let layers = [layer(1.0, 1.5, 0.5, 0.25), layer(1.2, 0.9, 0.0, 0.1)];
    let c = Cascade::new(&layers, &g, &s, 0.25, zeta(1.0)).unwrap();
    let d2 = 0.25 * 0.25;
    assert_eq!(c.t[0], d2 * (c.s[0] + 5.0 * c.s[2].powi(2) + 5.0 * c.s[3].powi(2)));
    assert_eq!(c.t[1], d2 * (c.s[1] + 5.0 * c.s[4].powi(2) + 5.0 * c.s[5].powi(2)));
    assert_eq!(c.t[2], d2 * 5.0 * c.omega[11].powi(2));
}

#[test]
fn expected_bound_noise_term() {
    let (g, s) = paper_meta();
    let arch = t1_arch(Aggregation::Mean);
    let cfg = BoundConfig::default();
    let inp = ConvergenceInputs { graphon: &g, signal: &s, arch: &arch, n: 50, alpha: 0.0, epsilon: 0.0 };
    let c = Cascade::new(&arch.layers, &g, &s, g.d_min, zeta(1.0)).unwrap();
    let e0 = expected_convergence_bound(inp, &cfg).unwrap();
    let n = 50f64;
    let manual = 4.0 * (1.0 + PI.sqrt()) * (c.t[0] * (1.0 + n.ln()) / n.sqrt() + c.t[1] * (1.0 + n.ln()) / n);
    assert!(rel(e0, manual) < 1e-14);
    let e1 = expected_convergence_bound(ConvergenceInputs { epsilon: 0.1, ..inp }, &cfg).unwrap();
    assert!(rel(e1 - e0, 4.0 * (1.0 + PI.sqrt()) * c.t[2] * 0.1) < 1e-10);
}

#[test]
fn generalization_first_term_and_scaling() {
    let mix = paper_mixture(0.0, 50);
    let arch = t1_arch(Aggregation::Mean);
    let loss = LossSpec { lip: 1.0, sup_norm: 1.0 };
    let cfg = BoundConfig::default();
    let g = generalization_bound(&mix, &arch, &loss, 90_000, &cfg).unwrap();
    assert!((g.confidence_term - 4.0 * 8.0 * PI / 90_000.0).abs() < 1e-18);
    assert!((g.confidence_term - 1.1170e-3).abs() < 1e-7);
    let g4 = generalization_bound(&mix, &arch, &loss, 360_000, &cfg).unwrap();
    assert!(rel(g.confidence_term, 4.0 * g4.confidence_term) < 1e-14);
    assert!(rel(g.complexity_term, 4.0 * g4.complexity_term) < 1e-14);
    assert_eq!(g.value, g.squared.sqrt());
    // ε = 0: the C′ term is absent, so the complexity term is C·E_N[...] exactly.
    let (e1, e2) = node_count_moments(&mix.size_dist, 0.0, 1.0);
    assert!(rel(g.complexity_term, 4.0 / 90_000.0 * g.c * (e1 + e2)) < 1e-14);
    let detailed = generalization_bound(&mix, &arch, &loss, 90_000, &BoundConfig { detailed_gamma: true, ..cfg }).unwrap();
    assert!(detailed.squared.is_finite() && detailed.complexity_term > 0.0);
}

#[test]
fn report_json_names() {
    let (g, s) = paper_meta();
    let arch = ArchMeta { layers: vec![layer(1.0, 1.5, 0.5, 0.25); 2], aggregation: Aggregation::Mean, lip_k: 1.0 };
    let inp = ConvergenceInputs { graphon: &g, signal: &s, arch: &arch, n: 50, alpha: 0.0, epsilon: 0.0 };
    let mix = paper_mixture(0.0, 50);
    let loss = LossSpec { lip: 1.0, sup_norm: 1.0 };
    let r = BoundReport::evaluate(inp, &BoundConfig::default(), Some((&mix, &loss, 1000))).unwrap();
    let v = r.to_json();
    for key in ["zeta", "A_prime", "A_dblprime", "N0", "Omega_1", "Omega_12", "S_1", "S_6", "T_1", "T_3", "B1", "Q"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["B1"].as_array().unwrap().len(), 2);
    assert!(v["generalization_bound"].as_f64().unwrap() > 0.0);
    let q = &r.q;
    assert!(rel(r.dist_bound, q[0] * r.cascade.k[1] + q[1]) < 1e-14);
}

#[test]
fn constants_monotone_in_every_input() {
    use rand::Rng;
    let mut rng = crate::rng::stream(5, 0, crate::rng::Role::Probe);
    let all = |c: &Cascade, q: &[f64]| {
        let mut v = vec![c.a_prime, c.a_dblprime];
        v.extend(c.b.iter().flat_map(|p| [p.0, p.1]));
        v.extend(c.z.iter().flatten());
        v.extend(&c.k);
        v.extend(&c.omega);
        v.extend(&c.s);
        v.extend(&c.t);
        v.extend(q);
        v
    };
    for _ in 0..40 {
        let layers: Vec<LayerMeta> = (0..2)
            .map(|_| layer(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect();
        let g = GraphonMeta { lip_w: rng.random_range(0.0..2.0), sup_norm: rng.random_range(0.1..1.0), d_min: 0.3, dim_d: 1.0, cover_c: 2.0 };
        let s = SignalMeta { lip_f: rng.random_range(0.0..2.0), sup_norm: rng.random_range(0.0..2.0) };
        let regime = SampleRegime { n: 300, p: 0.05, epsilon: 0.02 };
        let eval = |layers: &[LayerMeta], g: &GraphonMeta, s: &SignalMeta| {
            let c = Cascade::new(layers, g, s, 0.3, zeta(1.0)).unwrap();
            let q = c.q(regime).unwrap();
            all(&c, &q)
        };
        let base = eval(&layers, &g, &s);
        let bump = 1.1;
        let mut variants = Vec::new();
        for t in 0..2 {
            let mut l = layers.clone();
            l[t].lip_phi *= bump;
            variants.push(eval(&l, &g, &s));
            let mut l = layers.clone();
            l[t].lip_psi *= bump;
            variants.push(eval(&l, &g, &s));
        }
        variants.push(eval(&layers, &GraphonMeta { lip_w: g.lip_w * bump, ..g }, &s));
        variants.push(eval(&layers, &GraphonMeta { sup_norm: g.sup_norm * bump, ..g }, &s));
        variants.push(eval(&layers, &g, &SignalMeta { sup_norm: s.sup_norm * bump, ..s }));
        variants.push(eval(&layers, &g, &SignalMeta { lip_f: s.lip_f * bump, ..s }));
        for v in variants {
            for (a, b) in base.iter().zip(&v) {
                assert!(*b >= *a * (1.0 - 1e-12), "constant decreased: {a} -> {b}");
            }
        }
    }
}

#[test]
fn oracle_case_t1_mean() {
    let layers = [layer(1.0, 1.5, 0.5, 0.25)];
    let g = GraphonMeta { lip_w: 0.5, sup_norm: 0.41, d_min: 0.25, dim_d: 1.0, cover_c: 1.0 };
    let s = SignalMeta { lip_f: 0.5, sup_norm: 0.5 };
    let c = Cascade::new(&layers, &g, &s, 0.25, zeta(1.0)).unwrap();
    let q = c.q(SampleRegime { n: 50, p: 0.05, epsilon: 0.0 }).unwrap();
    let expect = [
        (c.zeta, 17.9403692066552480216719624271),
        (q[0], 35.4480936054724275037941175871),
        (c.omega[0], 2.99106168441909602821557165170),
        (c.omega[5], 31.6500364917017789425340207715),
        (c.s[1], 12020.6977191126510163335215104),
        (c.t[0], 312.304907406585834145394088616),
        (c.c_constant(), 22239.3316951026599067693202446),
    ];
    for (got, want) in expect {
        assert!(rel(got, want) < 1e-12, "{got} vs {want}");
    }
}
