//! The constant cascade behind the convergence and generalization bounds,
//! the assembled bounds themselves, and the node-count precondition.
//!
//! All constants are evaluated from the regularity metadata only: layer
//! Lipschitz constants and formal biases ([`LayerMeta`]), graphon metadata
//! ([`GraphonMeta`]) and signal metadata ([`SignalMeta`]). Wherever a bound
//! needs `‖Φ^{(l)}(f^{(l−1)}, f^{(l−1)})‖∞` it is replaced by the propagated
//! upper bound `L_Φ (B₁ + B₂ ‖f‖∞) + ‖Φ(0,0)‖∞`, so nothing here evaluates a
//! network.

pub mod competitors;

use std::f64::consts::{E, PI, SQRT_2};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value, json};

use crate::error::{Error, Result, invalid};
use crate::mpnn::{Aggregation, ArchMeta, LayerMeta};
use crate::space::{GraphonMeta, LossSpec, MixtureOfGraphons, NodeCountDist, SignalMeta};

/// How sparsity `α > 0` enters the high-probability convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    /// The dense bound times `N^{2α}`: the degree normalization enters the
    /// bound through a `1/d²` prefactor, and `d → N^{−α} d` turns it into `N^{2α}/d²`.
    #[default]
    Prefactor,
    /// Every constant is recomputed with `d_eff = N^{−α} d`. Constants carry
    /// powers of `1/d` up to the depth, so this is far more pessimistic.
    Substitute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConfig {
    /// Universal constant of Dudley's entropy integral entering `ζ`.
    pub dudley_c: f64,
    /// Failure probability `p` of the high-probability statements.
    pub failure_p: f64,
    /// Turn a failed node-count precondition into an error instead of a warning.
    pub enforce_precondition: bool,
    /// Use the per-class `Γ Σ_j γ_j` assembly of the generalization bound
    /// instead of the `max_j` form with constants `C`, `C′`.
    pub detailed_gamma: bool,
    pub sparsity: SparsityMode,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { dudley_c: 1.0, failure_p: 0.05, enforce_precondition: false, detailed_gamma: false, sparsity: SparsityMode::Prefactor }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dudley_c > 0.0) || !self.dudley_c.is_finite() {
            return Err(invalid(format!("dudley_c must be positive and finite, got {}", self.dudley_c)));
        }
        check_p(self.failure_p)
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 0.25 {
        Ok(())
    } else {
        Err(invalid(format!("failure probability must lie in (0, 1/4), got {p}")))
    }
}

/// `ζ = (2/√2) e (2/ln 2 + 1) (1/√ln 2) C`.
pub fn zeta(dudley_c: f64) -> f64 {
    let l2 = 2f64.ln();
    2.0 / SQRT_2 * E * (2.0 / l2 + 1.0) / l2.sqrt() * dudley_c
}

/// Degree normalization `d`: `d_min` for mean aggregation, 1 for normalized sum.
pub fn degree_constant(aggregation: Aggregation, d_min: f64) -> Result<f64> {
    match aggregation {
        Aggregation::Mean if d_min > 0.0 && d_min.is_finite() => Ok(d_min),
        Aggregation::Mean => Err(invalid(format!("mean aggregation needs d_min > 0, got {d_min}"))),
        Aggregation::NormalizedSum => Ok(1.0),
    }
}

fn check_graphon(g: &GraphonMeta) -> Result<()> {
    let ok = g.lip_w >= 0.0 && g.sup_norm >= 0.0 && g.dim_d >= 0.0 && g.cover_c >= 1.0;
    if ok && [g.lip_w, g.sup_norm, g.dim_d, g.cover_c].iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("graphon metadata out of range: {g:?} (need L_W, ‖W‖, D ≥ 0 and C ≥ 1)")))
    }
}

fn check_layers(layers: &[LayerMeta]) -> Result<()> {
    if layers.is_empty() {
        return Err(invalid("the bound needs at least one layer"));
    }
    for (t, l) in layers.iter().enumerate() {
        let v = [l.lip_phi, l.lip_psi, l.bias_phi, l.bias_psi];
        if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(invalid(format!("layer {} metadata must be finite and nonnegative: {l:?}", t + 1)));
        }
    }
    Ok(())
}

fn prod(it: impl Iterator<Item = f64>) -> f64 {
    it.product()
}

/// 1-based per-layer views `c = L_Φ`, `a = L_Ψ`, formal biases; index 0 is unused.
struct LayerVecs {
    c: Vec<f64>,
    a: Vec<f64>,
    bphi: Vec<f64>,
    bpsi: Vec<f64>,
}

impl LayerVecs {
    fn new(layers: &[LayerMeta]) -> Self {
        let pad = |f: fn(&LayerMeta) -> f64| std::iter::once(f64::NAN).chain(layers.iter().map(f)).collect();
        Self { c: pad(|l| l.lip_phi), a: pad(|l| l.lip_psi), bphi: pad(|l| l.bias_phi), bpsi: pad(|l| l.bias_psi) }
    }

    fn depth(&self) -> usize {
        self.a.len() - 1
    }
}

/// `(B₁^{(t)}, B₂^{(t)})` for `t = 0..=T`, with `‖f^{(t)}‖∞ ≤ B₁ + B₂ ‖f‖∞` on
/// the limit network and `B^{(0)} = (0, 1)`.
pub fn compute_b(layers: &[LayerMeta]) -> Result<Vec<(f64, f64)>> {
    check_layers(layers)?;
    let v = LayerVecs::new(layers);
    Ok(b_pairs(&v))
}

fn b_pairs(v: &LayerVecs) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 1.0)];
    for l in 1..=v.depth() {
        let b1 = (1..=l)
            .map(|k| (v.a[k] * v.bphi[k] + v.bpsi[k]) * prod((k + 1..=l).map(|q| v.a[q] * (1.0 + v.c[q]))))
            .sum();
        let b2 = prod((1..=l).map(|k| v.a[k] * (1.0 + v.c[k])));
        out.push((b1, b2));
    }
    out
}

/// `(Z₁^{(t)}, Z₂^{(t)}, Z₃^{(t)})` for `t = 0..=T`: the Lipschitz constant of
/// `f^{(t)}` is at most `Z₁ + Z₂ ‖f‖∞ + Z₃ L_f`, with `Z^{(0)} = (0, 0, 1)`.
pub fn compute_z(layers: &[LayerMeta], g: &GraphonMeta, d: f64) -> Result<Vec<[f64; 3]>> {
    check_layers(layers)?;
    check_graphon(g)?;
    if !(d > 0.0) {
        return Err(invalid(format!("degree constant must be positive, got {d}")));
    }
    let v = LayerVecs::new(layers);
    Ok(z_triples(&v, &b_pairs(&v), g, d))
}

fn z_triples(v: &LayerVecs, b: &[(f64, f64)], g: &GraphonMeta, d: f64) -> Vec<[f64; 3]> {
    let (w, lw) = (g.sup_norm, g.lip_w);
    let rho = |k: usize| v.a[k] * lw / d + v.a[k] * w * lw / (d * d);
    let piz = |q: usize| v.a[q] * (1.0 + w / d * v.c[q]);
    let mut out = vec![[0.0, 0.0, 1.0]];
    for l in 1..=v.depth() {
        let tail = |k: usize| prod((k + 1..=l).map(piz));
        let z1 = (1..=l).map(|k| (rho(k) * v.bphi[k] + b[k - 1].0 * rho(k) * v.c[k]) * tail(k)).sum();
        let z2 = (1..=l).map(|k| b[k - 1].1 * rho(k) * v.c[k] * tail(k)).sum();
        let z3 = prod((1..=l).map(piz));
        out.push([z1, z2, z3]);
    }
    out
}

/// Node-count-dependent inputs of the per-layer error constants `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRegime {
    pub n: usize,
    pub p: f64,
    pub epsilon: f64,
}

/// Per-layer `(K^{(t)}, Q^{(t)})`, `t = 1..=T`, of the recurrence
/// `dist^{(t)} ≤ K^{(t)} dist^{(t−1)} + Q^{(t)}`.
pub fn compute_kq(
    layers: &[LayerMeta],
    g: &GraphonMeta,
    s: &SignalMeta,
    d: f64,
    zeta: f64,
    regime: SampleRegime,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = Cascade::new(layers, g, s, d, zeta)?;
    Ok((c.k.clone(), c.q(regime)?))
}

/// Unrolls `η^{(l)} = a^{(l)} η^{(l−1)} + b^{(l)}` from `η^{(0)} = eta0`.
pub fn solve_recurrence(a: &[f64], b: &[f64], eta0: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("recurrence has {} factors but {} offsets", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).fold(eta0, |eta, (a, b)| a * eta + b))
}

/// Every node-count-independent constant of the cascade for one
/// (architecture, graphon, signal) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub layers: Vec<LayerMeta>,
    pub graphon: GraphonMeta,
    pub signal: SignalMeta,
    pub d: f64,
    pub zeta: f64,
    /// `(B₁, B₂)` for `t = 0..=T`.
    pub b: Vec<(f64, f64)>,
    /// `(Z₁, Z₂, Z₃)` for `t = 0..=T`.
    pub z: Vec<[f64; 3]>,
    /// `K^{(t)}` for `t = 1..=T`.
    pub k: Vec<f64>,
    pub omega: [f64; 12],
    pub s: [f64; 6],
    pub t: [f64; 3],
    pub a_prime: f64,
    pub a_dblprime: f64,
}

impl Cascade {
    pub fn new(layers: &[LayerMeta], g: &GraphonMeta, s: &SignalMeta, d: f64, zeta: f64) -> Result<Self> {
        check_layers(layers)?;
        check_graphon(g)?;
        if !(d > 0.0) || !d.is_finite() {
            return Err(invalid(format!("degree constant must be positive, got {d}")));
        }
        if !(s.sup_norm >= 0.0 && s.lip_f >= 0.0) {
            return Err(invalid(format!("signal metadata must be nonnegative: {s:?}")));
        }
        let v = LayerVecs::new(layers);
        let t_depth = v.depth();
        let b = b_pairs(&v);
        let z = z_triples(&v, &b, g, d);
        let (w, lw, dim, cx) = (g.sup_norm, g.lip_w, g.dim_d, g.cover_c);
        let (fs, lf) = (s.sup_norm, s.lip_f);

        let kk: Vec<f64> = std::iter::once(f64::NAN).chain((1..=t_depth).map(|l| v.a[l] * v.c[l].max(1.0))).collect();
        let after = |l: usize| prod((l + 1..=t_depth).map(|q| kk[q]));
        let p_l = |l: usize| v.c[l] * (b[l - 1].0 + b[l - 1].1 * fs) + v.bphi[l];
        let f_l = |l: usize| b[l].0 + b[l].1 * fs;
        let gb1 = |l: usize| v.c[l] * b[l - 1].0 + v.bphi[l];
        let gb2 = |l: usize| v.c[l] * b[l - 1].1;
        let sum = |f: &dyn Fn(usize) -> f64| (1..=t_depth).map(f).sum::<f64>();
        let dud_dim = zeta * lw * (cx.ln().sqrt() + dim.sqrt());
        let sw = SQRT_2 * w + zeta * lw;

        let mut om = [0.0; 12];
        om[0] = sum(&|l| v.a[l] * (1.0 + w) * cx * gb1(l) / SQRT_2 / d * after(l));
        om[1] = sum(&|l| v.a[l] * (1.0 + w) * cx * gb2(l) / SQRT_2 / d * after(l));
        om[2] = sum(&|l| (v.a[l] * 2.0 * lw * gb1(l) / d + v.a[l] * v.c[l] * z[l - 1][0] * (1.0 + w) / d) * after(l));
        om[3] = sum(&|l| (v.a[l] * 2.0 * lw * gb2(l) / d + v.a[l] * 2.0 * v.c[l] * z[l - 1][1] * (1.0 + w) / d) * after(l));
        om[4] = sum(&|l| v.a[l] * 2.0 * v.c[l] * z[l - 1][2] * lf * (1.0 + w) / d * after(l));
        om[5] = sum(&|l| (v.a[l] * gb1(l) / d + v.a[l] * gb1(l) / d * sw) * after(l));
        om[6] = sum(&|l| (v.a[l] * gb2(l) / d + v.a[l] * gb2(l) / d * sw) * after(l));
        om[7] = sum(&|l| v.a[l] * gb1(l) / d * after(l));
        om[8] = sum(&|l| v.a[l] * gb2(l) / d * after(l));
        om[9] = sum(&|l| v.a[l] * gb1(l) / d * dud_dim * after(l));
        om[10] = sum(&|l| v.a[l] * gb2(l) / d * dud_dim * after(l));
        om[11] = sum(&|l| v.a[l] * (p_l(l) / d + v.c[l] * f_l(l - 1) + v.bphi[l]) * after(l))
            + prod((1..=t_depth).map(|l| kk[l]));

        let (b1t, b2t) = b[t_depth];
        let zt = z[t_depth];
        let sl = cx.ln().sqrt();
        let mut s6 = [0.0; 6];
        s6[0] = 3.0 * (om[0] + cx / SQRT_2 * b1t + (om[1] + b2t) * fs).powi(2);
        s6[1] = 3.0 * (om[5] + om[6] * fs).powi(2);
        s6[2] = 3f64.sqrt() * om[0] * sl + om[1] * fs * sl + om[2] + om[3] * fs + om[4] * lf
            + 2.0 * (zt[0] + zt[1] * fs + zt[2] * lf)
            + cx / SQRT_2 * (b1t + b2t * fs) * sl;
        let gfac = (3.0 * (dim + 2.0 / 3.0) / (2.0 * (dim + 1.0))).sqrt();
        s6[3] = cx / SQRT_2 * (b1t + b2t * fs) * (dim / (2.0 * (dim + 1.0))).sqrt() + om[0] * gfac + om[1] * fs * gfac;
        s6[4] = om[9] + om[10] * fs;
        s6[5] = om[7] + om[8] * fs;

        let d2 = d * d;
        let t = [
            d2 * (s6[0] + 5.0 * s6[2].powi(2) + 5.0 * s6[3].powi(2)),
            d2 * (s6[1] + 5.0 * s6[4].powi(2) + 5.0 * s6[5].powi(2)),
            d2 * 5.0 * om[11].powi(2),
        ];
        let (a_prime, a_dblprime) = crate::mpnn::compute_deterministic_bound(layers);
        Ok(Self {
            layers: layers.to_vec(),
            graphon: *g,
            signal: *s,
            d,
            zeta,
            b,
            z,
            k: kk[1..].to_vec(),
            omega: om,
            s: s6,
            t,
            a_prime,
            a_dblprime,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `C = 4(1+√π)(T₁ + T₂ + T₃)` for this class alone.
    pub fn c_constant(&self) -> f64 {
        4.0 * (1.0 + PI.sqrt()) * self.t.iter().sum::<f64>()
    }

    /// `C′ = 4(1+√π) T₃` for this class alone.
    pub fn c_prime(&self) -> f64 {
        4.0 * (1.0 + PI.sqrt()) * self.t[2]
    }

    /// Per-layer `Q^{(t)}`, `t = 1..=T`.
    pub fn q(&self, r: SampleRegime) -> Result<Vec<f64>> {
        check_p(r.p)?;
        if r.n < 2 {
            return Err(invalid(format!("Q needs N >= 2, got {}", r.n)));
        }
        if !(r.epsilon >= 0.0) {
            return Err(invalid(format!("noise level must be nonnegative, got {}", r.epsilon)));
        }
        let v = LayerVecs::new(&self.layers);
        let g = &self.graphon;
        let (w, lw, dim, cx) = (g.sup_norm, g.lip_w, g.dim_d, g.cover_c);
        let (fs, lf) = (self.signal.sup_norm, self.signal.lip_f);
        let (d, b, z) = (self.d, &self.b, &self.z);
        let nn = r.n as f64;
        let p = r.p;
        let dud = self.zeta * lw * (cx.ln().sqrt() + dim.sqrt()) + (SQRT_2 * w + self.zeta * lw) * (2.0 / p).ln().sqrt();
        let rexp = 1.0 / (2.0 * (dim + 1.0));
        let cover_log = cx.ln() + dim / (2.0 * (dim + 1.0)) * nn.ln();
        Ok((1..=self.depth())
            .map(|l| {
                let p_l = v.c[l] * (b[l - 1].0 + b[l - 1].1 * fs) + v.bphi[l];
                let lf_prev = z[l - 1][0] + z[l - 1][1] * fs + z[l - 1][2] * lf;
                let f_prev = b[l - 1].0 + b[l - 1].1 * fs;
                let inner = p_l / d * ((2.0 * nn / p).ln().sqrt() / nn.sqrt() + dud / nn.sqrt())
                    + 1.0 / (nn.powf(rexp) * d)
                        * (v.c[l] * lf_prev
                            + cx * p_l / SQRT_2 * (cover_log + (2.0 * nn / p).ln()).sqrt()
                            + lw * p_l
                            + cx * w * p_l / SQRT_2 * (cover_log + (2.0 / p).ln()).sqrt()
                            + p_l * lw
                            + w * v.c[l] * lf_prev)
                    + (p_l / d + v.c[l] * f_prev + v.bphi[l]) * r.epsilon;
                v.a[l] * inner
            })
            .collect())
    }

    /// Squared high-probability bound on the pooled output distance for a
    /// dense graph with `n` nodes, before the readout factor.
    fn dense_pooled_sq(&self, n: f64, p: f64, eps: f64) -> f64 {
        let dim = self.graphon.dim_d;
        let r = 1.0 / (2.0 * (dim + 1.0));
        let (s, om12) = (&self.s, self.omega[11]);
        let lp = (2.0 / p).ln();
        let bracket = om12 * eps
            + s[2] / n.powf(r)
            + s[3] * n.ln().sqrt() / n.powf(r)
            + s[4] / n.sqrt()
            + s[5] * n.ln().sqrt() / n.sqrt();
        s[0] * lp / n.powf(1.0 / (dim + 1.0)) + s[1] * lp / n + bracket * bracket
    }
}

/// Smallest node count satisfying the size precondition of the
/// high-probability bounds, with the data needed to re-check any `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePrecondition {
    pub n0: u64,
    pub d: f64,
    pub p: f64,
    /// The `N`-independent second branch of the requirement on `√N`.
    pub dudley_branch: f64,
}

impl NodePrecondition {
    /// The `N`-dependent first branch `4√2 √ln(2N/p) / d`.
    pub fn hoeffding_branch(&self, n: f64) -> f64 {
        4.0 * SQRT_2 * (2.0 * n / self.p).ln().sqrt() / self.d
    }

    pub fn check(&self, n: u64) -> bool {
        let nf = n as f64;
        n >= 1 && nf.sqrt() >= self.hoeffding_branch(nf).max(self.dudley_branch)
    }
}

/// Evaluates both branches of `√N ≥ max{4√2 √ln(2N/p)/d, 4(ζ L_W/d (√ln C + √D) + (√2‖W‖ + ζ L_W)/d √ln(2/p))}`
/// and finds the smallest admissible `N` by doubling and integer bisection.
pub fn min_nodes_precondition(g: &GraphonMeta, cfg: &BoundConfig, aggregation: Aggregation, p: f64) -> Result<NodePrecondition> {
    check_p(p)?;
    let d = degree_constant(aggregation, g.d_min)?;
    min_nodes_for_degree(g, cfg.dudley_c, d, p)
}

fn min_nodes_for_degree(g: &GraphonMeta, dudley_c: f64, d: f64, p: f64) -> Result<NodePrecondition> {
    check_p(p)?;
    check_graphon(g)?;
    let z = zeta(dudley_c);
    let dudley_branch = 4.0
        * (z * g.lip_w / d * (g.cover_c.ln().sqrt() + g.dim_d.sqrt())
            + (SQRT_2 * g.sup_norm + z * g.lip_w) / d * (2.0 / p).ln().sqrt());
    let mut pre = NodePrecondition { n0: 0, d, p, dudley_branch };
    let mut hi: u64 = 1;
    while !pre.check(hi) {
        hi = hi.checked_mul(2).ok_or_else(|| Error::Numeric("node-count precondition has no finite solution".into()))?;
    }
    let mut lo = hi / 2;
    // invariant: check(hi) holds, check(lo) fails (or lo == 0)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if pre.check(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    pre.n0 = hi;
    Ok(pre)
}

/// Everything the convergence bound needs about one graphon-signal pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceInputs<'a> {
    pub graphon: &'a GraphonMeta,
    pub signal: &'a SignalMeta,
    pub arch: &'a ArchMeta,
    pub n: usize,
    pub alpha: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceBound {
    /// Bound on `‖Θ(G,f) − Θ(W,f)‖∞²` (including the readout factor).
    pub squared: f64,
    pub value: f64,
    pub precondition: NodePrecondition,
    pub warnings: Vec<String>,
}

/// High-probability bound on the squared readout distance between the graph
/// MPNN and its limit, holding with probability at least `1 − 4p`.
pub fn convergence_bound(inp: ConvergenceInputs<'_>, cfg: &BoundConfig) -> Result<ConvergenceBound> {
    cfg.validate()?;
    if inp.n < 2 {
        return Err(invalid(format!("convergence bound needs N >= 2, got {}", inp.n)));
    }
    if !(inp.alpha >= 0.0) || !(inp.epsilon >= 0.0) {
        return Err(invalid("alpha and epsilon must be nonnegative"));
    }
    let n = inp.n as f64;
    let d = degree_constant(inp.arch.aggregation, inp.graphon.d_min)?;
    let scale = n.powf(-inp.alpha);
    let z = zeta(cfg.dudley_c);
    let p = cfg.failure_p;
    let (d_used, factor) = match cfg.sparsity {
        SparsityMode::Prefactor => (d, n.powf(2.0 * inp.alpha)),
        SparsityMode::Substitute => (d * scale, 1.0),
    };
    let cascade = Cascade::new(&inp.arch.layers, inp.graphon, inp.signal, d_used, z)?;
    let squared = factor * cascade.dense_pooled_sq(n, p, inp.epsilon) * inp.arch.lip_k.powi(2);
    let precondition = min_nodes_for_degree(inp.graphon, cfg.dudley_c, d_used, p)?;
    let mut warnings = Vec::new();
    if !precondition.check(inp.n as u64) {
        let msg = format!("node-count precondition fails at N = {} (needs N >= {})", inp.n, precondition.n0);
        if cfg.enforce_precondition {
            return Err(invalid(msg));
        }
        warnings.push(msg);
    }
    if !squared.is_finite() {
        return Err(Error::Numeric(format!("convergence bound is not finite at N = {}", inp.n)));
    }
    Ok(ConvergenceBound { squared, value: squared.sqrt(), precondition, warnings })
}

/// `E[(1+ln N) N^{2α} / N^{1/(D+1)}]` and `E[(1+ln N) N^{2α} / N]` over the node-count law.
pub fn node_count_moments(size: &NodeCountDist, alpha: f64, dim: f64) -> (f64, f64) {
    let e1 = size.expect(|n| (1.0 + n.ln()) * n.powf(2.0 * alpha) / n.powf(1.0 / (dim + 1.0)));
    let e2 = size.expect(|n| (1.0 + n.ln()) * n.powf(2.0 * alpha) / n);
    (e1, e2)
}

/// Expected squared readout distance for graphs of exactly `n` nodes:
/// `4(1+√π)(T₁ (1+ln N) N^{2α}/N^{1/(D+1)} + T₂ (1+ln N) N^{2α}/N + T₃ ε) K²`.
pub fn expected_convergence_bound(inp: ConvergenceInputs<'_>, cfg: &BoundConfig) -> Result<f64> {
    cfg.validate()?;
    if inp.n < 1 {
        return Err(invalid("expected bound needs N >= 1"));
    }
    let d = degree_constant(inp.arch.aggregation, inp.graphon.d_min)?;
    let cascade = Cascade::new(&inp.arch.layers, inp.graphon, inp.signal, d, zeta(cfg.dudley_c))?;
    let (e1, e2) = node_count_moments(&NodeCountDist::Fixed { n: inp.n }, inp.alpha, inp.graphon.dim_d);
    Ok(expected_from_t(&cascade.t, e1, e2, inp.epsilon) * inp.arch.lip_k.powi(2))
}

fn expected_from_t(t: &[f64; 3], e1: f64, e2: f64, eps: f64) -> f64 {
    4.0 * (1.0 + PI.sqrt()) * (t[0] * e1 + t[1] * e2 + t[2] * eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationBound {
    /// Bound on `E[sup_Θ (R_emp − R_exp)²]`.
    pub squared: f64,
    /// Its square root, the quantity comparable with a generalization gap.
    pub value: f64,
    /// `2^Γ 8 ‖𝓛‖∞² π / m`.
    pub confidence_term: f64,
    pub complexity_term: f64,
    pub c: f64,
    pub c_prime: f64,
    /// One cascade per class.
    pub cascades: Vec<Cascade>,
    /// Index of the class attaining `max_j Σ_i T_i^{(j)}`.
    pub driving_class: usize,
}

/// Uniform generalization bound for MPNN classifiers trained on `m` samples
/// of the mixture.
pub fn generalization_bound(
    mix: &MixtureOfGraphons,
    arch: &ArchMeta,
    loss: &LossSpec,
    m: usize,
    cfg: &BoundConfig,
) -> Result<GeneralizationBound> {
    cfg.validate()?;
    mix.validate()?;
    if m == 0 {
        return Err(invalid("generalization bound needs m >= 1 training samples"));
    }
    if !(loss.lip >= 0.0 && loss.sup_norm >= 0.0) {
        return Err(invalid(format!("loss metadata must be nonnegative: {loss:?}")));
    }
    let z = zeta(cfg.dudley_c);
    let cascades = mix
        .classes
        .iter()
        .map(|cl| {
            let g = cl.graphon.meta();
            let d = degree_constant(arch.aggregation, g.d_min)?;
            Cascade::new(&arch.layers, &g, &cl.signal.meta(), d, z)
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma = mix.num_classes() as f64;
    let mf = m as f64;
    let two_g = 2f64.powf(gamma);
    let eps = mix.noise.epsilon;
    let k2 = arch.lip_k.powi(2);
    let confidence_term = two_g * 8.0 * loss.sup_norm.powi(2) * PI / mf;
    let totals: Vec<f64> = cascades.iter().map(|c| c.t.iter().sum()).collect();
    let driving_class = (0..totals.len()).fold(0, |best, j| if totals[j] > totals[best] { j } else { best });
    let c = cascades.iter().map(Cascade::c_constant).fold(0.0, f64::max);
    let c_prime = cascades.iter().map(Cascade::c_prime).fold(0.0, f64::max);
    let complexity_term = if cfg.detailed_gamma {
        let sum: f64 = mix
            .classes
            .iter()
            .zip(&cascades)
            .map(|(cl, cas)| {
                let (e1, e2) = node_count_moments(&mix.size_dist, mix.alpha, cl.graphon.space.dim_d);
                cl.prob * expected_from_t(&cas.t, e1, e2, eps)
            })
            .sum();
        PI.sqrt() / mf * two_g * gamma * loss.lip.powi(2) * sum * k2
    } else {
        let (dim, _) = mix.max_covering();
        let (e1, e2) = node_count_moments(&mix.size_dist, mix.alpha, dim);
        two_g * loss.lip.powi(2) / mf * (c * (e1 + e2) + c_prime * eps) * k2
    };
    let squared = confidence_term + complexity_term;
    if !squared.is_finite() {
        return Err(Error::Numeric("generalization bound is not finite".into()));
    }
    Ok(GeneralizationBound { squared, value: squared.sqrt(), confidence_term, complexity_term, c, c_prime, cascades, driving_class })
}

/// All constants and bound values for one configuration, serialized with
/// the conventional constant names (`"zeta"`, `"Omega_1"`, `"S_1"`, `"T_1"`, `"N0"`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub cascade: Cascade,
    pub q: Vec<f64>,
    /// `Σ_t Q^{(t)} Π_{t'>t} K^{(t')} + ε Π_t K^{(t)}`: bound on the layer-`T` feature distance.
    pub dist_bound: f64,
    pub c: f64,
    pub c_prime: f64,
    pub precondition: NodePrecondition,
    pub convergence: ConvergenceBound,
    pub expected_convergence: f64,
    pub generalization: Option<GeneralizationBound>,
    pub competitors: Option<competitors::CompetitorBounds>,
    pub empirical: Option<crate::train::GapReport>,
    pub warnings: Vec<String>,
}

impl BoundReport {
    /// Constants for `arch` on one graphon-signal pair at node count `n`,
    /// plus (optionally) the mixture-level generalization bound.
    pub fn evaluate(
        inp: ConvergenceInputs<'_>,
        cfg: &BoundConfig,
        generalization: Option<(&MixtureOfGraphons, &LossSpec, usize)>,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = degree_constant(inp.arch.aggregation, inp.graphon.d_min)?;
        let cascade = Cascade::new(&inp.arch.layers, inp.graphon, inp.signal, d, zeta(cfg.dudley_c))?;
        let q = cascade.q(SampleRegime { n: inp.n, p: cfg.failure_p, epsilon: inp.epsilon })?;
        let dist_bound = solve_recurrence(&cascade.k, &q, inp.epsilon)?;
        let precondition = min_nodes_precondition(inp.graphon, cfg, inp.arch.aggregation, cfg.failure_p)?;
        let convergence = convergence_bound(inp, cfg)?;
        let expected_convergence = expected_convergence_bound(inp, cfg)?;
        let generalization = generalization.map(|(mix, loss, m)| generalization_bound(mix, inp.arch, loss, m, cfg)).transpose()?;
        let mut warnings = convergence.warnings.clone();
        warnings.push(
            "‖Φ(f,f)‖∞ terms are replaced by their Lipschitz-propagated upper bounds; all constants are conservative".into(),
        );
        Ok(Self {
            c: cascade.c_constant(),
            c_prime: cascade.c_prime(),
            cascade,
            q,
            dist_bound,
            precondition,
            convergence,
            expected_convergence,
            generalization,
            competitors: None,
            empirical: None,
            warnings,
        })
    }

    pub fn to_json(&self) -> Value {
        let c = &self.cascade;
        let per_layer = |f: &dyn Fn(usize) -> f64| Value::from((1..=c.depth()).map(f).collect::<Vec<f64>>());
        let mut m = Map::new();
        m.insert("zeta".into(), json!(c.zeta));
        m.insert("d".into(), json!(c.d));
        m.insert("B1".into(), per_layer(&|t| c.b[t].0));
        m.insert("B2".into(), per_layer(&|t| c.b[t].1));
        m.insert("Z1".into(), per_layer(&|t| c.z[t][0]));
        m.insert("Z2".into(), per_layer(&|t| c.z[t][1]));
        m.insert("Z3".into(), per_layer(&|t| c.z[t][2]));
        m.insert("K".into(), per_layer(&|t| c.k[t - 1]));
        m.insert("Q".into(), per_layer(&|t| self.q[t - 1]));
        m.insert("A_prime".into(), json!(c.a_prime));
        m.insert("A_dblprime".into(), json!(c.a_dblprime));
        for (i, v) in c.omega.iter().enumerate() {
            m.insert(format!("Omega_{}", i + 1), json!(v));
        }
        for (i, v) in c.s.iter().enumerate() {
            m.insert(format!("S_{}", i + 1), json!(v));
        }
        for (i, v) in c.t.iter().enumerate() {
            m.insert(format!("T_{}", i + 1), json!(v));
        }
        m.insert("C".into(), json!(self.c));
        m.insert("C_prime".into(), json!(self.c_prime));
        m.insert("N0".into(), json!(self.precondition.n0));
        m.insert("dist_bound".into(), json!(self.dist_bound));
        m.insert("convergence_bound_sq".into(), json!(self.convergence.squared));
        m.insert("convergence_bound".into(), json!(self.convergence.value));
        m.insert("expected_convergence_bound_sq".into(), json!(self.expected_convergence));
        m.insert("expected_convergence_bound".into(), json!(self.expected_convergence.sqrt()));
        if let Some(g) = &self.generalization {
            m.insert("generalization_bound_sq".into(), json!(g.squared));
            m.insert("generalization_bound".into(), json!(g.value));
            m.insert("generalization_C".into(), json!(g.c));
            m.insert("generalization_C_prime".into(), json!(g.c_prime));
        }
        if let Some(comp) = &self.competitors {
            m.insert("pac_bayes".into(), json!(comp.pac_bayes));
            m.insert("rademacher".into(), json!(comp.rademacher));
        }
        if let Some(e) = &self.empirical {
            m.insert("empirical".into(), serde_json::to_value(e).unwrap_or(Value::Null));
        }
        m.insert("warnings".into(), json!(self.warnings));
        Value::Object(m)
    }
}

#[cfg(test)]
mod tests;
