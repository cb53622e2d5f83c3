//! Metric-probability spaces, graphons, signals, noise and mixtures.
//!
//! Only the unit interval with Lebesgue measure ships. Points are plain
//! `f64`; the regularity metadata every downstream bound needs (Lipschitz
//! constants, sup norms, minimal degree, covering parameters) travels with
//! the function it describes.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Point = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    UnitInterval,
}

/// A sampleable compact metric-probability space together with the
/// covering-number parameters `C(χ; r) <= cover_c * r^(-dim_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpaceDesc {
    pub kind: SpaceKind,
    pub dim_d: f64,
    pub cover_c: f64,
    pub diameter: f64,
}

impl MetricSpaceDesc {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match self.kind {
            SpaceKind::UnitInterval => rng.random::<f64>(),
        }
    }

    pub fn metric(&self, x: Point, y: Point) -> f64 {
        match self.kind {
            SpaceKind::UnitInterval => (x - y).abs(),
        }
    }

    /// Size of a greedy `r`-net over `points`: every point ends up within
    /// distance `r` of some net point.
    pub fn greedy_net_size(&self, points: &[Point], r: f64) -> usize {
        let mut net: Vec<Point> = Vec::new();
        for &p in points {
            if !net.iter().any(|&q| self.metric(p, q) <= r) {
                net.push(p);
            }
        }
        net.len()
    }

    /// Upper bound on the covering number at radius `r`.
    pub fn covering_bound(&self, r: f64) -> f64 {
        self.cover_c * r.powf(-self.dim_d)
    }
}

/// `[0,1]` with Lebesgue measure and `|x - y|`.
pub fn make_unit_interval_space() -> MetricSpaceDesc {
    MetricSpaceDesc { kind: SpaceKind::UnitInterval, dim_d: 1.0, cover_c: 1.0, diameter: 1.0 }
}

pub type KernelFn = Arc<dyn Fn(Point, Point) -> f64 + Send + Sync>;
pub type SignalFn = Arc<dyn Fn(Point, &mut [f64]) + Send + Sync>;

/// Regularity metadata of a graphon, as consumed by the bound pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphonMeta {
    pub lip_w: f64,
    pub sup_norm: f64,
    pub d_min: f64,
    pub dim_d: f64,
    pub cover_c: f64,
}

#[derive(Clone)]
pub struct Graphon {
    pub name: String,
    kernel: KernelFn,
    pub lip_w: f64,
    pub sup_norm: f64,
    pub d_min: f64,
    pub space: MetricSpaceDesc,
}

impl fmt::Debug for Graphon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graphon")
            .field("name", &self.name)
            .field("lip_w", &self.lip_w)
            .field("sup_norm", &self.sup_norm)
            .field("d_min", &self.d_min)
            .finish()
    }
}

impl Graphon {
    pub fn new(
        name: impl Into<String>,
        kernel: impl Fn(Point, Point) -> f64 + Send + Sync + 'static,
        lip_w: f64,
        sup_norm: f64,
        d_min: f64,
        space: MetricSpaceDesc,
    ) -> Self {
        Self { name: name.into(), kernel: Arc::new(kernel), lip_w, sup_norm, d_min, space }
    }

    /// `W ≡ c` on the unit interval.
    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant({c})"), move |_, _| c, 0.0, c, c, make_unit_interval_space())
    }

    #[inline]
    pub fn eval(&self, x: Point, y: Point) -> f64 {
        (self.kernel)(x, y)
    }

    pub fn meta(&self) -> GraphonMeta {
        GraphonMeta {
            lip_w: self.lip_w,
            sup_norm: self.sup_norm,
            d_min: self.d_min,
            dim_d: self.space.dim_d,
            cover_c: self.space.cover_c,
        }
    }

    /// Admissibility probe: random pairs for range and Lipschitz continuity in
    /// both arguments, random points for the minimal degree, and the diagonal
    /// condition `W(x,x) = 1`, which is reported but never enforced.
    pub fn probe_admissibility<R: Rng + ?Sized>(&self, probes: usize, rng: &mut R) -> AdmissibilityReport {
        let mut rep = AdmissibilityReport {
            max_value: f64::NEG_INFINITY,
            min_value: f64::INFINITY,
            max_lipschitz_ratio: 0.0,
            min_degree: f64::INFINITY,
            diagonal_one: true,
        };
        for _ in 0..probes {
            let (x, xp, y) = (self.space.sample(rng), self.space.sample(rng), self.space.sample(rng));
            let w = self.eval(x, y);
            rep.max_value = rep.max_value.max(w);
            rep.min_value = rep.min_value.min(w);
            let dx = self.space.metric(x, xp);
            if dx > 1e-9 {
                let r1 = (self.eval(x, y) - self.eval(xp, y)).abs() / dx;
                let r2 = (self.eval(y, x) - self.eval(y, xp)).abs() / dx;
                rep.max_lipschitz_ratio = rep.max_lipschitz_ratio.max(r1).max(r2);
            }
            if (self.eval(x, x) - 1.0).abs() > 1e-12 {
                rep.diagonal_one = false;
            }
        }
        for _ in 0..probes.min(256) {
            let x = self.space.sample(rng);
            let d = graphon_degree(self, x, 1024).expect("resolution is valid").value;
            rep.min_degree = rep.min_degree.min(d);
        }
        rep
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityReport {
    pub max_value: f64,
    pub min_value: f64,
    pub max_lipschitz_ratio: f64,
    pub min_degree: f64,
    /// Advisory only: the shipped ER graphon violates it.
    pub diagonal_one: bool,
}

impl AdmissibilityReport {
    /// True when the probes are consistent with the declared metadata.
    pub fn consistent_with(&self, g: &Graphon, quad_tol: f64) -> bool {
        const SLACK: f64 = 1e-12;
        self.min_value >= -SLACK
            && self.max_value <= 1.0 + SLACK
            && self.max_value <= g.sup_norm + SLACK
            && self.max_lipschitz_ratio <= g.lip_w + SLACK
            && self.min_degree >= g.d_min - quad_tol
    }
}

#[derive(Clone)]
pub struct MetricSignal {
    pub name: String,
    func: SignalFn,
    pub feature_dim: usize,
    pub lip_f: f64,
    pub sup_norm: f64,
}

impl fmt::Debug for MetricSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricSignal")
            .field("name", &self.name)
            .field("feature_dim", &self.feature_dim)
            .field("lip_f", &self.lip_f)
            .field("sup_norm", &self.sup_norm)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalMeta {
    pub lip_f: f64,
    pub sup_norm: f64,
}

impl MetricSignal {
    pub fn new(
        name: impl Into<String>,
        feature_dim: usize,
        func: impl Fn(Point, &mut [f64]) + Send + Sync + 'static,
        lip_f: f64,
        sup_norm: f64,
    ) -> Self {
        Self { name: name.into(), func: Arc::new(func), feature_dim, lip_f, sup_norm }
    }

    /// Scalar signal `x ↦ c`.
    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant({c})"), 1, move |_, out| out[0] = c, 0.0, c.abs())
    }

    #[inline]
    pub fn eval_into(&self, x: Point, out: &mut [f64]) {
        (self.func)(x, out)
    }

    pub fn eval(&self, x: Point) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim];
        self.eval_into(x, &mut out);
        out
    }

    pub fn meta(&self) -> SignalMeta {
        SignalMeta { lip_f: self.lip_f, sup_norm: self.sup_norm }
    }
}

/// Graphon/signal families addressable by name from experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphonFamily {
    /// Erdős–Rényi, `W ≡ 0.4`.
    #[serde(rename = "er04")]
    Er04,
    /// Smooth two-block model `sin(2πx)sin(2πy)/(2π) + 0.25`.
    #[serde(rename = "sbm_smooth")]
    SbmSmooth,
    /// `W ≡ 1`.
    #[serde(rename = "complete")]
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalFamily {
    /// `f ≡ 0.5`
    #[serde(rename = "const_half")]
    ConstHalf,
    /// `f(x) = sin(x)/2`
    #[serde(rename = "half_sin")]
    HalfSin,
}

// Metadata shared by both experiment classes.
const PAPER_W_SUP: f64 = 0.41;
const PAPER_LIP_W: f64 = 0.5;
const PAPER_F_SUP: f64 = 0.5;
const PAPER_LIP_F: f64 = 0.5;
const PAPER_D_MIN: f64 = 0.25;

impl GraphonFamily {
    pub fn build(self) -> Graphon {
        let space = make_unit_interval_space();
        match self {
            GraphonFamily::Er04 => Graphon::new("er04", |_, _| 0.4, PAPER_LIP_W, PAPER_W_SUP, PAPER_D_MIN, space),
            GraphonFamily::SbmSmooth => Graphon::new(
                "sbm_smooth",
                |x, y| {
                    use std::f64::consts::TAU;
                    (TAU * x).sin() * (TAU * y).sin() / TAU + 0.25
                },
                PAPER_LIP_W,
                PAPER_W_SUP,
                PAPER_D_MIN,
                space,
            ),
            GraphonFamily::Complete => Graphon::new("complete", |_, _| 1.0, 0.0, 1.0, 1.0, space),
        }
    }

    /// The signal the family is paired with in the two-class benchmark.
    pub fn default_signal(self) -> SignalFamily {
        match self {
            GraphonFamily::Er04 | GraphonFamily::Complete => SignalFamily::ConstHalf,
            GraphonFamily::SbmSmooth => SignalFamily::HalfSin,
        }
    }
}

impl SignalFamily {
    pub fn build(self) -> MetricSignal {
        match self {
            SignalFamily::ConstHalf => {
                MetricSignal::new("const_half", 1, |_, out| out[0] = 0.5, PAPER_LIP_F, PAPER_F_SUP)
            }
            SignalFamily::HalfSin => {
                MetricSignal::new("half_sin", 1, |x, out| out[0] = x.sin() / 2.0, PAPER_LIP_F, PAPER_F_SUP)
            }
        }
    }
}

/// The two classes of the benchmark: `(W₁ ≡ 0.4, f₁ ≡ 0.5)` and
/// `(W₂ smooth SBM, f₂ = sin/2)`, both carrying the shared metadata
/// `‖W‖∞ = 0.41, L_W = 0.5, ‖f‖∞ = 0.5, L_f = 0.5, d_min = 0.25`.
///
/// Sparsity is not baked in; it is applied by the sampler.
pub fn make_paper_graphons() -> [(Graphon, MetricSignal); 2] {
    [GraphonFamily::Er04, GraphonFamily::SbmSmooth].map(|g| (g.build(), g.default_signal().build()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Zero,
    /// `V ≡ c`, `g ≡ c'` with `c, c'` uniform on `[-ε, ε]`.
    ConstantOffset,
    /// Gaussian bump of the given width at a uniformly drawn center, with
    /// amplitudes uniform on `[-ε, ε]`.
    Bump { width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub epsilon: f64,
    #[serde(flatten)]
    pub kind: NoiseKind,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::zero()
    }
}

/// One draw `(V, g)` from the noise measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseDraw {
    Zero,
    Constant { v: f64, g: f64 },
    Bump { v: f64, g: f64, cx: f64, cy: f64, width: f64 },
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self { epsilon: 0.0, kind: NoiseKind::Zero }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(invalid(format!("noise epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if let NoiseKind::Bump { width } = self.kind {
            if !(width > 0.0) {
                return Err(invalid("bump width must be positive"));
            }
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseDraw {
        let eps = self.epsilon;
        let amp = |rng: &mut R| if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 };
        match self.kind {
            NoiseKind::Zero => NoiseDraw::Zero,
            NoiseKind::ConstantOffset => {
                let v = amp(rng);
                let g = amp(rng);
                NoiseDraw::Constant { v, g }
            }
            NoiseKind::Bump { width } => {
                let v = amp(rng);
                let g = amp(rng);
                NoiseDraw::Bump { v, g, cx: rng.random(), cy: rng.random(), width }
            }
        }
    }
}

impl NoiseDraw {
    #[inline]
    pub fn kernel(&self, x: Point, y: Point) -> f64 {
        match *self {
            NoiseDraw::Zero => 0.0,
            NoiseDraw::Constant { v, .. } => v,
            NoiseDraw::Bump { v, cx, cy, width, .. } => {
                v * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * width * width)).exp()
            }
        }
    }

    #[inline]
    pub fn signal(&self, x: Point) -> f64 {
        match *self {
            NoiseDraw::Zero => 0.0,
            NoiseDraw::Constant { g, .. } => g,
            NoiseDraw::Bump { g, cx, width, .. } => g * (-(x - cx).powi(2) / (2.0 * width * width)).exp(),
        }
    }
}

/// Edge probability `clamp(scale * (w + v), 0, 1)`.
#[inline]
pub fn edge_probability(w: f64, v: f64, scale: f64) -> f64 {
    (scale * (w + v)).clamp(0.0, 1.0)
}

/// Law of the node count `N`. All variants have finite support so
/// expectations over `N` are exact sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeCountDist {
    Fixed { n: usize },
    Uniform { min: usize, max: usize },
    /// `P(N = n) ∝ 1/n` on `[min, max]`.
    LogUniform { min: usize, max: usize },
}

impl Default for NodeCountDist {
    fn default() -> Self {
        NodeCountDist::Fixed { n: 50 }
    }
}

impl NodeCountDist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NodeCountDist::Fixed { n } if n >= 1 => Ok(()),
            NodeCountDist::Uniform { min, max } | NodeCountDist::LogUniform { min, max } if min >= 1 && min <= max => {
                Ok(())
            }
            _ => Err(invalid(format!("invalid node-count distribution {self:?}"))),
        }
    }

    pub fn support(&self) -> Vec<(usize, f64)> {
        match *self {
            NodeCountDist::Fixed { n } => vec![(n, 1.0)],
            NodeCountDist::Uniform { min, max } => {
                let k = (max - min + 1) as f64;
                (min..=max).map(|n| (n, 1.0 / k)).collect()
            }
            NodeCountDist::LogUniform { min, max } => {
                let z: f64 = (min..=max).map(|n| 1.0 / n as f64).sum();
                (min..=max).map(|n| (n, 1.0 / (n as f64 * z))).collect()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            NodeCountDist::Fixed { n } => n,
            NodeCountDist::Uniform { min, max } => rng.random_range(min..=max),
            NodeCountDist::LogUniform { .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let support = self.support();
                for &(n, pr) in &support {
                    acc += pr;
                    if u < acc {
                        return n;
                    }
                }
                support.last().map(|s| s.0).unwrap_or(1)
            }
        }
    }

    /// `E[g(N)]`, exact over the finite support.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.support().into_iter().map(|(n, pr)| pr * g(n as f64)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ClassModel {
    pub graphon: Graphon,
    pub signal: MetricSignal,
    pub prob: f64,
}

#[derive(Debug, Clone)]
pub struct MixtureOfGraphons {
    pub classes: Vec<ClassModel>,
    pub size_dist: NodeCountDist,
    pub alpha: f64,
    pub noise: NoiseModel,
}

impl MixtureOfGraphons {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(invalid("mixture has no classes"));
        }
        let total: f64 = self.classes.iter().map(|c| c.prob).sum();
        if (total - 1.0).abs() > 1e-12 || self.classes.iter().any(|c| !(c.prob >= 0.0)) {
            return Err(invalid(format!("class probabilities must be >= 0 and sum to 1 (sum = {total})")));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("sparsity alpha must be finite and >= 0, got {}", self.alpha)));
        }
        let dim = self.classes[0].signal.feature_dim;
        if self.classes.iter().any(|c| c.signal.feature_dim != dim) {
            return Err(invalid("all class signals must share a feature dimension"));
        }
        self.size_dist.validate()?;
        self.noise.validate()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Largest covering parameters over the class spaces.
    pub fn max_covering(&self) -> (f64, f64) {
        self.classes.iter().fold((0.0f64, 0.0f64), |(d, c), m| (d.max(m.graphon.space.dim_d), c.max(m.graphon.space.cover_c)))
    }
}

/// The two-class benchmark mixture with balanced classes and `N ≡ n`.
pub fn paper_mixture(alpha: f64, n: usize) -> MixtureOfGraphons {
    let classes = make_paper_graphons()
        .into_iter()
        .map(|(graphon, signal)| ClassModel { graphon, signal, prob: 0.5 })
        .collect();
    MixtureOfGraphons { classes, size_dist: NodeCountDist::Fixed { n }, alpha, noise: NoiseModel::zero() }
}

/// Softmax cross-entropy on logits, with the regularity metadata used by the
/// generalization bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    /// Lipschitz constant with respect to the sup norm of the loss input.
    pub lip: f64,
    /// Uniform bound on the loss values; evaluations are clipped to it.
    pub sup_norm: f64,
}

impl LossSpec {
    /// Loss of a linear classifier `z ↦ Qz + b` followed by softmax
    /// cross-entropy, on inputs with `‖z‖∞ <= input_bound`; `q_rows[k]` is
    /// row `k` of `Q`.
    ///
    /// The loss for label `y` is `LSE(z_k − z_y)_k`, a function of the logit
    /// differences only, and log-sum-exp is 1-Lipschitz in sup norm. Hence
    /// the Lipschitz constant is `max_{k≠y} ‖q_k − q_y‖₁`. With
    /// `M_{ky} = ‖q_k − q_y‖₁ input_bound + |b_k − b_y|` the loss is at most
    /// `ln(1 + Σ_{k≠y} exp(M_{ky}))`.
    pub fn softmax_ce_for_classifier(q_rows: &[Vec<f64>], bias: &[f64], input_bound: f64) -> Self {
        let k = q_rows.len();
        let diff = |a: usize, b: usize| q_rows[a].iter().zip(&q_rows[b]).map(|(x, y)| (x - y).abs()).sum::<f64>();
        let mut lip = 0.0f64;
        let mut sup = 0.0f64;
        for y in 0..k {
            let xs: Vec<f64> = (0..k)
                .filter(|&o| o != y)
                .map(|o| {
                    let d = diff(o, y);
                    lip = lip.max(d);
                    d * input_bound + (bias[o] - bias[y]).abs()
                })
                .collect();
            // ln(1 + Σ exp(x)) as a log-sum-exp so large logit bounds do not overflow
            let top = xs.iter().cloned().fold(0.0, f64::max);
            sup = sup.max(top + ((-top).exp() + xs.iter().map(|x| (x - top).exp()).sum::<f64>()).ln());
        }
        Self { lip, sup_norm: sup }
    }

    /// Cross-entropy of `logits` for the 0-based class `label`, clipped to `sup_norm`.
    pub fn eval(&self, logits: &[f64], label: usize) -> f64 {
        softmax_cross_entropy(logits, label).min(self.sup_norm)
    }
}

pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Midpoint-rule estimate of a graphon degree `d_W(x) = ∫ W(x,y) dμ(y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeEstimate {
    pub value: f64,
    /// Richardson estimate `|I_n - I_{n/2}| / 3` of the midpoint-rule error.
    pub error: f64,
}

fn midpoint(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = 1.0 / n as f64;
    (0..n).map(|k| f((k as f64 + 0.5) * h)).sum::<f64>() * h
}

pub fn graphon_degree(w: &Graphon, x: Point, resolution: usize) -> Result<DegreeEstimate> {
    if resolution < 2 {
        return Err(invalid(format!("degree quadrature needs resolution >= 2, got {resolution}")));
    }
    let fine = midpoint(resolution, |y| w.eval(x, y));
    let coarse = midpoint(resolution / 2, |y| w.eval(x, y));
    Ok(DegreeEstimate { value: fine, error: (fine - coarse).abs() / 3.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Role};

    #[test]
    fn unit_interval_basics() {
        let s = make_unit_interval_space();
        assert!((s.metric(0.2, 0.7) - 0.5).abs() < 1e-15);
        assert_eq!((s.dim_d, s.cover_c, s.diameter), (1.0, 1.0, 1.0));
        let mut rng = stream(1, 0, Role::Probe);
        let pts: Vec<f64> = (0..2000).map(|_| s.sample(&mut rng)).collect();
        for r in [0.5, 0.25, 0.125] {
            assert!(s.greedy_net_size(&pts, r) as f64 <= s.covering_bound(r), "r = {r}");
        }
        assert!(s.greedy_net_size(&pts, 0.25) <= 4);
    }

    #[test]
    fn unit_interval_mean_is_half() {
        // 3σ for the mean of 10⁶ uniforms is 3/sqrt(12e6) ≈ 8.7e-4.
        let s = make_unit_interval_space();
        let mut rng = stream(2, 0, Role::Probe);
        let mean = (0..1_000_000).map(|_| s.sample(&mut rng)).sum::<f64>() / 1e6;
        assert!((0.497..=0.503).contains(&mean), "{mean}");
    }

    #[test]
    fn metric_is_symmetric_and_triangular() {
        let s = make_unit_interval_space();
        let mut rng = stream(3, 0, Role::Probe);
        for _ in 0..10_000 {
            let (a, b, c) = (s.sample(&mut rng), s.sample(&mut rng), s.sample(&mut rng));
            assert_eq!(s.metric(a, b), s.metric(b, a));
            assert!(s.metric(a, c) <= s.metric(a, b) + s.metric(b, c) + 1e-15);
        }
    }

    #[test]
    fn paper_graphon_values_and_metadata() {
        let [(w1, f1), (w2, f2)] = make_paper_graphons();
        assert_eq!(w1.eval(0.3, 0.9), 0.4);
        let expected = 1.0 / std::f64::consts::TAU + 0.25;
        assert!((w2.eval(0.25, 0.25) - expected).abs() < 1e-15);
        assert!((w2.eval(0.25, 0.25) - 0.409155).abs() < 1e-6);
        assert_eq!((w2.sup_norm, w2.lip_w, w2.d_min), (0.41, 0.5, 0.25));
        assert_eq!((f2.sup_norm, f2.lip_f), (0.5, 0.5));
        assert_eq!(f1.eval(0.123), vec![0.5]);
        assert!((f2.eval(1.0)[0] - 1f64.sin() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn degree_quadrature() {
        let [(w1, _), (w2, _)] = make_paper_graphons();
        assert!((graphon_degree(&w1, 0.77, 1024).unwrap().value - 0.4).abs() < 1e-12);
        for x in [0.1, 0.33, 0.9] {
            assert!((graphon_degree(&w2, x, 4096).unwrap().value - 0.25).abs() < 1e-8);
        }
        let prod = Graphon::new("xy", |x, y| x * y, 1.0, 1.0, 0.0, make_unit_interval_space());
        assert!((graphon_degree(&prod, 0.3, 4096).unwrap().value - 0.15).abs() < 1e-8);
        assert!(graphon_degree(&w1, 0.5, 1).is_err());
    }

    #[test]
    fn degree_is_linear_in_the_kernel() {
        let s = make_unit_interval_space();
        let a = Graphon::new("a", |x, y| 0.5 * (x * y).sqrt(), 1.0, 0.5, 0.0, s);
        let b = Graphon::new("b", |x, y| 0.25 + 0.2 * (3.0 * x + y).cos(), 1.0, 0.45, 0.0, s);
        let (ca, cb) = (0.7, 1.1);
        let mix = Graphon::new("mix", move |x, y| ca * a.eval(x, y) + cb * b.eval(x, y), 2.0, 1.0, 0.0, s);
        let a2 = Graphon::new("a", |x, y| 0.5 * (x * y).sqrt(), 1.0, 0.5, 0.0, s);
        let b2 = Graphon::new("b", |x, y| 0.25 + 0.2 * (3.0 * x + y).cos(), 1.0, 0.45, 0.0, s);
        for x in [0.05, 0.5, 0.95] {
            let lhs = graphon_degree(&mix, x, 2048).unwrap().value;
            let rhs = ca * graphon_degree(&a2, x, 2048).unwrap().value + cb * graphon_degree(&b2, x, 2048).unwrap().value;
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn admissibility_probes() {
        let mut rng = stream(4, 0, Role::Probe);
        let [(w1, _), (w2, _)] = make_paper_graphons();
        let r1 = w1.probe_admissibility(10_000, &mut rng);
        assert!(r1.consistent_with(&w1, 1e-9));
        assert!(!r1.diagonal_one, "W1 ≡ 0.4 violates W(x,x) = 1");
        // The shared metadata understates the smooth block model's true
        // Lipschitz constant (sup |cos(2πx) sin(2πy)| = 1); everything else holds.
        let r2 = w2.probe_admissibility(10_000, &mut rng);
        assert!(r2.max_lipschitz_ratio > 0.9 && r2.max_lipschitz_ratio <= 1.0 + 1e-9);
        assert!(r2.max_value <= w2.sup_norm && r2.min_value >= 0.0);
        assert!(r2.min_degree >= w2.d_min - 1e-9);
        let corrected = Graphon { lip_w: 1.0, ..w2.clone() };
        assert!(r2.consistent_with(&corrected, 1e-9));
    }

    #[test]
    fn noise_draws_stay_in_the_ball() {
        let mut rng = stream(5, 0, Role::Probe);
        for kind in [NoiseKind::Zero, NoiseKind::ConstantOffset, NoiseKind::Bump { width: 0.2 }] {
            let model = NoiseModel { epsilon: 0.05, kind };
            for _ in 0..200 {
                let d = model.draw(&mut rng);
                for _ in 0..50 {
                    let (x, y): (f64, f64) = (rng.random(), rng.random());
                    assert!(d.kernel(x, y).abs() <= 0.05 && d.signal(x).abs() <= 0.05);
                    let w = 0.98 * rng.random::<f64>();
                    let clamped = edge_probability(w, d.kernel(x, y), 1.0);
                    assert!((0.0..=1.0).contains(&clamped));
                    assert!((clamped - w).abs() <= 0.05 + 1e-15);
                }
            }
        }
    }

    #[test]
    fn mixture_validation() {
        let mut mix = paper_mixture(0.0, 50);
        assert!(mix.validate().is_ok());
        mix.classes[0].prob = 0.6;
        assert!(mix.validate().is_err());
    }

    #[test]
    fn node_count_expectations() {
        let d = NodeCountDist::Uniform { min: 2, max: 4 };
        assert!((d.expect(|n| n) - 3.0).abs() < 1e-15);
        let l = NodeCountDist::LogUniform { min: 1, max: 3 };
        let s: f64 = l.support().iter().map(|p| p.1).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn loss_spec_bounds_hold() {
        let q = vec![vec![0.4, -0.2], vec![-0.1, 0.2], vec![0.3, 0.3]];
        let b = [0.1, -0.2, 0.0];
        let loss = LossSpec::softmax_ce_for_classifier(&q, &b, 2.0);
        assert!((loss.lip - 0.9).abs() < 1e-15);
        let logits = |z: &[f64; 2]| -> Vec<f64> { (0..3).map(|k| q[k][0] * z[0] + q[k][1] * z[1] + b[k]).collect() };
        let mut rng = stream(6, 0, Role::Probe);
        for _ in 0..2000 {
            let z: [f64; 2] = [rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0)];
            let z2: [f64; 2] = [(z[0] + rng.random_range(-0.1..0.1)).clamp(-2.0, 2.0), (z[1] + rng.random_range(-0.1..0.1)).clamp(-2.0, 2.0)];
            let dz = (z[0] - z2[0]).abs().max((z[1] - z2[1]).abs());
            for y in 0..3 {
                let (a, c) = (softmax_cross_entropy(&logits(&z), y), softmax_cross_entropy(&logits(&z2), y));
                assert!(a <= loss.sup_norm + 1e-12);
                assert!((a - c).abs() <= loss.lip * dz + 1e-12);
            }
        }
        // the sup bound is attained at a corner of the input box
        let worst = [[2.0, -2.0], [-2.0, 2.0], [2.0, 2.0], [-2.0, -2.0]]
            .iter()
            .flat_map(|z| (0..3).map(move |y| (z, y)))
            .map(|(z, y)| softmax_cross_entropy(&logits(z), y))
            .fold(0.0, f64::max);
        assert!(worst <= loss.sup_norm && loss.sup_norm < worst + 1.0);
    }

    #[test]
    fn loss_sup_norm_stays_finite_for_huge_logit_bounds() {
        let loss = LossSpec::softmax_ce_for_classifier(&[vec![1.0], vec![-2.0]], &[0.0, 0.0], 1e6);
        assert!((loss.sup_norm - 3e6).abs() <= 1e-6 * 3e6);
        let small = LossSpec::softmax_ce_for_classifier(&[vec![0.0], vec![0.0]], &[0.0, 0.0], 1.0);
        assert!((small.sup_norm - 2f64.ln()).abs() < 1e-15);
    }
}
