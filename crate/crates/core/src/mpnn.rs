//! Discrete message passing networks on sampled graphs.
//!
//! A layer computes messages `u_ij = Φ(f_i, f_j)`, aggregates them over the
//! out-neighbours of `i` (mean or `1/N`-normalized sum), and updates
//! `f_i ← Ψ(f_i, m_i)`. After `T` layers the node features are mean-pooled
//! and passed through a readout `Υ`.

use std::fmt;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampler::{Adjacency, GraphSignal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    NormalizedSum,
}

impl Aggregation {
    pub fn label(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::NormalizedSum => "sum",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "sum" | "normalized_sum" => Ok(Aggregation::NormalizedSum),
            other => Err(Error::Config(format!("unknown aggregation {other:?} (expected mean or sum)"))),
        }
    }
}

pub type MessageFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type UpdateFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type ReadoutFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Message function `Φ(a, b)`.
#[derive(Clone)]
pub enum Message {
    /// `Φ(a, b) = b`: the neighbour's features are the message.
    Source,
    Custom { f: MessageFn, dim: usize },
}

/// Update function `Ψ(a, m)`.
#[derive(Clone)]
pub enum Update {
    /// `Ψ(a, m) = W1 a + W2 m`, optionally followed by a pointwise ReLU.
    Linear { w1: Array2<f64>, w2: Array2<f64>, relu: bool },
    Custom { f: UpdateFn },
}

#[derive(Clone)]
pub enum Readout {
    Identity,
    Custom { f: ReadoutFn, out_dim: usize },
}

impl fmt::Debug for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Source => write!(f, "Source"),
            Message::Custom { dim, .. } => write!(f, "Custom(dim = {dim})"),
        }
    }
}

impl fmt::Debug for Update {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Update::Linear { w1, w2, relu } => write!(f, "Linear({:?}, {:?}, relu = {relu})", w1.dim(), w2.dim()),
            Update::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl fmt::Debug for Readout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Readout::Identity => write!(f, "Identity"),
            Readout::Custom { out_dim, .. } => write!(f, "Custom(out_dim = {out_dim})"),
        }
    }
}

/// Lipschitz constants (∞-norm, max over the two inputs) and formal biases
/// `‖Φ(0,0)‖∞`, `‖Ψ(0,0)‖∞` of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMeta {
    pub lip_phi: f64,
    pub lip_psi: f64,
    pub bias_phi: f64,
    pub bias_psi: f64,
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub message: Message,
    pub update: Update,
    pub meta: LayerMeta,
    pub in_dim: usize,
    pub msg_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    /// `Φ(a,b) = b`, `Ψ(a,m) = W1 a + W2 m` with metadata derived from the weights.
    pub fn linear(w1: Array2<f64>, w2: Array2<f64>, relu: bool) -> Result<Self> {
        let (out_dim, in_dim) = w1.dim();
        if w2.dim() != (out_dim, in_dim) {
            return Err(Error::DimensionMismatch(format!("W1 is {:?} but W2 is {:?}", w1.dim(), w2.dim())));
        }
        let (lip_psi, bias_psi) = lipschitz_of_linear(&w1.view(), &w2.view())?;
        Ok(Self {
            message: Message::Source,
            update: Update::Linear { w1, w2, relu },
            meta: LayerMeta { lip_phi: 1.0, lip_psi, bias_phi: 0.0, bias_psi },
            in_dim,
            msg_dim: in_dim,
            out_dim,
        })
    }

    #[inline]
    pub fn message_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        match &self.message {
            Message::Source => out.copy_from_slice(b),
            Message::Custom { f, .. } => f(a, b, out),
        }
    }

    #[inline]
    pub fn update_into(&self, a: &[f64], m: &[f64], out: &mut [f64]) {
        match &self.update {
            Update::Linear { w1, w2, relu } => {
                for (k, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, &aj) in a.iter().enumerate() {
                        acc += w1[[k, j]] * aj;
                    }
                    for (j, &mj) in m.iter().enumerate() {
                        acc += w2[[k, j]] * mj;
                    }
                    *o = if *relu { acc.max(0.0) } else { acc };
                }
            }
            Update::Custom { f } => f(a, m, out),
        }
    }

    /// Applies the update to every row: `rows(F) × rows(M) → rows × out_dim`.
    pub fn update_rows(&self, feats: ArrayView2<f64>, msgs: ArrayView2<f64>) -> Array2<f64> {
        match &self.update {
            Update::Linear { w1, w2, relu } => {
                let mut z = feats.dot(&w1.t()) + msgs.dot(&w2.t());
                if *relu {
                    z.mapv_inplace(|v| v.max(0.0));
                }
                if z.is_standard_layout() {
                    z
                } else {
                    z.as_standard_layout().into_owned()
                }
            }
            Update::Custom { .. } => {
                let mut out = Array2::zeros((feats.nrows(), self.out_dim));
                for i in 0..feats.nrows() {
                    let a = feats.row(i).to_vec();
                    let m = msgs.row(i).to_vec();
                    let mut o = out.row_mut(i);
                    self.update_into(&a, &m, o.as_slice_mut().expect("contiguous row"));
                }
                out
            }
        }
    }
}

/// Regularity metadata of a whole architecture, as used by the bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchMeta {
    pub layers: Vec<LayerMeta>,
    pub aggregation: Aggregation,
    pub lip_k: f64,
}

#[derive(Debug, Clone)]
pub struct MpnnArch {
    pub layers: Vec<LayerSpec>,
    pub aggregation: Aggregation,
    pub readout: Readout,
    pub lip_k: f64,
}

impl MpnnArch {
    pub fn new(layers: Vec<LayerSpec>, aggregation: Aggregation, readout: Readout, lip_k: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("an MPNN needs at least one layer"));
        }
        for (t, w) in layers.windows(2).enumerate() {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} outputs {} features but layer {} expects {}",
                    t + 1,
                    w[0].out_dim,
                    t + 2,
                    w[1].in_dim
                )));
            }
        }
        Ok(Self { layers, aggregation, readout, lip_k })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn out_dim(&self) -> usize {
        match &self.readout {
            Readout::Identity => self.feature_dim(),
            Readout::Custom { out_dim, .. } => *out_dim,
        }
    }

    pub fn meta(&self) -> ArchMeta {
        ArchMeta { layers: self.layers.iter().map(|l| l.meta).collect(), aggregation: self.aggregation, lip_k: self.lip_k }
    }

    pub fn apply_readout(&self, pooled: &[f64]) -> Vec<f64> {
        match &self.readout {
            Readout::Identity => pooled.to_vec(),
            Readout::Custom { f, out_dim } => {
                let mut out = vec![0.0; *out_dim];
                f(pooled, &mut out);
                out
            }
        }
    }

    /// `T` layers of `Φ(a,b) = b`, `Ψ(a,m) = a + m` on scalar features with
    /// identity readout.
    pub fn sum_update(depth: usize, aggregation: Aggregation) -> Self {
        let eye = Array2::from_elem((1, 1), 1.0);
        let layers = (0..depth).map(|_| LayerSpec::linear(eye.clone(), eye.clone(), false).expect("1x1 shapes")).collect();
        Self::new(layers, aggregation, Readout::Identity, 1.0).expect("chained 1x1 layers")
    }
}

/// Aggregates an explicit `N × N × H` message tensor. Returns the aggregated
/// `N × H` messages and the number of isolated nodes (no out-neighbours),
/// which receive the zero message under mean aggregation.
pub fn aggregate(adj: &Adjacency, messages: &Array3<f64>, kind: Aggregation) -> Result<(Array2<f64>, usize)> {
    let n = adj.n();
    let (a, b, h) = messages.dim();
    if a != n || b != n {
        return Err(Error::DimensionMismatch(format!("message tensor is {a}x{b}x{h} for {n} nodes")));
    }
    let mut out = Array2::zeros((n, h));
    let mut isolated = 0;
    for i in 0..n {
        let mut row = out.row_mut(i);
        let mut deg = 0usize;
        for j in adj.neighbors(i) {
            row += &messages.slice(s![i, j, ..]);
            deg += 1;
        }
        match kind {
            Aggregation::Mean if deg == 0 => isolated += 1,
            Aggregation::Mean => row /= deg as f64,
            Aggregation::NormalizedSum => row /= n as f64,
        }
    }
    Ok((out, isolated))
}

/// Intermediate and final values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `features[t]` is `f^{(t)}` (`features[0]` is the input signal).
    pub features: Vec<Array2<f64>>,
    pub pooled: Vec<f64>,
    pub output: Vec<f64>,
    /// Isolated nodes met under mean aggregation, summed over layers.
    pub isolated_nodes: usize,
}

fn aggregate_layer(layer: &LayerSpec, adj: &Adjacency, h: &Array2<f64>, kind: Aggregation) -> (Array2<f64>, usize) {
    let n = adj.n();
    let h = h.as_standard_layout();
    let mut out = Array2::zeros((n, layer.msg_dim));
    let mut isolated = 0;
    let mut buf = vec![0.0; layer.msg_dim];
    for i in 0..n {
        let mut acc = vec![0.0; layer.msg_dim];
        let mut deg = 0usize;
        let hi = h.row(i);
        for j in adj.neighbors(i) {
            match &layer.message {
                Message::Source => acc.iter_mut().zip(h.row(j)).for_each(|(a, v)| *a += v),
                Message::Custom { f, .. } => {
                    f(hi.as_slice().expect("contiguous"), h.row(j).as_slice().expect("contiguous"), &mut buf);
                    acc.iter_mut().zip(&buf).for_each(|(a, v)| *a += v);
                }
            }
            deg += 1;
        }
        let denom = match kind {
            Aggregation::Mean if deg == 0 => {
                isolated += 1;
                continue;
            }
            Aggregation::Mean => deg as f64,
            Aggregation::NormalizedSum => n as f64,
        };
        out.row_mut(i).iter_mut().zip(acc).for_each(|(o, a)| *o = a / denom);
    }
    (out, isolated)
}

/// Runs the network on a graph-signal.
pub fn mpnn_forward(arch: &MpnnArch, gs: &GraphSignal) -> Result<ForwardTrace> {
    if gs.feature_dim() != arch.in_dim() {
        return Err(Error::DimensionMismatch(format!(
            "graph carries {} features but the network expects {}",
            gs.feature_dim(),
            arch.in_dim()
        )));
    }
    let mut features = vec![gs.features.as_standard_layout().into_owned()];
    let mut isolated_nodes = 0;
    for layer in &arch.layers {
        let h = features.last().expect("nonempty");
        let (m, iso) = aggregate_layer(layer, &gs.adjacency, h, arch.aggregation);
        isolated_nodes += iso;
        let next = layer.update_rows(h.view(), m.view());
        features.push(next);
    }
    let last = features.last().expect("nonempty");
    let pooled = last.mean_axis(Axis(0)).expect("at least one node").to_vec();
    let output = arch.apply_readout(&pooled);
    Ok(ForwardTrace { features, pooled, output, isolated_nodes })
}

/// `(L_Ψ, ‖Ψ(0,0)‖∞)` for `Ψ(f, m) = W1 f + W2 m`: the maximum absolute row
/// sum of `[W1 | W2]`, which is the exact operator norm when the input pair
/// is measured by the larger of the two ∞-norms; the bias is zero.
pub fn lipschitz_of_linear(w1: &ArrayView2<f64>, w2: &ArrayView2<f64>) -> Result<(f64, f64)> {
    if w1.nrows() != w2.nrows() {
        return Err(Error::DimensionMismatch(format!("W1 has {} rows but W2 has {}", w1.nrows(), w2.nrows())));
    }
    let lip = (0..w1.nrows())
        .map(|k| w1.row(k).iter().map(|v| v.abs()).sum::<f64>() + w2.row(k).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok((lip, 0.0))
}

/// `(A′, A″)` with `‖f^{(T)}‖∞ ≤ A′ + A″ ‖f‖∞` for the discrete network:
/// `A′ = Σ_l (L_Ψl ‖Φl(0,0)‖ + ‖Ψl(0,0)‖) Π_{q>l} L_Ψq max(1, L_Φq)` and
/// `A″ = Π_l L_Ψl max(1, L_Φl)`.
pub fn compute_deterministic_bound(layers: &[LayerMeta]) -> (f64, f64) {
    let k: Vec<f64> = layers.iter().map(|l| l.lip_psi * l.lip_phi.max(1.0)).collect();
    let a_prime = layers
        .iter()
        .enumerate()
        .map(|(l, m)| (m.lip_psi * m.bias_phi + m.bias_psi) * k[l + 1..].iter().product::<f64>())
        .sum();
    (a_prime, k.iter().product())
}

/// Weights of the linear GraphSage network plus its final linear classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSageWeights {
    pub layers: Vec<LinearLayer>,
    pub classifier: Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    #[serde(rename = "W1")]
    pub w1: Array2<f64>,
    #[serde(rename = "W2")]
    pub w2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    #[serde(rename = "Q")]
    pub q: Array2<f64>,
    pub bias: Array1<f64>,
}

/// The default GraphSage configuration: scalar inputs, 128 hidden channels, 2 classes.
pub const GRAPHSAGE_WIDTH: usize = 128;

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let b = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-b..=b))
}

impl GraphSageWeights {
    /// Uniform `(-1/√fan_in, 1/√fan_in)` initialization.
    pub fn init<R: Rng + ?Sized>(depth: usize, in_dim: usize, width: usize, classes: usize, rng: &mut R) -> Result<Self> {
        if depth == 0 || in_dim == 0 || width == 0 || classes == 0 {
            return Err(invalid("GraphSage dimensions must be positive"));
        }
        let mut layers = Vec::with_capacity(depth);
        let mut fan_in = in_dim;
        for _ in 0..depth {
            let w1 = uniform_matrix(width, fan_in, fan_in, rng);
            let w2 = uniform_matrix(width, fan_in, fan_in, rng);
            layers.push(LinearLayer { w1, w2 });
            fan_in = width;
        }
        let q = uniform_matrix(classes, width, width, rng);
        let bias = uniform_matrix(1, classes, width, rng).row(0).to_owned();
        Ok(Self { layers, classifier: Classifier { q, bias } })
    }

    pub fn zeros(depth: usize, in_dim: usize, width: usize, classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = in_dim;
        for _ in 0..depth {
            layers.push(LinearLayer { w1: Array2::zeros((width, fan_in)), w2: Array2::zeros((width, fan_in)) });
            fan_in = width;
        }
        Self { layers, classifier: Classifier { q: Array2::zeros((classes, width)), bias: Array1::zeros(classes) } }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::DimensionMismatch("no layers".into()));
        }
        let mut fan_in = self.layers[0].w1.ncols();
        for (t, l) in self.layers.iter().enumerate() {
            if l.w1.ncols() != fan_in || l.w1.dim() != l.w2.dim() {
                return Err(Error::DimensionMismatch(format!("layer {} shapes do not chain", t + 1)));
            }
            fan_in = l.w1.nrows();
        }
        if self.classifier.q.ncols() != fan_in || self.classifier.q.nrows() != self.classifier.bias.len() {
            return Err(Error::DimensionMismatch("classifier shape does not match the last layer".into()));
        }
        Ok(())
    }

    /// The network part (without the classifier), identity readout, `K = 1`.
    pub fn arch(&self, aggregation: Aggregation, relu: bool) -> Result<MpnnArch> {
        self.validate()?;
        let layers = self
            .layers
            .iter()
            .map(|l| LayerSpec::linear(l.w1.clone(), l.w2.clone(), relu))
            .collect::<Result<Vec<_>>>()?;
        MpnnArch::new(layers, aggregation, Readout::Identity, 1.0)
    }

    /// Classifier logits `Q z + b`.
    pub fn logits(&self, pooled: &[f64]) -> Vec<f64> {
        let z = Array1::from(pooled.to_vec());
        (self.classifier.q.dot(&z) + &self.classifier.bias).to_vec()
    }

    /// Rows of `Q`.
    pub fn classifier_rows(&self) -> Vec<Vec<f64>> {
        self.classifier.q.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w1.len() + l.w2.len()).sum::<usize>()
            + self.classifier.q.len()
            + self.classifier.bias.len()
    }

    /// All parameters in a fixed order: per layer `W1, W2` (row-major), then `Q`, then the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend(l.w1.iter());
            v.extend(l.w2.iter());
        }
        v.extend(self.classifier.q.iter());
        v.extend(self.classifier.bias.iter());
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w1.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
            l.w2.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
        }
        self.classifier.q.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
        self.classifier.bias.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
    }
}

/// Weight file layout: the weights plus the aggregation they were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub layers: Vec<LinearLayer>,
    pub classifier: Classifier,
    pub aggregation: Aggregation,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl WeightsFile {
    pub fn new(weights: &GraphSageWeights, aggregation: Aggregation, meta: serde_json::Value) -> Self {
        Self { layers: weights.layers.clone(), classifier: weights.classifier.clone(), aggregation, meta }
    }

    pub fn weights(&self) -> GraphSageWeights {
        GraphSageWeights { layers: self.layers.clone(), classifier: self.classifier.clone() }
    }
}

/// Builds the GraphSage-linear network of depth `T ∈ {1, 2, 3}` with scalar
/// inputs, 128 hidden channels and a 2-class classifier.
pub fn build_graphsage<R: Rng + ?Sized>(depth: usize, aggregation: Aggregation, rng: &mut R) -> Result<(MpnnArch, GraphSageWeights)> {
    if !(1..=3).contains(&depth) {
        return Err(invalid(format!("GraphSage depth must be 1, 2 or 3, got {depth}")));
    }
    let weights = GraphSageWeights::init(depth, 1, GRAPHSAGE_WIDTH, 2, rng)?;
    Ok((weights.arch(aggregation, false)?, weights))
}

/// Largest observed ratio `‖Ψ(a,m) − Ψ(a′,m′)‖∞ / max(‖a − a′‖∞, ‖m − m′‖∞)`
/// (and the same for `Φ`) over random input pairs in `[-scale, scale]`.
pub fn probe_layer_lipschitz<R: Rng + ?Sized>(layer: &LayerSpec, probes: usize, scale: f64, rng: &mut R) -> (f64, f64) {
    let draw = |n: usize, rng: &mut R| (0..n).map(|_| rng.random_range(-scale..=scale)).collect::<Vec<f64>>();
    let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let (mut phi, mut psi) = (0.0f64, 0.0f64);
    let mut o1 = vec![0.0; layer.msg_dim];
    let mut o2 = vec![0.0; layer.msg_dim];
    let mut u1 = vec![0.0; layer.out_dim];
    let mut u2 = vec![0.0; layer.out_dim];
    for _ in 0..probes {
        let (a, b, a2, b2) = (draw(layer.in_dim, rng), draw(layer.in_dim, rng), draw(layer.in_dim, rng), draw(layer.in_dim, rng));
        let din = sup(&a, &a2).max(sup(&b, &b2));
        if din == 0.0 {
            continue;
        }
        layer.message_into(&a, &b, &mut o1);
        layer.message_into(&a2, &b2, &mut o2);
        phi = phi.max(sup(&o1, &o2) / din);
        let (m, m2) = (draw(layer.msg_dim, rng), draw(layer.msg_dim, rng));
        let din = sup(&a, &a2).max(sup(&m, &m2));
        layer.update_into(&a, &m, &mut u1);
        layer.update_into(&a2, &m2, &mut u2);
        psi = psi.max(sup(&u1, &u2) / din);
    }
    (phi, psi)
}
