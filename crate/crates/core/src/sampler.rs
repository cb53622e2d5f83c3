//! Random graph-signal sampling from (noisy, sparse) graphon models and
//! labelled dataset generation.
//!
//! A graph-signal is drawn by taking one noise pair `(V, g)`, latent points
//! `X_1..X_N` i.i.d. from the space, and then every ordered pair `(i, j)`,
//! the diagonal included, independently as
//! `a_ij ~ Ber(clamp(N^{-α} (W + V)(X_i, X_j)))`.
//! Node features are `(f + g)(X_i)`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Role};
use crate::space::{edge_probability, graphon_degree, Graphon, MetricSignal, MixtureOfGraphons, NoiseDraw, NoiseModel};

/// Dense directed adjacency stored as a row-major bitset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl Adjacency {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64);
        Self { n, words, bits: vec![0; n * words] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut a = Self::new(n);
        for i in 0..n {
            for j in 0..n {
                if f(i, j) {
                    a.set(i, j, true);
                }
            }
        }
        a
    }

    pub fn complete(n: usize) -> Self {
        Self::from_fn(n, |_, _| true)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| i == j)
    }

    /// Builds from a dense 0/1 matrix; any nonzero entry is an edge.
    pub fn from_dense(m: &Array2<f64>) -> Result<Self> {
        let (r, c) = m.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!("adjacency must be square, got {r}x{c}")));
        }
        Ok(Self::from_fn(r, |i, j| m[[i, j]] != 0.0))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        let w = &mut self.bits[i * self.words + j / 64];
        if v {
            *w |= 1 << (j % 64);
        } else {
            *w &= !(1 << (j % 64));
        }
    }

    #[inline]
    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    /// Out-neighbours of `i` in increasing order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row_words(i).iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    None
                } else {
                    let b = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    Some(w * 64 + b)
                }
            })
        })
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.row_words(i).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Normalized degree `d_A(X_i) = (1/N) Σ_j a_ij`.
    pub fn normalized_degree(&self, i: usize) -> f64 {
        self.out_degree(i) as f64 / self.n as f64
    }

    pub fn to_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n, self.n), |(i, j)| if self.get(i, j) { 1.0 } else { 0.0 })
    }

    /// Copies the upper triangle (diagonal included) onto the lower one.
    pub fn symmetrize_upper(&mut self) {
        for i in 0..self.n {
            for j in 0..i {
                let v = self.get(j, i);
                self.set(i, j, v);
            }
        }
    }

    /// Relabels nodes: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::from_fn(self.n, |i, j| self.get(perm[i], perm[j]))
    }

    fn packed_bytes(&self) -> Vec<u8> {
        let total = self.n * self.n;
        let mut out = vec![0u8; total.div_ceil(8)];
        for i in 0..self.n {
            for j in self.neighbors(i) {
                let k = i * self.n + j;
                out[k / 8] |= 1 << (k % 8);
            }
        }
        out
    }

    fn from_packed(n: usize, bytes: &[u8]) -> Self {
        Self::from_fn(n, |i, j| {
            let k = i * n + j;
            bytes[k / 8] >> (k % 8) & 1 == 1
        })
    }
}

/// A sampled graph with node features and (optionally) the latent positions
/// it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSignal {
    pub adjacency: Adjacency,
    /// `N × F` node features.
    pub features: Array2<f64>,
    pub latents: Option<Vec<f64>>,
    /// 1-based class label.
    pub label: Option<usize>,
    /// Sparsity exponent the graph was drawn with.
    pub alpha: f64,
}

impl GraphSignal {
    pub fn new(adjacency: Adjacency, features: Array2<f64>, latents: Option<Vec<f64>>) -> Result<Self> {
        let n = adjacency.n();
        if features.nrows() != n {
            return Err(Error::DimensionMismatch(format!("{} feature rows for {n} nodes", features.nrows())));
        }
        if latents.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::DimensionMismatch("latent count differs from node count".into()));
        }
        Ok(Self { adjacency, features, latents, label: None, alpha: 0.0 })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn latents(&self) -> Result<&[f64]> {
        self.latents.as_deref().ok_or(Error::MissingLatents)
    }

    pub fn edge_density(&self) -> f64 {
        let n = self.n_nodes() as f64;
        self.adjacency.edge_count() as f64 / (n * n)
    }

    /// Relabels nodes so that node `i` of the result is node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let features = Array2::from_shape_fn(self.features.dim(), |(i, k)| self.features[[perm[i], k]]);
        Self {
            adjacency: self.adjacency.permuted(perm),
            features,
            latents: self.latents.as_ref().map(|l| perm.iter().map(|&p| l[p]).collect()),
            label: self.label,
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Copy the upper triangle onto the lower one after sampling.
    #[serde(default)]
    pub symmetrize: bool,
}

/// Draws one graph-signal from the model `{χ, W + V, f + g, α}`.
pub fn sample_rgsm<R: Rng + ?Sized>(
    w: &Graphon,
    f: &MetricSignal,
    noise: &NoiseModel,
    n: usize,
    alpha: f64,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<GraphSignal> {
    if n == 0 {
        return Err(invalid("a graph-signal needs at least one node"));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(invalid(format!("sparsity alpha must be finite and >= 0, got {alpha}")));
    }
    noise.validate()?;
    let draw = noise.draw(rng);
    let xs: Vec<f64> = (0..n).map(|_| w.space.sample(rng)).collect();
    let scale = (n as f64).powf(-alpha);
    let mut adj = Adjacency::new(n);
    let words = adj.words;
    // Row-major over ordered pairs, one uniform per pair; each bitset word is
    // assembled in a register.
    for (i, &xi) in xs.iter().enumerate() {
        let row = &mut adj.bits[i * words..(i + 1) * words];
        for (word, chunk) in row.iter_mut().zip(xs.chunks(64)) {
            let mut acc = 0u64;
            for (b, &xj) in chunk.iter().enumerate() {
                let p = edge_probability(w.eval(xi, xj), draw.kernel(xi, xj), scale);
                acc |= u64::from(rng.random::<f64>() < p) << b;
            }
            *word = acc;
        }
    }
    if opts.symmetrize {
        adj.symmetrize_upper();
    }
    let fd = f.feature_dim;
    let mut features = Array2::zeros((n, fd));
    for (i, &x) in xs.iter().enumerate() {
        let mut row = features.row_mut(i);
        let row = row.as_slice_mut().expect("rows of a standard-layout array are contiguous");
        f.eval_into(x, row);
        let g = draw.signal(x);
        if g != 0.0 {
            row.iter_mut().for_each(|v| *v += g);
        }
    }
    let mut gs = GraphSignal::new(adj, features, Some(xs))?;
    gs.alpha = alpha;
    Ok(gs)
}

/// Edge probabilities `clamp(N^{-α} (W + V)(X_i, X_j))` for fixed latents
/// and a fixed noise draw — the exact Bernoulli marginals of [`sample_rgsm`].
pub fn edge_marginals(w: &Graphon, draw: &NoiseDraw, xs: &[f64], alpha: f64) -> Array2<f64> {
    let scale = (xs.len() as f64).powf(-alpha);
    Array2::from_shape_fn((xs.len(), xs.len()), |(i, j)| {
        edge_probability(w.eval(xs[i], xs[j]), draw.kernel(xs[i], xs[j]), scale)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub train_frac: f64,
    pub symmetrize: bool,
    /// Free-form description of the generating mixture.
    pub mixture: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<GraphSignal>,
    pub split: Split,
    pub num_classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            if let Some(l) = s.label {
                counts[l - 1] += 1;
            }
        }
        counts
    }

    pub fn train(&self) -> impl Iterator<Item = &GraphSignal> {
        self.split.train.iter().map(|&i| &self.samples[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &GraphSignal> {
        self.split.test.iter().map(|&i| &self.samples[i])
    }

    pub fn strip_latents(&mut self) {
        self.samples.iter_mut().for_each(|s| s.latents = None);
    }
}

/// Size of the training part: `floor(train_frac · m)`.
pub fn train_size(m: usize, train_frac: f64) -> usize {
    // The epsilon guards against 0.9 * 10 = 8.999999... style round-off.
    ((train_frac * m as f64) + 1e-9).floor() as usize
}

/// Draws one labelled graph-signal: a class from the mixture weights, a node
/// count from the size law (unless `n` is given), then the class's model.
pub fn sample_mixture<R: Rng + ?Sized>(mix: &MixtureOfGraphons, n: Option<usize>, opts: SampleOptions, rng: &mut R) -> Result<GraphSignal> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut class = mix.classes.len() - 1;
    for (k, c) in mix.classes.iter().enumerate() {
        acc += c.prob;
        if u < acc {
            class = k;
            break;
        }
    }
    let size = mix.size_dist.sample(rng);
    let cm = &mix.classes[class];
    let mut gs = sample_rgsm(&cm.graphon, &cm.signal, &mix.noise, n.unwrap_or(size), mix.alpha, opts, rng)?;
    gs.label = Some(class + 1);
    Ok(gs)
}

/// Draws `m` labelled graph-signals from the mixture. Sample `i` uses its own
/// RNG stream, so the result does not depend on how work is scheduled.
pub fn generate_dataset(
    mix: &MixtureOfGraphons,
    m: usize,
    train_frac: f64,
    master_seed: u64,
    opts: SampleOptions,
) -> Result<Dataset> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(invalid(format!("train_frac must lie in (0, 1), got {train_frac}")));
    }
    mix.validate()?;
    if m < mix.num_classes() {
        return Err(invalid(format!("need at least one sample per class: m = {m} < {}", mix.num_classes())));
    }
    let samples = (0..m)
        .into_par_iter()
        .map(|i| sample_mixture(mix, None, opts, &mut stream(master_seed, i as u64, Role::Graph)))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut stream(master_seed, 0, Role::Split));
    let n_train = train_size(m, train_frac);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    let mixture = serde_json::json!({
        "classes": mix.classes.iter().map(|c| serde_json::json!({
            "graphon": c.graphon.name, "signal": c.signal.name, "prob": c.prob,
        })).collect::<Vec<_>>(),
        "size_dist": mix.size_dist,
        "alpha": mix.alpha,
        "noise": mix.noise,
    });
    Ok(Dataset {
        samples,
        split: Split { train, test },
        num_classes: mix.num_classes(),
        provenance: Provenance { master_seed, train_frac, symmetrize: opts.symmetrize, mixture },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub max_dev: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Hoeffding part of the degree-deviation bound: `(1/√2) √(ln(2N/p)) / √N`.
pub fn degree_hoeffding_term(n: usize, p: f64) -> f64 {
    let n = n as f64;
    (2.0 * n / p).ln().sqrt() / (2f64.sqrt() * n.sqrt())
}

/// Uniform Monte Carlo part of the degree-deviation bound:
/// `(ζ L_W (√ln Cχ + √Dχ) + (√2 ‖W‖∞ + ζ L_W) √ln(2/p)) / √N`.
pub fn degree_dudley_term(w: &Graphon, n: usize, p: f64, zeta: f64) -> f64 {
    let s = &w.space;
    let num = zeta * w.lip_w * (s.cover_c.ln().sqrt() + s.dim_d.sqrt())
        + (2f64.sqrt() * w.sup_norm + zeta * w.lip_w) * (2.0 / p).ln().sqrt();
    num / (n as f64).sqrt()
}

/// Compares `max_i |d_A(X_i) − N^{-α} d_W(X_i)|` with the high-probability
/// bound `ε + Hoeffding + N^{-α}·Dudley` (for α = 0 the plain bound).
pub fn degree_concentration_check(
    gs: &GraphSignal,
    w: &Graphon,
    p: f64,
    epsilon: f64,
    zeta: f64,
    resolution: usize,
) -> Result<DegreeReport> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("failure probability must lie in (0, 1), got {p}")));
    }
    let xs = gs.latents()?;
    let n = gs.n_nodes();
    let scale = (n as f64).powf(-gs.alpha);
    let mut max_dev: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let dw = graphon_degree(w, x, resolution)?.value;
        max_dev = max_dev.max((gs.adjacency.normalized_degree(i) - scale * dw).abs());
    }
    let rhs = scale * epsilon + degree_hoeffding_term(n, p) + scale * degree_dudley_term(w, n, p, zeta);
    Ok(DegreeReport { max_dev, rhs, holds: max_dev <= rhs })
}

const MAGIC: &[u8; 8] = b"GMLABDS1";

fn write_record<W: Write>(out: &mut W, gs: &GraphSignal, keep_latents: bool) -> Result<()> {
    let mut rec = Vec::new();
    let n = gs.n_nodes();
    rec.write_u64::<LittleEndian>(n as u64)?;
    rec.write_u32::<LittleEndian>(gs.feature_dim() as u32)?;
    let latents = gs.latents.as_ref().filter(|_| keep_latents);
    rec.write_u8(latents.is_some() as u8)?;
    rec.write_i64::<LittleEndian>(gs.label.map_or(-1, |l| l as i64))?;
    rec.write_f64::<LittleEndian>(gs.alpha)?;
    rec.extend_from_slice(&gs.adjacency.packed_bytes());
    for v in gs.features.iter() {
        rec.write_f64::<LittleEndian>(*v)?;
    }
    if let Some(xs) = latents {
        for x in xs {
            rec.write_f64::<LittleEndian>(*x)?;
        }
    }
    out.write_u64::<LittleEndian>(rec.len() as u64)?;
    out.write_all(&rec)?;
    Ok(())
}

fn read_record(rec: &[u8]) -> Result<GraphSignal> {
    let mut cur = rec;
    let n = cur.read_u64::<LittleEndian>()? as usize;
    let fd = cur.read_u32::<LittleEndian>()? as usize;
    let has_latents = cur.read_u8()? != 0;
    let label = cur.read_i64::<LittleEndian>()?;
    let alpha = cur.read_f64::<LittleEndian>()?;
    let nbytes = (n * n).div_ceil(8);
    let expected = nbytes + 8 * n * fd + if has_latents { 8 * n } else { 0 };
    if cur.len() != expected {
        return Err(Error::Format(format!("record length {} does not match header ({expected})", cur.len())));
    }
    let adjacency = Adjacency::from_packed(n, &cur[..nbytes]);
    cur = &cur[nbytes..];
    let mut feats = vec![0.0; n * fd];
    cur.read_f64_into::<LittleEndian>(&mut feats)?;
    let features = Array2::from_shape_vec((n, fd), feats).map_err(|e| Error::Format(e.to_string()))?;
    let latents = if has_latents {
        let mut xs = vec![0.0; n];
        cur.read_f64_into::<LittleEndian>(&mut xs)?;
        Some(xs)
    } else {
        None
    };
    let mut gs = GraphSignal::new(adjacency, features, latents)?;
    gs.label = (label >= 0).then_some(label as usize);
    gs.alpha = alpha;
    Ok(gs)
}

/// Writes a list of graph-signals as one binary container.
pub fn write_graphs<W: Write>(mut out: W, graphs: &[GraphSignal], keep_latents: bool) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_u64::<LittleEndian>(graphs.len() as u64)?;
    for g in graphs {
        write_record(&mut out, g, keep_latents)?;
    }
    Ok(())
}

pub fn read_graphs<R: Read>(mut input: R) -> Result<Vec<GraphSignal>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a graph-signal container (bad magic)".into()));
    }
    let count = input.read_u64::<LittleEndian>()?;
    let mut graphs = Vec::new();
    for _ in 0..count {
        let len = input.read_u64::<LittleEndian>()? as usize;
        let mut rec = vec![0u8; len];
        input.read_exact(&mut rec)?;
        graphs.push(read_record(&rec)?);
    }
    Ok(graphs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    count: usize,
    num_classes: usize,
    latents: bool,
    split: Split,
    provenance: Provenance,
}

/// Path of the JSON sidecar that accompanies a dataset container.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Persists a dataset as `path` (binary records) plus `path.json` (split and
/// provenance).
pub fn save_dataset(ds: &Dataset, path: &Path, keep_latents: bool) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_graphs(file, &ds.samples, keep_latents)?;
    let side = Sidecar {
        format: "gmlab-dataset/1".into(),
        count: ds.len(),
        num_classes: ds.num_classes,
        latents: keep_latents,
        split: ds.split.clone(),
        provenance: ds.provenance.clone(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let samples = read_graphs(std::io::BufReader::new(std::fs::File::open(path)?))?;
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if side.count != samples.len() {
        return Err(Error::Format(format!("sidecar lists {} samples, container holds {}", side.count, samples.len())));
    }
    Ok(Dataset { samples, split: side.split, num_classes: side.num_classes, provenance: side.provenance })
}
