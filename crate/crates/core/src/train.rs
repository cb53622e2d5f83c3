//! Training of the linear GraphSage network with exact manual gradients.
//!
//! A mini-batch of graphs is processed as one stacked node matrix so that
//! the dense updates `H W1ᵀ + M W2ᵀ` become a single GEMM; aggregation is a
//! per-graph product with the row-normalized (mean) or `1/N`-scaled (sum)
//! adjacency. Gradients are accumulated in a fixed order, so results do not
//! depend on thread scheduling.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mpnn::{Aggregation, GraphSageWeights};
use crate::rng::{stream, Role};
use crate::sampler::{Adjacency, Dataset, GraphSignal};
use crate::space::{softmax_cross_entropy, LossSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lr: f64,
    /// L2 factor added to the gradient of every parameter before the Adam step.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Seed of the per-epoch shuffle of the training indices.
    pub seed: u64,
    pub relu: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl TrainOptions {
    /// `lr = 0.01`, one epoch, batch 64, Adam(0.9, 0.999, 1e-8); weight decay
    /// 0.1 for mean and 0.05 for normalized-sum aggregation when enabled.
    pub fn paper(aggregation: Aggregation, weight_decay: bool, seed: u64) -> Self {
        let wd = match (weight_decay, aggregation) {
            (false, _) => 0.0,
            (true, Aggregation::Mean) => 0.1,
            (true, Aggregation::NormalizedSum) => 0.05,
        };
        Self { lr: 0.01, weight_decay: wd, epochs: 1, batch: 64, seed, relu: false, beta1: 0.9, beta2: 0.999, adam_eps: 1e-8 }
    }
}

/// Propagation matrix `P` with `(P H)_i` the aggregated neighbour features.
/// Returns `P` and the number of isolated nodes (zero rows under mean).
pub fn propagation_matrix(adj: &Adjacency, kind: Aggregation) -> (Array2<f64>, usize) {
    let n = adj.n();
    let mut p = Array2::zeros((n, n));
    let mut isolated = 0;
    for i in 0..n {
        let deg = adj.out_degree(i);
        let w = match kind {
            Aggregation::Mean if deg == 0 => {
                isolated += 1;
                continue;
            }
            Aggregation::Mean => 1.0 / deg as f64,
            Aggregation::NormalizedSum => 1.0 / n as f64,
        };
        for j in adj.neighbors(i) {
            p[[i, j]] = w;
        }
    }
    (p, isolated)
}

struct Batch {
    props: Vec<Array2<f64>>,
    offsets: Vec<usize>,
    x: Array2<f64>,
}

impl Batch {
    fn new(graphs: &[&GraphSignal], kind: Aggregation) -> Result<Self> {
        let fd = graphs[0].feature_dim();
        let total: usize = graphs.iter().map(|g| g.n_nodes()).sum();
        let mut x = Array2::zeros((total, fd));
        let mut offsets = Vec::with_capacity(graphs.len() + 1);
        let mut props = Vec::with_capacity(graphs.len());
        let mut o = 0;
        for g in graphs {
            if g.feature_dim() != fd {
                return Err(Error::DimensionMismatch("graphs in a batch differ in feature dimension".into()));
            }
            offsets.push(o);
            x.slice_mut(s![o..o + g.n_nodes(), ..]).assign(&g.features);
            props.push(propagation_matrix(&g.adjacency, kind).0);
            o += g.n_nodes();
        }
        offsets.push(o);
        Ok(Self { props, offsets, x })
    }

    fn len(&self) -> usize {
        self.props.len()
    }

    fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    /// `out_b = P_b · h_b` (or `P_bᵀ · h_b`) for every graph block.
    fn propagate(&self, h: &Array2<f64>, transpose: bool) -> Array2<f64> {
        let mut out = Array2::zeros(h.dim());
        for (b, p) in self.props.iter().enumerate() {
            let r = self.range(b);
            let hv = h.slice(s![r.clone(), ..]);
            let mut ov = out.slice_mut(s![r, ..]);
            if transpose {
                general_mat_mul(1.0, &p.t(), &hv, 0.0, &mut ov);
            } else {
                general_mat_mul(1.0, p, &hv, 0.0, &mut ov);
            }
        }
        out
    }
}

struct ForwardCache {
    /// `hs[t]` = input of layer `t+1` (`hs[T]` = final node features).
    hs: Vec<Array2<f64>>,
    ms: Vec<Array2<f64>>,
    zs: Vec<Array2<f64>>,
    pooled: Array2<f64>,
    logits: Array2<f64>,
}

fn forward_batch(w: &GraphSageWeights, batch: &Batch, relu: bool) -> ForwardCache {
    let mut hs = vec![batch.x.clone()];
    let mut ms = Vec::new();
    let mut zs = Vec::new();
    for layer in &w.layers {
        let h = hs.last().expect("nonempty");
        let m = batch.propagate(h, false);
        let mut z = h.dot(&layer.w1.t());
        general_mat_mul(1.0, &m, &layer.w2.t(), 1.0, &mut z);
        let next = if relu { z.mapv(|v| v.max(0.0)) } else { z.clone() };
        ms.push(m);
        zs.push(z);
        hs.push(next);
    }
    let last = hs.last().expect("nonempty");
    let mut pooled = Array2::zeros((batch.len(), last.ncols()));
    for b in 0..batch.len() {
        let block = last.slice(s![batch.range(b), ..]);
        pooled.row_mut(b).assign(&block.mean_axis(Axis(0)).expect("nonempty graph"));
    }
    let logits = pooled.dot(&w.classifier.q.t()) + &w.classifier.bias;
    ForwardCache { hs, ms, zs, pooled, logits }
}

fn check_labels(graphs: &[&GraphSignal], classes: usize) -> Result<Vec<usize>> {
    graphs
        .iter()
        .map(|g| match g.label {
            Some(l) if (1..=classes).contains(&l) => Ok(l - 1),
            other => Err(invalid(format!("label {other:?} outside 1..={classes}"))),
        })
        .collect()
}

/// Mean cross-entropy of the batch and its gradient in the
/// [`GraphSageWeights::to_flat`] layout.
pub fn loss_and_grad(
    w: &GraphSageWeights,
    graphs: &[&GraphSignal],
    aggregation: Aggregation,
    relu: bool,
) -> Result<(f64, Vec<f64>)> {
    if graphs.is_empty() {
        return Err(invalid("empty batch"));
    }
    let classes = w.classifier.q.nrows();
    let labels = check_labels(graphs, classes)?;
    let batch = Batch::new(graphs, aggregation)?;
    let cache = forward_batch(w, &batch, relu);
    let bsz = graphs.len() as f64;

    let mut loss = 0.0;
    let mut dlogits = Array2::zeros(cache.logits.dim());
    for (b, &y) in labels.iter().enumerate() {
        let row = cache.logits.row(b);
        let z = row.as_slice().expect("contiguous");
        loss += softmax_cross_entropy(z, y);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let se: f64 = e.iter().sum();
        for k in 0..classes {
            dlogits[[b, k]] = (e[k] / se - if k == y { 1.0 } else { 0.0 }) / bsz;
        }
    }
    loss /= bsz;

    let dq = dlogits.t().dot(&cache.pooled);
    let dbias = dlogits.sum_axis(Axis(0));
    let dpooled = dlogits.dot(&w.classifier.q);
    let t = w.layers.len();
    let mut dh = Array2::zeros(cache.hs[t].dim());
    for b in 0..batch.len() {
        let r = batch.range(b);
        let n = r.len() as f64;
        let g = &dpooled.row(b) / n;
        dh.slice_mut(s![r, ..]).rows_mut().into_iter().for_each(|mut row| row.assign(&g));
    }
    let mut layer_grads = Vec::with_capacity(t);
    for l in (0..t).rev() {
        let mut dz = dh;
        if relu {
            dz.zip_mut_with(&cache.zs[l], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
        }
        let dw1 = dz.t().dot(&cache.hs[l]);
        let dw2 = dz.t().dot(&cache.ms[l]);
        let layer = &w.layers[l];
        let mut prev = dz.dot(&layer.w1);
        prev += &batch.propagate(&dz.dot(&layer.w2), true);
        dh = prev;
        layer_grads.push((dw1, dw2));
    }
    layer_grads.reverse();
    let mut grad = Vec::with_capacity(w.num_params());
    for (dw1, dw2) in &layer_grads {
        grad.extend(dw1.iter());
        grad.extend(dw2.iter());
    }
    grad.extend(dq.iter());
    grad.extend(dbias.iter());
    Ok((loss, grad))
}

/// Mean (unclipped) cross-entropy of a batch.
pub fn batch_loss(w: &GraphSageWeights, graphs: &[&GraphSignal], aggregation: Aggregation, relu: bool) -> Result<f64> {
    let labels = check_labels(graphs, w.classifier.q.nrows())?;
    let cache = forward_batch(w, &Batch::new(graphs, aggregation)?, relu);
    Ok(labels
        .iter()
        .enumerate()
        .map(|(b, &y)| softmax_cross_entropy(cache.logits.row(b).as_slice().expect("contiguous"), y))
        .sum::<f64>()
        / graphs.len() as f64)
}

/// Classifier logits for each graph.
pub fn predict_logits(w: &GraphSageWeights, graphs: &[&GraphSignal], aggregation: Aggregation, relu: bool) -> Result<Array2<f64>> {
    const CHUNK: usize = 256;
    let mut out = Array2::zeros((graphs.len(), w.classifier.q.nrows()));
    for (c, chunk) in graphs.chunks(CHUNK).enumerate() {
        let cache = forward_batch(w, &Batch::new(chunk, aggregation)?, relu);
        out.slice_mut(s![c * CHUNK..c * CHUNK + chunk.len(), ..]).assign(&cache.logits);
    }
    Ok(out)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], o: &TrainOptions) {
        self.step += 1;
        let c1 = 1.0 - o.beta1.powi(self.step);
        let c2 = 1.0 - o.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i] + o.weight_decay * params[i];
            self.m[i] = o.beta1 * self.m[i] + (1.0 - o.beta1) * g;
            self.v[i] = o.beta2 * self.v[i] + (1.0 - o.beta2) * g * g;
            params[i] -= o.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + o.adam_eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub weights: GraphSageWeights,
    /// Mini-batch loss before each optimizer step.
    pub losses: Vec<f64>,
}

/// Trains on the dataset's training split, visiting it in a seeded random
/// order each epoch.
pub fn train_graphsage(
    init: &GraphSageWeights,
    aggregation: Aggregation,
    dataset: &Dataset,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    if dataset.num_classes != 2 || init.classifier.q.nrows() != 2 {
        return Err(invalid("training expects a two-class dataset and classifier"));
    }
    if opts.batch == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let train: Vec<&GraphSignal> = dataset.train().collect();
    check_labels(&train, 2)?;
    train_on(init, aggregation, &train, opts)
}

/// Trains on an explicit list of graphs (one pass per epoch, seeded order).
pub fn train_on(
    init: &GraphSageWeights,
    aggregation: Aggregation,
    graphs: &[&GraphSignal],
    opts: &TrainOptions,
) -> Result<TrainResult> {
    init.validate()?;
    let mut weights = init.clone();
    let mut params = weights.to_flat();
    let mut adam = Adam::new(params.len());
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    for epoch in 0..opts.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(opts.seed, epoch as u64, Role::Shuffle));
        for chunk in order.chunks(opts.batch) {
            let batch: Vec<&GraphSignal> = chunk.iter().map(|&i| graphs[i]).collect();
            let (loss, grad) = loss_and_grad(&weights, &batch, aggregation, opts.relu)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite loss or gradient at step {}", losses.len())));
            }
            losses.push(loss);
            adam.update(&mut params, &grad, opts);
            weights.set_flat(&params);
        }
    }
    Ok(TrainResult { weights, losses })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    /// Mean loss, clipped to the loss bound.
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate(
    w: &GraphSageWeights,
    graphs: &[&GraphSignal],
    aggregation: Aggregation,
    relu: bool,
    loss: &LossSpec,
) -> Result<EvalStats> {
    if graphs.is_empty() {
        return Err(invalid("cannot evaluate on an empty set"));
    }
    let labels = check_labels(graphs, w.classifier.q.nrows())?;
    let logits = predict_logits(w, graphs, aggregation, relu)?;
    let mut total = 0.0;
    let mut correct = 0usize;
    for (b, &y) in labels.iter().enumerate() {
        let z = logits.row(b);
        let z = z.as_slice().expect("contiguous");
        total += loss.eval(z, y);
        let argmax = z.iter().enumerate().fold(0, |best, (k, &v)| if v > z[best] { k } else { best });
        correct += (argmax == y) as usize;
    }
    let n = graphs.len() as f64;
    Ok(EvalStats { loss: total / n, accuracy: correct as f64 / n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub train_loss: f64,
    pub test_loss: f64,
    pub gap: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// `|test risk − train risk|` of one trained model.
pub fn empirical_gap(
    w: &GraphSageWeights,
    aggregation: Aggregation,
    relu: bool,
    dataset: &Dataset,
    loss: &LossSpec,
) -> Result<GapReport> {
    let train: Vec<&GraphSignal> = dataset.train().collect();
    let test: Vec<&GraphSignal> = dataset.test().collect();
    let a = evaluate(w, &train, aggregation, relu, loss)?;
    let b = evaluate(w, &test, aggregation, relu, loss)?;
    Ok(GapReport {
        train_loss: a.loss,
        test_loss: b.loss,
        gap: (b.loss - a.loss).abs(),
        train_accuracy: a.accuracy,
        test_accuracy: b.accuracy,
    })
}

/// Loss specification for the trained classifier on inputs bounded by
/// `‖f^{(T)}‖∞ ≤ A′ + A″ ‖f‖∞`.
pub fn loss_spec_for(w: &GraphSageWeights, input_bound: f64) -> LossSpec {
    LossSpec::softmax_ce_for_classifier(&w.classifier_rows(), w.classifier.bias.as_slice().expect("contiguous"), input_bound)
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative deviation between the analytic gradient and central
/// finite differences with step `h`, over all parameters.
pub fn finite_difference_check(
    w: &GraphSageWeights,
    graphs: &[&GraphSignal],
    aggregation: Aggregation,
    relu: bool,
    h: f64,
) -> Result<f64> {
    let (_, grad) = loss_and_grad(w, graphs, aggregation, relu)?;
    let base = w.to_flat();
    let mut probe = w.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_flat(&p);
        let up = batch_loss(&probe, graphs, aggregation, relu)?;
        p[i] = base[i] - h;
        probe.set_flat(&p);
        let down = batch_loss(&probe, graphs, aggregation, relu)?;
        let fd = (up - down) / (2.0 * h);
        // Gradients far below the finite-difference noise floor carry no signal.
        worst = worst.max(relative_error(grad[i], fd, 1e-6));
    }
    Ok(worst)
}
