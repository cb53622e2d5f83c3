//! Continuous message passing on a graphon-signal via deterministic
//! midpoint quadrature.
//!
//! Layer features are materialized on the midpoint grid `x_k = (k + ½)/R`.
//! Aggregation integrals are evaluated block-row by block-row: a block of
//! kernel values `W(x_i, y_k)/R` is formed and multiplied with the grid
//! features, so the `R × R` kernel is never stored whole. Under mean
//! aggregation the degree `d_W(x)` uses the same grid, which makes the
//! ratio exact for constant kernels.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mpnn::{mpnn_forward, Aggregation, LayerSpec, Message, MpnnArch};
use crate::sampler::GraphSignal;
use crate::space::{Graphon, MetricSignal};

/// Default quadrature resolution.
pub const DEFAULT_RESOLUTION: usize = 2048;
const BLOCK: usize = 256;
/// Mean aggregation refuses degrees below this value.
pub const MIN_DEGREE: f64 = 1e-9;

/// Values of a signal on the midpoint grid of `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedSignal {
    pub grid: Vec<f64>,
    /// `resolution × F`.
    pub values: Array2<f64>,
    pub resolution: usize,
}

pub fn midpoint_grid(resolution: usize) -> Vec<f64> {
    let h = 1.0 / resolution as f64;
    (0..resolution).map(|k| (k as f64 + 0.5) * h).collect()
}

/// The limit network `Θ(W, f)` evaluated on a fixed grid.
#[derive(Debug, Clone)]
pub struct LimitNetwork {
    arch: MpnnArch,
    graphon: Graphon,
    signal: MetricSignal,
    /// Multiplies the kernel: `N^{-α}` for normalized-sum aggregation of an
    /// `α`-sparse model, 1 otherwise.
    pub kernel_scale: f64,
    /// `layers[t]` holds `f^{(t)}` on the grid (`layers[0]` is the input signal).
    pub layers: Vec<DiscretizedSignal>,
    pub pooled: Vec<f64>,
    pub output: Vec<f64>,
}

fn kernel_block(w: &Graphon, rows: &[f64], grid: &[f64], scale: f64) -> Array2<f64> {
    let c = scale / grid.len() as f64;
    Array2::from_shape_fn((rows.len(), grid.len()), |(i, k)| c * w.eval(rows[i], grid[k]))
}

/// Aggregated messages for a block of points given their kernel rows, own
/// features and the grid features of the previous layer.
fn aggregate_block(
    layer: &LayerSpec,
    kind: Aggregation,
    kblock: &Array2<f64>,
    degrees: &[f64],
    own: &Array2<f64>,
    grid_feats: &Array2<f64>,
) -> Array2<f64> {
    let mut m = match &layer.message {
        Message::Source => kblock.dot(grid_feats),
        Message::Custom { f, dim } => {
            let mut out = Array2::zeros((kblock.nrows(), *dim));
            let mut buf = vec![0.0; *dim];
            for i in 0..kblock.nrows() {
                let a = own.row(i).to_vec();
                let mut acc = vec![0.0; *dim];
                for (k, &kv) in kblock.row(i).iter().enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    f(&a, grid_feats.row(k).as_slice().expect("standard layout"), &mut buf);
                    acc.iter_mut().zip(&buf).for_each(|(s, v)| *s += kv * v);
                }
                out.row_mut(i).assign(&ndarray::Array1::from(acc));
            }
            out
        }
    };
    if kind == Aggregation::Mean {
        for (mut row, &d) in m.rows_mut().into_iter().zip(degrees) {
            row /= d;
        }
    }
    m
}

fn check_degrees(kind: Aggregation, points: &[f64], degrees: &[f64]) -> Result<()> {
    if kind == Aggregation::Mean {
        if let Some((x, d)) = points.iter().zip(degrees).find(|(_, &d)| !(d >= MIN_DEGREE)) {
            return Err(Error::DegenerateDegree { x: *x, degree: *d });
        }
    }
    Ok(())
}

impl LimitNetwork {
    pub fn new(w: &Graphon, f: &MetricSignal, arch: &MpnnArch, resolution: usize, kernel_scale: f64) -> Result<Self> {
        if resolution < 2 {
            return Err(invalid(format!("quadrature resolution must be >= 2, got {resolution}")));
        }
        if f.feature_dim != arch.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} channels but the network expects {}",
                f.feature_dim,
                arch.in_dim()
            )));
        }
        if !(kernel_scale > 0.0) {
            return Err(invalid("kernel scale must be positive"));
        }
        let grid = midpoint_grid(resolution);
        let mut f0 = Array2::zeros((resolution, f.feature_dim));
        for (k, &x) in grid.iter().enumerate() {
            let mut row = f0.row_mut(k);
            f.eval_into(x, row.as_slice_mut().expect("standard layout"));
        }
        let mut feats = vec![f0];
        let mut degrees = vec![0.0; resolution];
        for (t, layer) in arch.layers.iter().enumerate() {
            let prev = feats.last().expect("nonempty");
            let mut next = Array2::zeros((resolution, layer.out_dim));
            for start in (0..resolution).step_by(BLOCK) {
                let end = (start + BLOCK).min(resolution);
                let kb = kernel_block(w, &grid[start..end], &grid, kernel_scale);
                if t == 0 {
                    for (i, d) in kb.sum_axis(Axis(1)).iter().enumerate() {
                        degrees[start + i] = *d;
                    }
                    check_degrees(arch.aggregation, &grid[start..end], &degrees[start..end])?;
                }
                let own = prev.slice(s![start..end, ..]).to_owned();
                let m = aggregate_block(layer, arch.aggregation, &kb, &degrees[start..end], &own, prev);
                next.slice_mut(s![start..end, ..]).assign(&layer.update_rows(own.view(), m.view()));
            }
            feats.push(next);
        }
        let last = feats.last().expect("nonempty");
        let pooled = last.mean_axis(Axis(0)).expect("nonempty grid").to_vec();
        let output = arch.apply_readout(&pooled);
        let layers = feats
            .into_iter()
            .map(|values| DiscretizedSignal { grid: grid.clone(), values, resolution })
            .collect();
        Ok(Self { arch: arch.clone(), graphon: w.clone(), signal: f.clone(), kernel_scale, layers, pooled, output })
    }

    /// The limit object matched to a graph with `n` nodes sampled at sparsity
    /// `alpha`: normalized-sum aggregation sees the kernel `N^{-α} W`, mean
    /// aggregation is invariant to the scale.
    pub fn for_graph(w: &Graphon, f: &MetricSignal, arch: &MpnnArch, resolution: usize, n: usize, alpha: f64) -> Result<Self> {
        Self::new(w, f, arch, resolution, Self::scale_for(arch.aggregation, n, alpha))
    }

    pub fn scale_for(kind: Aggregation, n: usize, alpha: f64) -> f64 {
        match kind {
            Aggregation::Mean => 1.0,
            Aggregation::NormalizedSum => (n as f64).powf(-alpha),
        }
    }

    pub fn resolution(&self) -> usize {
        self.layers[0].resolution
    }

    /// Limit features `f^{(T)}(x)` at arbitrary points.
    pub fn at_points(&self, points: &[f64]) -> Result<Array2<f64>> {
        let grid = &self.layers[0].grid;
        let mut out = Array2::zeros((points.len(), self.arch.feature_dim()));
        for start in (0..points.len()).step_by(BLOCK) {
            let end = (start + BLOCK).min(points.len());
            let pts = &points[start..end];
            let kb = kernel_block(&self.graphon, pts, grid, self.kernel_scale);
            let degrees = kb.sum_axis(Axis(1)).to_vec();
            check_degrees(self.arch.aggregation, pts, &degrees)?;
            let mut h = Array2::zeros((pts.len(), self.signal.feature_dim));
            for (i, &x) in pts.iter().enumerate() {
                let mut row = h.row_mut(i);
                self.signal.eval_into(x, row.as_slice_mut().expect("standard layout"));
            }
            for (t, layer) in self.arch.layers.iter().enumerate() {
                let m = aggregate_block(layer, self.arch.aggregation, &kb, &degrees, &h, &self.layers[t].values);
                h = layer.update_rows(h.view(), m.view());
            }
            out.slice_mut(s![start..end, ..]).assign(&h);
        }
        Ok(out)
    }

    /// Distances between the graph network on `gs` and this limit network.
    pub fn dist(&self, gs: &GraphSignal) -> Result<DistReport> {
        let xs = gs.latents()?;
        let expected = Self::scale_for(self.arch.aggregation, gs.n_nodes(), gs.alpha);
        if (expected - self.kernel_scale).abs() > 1e-12 * expected {
            return Err(invalid(format!(
                "limit network built for kernel scale {} but the graph needs {expected}",
                self.kernel_scale
            )));
        }
        let trace = mpnn_forward(&self.arch, gs)?;
        let limit = self.at_points(xs)?;
        let graph = trace.features.last().expect("nonempty");
        let dist_features = graph.iter().zip(limit.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dist_output = trace.output.iter().zip(&self.output).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok(DistReport { dist_features, dist_output, isolated_nodes: trace.isolated_nodes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistReport {
    /// `max_i ‖f^{(T)}_i − f^{(T)}(X_i)‖∞` over nodes and channels.
    pub dist_features: f64,
    /// `‖Θ(G, f) − Θ(W, f)‖∞`.
    pub dist_output: f64,
    pub isolated_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmpnnOutput {
    pub output: Vec<f64>,
    pub pooled: Vec<f64>,
    /// `‖out_R − out_{R/2}‖∞`.
    pub error_estimate: f64,
    pub resolution: usize,
}

/// `Θ(W, f)` at the given resolution, with an error estimate from the
/// half-resolution evaluation.
pub fn cmpnn_forward(w: &Graphon, f: &MetricSignal, arch: &MpnnArch, resolution: usize) -> Result<CmpnnOutput> {
    cmpnn_forward_scaled(w, f, arch, resolution, 1.0)
}

pub fn cmpnn_forward_scaled(
    w: &Graphon,
    f: &MetricSignal,
    arch: &MpnnArch,
    resolution: usize,
    kernel_scale: f64,
) -> Result<CmpnnOutput> {
    let fine = LimitNetwork::new(w, f, arch, resolution, kernel_scale)?;
    let coarse_res = (resolution / 2).max(1);
    let coarse = if coarse_res >= 2 {
        LimitNetwork::new(w, f, arch, coarse_res, kernel_scale)?.output
    } else {
        // A one-point grid is still a valid midpoint rule.
        single_point_output(w, f, arch, kernel_scale)?
    };
    let error_estimate = fine.output.iter().zip(&coarse).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(CmpnnOutput { output: fine.output, pooled: fine.pooled, error_estimate, resolution })
}

fn single_point_output(w: &Graphon, f: &MetricSignal, arch: &MpnnArch, scale: f64) -> Result<Vec<f64>> {
    let x = [0.5];
    let kb = kernel_block(w, &x, &x, scale);
    let deg = kb.sum_axis(Axis(1)).to_vec();
    check_degrees(arch.aggregation, &x, &deg)?;
    let mut h = Array2::from_shape_vec((1, f.feature_dim), f.eval(0.5)).expect("shape");
    for layer in &arch.layers {
        let m = aggregate_block(layer, arch.aggregation, &kb, &deg, &h, &h);
        h = layer.update_rows(h.view(), m.view());
    }
    Ok(arch.apply_readout(h.row(0).as_slice().expect("standard layout")))
}

/// Limit features at arbitrary points.
pub fn cmpnn_at_points(w: &Graphon, f: &MetricSignal, arch: &MpnnArch, points: &[f64], resolution: usize) -> Result<Array2<f64>> {
    LimitNetwork::new(w, f, arch, resolution, 1.0)?.at_points(points)
}

/// Distances between `Θ(G, f)` and `Θ(W, f)` for one sampled graph-signal.
pub fn dist_graph_vs_limit(arch: &MpnnArch, gs: &GraphSignal, w: &Graphon, f: &MetricSignal, resolution: usize) -> Result<DistReport> {
    gs.latents()?;
    LimitNetwork::for_graph(w, f, arch, resolution, gs.n_nodes(), gs.alpha)?.dist(gs)
}
