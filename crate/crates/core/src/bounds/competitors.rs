//! The two norm-based GNN generalization bounds used as baselines.
//!
//! Both are evaluated on the trained GraphSage weights. Layer `t` is the
//! matrix `W_t = [W1_t | W2_t]` (it maps the concatenated node feature and
//! aggregated message), and the classifier `Q` counts as one more layer, so a
//! depth-`T` network has `l = T + 1` weight matrices. Spectral norms come
//! from a full SVD.
//!
//! PAC-Bayes (Liao, Urtasun and Zemel, "A PAC-Bayesian approach to
//! generalization bounds for graph neural networks", 2021), the GCN form of
//! their main theorem with its `O(·)` constant set to 1:
//!
//! ```text
//! sqrt( (B² d^{l−1} l² h ln(l h) Π_i ‖W_i‖₂² Σ_i ‖W_i‖_F² / ‖W_i‖₂² + ln(m l / δ)) / (γ² m) )
//! ```
//!
//! with `B` the input-feature bound, `d` the maximum node degree, `h` the
//! largest layer width and `γ` the classification margin. A zero layer
//! contributes 0 to the stable-rank sum.
//!
//! Rademacher complexity (Garg, Jegelka and Jaakkola, "Generalization and
//! representational limits of graph neural networks", 2020), margin bound
//! with their covering-number complexity term written out with constant 24:
//!
//! ```text
//! (4/γ) (1/m + 24 r d Λ sqrt(3 ln(max(e, 24 √m r d Λ l)) / m)) + 3 sqrt(ln(2/δ) / (2m))
//! ```
//!
//! with `r = h` the embedding width, `d` the branching factor (maximum node
//! degree) and `Λ = B ‖Q‖₂ Π_t ‖W_t‖₂ · max(1, d)^{T−1}` the Lipschitz
//! product of the unrolled computation tree.
//!
//! Both readings keep the published dependence on `m`, `d`, depth and the
//! weight norms; absolute constants hidden in `O(·)` in the original works
//! are set to the values shown.

use nalgebra::DMatrix;
use ndarray::{Array2, concatenate, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, invalid};
use crate::mpnn::GraphSageWeights;

/// Dataset-level inputs shared by the two baseline bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetitorInputs {
    /// Maximum node degree over the training graphs.
    pub max_degree: usize,
    /// Number of training graphs.
    pub m: usize,
    /// Bound on the input node-feature norm.
    pub input_bound: f64,
    /// Classification margin `γ`.
    pub margin: f64,
    /// Confidence parameter `δ`.
    pub delta: f64,
}

impl CompetitorInputs {
    pub fn new(max_degree: usize, m: usize, input_bound: f64) -> Self {
        Self { max_degree, m, input_bound, margin: 1.0, delta: 0.05 }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("baseline bounds need m >= 1"));
        }
        if !(self.margin > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) || !(self.input_bound >= 0.0) {
            return Err(invalid(format!("baseline bound inputs out of range: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightNorms {
    /// `‖W_i‖₂` for every layer and then the classifier.
    pub spectral: Vec<f64>,
    /// `‖W_i‖_F` in the same order.
    pub frobenius: Vec<f64>,
    /// Largest layer width.
    pub width: usize,
}

impl WeightNorms {
    pub fn depth(&self) -> usize {
        self.spectral.len()
    }
}

pub fn spectral_norm(m: &Array2<f64>) -> f64 {
    let (r, c) = m.dim();
    if r == 0 || c == 0 {
        return 0.0;
    }
    let dm = DMatrix::from_row_iterator(r, c, m.iter().copied());
    dm.singular_values().max()
}

/// Spectral and Frobenius norms of `[W1 | W2]` per layer and of `Q`.
pub fn weight_norms(w: &GraphSageWeights) -> Result<WeightNorms> {
    w.validate()?;
    let mut mats: Vec<Array2<f64>> = w
        .layers
        .iter()
        .map(|l| concatenate(Axis(1), &[l.w1.view(), l.w2.view()]).map_err(|e| Error::DimensionMismatch(e.to_string())))
        .collect::<Result<_>>()?;
    mats.push(w.classifier.q.clone());
    let spectral: Vec<f64> = mats.iter().map(spectral_norm).collect();
    let frobenius: Vec<f64> = mats.iter().map(|m| m.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if spectral.iter().chain(&frobenius).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("weight norms are not finite".into()));
    }
    let width = mats.iter().flat_map(|m| [m.nrows(), m.ncols()]).max().unwrap_or(1);
    Ok(WeightNorms { spectral, frobenius, width })
}

pub fn pac_bayes_bound(norms: &WeightNorms, inp: &CompetitorInputs) -> Result<f64> {
    inp.validate()?;
    let l = norms.depth() as f64;
    let h = norms.width as f64;
    let d = inp.max_degree.max(1) as f64;
    let m = inp.m as f64;
    let prod_spec: f64 = norms.spectral.iter().map(|s| s * s).product();
    let stable_rank: f64 = norms
        .spectral
        .iter()
        .zip(&norms.frobenius)
        .map(|(s, f)| if *s > 0.0 { f * f / (s * s) } else { 0.0 })
        .sum();
    let complexity = inp.input_bound.powi(2) * d.powf(l - 1.0) * l * l * h * (l * h).ln().max(0.0) * prod_spec * stable_rank;
    let value = ((complexity + (m * l / inp.delta).ln()) / (inp.margin.powi(2) * m)).sqrt();
    finite(value, "PAC-Bayes")
}

pub fn rademacher_bound(norms: &WeightNorms, inp: &CompetitorInputs) -> Result<f64> {
    inp.validate()?;
    let l = norms.depth() as f64;
    let r = norms.width as f64;
    let d = inp.max_degree.max(1) as f64;
    let m = inp.m as f64;
    let t = norms.depth() - 1;
    let lambda = inp.input_bound * norms.spectral.iter().product::<f64>() * d.max(1.0).powi(t as i32 - 1);
    let log_arg = (24.0 * m.sqrt() * r * d * lambda * l).max(std::f64::consts::E);
    let complexity = 1.0 / m + 24.0 * r * d * lambda * (3.0 * log_arg.ln() / m).sqrt();
    let value = 4.0 / inp.margin * complexity + 3.0 * ((2.0 / inp.delta).ln() / (2.0 * m)).sqrt();
    finite(value, "Rademacher")
}

fn finite(v: f64, name: &str) -> Result<f64> {
    if v.is_finite() { Ok(v) } else { Err(Error::Numeric(format!("{name} bound is not finite"))) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetitorBounds {
    pub pac_bayes: f64,
    pub rademacher: f64,
}

pub fn competitor_bounds(w: &GraphSageWeights, inp: &CompetitorInputs) -> Result<CompetitorBounds> {
    let norms = weight_norms(w)?;
    Ok(CompetitorBounds { pac_bayes: pac_bayes_bound(&norms, inp)?, rademacher: rademacher_bound(&norms, inp)? })
}
