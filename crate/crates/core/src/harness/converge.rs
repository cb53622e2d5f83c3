//! Monte Carlo convergence sweep: graph MPNN vs. its continuous limit.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, csv_writer, graphsage_meta, loglog_slope, median};
use crate::bounds::{ConvergenceInputs, convergence_bound};
use crate::cmpnn::LimitNetwork;
use crate::error::Result;
use crate::rng::{Role, stream};
use crate::sampler::sample_rgsm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub alpha: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub trial: usize,
    pub dist_output: f64,
    pub dist_sq: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub alpha: f64,
    /// Median `dist_output` per node count, in sweep order.
    pub medians: Vec<(usize, f64)>,
    /// Least-squares slope of `ln median` against `ln N`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceResult {
    pub rows: Vec<ConvergenceRow>,
    pub slopes: Vec<SlopeSummary>,
    pub warnings: Vec<String>,
}

impl ConvergenceResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record(["alpha", "N", "trial", "dist_output", "dist_sq", "bound"])?;
        for r in &self.rows {
            out.write_record([
                r.alpha.to_string(),
                r.n.to_string(),
                r.trial.to_string(),
                r.dist_output.to_string(),
                r.dist_sq.to_string(),
                r.bound.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_slopes_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record(["alpha", "N", "median_dist_output", "slope"])?;
        for s in &self.slopes {
            for (n, m) in &s.medians {
                out.write_record([s.alpha.to_string(), n.to_string(), m.to_string(), s.slope.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Rows of one `(alpha, N)` cell.
    pub fn cell(&self, alpha: f64, n: usize) -> impl Iterator<Item = &ConvergenceRow> {
        self.rows.iter().filter(move |r| r.alpha == alpha && r.n == n)
    }
}

/// Stream index of one trial: unique per `(alpha index, N, trial)`, and
/// independent of the other entries of the sweep.
fn trial_index(alpha_idx: usize, n: usize, trial: usize) -> u64 {
    ((alpha_idx as u64) << 48) | ((n as u64) << 24) | trial as u64
}

/// For every `α` and `N`, samples `trials` graph-signals from the configured
/// graphon, measures `‖Θ(G,f) − Θ(W,f)‖∞` and evaluates the squared
/// high-probability bound.
pub fn run_convergence(cfg: &ExperimentConfig, seed: u64) -> Result<ConvergenceResult> {
    cfg.validate()?;
    let c = &cfg.converge;
    let w = c.graphon.build();
    let f = c.signal.unwrap_or(c.graphon.default_signal()).build();
    let weights = cfg.arch.weights(seed)?;
    let arch = weights.arch(cfg.arch.aggregation, cfg.arch.relu)?;
    let meta = graphsage_meta(&weights, cfg.arch.aggregation, cfg.arch.relu)?;
    let (g_meta, s_meta) = (w.meta(), f.meta());
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut warnings = Vec::new();
    for (ai, &alpha) in c.alphas.iter().enumerate() {
        let mut medians = Vec::new();
        for &n in &c.n_list {
            let limit = LimitNetwork::for_graph(&w, &f, &arch, c.resolution, n, alpha)?;
            let inp = ConvergenceInputs { graphon: &g_meta, signal: &s_meta, arch: &meta, n, alpha, epsilon: c.noise.epsilon };
            let bound = convergence_bound(inp, &cfg.bounds)?;
            warnings.extend(bound.warnings.iter().map(|m| format!("alpha = {alpha}: {m}")));
            let cell: Vec<ConvergenceRow> = (0..c.trials)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = stream(seed, trial_index(ai, n, trial), Role::Trial);
                    let gs = sample_rgsm(&w, &f, &c.noise, n, alpha, cfg.mixture.sample_options(), &mut rng)?;
                    let d = limit.dist(&gs)?;
                    Ok(ConvergenceRow {
                        alpha,
                        n,
                        trial,
                        dist_output: d.dist_output,
                        dist_sq: d.dist_output * d.dist_output,
                        bound: bound.squared,
                    })
                })
                .collect::<Result<_>>()?;
            let dists: Vec<f64> = cell.iter().map(|r| r.dist_output).collect();
            medians.push((n, median(&dists)));
            rows.extend(cell);
        }
        let slope = if medians.len() >= 2 {
            let xs: Vec<f64> = medians.iter().map(|m| m.0 as f64).collect();
            let ys: Vec<f64> = medians.iter().map(|m| m.1).collect();
            loglog_slope(&xs, &ys)
        } else {
            f64::NAN
        };
        slopes.push(SlopeSummary { alpha, medians, slope });
    }
    Ok(ConvergenceResult { rows, slopes, warnings })
}
