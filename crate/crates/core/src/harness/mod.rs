//! Experiment orchestration: versioned JSON configs, convergence sweeps,
//! bound-comparison runs, summary statistics and CSV emission.
//!
//! Work is fanned out over independent units (trials, training runs) that
//! each draw from their own seeded stream, and results are reduced in index
//! order, so every output is identical for any worker count.

pub mod compare;
pub mod converge;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::competitors::{CompetitorInputs, competitor_bounds};
use crate::bounds::{BoundConfig, BoundReport, ConvergenceInputs, generalization_bound};
use crate::error::{Error, Result};
use crate::mpnn::{Aggregation, ArchMeta, GRAPHSAGE_WIDTH, GraphSageWeights, LayerMeta, WeightsFile, compute_deterministic_bound};
use crate::rng::{Role, stream, stream_seed};
use crate::sampler::{Dataset, SampleOptions, generate_dataset};
use crate::space::{ClassModel, GraphonFamily, MixtureOfGraphons, NodeCountDist, NoiseModel, SignalFamily};
use crate::train::{TrainOptions, empirical_gap, loss_spec_for, train_graphsage};

pub use compare::{ComparisonRow, ComparisonTable, RunRecord, run_comparison};
pub use converge::{ConvergenceResult, ConvergenceRow, run_convergence};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable supplying the default master seed.
pub const SEED_ENV: &str = "GMLAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Converge,
    Compare,
    TrainAndBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default = "default_kind")]
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mixture: MixtureConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub converge: ConvergeConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bounds: BoundConfig,
    /// Default output path (file or directory, depending on the experiment).
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_kind() -> ExperimentKind {
    ExperimentKind::TrainAndBound
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            kind: default_kind(),
            seed: None,
            mixture: MixtureConfig::default(),
            arch: ArchConfig::default(),
            converge: ConvergeConfig::default(),
            compare: CompareConfig::default(),
            train: TrainConfig::default(),
            bounds: BoundConfig::default(),
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub graphon: GraphonFamily,
    /// Defaults to the graphon family's benchmark signal.
    #[serde(default)]
    pub signal: Option<SignalFamily>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureConfig {
    pub classes: Vec<ClassConfig>,
    pub size_dist: NodeCountDist,
    pub alpha: f64,
    pub noise: NoiseModel,
    pub symmetrize: bool,
}

impl Default for MixtureConfig {
    /// The balanced two-class benchmark with 50-node graphs.
    fn default() -> Self {
        Self {
            classes: [GraphonFamily::Er04, GraphonFamily::SbmSmooth]
                .into_iter()
                .map(|graphon| ClassConfig { graphon, signal: None, prob: 0.5 })
                .collect(),
            size_dist: NodeCountDist::Fixed { n: 50 },
            alpha: 0.0,
            noise: NoiseModel::zero(),
            symmetrize: false,
        }
    }
}

impl MixtureConfig {
    pub fn build(&self) -> Result<MixtureOfGraphons> {
        let classes = self
            .classes
            .iter()
            .map(|c| ClassModel {
                graphon: c.graphon.build(),
                signal: c.signal.unwrap_or(c.graphon.default_signal()).build(),
                prob: c.prob,
            })
            .collect();
        let mix = MixtureOfGraphons { classes, size_dist: self.size_dist, alpha: self.alpha, noise: self.noise };
        mix.validate().map_err(config_error)?;
        Ok(mix)
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self { alpha, ..self.clone() }
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions { symmetrize: self.symmetrize }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub depth: usize,
    pub aggregation: Aggregation,
    pub width: usize,
    pub relu: bool,
    /// Trained weights to use instead of a seeded initialization.
    pub weights: Option<PathBuf>,
    /// Explicit layer metadata; when given, bound evaluation needs no weights.
    pub layers: Option<Vec<LayerMeta>>,
    /// Lipschitz constant of the readout applied after pooling.
    pub lip_k: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            aggregation: Aggregation::Mean,
            width: GRAPHSAGE_WIDTH,
            relu: false,
            weights: None,
            layers: None,
            lip_k: 1.0,
        }
    }
}

impl ArchConfig {
    /// The configured weights: loaded from `weights` if set, otherwise a
    /// seeded initialization for scalar inputs and two classes.
    pub fn weights(&self, seed: u64) -> Result<GraphSageWeights> {
        match &self.weights {
            Some(path) => Ok(load_weights(path)?.weights()),
            None => GraphSageWeights::init(self.depth, 1, self.width, 2, &mut stream(seed, 0, Role::Init)),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 {
            return Err(Error::Config("arch.depth and arch.width must be positive".into()));
        }
        if !(self.lip_k >= 0.0) {
            return Err(Error::Config("arch.lip_k must be nonnegative".into()));
        }
        if let Some(l) = &self.layers {
            if l.is_empty() {
                return Err(Error::Config("arch.layers must not be empty".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub graphon: GraphonFamily,
    pub signal: Option<SignalFamily>,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub alphas: Vec<f64>,
    pub resolution: usize,
    pub noise: NoiseModel,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            graphon: GraphonFamily::SbmSmooth,
            signal: None,
            n_list: vec![50, 100, 200, 400, 800, 1600, 3200],
            trials: 100,
            alphas: vec![0.0],
            resolution: crate::cmpnn::DEFAULT_RESOLUTION,
            noise: NoiseModel::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Graphs per dataset (train + test).
    pub m: usize,
    pub seeds: usize,
    pub alphas: Vec<f64>,
    pub aggregations: Vec<Aggregation>,
    pub depths: Vec<usize>,
    /// Margin `γ` and confidence `δ` of the baseline bounds.
    pub margin: f64,
    pub delta: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            m: 10_000,
            seeds: 3,
            alphas: vec![0.0, 0.1, 0.2, 0.3],
            aggregations: vec![Aggregation::Mean, Aggregation::NormalizedSum],
            depths: vec![1, 2, 3],
            margin: 1.0,
            delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Graphs generated for a single train-and-bound run.
    pub m: usize,
    pub train_frac: f64,
    pub weight_decay: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { m: 10_000, train_frac: 0.9, weight_decay: true, lr: 0.01, epochs: 1, batch: 64 }
    }
}

impl TrainConfig {
    pub fn options(&self, aggregation: Aggregation, weight_decay: bool, seed: u64) -> TrainOptions {
        TrainOptions { lr: self.lr, epochs: self.epochs, batch: self.batch, ..TrainOptions::paper(aggregation, weight_decay, seed) }
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl ExperimentConfig {
    /// Parses and validates; every failure is an [`Error::Config`] carrying
    /// the JSON line and column where applicable.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        self.mixture.build()?;
        self.arch.validate()?;
        self.bounds.validate().map_err(config_error)?;
        let c = &self.converge;
        if c.trials == 0 || c.n_list.is_empty() || c.alphas.is_empty() {
            return Err(Error::Config("converge needs trials >= 1 and nonempty n_list and alphas".into()));
        }
        if c.n_list.iter().any(|&n| n < 2) || c.alphas.iter().any(|a| !(*a >= 0.0)) || c.resolution < 2 {
            return Err(Error::Config("converge needs N >= 2, alpha >= 0 and resolution >= 2".into()));
        }
        c.noise.validate().map_err(config_error)?;
        let k = &self.compare;
        if k.seeds == 0 || k.alphas.is_empty() || k.aggregations.is_empty() || k.depths.is_empty() {
            return Err(Error::Config("compare needs seeds >= 1 and nonempty alphas, aggregations and depths".into()));
        }
        if k.depths.contains(&0) || k.alphas.iter().any(|a| !(*a >= 0.0)) || !(k.margin > 0.0) {
            return Err(Error::Config("compare depths must be positive, alphas nonnegative, margin positive".into()));
        }
        if !(k.delta > 0.0 && k.delta < 1.0) {
            return Err(Error::Config("compare.delta must lie in (0, 1)".into()));
        }
        let t = &self.train;
        if !(t.train_frac > 0.0 && t.train_frac < 1.0) || t.batch == 0 || !(t.lr > 0.0) {
            return Err(Error::Config("train needs train_frac in (0, 1), batch >= 1 and lr > 0".into()));
        }
        let n_classes = self.mixture.classes.len();
        let n_train = crate::sampler::train_size(k.m, t.train_frac);
        if k.m < n_classes || n_train == 0 || n_train == k.m {
            return Err(Error::Config(format!("compare.m = {} leaves an empty train or test split", k.m)));
        }
        let n_train = crate::sampler::train_size(t.m, t.train_frac);
        if t.m < n_classes || n_train == 0 || n_train == t.m {
            return Err(Error::Config(format!("train.m = {} leaves an empty train or test split", t.m)));
        }
        Ok(())
    }

    /// Seed precedence: explicit override, then the config, then `GMLAB_SEED`, then 0.
    pub fn resolve_seed(&self, cli: Option<u64>) -> Result<u64> {
        if let Some(s) = cli.or(self.seed) {
            return Ok(s);
        }
        env_seed().map(|s| s.unwrap_or(0))
    }
}

/// The seed given by `GMLAB_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn load_weights(path: &Path) -> Result<WeightsFile> {
    let text = std::fs::read_to_string(path)?;
    let file: WeightsFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    file.weights().validate()?;
    Ok(file)
}

/// Runs `f` on a pool of `jobs` workers (the global pool when `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(j).build().map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation (`n − 1` denominator); 0 for a single value.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// A CSV writer with the fixed dialect of every emitted table: comma
/// separator, LF line endings, mandatory header.
pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// Architecture metadata of trained (or initialized) GraphSage weights.
pub fn graphsage_meta(w: &GraphSageWeights, aggregation: Aggregation, relu: bool) -> Result<ArchMeta> {
    Ok(w.arch(aggregation, relu)?.meta())
}

/// Input bound of the classifier: `‖f^{(T)}‖∞ ≤ A′ + A″ ‖f‖∞`, pooled
/// features inheriting the node-feature bound.
pub fn classifier_input_bound(meta: &ArchMeta, mix: &MixtureOfGraphons) -> f64 {
    let (a1, a2) = compute_deterministic_bound(&meta.layers);
    let f_sup = mix.classes.iter().map(|c| c.signal.sup_norm).fold(0.0, f64::max) + mix.noise.epsilon;
    a1 + a2 * f_sup
}

/// Largest out-degree over a set of graphs.
pub fn max_degree<'a>(graphs: impl Iterator<Item = &'a crate::sampler::GraphSignal>) -> usize {
    graphs.map(|g| (0..g.n_nodes()).map(|i| g.adjacency.out_degree(i)).max().unwrap_or(0)).max().unwrap_or(0)
}

/// Bounds of one trained model: ours (generalization), the two baselines,
/// and the measured gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub ours: f64,
    pub ours_sq: f64,
    pub pac_bayes: f64,
    pub rademacher: f64,
    pub gap: crate::train::GapReport,
    pub lip_psi: Vec<f64>,
    pub loss_lip: f64,
    pub loss_sup: f64,
}

pub fn model_bounds(
    w: &GraphSageWeights,
    aggregation: Aggregation,
    relu: bool,
    mix: &MixtureOfGraphons,
    dataset: &Dataset,
    bounds: &BoundConfig,
    compare: &CompareConfig,
) -> Result<ModelBounds> {
    let meta = graphsage_meta(w, aggregation, relu)?;
    let loss = loss_spec_for(w, classifier_input_bound(&meta, mix));
    let m_train = dataset.split.train.len();
    let gen = generalization_bound(mix, &meta, &loss, m_train, bounds)?;
    let f_sup = mix.classes.iter().map(|c| c.signal.sup_norm).fold(0.0, f64::max) + mix.noise.epsilon;
    let inputs = CompetitorInputs {
        max_degree: max_degree(dataset.train()),
        m: m_train,
        input_bound: f_sup,
        margin: compare.margin,
        delta: compare.delta,
    };
    let comp = competitor_bounds(w, &inputs)?;
    let gap = empirical_gap(w, aggregation, relu, dataset, &loss)?;
    Ok(ModelBounds {
        ours: gen.value,
        ours_sq: gen.squared,
        pac_bayes: comp.pac_bayes,
        rademacher: comp.rademacher,
        gap,
        lip_psi: meta.layers.iter().map(|l| l.lip_psi).collect(),
        loss_lip: loss.lip,
        loss_sup: loss.sup_norm,
    })
}

/// Node count used for the single-`N` parts of a report: the fixed size, or
/// the smallest size in the support.
fn report_n(size: &NodeCountDist) -> usize {
    size.support().first().map(|s| s.0).unwrap_or(2).max(2)
}

/// Full bound report for `weights` (or explicit layer metadata) on the
/// configured mixture. High-probability and per-graph constants are for the
/// class that drives the generalization constant `C`.
pub fn bound_report(
    cfg: &ExperimentConfig,
    meta: &ArchMeta,
    weights: Option<&GraphSageWeights>,
    dataset: Option<&Dataset>,
) -> Result<BoundReport> {
    let mix = cfg.mixture.build()?;
    let m_train = dataset.map(|d| d.split.train.len()).unwrap_or_else(|| crate::sampler::train_size(cfg.train.m, cfg.train.train_frac));
    let loss = match weights {
        Some(w) => loss_spec_for(w, classifier_input_bound(meta, &mix)),
        None => crate::space::LossSpec { lip: 1.0, sup_norm: 1.0 },
    };
    let gen = generalization_bound(&mix, meta, &loss, m_train, &cfg.bounds)?;
    let class = &mix.classes[gen.driving_class];
    let g = class.graphon.meta();
    let s = class.signal.meta();
    let inp = ConvergenceInputs { graphon: &g, signal: &s, arch: meta, n: report_n(&mix.size_dist), alpha: mix.alpha, epsilon: mix.noise.epsilon };
    let mut report = BoundReport::evaluate(inp, &cfg.bounds, Some((&mix, &loss, m_train)))?;
    if weights.is_none() {
        report.warnings.push("no weights given: the loss is taken as 1-Lipschitz and bounded by 1".into());
    }
    if let (Some(w), Some(ds)) = (weights, dataset) {
        let f_sup = mix.classes.iter().map(|c| c.signal.sup_norm).fold(0.0, f64::max) + mix.noise.epsilon;
        let inputs = CompetitorInputs {
            max_degree: max_degree(ds.train()),
            m: m_train,
            input_bound: f_sup,
            margin: cfg.compare.margin,
            delta: cfg.compare.delta,
        };
        report.competitors = Some(competitor_bounds(w, &inputs)?);
        report.empirical = Some(empirical_gap(w, meta.aggregation, cfg.arch.relu, ds, &loss)?);
    }
    Ok(report)
}

/// Architecture metadata from the config: explicit layers, weights file, or seeded init.
pub fn config_arch_meta(cfg: &ExperimentConfig, seed: u64) -> Result<(ArchMeta, Option<GraphSageWeights>)> {
    if let Some(layers) = &cfg.arch.layers {
        return Ok((ArchMeta { layers: layers.clone(), aggregation: cfg.arch.aggregation, lip_k: cfg.arch.lip_k }, None));
    }
    let w = cfg.arch.weights(seed)?;
    let mut meta = graphsage_meta(&w, cfg.arch.aggregation, cfg.arch.relu)?;
    meta.lip_k = cfg.arch.lip_k;
    Ok((meta, Some(w)))
}

/// Generates the configured dataset for a train-and-bound run.
pub fn config_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let mix = cfg.mixture.build()?;
    generate_dataset(&mix, cfg.train.m, cfg.train.train_frac, stream_seed(seed, 0, Role::Graph), cfg.mixture.sample_options())
}

/// Generates a dataset, trains one GraphSage model and evaluates every bound on it.
pub fn train_and_bound(cfg: &ExperimentConfig, seed: u64) -> Result<(GraphSageWeights, BoundReport)> {
    let dataset = config_dataset(cfg, seed)?;
    let init = GraphSageWeights::init(cfg.arch.depth, 1, cfg.arch.width, 2, &mut stream(seed, 0, Role::Init))?;
    let opts = cfg.train.options(cfg.arch.aggregation, cfg.train.weight_decay, stream_seed(seed, 0, Role::Shuffle));
    let trained = train_graphsage(&init, cfg.arch.aggregation, &dataset, &TrainOptions { relu: cfg.arch.relu, ..opts })?;
    let mut meta = graphsage_meta(&trained.weights, cfg.arch.aggregation, cfg.arch.relu)?;
    meta.lip_k = cfg.arch.lip_k;
    let report = bound_report(cfg, &meta, Some(&trained.weights), Some(&dataset))?;
    Ok((trained.weights, report))
}
