//! Graphon-based random graph-signal models, message passing networks on
//! sampled graphs and their continuum limits, and the closed-form
//! convergence and generalization bounds that relate them.

// `!(x > 0.0)` is used on purpose throughout: unlike `x <= 0.0` it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cmpnn;
pub mod error;
pub mod harness;
pub mod mpnn;
pub mod rng;
pub mod sampler;
pub mod space;
pub mod train;

#[cfg(test)]
mod properties;

pub use error::{Error, Result};
pub use bounds::{BoundConfig, BoundReport, SparsityMode};
pub use harness::{ExperimentConfig, ExperimentKind};
pub use mpnn::{Aggregation, ArchMeta, GraphSageWeights, LayerMeta, MpnnArch};
pub use rng::Role;
pub use sampler::{Dataset, GraphSignal};
pub use space::{Graphon, GraphonFamily, GraphonMeta, LossSpec, MetricSignal, MixtureOfGraphons, NodeCountDist, NoiseModel, SignalFamily, SignalMeta};
