//! Graph convolutional networks with node-level gradient attribution.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the CLI uses.

pub mod dataset;
pub mod graph;
pub mod model;
pub mod nam;
pub mod niv;
pub mod perturb;
pub mod plot;
pub mod rng;
pub mod sample;
pub mod scalar;
pub mod train;

pub use dataset::{
    generate_synthetic, load_dataset, DatasetError, LoadOptions, LoadReport, NodeDataset, Splits, SyntheticConfig,
};
pub use graph::{GraphError, LinkStats, NormalizedAdjacency, SparseGraph};
pub use model::{accuracy, argmax, Activation, ForwardTrace, GcnModel, Layer, ModelError};
pub use nam::oracle::{finite_difference_gradient, path_enumeration};
pub use nam::{attribute, rank_nodes, AttributionError, AttributionQuery, AttributionResult, RankOrder};
pub use niv::{build_niv, emit_dot, emit_json, NivDocument, NivError, NivStyle};
pub use perturb::{
    curves_to_json, curves_to_tsv, run_perturbation, DeletionMode, PerturbError, PerturbationConfig,
    PerturbationCurve, Strategy, TargetSplit,
};
pub use plot::{parse_curves_tsv, render_svg, PlotError};
pub use scalar::Scalar;
pub use train::{train, TrainConfig, TrainError, TrainOutcome};

pub type Model = GcnModel<f64>;
pub type Trace = ForwardTrace<f64>;
pub type Dataset = NodeDataset<f64>;
pub type Adjacency = NormalizedAdjacency<f64>;
pub type Attribution = AttributionResult<f64>;
pub type Niv = NivDocument<f64>;

pub type Model32 = GcnModel<f32>;
pub type Dataset32 = NodeDataset<f32>;
