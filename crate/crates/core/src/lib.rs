//! Node embeddings for signed directed graphs.

pub mod eval;
pub mod graph;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod trainer;
pub mod triads;

pub use eval::{run_experiment, EmbeddingSource, EvalConfig, EvalError, MetricsReport, RunMetrics};
pub use graph::{
    load_edge_list, Edge, EdgeListFormat, EdgeSplit, LoadError, NodeId, Relation, Sign,
    SignedDigraph,
};
pub use losses::{BatchLoss, LossWeights};
pub use model::{Activation, Aggregator, ModelConfig, ParameterSet, StagedParams};
pub use numeric::{AdamConfig, AdamState, Tape, Tensor, ValueRef};
pub use trainer::{train, Checkpoint, EpochLoss, TrainConfig, TrainError, TrainOutcome};
pub use triads::{
    census, enumerate_triads, training_triangle_set, CensusReport, Triad, TrianglePolicy,
};
