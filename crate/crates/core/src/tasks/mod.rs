//! Synthetic long-range-dependency tasks and an end-to-end training loop.
//!
//! Both tasks label every node with a property of the whole input, which a
//! per-node model cannot see. Any accuracy above chance must come from a
//! non-local layer.

pub mod data;
pub mod model;
pub mod train;

pub use data::{gen_grid_beacon, gen_point_clusters, BeaconSpec, ClusterSpec, Dataset, Provenance, Sample, TaskKind};
pub use model::{Block, Model, ModelConfig, ModelVariant};
pub use train::{curve_csv, eval, stage_preset, train, CurvePoint, Optimizer, TrainConfig, TrainReport};
