//! Post-backbone instance segmentation for point clouds: dual-set clustering,
//! cluster scoring, non-maximum suppression, training-loss kernels and
//! average-precision evaluation, plus a synthetic scene generator to drive them.

// `!(x > 0.0)` is how validation rejects NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod clustering;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod nms;
pub mod pipeline;
pub mod ply;
pub mod scene;
pub mod scoring;
pub mod spatial;
pub mod synth;

pub use clustering::{
    cluster_dual_set, cluster_sets, cluster_single_set, connected_components_oracle, ClusterParams,
    CoordinateSets,
};
pub use error::{Error, Result, Violation};
pub use eval::{evaluate, EvalConfig, EvalResult};
pub use io::{
    load_offsets, load_predictions, load_scene, save_offsets, save_predictions, save_scene,
};
pub use pipeline::{run_pipeline, run_pipeline_timed, PipelineConfig, StageTimes};
pub use ply::export_ply;
pub use scene::{
    Cluster, GroundTruthInstance, InstancePrediction, OffsetField, Point, Scene, SceneData, Source,
};
pub use scoring::{score_clusters, ScorerKind, ScorerModel, ScoringInputs, TrainParams};
pub use spatial::GridIndex;
pub use synth::{
    generate, generate_corpus, generate_scene, random_scene, GenConfig, Generated, NoiseConfig,
    Sampling,
};
