//! Shared fixtures for the criterion benchmarks.

use pointgroup_core::clustering::cluster_dual_set;
use pointgroup_core::synth::{generate, GenConfig};
use pointgroup_core::{
    score_clusters, Cluster, ClusterParams, OffsetField, Scene, ScorerKind, ScorerModel,
    ScoringInputs,
};

/// The ~130k-point benchmark room with its noisy offsets.
pub struct Fixture {
    pub scene: Scene,
    pub offsets: OffsetField,
    pub model: ScorerModel,
    pub clusters: Vec<Cluster>,
    pub scores: Vec<f64>,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let g = generate(&GenConfig::benchmark(seed)).expect("benchmark room");
        let model = ScorerModel::random(16, seed);
        let clusters =
            cluster_dual_set(&g.scene, &g.offsets, &ClusterParams::default()).expect("clustering");
        let inputs = ScoringInputs {
            model: Some(&model),
            gt: None,
        };
        let scores = score_clusters(&clusters, &g.scene, &g.offsets, ScorerKind::Model, inputs)
            .expect("scoring");
        Fixture {
            scene: g.scene,
            offsets: g.offsets,
            model,
            clusters,
            scores,
        }
    }

    pub fn inputs(&self) -> ScoringInputs<'_> {
        ScoringInputs {
            model: Some(&self.model),
            gt: None,
        }
    }
}
