//! Inference driver: clustering → scoring → NMS → optional score filter.

use std::time::{Duration, Instant};

use crate::clustering::{cluster_sets, ClusterIndex, ClusterParams, CoordinateSets};
use crate::error::{Error, Result};
use crate::nms::nms;
use crate::scene::{Cluster, InstancePrediction, OffsetField, Scene, Source};
use crate::scoring::{score_clusters, ScorerKind, ScoringInputs};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub cluster: ClusterParams,
    pub sets: CoordinateSets,
    pub scorer: ScorerKind,
    pub nms_iou: f64,
    /// Drop predictions scoring below this after NMS.
    pub min_score: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cluster: ClusterParams::default(),
            sets: CoordinateSets::Both,
            scorer: ScorerKind::Model,
            nms_iou: 0.3,
            min_score: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "nms_iou {} outside (0, 1]",
                self.nms_iou
            )));
        }
        if let Some(m) = self.min_score {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::InvalidArgument(format!(
                    "min_score {m} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

fn finish(
    clusters: Vec<Cluster>,
    scores: &[f64],
    config: &PipelineConfig,
) -> Result<Vec<InstancePrediction>> {
    let kept = nms(&clusters, scores, config.nms_iou)?;
    let min = config.min_score.unwrap_or(f64::NEG_INFINITY);
    kept.into_iter()
        .filter(|&i| scores[i] >= min)
        .map(|i| {
            let c = &clusters[i];
            InstancePrediction::new(
                c.point_idx().to_vec(),
                c.class_id(),
                scores[i].clamp(0.0, 1.0),
            )
        })
        .collect()
}

pub fn run_pipeline(
    scene: &Scene,
    offsets: &OffsetField,
    config: &PipelineConfig,
    inputs: ScoringInputs<'_>,
) -> Result<Vec<InstancePrediction>> {
    config.validate()?;
    let clusters = cluster_sets(scene, offsets, &config.cluster, config.sets)?;
    let scores = score_clusters(&clusters, scene, offsets, config.scorer, inputs)?;
    finish(clusters, &scores, config)
}

/// Wall time of each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub ball_query_p: Duration,
    pub cluster_p: Duration,
    pub ball_query_q: Duration,
    pub cluster_q: Duration,
    pub scoring: Duration,
    pub nms: Duration,
    pub total: Duration,
}

impl StageTimes {
    pub const NAMES: [&'static str; 6] = [
        "ball_query_p",
        "cluster_p",
        "ball_query_q",
        "cluster_q",
        "scoring",
        "nms",
    ];

    pub fn stages(&self) -> [Duration; 6] {
        [
            self.ball_query_p,
            self.cluster_p,
            self.ball_query_q,
            self.cluster_q,
            self.scoring,
            self.nms,
        ]
    }

    pub fn accumulate(&mut self, other: &StageTimes) {
        self.ball_query_p += other.ball_query_p;
        self.cluster_p += other.cluster_p;
        self.ball_query_q += other.ball_query_q;
        self.cluster_q += other.cluster_q;
        self.scoring += other.scoring;
        self.nms += other.nms;
        self.total += other.total;
    }

    pub fn div(&self, n: u32) -> StageTimes {
        StageTimes {
            ball_query_p: self.ball_query_p / n,
            cluster_p: self.cluster_p / n,
            ball_query_q: self.ball_query_q / n,
            cluster_q: self.cluster_q / n,
            scoring: self.scoring / n,
            nms: self.nms / n,
            total: self.total / n,
        }
    }
}

/// Same output as [`run_pipeline`], with the two coordinate sets processed one after
/// the other so every stage can be timed on its own. The shifted coordinates are
/// computed inside the `ball_query_q` stage.
pub fn run_pipeline_timed(
    scene: &Scene,
    offsets: &OffsetField,
    config: &PipelineConfig,
    inputs: ScoringInputs<'_>,
) -> Result<(Vec<InstancePrediction>, StageTimes)> {
    config.validate()?;
    offsets.check_matches(scene)?;
    let mut t = StageTimes::default();
    let start = Instant::now();
    let labels = scene.sem_labels();
    let stuff = scene.stuff_classes();
    let mut clusters = Vec::new();

    if config.sets != CoordinateSets::Shifted {
        let s = Instant::now();
        let index = ClusterIndex::build(scene.coords(), labels, stuff, &config.cluster)?;
        t.ball_query_p = s.elapsed();
        let s = Instant::now();
        clusters.extend(index.grow(config.cluster.min_points, Source::Original));
        t.cluster_p = s.elapsed();
    }
    if config.sets != CoordinateSets::Original {
        let s = Instant::now();
        let shifted = offsets.shifted(scene)?;
        let index = ClusterIndex::build(&shifted, labels, stuff, &config.cluster)?;
        t.ball_query_q = s.elapsed();
        let s = Instant::now();
        clusters.extend(index.grow(config.cluster.min_points, Source::Shifted));
        t.cluster_q = s.elapsed();
    }

    let s = Instant::now();
    let scores = score_clusters(&clusters, scene, offsets, config.scorer, inputs)?;
    t.scoring = s.elapsed();

    let s = Instant::now();
    let preds = finish(clusters, &scores, config)?;
    t.nms = s.elapsed();
    t.total = start.elapsed();
    Ok((preds, t))
}
