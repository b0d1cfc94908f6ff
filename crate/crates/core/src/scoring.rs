//! Cluster quality: IoU against ground truth, soft score targets, the binary
//! cross-entropy score loss, and three interchangeable scorers.
//!
//! The trainable scorer is a one-hidden-layer tanh network over an
//! eight-entry geometric descriptor of each cluster, squashed by a sigmoid.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clustering::{cluster_sets, ClusterParams, CoordinateSets};
use crate::error::{Error, Result};
use crate::losses::{grad_check, Objective};
use crate::scene::{Cluster, GroundTruthInstance, OffsetField, Scene, Source};

/// Score clamp inside the cross entropy.
pub const SCORE_EPS: f64 = 1e-7;
pub const DESCRIPTOR_DIM: usize = 8;
/// Training features whose spread is below this are treated as constant and
/// ignored (stored stdev 0, normalized value 0).
pub const MIN_STDEV: f64 = 1e-8;
/// Gradient agreement required before training starts.
pub const GRAD_TOLERANCE: f64 = 1e-5;

pub type Descriptor = [f64; DESCRIPTOR_DIM];

/// `|a ∩ b| / |a ∪ b|` for sorted, duplicate-free index sets.
pub fn iou(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::Empty("both index sets"));
    }
    let inter = intersection_len(a, b);
    Ok(inter as f64 / (a.len() + b.len() - inter) as f64)
}

pub(crate) fn intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Largest IoU of `cluster` with any ground-truth instance, regardless of class.
pub fn best_iou(cluster: &Cluster, gt: &[GroundTruthInstance]) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth instances"));
    }
    gt.iter()
        .map(|g| iou(cluster.point_idx(), &g.point_idx))
        .try_fold(0.0f64, |m, v| Ok(m.max(v?)))
}

/// Point → instance lookup used to score many clusters in one pass.
pub struct InstanceLookup {
    owner: Vec<i32>,
    sizes: Vec<usize>,
}

impl InstanceLookup {
    pub fn new(n_points: usize, gt: &[GroundTruthInstance]) -> Result<Self> {
        let mut owner = vec![-1i32; n_points];
        for (k, g) in gt.iter().enumerate() {
            for &i in &g.point_idx {
                let slot = owner.get_mut(i as usize).ok_or(Error::IndexOutOfRange {
                    index: i as usize,
                    len: n_points,
                })?;
                *slot = k as i32;
            }
        }
        Ok(InstanceLookup {
            owner,
            sizes: gt.iter().map(|g| g.point_idx.len()).collect(),
        })
    }

    /// Same value as [`best_iou`], in time linear in the cluster size.
    /// Assumes the instances are pairwise disjoint.
    pub fn best_iou(&self, members: &[u32]) -> f64 {
        let mut hits: Vec<(i32, usize)> = Vec::new();
        for &i in members {
            let k = self.owner.get(i as usize).copied().unwrap_or(-1);
            if k < 0 {
                continue;
            }
            match hits.iter_mut().find(|(id, _)| *id == k) {
                Some(h) => h.1 += 1,
                None => hits.push((k, 1)),
            }
        }
        hits.into_iter()
            .map(|(k, inter)| {
                inter as f64 / (members.len() + self.sizes[k as usize] - inter) as f64
            })
            .fold(0.0, f64::max)
    }
}

/// IoU thresholds of the soft-label ramp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftLabelThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for SoftLabelThresholds {
    fn default() -> Self {
        SoftLabelThresholds {
            low: 0.25,
            high: 0.75,
        }
    }
}

impl SoftLabelThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.low < self.high) {
            return Err(Error::InvalidArgument(
                "soft-label thresholds need low < high".into(),
            ));
        }
        Ok(())
    }

    /// 0 below `low`, 1 above `high`, linear in between.
    pub fn soft_label(&self, iou_val: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&iou_val) {
            return Err(Error::InvalidArgument(format!(
                "IoU {iou_val} outside [0, 1]"
            )));
        }
        Ok(if iou_val < self.low {
            0.0
        } else if iou_val > self.high {
            1.0
        } else {
            (iou_val - self.low) / (self.high - self.low)
        })
    }
}

/// Soft label with the default thresholds.
pub fn soft_label(iou_val: f64) -> Result<f64> {
    SoftLabelThresholds::default().soft_label(iou_val)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTargets {
    pub iou: Vec<f64>,
    pub soft: Vec<f64>,
    pub thresholds: SoftLabelThresholds,
}

impl ScoreTargets {
    pub fn from_ious(iou: Vec<f64>, thresholds: SoftLabelThresholds) -> Result<Self> {
        thresholds.validate()?;
        let soft = iou
            .iter()
            .map(|&v| thresholds.soft_label(v))
            .collect::<Result<_>>()?;
        Ok(ScoreTargets {
            iou,
            soft,
            thresholds,
        })
    }
}

/// Binary cross entropy of one prediction, with the score clamped to `[ε, 1 − ε]`.
pub fn bce(score: f64, target: f64) -> f64 {
    let s = score.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    -(target * s.ln() + (1.0 - target) * (1.0 - s).ln())
}

/// Mean cross entropy between predicted scores and soft targets.
pub fn score_loss(pred_scores: &[f64], targets: &ScoreTargets) -> Result<f64> {
    if pred_scores.is_empty() {
        return Err(Error::Empty("cluster scores"));
    }
    if pred_scores.len() != targets.soft.len() {
        return Err(Error::LengthMismatch {
            what: "scores",
            got: pred_scores.len(),
            expected: targets.soft.len(),
        });
    }
    let sum: f64 = pred_scores
        .iter()
        .zip(&targets.soft)
        .map(|(&s, &y)| bce(s, y))
        .sum();
    Ok(sum / pred_scores.len() as f64)
}

/// Geometric summary of a cluster in the coordinate set it was grown on:
/// `[ln n, extent x, extent y, extent z, mean centroid distance,
///   stdev of that distance, mean probability of the class, source flag]`.
pub fn cluster_descriptor(cluster: &Cluster, scene: &Scene, offsets: &OffsetField) -> Descriptor {
    let coords = scene.coords();
    let shift = cluster.source() == Source::Shifted;
    let point = |i: u32| -> [f64; 3] {
        let p = coords[i as usize];
        if shift {
            let o = offsets.as_slice()[i as usize];
            [
                (p[0] + o[0]) as f64,
                (p[1] + o[1]) as f64,
                (p[2] + o[2]) as f64,
            ]
        } else {
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    };
    let n = cluster.len() as f64;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut sum = [0.0; 3];
    for &i in cluster.point_idx() {
        let p = point(i);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
            sum[a] += p[a];
        }
    }
    let c = [sum[0] / n, sum[1] / n, sum[2] / n];
    let mut d_sum = 0.0;
    let mut d_sq = 0.0;
    let mut prob = 0.0;
    for &i in cluster.point_idx() {
        let p = point(i);
        let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
        d_sum += d;
        d_sq += d * d;
        prob += match scene.scores_of(i as usize) {
            Some(row) => row[cluster.class_id() as usize] as f64,
            None => 1.0,
        };
    }
    let mean_d = d_sum / n;
    let var = (d_sq / n - mean_d * mean_d).max(0.0);
    [
        n.ln(),
        hi[0] - lo[0],
        hi[1] - lo[1],
        hi[2] - lo[2],
        mean_d,
        var.sqrt(),
        prob / n,
        cluster.source().flag(),
    ]
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Normalization statistics plus a `dim → hidden → 1` tanh network.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
    /// `hidden` rows of `dim` weights.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ScorerModel {
    /// All-zero weights with identity normalization; scores every cluster 0.5.
    pub fn zeros(hidden: usize) -> Self {
        ScorerModel {
            mean: vec![0.0; DESCRIPTOR_DIM],
            stdev: vec![1.0; DESCRIPTOR_DIM],
            w1: vec![vec![0.0; DESCRIPTOR_DIM]; hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(hidden);
        let a1 = (6.0 / (DESCRIPTOR_DIM + hidden) as f64).sqrt();
        for row in &mut m.w1 {
            for w in row.iter_mut() {
                *w = rng.random_range(-a1..a1);
            }
        }
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        for w in &mut m.w2 {
            *w = rng.random_range(-a2..a2);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.dim(), self.hidden());
        if d != DESCRIPTOR_DIM {
            return Err(Error::InvalidArgument(format!(
                "scorer expects {DESCRIPTOR_DIM}-dim descriptors, got {d}"
            )));
        }
        if self.stdev.len() != d
            || self.w1.len() != h
            || self.w1.iter().any(|r| r.len() != d)
            || self.w2.len() != h
        {
            return Err(Error::InvalidArgument(
                "scorer weight shapes disagree".into(),
            ));
        }
        if self.stdev.iter().any(|&s| !(s == 0.0 || s >= MIN_STDEV)) {
            return Err(Error::InvalidArgument(format!(
                "scorer stdev entries must be 0 or >= {MIN_STDEV}"
            )));
        }
        let all = self
            .mean
            .iter()
            .chain(&self.stdev)
            .chain(self.w1.iter().flatten())
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2));
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scorer weights"));
        }
        Ok(())
    }

    pub fn normalize(&self, d: &Descriptor) -> Descriptor {
        let mut x = [0.0; DESCRIPTOR_DIM];
        for a in 0..DESCRIPTOR_DIM {
            if self.stdev[a] > 0.0 {
                x[a] = (d[a] - self.mean[a]) / self.stdev[a];
            }
        }
        x
    }

    /// Pre-sigmoid output for an already-normalized descriptor.
    pub fn logit(&self, x: &Descriptor) -> f64 {
        let mut z = self.b2;
        for ((row, b), w) in self.w1.iter().zip(&self.b1).zip(&self.w2) {
            let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
            z += w * a.tanh();
        }
        z
    }

    pub fn score(&self, d: &Descriptor) -> f64 {
        sigmoid(self.logit(&self.normalize(d)))
    }

    fn flatten(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.w1.iter().flatten().copied().collect();
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    fn set_flat(&mut self, p: &[f64]) {
        let (d, h) = (self.dim(), self.hidden());
        for (k, row) in self.w1.iter_mut().enumerate() {
            row.copy_from_slice(&p[k * d..(k + 1) * d]);
        }
        self.b1.copy_from_slice(&p[h * d..h * d + h]);
        self.w2.copy_from_slice(&p[h * d + h..h * d + 2 * h]);
        self.b2 = p[h * d + 2 * h];
    }

    /// Text form: `SCORER1 <dim> <hidden>`, then mean, stdev, `w1` rows,
    /// `b1`, `w2` and `b2`, one line each, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = format!("SCORER1 {} {}\n", self.dim(), self.hidden());
        let mut line = |vals: &[f64]| {
            let row: Vec<String> = vals.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        };
        line(&self.mean);
        line(&self.stdev);
        for row in &self.w1 {
            line(row);
        }
        line(&self.b1);
        line(&self.w2);
        line(&[self.b2]);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let header = text.lines().next().unwrap_or_default();
        let t: Vec<&str> = header.split_whitespace().collect();
        if t.len() != 3 || t[0] != "SCORER1" {
            return Err(Error::parse(
                1,
                "malformed header, expected `SCORER1 <dim> <hidden>`",
            ));
        }
        let d: usize = t[1]
            .parse()
            .map_err(|_| Error::parse(1, "invalid dimension"))?;
        let h: usize = t[2]
            .parse()
            .map_err(|_| Error::parse(1, "invalid hidden size"))?;
        let mut lines = text.lines().enumerate().skip(1);
        let mut row = |want: usize| -> Result<Vec<f64>> {
            let (i, l) = lines
                .next()
                .ok_or_else(|| Error::parse(0, "unexpected end of scorer file"))?;
            let vals = l
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(i + 1, format!("invalid weight `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != want {
                return Err(Error::parse(
                    i + 1,
                    format!(
                        "field count mismatch: expected {want}, found {}",
                        vals.len()
                    ),
                ));
            }
            Ok(vals)
        };
        let mean = row(d)?;
        let stdev = row(d)?;
        let w1 = (0..h).map(|_| row(d)).collect::<Result<Vec<_>>>()?;
        let b1 = row(h)?;
        let w2 = row(h)?;
        let b2 = row(1)?[0];
        let m = ScorerModel {
            mean,
            stdev,
            w1,
            b1,
            w2,
            b2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    /// Best IoU against ground truth.
    Oracle,
    /// Mean semantic probability of the cluster's class.
    SemProb,
    /// Trained descriptor network.
    Model,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScoringInputs<'a> {
    pub model: Option<&'a ScorerModel>,
    pub gt: Option<&'a [GroundTruthInstance]>,
}

/// One score in `[0, 1]` per cluster.
pub fn score_clusters(
    clusters: &[Cluster],
    scene: &Scene,
    offsets: &OffsetField,
    scorer: ScorerKind,
    inputs: ScoringInputs<'_>,
) -> Result<Vec<f64>> {
    match scorer {
        ScorerKind::Oracle => {
            let gt = inputs
                .gt
                .ok_or(Error::Unavailable("oracle scorer requires ground truth"))?;
            let lookup = InstanceLookup::new(scene.n_points(), gt)?;
            Ok(clusters
                .par_iter()
                .map(|c| lookup.best_iou(c.point_idx()))
                .collect())
        }
        ScorerKind::SemProb => {
            if scene.sem_scores().is_none() {
                return Err(Error::Unavailable(
                    "semantic-probability scorer requires semantic scores",
                ));
            }
            Ok(clusters
                .par_iter()
                .map(|c| {
                    let sum: f64 = c
                        .point_idx()
                        .iter()
                        .map(|&i| {
                            scene.scores_of(i as usize).unwrap()[c.class_id() as usize] as f64
                        })
                        .sum();
                    (sum / c.len() as f64).clamp(0.0, 1.0)
                })
                .collect())
        }
        ScorerKind::Model => {
            let model = inputs
                .model
                .ok_or(Error::Unavailable("model scorer requires a trained model"))?;
            model.validate()?;
            offsets.check_matches(scene)?;
            Ok(clusters
                .par_iter()
                .map(|c| model.score(&cluster_descriptor(c, scene, offsets)))
                .collect())
        }
    }
}

/// Mean cross entropy of a network over fixed (normalized descriptor, target) pairs,
/// as a function of the flattened weights `[w1 rows, b1, w2, b2]`.
pub struct ScorerObjective {
    pub inputs: Vec<Descriptor>,
    pub targets: Vec<f64>,
    pub hidden: usize,
}

impl ScorerObjective {
    fn model(&self, p: &[f64]) -> ScorerModel {
        let mut m = ScorerModel::zeros(self.hidden);
        m.set_flat(p);
        m
    }

    pub fn n_params(&self) -> usize {
        self.hidden * (DESCRIPTOR_DIM + 2) + 1
    }
}

impl Objective for ScorerObjective {
    fn value(&self, p: &[f64]) -> Result<f64> {
        let m = self.model(p);
        let sum: f64 = self
            .inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, &y)| bce(sigmoid(m.logit(x)), y))
            .sum();
        Ok(sum / self.inputs.len() as f64)
    }

    fn gradient(&self, p: &[f64]) -> Result<Vec<f64>> {
        let m = self.model(p);
        let (d, h) = (DESCRIPTOR_DIM, self.hidden);
        let n = self.inputs.len() as f64;
        let mut g = vec![0.0; self.n_params()];
        let mut act = vec![0.0; h];
        for (x, &y) in self.inputs.iter().zip(&self.targets) {
            for k in 0..h {
                let z: f64 = m.w1[k].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + m.b1[k];
                act[k] = z.tanh();
            }
            let z2 = m.b2 + m.w2.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
            let s = sigmoid(z2);
            // The clamp flattens the loss outside [ε, 1 − ε].
            if !(SCORE_EPS..=1.0 - SCORE_EPS).contains(&s) {
                continue;
            }
            let dz2 = (s - y) / n;
            for k in 0..h {
                g[h * d + h + k] += dz2 * act[k];
                let dz1 = dz2 * m.w2[k] * (1.0 - act[k] * act[k]);
                for a in 0..d {
                    g[k * d + a] += dz1 * x[a];
                }
                g[h * d + k] += dz1;
            }
            g[h * d + 2 * h] += dz2;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            hidden: 16,
            lr: 0.5,
            epochs: 2000,
            seed: 0,
        }
    }
}

/// One training scene: clustering input plus the ground truth it is scored against.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub scene: Scene,
    pub offsets: OffsetField,
    pub gt: Vec<GroundTruthInstance>,
}

/// (descriptor, soft label) pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub descriptors: Vec<Descriptor>,
    pub soft: Vec<f64>,
}

/// Descriptors and soft labels of every dual-set cluster in the corpus.
pub fn harvest(
    corpus: &[CorpusItem],
    cluster_params: &ClusterParams,
    thresholds: SoftLabelThresholds,
) -> Result<TrainingSet> {
    let mut set = TrainingSet::default();
    for item in corpus {
        let clusters = cluster_sets(
            &item.scene,
            &item.offsets,
            cluster_params,
            CoordinateSets::Both,
        )?;
        let lookup = InstanceLookup::new(item.scene.n_points(), &item.gt)?;
        for c in &clusters {
            set.descriptors
                .push(cluster_descriptor(c, &item.scene, &item.offsets));
            set.soft
                .push(thresholds.soft_label(lookup.best_iou(c.point_idx()))?);
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub grad_check_error: f64,
    pub n_samples: usize,
}

/// Full-batch gradient descent on the score cross entropy.
pub fn train_on_set(set: &TrainingSet, params: &TrainParams) -> Result<(ScorerModel, TrainReport)> {
    let n = set.descriptors.len();
    if n == 0 {
        return Err(Error::Empty("training clusters"));
    }
    if params.hidden == 0 || !(params.lr > 0.0) {
        return Err(Error::InvalidArgument(
            "hidden size and learning rate must be positive".into(),
        ));
    }
    let mut model = ScorerModel::random(params.hidden, params.seed);
    for a in 0..DESCRIPTOR_DIM {
        let mean = set.descriptors.iter().map(|d| d[a]).sum::<f64>() / n as f64;
        let var = set
            .descriptors
            .iter()
            .map(|d| (d[a] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        model.mean[a] = mean;
        let sd = var.sqrt();
        model.stdev[a] = if sd < MIN_STDEV { 0.0 } else { sd };
    }
    let objective = ScorerObjective {
        inputs: set.descriptors.iter().map(|d| model.normalize(d)).collect(),
        targets: set.soft.clone(),
        hidden: params.hidden,
    };
    let mut p = model.flatten();

    let probe = ScorerObjective {
        inputs: objective.inputs.iter().take(64).copied().collect(),
        targets: objective.targets.iter().take(64).copied().collect(),
        hidden: params.hidden,
    };
    let grad_check_error = grad_check(&probe, &p)?;
    if grad_check_error > GRAD_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "scorer gradient check failed: relative error {grad_check_error:e}"
        )));
    }

    let initial_loss = objective.value(&p)?;
    let mut loss = initial_loss;
    for epoch in 0..params.epochs {
        let g = objective.gradient(&p)?;
        for (w, gw) in p.iter_mut().zip(&g) {
            *w -= params.lr * gw;
        }
        loss = objective.value(&p)?;
        if !loss.is_finite() || p.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
    }
    model.set_flat(&p);
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss: loss,
            grad_check_error,
            n_samples: n,
        },
    ))
}

/// Harvests the corpus and trains a scorer on it.
pub fn train_scorer(
    corpus: &[CorpusItem],
    cluster_params: &ClusterParams,
    params: &TrainParams,
) -> Result<(ScorerModel, TrainReport)> {
    let set = harvest(corpus, cluster_params, SoftLabelThresholds::default())?;
    train_on_set(&set, params)
}

/// Worst gradient-check error of each analytic gradient over `points` random
/// evaluation points: offset regression, offset direction and scorer BCE.
///
/// Offset predictions are drawn with every residual at least 1e-2 from zero so
/// the L1 term stays off its kink.
pub fn gradient_check_suite(seed: u64, points: usize) -> Result<[(&'static str, f64); 3]> {
    use crate::losses::{offset_targets_f64, OffsetDirObjective, OffsetRegObjective};
    use crate::synth::{generate_scene, GenConfig};
    use rand::{Rng, SeedableRng};

    if points == 0 {
        return Err(Error::InvalidArgument(
            "need at least one evaluation point".into(),
        ));
    }
    let (scene, _) = generate_scene(&GenConfig {
        seed,
        room: [3.0, 3.0, 1.5],
        n_objects: 3,
        object_size: (0.2, 0.3),
        object_density: 1500.0,
        stuff_density: 30.0,
        ..Default::default()
    })?;
    let (targets, mask) = offset_targets_f64(&scene);
    let reg = OffsetRegObjective {
        targets: targets.clone(),
        mask: mask.clone(),
    };
    let dir = OffsetDirObjective { targets, mask };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let scorer = ScorerObjective {
        inputs: (0..64)
            .map(|_| [0.0; DESCRIPTOR_DIM].map(|_: f64| rng.random_range(-2.0..2.0)))
            .collect(),
        targets: (0..64).map(|_| rng.random_range(0.0..1.0)).collect(),
        hidden: 16,
    };
    let mut worst = [0.0f64; 3];
    for _ in 0..points {
        let x: Vec<f64> = reg
            .targets
            .iter()
            .flat_map(|t| *t)
            .map(|t| {
                let r: f64 = rng.random_range(0.01..0.2);
                if rng.random_bool(0.5) {
                    t + r
                } else {
                    t - r
                }
            })
            .collect();
        let w: Vec<f64> = (0..scorer.n_params())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        worst[0] = worst[0].max(grad_check(&reg, &x)?);
        worst[1] = worst[1].max(grad_check(&dir, &x)?);
        worst[2] = worst[2].max(grad_check(&scorer, &w)?);
    }
    Ok([
        ("l_offset_reg", worst[0]),
        ("l_offset_dir", worst[1]),
        ("l_score", worst[2]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneData;

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(iou(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert_eq!(iou(&[1, 2, 3, 4], &[3, 4, 5, 6, 7, 8]).unwrap(), 0.25);
        assert_eq!(iou(&[], &[1]).unwrap(), 0.0);
        assert!(iou(&[], &[]).is_err());
    }

    #[test]
    fn soft_label_ramp() {
        assert_eq!(soft_label(0.2).unwrap(), 0.0);
        assert_eq!(soft_label(0.8).unwrap(), 1.0);
        assert_eq!(soft_label(0.5).unwrap(), 0.5);
        assert_eq!(soft_label(0.25).unwrap(), 0.0);
        assert_eq!(soft_label(0.75).unwrap(), 1.0);
        assert!(soft_label(-0.1).is_err());
        assert!(soft_label(1.1).is_err());
        assert!(SoftLabelThresholds {
            low: 0.5,
            high: 0.5
        }
        .validate()
        .is_err());
    }

    #[test]
    fn bce_values() {
        let t = ScoreTargets::from_ious(vec![1.0; 3], Default::default()).unwrap();
        assert!(score_loss(&[1.0; 3], &t).unwrap() < 1e-6);
        let t = ScoreTargets {
            iou: vec![0.5; 2],
            soft: vec![0.5; 2],
            thresholds: Default::default(),
        };
        assert!((score_loss(&[0.5, 0.5], &t).unwrap() - 2f64.ln()).abs() < 1e-9);
        assert!(score_loss(&[], &t).is_err());
    }

    #[test]
    fn bce_minimized_at_target() {
        for &y in &[0.0, 0.1, 0.3, 0.5, 0.9, 1.0] {
            let grid: Vec<f64> = (1..1000).map(|k| k as f64 / 1000.0).collect();
            let best = grid
                .iter()
                .copied()
                .min_by(|a, b| bce(*a, y).partial_cmp(&bce(*b, y)).unwrap())
                .unwrap();
            assert!(
                (best - y.clamp(0.001, 0.999)).abs() < 1e-9,
                "y={y} best={best}"
            );
        }
    }

    fn line_scene() -> Scene {
        let n = 6;
        Scene::new(SceneData {
            n_classes: 3,
            coords: (0..n).map(|i| [i as f32 * 0.1, 0.0, 0.0]).collect(),
            colors: vec![[0; 3]; n],
            sem_scores: None,
            sem_labels: vec![1, 1, 1, 2, 2, 0],
            inst_ids: vec![0, 0, 0, 1, 1, -1],
            stuff_classes: vec![0],
        })
        .unwrap()
    }

    #[test]
    fn best_iou_and_lookup_agree() {
        let s = line_scene();
        let gt = s.gt_instances();
        let lookup = InstanceLookup::new(s.n_points(), &gt).unwrap();
        let sets: [&[u32]; 4] = [&[0, 1, 2], &[1, 2, 3], &[5], &[0, 3, 4]];
        for m in sets {
            let c = Cluster::new(m.to_vec(), 1, Source::Original).unwrap();
            assert_eq!(best_iou(&c, &gt).unwrap(), lookup.best_iou(m));
        }
        let c = Cluster::new(vec![0, 1, 2], 1, Source::Original).unwrap();
        assert_eq!(best_iou(&c, &gt).unwrap(), 1.0);
        assert!(best_iou(&c, &[]).is_err());
    }

    #[test]
    fn descriptor_of_singleton() {
        let s = line_scene();
        let c = Cluster::new(vec![2], 1, Source::Original).unwrap();
        let d = cluster_descriptor(&c, &s, &OffsetField::zeros(6));
        assert_eq!(d, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn scorers_need_their_inputs() {
        let s = line_scene();
        let o = OffsetField::zeros(6);
        let c = vec![Cluster::new(vec![0, 1, 2], 1, Source::Original).unwrap()];
        let none = ScoringInputs::default();
        assert!(score_clusters(&c, &s, &o, ScorerKind::Oracle, none).is_err());
        assert!(score_clusters(&c, &s, &o, ScorerKind::Model, none).is_err());
        assert!(score_clusters(&c, &s, &o, ScorerKind::SemProb, none).is_err());
        let zero = ScorerModel::zeros(16);
        let scores = score_clusters(
            &c,
            &s,
            &o,
            ScorerKind::Model,
            ScoringInputs {
                model: Some(&zero),
                gt: None,
            },
        )
        .unwrap();
        assert_eq!(scores, vec![0.5]);
    }

    #[test]
    fn model_text_round_trip() {
        let mut m = ScorerModel::random(4, 9);
        m.mean[3] = 1.0 / 3.0;
        m.stdev[2] = 2.5e-3;
        let text = m.to_text();
        assert!(text.starts_with("SCORER1 8 4\n"));
        assert_eq!(ScorerModel::from_text(&text).unwrap(), m);
        assert!(ScorerModel::from_text("SCORER1 8 4\n1 2\n").is_err());
        let mut bad = m.clone();
        bad.stdev[0] = 1e-9;
        assert!(ScorerModel::from_text(&bad.to_text()).is_err());
        bad.stdev[0] = 0.0;
        assert!(ScorerModel::from_text(&bad.to_text()).is_ok());
    }

    #[test]
    fn constant_training_features_are_ignored() {
        let mut m = ScorerModel::random(4, 1);
        m.mean[6] = 1.0;
        m.stdev[6] = 0.0;
        let mut d = [0.5; DESCRIPTOR_DIM];
        let a = m.score(&d);
        d[6] = -40.0;
        assert_eq!(m.score(&d), a);
    }

    fn toy_set(n: usize) -> TrainingSet {
        let mut set = TrainingSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..n {
            let mut d = [0.0; DESCRIPTOR_DIM];
            for v in d.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let y = if d[0] + 0.5 * d[4] > 0.0 { 1.0 } else { 0.0 };
            set.descriptors.push(d);
            set.soft.push(y);
        }
        set
    }

    #[test]
    fn scorer_gradient_matches_central_differences() {
        let set = toy_set(40);
        let model = ScorerModel::random(16, 3);
        let obj = ScorerObjective {
            inputs: set.descriptors.clone(),
            targets: set.soft.iter().map(|y| 0.2 + 0.6 * y).collect(),
            hidden: 16,
        };
        assert!(grad_check(&obj, &model.flatten()).unwrap() <= GRAD_TOLERANCE);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let set = toy_set(200);
        let params = TrainParams {
            epochs: 300,
            ..Default::default()
        };
        let (m1, r1) = train_on_set(&set, &params).unwrap();
        let (m2, r2) = train_on_set(&set, &params).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert!(r1.final_loss < r1.initial_loss);
        assert!(r1.grad_check_error <= GRAD_TOLERANCE);
    }

    #[test]
    fn constant_target_descends() {
        let mut set = toy_set(50);
        set.soft.iter_mut().for_each(|y| *y = 1.0);
        let (_, r) = train_on_set(
            &set,
            &TrainParams {
                epochs: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.final_loss < r.initial_loss);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(train_on_set(&TrainingSet::default(), &TrainParams::default()).is_err());
    }
}
