//! Domain types shared by the whole pipeline.
//!
//! A [`Scene`] is validated once on construction and is read-only afterwards.
//! Coordinates are stored as `f32`; anything that accumulates over points
//! (centroids, losses) works in `f64`.

use std::collections::BTreeMap;

use crate::error::{Error, Result, Violation};

/// Tolerance on the sum of a per-point probability vector.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-5;

pub type Point = [f32; 3];

/// Raw, unvalidated scene contents. Convert with [`Scene::new`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneData {
    pub n_classes: usize,
    pub coords: Vec<Point>,
    pub colors: Vec<[u8; 3]>,
    /// Row-major `n_points × n_classes` probabilities.
    pub sem_scores: Option<Vec<f32>>,
    pub sem_labels: Vec<i32>,
    pub inst_ids: Vec<i32>,
    pub stuff_classes: Vec<i32>,
}

/// A labeled point cloud. All invariants hold for every constructed value.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    data: SceneData,
    n_instances: usize,
}

impl Scene {
    pub fn new(mut data: SceneData) -> Result<Self> {
        let n = data.coords.len();
        if data.colors.len() != n {
            return Err(Error::LengthMismatch {
                what: "colors",
                got: data.colors.len(),
                expected: n,
            });
        }
        if data.sem_labels.len() != n {
            return Err(Error::LengthMismatch {
                what: "sem_labels",
                got: data.sem_labels.len(),
                expected: n,
            });
        }
        if data.inst_ids.len() != n {
            return Err(Error::LengthMismatch {
                what: "inst_ids",
                got: data.inst_ids.len(),
                expected: n,
            });
        }
        if data.n_classes == 0 {
            return Err(Error::InvalidArgument("n_classes must be positive".into()));
        }
        let n_classes = data.n_classes;
        if let Some(scores) = &data.sem_scores {
            if scores.len() != n * n_classes {
                return Err(Error::LengthMismatch {
                    what: "sem_scores",
                    got: scores.len(),
                    expected: n * n_classes,
                });
            }
        }
        data.stuff_classes.sort_unstable();
        data.stuff_classes.dedup();
        if let Some(&c) = data
            .stuff_classes
            .iter()
            .find(|&&c| c < 0 || c as usize >= n_classes)
        {
            return Err(Error::InvalidArgument(format!(
                "stuff class {c} out of range for {n_classes} classes"
            )));
        }

        let fail = |point, violation| Error::Invariant { point, violation };
        // instance id -> (semantic label, first point)
        let mut instance_label: BTreeMap<i32, (i32, usize)> = BTreeMap::new();
        for i in 0..n {
            if data.coords[i].iter().any(|c| !c.is_finite()) {
                return Err(fail(i, Violation::NonFiniteCoordinate));
            }
            let label = data.sem_labels[i];
            if label < -1 || label >= n_classes as i32 {
                return Err(fail(i, Violation::LabelOutOfRange(label)));
            }
            if let Some(scores) = &data.sem_scores {
                let row = &scores[i * n_classes..(i + 1) * n_classes];
                let mut sum = 0.0f64;
                for &p in row {
                    if !p.is_finite() || p < 0.0 {
                        return Err(fail(i, Violation::BadScores));
                    }
                    sum += p as f64;
                }
                if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
                    return Err(fail(i, Violation::BadScores));
                }
                let argmax = argmax(row) as i32;
                if argmax != label {
                    return Err(fail(i, Violation::ArgmaxMismatch { label, argmax }));
                }
            }
            let inst = data.inst_ids[i];
            if inst < -1 {
                return Err(fail(i, Violation::InstanceOutOfRange(inst)));
            }
            if inst >= 0 {
                if label < 0 || data.stuff_classes.binary_search(&label).is_ok() {
                    return Err(fail(i, Violation::InstanceOnStuff));
                }
                let entry = instance_label.entry(inst).or_insert((label, i));
                if entry.0 != label {
                    return Err(fail(i, Violation::InstanceLabelInconsistency));
                }
            }
        }
        // Contiguity: ids present must be exactly 0..M.
        let n_instances = instance_label.len();
        if let Some((&bad, _)) = instance_label
            .iter()
            .find(|(&id, _)| id as usize >= n_instances)
        {
            let point = data.inst_ids.iter().position(|&id| id == bad).unwrap();
            return Err(fail(point, Violation::NonContiguousInstances));
        }
        Ok(Scene { data, n_instances })
    }

    pub fn n_points(&self) -> usize {
        self.data.coords.len()
    }

    pub fn n_classes(&self) -> usize {
        self.data.n_classes
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn coords(&self) -> &[Point] {
        &self.data.coords
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.data.colors
    }

    pub fn sem_scores(&self) -> Option<&[f32]> {
        self.data.sem_scores.as_deref()
    }

    /// Probability vector of point `i`, if scores are present.
    pub fn scores_of(&self, i: usize) -> Option<&[f32]> {
        let c = self.data.n_classes;
        self.data
            .sem_scores
            .as_ref()
            .map(|s| &s[i * c..(i + 1) * c])
    }

    pub fn sem_labels(&self) -> &[i32] {
        &self.data.sem_labels
    }

    pub fn inst_ids(&self) -> &[i32] {
        &self.data.inst_ids
    }

    /// Sorted, duplicate-free.
    pub fn stuff_classes(&self) -> &[i32] {
        &self.data.stuff_classes
    }

    pub fn is_stuff(&self, class: i32) -> bool {
        self.data.stuff_classes.binary_search(&class).is_ok()
    }

    /// Number of points that belong to some instance (the mask sum).
    pub fn n_instance_points(&self) -> usize {
        self.data.inst_ids.iter().filter(|&&id| id >= 0).count()
    }

    /// Ground-truth instances ordered by instance id.
    pub fn gt_instances(&self) -> Vec<GroundTruthInstance> {
        let mut out: Vec<GroundTruthInstance> = (0..self.n_instances)
            .map(|_| GroundTruthInstance {
                point_idx: Vec::new(),
                class_id: -1,
            })
            .collect();
        for (i, &id) in self.data.inst_ids.iter().enumerate() {
            if id >= 0 {
                let inst = &mut out[id as usize];
                inst.point_idx.push(i as u32);
                inst.class_id = self.data.sem_labels[i];
            }
        }
        out
    }

    pub fn data(&self) -> &SceneData {
        &self.data
    }

    pub fn into_data(self) -> SceneData {
        self.data
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (c, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = c;
        }
    }
    best
}

/// Per-point offset vectors in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    offsets: Vec<Point>,
}

impl OffsetField {
    pub fn new(offsets: Vec<Point>) -> Result<Self> {
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("offsets"));
        }
        Ok(OffsetField { offsets })
    }

    pub fn zeros(n: usize) -> Self {
        OffsetField {
            offsets: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn as_slice(&self) -> &[Point] {
        &self.offsets
    }

    pub fn into_inner(self) -> Vec<Point> {
        self.offsets
    }

    pub fn check_matches(&self, scene: &Scene) -> Result<()> {
        if self.len() != scene.n_points() {
            return Err(Error::LengthMismatch {
                what: "offsets",
                got: self.len(),
                expected: scene.n_points(),
            });
        }
        Ok(())
    }

    /// Shifted coordinates `p + o`.
    pub fn shifted(&self, scene: &Scene) -> Result<Vec<Point>> {
        self.check_matches(scene)?;
        Ok(scene
            .coords()
            .iter()
            .zip(&self.offsets)
            .map(|(p, o)| [p[0] + o[0], p[1] + o[1], p[2] + o[2]])
            .collect())
    }
}

/// Which coordinate set a cluster was grown on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Original,
    Shifted,
}

impl Source {
    pub fn flag(self) -> f64 {
        match self {
            Source::Original => 0.0,
            Source::Shifted => 1.0,
        }
    }
}

/// A candidate instance: a label-homogeneous group of points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    point_idx: Vec<u32>,
    class_id: i32,
    source: Source,
}

impl Cluster {
    /// `point_idx` must be non-empty, sorted and duplicate-free.
    pub fn new(point_idx: Vec<u32>, class_id: i32, source: Source) -> Result<Self> {
        check_index_set(&point_idx, "cluster")?;
        Ok(Cluster {
            point_idx,
            class_id,
            source,
        })
    }

    pub fn point_idx(&self) -> &[u32] {
        &self.point_idx
    }

    pub fn class_id(&self) -> i32 {
        self.class_id
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn len(&self) -> usize {
        self.point_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_idx.is_empty()
    }

    pub fn min_index(&self) -> u32 {
        self.point_idx[0]
    }

    /// Checks the scene-dependent invariants: members carry `class_id`, which is not stuff.
    pub fn validate(&self, scene: &Scene) -> Result<()> {
        if self.class_id < 0 || scene.is_stuff(self.class_id) {
            return Err(Error::InvalidArgument(format!(
                "cluster class {} is stuff or unlabeled",
                self.class_id
            )));
        }
        for &i in &self.point_idx {
            let i = i as usize;
            if i >= scene.n_points() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: scene.n_points(),
                });
            }
            if scene.sem_labels()[i] != self.class_id {
                return Err(Error::InvalidArgument(format!(
                    "cluster member {i} has label {} not {}",
                    scene.sem_labels()[i],
                    self.class_id
                )));
            }
        }
        Ok(())
    }
}

/// A final instance prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    point_idx: Vec<u32>,
    class_id: i32,
    score: f64,
}

impl InstancePrediction {
    pub fn new(point_idx: Vec<u32>, class_id: i32, score: f64) -> Result<Self> {
        check_index_set(&point_idx, "prediction")?;
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidArgument(format!(
                "prediction score {score} outside [0, 1]"
            )));
        }
        Ok(InstancePrediction {
            point_idx,
            class_id,
            score,
        })
    }

    pub fn point_idx(&self) -> &[u32] {
        &self.point_idx
    }

    pub fn class_id(&self) -> i32 {
        self.class_id
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

/// A ground-truth instance mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthInstance {
    pub point_idx: Vec<u32>,
    pub class_id: i32,
}

fn check_index_set(idx: &[u32], what: &'static str) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::Empty(what));
    }
    if idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "{what} indices must be sorted and duplicate-free"
        )));
    }
    Ok(())
}
