//! Training-loss kernels for the semantic and offset branches, their sum, and
//! a central-difference gradient checker.
//!
//! Every reduction runs sequentially in `f64` so results do not depend on
//! thread count.

use crate::error::{Error, Result};
use crate::scene::{OffsetField, Point, Scene};

/// Log clamp for the semantic cross entropy.
pub const SEM_LOG_EPS: f64 = 1e-12;
/// Below this norm a direction term contributes nothing.
pub const DIR_NORM_EPS: f64 = 1e-8;
/// Central-difference step.
pub const GRAD_STEP: f64 = 1e-4;

pub type Vec3 = [f64; 3];

/// Mean coordinate of every instance, indexed by instance id.
pub fn instance_centroids(scene: &Scene) -> Result<Vec<Vec3>> {
    if scene.n_instances() == 0 {
        return Err(Error::Empty("scene has no instances"));
    }
    let mut sums = vec![[0.0f64; 3]; scene.n_instances()];
    let mut counts = vec![0usize; scene.n_instances()];
    for (p, &id) in scene.coords().iter().zip(scene.inst_ids()) {
        if id >= 0 {
            let s = &mut sums[id as usize];
            for a in 0..3 {
                s[a] += p[a] as f64;
            }
            counts[id as usize] += 1;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| [s[0] / c as f64, s[1] / c as f64, s[2] / c as f64])
        .collect())
}

/// Per-point regression targets `ĉ − p` in `f64`, zero off-instance, with the instance mask.
pub fn offset_targets_f64(scene: &Scene) -> (Vec<Vec3>, Vec<bool>) {
    let centroids = instance_centroids(scene).unwrap_or_default();
    scene
        .coords()
        .iter()
        .zip(scene.inst_ids())
        .map(|(p, &id)| {
            if id < 0 {
                ([0.0; 3], false)
            } else {
                let c = centroids[id as usize];
                (
                    [c[0] - p[0] as f64, c[1] - p[1] as f64, c[2] - p[2] as f64],
                    true,
                )
            }
        })
        .unzip()
}

/// Oracle offsets: each instance point moves onto its instance centroid.
pub fn offset_targets(scene: &Scene) -> OffsetField {
    let (t, _) = offset_targets_f64(scene);
    OffsetField::new(
        t.into_iter()
            .map(|v| [v[0] as f32, v[1] as f32, v[2] as f32])
            .collect(),
    )
    .expect("targets are finite")
}

/// Mean negative log-probability of the labeled class over points with `gt_labels >= 0`.
pub fn l_sem(scores: &[f32], n_classes: usize, gt_labels: &[i32]) -> Result<f64> {
    if scores.len() != gt_labels.len() * n_classes {
        return Err(Error::LengthMismatch {
            what: "sem_scores",
            got: scores.len(),
            expected: gt_labels.len() * n_classes,
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, &g) in gt_labels.iter().enumerate() {
        if g < 0 {
            continue;
        }
        if g as usize >= n_classes {
            return Err(Error::InvalidArgument(format!("label {g} out of range")));
        }
        let p = scores[i * n_classes + g as usize] as f64;
        sum -= p.max(SEM_LOG_EPS).ln();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("no labeled points"));
    }
    Ok(sum / n as f64)
}

fn check_lengths(pred: usize, targets: usize) -> Result<()> {
    if pred != targets {
        return Err(Error::LengthMismatch {
            what: "offsets",
            got: pred,
            expected: targets,
        });
    }
    Ok(())
}

fn mask_count(mask: &[bool]) -> Result<f64> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::Empty("no instance points"));
    }
    Ok(n as f64)
}

/// Mean L1 distance between predicted offsets and targets over masked points.
pub fn offset_reg_loss(pred: &[Vec3], targets: &[Vec3], mask: &[bool]) -> Result<f64> {
    check_lengths(pred.len(), targets.len())?;
    let n = mask_count(mask)?;
    let mut sum = 0.0;
    for ((o, t), &m) in pred.iter().zip(targets).zip(mask) {
        if m {
            sum += (o[0] - t[0]).abs() + (o[1] - t[1]).abs() + (o[2] - t[2]).abs();
        }
    }
    Ok(sum / n)
}

/// Gradient of [`offset_reg_loss`] w.r.t. the flattened predictions (subgradient 0 at kinks).
pub fn offset_reg_grad(pred: &[Vec3], targets: &[Vec3], mask: &[bool]) -> Result<Vec<f64>> {
    check_lengths(pred.len(), targets.len())?;
    let n = mask_count(mask)?;
    let mut g = vec![0.0; pred.len() * 3];
    for (i, ((o, t), &m)) in pred.iter().zip(targets).zip(mask).enumerate() {
        if m {
            for a in 0..3 {
                let d = o[a] - t[a];
                g[3 * i + a] = if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                };
            }
        }
    }
    Ok(g)
}

fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Negative mean cosine similarity between predicted offsets and targets.
pub fn offset_dir_loss(pred: &[Vec3], targets: &[Vec3], mask: &[bool]) -> Result<f64> {
    check_lengths(pred.len(), targets.len())?;
    let n = mask_count(mask)?;
    let mut sum = 0.0;
    for ((o, t), &m) in pred.iter().zip(targets).zip(mask) {
        let (no, nt) = (norm(o), norm(t));
        if m && no >= DIR_NORM_EPS && nt >= DIR_NORM_EPS {
            sum += dot(o, t) / (no * nt);
        }
    }
    Ok(-sum / n)
}

pub fn offset_dir_grad(pred: &[Vec3], targets: &[Vec3], mask: &[bool]) -> Result<Vec<f64>> {
    check_lengths(pred.len(), targets.len())?;
    let n = mask_count(mask)?;
    let mut g = vec![0.0; pred.len() * 3];
    for (i, ((o, t), &m)) in pred.iter().zip(targets).zip(mask).enumerate() {
        let (no, nt) = (norm(o), norm(t));
        if !(m && no >= DIR_NORM_EPS && nt >= DIR_NORM_EPS) {
            continue;
        }
        let u = [t[0] / nt, t[1] / nt, t[2] / nt];
        let ou = dot(o, &u);
        for a in 0..3 {
            g[3 * i + a] = -(u[a] / no - ou * o[a] / (no * no * no)) / n;
        }
    }
    Ok(g)
}

fn to_f64(points: &[Point]) -> Vec<Vec3> {
    points
        .iter()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect()
}

/// L1 offset regression loss of `pred` against the scene's centroid targets.
pub fn l_offset_reg(pred: &OffsetField, scene: &Scene) -> Result<f64> {
    pred.check_matches(scene)?;
    let (t, m) = offset_targets_f64(scene);
    offset_reg_loss(&to_f64(pred.as_slice()), &t, &m)
}

/// Direction loss of `pred` against the scene's centroid targets.
pub fn l_offset_dir(pred: &OffsetField, scene: &Scene) -> Result<f64> {
    pred.check_matches(scene)?;
    let (t, m) = offset_targets_f64(scene);
    offset_dir_loss(&to_f64(pred.as_slice()), &t, &m)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub l_sem: f64,
    pub l_o_reg: f64,
    pub l_o_dir: f64,
    pub l_c_score: f64,
}

/// Which terms have an analytic gradient in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientFlags {
    pub l_sem: bool,
    pub l_o_reg: bool,
    pub l_o_dir: bool,
    pub l_c_score: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_sem: f64,
    pub l_o_reg: f64,
    pub l_o_dir: f64,
    pub l_c_score: f64,
    pub total: f64,
    pub gradients: GradientFlags,
}

/// Unweighted sum of the four terms.
pub fn total_loss(parts: LossParts) -> Result<LossReport> {
    let LossParts {
        l_sem,
        l_o_reg,
        l_o_dir,
        l_c_score,
    } = parts;
    if ![l_sem, l_o_reg, l_o_dir, l_c_score]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite("loss term"));
    }
    Ok(LossReport {
        l_sem,
        l_o_reg,
        l_o_dir,
        l_c_score,
        total: l_sem + l_o_dir + l_o_reg + l_c_score,
        gradients: GradientFlags {
            l_sem: false,
            l_o_reg: true,
            l_o_dir: true,
            l_c_score: true,
        },
    })
}

/// A scalar function with an analytic gradient.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

fn unflatten(x: &[f64]) -> Vec<Vec3> {
    x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Offset regression loss as a function of the flattened predictions.
pub struct OffsetRegObjective {
    pub targets: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl Objective for OffsetRegObjective {
    fn value(&self, x: &[f64]) -> Result<f64> {
        offset_reg_loss(&unflatten(x), &self.targets, &self.mask)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        offset_reg_grad(&unflatten(x), &self.targets, &self.mask)
    }
}

pub struct OffsetDirObjective {
    pub targets: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl Objective for OffsetDirObjective {
    fn value(&self, x: &[f64]) -> Result<f64> {
        offset_dir_loss(&unflatten(x), &self.targets, &self.mask)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        offset_dir_grad(&unflatten(x), &self.targets, &self.mask)
    }
}

/// Max over coordinates of `|g_a − g_n| / max(1, |g_a|, |g_n|)` with central differences.
pub fn grad_check(objective: &dyn Objective, x: &[f64]) -> Result<f64> {
    let analytic = objective.gradient(x)?;
    if analytic.len() != x.len() {
        return Err(Error::LengthMismatch {
            what: "gradient",
            got: analytic.len(),
            expected: x.len(),
        });
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + GRAD_STEP;
        let up = objective.value(&probe)?;
        probe[i] = x[i] - GRAD_STEP;
        let down = objective.value(&probe)?;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * GRAD_STEP);
        let ga = analytic[i];
        if !(up.is_finite() && down.is_finite() && ga.is_finite()) {
            return Err(Error::NonFinite("gradient check evaluation"));
        }
        let err = (ga - numeric).abs() / 1f64.max(ga.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Normalized histogram of point-to-centroid distances over instance points.
/// The last bin collects everything at or beyond `max_dist`.
pub fn distance_histogram(scene: &Scene, bin_width: f64, max_dist: f64) -> Result<Vec<f64>> {
    if !(bin_width > 0.0 && max_dist > 0.0) {
        return Err(Error::InvalidArgument(
            "bin width and max distance must be positive".into(),
        ));
    }
    let (targets, mask) = offset_targets_f64(scene);
    let total = mask_count(&mask)?;
    let n_bins = (max_dist / bin_width).ceil() as usize;
    let mut bins = vec![0.0; n_bins + 1];
    for (t, m) in targets.iter().zip(mask) {
        if m {
            let d = norm(t);
            let b = if d >= max_dist {
                n_bins
            } else {
                ((d / bin_width) as usize).min(n_bins - 1)
            };
            bins[b] += 1.0;
        }
    }
    for b in &mut bins {
        *b /= total;
    }
    Ok(bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneData;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene_from(coords: Vec<Point>, inst: Vec<i32>) -> Scene {
        let n = coords.len();
        let labels = inst.iter().map(|&i| if i >= 0 { 1 } else { 0 }).collect();
        Scene::new(SceneData {
            n_classes: 2,
            coords,
            colors: vec![[0; 3]; n],
            sem_scores: None,
            sem_labels: labels,
            inst_ids: inst,
            stuff_classes: vec![0],
        })
        .unwrap()
    }

    #[test]
    fn centroid_of_pair() {
        let s = scene_from(vec![[0.0; 3], [2.0, 0.0, 0.0], [9.0; 3]], vec![0, 0, -1]);
        assert_eq!(instance_centroids(&s).unwrap(), vec![[1.0, 0.0, 0.0]]);
        let s = scene_from(vec![[0.5, 0.25, -1.0]], vec![0]);
        assert_eq!(instance_centroids(&s).unwrap(), vec![[0.5, 0.25, -1.0]]);
        assert!(instance_centroids(&scene_from(vec![[0.0; 3]], vec![-1])).is_err());
    }

    #[test]
    fn targets_zero_at_centroid_and_on_stuff() {
        let s = scene_from(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [5.0; 3]],
            vec![0, 0, 0, -1],
        );
        let t = offset_targets(&s);
        assert_eq!(t.as_slice()[1], [0.0; 3]);
        assert_eq!(t.as_slice()[3], [0.0; 3]);
        assert_eq!(t.as_slice()[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn l_sem_cases() {
        assert_eq!(l_sem(&[0.0, 1.0], 2, &[1]).unwrap(), 0.0);
        let u = [1.0 / 3.0f32; 3];
        assert!((l_sem(&u, 3, &[2]).unwrap() - 3f64.ln()).abs() < 1e-7);
        assert!(l_sem(&[0.5, 0.5], 2, &[-1]).is_err());
        // zero probability is clamped, not infinite
        assert!((l_sem(&[1.0, 0.0], 2, &[1]).unwrap() - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn l_sem_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, c) = (50, 4);
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let raw: Vec<f32> = (0..c).map(|_| rng.random_range(0.01f32..1.0)).collect();
            let s: f32 = raw.iter().sum();
            scores.extend(raw.iter().map(|v| v / s));
            labels.push(rng.random_range(-1..c as i32));
        }
        let mut expect = 0.0;
        let mut k = 0;
        for i in 0..n {
            if labels[i] >= 0 {
                expect += -(scores[i * c + labels[i] as usize] as f64).ln();
                k += 1;
            }
        }
        expect /= k as f64;
        assert!((l_sem(&scores, c, &labels).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn reg_loss_arithmetic() {
        let t = [[1.0, -2.0, 0.5]];
        assert_eq!(offset_reg_loss(&[[0.0; 3]], &t, &[true]).unwrap(), 3.5);
        assert_eq!(offset_reg_loss(&t, &t, &[true]).unwrap(), 0.0);
        assert!(offset_reg_loss(&t, &t, &[false]).is_err());
    }

    #[test]
    fn dir_loss_cases() {
        let t = [[1.0, 2.0, -1.0], [0.0, 0.0, 3.0]];
        let along = [[2.0, 4.0, -2.0], [0.0, 0.0, 0.1]];
        let opposite = [[-1.0, -2.0, 1.0], [0.0, 0.0, -5.0]];
        assert!((offset_dir_loss(&along, &t, &[true, true]).unwrap() + 1.0).abs() < 1e-12);
        assert!((offset_dir_loss(&opposite, &t, &[true, true]).unwrap() - 1.0).abs() < 1e-12);
        // zero prediction contributes nothing but still counts in the mean
        let zero = [[0.0; 3], [0.0, 0.0, 1.0]];
        assert!((offset_dir_loss(&zero, &t, &[true, true]).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn total_is_plain_sum() {
        let r = total_loss(LossParts::default()).unwrap();
        assert_eq!(r.total, 0.0);
        let r = total_loss(LossParts {
            l_sem: 1.0,
            l_o_reg: -1.0,
            l_o_dir: 2.0,
            l_c_score: 0.5,
        })
        .unwrap();
        assert_eq!(r.total, 2.5);
        assert!(total_loss(LossParts {
            l_sem: f64::NAN,
            ..Default::default()
        })
        .is_err());
    }

    struct Linear(Vec<f64>);

    impl Objective for Linear {
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok(self.0.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + 3.0)
        }
        fn gradient(&self, _x: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn grad_check_exact_on_linear() {
        let f = Linear(vec![0.5, -2.0, 7.0]);
        assert!(grad_check(&f, &[0.1, 0.2, -0.3]).unwrap() <= 1e-10);
    }

    #[test]
    fn grad_check_catches_wrong_gradient() {
        struct Wrong;
        impl Objective for Wrong {
            fn value(&self, x: &[f64]) -> Result<f64> {
                Ok(x[0] * x[0])
            }
            fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![x[0]])
            }
        }
        assert!(grad_check(&Wrong, &[1.0]).unwrap() > 0.1);
    }

    #[test]
    fn histogram_basics() {
        let s = scene_from(vec![[1.0; 3], [1.0; 3], [0.0; 3]], vec![0, 0, -1]);
        let h = distance_histogram(&s, 0.1, 2.0).unwrap();
        assert_eq!(h.len(), 21);
        assert_eq!(h[0], 1.0);
        let s = scene_from(
            vec![[0.0; 3], [5.0, 0.0, 0.0], [0.0; 3], [0.3, 0.0, 0.0]],
            vec![0, 0, 1, 1],
        );
        let h = distance_histogram(&s, 0.1, 2.0).unwrap();
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h[20], 0.5);
        assert_eq!(h[1], 0.5);
    }
}
