//! Deterministic synthetic rooms: a floor and four walls (stuff) plus rows of
//! box, sphere and cylinder objects sampled on their surfaces, with oracle
//! semantics and offsets and optional noise models for both.
//!
//! Every random draw comes from a generator keyed by `(seed, stream, index)`,
//! so output does not depend on thread count or generation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::{instance_centroids, offset_targets};
use crate::scene::{OffsetField, Point, Scene, SceneData};

pub const WALL_CLASS: i32 = 0;
pub const FLOOR_CLASS: i32 = 1;

const STREAM_LAYOUT: u64 = 1;
const STREAM_OBJECT: u64 = 2;
const STREAM_STUFF: u64 = 3;
const STREAM_SEMANTIC: u64 = 4;
const STREAM_OFFSET: u64 = 5;

const PLACEMENT_ATTEMPTS: usize = 1000;
const MAX_TEMPERATURE: f64 = 100.0;

/// A generator for draw `index` of `stream` under `seed`.
pub fn keyed_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Box,
    Sphere,
    Cylinder,
}

/// Noise applied on top of the oracle branch outputs.
/// How object surfaces are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// One jittered sample per surface cell, like a scan at fixed resolution.
    #[default]
    Stratified,
    /// Independent uniform samples; local density fluctuates.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseConfig {
    /// Probability that a thing point's label flips to another thing class.
    pub p_sem: f64,
    /// Softmax temperature for the semantic scores; 0 keeps them one-hot.
    pub temperature: f64,
    /// Base offset noise stdev in meters.
    pub sigma0: f64,
    /// Growth of the offset noise with distance to the instance centroid.
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    /// Room size along x, y, z in meters; the room is centered on the origin in x and y.
    pub room: [f32; 3],
    /// Total classes; 0 is wall and 1 is floor, the rest are object classes.
    pub n_classes: usize,
    pub n_objects: usize,
    /// Objects are laid out side by side in rows of this many.
    pub objects_per_row: usize,
    /// Range of the surface gap between neighbors in a row.
    pub gap_range: (f32, f32),
    /// Minimum clearance between rows and from the walls.
    pub row_separation: f32,
    /// Probability that an object copies the class of its row predecessor.
    pub same_class_prob: f64,
    pub primitives: Vec<Primitive>,
    /// Range of object dimensions in meters.
    pub object_size: (f32, f32),
    /// Object surface samples per square meter.
    pub object_density: f32,
    pub sampling: Sampling,
    /// Floor and wall samples per square meter.
    pub stuff_density: f32,
    pub noise: NoiseConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            room: [5.0, 5.0, 2.5],
            n_classes: 8,
            n_objects: 8,
            objects_per_row: 2,
            gap_range: (0.05, 0.15),
            row_separation: 0.3,
            same_class_prob: 0.5,
            primitives: vec![Primitive::Box, Primitive::Sphere, Primitive::Cylinder],
            object_size: (0.3, 0.8),
            object_density: 1.0 / (0.015 * 0.015),
            sampling: Sampling::Stratified,
            stuff_density: 400.0,
            noise: NoiseConfig::default(),
        }
    }
}

impl GenConfig {
    /// A furnished room of roughly 130k points with mildly noisy branch outputs,
    /// used for timing.
    pub fn benchmark(seed: u64) -> Self {
        GenConfig {
            seed,
            room: [6.0, 6.0, 3.0],
            n_objects: 17,
            objects_per_row: 3,
            noise: NoiseConfig {
                p_sem: 0.02,
                temperature: 1.0,
                sigma0: 0.01,
                beta: 2.0,
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.room.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("room extents must be positive");
        }
        if self.n_classes < 3 {
            return bad("need at least one object class besides wall and floor");
        }
        if self.objects_per_row == 0 {
            return bad("objects_per_row must be positive");
        }
        let (g0, g1) = self.gap_range;
        if !(g0 >= 0.0 && g1 >= g0 && g1.is_finite()) {
            return bad("gap range must satisfy 0 <= min <= max");
        }
        if !(self.row_separation >= 0.0) {
            return bad("row separation must be non-negative");
        }
        let (s0, s1) = self.object_size;
        if !(s0 > 0.0 && s1 >= s0 && s1.is_finite()) {
            return bad("object size range must satisfy 0 < min <= max");
        }
        if !(self.object_density > 0.0 && self.stuff_density > 0.0) {
            return bad("densities must be positive");
        }
        if self.primitives.is_empty() && self.n_objects > 0 {
            return bad("no primitives to sample from");
        }
        let n = &self.noise;
        if !(0.0..=1.0).contains(&self.same_class_prob) || !(0.0..=1.0).contains(&n.p_sem) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(0.0..=MAX_TEMPERATURE).contains(&n.temperature) {
            return bad("temperature must lie in [0, 100]");
        }
        if !(n.sigma0 >= 0.0 && n.beta >= 0.0) {
            return bad("offset noise parameters must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ObjectSpec {
    primitive: Primitive,
    /// Half extents of the axis-aligned bounding box.
    half: [f32; 3],
    class_id: i32,
    center: [f32; 2],
}

fn draw_object(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> (Primitive, [f32; 3]) {
    let primitive = cfg.primitives[rng.random_range(0..cfg.primitives.len())];
    let (lo, hi) = cfg.object_size;
    let mut size = || {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let half = match primitive {
        Primitive::Box => [size() / 2.0, size() / 2.0, size() / 2.0],
        Primitive::Sphere => {
            let r = size() / 2.0;
            [r, r, r]
        }
        Primitive::Cylinder => {
            let r = size() / 2.0;
            [r, r, size() / 2.0]
        }
    };
    (primitive, half)
}

fn layout(cfg: &GenConfig) -> Result<Vec<ObjectSpec>> {
    let mut rng = keyed_rng(cfg.seed, STREAM_LAYOUT, 0);
    let n_things = cfg.n_classes as i32 - 2;
    let mut objects: Vec<ObjectSpec> = Vec::with_capacity(cfg.n_objects);
    // Placed row footprints: (min corner, max corner) in the xy plane.
    let mut rows: Vec<([f32; 2], [f32; 2])> = Vec::new();
    let sep = cfg.row_separation;
    let half_room = [cfg.room[0] / 2.0, cfg.room[1] / 2.0];

    while objects.len() < cfg.n_objects {
        let k = cfg.objects_per_row.min(cfg.n_objects - objects.len());
        let axis = rng.random_range(0..2usize);
        let other = 1 - axis;
        let mut row: Vec<ObjectSpec> = Vec::with_capacity(k);
        let mut gaps = Vec::with_capacity(k);
        for j in 0..k {
            let (primitive, half) = draw_object(cfg, &mut rng);
            let class_id = match row.last() {
                Some(prev) if rng.random_bool(cfg.same_class_prob) => prev.class_id,
                _ => 2 + rng.random_range(0..n_things),
            };
            if j > 0 {
                let (g0, g1) = cfg.gap_range;
                gaps.push(if g1 > g0 {
                    rng.random_range(g0..g1)
                } else {
                    g0
                });
            }
            row.push(ObjectSpec {
                primitive,
                half,
                class_id,
                center: [0.0; 2],
            });
        }
        let length: f32 =
            row.iter().map(|o| 2.0 * o.half[axis]).sum::<f32>() + gaps.iter().sum::<f32>();
        let width: f32 = row.iter().map(|o| 2.0 * o.half[other]).fold(0.0, f32::max);
        let mut extent = [0.0f32; 2];
        extent[axis] = length;
        extent[other] = width;

        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let mut lo = [0.0f32; 2];
            let mut fits = true;
            for a in 0..2 {
                let span = 2.0 * half_room[a] - 2.0 * sep - extent[a];
                if span < 0.0 {
                    fits = false;
                    break;
                }
                lo[a] = -half_room[a] + sep + rng.random_range(0.0..=span);
            }
            if !fits {
                break;
            }
            let hi = [lo[0] + extent[0], lo[1] + extent[1]];
            let clear = rows.iter().all(|(rlo, rhi)| {
                lo[0] >= rhi[0] + sep
                    || hi[0] + sep <= rlo[0]
                    || lo[1] >= rhi[1] + sep
                    || hi[1] + sep <= rlo[1]
            });
            if clear {
                placed = Some((lo, hi));
                break;
            }
        }
        let Some((lo, hi)) = placed else {
            return Err(Error::Placement {
                object: objects.len(),
                attempts: PLACEMENT_ATTEMPTS,
            });
        };
        rows.push((lo, hi));
        let line = (lo[other] + hi[other]) / 2.0;
        let mut cursor = lo[axis];
        for (j, mut o) in row.into_iter().enumerate() {
            if j > 0 {
                cursor += gaps[j - 1];
            }
            o.center[axis] = cursor + o.half[axis];
            o.center[other] = line;
            cursor += 2.0 * o.half[axis];
            objects.push(o);
        }
    }
    Ok(objects)
}

fn sample_count(area: f32, spacing: f32) -> usize {
    ((area / (spacing * spacing)).round() as usize).max(1)
}

const GOLDEN_ANGLE: f32 = 2.399_963_3;

/// An `a × b` rectangle spanned from `origin` along unit vectors `u` and `v`.
struct Face {
    origin: Point,
    u: Point,
    v: Point,
    a: f32,
    b: f32,
}

/// One jittered sample per cell of `face`, with cells as close to `spacing` square as fit.
fn grid_face(face: Face, spacing: f32, rng: &mut ChaCha8Rng, out: &mut Vec<Point>) {
    let Face { origin, u, v, a, b } = face;
    let nu = ((a / spacing).round() as usize).max(1);
    let nv = ((b / spacing).round() as usize).max(1);
    let (du, dv) = (a / nu as f32, b / nv as f32);
    for i in 0..nu {
        for j in 0..nv {
            let s = (i as f32 + rng.random_range(0.0..1.0)) * du;
            let t = (j as f32 + rng.random_range(0.0..1.0)) * dv;
            out.push([0, 1, 2].map(|k| origin[k] + s * u[k] + t * v[k]));
        }
    }
}

fn jitter2(spacing: f32, rng: &mut ChaCha8Rng) -> (f32, f32) {
    (
        (rng.random_range(0.0..1.0f32) - 0.5) * spacing,
        (rng.random_range(0.0..1.0f32) - 0.5) * spacing,
    )
}

/// Stratified surface samples of one object resting on the floor (bottom faces
/// omitted): jittered grids on flat and developable faces, jittered golden-angle
/// spirals on spheres and disks. Neighboring samples sit about `spacing` apart.
fn sample_object(o: &ObjectSpec, spacing: f32, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let [hx, hy, hz] = o.half;
    let [cx, cy] = o.center;
    let mut pts = Vec::new();
    match o.primitive {
        Primitive::Box => {
            let (sx, sy, sz) = (2.0 * hx, 2.0 * hy, 2.0 * hz);
            let (x0, y0) = (cx - hx, cy - hy);
            let (ex, ey, ez) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
            grid_face(
                Face {
                    origin: [x0, y0, sz],
                    u: ex,
                    v: ey,
                    a: sx,
                    b: sy,
                },
                spacing,
                rng,
                &mut pts,
            );
            grid_face(
                Face {
                    origin: [x0, y0, 0.0],
                    u: ey,
                    v: ez,
                    a: sy,
                    b: sz,
                },
                spacing,
                rng,
                &mut pts,
            );
            grid_face(
                Face {
                    origin: [x0 + sx, y0, 0.0],
                    u: ey,
                    v: ez,
                    a: sy,
                    b: sz,
                },
                spacing,
                rng,
                &mut pts,
            );
            grid_face(
                Face {
                    origin: [x0, y0, 0.0],
                    u: ex,
                    v: ez,
                    a: sx,
                    b: sz,
                },
                spacing,
                rng,
                &mut pts,
            );
            grid_face(
                Face {
                    origin: [x0, y0 + sy, 0.0],
                    u: ex,
                    v: ez,
                    a: sx,
                    b: sz,
                },
                spacing,
                rng,
                &mut pts,
            );
        }
        Primitive::Sphere => {
            let r = hx;
            let n = sample_count(4.0 * std::f32::consts::PI * r * r, spacing);
            for k in 0..n {
                let z = 1.0 - (2 * k + 1) as f32 / n as f32;
                let rho = (1.0 - z * z).max(0.0).sqrt();
                let phi = k as f32 * GOLDEN_ANGLE;
                let dir = [rho * phi.cos(), rho * phi.sin(), z];
                // tangent frame: east and north
                let east = [-phi.sin(), phi.cos(), 0.0];
                let north = [-z * phi.cos(), -z * phi.sin(), rho];
                let (a, b) = jitter2(spacing, rng);
                let q: [f32; 3] = [0, 1, 2].map(|i| r * dir[i] + a * east[i] + b * north[i]);
                let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
                pts.push([
                    cx + r * q[0] / norm,
                    cy + r * q[1] / norm,
                    r + r * q[2] / norm,
                ]);
            }
        }
        Primitive::Cylinder => {
            let (r, h) = (hx, 2.0 * hz);
            let circumference = 2.0 * std::f32::consts::PI * r;
            let nu = ((circumference / spacing).round() as usize).max(3);
            let nv = ((h / spacing).round() as usize).max(1);
            for i in 0..nu {
                for j in 0..nv {
                    let theta =
                        (i as f32 + rng.random_range(0.0..1.0)) * std::f32::consts::TAU / nu as f32;
                    let z = (j as f32 + rng.random_range(0.0..1.0)) * h / nv as f32;
                    pts.push([cx + r * theta.cos(), cy + r * theta.sin(), z]);
                }
            }
            let n = sample_count(std::f32::consts::PI * r * r, spacing);
            for k in 0..n {
                let rho = r * ((k as f32 + 0.5) / n as f32).sqrt();
                let phi = k as f32 * GOLDEN_ANGLE;
                let (a, b) = jitter2(spacing, rng);
                let (mut x, mut y) = (rho * phi.cos() + a, rho * phi.sin() + b);
                let d = (x * x + y * y).sqrt();
                if d > r {
                    x *= r / d;
                    y *= r / d;
                }
                pts.push([cx + x, cy + y, h]);
            }
        }
    }
    pts
}

/// Independent uniform surface samples of one object resting on the floor
/// (bottom faces omitted), `density` per square meter on average.
fn sample_object_uniform(o: &ObjectSpec, density: f32, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let [hx, hy, hz] = o.half;
    let [cx, cy] = o.center;
    let count = |area: f32| (area as f64 * density as f64).round() as usize;
    let mut pts = Vec::new();
    match o.primitive {
        Primitive::Box => {
            let (sx, sy, sz) = (2.0 * hx, 2.0 * hy, 2.0 * hz);
            let faces = [sx * sy, sy * sz, sy * sz, sx * sz, sx * sz];
            let total: f32 = faces.iter().sum();
            for _ in 0..count(total) {
                let mut pick = rng.random_range(0.0..total);
                let mut f = 0;
                while f < faces.len() - 1 && pick >= faces[f] {
                    pick -= faces[f];
                    f += 1;
                }
                let (u, v): (f32, f32) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let h: f32 = rng.random_range(0.0..1.0);
                pts.push(match f {
                    0 => [cx + u * hx, cy + v * hy, sz],
                    1 => [cx - hx, cy + u * hy, h * sz],
                    2 => [cx + hx, cy + u * hy, h * sz],
                    3 => [cx + u * hx, cy - hy, h * sz],
                    _ => [cx + u * hx, cy + hy, h * sz],
                });
            }
        }
        Primitive::Sphere => {
            let r = hx;
            for _ in 0..count(4.0 * std::f32::consts::PI * r * r) {
                let (mut x, mut y, mut z): (f32, f32, f32);
                loop {
                    x = rng.sample(StandardNormal);
                    y = rng.sample(StandardNormal);
                    z = rng.sample(StandardNormal);
                    let n = (x * x + y * y + z * z).sqrt();
                    if n > 1e-6 {
                        x /= n;
                        y /= n;
                        z /= n;
                        break;
                    }
                }
                pts.push([cx + r * x, cy + r * y, r + r * z]);
            }
        }
        Primitive::Cylinder => {
            let (r, h) = (hx, 2.0 * hz);
            let side = 2.0 * std::f32::consts::PI * r * h;
            let top = std::f32::consts::PI * r * r;
            for _ in 0..count(side + top) {
                let theta = rng.random_range(0.0..std::f32::consts::TAU);
                if rng.random_range(0.0..side + top) < side {
                    let z = rng.random_range(0.0..h);
                    pts.push([cx + r * theta.cos(), cy + r * theta.sin(), z]);
                } else {
                    let rho = r * rng.random_range(0.0f32..1.0).sqrt();
                    pts.push([cx + rho * theta.cos(), cy + rho * theta.sin(), h]);
                }
            }
        }
    }
    pts
}

fn class_color(class: i32) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 10] = [
        [170, 170, 160],
        [140, 110, 80],
        [200, 60, 60],
        [60, 160, 80],
        [60, 90, 200],
        [220, 180, 40],
        [160, 70, 180],
        [40, 180, 190],
        [230, 120, 40],
        [120, 120, 230],
    ];
    PALETTE[class as usize % PALETTE.len()]
}

fn jitter(c: [u8; 3], rng: &mut ChaCha8Rng) -> [u8; 3] {
    c.map(|v| (v as i32 + rng.random_range(-12..=12)).clamp(0, 255) as u8)
}

/// Ground-truth scene with one-hot semantic scores, and its oracle offsets.
pub fn generate_scene(cfg: &GenConfig) -> Result<(Scene, OffsetField)> {
    cfg.validate()?;
    let objects = layout(cfg)?;
    let per_object: Vec<(Vec<Point>, Vec<[u8; 3]>)> = objects
        .par_iter()
        .enumerate()
        .map(|(k, o)| {
            let mut rng = keyed_rng(cfg.seed, STREAM_OBJECT, k as u64);
            let pts = match cfg.sampling {
                Sampling::Stratified => {
                    sample_object(o, cfg.object_density.recip().sqrt(), &mut rng)
                }
                Sampling::Uniform => sample_object_uniform(o, cfg.object_density, &mut rng),
            };
            let base = class_color(o.class_id);
            let colors = pts.iter().map(|_| jitter(base, &mut rng)).collect();
            (pts, colors)
        })
        .collect();

    let mut data = SceneData {
        n_classes: cfg.n_classes,
        stuff_classes: vec![WALL_CLASS, FLOOR_CLASS],
        ..Default::default()
    };
    for (k, ((pts, colors), o)) in per_object.into_iter().zip(&objects).enumerate() {
        data.sem_labels
            .extend(std::iter::repeat_n(o.class_id, pts.len()));
        data.inst_ids
            .extend(std::iter::repeat_n(k as i32, pts.len()));
        data.coords.extend(pts);
        data.colors.extend(colors);
    }

    let [lx, ly, lz] = cfg.room;
    let (hx, hy) = (lx / 2.0, ly / 2.0);
    // (class, area, point generator) for floor and the four walls
    type Surface = (i32, f32, Box<dyn Fn(f32, f32) -> Point + Sync>);
    let surfaces: Vec<Surface> = vec![
        (
            FLOOR_CLASS,
            lx * ly,
            Box::new(move |u, v| [-hx + u * lx, -hy + v * ly, 0.0]),
        ),
        (
            WALL_CLASS,
            ly * lz,
            Box::new(move |u, v| [-hx, -hy + u * ly, v * lz]),
        ),
        (
            WALL_CLASS,
            ly * lz,
            Box::new(move |u, v| [hx, -hy + u * ly, v * lz]),
        ),
        (
            WALL_CLASS,
            lx * lz,
            Box::new(move |u, v| [-hx + u * lx, -hy, v * lz]),
        ),
        (
            WALL_CLASS,
            lx * lz,
            Box::new(move |u, v| [-hx + u * lx, hy, v * lz]),
        ),
    ];
    for (s, (class, area, f)) in surfaces.iter().enumerate() {
        let mut rng = keyed_rng(cfg.seed, STREAM_STUFF, s as u64);
        let base = class_color(*class);
        for _ in 0..(*area as f64 * cfg.stuff_density as f64).round() as usize {
            let (u, v): (f32, f32) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            data.coords.push(f(u, v));
            data.colors.push(jitter(base, &mut rng));
            data.sem_labels.push(*class);
            data.inst_ids.push(-1);
        }
    }

    let c = cfg.n_classes;
    let mut scores = vec![0.0f32; data.coords.len() * c];
    for (i, &l) in data.sem_labels.iter().enumerate() {
        scores[i * c + l as usize] = 1.0;
    }
    data.sem_scores = Some(scores);
    let scene = Scene::new(data)?;
    let offsets = offset_targets(&scene);
    Ok((scene, offsets))
}

fn softened_row(label: i32, n_classes: usize, temperature: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    // The labeled logit sits at least 1 above every other, so it stays the arg-max.
    let logits: Vec<f64> = (0..n_classes)
        .map(|c| {
            let u: f64 = rng.random_range(0.0..1.0);
            if c as i32 == label {
                2.0 + u
            } else {
                u
            }
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::MIN, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

/// Flips thing labels with probability `p_sem` and optionally softens scores.
///
/// Flipped points leave their instance (`inst = −1`) and the remaining ids are
/// renumbered contiguously; evaluate against the unperturbed scene. With
/// `temperature == 0` existing scores are kept and flipped points get one-hot
/// scores; with `temperature > 0` every point receives fresh softmax scores.
pub fn perturb_semantics(scene: &Scene, p_sem: f64, temperature: f64, seed: u64) -> Result<Scene> {
    if !(0.0..=1.0).contains(&p_sem) {
        return Err(Error::InvalidArgument(format!(
            "p_sem {p_sem} outside [0, 1]"
        )));
    }
    if !(0.0..=MAX_TEMPERATURE).contains(&temperature) {
        return Err(Error::InvalidArgument(format!(
            "temperature {temperature} outside [0, {MAX_TEMPERATURE}]"
        )));
    }
    let c = scene.n_classes();
    let things: Vec<i32> = (0..c as i32).filter(|&k| !scene.is_stuff(k)).collect();
    if p_sem > 0.0 && things.len() < 2 {
        return Err(Error::InvalidArgument(
            "label flips need at least two non-stuff classes".into(),
        ));
    }
    if temperature > 0.0 && scene.sem_labels().contains(&-1) {
        return Err(Error::InvalidArgument(
            "cannot synthesize scores for unlabeled points".into(),
        ));
    }
    let mut data = scene.data().clone();
    let n = data.coords.len();
    let rows: Vec<(i32, bool, Option<Vec<f32>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = keyed_rng(seed, STREAM_SEMANTIC, i as u64);
            let label = data.sem_labels[i];
            let mut new = label;
            let flip_roll: f64 = rng.random();
            if label >= 0 && !scene.is_stuff(label) && flip_roll < p_sem {
                let k = rng.random_range(0..things.len() - 1);
                let pos = things.iter().position(|&t| t == label).unwrap();
                new = things[if k >= pos { k + 1 } else { k }];
            }
            let row = if temperature > 0.0 {
                Some(softened_row(new, c, temperature, &mut rng))
            } else {
                None
            };
            (new, new != label, row)
        })
        .collect();
    for (i, (new, flipped, row)) in rows.into_iter().enumerate() {
        data.sem_labels[i] = new;
        if flipped {
            data.inst_ids[i] = -1;
        }
        match (row, data.sem_scores.as_mut()) {
            (Some(row), Some(s)) => s[i * c..(i + 1) * c].copy_from_slice(&row),
            (Some(row), None) => {
                let mut s = vec![0.0f32; n * c];
                s[i * c..(i + 1) * c].copy_from_slice(&row);
                data.sem_scores = Some(s);
            }
            (None, Some(s)) if flipped => {
                let r = &mut s[i * c..(i + 1) * c];
                r.fill(0.0);
                r[new as usize] = 1.0;
            }
            (None, _) => {}
        }
    }
    // Renumber surviving instances to 0..M'.
    let mut remap = vec![-1i32; scene.n_instances()];
    let mut next = 0;
    for id in data.inst_ids.iter_mut().filter(|id| **id >= 0) {
        let slot = &mut remap[*id as usize];
        if *slot < 0 {
            *slot = next;
            next += 1;
        }
        *id = *slot;
    }
    Scene::new(data)
}

/// Adds zero-mean Gaussian noise with stdev `sigma0 · (1 + beta · d)` to every
/// instance point's offset, `d` being its distance to the instance centroid.
pub fn perturb_offsets(
    offsets: &OffsetField,
    scene: &Scene,
    sigma0: f64,
    beta: f64,
    seed: u64,
) -> Result<OffsetField> {
    if !(sigma0 >= 0.0 && beta >= 0.0) {
        return Err(Error::InvalidArgument(
            "sigma0 and beta must be non-negative".into(),
        ));
    }
    offsets.check_matches(scene)?;
    if sigma0 == 0.0 || scene.n_instances() == 0 {
        return Ok(offsets.clone());
    }
    let centroids = instance_centroids(scene)?;
    let noisy: Vec<Point> = offsets
        .as_slice()
        .par_iter()
        .enumerate()
        .map(|(i, o)| {
            let id = scene.inst_ids()[i];
            if id < 0 {
                return *o;
            }
            let p = scene.coords()[i];
            let c = centroids[id as usize];
            let d = ((p[0] as f64 - c[0]).powi(2)
                + (p[1] as f64 - c[1]).powi(2)
                + (p[2] as f64 - c[2]).powi(2))
            .sqrt();
            let sigma = sigma0 * (1.0 + beta * d);
            let mut rng = keyed_rng(seed, STREAM_OFFSET, i as u64);
            let mut out = *o;
            for v in &mut out {
                let z: f64 = rng.sample(StandardNormal);
                *v = (*v as f64 + sigma * z) as f32;
            }
            out
        })
        .collect();
    OffsetField::new(noisy)
}

/// A generated scene with its ground truth and (possibly noisy) branch outputs.
#[derive(Debug, Clone)]
pub struct Generated {
    /// Clean scene: ground-truth labels and instances.
    pub gt: Scene,
    /// Clustering input: the scene after semantic noise.
    pub scene: Scene,
    /// Offsets after offset noise.
    pub offsets: OffsetField,
}

/// Generates a scene and applies the configured noise models.
pub fn generate(cfg: &GenConfig) -> Result<Generated> {
    let (gt, oracle) = generate_scene(cfg)?;
    let n = &cfg.noise;
    let scene = if n.p_sem > 0.0 || n.temperature > 0.0 {
        perturb_semantics(&gt, n.p_sem, n.temperature, cfg.seed)?
    } else {
        gt.clone()
    };
    let offsets = perturb_offsets(&oracle, &gt, n.sigma0, n.beta, cfg.seed)?;
    Ok(Generated { gt, scene, offsets })
}

/// `count` scenes with seeds `base.seed, base.seed + 1, …`.
pub fn generate_corpus(base: &GenConfig, count: usize) -> Result<Vec<Generated>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            generate(&GenConfig {
                seed: base.seed.wrapping_add(k),
                ..base.clone()
            })
        })
        .collect()
}

/// A cloud of `n_points` in Gaussian blobs inside a cube of side `extent`, for
/// fuzzing. Each blob gets a random label in `[-1, n_classes)` (class 0 is stuff)
/// and a few points are relabeled at random; there are no instances or scores.
pub fn random_scene(seed: u64, n_points: usize, n_classes: usize, extent: f32) -> Result<Scene> {
    if n_classes < 2 || !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::InvalidArgument(
            "need two classes and a positive extent".into(),
        ));
    }
    let mut rng = keyed_rng(seed, STREAM_LAYOUT, u64::MAX);
    let n_blobs = rng.random_range(1..=8usize);
    let blobs: Vec<(Point, f32, i32)> = (0..n_blobs)
        .map(|_| {
            let c = [0; 3].map(|_| rng.random_range(0.0..extent));
            let spread = extent * rng.random_range(0.01..0.08f32);
            (c, spread, rng.random_range(-1..n_classes as i32))
        })
        .collect();
    let mut data = SceneData {
        n_classes,
        stuff_classes: vec![0],
        ..Default::default()
    };
    for _ in 0..n_points {
        let (c, spread, label) = blobs[rng.random_range(0..n_blobs)];
        data.coords
            .push(c.map(|v| v + spread * rng.sample::<f32, _>(StandardNormal)));
        data.colors.push([0; 3].map(|_| rng.random()));
        data.sem_labels.push(if rng.random_bool(0.05) {
            rng.random_range(-1..n_classes as i32)
        } else {
            label
        });
        data.inst_ids.push(-1);
    }
    Scene::new(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            room: [3.0, 3.0, 1.0],
            n_objects: 4,
            object_size: (0.2, 0.3),
            object_density: 2000.0,
            stuff_density: 50.0,
            ..Default::default()
        }
    }

    #[test]
    fn benchmark_scene_size() {
        for seed in 0..4 {
            let (scene, _) = generate_scene(&GenConfig::benchmark(seed)).unwrap();
            let n = scene.n_points();
            assert!((100_000..=160_000).contains(&n), "{n} points");
        }
    }

    #[test]
    fn random_scenes_are_valid_and_seeded() {
        let a = random_scene(3, 500, 4, 1.0).unwrap();
        assert_eq!(a.n_points(), 500);
        assert_eq!(a, random_scene(3, 500, 4, 1.0).unwrap());
        assert_ne!(a, random_scene(4, 500, 4, 1.0).unwrap());
        assert!(random_scene(3, 10, 1, 1.0).is_err());
    }

    #[test]
    fn uniform_sampling_is_valid() {
        let (scene, _) = generate_scene(&GenConfig {
            sampling: Sampling::Uniform,
            ..small()
        })
        .unwrap();
        assert_eq!(scene.n_instances(), 4);
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&small()).unwrap();
        let b = generate_scene(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&GenConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn oracle_offsets_collapse_instances() {
        let (scene, offsets) = generate_scene(&small()).unwrap();
        let q = offsets.shifted(&scene).unwrap();
        let cents = instance_centroids(&scene).unwrap();
        for (i, &id) in scene.inst_ids().iter().enumerate() {
            if id >= 0 {
                let c = cents[id as usize];
                let d = ((q[i][0] as f64 - c[0]).powi(2)
                    + (q[i][1] as f64 - c[1]).powi(2)
                    + (q[i][2] as f64 - c[2]).powi(2))
                .sqrt();
                assert!(d < 1e-6, "point {i} at {d}");
            } else {
                assert_eq!(offsets.as_slice()[i], [0.0; 3]);
            }
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let cases = [
            GenConfig {
                room: [0.0, 1.0, 1.0],
                ..small()
            },
            GenConfig {
                n_classes: 2,
                ..small()
            },
            GenConfig {
                object_density: 0.0,
                ..small()
            },
            GenConfig {
                same_class_prob: 1.5,
                ..small()
            },
            GenConfig {
                gap_range: (0.2, 0.1),
                ..small()
            },
            GenConfig {
                noise: NoiseConfig {
                    p_sem: -0.1,
                    ..Default::default()
                },
                ..small()
            },
        ];
        for c in cases {
            assert!(generate_scene(&c).is_err(), "{c:?}");
        }
    }

    #[test]
    fn overcrowded_room_fails_placement() {
        let c = GenConfig {
            room: [1.0, 1.0, 1.0],
            n_objects: 30,
            ..small()
        };
        assert!(matches!(generate_scene(&c), Err(Error::Placement { .. })));
    }

    #[test]
    fn zero_noise_is_identity() {
        let (scene, offsets) = generate_scene(&small()).unwrap();
        assert_eq!(perturb_semantics(&scene, 0.0, 0.0, 3).unwrap(), scene);
        assert_eq!(
            perturb_offsets(&offsets, &scene, 0.0, 2.0, 3).unwrap(),
            offsets
        );
    }

    #[test]
    fn full_flip_changes_every_thing_label() {
        let (scene, _) = generate_scene(&small()).unwrap();
        let flipped = perturb_semantics(&scene, 1.0, 0.0, 9).unwrap();
        for i in 0..scene.n_points() {
            let l = scene.sem_labels()[i];
            if scene.is_stuff(l) {
                assert_eq!(flipped.sem_labels()[i], l);
            } else {
                assert_ne!(flipped.sem_labels()[i], l);
                assert!(!flipped.is_stuff(flipped.sem_labels()[i]));
            }
        }
        assert_eq!(flipped.n_instances(), 0);
    }

    #[test]
    fn softened_scores_keep_labels() {
        let (scene, _) = generate_scene(&small()).unwrap();
        let soft = perturb_semantics(&scene, 0.0, 1.0, 4).unwrap();
        assert_eq!(soft.sem_labels(), scene.sem_labels());
        assert_ne!(soft.sem_scores(), scene.sem_scores());
        assert!(soft
            .scores_of(0)
            .unwrap()
            .iter()
            .all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn flips_need_two_thing_classes() {
        let (scene, _) = generate_scene(&GenConfig {
            n_classes: 3,
            ..small()
        })
        .unwrap();
        assert!(perturb_semantics(&scene, 0.5, 0.0, 0).is_err());
        assert!(perturb_semantics(&scene, 0.0, 0.5, 0).is_ok());
    }

    #[test]
    fn offset_noise_spares_stuff() {
        let (scene, offsets) = generate_scene(&small()).unwrap();
        let noisy = perturb_offsets(&offsets, &scene, 0.01, 2.0, 5).unwrap();
        for i in 0..scene.n_points() {
            if scene.inst_ids()[i] < 0 {
                assert_eq!(noisy.as_slice()[i], offsets.as_slice()[i]);
            } else {
                assert_ne!(noisy.as_slice()[i], offsets.as_slice()[i]);
            }
        }
        assert!(perturb_offsets(&offsets, &scene, -1.0, 0.0, 0).is_err());
    }

    #[test]
    fn rows_respect_gap_range() {
        let c = GenConfig {
            gap_range: (0.02, 0.02),
            objects_per_row: 2,
            n_objects: 2,
            primitives: vec![Primitive::Box],
            ..small()
        };
        let objs = layout(&c).unwrap();
        let axis = if (objs[0].center[0] - objs[1].center[0]).abs() > 1e-6 {
            0
        } else {
            1
        };
        let gap = (objs[1].center[axis] - objs[0].center[axis]).abs()
            - objs[0].half[axis]
            - objs[1].half[axis];
        assert!((gap - 0.02).abs() < 1e-5, "gap {gap}");
    }
}
