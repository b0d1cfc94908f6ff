//! ASCII PLY export with one color per predicted instance.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{InstancePrediction, Scene};

pub const UNASSIGNED_COLOR: [u8; 3] = [128, 128, 128];

/// Deterministic palette: golden-angle hue walk at fixed saturation/value.
pub fn palette_color(index: usize) -> [u8; 3] {
    let hue = (index as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.75, 0.95);
    let sector = hue.floor();
    let f = hue - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let to_u8 = |c: f64| (c * 255.0).round() as u8;
    [to_u8(r), to_u8(g), to_u8(b)]
}

/// Per-point colors; a point claimed by several predictions takes the first one's color.
pub fn instance_colors(n_points: usize, preds: &[InstancePrediction]) -> Result<Vec<[u8; 3]>> {
    let mut colors = vec![None; n_points];
    for (k, pred) in preds.iter().enumerate() {
        let color = palette_color(k);
        for &i in pred.point_idx() {
            let slot = colors.get_mut(i as usize).ok_or(Error::IndexOutOfRange {
                index: i as usize,
                len: n_points,
            })?;
            slot.get_or_insert(color);
        }
    }
    Ok(colors
        .into_iter()
        .map(|c| c.unwrap_or(UNASSIGNED_COLOR))
        .collect())
}

pub fn write_ply<W: Write>(scene: &Scene, preds: &[InstancePrediction], mut w: W) -> Result<()> {
    let colors = instance_colors(scene.n_points(), preds)?;
    let io = |e| Error::io("<ply>", e);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        scene.n_points()
    )
    .map_err(io)?;
    for ([x, y, z], [r, g, b]) in scene.coords().iter().zip(&colors) {
        writeln!(w, "{x} {y} {z} {r} {g} {b}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn export_ply(
    scene: &Scene,
    preds: &[InstancePrediction],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    // Validate before touching the filesystem.
    instance_colors(scene.n_points(), preds)?;
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(scene, preds, BufWriter::new(f)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
