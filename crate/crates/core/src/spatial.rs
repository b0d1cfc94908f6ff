//! Uniform-grid index for exact fixed-radius neighbor queries.
//!
//! The cell edge equals the query radius, so every neighbor of a point lies in
//! the 3×3×3 block of cells around it. Distances use one shared predicate,
//! [`within_radius`], evaluated in `f32`; the grid query and the brute-force
//! scan therefore agree bit for bit.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::Point;

/// Cell keys are computed on an edge a hair wider than the radius so that
/// `f32` rounding in the distance predicate can never reach past the 27-cell block.
const EDGE_WIDENING: f64 = 1e-6;

pub type CellKey = [i64; 3];

/// Marker for an absent neighbor cell in [`GridIndex::neighbor_table`].
pub const NO_CELL: u32 = u32::MAX;

/// Strict `‖a − b‖² < r²` in `f32`.
#[inline]
pub fn within_radius(a: &Point, b: &Point, radius_sq: f32) -> bool {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz < radius_sq
}

#[derive(Debug, Clone)]
pub struct GridIndex<'a> {
    coords: &'a [Point],
    cell_size: f32,
    origin: [f64; 3],
    inv_edge: f64,
    cell_ids: HashMap<CellKey, u32>,
    cell_keys: Vec<CellKey>,
    /// CSR layout: points of cell `c` are `points[cell_start[c]..cell_start[c + 1]]`, ascending.
    cell_start: Vec<u32>,
    points: Vec<u32>,
}

impl<'a> GridIndex<'a> {
    pub fn build(coords: &'a [Point], radius: f32) -> Result<Self> {
        Self::build_filtered(coords, radius, |_| true)
    }

    /// Indexes only the points for which `keep` holds.
    pub fn build_filtered(
        coords: &'a [Point],
        radius: f32,
        keep: impl Fn(usize) -> bool + Sync,
    ) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius must be positive and finite, got {radius}"
            )));
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("coordinates"));
        }
        let mut origin = [f64::INFINITY; 3];
        for p in coords {
            for a in 0..3 {
                origin[a] = origin[a].min(p[a] as f64);
            }
        }
        if coords.is_empty() {
            origin = [0.0; 3];
        }
        let inv_edge = 1.0 / (radius as f64 * (1.0 + EDGE_WIDENING));

        let keys: Vec<Option<CellKey>> = coords
            .par_iter()
            .enumerate()
            .map(|(i, p)| keep(i).then(|| cell_key(p, &origin, inv_edge)))
            .collect();

        let mut cell_ids: HashMap<CellKey, u32> = HashMap::new();
        let mut cell_keys = Vec::new();
        let mut counts: Vec<u32> = Vec::new();
        let mut point_cell = Vec::with_capacity(coords.len());
        for key in &keys {
            let Some(key) = key else {
                point_cell.push(NO_CELL);
                continue;
            };
            let id = *cell_ids.entry(*key).or_insert_with(|| {
                cell_keys.push(*key);
                counts.push(0);
                (cell_keys.len() - 1) as u32
            });
            counts[id as usize] += 1;
            point_cell.push(id);
        }
        let mut cell_start = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        cell_start.push(0);
        for c in &counts {
            acc += c;
            cell_start.push(acc);
        }
        let mut fill: Vec<u32> = cell_start[..counts.len()].to_vec();
        let mut points = vec![0u32; acc as usize];
        for (i, &c) in point_cell.iter().enumerate() {
            if c != NO_CELL {
                points[fill[c as usize] as usize] = i as u32;
                fill[c as usize] += 1;
            }
        }
        Ok(GridIndex {
            coords,
            cell_size: radius,
            origin,
            inv_edge,
            cell_ids,
            cell_keys,
            cell_start,
            points,
        })
    }

    pub fn cell_size(&self) -> f32 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn coords(&self) -> &'a [Point] {
        self.coords
    }

    pub fn n_cells(&self) -> usize {
        self.cell_keys.len()
    }

    pub fn n_indexed(&self) -> usize {
        self.points.len()
    }

    pub fn key_of(&self, p: &Point) -> CellKey {
        cell_key(p, &self.origin, self.inv_edge)
    }

    pub fn cell_id(&self, key: &CellKey) -> Option<u32> {
        self.cell_ids.get(key).copied()
    }

    pub fn cell_key_at(&self, cell: u32) -> CellKey {
        self.cell_keys[cell as usize]
    }

    /// Points of one cell, ascending.
    pub fn cell_points(&self, cell: u32) -> &[u32] {
        let c = cell as usize;
        &self.points[self.cell_start[c] as usize..self.cell_start[c + 1] as usize]
    }

    /// CSR view: `(cell_start, points)`.
    pub fn csr(&self) -> (&[u32], &[u32]) {
        (&self.cell_start, &self.points)
    }

    /// For every cell, the ids of the (up to) 27 cells around it, [`NO_CELL`] where empty.
    pub fn neighbor_table(&self) -> Vec<[u32; 27]> {
        self.cell_keys
            .par_iter()
            .map(|key| {
                let mut row = [NO_CELL; 27];
                for (slot, off) in row.iter_mut().zip(neighborhood()) {
                    let k = [key[0] + off[0], key[1] + off[1], key[2] + off[2]];
                    if let Some(&id) = self.cell_ids.get(&k) {
                        *slot = id;
                    }
                }
                row
            })
            .collect()
    }

    /// All indexed points `j` with `‖x_j − x_center‖ < radius`, ascending.
    pub fn ball_query(&self, center_idx: usize, radius: f32) -> Result<Vec<u32>> {
        if radius != self.cell_size {
            return Err(Error::InvalidArgument(format!(
                "query radius {radius} differs from index cell size {}",
                self.cell_size
            )));
        }
        let center = self.coords.get(center_idx).ok_or(Error::IndexOutOfRange {
            index: center_idx,
            len: self.coords.len(),
        })?;
        let r2 = radius * radius;
        let key = self.key_of(center);
        let mut out = Vec::new();
        for off in neighborhood() {
            let k = [key[0] + off[0], key[1] + off[1], key[2] + off[2]];
            if let Some(&cell) = self.cell_ids.get(&k) {
                out.extend(
                    self.cell_points(cell)
                        .iter()
                        .copied()
                        .filter(|&j| within_radius(&self.coords[j as usize], center, r2)),
                );
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

fn cell_key(p: &Point, origin: &[f64; 3], inv_edge: f64) -> CellKey {
    [
        ((p[0] as f64 - origin[0]) * inv_edge).floor() as i64,
        ((p[1] as f64 - origin[1]) * inv_edge).floor() as i64,
        ((p[2] as f64 - origin[2]) * inv_edge).floor() as i64,
    ]
}

fn neighborhood() -> impl Iterator<Item = [i64; 3]> {
    (-1i64..=1)
        .flat_map(|dz| (-1i64..=1).flat_map(move |dy| (-1i64..=1).map(move |dx| [dx, dy, dz])))
}

/// O(N) reference for [`GridIndex::ball_query`].
pub fn brute_force_query(coords: &[Point], center_idx: usize, radius: f32) -> Vec<u32> {
    let center = &coords[center_idx];
    let r2 = radius * radius;
    coords
        .iter()
        .enumerate()
        .filter(|(_, p)| within_radius(p, center, r2))
        .map(|(j, _)| j as u32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, extent: f32, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..extent),
                    rng.random_range(0.0..extent),
                    rng.random_range(0.0..extent),
                ]
            })
            .collect()
    }

    #[test]
    fn single_point() {
        let pts = [[1.0, 2.0, 3.0]];
        let idx = GridIndex::build(&pts, 0.03).unwrap();
        assert_eq!(idx.n_cells(), 1);
        assert_eq!(idx.cell_points(0), &[0]);
        assert_eq!(idx.ball_query(0, 0.03).unwrap(), vec![0]);
    }

    #[test]
    fn distant_points_get_distinct_cells() {
        let pts = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        let idx = GridIndex::build(&pts, 0.03).unwrap();
        assert_eq!(idx.n_cells(), 2);
        assert_ne!(idx.key_of(&pts[0]), idx.key_of(&pts[1]));
    }

    #[test]
    fn empty_input_is_valid() {
        let idx = GridIndex::build(&[], 0.03).unwrap();
        assert_eq!(idx.n_cells(), 0);
        assert_eq!(idx.n_indexed(), 0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let pts = [[0.0, 0.0, 0.0]];
        assert!(GridIndex::build(&pts, 0.0).is_err());
        assert!(GridIndex::build(&pts, -1.0).is_err());
        assert!(GridIndex::build(&[[f32::NAN, 0.0, 0.0]], 0.03).is_err());
        let idx = GridIndex::build(&pts, 0.03).unwrap();
        assert!(idx.ball_query(0, 0.05).is_err());
        assert!(idx.ball_query(3, 0.03).is_err());
    }

    #[test]
    fn collinear_chain() {
        let pts = [[0.0, 0.0, 0.0], [0.02, 0.0, 0.0], [0.04, 0.0, 0.0]];
        let idx = GridIndex::build(&pts, 0.03).unwrap();
        assert_eq!(idx.ball_query(1, 0.03).unwrap(), vec![0, 1, 2]);
        assert_eq!(idx.ball_query(0, 0.03).unwrap(), vec![0, 1]);
    }

    #[test]
    fn boundary_distance_is_excluded() {
        let pts = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]];
        assert_eq!(brute_force_query(&pts, 0, 0.5), vec![0]);
        let idx = GridIndex::build(&pts, 0.5).unwrap();
        assert_eq!(idx.ball_query(0, 0.5).unwrap(), vec![0]);
        assert_eq!(
            brute_force_query(&[[0.0; 3], [5.0, 0.0, 0.0]], 0, 0.03),
            vec![0]
        );
    }

    #[test]
    fn every_point_in_exactly_one_cell() {
        let pts = random_points(10_000, 1.0, 3);
        let idx = GridIndex::build(&pts, 0.03).unwrap();
        let mut seen = vec![0u8; pts.len()];
        for c in 0..idx.n_cells() as u32 {
            for &i in idx.cell_points(c) {
                seen[i as usize] += 1;
                assert_eq!(idx.key_of(&pts[i as usize]), idx.cell_key_at(c));
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn matches_brute_force_on_random_cloud() {
        let pts = random_points(5_000, 0.5, 11);
        let idx = GridIndex::build(&pts, 0.03).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let c = rng.random_range(0..pts.len());
            assert_eq!(
                idx.ball_query(c, 0.03).unwrap(),
                brute_force_query(&pts, c, 0.03)
            );
        }
    }

    #[test]
    fn filtered_index_skips_points() {
        let pts = [[0.0, 0.0, 0.0], [0.01, 0.0, 0.0], [0.02, 0.0, 0.0]];
        let idx = GridIndex::build_filtered(&pts, 0.03, |i| i != 1).unwrap();
        assert_eq!(idx.n_indexed(), 2);
        assert_eq!(idx.ball_query(1, 0.03).unwrap(), vec![0, 2]);
    }

    proptest! {
        #[test]
        fn grid_equals_brute_force(
            pts in prop::collection::vec(prop::array::uniform3(-0.2f32..0.2), 1..200),
            radius in 0.005f32..0.1,
            center in any::<prop::sample::Index>(),
        ) {
            let c = center.index(pts.len());
            let idx = GridIndex::build(&pts, radius).unwrap();
            prop_assert_eq!(idx.ball_query(c, radius).unwrap(), brute_force_query(&pts, c, radius));
        }

        #[test]
        fn permutation_invariant(
            pts in prop::collection::vec(prop::array::uniform3(0.0f32..0.1), 2..100),
            rot in 1usize..50,
        ) {
            let n = pts.len();
            let rot = rot % n;
            let mut permuted = pts.clone();
            permuted.rotate_left(rot);
            let a = GridIndex::build(&pts, 0.03).unwrap().ball_query(0, 0.03).unwrap();
            let center_in_perm = (n - rot) % n;
            let mut b: Vec<u32> = GridIndex::build(&permuted, 0.03)
                .unwrap()
                .ball_query(center_in_perm, 0.03)
                .unwrap()
                .into_iter()
                .map(|j| ((j as usize + rot) % n) as u32)
                .collect();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }
}
