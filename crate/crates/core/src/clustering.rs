//! Breadth-first grouping of same-label points within a fixed radius, run on
//! the original coordinates, the offset-shifted coordinates, or both.
//!
//! Stuff-class and unlabeled points never join a cluster. A component is kept
//! only if it has strictly more than `min_points` members. Output is canonical:
//! members ascending, clusters ordered by their smallest member.

use petgraph::unionfind::UnionFind;

use crate::error::{Error, Result};
use crate::scene::{Cluster, OffsetField, Point, Scene, Source};
use crate::spatial::{within_radius, GridIndex, NO_CELL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Neighborhood radius in meters.
    pub radius: f32,
    /// Components with `len <= min_points` are dropped.
    pub min_points: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            radius: 0.03,
            min_points: 50,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cluster radius must be positive, got {}",
                self.radius
            )));
        }
        if self.min_points < 1 {
            return Err(Error::InvalidArgument(
                "min_points must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Which coordinate sets feed the candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordinateSets {
    Original,
    Shifted,
    #[default]
    Both,
}

fn clusterable(label: i32, stuff: &[i32]) -> bool {
    label >= 0 && stuff.binary_search(&label).is_err()
}

fn sorted_stuff(stuff: &[i32]) -> Vec<i32> {
    let mut s = stuff.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

/// Neighbor-search stage over the clusterable points of one coordinate set.
pub struct ClusterIndex<'a> {
    grid: GridIndex<'a>,
    neighbors: Vec<[u32; 27]>,
    point_cell: Vec<u32>,
    labels: &'a [i32],
    radius: f32,
}

impl<'a> ClusterIndex<'a> {
    pub fn build(
        coords: &'a [Point],
        labels: &'a [i32],
        stuff_classes: &[i32],
        params: &ClusterParams,
    ) -> Result<Self> {
        params.validate()?;
        if coords.len() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "sem_labels",
                got: labels.len(),
                expected: coords.len(),
            });
        }
        let stuff = sorted_stuff(stuff_classes);
        let grid =
            GridIndex::build_filtered(coords, params.radius, |i| clusterable(labels[i], &stuff))?;
        let neighbors = grid.neighbor_table();
        let mut point_cell = vec![NO_CELL; coords.len()];
        for c in 0..grid.n_cells() as u32 {
            for &i in grid.cell_points(c) {
                point_cell[i as usize] = c;
            }
        }
        Ok(ClusterIndex {
            grid,
            neighbors,
            point_cell,
            labels,
            radius: params.radius,
        })
    }

    pub fn grid(&self) -> &GridIndex<'a> {
        &self.grid
    }

    /// Grows clusters breadth-first from seeds in ascending index order.
    pub fn grow(&self, min_points: usize, source: Source) -> Vec<Cluster> {
        let coords = self.grid.coords();
        let n = coords.len();
        let r2 = self.radius * self.radius;
        let (cell_start, cell_points) = self.grid.csr();
        // Per-cell pool of points not yet taken; taken entries are swapped past `live[c]`.
        let mut pool = cell_points.to_vec();
        let mut live: Vec<u32> = cell_start.windows(2).map(|w| w[1] - w[0]).collect();
        let mut visited = vec![false; n];
        let mut clusters = Vec::new();
        let mut queue = std::collections::VecDeque::new();

        for seed in 0..n {
            if visited[seed] || self.point_cell[seed] == NO_CELL {
                continue;
            }
            visited[seed] = true;
            let label = self.labels[seed];
            let mut members = vec![seed as u32];
            queue.push_back(seed as u32);
            while let Some(k) = queue.pop_front() {
                let center = &coords[k as usize];
                for &cell in &self.neighbors[self.point_cell[k as usize] as usize] {
                    if cell == NO_CELL {
                        continue;
                    }
                    let base = cell_start[cell as usize] as usize;
                    let mut end = base + live[cell as usize] as usize;
                    let mut i = base;
                    while i < end {
                        let j = pool[i] as usize;
                        let take = !visited[j]
                            && self.labels[j] == label
                            && within_radius(&coords[j], center, r2);
                        if take {
                            visited[j] = true;
                            members.push(j as u32);
                            queue.push_back(j as u32);
                        }
                        if take || visited[j] {
                            end -= 1;
                            pool.swap(i, end);
                        } else {
                            i += 1;
                        }
                    }
                    live[cell as usize] = (end - base) as u32;
                }
            }
            if members.len() > min_points {
                members.sort_unstable();
                clusters
                    .push(Cluster::new(members, label, source).expect("BFS members are unique"));
            }
        }
        clusters
    }
}

/// Clusters one coordinate set.
pub fn cluster_single_set(
    coords: &[Point],
    sem_labels: &[i32],
    stuff_classes: &[i32],
    params: &ClusterParams,
    source: Source,
) -> Result<Vec<Cluster>> {
    let index = ClusterIndex::build(coords, sem_labels, stuff_classes, params)?;
    Ok(index.grow(params.min_points, source))
}

/// Reference: union-find over every point pair, then the same size filter and ordering.
pub fn connected_components_oracle(
    coords: &[Point],
    sem_labels: &[i32],
    stuff_classes: &[i32],
    params: &ClusterParams,
) -> Vec<Cluster> {
    let stuff = sorted_stuff(stuff_classes);
    let n = coords.len();
    let r2 = params.radius * params.radius;
    let mut uf = UnionFind::<usize>::new(n);
    for i in 0..n {
        if !clusterable(sem_labels[i], &stuff) {
            continue;
        }
        for j in i + 1..n {
            if sem_labels[j] == sem_labels[i] && within_radius(&coords[i], &coords[j], r2) {
                uf.union(i, j);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<u32>> = Default::default();
    for i in 0..n {
        if clusterable(sem_labels[i], &stuff) {
            groups.entry(uf.find(i)).or_default().push(i as u32);
        }
    }
    let mut out: Vec<Cluster> = groups
        .into_values()
        .filter(|m| m.len() > params.min_points)
        .map(|m| {
            let label = sem_labels[m[0] as usize];
            Cluster::new(m, label, Source::Original).unwrap()
        })
        .collect();
    out.sort_by_key(Cluster::min_index);
    out
}

/// Clusters on `P` and on `Q = P + offsets` and concatenates the results (`P` first).
pub fn cluster_dual_set(
    scene: &Scene,
    offsets: &OffsetField,
    params: &ClusterParams,
) -> Result<Vec<Cluster>> {
    cluster_sets(scene, offsets, params, CoordinateSets::Both)
}

pub fn cluster_sets(
    scene: &Scene,
    offsets: &OffsetField,
    params: &ClusterParams,
    sets: CoordinateSets,
) -> Result<Vec<Cluster>> {
    params.validate()?;
    let shifted = offsets.shifted(scene)?;
    let labels = scene.sem_labels();
    let stuff = scene.stuff_classes();
    let run_p = || match sets {
        CoordinateSets::Shifted => Ok(Vec::new()),
        _ => cluster_single_set(scene.coords(), labels, stuff, params, Source::Original),
    };
    let run_q = || match sets {
        CoordinateSets::Original => Ok(Vec::new()),
        _ => cluster_single_set(&shifted, labels, stuff, params, Source::Shifted),
    };
    let (p, q) = rayon::join(run_p, run_q);
    let mut clusters = p?;
    clusters.extend(q?);
    Ok(clusters)
}
