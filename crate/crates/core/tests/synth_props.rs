use pointgroup_core::clustering::{cluster_single_set, ClusterParams};
use pointgroup_core::losses::instance_centroids;
use pointgroup_core::synth::{
    generate, generate_scene, perturb_offsets, perturb_semantics, GenConfig, NoiseConfig,
};
use pointgroup_core::{OffsetField, Scene, SceneData};

fn small(seed: u64) -> GenConfig {
    GenConfig {
        seed,
        room: [3.0, 3.0, 1.5],
        n_objects: 4,
        object_size: (0.2, 0.4),
        stuff_density: 50.0,
        ..Default::default()
    }
}

fn as_sets(mut v: Vec<Vec<u32>>) -> Vec<Vec<u32>> {
    v.sort();
    v
}

#[test]
fn generated_scenes_are_valid_and_disjoint() {
    for seed in 0..10 {
        let g = generate(&GenConfig {
            noise: NoiseConfig {
                p_sem: 0.2,
                temperature: 0.5,
                sigma0: 0.02,
                beta: 1.0,
            },
            ..small(seed)
        })
        .unwrap();
        // Scene::new already checked every invariant; re-validate through the data.
        Scene::new(g.scene.data().clone()).unwrap();
        Scene::new(g.gt.data().clone()).unwrap();
        assert_eq!(g.gt.n_instances(), 4);
        for inst in g.gt.gt_instances() {
            assert!(inst
                .point_idx
                .iter()
                .all(|&i| g.gt.sem_labels()[i as usize] == inst.class_id));
        }
    }
}

#[test]
fn separated_objects_are_recovered_exactly_from_p() {
    for seed in 0..5 {
        let (scene, _) = generate_scene(&small(seed)).unwrap();
        let got: Vec<Vec<u32>> = cluster_single_set(
            scene.coords(),
            scene.sem_labels(),
            scene.stuff_classes(),
            &ClusterParams::default(),
            pointgroup_core::Source::Original,
        )
        .unwrap()
        .into_iter()
        .map(|c| c.point_idx().to_vec())
        .collect();
        let want: Vec<Vec<u32>> = scene
            .gt_instances()
            .into_iter()
            .map(|g| g.point_idx)
            .collect();
        assert_eq!(as_sets(got), as_sets(want), "seed {seed}");
    }
}

#[test]
fn flip_fraction_concentrates() {
    // 100k object points, no stuff.
    let n = 100_000;
    let data = SceneData {
        n_classes: 6,
        coords: (0..n).map(|i| [i as f32 * 1e-3, 0.0, 0.0]).collect(),
        colors: vec![[0; 3]; n],
        sem_scores: None,
        sem_labels: (0..n).map(|i| 1 + (i % 5) as i32).collect(),
        inst_ids: vec![-1; n],
        stuff_classes: vec![0],
    };
    let scene = Scene::new(data).unwrap();
    for p in [0.1, 0.3, 0.7] {
        let out = perturb_semantics(&scene, p, 0.0, 42).unwrap();
        let flipped = out
            .sem_labels()
            .iter()
            .zip(scene.sem_labels())
            .filter(|(a, b)| a != b)
            .count();
        let frac = flipped as f64 / n as f64;
        assert!((frac - p).abs() <= 0.02, "p {p}: {frac}");
        assert_eq!(out, perturb_semantics(&scene, p, 0.0, 42).unwrap());
    }
}

fn two_point_instance() -> (Scene, OffsetField) {
    let data = SceneData {
        n_classes: 2,
        coords: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]],
        colors: vec![[0; 3]; 3],
        sem_scores: None,
        sem_labels: vec![1, 1, 1],
        inst_ids: vec![0, 0, 0],
        stuff_classes: vec![0],
    };
    (Scene::new(data).unwrap(), OffsetField::zeros(3))
}

#[test]
fn offset_noise_stdev_matches_formula() {
    // Point 0 sits 0.5 m from the centroid (0.5, 0, 0).
    let (scene, zero) = two_point_instance();
    let (sigma0, beta) = (0.02, 3.0);
    let expected = sigma0 * (1.0 + beta * 0.5);
    let n = 10_000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for seed in 0..n {
        let o = perturb_offsets(&zero, &scene, sigma0, beta, seed).unwrap();
        let v = o.as_slice()[0][0] as f64;
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let sd = (sq / n as f64 - mean * mean).sqrt();
    assert!((sd / expected - 1.0).abs() < 0.05, "sd {sd} vs {expected}");
    assert!(mean.abs() < 4.0 * expected / (n as f64).sqrt());
}

#[test]
fn far_points_err_more_than_near_ones() {
    let (scene, oracle) = generate_scene(&small(3)).unwrap();
    let noisy = perturb_offsets(&oracle, &scene, 0.01, 10.0, 8).unwrap();
    let cents = instance_centroids(&scene).unwrap();
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for i in 0..scene.n_points() {
        let id = scene.inst_ids()[i];
        if id < 0 {
            continue;
        }
        let c = cents[id as usize];
        let p = scene.coords()[i];
        let d = (0..3)
            .map(|a| (p[a] as f64 - c[a]).powi(2))
            .sum::<f64>()
            .sqrt();
        let e = (0..3)
            .map(|a| (noisy.as_slice()[i][a] as f64 - oracle.as_slice()[i][a] as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        rows.push((d, e));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let q = rows.len() / 4;
    let near = rows[..q].iter().map(|r| r.1).sum::<f64>() / q as f64;
    let far = rows[rows.len() - q..].iter().map(|r| r.1).sum::<f64>() / q as f64;
    assert!(far > near, "far {far} near {near}");
}

#[test]
fn adjacency_merges_in_p_and_splits_in_q() {
    let cfg = GenConfig {
        gap_range: (0.02, 0.02),
        same_class_prob: 1.0,
        objects_per_row: 2,
        ..small(5)
    };
    let (scene, oracle) = generate_scene(&cfg).unwrap();
    let params = ClusterParams::default();
    let run = |coords: &[pointgroup_core::Point]| {
        cluster_single_set(
            coords,
            scene.sem_labels(),
            scene.stuff_classes(),
            &params,
            pointgroup_core::Source::Original,
        )
        .unwrap()
        .len()
    };
    let shifted = oracle.shifted(&scene).unwrap();
    assert!(run(scene.coords()) < scene.n_instances());
    assert_eq!(run(&shifted), scene.n_instances());
}
