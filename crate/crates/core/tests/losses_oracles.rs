use pointgroup_core::losses::{
    distance_histogram, grad_check, l_offset_dir, l_offset_reg, l_sem, offset_targets,
    offset_targets_f64, total_loss, LossParts, OffsetDirObjective, OffsetRegObjective,
};
use pointgroup_core::scoring::{bce, soft_label, ScorerObjective, DESCRIPTOR_DIM};
use pointgroup_core::synth::{generate_scene, GenConfig};
use pointgroup_core::OffsetField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene() -> pointgroup_core::Scene {
    generate_scene(&GenConfig {
        room: [3.0, 3.0, 1.5],
        n_objects: 3,
        object_size: (0.2, 0.3),
        object_density: 1500.0,
        stuff_density: 30.0,
        ..Default::default()
    })
    .unwrap()
    .0
}

#[test]
fn oracle_offsets_hit_the_loss_optimum() {
    let s = scene();
    let o = offset_targets(&s);
    assert!(l_offset_reg(&o, &s).unwrap().abs() < 1e-6);
    assert!((l_offset_dir(&o, &s).unwrap() + 1.0).abs() < 1e-6);
    let scaled =
        OffsetField::new(o.as_slice().iter().map(|v| v.map(|x| 7.0 * x)).collect()).unwrap();
    assert!((l_offset_dir(&scaled, &s).unwrap() - l_offset_dir(&o, &s).unwrap()).abs() < 1e-6);
}

#[test]
fn semantic_loss_of_one_hot_scores_is_zero() {
    let s = scene();
    assert_eq!(
        l_sem(s.sem_scores().unwrap(), s.n_classes(), s.sem_labels()).unwrap(),
        0.0
    );
    let uniform = vec![0.25f32; 8];
    let l = l_sem(&uniform, 4, &[1, 3]).unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-7);
}

#[test]
fn score_terms_match_closed_forms() {
    assert_eq!(soft_label(0.2).unwrap(), 0.0);
    assert_eq!(soft_label(0.5).unwrap(), 0.5);
    assert_eq!(soft_label(0.8).unwrap(), 1.0);
    assert!((bce(0.5, 0.5) - 2f64.ln()).abs() < 1e-9);
    let r = total_loss(LossParts {
        l_sem: 0.5,
        l_o_reg: 0.25,
        l_o_dir: -0.75,
        l_c_score: 1.0,
    })
    .unwrap();
    assert_eq!(r.total, 1.0);
}

#[test]
fn offset_gradients_match_central_differences() {
    let s = scene();
    let (targets, mask) = offset_targets_f64(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reg = OffsetRegObjective {
        targets: targets.clone(),
        mask: mask.clone(),
    };
    let dir = OffsetDirObjective { targets, mask };
    for _ in 0..20 {
        // Stay off the L1 kink: every residual is at least 1e-2 from zero.
        let x: Vec<f64> = reg
            .targets
            .iter()
            .flat_map(|t| *t)
            .map(|t| {
                let r: f64 = rng.random_range(0.01..0.2);
                t + if rng.random_bool(0.5) { r } else { -r }
            })
            .collect();
        assert!(grad_check(&reg, &x).unwrap() <= 1e-5);
        assert!(grad_check(&dir, &x).unwrap() <= 1e-5);
    }
}

#[test]
fn scorer_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let hidden = 6;
    let obj = ScorerObjective {
        inputs: (0..40)
            .map(|_| [0.0; DESCRIPTOR_DIM].map(|_: f64| rng.random_range(-2.0..2.0)))
            .collect(),
        targets: (0..40).map(|_| rng.random_range(0.0..1.0)).collect(),
        hidden,
    };
    for _ in 0..20 {
        let w: Vec<f64> = (0..obj.n_params())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        assert!(grad_check(&obj, &w).unwrap() <= 1e-5);
    }
}

#[test]
fn centroid_distances_mostly_under_a_meter() {
    let h = distance_histogram(&scene(), 0.1, 1.0).unwrap();
    assert_eq!(h.len(), 11);
    assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(h[..10].iter().sum::<f64>() > 0.9);
}
