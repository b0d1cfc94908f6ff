use criterion::{criterion_group, criterion_main, Criterion};
use pointgroup_bench::Fixture;
use pointgroup_core::clustering::{cluster_dual_set, ClusterIndex};
use pointgroup_core::eval::{evaluate, EvalConfig};
use pointgroup_core::nms::nms;
use pointgroup_core::{
    run_pipeline, score_clusters, ClusterParams, PipelineConfig, ScorerKind, Source,
};
use std::hint::black_box;

fn stages(c: &mut Criterion) {
    let f = Fixture::new(0);
    let params = ClusterParams::default();
    let shifted = f.offsets.shifted(&f.scene).unwrap();
    let labels = f.scene.sem_labels();
    let stuff = f.scene.stuff_classes();

    let mut g = c.benchmark_group("stages");
    g.sample_size(20);
    g.bench_function("ball_query_p", |b| {
        b.iter(|| ClusterIndex::build(black_box(f.scene.coords()), labels, stuff, &params).unwrap())
    });
    let index_p = ClusterIndex::build(f.scene.coords(), labels, stuff, &params).unwrap();
    g.bench_function("cluster_p", |b| {
        b.iter(|| index_p.grow(params.min_points, Source::Original))
    });
    g.bench_function("ball_query_q", |b| {
        b.iter(|| ClusterIndex::build(black_box(&shifted), labels, stuff, &params).unwrap())
    });
    let index_q = ClusterIndex::build(&shifted, labels, stuff, &params).unwrap();
    g.bench_function("cluster_q", |b| {
        b.iter(|| index_q.grow(params.min_points, Source::Shifted))
    });
    g.bench_function("scoring", |b| {
        b.iter(|| {
            score_clusters(
                &f.clusters,
                &f.scene,
                &f.offsets,
                ScorerKind::Model,
                f.inputs(),
            )
            .unwrap()
        })
    });
    g.bench_function("nms", |b| {
        b.iter(|| nms(&f.clusters, &f.scores, 0.3).unwrap())
    });
    g.finish();
}

fn end_to_end(c: &mut Criterion) {
    let f = Fixture::new(0);
    let config = PipelineConfig::default();
    let mut g = c.benchmark_group("end_to_end");
    g.sample_size(10);
    g.bench_function("dual_set_clustering", |b| {
        b.iter(|| cluster_dual_set(&f.scene, &f.offsets, &ClusterParams::default()).unwrap())
    });
    g.bench_function("pipeline", |b| {
        b.iter(|| run_pipeline(&f.scene, &f.offsets, &config, f.inputs()).unwrap())
    });
    let preds = run_pipeline(&f.scene, &f.offsets, &config, f.inputs()).unwrap();
    let gt = pointgroup_core::synth::generate(&pointgroup_core::GenConfig::benchmark(0))
        .unwrap()
        .gt;
    g.bench_function("evaluate", |b| {
        b.iter(|| evaluate(&preds, &gt, &EvalConfig::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, stages, end_to_end);
criterion_main!(benches);
