use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gcf_core::free_boundary::{coincidence_set, minimal_diameter, GraphPatch};
use gcf_core::shapes::{ball, ellipsoid};
use gcf_core::sphere::{codazzi_residual, curvatures_of};
use gcf_core::{Obstacle, PenalizedFlow, PenaltyVariant, ScalarField, SphericalGrid};

fn curvature(c: &mut Criterion) {
    let g = SphericalGrid::lat_lon(32, 64).unwrap();
    let u = ellipsoid(g.clone(), [1.2, 1.0, 0.8], [0.0; 3]);
    c.bench_function("curvatures 32x64", |b| b.iter(|| curvatures_of(black_box(&u)).unwrap()));
    c.bench_function("codazzi residual 32x64", |b| b.iter(|| codazzi_residual(black_box(&u), &g).unwrap()));
}

fn flow_step(c: &mut Criterion) {
    let g = SphericalGrid::lat_lon(32, 64).unwrap();
    let ob = Obstacle::homothetic(ball(g.clone(), 0.6, [0.2, 0.0, 0.0]), 0.7, 1.0).unwrap();
    let flow = PenalizedFlow::penalized(0.5, &ob, 0.0125, PenaltyVariant::C11).unwrap();
    let state = flow.state(ScalarField::constant(g, 1.0), 0.0).unwrap();
    let dt = gcf_core::stable_dt(&state);
    c.bench_function("penalized step 32x64", |b| b.iter(|| flow.step(black_box(&state), dt).unwrap()));

    let circle = SphericalGrid::circle(256).unwrap();
    let free = PenalizedFlow::free(1.0).unwrap();
    c.bench_function("free circle run 256 nodes", |b| {
        b.iter(|| free.run(ScalarField::constant(circle.clone(), 1.0), 0.1, 0.05).unwrap())
    });
}

fn free_boundary(c: &mut Criterion) {
    let points: Vec<[f64; 2]> = (0..4096)
        .map(|k| {
            let a = k as f64 * 2.399963;
            let r = (k as f64 / 4096.0).sqrt();
            [r * a.cos(), 0.6 * r * a.sin()]
        })
        .collect();
    c.bench_function("minimal diameter 4096 points", |b| b.iter(|| minimal_diameter(black_box(&points), 2).unwrap()));

    let patch = GraphPatch::from_fns(
        2,
        1.0,
        81,
        vec![-0.5, -0.25, 0.0],
        |x, t| 0.5 * (x[0] * x[0] + x[1] * x[1]) - 0.25 * (x[0] - t).max(0.0).powi(2),
        |x, _| 0.5 * (x[0] * x[0] + x[1] * x[1]),
        0.5,
    )
    .unwrap();
    c.bench_function("coincidence set 81x81x3", |b| b.iter(|| coincidence_set(black_box(&patch), 1e-6).unwrap()));
}

criterion_group!(benches, curvature, flow_step, free_boundary);
criterion_main!(benches);
