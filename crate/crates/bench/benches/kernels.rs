use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use pfe_bench::{desk_field, gaussian_set, spd};
use pfe_core::flow::{cfm_loss_grad, draw_path_samples, integrate, FlowConfig};
use pfe_core::mathcore::{sym_matrix_sqrt, Activation, MlpParams};
use pfe_core::metrics::{emd_1d, fad_score, spearman_srcc_with};
use pfe_core::rng::{normal_vec, rng_for};

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("metrics");
    for d in [16, 128] {
        let m = spd(d, 1);
        g.bench_with_input(BenchmarkId::new("sym_matrix_sqrt", d), &m, |b, m| {
            b.iter(|| sym_matrix_sqrt(black_box(m)).unwrap())
        });
    }
    let (a, bset) = (gaussian_set(500, 16, 2), gaussian_set(500, 16, 3));
    g.bench_function("fad_500x16", |b| b.iter(|| fad_score(black_box(&a), black_box(&bset)).unwrap()));
    let x = normal_vec(&mut rng_for(4, &[]), 20, 1.0);
    let y = normal_vec(&mut rng_for(5, &[]), 20, 1.0);
    g.sample_size(10);
    g.bench_function("spearman_20_10k_perms", |b| b.iter(|| spearman_srcc_with(&x, &y, 10_000, 0).unwrap()));
    let (u, v) = (normal_vec(&mut rng_for(6, &[]), 10_000, 1.0), normal_vec(&mut rng_for(7, &[]), 7_000, 1.0));
    g.bench_function("emd_1d_10k_7k", |b| b.iter(|| emd_1d(black_box(&u), black_box(&v)).unwrap()));
    g.finish();
}

fn networks(c: &mut Criterion) {
    let mut g = c.benchmark_group("networks");
    let proj = MlpParams::init(&[128, 64, 64, 64, 16], Activation::Identity, &mut rng_for(8, &[])).unwrap();
    let o = normal_vec(&mut rng_for(9, &[]), 128, 1.0);
    let grad_out = normal_vec(&mut rng_for(10, &[]), 16, 1.0);
    g.bench_function("projection_forward_backward", |b| {
        b.iter(|| {
            let (_, tape) = proj.forward(black_box(&o)).unwrap();
            proj.backward(&tape, &grad_out).unwrap()
        })
    });

    let net = desk_field(16, 128);
    let targets = gaussian_set(64, 16, 11);
    let conds = gaussian_set(64, 128, 12);
    let batch: Vec<(&[f64], &[f64])> = targets.iter().zip(&conds).map(|(t, c)| (t.as_slice(), c.as_slice())).collect();
    let samples = draw_path_samples(&batch, 1e-4, &mut rng_for(13, &[])).unwrap();
    g.bench_function("cfm_loss_grad_batch64", |b| b.iter(|| cfm_loss_grad(&net, black_box(&samples)).unwrap()));

    let x0 = normal_vec(&mut rng_for(14, &[]), 16, 1.0);
    g.bench_function("euler_32_steps", |b| {
        b.iter(|| integrate(&net, black_box(&conds[0]), black_box(&x0), &FlowConfig::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, metrics, networks);
criterion_main!(benches);
