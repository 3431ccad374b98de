use criterion::{black_box, criterion_group, criterion_main, Criterion};
use paa_core::alignment::{l_contrast, mmd2, KernelSpec};
use paa_core::diffcore::{Graph, Tensor2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor2::new(rows, cols, data).unwrap()
}

fn soft_labels(rows: usize, classes: usize) -> Tensor2 {
    let mut data = vec![0.02; rows * classes];
    for r in 0..rows {
        let c = (r * 7 + r / 5) % classes;
        data[r * classes + c] = 1.0 - 0.02 * (classes - 1) as f64;
    }
    Tensor2::new(rows, classes, data).unwrap()
}

fn kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (zs, zt) = (random(&mut rng, 256, 128), random(&mut rng, 256, 128));
    let ys: Vec<usize> = (0..256).map(|i| i % 3).collect();
    let pt = soft_labels(256, 3);
    let spec = KernelSpec::default();

    c.bench_function("sq_dist+gauss_mix 256x128 fwd+bwd", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let (a, t) = (g.leaf(zs.clone()), g.leaf(zt.clone()));
            let d = g.sq_dist(a, t).unwrap();
            let k = g.gauss_mix(d, &[0.25, 0.5, 1.0, 2.0, 4.0]).unwrap();
            let l = g.mean(k).unwrap();
            black_box(g.backward(l).unwrap());
        })
    });

    c.bench_function("mmd2 256x128 fwd+bwd", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let (a, t) = (g.leaf(zs.clone()), g.leaf(zt.clone()));
            let l = mmd2(&mut g, a, t, &spec).unwrap();
            black_box(g.backward(l).unwrap());
        })
    });

    c.bench_function("l_contrast 256x128 fwd+bwd", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let (a, t) = (g.leaf(zs.clone()), g.leaf(zt.clone()));
            let l = l_contrast(&mut g, a, &ys, t, &pt, &spec, 0.9).unwrap();
            black_box(g.backward(l).unwrap());
        })
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
