use criterion::{criterion_group, criterion_main, Criterion};
use paa_core::data::StandardBenchmark;
use paa_core::trainer::{PaaConfig, Stage, Trainer, Variant};

fn steps(c: &mut Criterion) {
    let (source, target) = StandardBenchmark::generate();
    let ps: Vec<usize> = (0..256).collect();
    let pt: Vec<usize> = (256..512).collect();
    for (name, variant, stage) in [
        ("PAA-L joint step", Variant::L, Stage::Joint),
        ("PAA-C joint step", Variant::C, Stage::Joint),
        ("PAA-M stage one step", Variant::M, Stage::One),
        ("PAA-M stage two step", Variant::M, Stage::Two),
    ] {
        let mut config = PaaConfig::new(variant);
        config.epochs = 1;
        let mut trainer = Trainer::new(&source, &target, None, &config).unwrap();
        c.bench_function(name, |b| b.iter(|| trainer.step(stage, &ps, &pt, 0.5).unwrap()));
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = steps
}
criterion_main!(benches);
