use criterion::{criterion_group, criterion_main, Criterion};
use viact_core::desk::Desk;
use viact_core::efficiency::{measure_pretrain_step, StepSpec};
use viact_core::model::TokenSource;

fn desk_step(c: &mut Criterion) {
    let d = Desk::default();
    let mut group = c.benchmark_group("desk pretrain step, batch 16");
    group.sample_size(10);
    for source in [TokenSource::Anatomical, TokenSource::Grid] {
        let spec = StepSpec {
            model: d.model(),
            mae: d.mae(),
            size: d.size,
            repeats: 1,
            ..StepSpec::full_size(source, 16)
        };
        group.bench_function(source.to_string(), |b| {
            b.iter(|| measure_pretrain_step(&spec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, desk_step);
criterion_main!(benches);
