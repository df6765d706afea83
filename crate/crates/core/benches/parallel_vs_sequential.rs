use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fastadv::attack::AttackConfig;
use fastadv::data::{synthetic_glyphs, GlyphsConfig};
use fastadv::eval::{evaluate, landscape_grid};
use fastadv::model::{ModelParams, ModelSpec};
use fastadv::Exec;

fn modes() -> Vec<(&'static str, Exec)> {
    let mut m = vec![("sequential", Exec::Sequential)];
    if cfg!(feature = "parallel") {
        m.push(("parallel", Exec::Parallel));
    }
    m
}

fn robust_eval(c: &mut Criterion) {
    let data = synthetic_glyphs(&GlyphsConfig::new(1000, 0)).unwrap();
    let params = ModelParams::<f32>::init(&ModelSpec::mnist_default(), 0);
    let attacks = [AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 5)];
    let mut group = c.benchmark_group("evaluate_pgd5_1000");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate(&params, &data, &attacks, 0, exec).unwrap())
        });
    }
    group.finish();
}

fn landscape(c: &mut Criterion) {
    let data = synthetic_glyphs(&GlyphsConfig::new(250, 0)).unwrap();
    let params = ModelParams::<f64>::init(&ModelSpec::new(784, vec![64], 10).unwrap(), 0);
    let mut group = c.benchmark_group("landscape_9x9_250");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| landscape_grid(&params, &data, 8.0 / 255.0, 9, 9, 0, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, robust_eval, landscape);
criterion_main!(benches);
