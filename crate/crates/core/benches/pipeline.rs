use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sharedworld::model::Denoiser;
use sharedworld::verify::random_inputs;
use sharedworld::world::{generate_pair_clips, sequence_specs};
use sharedworld::Config;
use swtensor::par::{self, Exec};
use swtensor::{Graph, Tensor};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn render(c: &mut Criterion) {
    let mut group = c.benchmark_group("render_clip_pair");
    group.sample_size(10);
    let spec = sequence_specs(0, 0);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_exec(exec);
            b.iter(|| generate_pair_clips(spec, 32, 48, true).unwrap())
        });
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("batched_matmul");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::<f32>::randn(&[4, 288, 32], 1.0, &mut rng);
    let b = Tensor::<f32>::randn(&[4, 32, 288], 1.0, &mut rng);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            par::set_exec(exec);
            bench.iter(|| {
                let mut g = Graph::<f32>::untraced();
                let x = g.constant(a.clone()).unwrap();
                let y = g.constant(b.clone()).unwrap();
                g.matmul(x, y).unwrap()
            })
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("denoiser_forward");
    group.sample_size(10);
    let cfg = Config::desk();
    let model = Denoiser::new(&cfg).unwrap();
    let ps = model.init_params::<f32>(0).unwrap();
    let inputs = random_inputs::<f32>(&cfg, 0).unwrap();
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_exec(exec);
            b.iter(|| model.predict(&ps, &inputs, 500).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, render, matmul, forward);
criterion_main!(benches);
