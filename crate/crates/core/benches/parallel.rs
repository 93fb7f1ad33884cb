//! Sequential versus rayon execution of the data-parallel hot paths.
//!
//! Build with `--no-default-features` to see the fallback: both variants
//! then run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use noisylab::analysis::{fisher_samples, FisherOptions};
use noisylab::data::{generate_corpus_with, CorpusSizes, NoiseConfig, SceneConfig, Split};
use noisylab::exec::Exec;
use noisylab::models::{build_model, EncoderSpec, FrameworkKind, Mode, Tensor};
use noisylab::training::EvalSet;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn noise() -> NoiseConfig {
    NoiseConfig { object_drop_prob: 0.29, boundary_radius: 1.45, blob_fp_rate: 2.175, class_swap_prob: 0.145, rng_seed: 0 }
}

fn small_spec() -> EncoderSpec {
    EncoderSpec { stage_widths: vec![8, 16, 32, 64], ..EncoderSpec::default() }
}

fn corpus_generation(c: &mut Criterion) {
    let scene = SceneConfig::default();
    let sizes = CorpusSizes { pretrain: 64, finetune: 0, test: 0, variants: 1 };
    let mut g = c.benchmark_group("generate_corpus_64");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_corpus_with(exec, &scene, &noise(), &sizes, 1).unwrap())
        });
    }
    g.finish();
}

fn batch_forward(c: &mut Criterion) {
    let mut model = build_model(&small_spec(), FrameworkKind::Unet, 8, 0).unwrap();
    let n = 16;
    let x = Tensor::from_vec(n, 4, 64, 64, (0..n * 4 * 64 * 64).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect());
    let mut g = c.benchmark_group("forward_batch16");
    g.sample_size(10);
    for (name, exec) in MODES {
        model.set_exec(exec);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| model.forward(&x, Mode::Eval).unwrap()));
    }
    g.finish();
}

fn fisher(c: &mut Criterion) {
    let scene = SceneConfig::default();
    let sizes = CorpusSizes { pretrain: 0, finetune: 0, test: 16, variants: 1 };
    let corpus = generate_corpus_with(Exec::Sequential, &scene, &noise(), &sizes, 2).unwrap();
    let eval = EvalSet::mapped(&corpus, Split::Test, &scene.pretrain_class_map);
    let model = build_model(&small_spec(), FrameworkKind::Unet, 4, 0).unwrap();
    let opts = FisherOptions::default();
    let mut g = c.benchmark_group("fisher_16_samples");
    g.sample_size(10);
    for (name, exec) in MODES {
        exec.set_global();
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fisher_samples(&model, &eval.images, &eval.masks, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, corpus_generation, batch_forward, fisher);
criterion_main!(benches);
