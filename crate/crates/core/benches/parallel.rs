use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mrsvs_core::corpus::generate_toy_corpus;
use mrsvs_core::exec::Exec;
use mrsvs_core::signal::{extract_f0_with, extract_mel_with, invert_mel_with, FeatureConfig};
use mrsvs_core::synth::{SynthConfig, Synthesizer};
use mrsvs_core::training::{evaluate_with, EvalOptions, OptimizerConfig, TrainSet, Trainer};

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn signal(c: &mut Criterion) {
    let fc = FeatureConfig::default();
    let audio: Vec<f64> = (0..fc.sample_rate as usize * 3)
        .map(|n| {
            let t = n as f64 / fc.sample_rate as f64;
            0.3 * (2.0 * std::f64::consts::PI * 220.0 * t).sin()
                + 0.1 * (2.0 * std::f64::consts::PI * 660.0 * t).sin()
        })
        .collect();
    let mel = extract_mel_with(&audio, &fc, Exec::Sequential).unwrap();
    let mut g = c.benchmark_group("signal");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("extract_mel", name), &exec, |b, &e| {
            b.iter(|| extract_mel_with(&audio, &fc, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("extract_f0", name), &exec, |b, &e| {
            b.iter(|| extract_f0_with(&audio, &fc, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("griffin_lim_8", name), &exec, |b, &e| {
            b.iter(|| invert_mel_with(&mel, &fc, 8, e).unwrap())
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_toy_corpus(dir.path(), 2, 4, 7).unwrap();
    let synth = Synthesizer::new(&SynthConfig::toy(m.inventory.len())).unwrap();
    let set = TrainSet::from_manifest(&synth, &m).unwrap();
    let tr = Trainer::new(synth, &OptimizerConfig::toy()).unwrap();
    let batch = tr.next_batch(&set).unwrap();
    let opts = EvalOptions {
        audio_metrics: false,
        ..EvalOptions::default()
    };
    let mut g = c.benchmark_group("training");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("batch_gradients", name), &exec, |b, &e| {
            b.iter(|| tr.batch_gradients(&set, &batch, 1, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("evaluate", name), &exec, |b, &e| {
            b.iter(|| evaluate_with(&tr.synth, &set, &opts, e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, signal, training);
criterion_main!(benches);
