use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deepfactor::data::{default_start, generate_fourier_factors, FourierFactorsSpec, LocalNoise};
use deepfactor::forecast::forecast;
use deepfactor::likelihood::Emission;
use deepfactor::local::{gp_loglik, kalman_loglik, normalized_times, GpParams, LevelTrendIssmParams};
use deepfactor::model::{DeepFactorModel, LocalModelSpec, ModelConfig};
use deepfactor::training::objective_gradients;

fn wave(len: usize) -> Vec<f64> {
    (0..len).map(|t| (t as f64 * 0.3).sin() + 0.01 * t as f64).collect()
}

fn local_models(c: &mut Criterion) {
    let mut group = c.benchmark_group("local_loglik");
    for len in [50, 200] {
        let r = wave(len);
        let issm = LevelTrendIssmParams::default();
        group.bench_with_input(BenchmarkId::new("kalman", len), &r, |b, r| {
            b.iter(|| kalman_loglik(black_box(r), &issm).unwrap())
        });
        let times = normalized_times(0, len, len);
        let gp = GpParams::default();
        group.bench_with_input(BenchmarkId::new("gp", len), &r, |b, r| {
            b.iter(|| gp_loglik(black_box(r), &times, &gp).unwrap())
        });
    }
    group.finish();
}

fn model_fixture(local: LocalModelSpec) -> (DeepFactorModel, deepfactor::data::TimeSeriesDataset) {
    let spec = FourierFactorsSpec {
        num_factors: 2,
        orders: vec![],
        num_series: 8,
        length: 96,
        coef_range: [-1.0, 1.0],
        noise: LocalNoise::Gaussian { std: 0.1 },
        likelihood: Emission::Gaussian,
        period: None,
        start: default_start(),
    };
    let data = generate_fourier_factors(&spec, 0).unwrap().dataset;
    let config = ModelConfig {
        num_factors: 2,
        hidden: 16,
        local,
        ..ModelConfig::default()
    };
    (DeepFactorModel::new(config, &data, 0).unwrap(), data)
}

fn gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("objective_gradients");
    group.sample_size(20);
    let variants = [
        ("rnn_noise", LocalModelSpec::RnnNoise { hidden: 8, layers: 1 }),
        ("issm", LocalModelSpec::LevelTrendIssm { init: Default::default() }),
        ("gp", LocalModelSpec::GaussianProcess { init: Default::default() }),
    ];
    for (name, local) in variants {
        let (mut model, data) = model_fixture(local);
        group.bench_function(name, |b| b.iter(|| objective_gradients(&mut model, &data, 1, 0).unwrap()));
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let (model, data) = model_fixture(LocalModelSpec::LevelTrendIssm { init: Default::default() });
    let series = &data.series()[0];
    c.bench_function("forecast_issm_200x24", |b| {
        b.iter(|| forecast(&model, series, 24, 200, 0, &[0.1, 0.5, 0.9]).unwrap())
    });
}

criterion_group!(benches, local_models, gradients, sampling);
criterion_main!(benches);
