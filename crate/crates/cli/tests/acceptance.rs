//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{dataset, dense_logpdf, gauss_hermite, gp_cov, issm_cov};
use deepfactor::autodiff::softplus;
use deepfactor::data::{
    default_start, generate_fourier_factors, generate_rotating_lds, subspace_distance, FourierFactorsSpec, LocalNoise,
    RotatingLdsSpec, TimeSeriesDataset,
};
use deepfactor::forecast::{latent_estimate, normalized_quantile_loss, quantile_loss, rmse};
use deepfactor::likelihood::{draw_eps, elbo, elbo_with_draws, marginal_loglik, Emission};
use deepfactor::local::{gp_loglik, kalman_loglik, rnn_noise_loglik, GpParams, LevelTrendIssmParams};
use deepfactor::model::{DeepFactorModel, LocalModelSpec, ModelConfig};
use deepfactor::networks::RecognitionKind;
use deepfactor::training::{objective_gradients, train, PointStructure, TrainConfig};
use deepfactor_cli::{cmd_efficiency_curve, RunConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

const ORACLE_TOL: f64 = 1e-8;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_BUDGET: Duration = Duration::from_secs(60);
const DEGENERACY_TOL: f64 = 1e-10;
const BOUND_SE: f64 = 3.0;
const P50_TOL: f64 = 1e-12;
const RECOVERY_GAUSSIAN: f64 = 0.5;
const RECOVERY_POISSON: f64 = 0.7;
const RECOVERY_BUDGET: Duration = Duration::from_secs(600);
const EFFICIENCY_BUDGET: Duration = Duration::from_secs(900);
const SEEDS: u64 = 5;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn random_issm(rng: &mut ChaCha8Rng) -> LevelTrendIssmParams {
    LevelTrendIssmParams {
        delta: rng.random_range(0.05..1.0),
        gamma: rng.random_range(0.05..1.0),
        alpha: rng.random_range(0.0..1.5),
        beta: rng.random_range(0.0..1.0),
        sigma: rng.random_range(0.05..1.5),
        s0: rng.random_range(0.1..2.0),
    }
}

fn oracle_equivalence() -> Check {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let len = rng.random_range(1..=8);
        let r: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let zero = vec![0.0; len];

        let p = random_issm(&mut rng);
        let got = kalman_loglik(&r, &p).map_err(|e| e.to_string())?;
        worst[0] = worst[0].max((got - dense_logpdf(&r, &zero, &issm_cov(&p, len))).abs());

        let gp = GpParams {
            lengthscale: rng.random_range(0.05..2.0),
            amplitude: rng.random_range(0.1..2.0),
            noise: rng.random_range(0.05..1.0),
        };
        let times: Vec<f64> = (0..len).map(|t| t as f64 / 7.0).collect();
        let got = gp_loglik(&r, &times, &gp).map_err(|e| e.to_string())?;
        worst[1] = worst[1].max((got - dense_logpdf(&r, &zero, &gp_cov(&times, &gp))).abs());

        let sigma: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..3.0)).collect();
        let cov = DMatrix::from_fn(len, len, |i, j| if i == j { sigma[i] * sigma[i] } else { 0.0 });
        let got = rnn_noise_loglik(&r, &sigma).map_err(|e| e.to_string())?;
        worst[2] = worst[2].max((got - dense_logpdf(&r, &zero, &cov)).abs());
    }
    let elapsed = clock.elapsed();
    ensure(
        worst.iter().all(|w| *w < ORACLE_TOL) && elapsed < ORACLE_BUDGET,
        format!(
            "max |err| kalman {:.1e}, gp {:.1e}, rnn_noise {:.1e} over 100 configs each (tol {ORACLE_TOL:.0e}); {:.2}s",
            worst[0],
            worst[1],
            worst[2],
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_variants() -> Vec<(&'static str, ModelConfig)> {
    let base = |local: LocalModelSpec, emission: Emission| ModelConfig {
        num_factors: 2,
        hidden: 3,
        layers: 1,
        local,
        emission,
        recognition: RecognitionKind::BiLstm,
        recognition_hidden: 3,
        age_feature: false,
        mean_scaling: false,
    };
    let rnn = LocalModelSpec::RnnNoise { hidden: 3, layers: 1 };
    let issm = LocalModelSpec::LevelTrendIssm {
        init: LevelTrendIssmParams::default(),
    };
    let gp = LocalModelSpec::GaussianProcess {
        init: GpParams {
            lengthscale: 0.4,
            ..GpParams::default()
        },
    };
    vec![
        ("df-rnn gaussian", base(rnn.clone(), Emission::Gaussian)),
        ("df-lds gaussian", base(issm.clone(), Emission::Gaussian)),
        ("df-gp gaussian", base(gp.clone(), Emission::Gaussian)),
        ("df-rnn poisson bilstm", base(rnn.clone(), Emission::Poisson)),
        ("df-lds poisson bilstm", base(issm.clone(), Emission::Poisson)),
        ("df-gp poisson bilstm", base(gp.clone(), Emission::Poisson)),
        (
            "df-lds poisson mlp",
            ModelConfig {
                recognition: RecognitionKind::Mlp,
                ..base(issm.clone(), Emission::Poisson)
            },
        ),
        (
            "lds without factors",
            ModelConfig {
                num_factors: 0,
                ..base(issm, Emission::Gaussian)
            },
        ),
        (
            "df-rnn stacked, age, scaling",
            ModelConfig {
                layers: 2,
                local: LocalModelSpec::RnnNoise { hidden: 2, layers: 2 },
                age_feature: true,
                mean_scaling: true,
                ..base(rnn, Emission::Gaussian)
            },
        ),
        (
            "df-gp scaled",
            ModelConfig {
                mean_scaling: true,
                ..base(gp, Emission::Gaussian)
            },
        ),
    ]
}

/// Worst relative error between analytic and central-difference gradients
/// over every scalar parameter, with draws frozen by a fixed seed.
fn worst_fd_error(model: &mut DeepFactorModel, data: &TimeSeriesDataset) -> Result<(f64, usize), String> {
    let objective = |m: &mut DeepFactorModel| objective_gradients(m, data, 2, 5).map_err(|e| e.to_string());
    let (_, grads) = objective(model)?;
    let ids: Vec<_> = model.params().ids().collect();
    let (mut worst, mut count) = (0.0f64, 0);
    for (k, id) in ids.iter().enumerate() {
        let (rows, cols) = model.params().get(*id).value.shape();
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.params().get(*id).value[(r, c)];
                model.params_mut().get_mut(*id).value[(r, c)] = orig + FD_STEP;
                let up = objective(model)?.0;
                model.params_mut().get_mut(*id).value[(r, c)] = orig - FD_STEP;
                let down = objective(model)?.0;
                model.params_mut().get_mut(*id).value[(r, c)] = orig;
                let fd = (up - down) / (2.0 * FD_STEP);
                let a = grads[k][(r, c)];
                worst = worst.max((fd - a).abs() / fd.abs().max(a.abs()).max(1.0));
                count += 1;
            }
        }
    }
    Ok((worst, count))
}

fn gradient_correctness() -> Check {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut lines = Vec::new();
    let mut ok = true;
    let mut total = 0;
    for (k, (name, config)) in gradient_variants().into_iter().enumerate() {
        let targets: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                (0..5)
                    .map(|_| match config.emission {
                        Emission::Gaussian => rng.random_range(-2.0..2.0),
                        Emission::Poisson => rng.random_range(0..6) as f64,
                    })
                    .collect()
            })
            .collect();
        let data = dataset(&targets);
        let mut model = DeepFactorModel::new(config, &data, k as u64).map_err(|e| e.to_string())?;
        let (worst, count) = worst_fd_error(&mut model, &data)?;
        ok &= worst < FD_TOL;
        total += count;
        if worst >= FD_TOL {
            lines.push(format!("{name} {worst:.1e}"));
        }
    }
    let elapsed = clock.elapsed();
    ok &= elapsed < FD_BUDGET;
    let failures = if lines.is_empty() { String::new() } else { format!("; failing: {}", lines.join(", ")) };
    ensure(
        ok,
        format!(
            "10 variants, {total} parameters, T=5 N=2, rel err < {FD_TOL:.0e}{failures}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn locals() -> [LocalModelSpec; 3] {
    [
        LocalModelSpec::RnnNoise { hidden: 4, layers: 1 },
        LocalModelSpec::LevelTrendIssm {
            init: LevelTrendIssmParams::default(),
        },
        LocalModelSpec::GaussianProcess {
            init: GpParams::default(),
        },
    ]
}

fn elbo_degeneracy() -> Check {
    let data = dataset(&[vec![1.0, 2.5, 0.3, -0.7, 1.1, 0.0], vec![3.0, 2.0, 2.2, 2.9, 3.3, 3.1]]);
    let mut worst = 0.0f64;
    for local in locals() {
        for mean_scaling in [false, true] {
            let config = ModelConfig {
                num_factors: 2,
                hidden: 5,
                local: local.clone(),
                mean_scaling,
                ..ModelConfig::default()
            };
            let model = DeepFactorModel::new(config, &data, 1).map_err(|e| e.to_string())?;
            for s in data.series() {
                let exact = marginal_loglik(&model, s).map_err(|e| e.to_string())?;
                let e = elbo(&model, s, 4, 3).map_err(|e| e.to_string())?;
                worst = worst.max((e.value - exact).abs());
            }
        }
    }
    ensure(
        worst <= DEGENERACY_TOL,
        format!("max |elbo - log p(z)| = {worst:.1e} over rnn_noise, issm, gp (tol {DEGENERACY_TOL:.0e})"),
    )
}

fn quadrature_log_marginal(z: &[f64], mean: &[f64], cov: &DMatrix<f64>, nodes: usize) -> f64 {
    let l = cov.clone().cholesky().expect("positive definite").l();
    let (x, w) = gauss_hermite(nodes);
    let ln_fact: Vec<f64> = z.iter().map(|v| ln_gamma(v + 1.0)).collect();
    let mut terms = Vec::with_capacity(nodes.pow(3));
    for i in 0..nodes {
        for j in 0..nodes {
            for k in 0..nodes {
                let e = [x[i], x[j], x[k]];
                let mut ll = (w[i] * w[j] * w[k]).ln();
                for t in 0..3 {
                    let u = mean[t] + (0..=t).map(|s| l[(t, s)] * e[s]).sum::<f64>();
                    let lambda = softplus(u);
                    ll += z[t] * lambda.ln() - lambda - ln_fact[t];
                }
                terms.push(ll);
            }
        }
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn elbo_lower_bound() -> Check {
    let data = dataset(&[vec![1.0, 4.0, 0.0]]);
    let init = LevelTrendIssmParams {
        delta: 0.8,
        gamma: 0.6,
        alpha: 0.6,
        beta: 0.3,
        sigma: 0.4,
        s0: 0.8,
    };
    let config = ModelConfig {
        num_factors: 1,
        hidden: 3,
        local: LocalModelSpec::LevelTrendIssm { init },
        emission: Emission::Poisson,
        recognition: RecognitionKind::BiLstm,
        recognition_hidden: 4,
        ..ModelConfig::default()
    };
    let model = DeepFactorModel::new(config, &data, 7).map_err(|e| e.to_string())?;
    let s = &data.series()[0];
    let g = model.global_factors(&s.start, 3).map_err(|e| e.to_string())?;
    let f: Vec<f64> = (&g * model.embedding(0).ok_or("no embedding")?).iter().copied().collect();
    let cov = issm_cov(&model.issm_params(0).ok_or("no issm parameters")?, 3);
    let exact = quadrature_log_marginal(&s.target, &f, &cov, 48);
    let coarse = quadrature_log_marginal(&s.target, &f, &cov, 32);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut batches = Vec::with_capacity(100);
    for _ in 0..100 {
        let eps = draw_eps(100, 3, &mut rng);
        batches.push(elbo_with_draws(&model, s, &eps).map_err(|e| e.to_string())?.value);
    }
    let n = batches.len() as f64;
    let m = batches.iter().sum::<f64>() / n;
    let se = (batches.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    ensure(
        (exact - coarse).abs() < 1e-8 && m <= exact + BOUND_SE * se,
        format!(
            "10^4-draw ELBO {m:.5} (se {se:.1e}) vs quadrature log p(z) {exact:.5}; excess {:.2} se (max {BOUND_SE})",
            (m - exact) / se
        ),
    )
}

fn quantile_loss_fixtures() -> Check {
    let ql = |rho, z, zhat| quantile_loss(rho, z, zhat).map_err(|e: deepfactor::Error| e.to_string());
    let mut ok = ql(0.5, 10.0, 8.0)? == 2.0 && ql(0.9, 10.0, 8.0)? == 3.6;
    for rho in [0.1, 0.5, 0.9] {
        ok &= ql(rho, 4.0, 4.0)? == 0.0;
    }
    ok &= normalized_quantile_loss(0.5, &[10.0], &[8.0]).map_err(|e| e.to_string())? == 0.2;
    let fixtures_ok = ok;

    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..50);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let zhat: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let got = normalized_quantile_loss(0.5, &z, &zhat).map_err(|e| e.to_string())?;
        let want = z.iter().zip(&zhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / z.iter().map(|a| a.abs()).sum::<f64>();
        worst = worst.max((got - want).abs());
    }
    ensure(
        fixtures_ok && worst <= P50_TOL,
        format!("fixtures exact: {fixtures_ok}; P50QL vs sum|z-zhat|/sum|z| max err {worst:.1e} over 1000 fixtures"),
    )
}

/// Subspace distance to the true factors before and after training.
fn recovery_run(emission: Emission, seed: u64) -> Result<(f64, f64), String> {
    let spec = FourierFactorsSpec {
        num_factors: 2,
        orders: vec![],
        num_series: 50,
        length: 200,
        coef_range: [-1.0, 1.0],
        noise: LocalNoise::Gaussian { std: 0.1 },
        likelihood: emission,
        period: None,
        start: default_start(),
    };
    let data = generate_fourier_factors(&spec, seed).map_err(|e| e.to_string())?;
    let config = ModelConfig {
        num_factors: 2,
        hidden: 16,
        layers: 1,
        local: LocalModelSpec::RnnNoise { hidden: 8, layers: 1 },
        emission,
        recognition: RecognitionKind::BiLstm,
        recognition_hidden: 8,
        age_feature: true,
        mean_scaling: false,
    };
    let mut model = DeepFactorModel::new(config, &data.dataset, seed).map_err(|e| e.to_string())?;
    let distance = |m: &DeepFactorModel| -> Result<f64, String> {
        let g = m.global_factors(&default_start(), 200).map_err(|e| e.to_string())?;
        subspace_distance(&g, &data.factors).map_err(|e| e.to_string())
    };
    let before = distance(&model)?;
    let cfg = TrainConfig {
        epochs: 300,
        learning_rate: 1e-2,
        seed,
        ..TrainConfig::default()
    };
    train(&mut model, &data.dataset, &cfg).map_err(|e| e.to_string())?;
    Ok((before, distance(&model)?))
}

fn factor_recovery(emission: Emission, threshold: f64) -> Check {
    let clock = Instant::now();
    let mut before = Vec::new();
    let mut after = Vec::new();
    for seed in 0..SEEDS {
        let (b, a) = recovery_run(emission, seed)?;
        before.push(b);
        after.push(a);
    }
    let elapsed = clock.elapsed();
    let (mb, ma) = (median(before), median(after.clone()));
    ensure(
        ma < threshold && ma < mb && elapsed < RECOVERY_BUDGET,
        format!(
            "median distance trained {ma:.3} (threshold {threshold}) vs untrained {mb:.3}; per seed {:?}; {:.0}s",
            after.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn data_efficiency() -> Check {
    let config: RunConfig = serde_json::from_str(
        r#"{
          "seed": 0,
          "data": {"synthetic": {"kind": "fourier_factors", "num_factors": 2, "orders": [1, 2], "num_series": 20,
                                 "length": 192, "period": 24, "noise": {"kind": "gaussian", "std": 0.1}}},
          "train": {"epochs": 200, "learning_rate": 0.01},
          "efficiency": {"train_sizes": [24, 72, 168], "holdout": 24, "repeats": 5, "num_factors": 4, "hidden": 16}
        }"#,
    )
    .map_err(|e| e.to_string())?;
    let clock = Instant::now();
    let rows = cmd_efficiency_curve(&config, &config.efficiency.train_sizes, None).map_err(|e| e.to_string())?;
    let elapsed = clock.elapsed();
    let find = |structure, size| rows.iter().find(|r| r.structure == structure && r.train_size == size);
    let (Some(df), Some(rnn)) = (find(PointStructure::DeepFactor, 24), find(PointStructure::RnnForecaster, 24)) else {
        return Err(format!("missing rows at the smallest size: {rows:?}"));
    };
    let curve: Vec<String> = rows
        .iter()
        .map(|r| {
            let tag = match r.structure {
                PointStructure::DeepFactor => "df",
                PointStructure::RnnForecaster => "rnn",
            };
            format!("{tag}@{} {:.3}", r.train_size, r.mape_mean)
        })
        .collect();
    ensure(
        rows.len() == 6
            && rows.iter().all(|r| r.seconds_mean > 0.0 && r.repeats == 5)
            && df.mape_mean <= rnn.mape_mean
            && df.mape_std <= rnn.mape_std
            && elapsed < EFFICIENCY_BUDGET,
        format!(
            "size 24 MAPE df {:.3}±{:.3} vs rnn {:.3}±{:.3}; curve [{}]; {:.0}s",
            df.mape_mean,
            df.mape_std,
            rnn.mape_mean,
            rnn.mape_std,
            curve.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn recognition_rmse(kind: RecognitionKind, seed: u64) -> Result<f64, String> {
    let spec = RotatingLdsSpec {
        theta: 0.1,
        alpha: 0.05,
        sigma: 0.1,
        length: 120,
        likelihood: Emission::Poisson,
        h0: [2.5, 0.0],
        num_series: 1,
        start: default_start(),
    };
    let data = generate_rotating_lds(&spec, seed).map_err(|e| e.to_string())?;
    let config = ModelConfig {
        num_factors: 0,
        local: LocalModelSpec::LevelTrendIssm {
            init: LevelTrendIssmParams::default(),
        },
        emission: Emission::Poisson,
        recognition: kind,
        recognition_hidden: 16,
        ..ModelConfig::default()
    };
    let mut model = DeepFactorModel::new(config, &data.dataset, seed).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 300,
        learning_rate: 1e-2,
        seed,
        ..TrainConfig::default()
    };
    train(&mut model, &data.dataset, &cfg).map_err(|e| e.to_string())?;
    let (mut truth, mut recon) = (Vec::new(), Vec::new());
    for (s, u) in data.dataset.series().iter().zip(&data.u) {
        truth.extend(u.iter().map(|v| softplus(*v)));
        recon.extend(latent_estimate(&model, s).map_err(|e| e.to_string())?.iter().map(|v| softplus(*v)));
    }
    rmse(&truth, &recon).map_err(|e| e.to_string())
}

fn recognition_comparison() -> Check {
    let clock = Instant::now();
    let mut bilstm = Vec::new();
    let mut mlp = Vec::new();
    for seed in 0..SEEDS {
        bilstm.push(recognition_rmse(RecognitionKind::BiLstm, seed)?);
        mlp.push(recognition_rmse(RecognitionKind::Mlp, seed)?);
    }
    let (b, m) = (median(bilstm), median(mlp));
    ensure(
        b <= m,
        format!(
            "median intensity RMSE bilstm {b:.3} vs mlp {m:.3}; {:.0}s",
            clock.elapsed().as_secs_f64()
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deepfactor"))
        .current_dir(dir)
        .env_remove("DEEPFACTOR_THREADS")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn read(path: impl AsRef<Path>) -> Result<Vec<u8>, String> {
    fs::read(path.as_ref()).map_err(|e| format!("{}: {e}", path.as_ref().display()))
}

/// FNV-1a, enough to print a stable fingerprint of a file.
fn checksum(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf29ce484222325, |h, b| (h ^ *b as u64).wrapping_mul(0x100000001b3))
}

const HISTORY: usize = 48;

fn long_horizon() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let horizon = HISTORY * 3 / 2;
    let mut checked = Vec::new();
    for local in [r#"{"kind": "rnn_noise"}"#, r#"{"kind": "level_trend_issm"}"#, r#"{"kind": "gaussian_process"}"#] {
        let config = format!(
            r#"{{"data": {{"synthetic": {{"kind": "fourier_factors", "num_factors": 2, "num_series": 3, "length": {HISTORY},
                                          "noise": {{"kind": "gaussian", "std": 0.1}}}}}},
                "model": {{"num_factors": 2, "hidden": 6, "local": {local}}},
                "train": {{"epochs": 10}}}}"#
        );
        fs::write(d.join("c.json"), config).map_err(|e| e.to_string())?;
        cli(d, &["synth", "--config", "c.json", "--out-dir", "syn"])?;
        cli(d, &["train", "--config", "c.json", "--data", "syn/data.csv", "--out", "m.json"])?;
        cli(d, &[
            "forecast", "--config", "c.json", "--model", "m.json", "--data", "syn/data.csv", "--horizon",
            &horizon.to_string(), "--out", "f.csv",
        ])?;
        let text = String::from_utf8(read(d.join("f.csv"))?).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
        if rows.len() != 3 * horizon {
            return Err(format!("{local}: {} rows, expected {}", rows.len(), 3 * horizon));
        }
        for r in &rows {
            let q: Vec<f64> = r[4..7].iter().map(|v| v.parse().unwrap_or(f64::NAN)).collect();
            if !(q[0] <= q[1] && q[1] <= q[2]) {
                return Err(format!("{local}: non-monotone row {r:?}"));
            }
        }
        checked.push(rows.len());
    }
    Ok(format!(
        "T={HISTORY}, horizon {horizon}: {:?} monotone rows for rnn_noise, issm, gp",
        checked
    ))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let config = r#"{"seed": 11,
        "data": {"synthetic": {"kind": "fourier_factors", "num_factors": 2, "num_series": 4, "length": 60,
                               "likelihood": "poisson", "noise": {"kind": "gaussian", "std": 0.1}}},
        "model": {"num_factors": 2, "hidden": 6, "emission": "poisson", "recognition_hidden": 4,
                  "local": {"kind": "level_trend_issm"}},
        "train": {"epochs": 8}}"#;
    fs::write(d.join("c.json"), config).map_err(|e| e.to_string())?;
    for (run, threads) in [("a", "1"), ("b", "2")] {
        cli(d, &["synth", "--config", "c.json", "--out-dir", run, "--threads", threads])?;
        let data = format!("{run}/data.csv");
        let model = format!("{run}/m.json");
        cli(d, &["train", "--config", "c.json", "--data", &data, "--out", &model, "--threads", threads])?;
        cli(d, &[
            "forecast", "--config", "c.json", "--model", &model, "--data", &data, "--out", &format!("{run}/f.csv"),
            "--threads", threads,
        ])?;
    }
    let losses = |run: &str| -> Result<serde_json::Value, String> {
        let report: serde_json::Value =
            serde_json::from_slice(&read(d.join(run).join("m.report.json"))?).map_err(|e| e.to_string())?;
        Ok(report["losses"].clone())
    };
    let mut sums = Vec::new();
    for f in ["data.csv", "u_true.csv", "factors.csv", "m.json", "f.csv"] {
        let (a, b) = (read(d.join("a").join(f))?, read(d.join("b").join(f))?);
        if a != b {
            return Err(format!("{f} differs between runs"));
        }
        sums.push(format!("{f}={:016x}", checksum(&a)));
    }
    let (la, lb) = (losses("a")?, losses("b")?);
    if la != lb || la.as_array().is_none_or(|l| l.len() != 8) {
        return Err("loss traces differ".into());
    }
    Ok(format!("two runs (1 and 2 threads) identical: {}, loss trace", sums.join(" ")))
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("1 oracle equivalence", Box::new(oracle_equivalence)),
        ("2 gradient correctness", Box::new(gradient_correctness)),
        ("3 elbo degeneracy", Box::new(elbo_degeneracy)),
        ("4 elbo lower bound", Box::new(elbo_lower_bound)),
        ("5 quantile loss fixtures", Box::new(quantile_loss_fixtures)),
        (
            "6 factor recovery (gaussian)",
            Box::new(|| factor_recovery(Emission::Gaussian, RECOVERY_GAUSSIAN)),
        ),
        (
            "6 factor recovery (poisson)",
            Box::new(|| factor_recovery(Emission::Poisson, RECOVERY_POISSON)),
        ),
        ("7 data efficiency", Box::new(data_efficiency)),
        ("8 recognition network", Box::new(recognition_comparison)),
        ("9 long horizon", Box::new(long_horizon)),
        ("10 determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
