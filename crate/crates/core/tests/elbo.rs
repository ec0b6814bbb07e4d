mod common;

use common::{dataset, gauss_hermite, issm_cov};
use deepfactor::autodiff::softplus;
use deepfactor::likelihood::{elbo, elbo_with_draws, marginal_loglik, Emission};
use deepfactor::local::{GpParams, LevelTrendIssmParams};
use deepfactor::model::{DeepFactorModel, LocalModelSpec, ModelConfig};
use deepfactor::networks::RecognitionKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

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

#[test]
fn point_mass_recognition_recovers_the_marginal() {
    let data = dataset(&[vec![1.0, 2.5, 0.3, -0.7, 1.1, 0.0], vec![3.0, 2.0, 2.2, 2.9, 3.3, 3.1]]);
    for local in locals() {
        for mean_scaling in [false, true] {
            let config = ModelConfig {
                num_factors: 2,
                hidden: 5,
                local: local.clone(),
                mean_scaling,
                ..ModelConfig::default()
            };
            assert_eq!(
                DeepFactorModel::new(config.clone(), &data, 1).unwrap().recognition_kind(),
                RecognitionKind::PointMass
            );
            let model = DeepFactorModel::new(config, &data, 1).unwrap();
            for s in data.series() {
                let exact = marginal_loglik(&model, s).unwrap();
                for n in [1, 7] {
                    let e = elbo(&model, s, n, 3).unwrap();
                    assert!((e.value - exact).abs() <= 1e-10, "{}: {} vs {exact}", local.name(), e.value);
                }
            }
        }
    }
}

fn poisson_model(local: LocalModelSpec, data: &deepfactor::data::TimeSeriesDataset, seed: u64) -> DeepFactorModel {
    let config = ModelConfig {
        num_factors: 1,
        hidden: 3,
        local,
        emission: Emission::Poisson,
        recognition: RecognitionKind::BiLstm,
        recognition_hidden: 4,
        ..ModelConfig::default()
    };
    DeepFactorModel::new(config, data, seed).unwrap()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn single_and_multi_sample_estimates_agree() {
    let data = dataset(&[vec![0.0, 2.0, 1.0, 4.0, 3.0, 1.0, 0.0, 2.0]]);
    for local in locals() {
        let model = poisson_model(local.clone(), &data, 2);
        let s = &data.series()[0];
        let one: Vec<f64> = (0..200).map(|k| elbo(&model, s, 1, k).unwrap().value).collect();
        let many: Vec<f64> = (0..200).map(|k| elbo(&model, s, 16, 1000 + k).unwrap().value).collect();
        assert!(one.iter().chain(&many).all(|v| v.is_finite()));
        let (m1, se1) = mean_and_se(&one);
        let (m16, se16) = mean_and_se(&many);
        let tol = 5.0 * (se1 * se1 + se16 * se16).sqrt();
        assert!((m1 - m16).abs() <= tol, "{}: {m1} vs {m16} (tol {tol})", local.name());
    }
}

#[test]
fn components_add_up() {
    let data = dataset(&[vec![1.0, 0.0, 3.0, 2.0]]);
    let model = poisson_model(locals()[1].clone(), &data, 4);
    let e = elbo(&model, &data.series()[0], 5, 9).unwrap();
    assert!((e.value - (e.recon + e.prior + e.entropy)).abs() < 1e-10);
    assert_eq!(e.n_samples, 5);
    assert!(elbo(&model, &data.series()[0], 0, 9).is_err());
}

/// `log p(z)` for a Poisson emission over a Gaussian latent
/// `N(mean, cov)`, by a tensor Gauss-Hermite rule in three dimensions.
fn quadrature_log_marginal(z: &[f64], mean: &[f64], cov: &nalgebra::DMatrix<f64>, nodes: usize) -> f64 {
    assert_eq!(z.len(), 3);
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

#[test]
fn elbo_is_a_lower_bound_on_the_quadrature_marginal() {
    let data = dataset(&[vec![1.0, 4.0, 0.0]]);
    let init = LevelTrendIssmParams {
        delta: 0.8,
        gamma: 0.6,
        alpha: 0.6,
        beta: 0.3,
        sigma: 0.4,
        s0: 0.8,
    };
    let model = poisson_model(LocalModelSpec::LevelTrendIssm { init }, &data, 7);
    let s = &data.series()[0];
    let g = model.global_factors(&s.start, 3).unwrap();
    let f: Vec<f64> = (&g * model.embedding(0).unwrap()).iter().copied().collect();
    let cov = issm_cov(&model.issm_params(0).unwrap(), 3);
    let exact = quadrature_log_marginal(&s.target, &f, &cov, 48);
    let coarse = quadrature_log_marginal(&s.target, &f, &cov, 32);
    assert!((exact - coarse).abs() < 1e-8, "quadrature not converged: {exact} vs {coarse}");

    // 10^4 draws in 100 batches; the batch means give the standard error.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batches: Vec<f64> = (0..100)
        .map(|_| {
            let eps = deepfactor::likelihood::draw_eps(100, 3, &mut rng);
            elbo_with_draws(&model, s, &eps).unwrap().value
        })
        .collect();
    let (m, se) = mean_and_se(&batches);
    assert!(m <= exact + 3.0 * se, "ELBO {m} (se {se}) exceeds log marginal {exact}");
    assert!(m > exact - 50.0, "ELBO {m} implausibly far below {exact}");
}
