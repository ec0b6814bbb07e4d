use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deepfactor::data::{generate, load_csv, write_csv, SyntheticSpec, TimeSeriesDataset};
use deepfactor::forecast::{
    evaluate_rows, forecast, normalized_quantile_loss, read_forecast_csv, write_forecast_csv, ForecastResult, MetricReport,
};
use deepfactor::model::{load_checkpoint, save_checkpoint, DeepFactorModel};
use deepfactor::error::csv_writer;
use deepfactor::Error;
use deepfactor::training::{train, train_point_model, PointModel, PointModelConfig, PointStructure, TrainConfig, TrainReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const DATA_FILE: &str = "data.csv";
pub const U_TRUE_FILE: &str = "u_true.csv";
pub const FACTORS_FILE: &str = "factors.csv";
pub const EFFICIENCY_HEADER: [&str; 7] = [
    "structure",
    "train_size",
    "mape_mean",
    "mape_std",
    "seconds_mean",
    "seconds_std",
    "repeats",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthSummary {
    pub kind: &'static str,
    pub num_series: usize,
    pub length: usize,
    pub files: Vec<PathBuf>,
}

/// Generate the configured synthetic dataset into `out_dir`: `data.csv`,
/// `u_true.csv` and, for factor data, `factors.csv` (one column per factor).
pub fn cmd_synth(config: &RunConfig, out_dir: &Path) -> CliResult<SynthSummary> {
    let spec = config
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| CliError::Config("synth needs a data.synthetic section".into()))?;
    let data = generate(spec, config.seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io_at(out_dir, e))?;
    let mut files = vec![out_dir.join(DATA_FILE), out_dir.join(U_TRUE_FILE)];
    write_csv(&data.dataset, &files[0])?;

    let mut w = csv_writer(&files[1])?;
    w.write_record(["item_id", "step", "u_true"])?;
    for (s, u) in data.dataset.series().iter().zip(&data.u_true) {
        for (t, v) in u.iter().enumerate() {
            w.write_record([s.id.clone(), t.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;

    if let Some(g) = &data.factors {
        let path = out_dir.join(FACTORS_FILE);
        let mut w = csv_writer(&path)?;
        w.write_record((0..g.ncols()).map(|k| format!("factor_{k}")))?;
        for row in g.row_iter() {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush()?;
        files.push(path);
    }
    let (_, length) = data.dataset.aligned_span()?;
    Ok(SynthSummary {
        kind: match spec {
            SyntheticSpec::RotatingLds(_) => "rotating_lds",
            SyntheticSpec::FourierFactors(_) => "fourier_factors",
        },
        num_series: data.dataset.len(),
        length,
        files,
    })
}

/// The configured dataset: the CSV at `data.path`, else the synthetic spec
/// generated with the run seed.
pub fn load_data(config: &RunConfig) -> CliResult<TimeSeriesDataset> {
    if let Some(p) = &config.data.path {
        return Ok(load_csv(p)?);
    }
    match &config.data.synthetic {
        Some(spec) => Ok(generate(spec, config.seed)?.dataset),
        None => Err(CliError::Config("no data: pass --data or set data.path or data.synthetic".into())),
    }
}

/// Train a model (fresh from `config.model`, or resumed from a checkpoint)
/// and write the checkpoint and the report JSON. The run seed drives both
/// initialization and training draws.
pub fn cmd_train(
    config: &RunConfig,
    dataset: &TimeSeriesDataset,
    out: &Path,
    report_path: &Path,
    resume: Option<&Path>,
) -> CliResult<TrainReport> {
    let mut model = match resume {
        Some(p) => load_checkpoint(p)?,
        None => DeepFactorModel::new(config.model.clone(), dataset, config.seed)?,
    };
    let train_config = TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    };
    let report = train(&mut model, dataset, &train_config)?;
    save_checkpoint(&model, out)?;
    fs::write(report_path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io_at(report_path, e))?;
    Ok(report)
}

/// Forecast every series of `dataset` from its last observation and write
/// the forecast CSV.
pub fn cmd_forecast(
    model_path: &Path,
    dataset: &TimeSeriesDataset,
    config: &RunConfig,
    out: &Path,
) -> CliResult<Vec<ForecastResult>> {
    let model = load_checkpoint(model_path)?;
    let f = &config.forecast;
    let results = dataset
        .series()
        .par_iter()
        .map(|s| forecast(&model, s, f.horizon, f.num_samples, config.seed, &f.quantiles))
        .collect::<deepfactor::Result<Vec<_>>>()?;
    write_forecast_csv(&results, out)?;
    Ok(results)
}

/// Score a forecast file against actuals; optionally write the metrics JSON.
pub fn cmd_eval(forecast_path: &Path, actuals_path: &Path, out: Option<&Path>) -> CliResult<MetricReport> {
    let rows = read_forecast_csv(forecast_path)?;
    let actuals = load_csv(actuals_path)?;
    let report = evaluate_rows(&rows, &actuals)?;
    if let Some(p) = out {
        fs::write(p, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io_at(p, e))?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub structure: PointStructure,
    pub train_size: usize,
    pub mape_mean: f64,
    pub mape_std: f64,
    pub seconds_mean: f64,
    pub seconds_std: f64,
    pub repeats: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// MAPE and training seconds of one structure on one train window.
fn efficiency_run(
    structure: PointStructure,
    config: &RunConfig,
    dataset: &TimeSeriesDataset,
    size: usize,
    seed: u64,
) -> CliResult<(f64, f64)> {
    let e = &config.efficiency;
    let (_, len) = dataset.aligned_span()?;
    let train_from = len - e.holdout - size;
    let train_ds = dataset.window(train_from, size)?;
    let test_ds = dataset.window(len - e.holdout, e.holdout)?;
    let point = PointModelConfig {
        structure,
        num_factors: e.num_factors,
        hidden: e.hidden,
        layers: e.layers,
        age_feature: e.age_feature,
    };
    let mut model = PointModel::new(point, &train_ds, seed)?;
    // A fixed epoch budget keeps the work proportional to the window length.
    let train_config = TrainConfig {
        seed,
        patience: config.train.epochs.max(1),
        ..config.train.clone()
    };
    let clock = Instant::now();
    train_point_model(&mut model, &train_ds, &train_config)?;
    let seconds = clock.elapsed().as_secs_f64();
    let (mut z, mut zhat) = (Vec::new(), Vec::new());
    for (tr, te) in train_ds.series().iter().zip(test_ds.series()) {
        z.extend_from_slice(&te.target);
        zhat.extend(model.predict_after(tr, e.holdout)?);
    }
    Ok((normalized_quantile_loss(0.5, &z, &zhat)?, seconds))
}

/// Point-forecast MAPE on a held-out span against training-window size for
/// the factor structure and the RNN forecaster. Each training window ends
/// where the held-out span of `efficiency.holdout` steps begins. Repeat `r`
/// uses seed `seed + r`; synthetic data is regenerated per repeat, file data
/// is shared. Writes the aggregated curve to `out` when given.
pub fn cmd_efficiency_curve(config: &RunConfig, sizes: &[usize], out: Option<&Path>) -> CliResult<Vec<EfficiencyRow>> {
    let e = &config.efficiency;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CliError::Config("train sizes must be non-empty and positive".into()));
    }
    let file_data = config.data.path.as_ref().map(load_csv).transpose()?;
    let mut datasets = Vec::with_capacity(e.repeats);
    for r in 0..e.repeats as u64 {
        let seed = config.seed.wrapping_add(r);
        let ds = match (&file_data, &config.data.synthetic) {
            (Some(d), _) => d.clone(),
            (None, Some(spec)) => generate(spec, seed)?.dataset,
            (None, None) => return Err(CliError::Config("efficiency needs data.path or data.synthetic".into())),
        };
        let (_, len) = ds.aligned_span()?;
        let largest = *sizes.iter().max().expect("non-empty sizes");
        if largest + e.holdout > len {
            return Err(deepfactor::Error::InvalidArgument(format!(
                "train size {largest} plus holdout {} exceeds the available history of {len} steps",
                e.holdout
            ))
            .into());
        }
        datasets.push((seed, ds));
    }

    let mut rows = Vec::new();
    for &size in sizes {
        for structure in [PointStructure::DeepFactor, PointStructure::RnnForecaster] {
            let mut mapes = Vec::new();
            let mut secs = Vec::new();
            for (seed, ds) in &datasets {
                let (m, s) = efficiency_run(structure, config, ds, size, *seed)?;
                mapes.push(m);
                secs.push(s);
            }
            let (mape_mean, mape_std) = mean_std(&mapes);
            let (seconds_mean, seconds_std) = mean_std(&secs);
            rows.push(EfficiencyRow {
                structure,
                train_size: size,
                mape_mean,
                mape_std,
                seconds_mean,
                seconds_std,
                repeats: e.repeats,
            });
        }
    }
    if let Some(p) = out {
        let mut w = csv_writer(p)?;
        w.write_record(EFFICIENCY_HEADER)?;
        for r in &rows {
            let name = match r.structure {
                PointStructure::DeepFactor => "deep_factor",
                PointStructure::RnnForecaster => "rnn_forecaster",
            };
            w.write_record([
                name.to_string(),
                r.train_size.to_string(),
                r.mape_mean.to_string(),
                r.mape_std.to_string(),
                r.seconds_mean.to_string(),
                r.seconds_std.to_string(),
                r.repeats.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(rows)
}
