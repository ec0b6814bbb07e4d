use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeepFactorModel, ModelConfig, TrainingSpan};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "deepfactor-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// One parameter matrix, values in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Self-describing JSON checkpoint. Floats are written in shortest
/// round-trip form, so loading reproduces every parameter bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub series: Vec<String>,
    pub scales: Vec<f64>,
    pub span: TrainingSpan,
    pub params: Vec<ParamRecord>,
}

impl DeepFactorModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .store
            .iter()
            .map(|p| {
                let (r, c) = p.value.shape();
                let values = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|ij| p.value[ij]).collect();
                ParamRecord {
                    name: p.name.clone(),
                    shape: [r, c],
                    values,
                }
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            series: self.series.clone(),
            scales: self.scales.clone(),
            span: self.span,
            params,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unrecognized format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if ck.scales.len() != ck.series.len() {
            return Err(Error::Checkpoint("scales and series lengths differ".into()));
        }
        let mut model = Self::build(ck.config, ck.series, ck.scales, ck.span, 0)
            .map_err(|e| Error::Checkpoint(format!("invalid model description: {e}")))?;
        if model.store.len() != ck.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.store.len(),
                ck.params.len()
            )));
        }
        let mut records: HashMap<&str, &ParamRecord> = HashMap::new();
        for rec in &ck.params {
            if records.insert(rec.name.as_str(), rec).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {:?}", rec.name)));
            }
        }
        for p in model.store.iter_mut() {
            let rec = records
                .get(p.name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {:?}", p.name)))?;
            let [r, c] = rec.shape;
            if (r, c) != p.value.shape() || rec.values.len() != r * c {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?}: expected shape {:?}, found {:?} with {} values",
                    p.name,
                    p.value.shape(),
                    rec.shape,
                    rec.values.len()
                )));
            }
            p.value = Matrix::from_row_slice(r, c, &rec.values);
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &DeepFactorModel, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&model.to_checkpoint())?;
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DeepFactorModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    DeepFactorModel::from_checkpoint(ck)
}
