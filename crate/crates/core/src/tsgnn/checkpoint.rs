use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::eqlayers::Nonlinearity;
use crate::graphdata::PreprocessConfig;
use crate::ndarr::DenseArray;

use super::{Aggregator, Arch, ModelError, NodeModel, Pooling, TsGnnModel};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchRecord {
    layers: usize,
    widths: Vec<usize>,
    aggregator: Aggregator,
    pooling: Pooling,
    ridge: f64,
    nonlinearity: Nonlinearity,
    #[serde(default = "default_mixers")]
    mixers: bool,
}

fn default_mixers() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

/// On-disk model: architecture, feature preprocessing and named tensors.
/// Parameters are keyed `layer{i}.W{j}`, `layer{i}.a_self` and
/// `layer{i}.a_nbr`; a sorted map keeps the serialized bytes canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    version: u32,
    arch: ArchRecord,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    params: BTreeMap<String, ParamRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &TsGnnModel, preprocess: PreprocessConfig) -> Self {
        let a = &model.arch;
        let arch = ArchRecord {
            layers: a.num_layers(),
            widths: a.widths.clone(),
            aggregator: a.aggregator,
            pooling: a.pooling,
            ridge: a.ridge,
            nonlinearity: a.nonlinearity,
            mixers: a.mixers,
        };
        let params = model
            .param_names()
            .into_iter()
            .zip(model.parameters())
            .map(|(name, p)| {
                (
                    name,
                    ParamRecord {
                        shape: p.shape().to_vec(),
                        data: p.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            arch,
            preprocess,
            params,
        }
    }

    /// Rebuilds the model, checking every tensor against the architecture.
    pub fn to_model(&self) -> Result<TsGnnModel, ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let r = &self.arch;
        if r.layers + 1 != r.widths.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} layers but {} widths",
                r.layers,
                r.widths.len()
            )));
        }
        let arch = Arch {
            widths: r.widths.clone(),
            aggregator: r.aggregator,
            pooling: r.pooling,
            ridge: r.ridge,
            nonlinearity: r.nonlinearity,
            mixers: r.mixers,
        };
        let mut model = TsGnnModel::zeros(arch)?;
        let names = model.param_names();
        if names.len() != self.params.len() {
            let extra: Vec<&String> = self.params.keys().filter(|k| !names.contains(k)).collect();
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {} (unexpected: {extra:?})",
                names.len(),
                self.params.len()
            )));
        }
        for (name, slot) in names.iter().zip(model.parameters_mut()) {
            let rec = self
                .params
                .get(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if rec.shape != slot.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "{name}: shape {:?}, architecture needs {:?}",
                    rec.shape,
                    slot.shape()
                )));
            }
            let arr = DenseArray::new(rec.shape.clone(), rec.data.clone())
                .map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
            if !arr.is_finite() {
                return Err(ModelError::Checkpoint(format!("{name}: non-finite value")));
            }
            *slot = arr;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }
}
