//! Label-inpainting training: each step hides part of the training labels,
//! shows the rest to the model and scores its predictions on the hidden ones.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eqlayers::Nonlinearity;
use crate::graphdata::{load_dataset, Graph, GraphError, PreprocessConfig};
use crate::ndarr::{adam_step, AdamConfig, AdamState, DenseArray, NdError, Precision, Tape};
use crate::rng::SeedStream;
use crate::tsgnn::{Aggregator, Arch, ModelError, NodeModel, Pooling, TsGnnModel};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("epoch {epoch}: {source}")]
    Numerical {
        epoch: usize,
        #[source]
        source: NdError,
    },
}

impl From<NdError> for TrainError {
    fn from(e: NdError) -> Self {
        Self::Model(ModelError::Nd(e))
    }
}

fn d_lr() -> f64 {
    0.01
}
fn d_epochs() -> usize {
    300
}
fn d_layers() -> usize {
    2
}
fn d_hidden() -> usize {
    16
}
fn d_visible() -> f64 {
    0.5
}
fn d_ridge() -> f64 {
    1e-4
}
fn d_true() -> bool {
    true
}

/// Training configuration, read from JSON with unknown keys rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_layers")]
    pub num_layers: usize,
    #[serde(default = "d_hidden")]
    pub hidden_width: usize,
    /// Fraction of training labels shown to the model at each step.
    #[serde(default = "d_visible")]
    pub visible_fraction: f64,
    #[serde(default)]
    pub aggregator: Aggregator,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default = "d_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    #[serde(default = "d_true")]
    pub mixers: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Strict mode omits wall-clock times so reports are reproducible.
    #[serde(default = "d_true")]
    pub strict: bool,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub graphs: Vec<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.visible_fraction > 0.0 && self.visible_fraction < 1.0) {
            return bad(format!(
                "visible_fraction must lie in (0, 1), got {}",
                self.visible_fraction
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.num_layers == 0 || self.hidden_width == 0 {
            return bad("num_layers and hidden_width must be positive".into());
        }
        self.arch().validate()?;
        Ok(())
    }

    pub fn arch(&self) -> Arch {
        Arch {
            ridge: self.ridge,
            nonlinearity: self.nonlinearity,
            mixers: self.mixers,
            ..Arch::new(self.num_layers, self.hidden_width, self.aggregator, self.pooling)
        }
    }
}

/// Splits `train` into visible and hidden nodes. The visible count is
/// `round(fraction·|train|)` clamped to `[1, |train| − 1]`; both lists are
/// returned sorted.
pub fn mask_split(
    rng: &mut impl Rng,
    train: &[usize],
    fraction: f64,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if train.len() < 2 {
        return Err(TrainError::Config(format!(
            "masking needs at least 2 training nodes, got {}",
            train.len()
        )));
    }
    let mut ids = train.to_vec();
    ids.shuffle(rng);
    let k = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut visible = ids[..k].to_vec();
    let mut hidden = ids[k..].to_vec();
    visible.sort_unstable();
    hidden.sort_unstable();
    Ok((visible, hidden))
}

/// Mean softmax cross-entropy of `logits` rows in `hidden` against `labels`.
pub fn masked_ce_loss(
    logits: &DenseArray,
    labels: &[usize],
    hidden: &[usize],
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone())?;
    let targets: Vec<usize> = hidden.iter().map(|&v| labels[v]).collect();
    let loss = tape.cross_entropy_rows(l, &targets, hidden)?;
    Ok(tape.value(loss).data()[0])
}

/// Logits of any [`NodeModel`] with the labels of `visible` shown.
pub fn predict<M: NodeModel>(
    model: &M,
    graph: &Graph,
    visible: &[usize],
) -> Result<DenseArray, TrainError> {
    let mut tape = Tape::new();
    let params = model
        .parameters()
        .into_iter()
        .map(|p| tape.constant(p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let y = graph.one_hot_visible(visible);
    let logits = model.logits_on_tape(&mut tape, &params, graph, &y, visible)?;
    Ok(tape.value(logits).clone())
}

/// Number of `eval` nodes whose argmax prediction (ties to the lowest
/// class) matches the label, with every training label visible.
pub fn correct_count<M: NodeModel>(
    model: &M,
    graph: &Graph,
    eval: &[usize],
) -> Result<usize, TrainError> {
    let logits = predict(model, graph, &graph.splits().train)?;
    let pred = logits.argmax_rows()?;
    Ok(eval.iter().filter(|&&v| pred[v] == graph.labels()[v]).count())
}

/// Accuracy on `eval` with every training label visible.
pub fn evaluate<M: NodeModel>(model: &M, graph: &Graph, eval: &[usize]) -> Result<f64, TrainError> {
    if eval.is_empty() {
        return Err(TrainError::Config("evaluation set is empty".into()));
    }
    Ok(correct_count(model, graph, eval)? as f64 / eval.len() as f64)
}

/// Test-split accuracy on a graph the model never trained on. No parameter
/// is touched and `(N, F, C)` may differ from the training graphs.
pub fn zeroshot<M: NodeModel>(model: &M, graph: &Graph) -> Result<f64, TrainError> {
    evaluate(model, graph, &graph.splits().test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub version: u32,
    pub epoch: usize,
    /// Mean masked loss over the training graphs.
    pub loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub version: u32,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub final_val_acc: f64,
    pub final_test_acc: f64,
    /// 1-based epoch of the best validation accuracy (first on ties).
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_test_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub summary: TrainSummary,
}

impl TrainReport {
    /// One JSON object per epoch, then the summary object.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("report serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary).expect("report serializes"));
        out.push('\n');
        out
    }
}

/// A trained model together with the best-validation snapshot.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub best: M,
    pub report: TrainReport,
}

/// Mean val and test accuracy over `graphs`, one forward pass per graph.
/// Graphs with an empty split are left out of that split's mean.
fn split_accuracies<M: NodeModel>(model: &M, graphs: &[Graph]) -> Result<(f64, f64), TrainError> {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for g in graphs {
        let pred = predict(model, g, &g.splits().train)?.argmax_rows()?;
        for (k, idx) in [&g.splits().val, &g.splits().test].into_iter().enumerate() {
            if !idx.is_empty() {
                let hits = idx.iter().filter(|&&v| pred[v] == g.labels()[v]).count();
                sums[k] += hits as f64 / idx.len() as f64;
                counts[k] += 1;
            }
        }
    }
    let mean = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
    Ok((mean(0), mean(1)))
}

/// Tags numerical failures with the epoch they occurred in.
fn at_epoch(epoch: usize, e: TrainError) -> TrainError {
    match e {
        TrainError::Model(ModelError::Nd(source)) => TrainError::Numerical { epoch, source },
        other => other,
    }
}

/// Trains `model` in place on already preprocessed `graphs`, one Adam step
/// per graph per epoch in the given order.
pub fn fit<M: NodeModel + Clone>(
    mut model: M,
    graphs: &[Graph],
    config: &TrainConfig,
) -> Result<Trained<M>, TrainError> {
    config.validate()?;
    if graphs.is_empty() {
        return Err(TrainError::Config("no training graphs".into()));
    }
    let started = Instant::now();
    let stream = SeedStream::new(config.seed);
    let mut mask_rng = stream.rng("mask");
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.parameters().into_iter().cloned().collect::<Vec<_>>(),
    );
    let mut records = Vec::with_capacity(config.epochs);
    let mut best = model.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_test = 0.0;

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        let mut loss_sum = 0.0;
        for g in graphs {
            let (visible, hidden) = mask_split(&mut mask_rng, &g.splits().train, config.visible_fraction)?;
            let y = g.one_hot_visible(&visible);
            let mut tape = Tape::with_precision(config.precision);
            let numerical = |source: NdError| TrainError::Numerical { epoch, source };
            let params = model
                .parameters()
                .into_iter()
                .map(|p| tape.param(p.clone()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(numerical)?;
            let logits = model
                .logits_on_tape(&mut tape, &params, g, &y, &visible)
                .map_err(|e| at_epoch(epoch, e.into()))?;
            let targets: Vec<usize> = hidden.iter().map(|&v| g.labels()[v]).collect();
            let loss = tape
                .cross_entropy_rows(logits, &targets, &hidden)
                .map_err(numerical)?;
            let grads = tape.backward(loss).map_err(numerical)?;
            let grad_list: Vec<DenseArray> = params.iter().map(|&p| grads.wrt(&tape, p)).collect();
            loss_sum += tape.value(loss).data()[0];
            let mut current: Vec<DenseArray> = model.parameters().into_iter().cloned().collect();
            adam_step(&mut adam, &mut current, &grad_list).map_err(numerical)?;
            for (slot, v) in model.parameters_mut().into_iter().zip(current) {
                *slot = v;
            }
        }
        let loss = loss_sum / graphs.len() as f64;
        if !loss.is_finite() {
            return Err(TrainError::Numerical {
                epoch,
                source: NdError::NonFinite {
                    op: "loss",
                    node: 0,
                },
            });
        }
        let (val_acc, test_acc) =
            split_accuracies(&model, graphs).map_err(|e| at_epoch(epoch, e))?;
        if val_acc > best_val {
            best_val = val_acc;
            best_epoch = epoch;
            best_test = test_acc;
            best = model.clone();
        }
        let wall_ms = (!config.strict).then(|| epoch_start.elapsed().as_secs_f64() * 1e3);
        log::info!("epoch {epoch}: loss {loss:.4} val {val_acc:.4} test {test_acc:.4}");
        records.push(EpochRecord {
            version: REPORT_VERSION,
            epoch,
            loss,
            val_acc,
            test_acc,
            wall_ms,
        });
    }
    let last = records.last().expect("epochs >= 1");
    let summary = TrainSummary {
        version: REPORT_VERSION,
        seed: config.seed,
        epochs: config.epochs,
        final_loss: last.loss,
        final_val_acc: last.val_acc,
        final_test_acc: last.test_acc,
        best_epoch,
        best_val_acc: best_val,
        best_test_acc: best_test,
        wall_ms: (!config.strict).then(|| started.elapsed().as_secs_f64() * 1e3),
        config: config.clone(),
    };
    Ok(Trained {
        model,
        best,
        report: TrainReport {
            epochs: records,
            summary,
        },
    })
}

/// Initializes a TS-GNN from the config's seed and trains it on `graphs`,
/// which must already be preprocessed.
pub fn train_on_graphs(
    config: &TrainConfig,
    graphs: &[Graph],
) -> Result<Trained<TsGnnModel>, TrainError> {
    config.validate()?;
    let mut rng = SeedStream::new(config.seed).rng("init");
    let model = TsGnnModel::init(config.arch(), &mut rng)?;
    fit(model, graphs, config)
}

/// Loads and preprocesses every dataset in `config.graphs`, then trains.
pub fn train(config: &TrainConfig) -> Result<Trained<TsGnnModel>, TrainError> {
    config.validate()?;
    if config.graphs.is_empty() {
        return Err(TrainError::Config("config lists no graphs".into()));
    }
    let graphs = config
        .graphs
        .iter()
        .map(|p| config.preprocess.apply(&load_dataset(p)?))
        .collect::<Result<Vec<_>, _>>()?;
    train_on_graphs(config, &graphs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{gen_sbm, SbmParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_graph() -> Graph {
        let g = gen_sbm(&SbmParams {
            classes: 3,
            nodes_per_class: 12,
            p_in: 0.4,
            p_out: 0.05,
            feature_dim: 4,
            noise: 0.3,
            seed: 3,
        })
        .unwrap();
        PreprocessConfig::default().apply(&g).unwrap()
    }

    #[test]
    fn mask_split_partitions() {
        let train: Vec<usize> = (0..10).collect();
        let (v, h) = mask_split(&mut ChaCha8Rng::seed_from_u64(1), &train, 0.5).unwrap();
        assert_eq!((v.len(), h.len()), (5, 5));
        let mut all = [v.clone(), h].concat();
        all.sort_unstable();
        assert_eq!(all, train);
        let (v2, _) = mask_split(&mut ChaCha8Rng::seed_from_u64(1), &train, 0.5).unwrap();
        assert_eq!(v, v2);
        let (v, h) = mask_split(&mut ChaCha8Rng::seed_from_u64(1), &train, 0.01).unwrap();
        assert_eq!((v.len(), h.len()), (1, 9));
        assert!(mask_split(&mut ChaCha8Rng::seed_from_u64(1), &[3], 0.5).is_err());
    }

    #[test]
    fn loss_examples() {
        let zero = DenseArray::zeros(&[3, 4]);
        let l = masked_ce_loss(&zero, &[0, 1, 2], &[0, 2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let sure = DenseArray::from_rows(&[[100.0, 0.0], [0.0, 100.0]]).unwrap();
        assert!(masked_ce_loss(&sure, &[0, 1], &[0, 1]).unwrap() < 1e-12);
        assert!(masked_ce_loss(&sure, &[0, 1], &[]).is_err());
    }

    #[test]
    fn config_validation_and_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.hidden_width, c.num_layers), (0.01, 16, 2));
        assert_eq!((c.visible_fraction, c.ridge), (0.5, 1e-4));
        let bad = TrainConfig { epochs: 0, ..c.clone() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { visible_fraction: 1.0, ..c.clone() };
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn short_run_is_finite_and_deterministic() {
        let g = small_graph();
        let config = TrainConfig {
            epochs: 3,
            hidden_width: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train_on_graphs(&config, std::slice::from_ref(&g)).unwrap();
        let b = train_on_graphs(&config, std::slice::from_ref(&g)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.report.to_json_lines(), b.report.to_json_lines());
        assert_eq!(a.report.epochs.len(), 3);
        assert!(a.report.epochs[0].loss <= 3f64.ln() + 0.1);
        assert!(a.report.epochs.iter().all(|e| e.loss.is_finite()));
    }

    #[test]
    fn constant_logits_pick_class_zero() {
        let g = small_graph();
        let model = TsGnnModel::zeros(TrainConfig::default().arch()).unwrap();
        let test = &g.splits().test;
        let acc = evaluate(&model, &g, test).unwrap();
        let zeros = test.iter().filter(|&&v| g.labels()[v] == 0).count();
        assert_eq!(acc, zeros as f64 / test.len() as f64);
    }
}
