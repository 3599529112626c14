//! Verification routines behind `symcheck`, `gradcheck` and `perfscan`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::graphdata::{gen_sbm, Graph, SbmParams, Splits};
use crate::ndarr::{grad_check, DenseArray, NdError, Tape};
use crate::rng::SeedStream;
use crate::symmetry::{apply_to_graph, permute_axis, PermTriple};
use crate::trainer::predict;
use crate::tsgnn::{
    solve_mixers, tsgnn_layer_forward, Aggregator, Arch, ModelError, NodeModel, NodeState,
    Pooling, TsGnnModel,
};

pub const AGGREGATORS: [Aggregator; 3] = [Aggregator::Sum, Aggregator::Mean, Aggregator::Attention];
pub const POOLINGS: [Pooling; 2] = [Pooling::Sum, Pooling::Mean];

/// Random simple graph with Gaussian features, uniform labels and a random
/// train split of at least two nodes. Every class appears at least once.
pub fn random_graph(rng: &mut impl Rng, n: usize, f: usize, c: usize, p_edge: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p_edge) {
                edges.push((u, v));
            }
        }
    }
    let features = DenseArray::from_fn(&[n, f], |_| StandardNormal.sample(rng));
    let mut labels: Vec<usize> = (0..n).map(|v| if v < c { v } else { rng.random_range(0..c) }).collect();
    labels.shuffle(rng);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let n_train = rng.random_range(2..=n.max(3) - 1).min(n);
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    let splits = Splits {
        train,
        val: Vec::new(),
        test,
    };
    Graph::from_edges(n, &edges, features, labels, c, splits)
        .expect("generated graph is valid")
        .0
}

fn random_subset(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
    if v.is_empty() {
        v.push(rng.random_range(0..n));
    }
    v
}

/// Largest absolute deviation between `model(σ·G)` and `σ·model(G)` for one
/// random triple permutation `σ`.
pub fn equivariance_deviation<M: NodeModel>(
    model: &M,
    graph: &Graph,
    visible: &[usize],
    perm: &PermTriple,
) -> Result<f64, ModelError> {
    let run = |g: &Graph, vis: &[usize]| {
        predict(model, g, vis).map_err(|e| match e {
            crate::trainer::TrainError::Model(m) => m,
            other => ModelError::Shape(other.to_string()),
        })
    };
    let base = run(graph, visible)?;
    let moved = apply_to_graph(perm, graph).map_err(|e| ModelError::Shape(e.to_string()))?;
    let moved_visible: Vec<usize> = visible.iter().map(|&v| perm.sigma_n.image(v)).collect();
    let got = run(&moved, &moved_visible)?;
    let expected = permute_axis(&base, 0, &perm.sigma_n)
        .and_then(|a| permute_axis(&a, 1, &perm.sigma_c))
        .map_err(|e| ModelError::Shape(e.to_string()))?;
    Ok(got.max_abs_diff(&expected)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComboDeviation {
    pub aggregator: Aggregator,
    pub pooling: Pooling,
    pub mixers: bool,
    pub trials: usize,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymcheckReport {
    /// Total over all architectures.
    pub trials: usize,
    pub tol: f64,
    pub max_deviation: f64,
    pub passed: bool,
    pub combos: Vec<ComboDeviation>,
}

/// How models are obtained for each symcheck trial.
#[derive(Debug, Clone)]
pub enum SymcheckModels {
    /// Fresh random weights per trial, cycling through every listed arch.
    Random(Vec<Arch>),
    /// Zero weights, cycling through the listed archs.
    Zero(Vec<Arch>),
    /// One fixed model.
    Fixed(TsGnnModel),
}

/// Every aggregator × pooling × mixers combination with the given depth.
pub fn all_archs(layers: usize, hidden: usize) -> Vec<Arch> {
    let mut out = Vec::new();
    for agg in AGGREGATORS {
        for pool in POOLINGS {
            for mixers in [false, true] {
                out.push(Arch {
                    mixers,
                    ..Arch::new(layers, hidden, agg, pool)
                });
            }
        }
    }
    out
}

/// Runs `trials` equivariance trials per architecture on random graphs
/// with `N ∈ [3, 12]`, `F ∈ [1, 6]`, `C ∈ [2, 5]`.
pub fn symcheck(
    models: &SymcheckModels,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<SymcheckReport, ModelError> {
    let stream = SeedStream::new(seed);
    let archs: Vec<Arch> = match models {
        SymcheckModels::Random(a) | SymcheckModels::Zero(a) => a.clone(),
        SymcheckModels::Fixed(m) => vec![m.arch.clone()],
    };
    if archs.is_empty() {
        return Err(ModelError::Arch("no architectures to check".into()));
    }
    let mut combos: Vec<ComboDeviation> = archs
        .iter()
        .map(|a| ComboDeviation {
            aggregator: a.aggregator,
            pooling: a.pooling,
            mixers: a.mixers,
            trials: 0,
            max_deviation: 0.0,
        })
        .collect();
    for t in 0..trials * archs.len() {
        let mut rng = stream.rng_indexed("symcheck", t as u64);
        let slot = t % archs.len();
        let model = match models {
            SymcheckModels::Random(_) => TsGnnModel::init(archs[slot].clone(), &mut rng)?,
            SymcheckModels::Zero(_) => TsGnnModel::zeros(archs[slot].clone())?,
            SymcheckModels::Fixed(m) => m.clone(),
        };
        let n = rng.random_range(3..=12);
        let f = rng.random_range(1..=6);
        let c = rng.random_range(2..=5);
        let graph = random_graph(&mut rng, n, f, c, 0.4);
        let visible = random_subset(&mut rng, n);
        let perm = PermTriple {
            sigma_n: crate::symmetry::Perm::random(n, &mut rng),
            sigma_f: crate::symmetry::Perm::random(f, &mut rng),
            sigma_c: crate::symmetry::Perm::random(c, &mut rng),
        };
        let dev = equivariance_deviation(&model, &graph, &visible, &perm)?;
        let entry = &mut combos[slot];
        entry.trials += 1;
        entry.max_deviation = entry.max_deviation.max(dev);
    }
    let max_deviation = combos.iter().map(|c| c.max_deviation).fold(0.0, f64::max);
    Ok(SymcheckReport {
        trials: trials * archs.len(),
        tol,
        max_deviation,
        passed: max_deviation <= tol,
        combos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckEntry {
    pub aggregator: Aggregator,
    pub pooling: Pooling,
    pub mixers: bool,
    pub parameters: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tol: f64,
    pub passed: bool,
    pub entries: Vec<GradcheckEntry>,
}

/// Finite-difference check of the masked loss of `arch` on a random 8-node
/// graph with `F = 3`, `C = 2`.
pub fn gradcheck_arch(arch: &Arch, tol: f64, seed: u64) -> Result<GradcheckEntry, ModelError> {
    let mut rng = SeedStream::new(seed).rng("gradcheck");
    let model = TsGnnModel::init(arch.clone(), &mut rng)?;
    let graph = random_graph(&mut rng, 8, 3, 2, 0.4);
    let train = graph.splits().train.clone();
    let half = train.len().div_ceil(2).min(train.len() - 1).max(1);
    let (visible, hidden) = train.split_at(half);
    let y = graph.one_hot_visible(visible);
    let targets: Vec<usize> = hidden.iter().map(|&v| graph.labels()[v]).collect();
    let params: Vec<DenseArray> = model.parameters().into_iter().cloned().collect();
    let builder = |tape: &mut Tape, vars: &[crate::ndarr::Var]| {
        let logits = model
            .logits_on_tape(tape, vars, &graph, &y, visible)
            .map_err(|e| match e {
                ModelError::Nd(nd) => nd,
                other => NdError::InvalidArgument(other.to_string()),
            })?;
        tape.cross_entropy_rows(logits, &targets, hidden)
    };
    let report = grad_check(&params, builder, tol)?;
    Ok(GradcheckEntry {
        aggregator: arch.aggregator,
        pooling: arch.pooling,
        mixers: arch.mixers,
        parameters: params.iter().map(DenseArray::len).sum(),
        max_rel_err: report.max_rel_err(),
        passed: report.passed(),
    })
}

pub fn gradcheck(archs: &[Arch], tol: f64, seed: u64) -> Result<GradcheckReport, ModelError> {
    let entries = archs
        .iter()
        .map(|a| gradcheck_arch(a, tol, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GradcheckReport {
        tol,
        passed: entries.iter().all(|e| e.passed),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfPoint {
    pub nodes: usize,
    pub edges: usize,
    /// Fastest of the repeats, in milliseconds.
    pub millis: f64,
    /// `millis` over the previous point's, absent for the first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfscanReport {
    pub feature_dim: usize,
    pub width: usize,
    pub aggregator: Aggregator,
    pub points: Vec<PerfPoint>,
    /// Longest run of consecutive ratios inside `[band_lo, band_hi]`.
    pub longest_run_in_band: usize,
    pub band_lo: f64,
    pub band_hi: f64,
}

pub const PERF_BAND: (f64, f64) = (1.3, 3.0);

/// Length of the longest run of consecutive values inside `[lo, hi]`.
pub fn longest_run_in_band(ratios: &[f64], lo: f64, hi: f64) -> usize {
    let mut best = 0;
    let mut run = 0;
    for &r in ratios {
        run = if (lo..=hi).contains(&r) { run + 1 } else { 0 };
        best = best.max(run);
    }
    best
}

/// Times one `width → width` layer on SBM graphs with 4 classes and mean
/// degree about 8, so `|E|` grows linearly with the node counts in `sizes`.
pub fn perfscan(
    sizes: &[usize],
    feature_dim: usize,
    width: usize,
    aggregator: Aggregator,
    repeats: usize,
    seed: u64,
) -> Result<PerfscanReport, ModelError> {
    const CLASSES: usize = 4;
    let stream = SeedStream::new(seed);
    let mut points: Vec<PerfPoint> = Vec::new();
    for (i, &nodes) in sizes.iter().enumerate() {
        let per_class = (nodes / CLASSES).max(2);
        let total = per_class * CLASSES;
        let graph = gen_sbm(&SbmParams {
            classes: CLASSES,
            nodes_per_class: per_class,
            p_in: (6.0 / per_class as f64).min(1.0),
            p_out: (2.0 / (total - per_class) as f64).min(1.0),
            feature_dim,
            noise: 0.5,
            seed: seed.wrapping_add(i as u64),
        })
        .map_err(|e| ModelError::Shape(e.to_string()))?;
        let mut rng = stream.rng_indexed("perfscan", i as u64);
        let arch = Arch::new(3, width, aggregator, Pooling::Mean);
        let model = TsGnnModel::init(arch, &mut rng)?;
        let layer = &model.layers[1];
        let n = graph.num_nodes();
        let state = NodeState {
            feat: DenseArray::from_fn(&[n, feature_dim, width], |_| StandardNormal.sample(&mut rng)),
            lab: DenseArray::from_fn(&[n, CLASSES, width], |_| StandardNormal.sample(&mut rng)),
        };
        let visible = graph.splits().train.clone();
        let y = graph.one_hot_visible(&visible);
        let mixers = solve_mixers(&graph, graph.features(), &y, &visible, 1e-4)?;
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            let out = tsgnn_layer_forward(&graph, &state, layer, Some(&mixers), aggregator, Pooling::Mean)?;
            best = best.min(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out);
        }
        let ratio = points.last().map(|p| best / p.millis);
        points.push(PerfPoint {
            nodes: n,
            edges: graph.num_edges(),
            millis: best,
            ratio,
        });
    }
    let ratios: Vec<f64> = points.iter().filter_map(|p| p.ratio).collect();
    Ok(PerfscanReport {
        feature_dim,
        width,
        aggregator,
        longest_run_in_band: longest_run_in_band(&ratios, PERF_BAND.0, PERF_BAND.1),
        band_lo: PERF_BAND.0,
        band_hi: PERF_BAND.1,
        points,
    })
}
