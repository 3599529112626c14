//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the terminal.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tsgnn_core::cli::checks::{self, all_archs, SymcheckModels, AGGREGATORS};
use tsgnn_core::cli::run_command;
use tsgnn_core::eqlayers::TsLinearParams;
use tsgnn_core::graphdata::{gen_sbm, load_dataset, Graph, PreprocessConfig, SbmParams};
use tsgnn_core::ndarr::DenseArray;
use tsgnn_core::rng::SeedStream;
use tsgnn_core::symmetry::{
    apply_to_graph, dmp, equivariant_basis, in_exclusion_set, numeric_rank, permute_axis, pmp,
    sample_perm_triple, Perm, SymmetryGroup,
};
use tsgnn_core::trainer::{correct_count, fit, train_on_graphs, zeroshot, TrainConfig};
use tsgnn_core::tsgnn::{Arch, MeanGnn, Pooling};

const EQUIVARIANCE_TOL: f64 = 1e-9;
const BASIS_RESIDUAL_TOL: f64 = 1e-9;
const GRADCHECK_TOL: f64 = 1e-5;
const LEARNING_THRESHOLD: f64 = 0.85;
const POLY_TOL: f64 = 1e-12;
const TRANSFER_THRESHOLD: f64 = 0.55;

struct Outcome {
    passed: bool,
    blocking: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome {
        passed,
        blocking: true,
        detail,
    }
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed < Duration::from_secs(secs)
}

fn equivariance() -> Outcome {
    let start = Instant::now();
    let r = checks::symcheck(&SymcheckModels::Random(all_archs(2, 4)), 100, EQUIVARIANCE_TOL, 1).unwrap();
    let t = start.elapsed();
    outcome(
        r.passed && within(t, 120),
        format!("max deviation {:.2e} over {} trials (tol {EQUIVARIANCE_TOL:e}), {:.1}s", r.max_deviation, r.trials, t.as_secs_f64()),
    )
}

fn basis() -> Outcome {
    let start = Instant::now();
    let dim = |g: SymmetryGroup| equivariant_basis(g, 1, 1).unwrap().dimension();
    let dims = [
        dim(SymmetryGroup::Triple { n: 3, f: 3, c: 2 }),
        dim(SymmetryGroup::Dss { n: 3, f: 3 }),
        dim(SymmetryGroup::DeepSets { n: 4 }),
    ];
    let (n, f, c) = (3, 3, 2);
    let b = equivariant_basis(SymmetryGroup::Triple { n, f, c }, 1, 1).unwrap();
    let maps: Vec<Vec<f64>> = (1..=12)
        .map(|i| common::ts_linear_matrix(&TsLinearParams::unit(i, 1, 1, 0, 0), n, f, c))
        .collect();
    let worst = maps.iter().map(|m| b.residual(m)).fold(0.0, f64::max);
    let rank = numeric_rank(&maps);
    let t = start.elapsed();
    outcome(
        dims == [12, 4, 2] && worst <= BASIS_RESIDUAL_TOL && rank == 12 && within(t, 10),
        format!("dims {dims:?} (want [12, 4, 2]), generator residual {worst:.2e}, rank {rank}, {:.1}s", t.as_secs_f64()),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let archs: Vec<Arch> = AGGREGATORS.iter().map(|&a| Arch::new(2, 4, a, Pooling::Mean)).collect();
    let r = checks::gradcheck(&archs, GRADCHECK_TOL, 2).unwrap();
    let t = start.elapsed();
    let parts: Vec<String> = r.entries.iter().map(|e| format!("{:?} {:.1e}", e.aggregator, e.max_rel_err)).collect();
    outcome(
        r.passed && within(t, 60),
        format!("max rel err [{}] (tol {GRADCHECK_TOL:e}), {:.1}s", parts.join(", "), t.as_secs_f64()),
    )
}

/// Source graph, its permuted copy and the trained models shared by the
/// transfer criteria.
struct Transfer {
    source: Graph,
    target: Graph,
    ts: tsgnn_core::trainer::Trained<tsgnn_core::tsgnn::TsGnnModel>,
    baseline: MeanGnn,
    train_time: Duration,
}

fn sbm_source() -> Graph {
    let g = gen_sbm(&SbmParams {
        classes: 4,
        nodes_per_class: 100,
        p_in: 0.1,
        p_out: 0.01,
        feature_dim: 16,
        noise: 0.5,
        seed: 0,
    })
    .unwrap();
    PreprocessConfig::default().apply(&g).unwrap()
}

fn transfer_setup() -> Transfer {
    let source = sbm_source();
    let config = TrainConfig {
        epochs: 300,
        seed: 0,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let ts = train_on_graphs(&config, std::slice::from_ref(&source)).unwrap();
    let train_time = start.elapsed();
    let mut rng = SeedStream::new(config.seed).rng("init");
    let base = MeanGnn::init(16, 4, config.num_layers, config.hidden_width, &mut rng).unwrap();
    let baseline = fit(base, std::slice::from_ref(&source), &config).unwrap().model;
    let p = sample_perm_triple(source.num_nodes(), source.feature_dim(), source.num_classes(), 17);
    let target = apply_to_graph(&p, &source).unwrap();
    Transfer {
        source,
        target,
        ts,
        baseline,
        train_time,
    }
}

fn zero_shot_exactness(t: &Transfer) -> Outcome {
    let src = correct_count(&t.ts.model, &t.source, &t.source.splits().test).unwrap();
    let dst = correct_count(&t.ts.model, &t.target, &t.target.splits().test).unwrap();
    let total = t.source.splits().test.len();
    outcome(src == dst, format!("correct count source {src}/{total}, permuted {dst}/{total}"))
}

fn symmetry_ablation(t: &Transfer) -> Outcome {
    let ts = zeroshot(&t.ts.model, &t.target).unwrap();
    let base_src = zeroshot(&t.baseline, &t.source).unwrap();
    let base_dst = zeroshot(&t.baseline, &t.target).unwrap();
    outcome(
        ts >= base_dst,
        format!(
            "permuted target: TS-Mean {ts:.3}, mean-GNN baseline {base_dst:.3} (source {base_src:.3}, degradation {:.3})",
            base_src - base_dst
        ),
    )
}

/// Multinomial logistic regression on `[X | ÂX]` with full-batch gradient
/// descent: the reference learner for the accuracy threshold.
fn logistic_oracle(g: &Graph) -> f64 {
    let (n, f, c) = (g.num_nodes(), g.feature_dim(), g.num_classes());
    let x = g.features();
    let d = 2 * f + 1;
    let z: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let mut row = x.row(v).to_vec();
            let nb = g.neighbors(v);
            for j in 0..f {
                let m = nb.iter().map(|&u| x.at2(u, j)).sum::<f64>() / nb.len().max(1) as f64;
                row.push(m);
            }
            row.push(1.0);
            row
        })
        .collect();
    let train = &g.splits().train;
    let mut w = vec![vec![0.0; c]; d];
    for _ in 0..500 {
        let mut grad = vec![vec![0.0; c]; d];
        for &v in train {
            let logits: Vec<f64> = (0..c).map(|k| (0..d).map(|j| z[v][j] * w[j][k]).sum()).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for k in 0..c {
                let r = e[k] / s - if g.labels()[v] == k { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[j][k] += r * z[v][j];
                }
            }
        }
        for j in 0..d {
            for k in 0..c {
                w[j][k] -= 1.0 * grad[j][k] / train.len() as f64;
            }
        }
    }
    let test = &g.splits().test;
    let hits = test
        .iter()
        .filter(|&&v| {
            let scores: Vec<f64> = (0..c).map(|k| (0..d).map(|j| z[v][j] * w[j][k]).sum()).collect();
            let best = (0..c).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
            best == g.labels()[v]
        })
        .count();
    hits as f64 / test.len() as f64
}

fn desk_learning(t: &Transfer) -> Outcome {
    let acc = t.ts.report.summary.final_test_acc;
    let oracle = logistic_oracle(&t.source);
    outcome(
        acc >= LEARNING_THRESHOLD && within(t.train_time, 60),
        format!(
            "test accuracy {acc:.3} (threshold {LEARNING_THRESHOLD}, reference learner {oracle:.3}), 300 epochs in {:.1}s",
            t.train_time.as_secs_f64()
        ),
    )
}

fn polynomials() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gauss = |rng: &mut ChaCha8Rng, n: usize, m: usize| {
        DenseArray::from_fn(&[n, m], |_| StandardNormal.sample(rng))
    };
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, f, c) = (rng.random_range(2..6), rng.random_range(1..4), rng.random_range(1..4));
        let x = gauss(&mut rng, n, 2);
        let p = Perm::random(n, &mut rng);
        let a = pmp(&x, 3).unwrap();
        let b = pmp(&permute_axis(&x, 0, &p).unwrap(), 3).unwrap();
        worst = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(worst, f64::max);

        let xy = gauss(&mut rng, n, f + c);
        let (pf, pc) = (Perm::random(f, &mut rng), Perm::random(c, &mut rng));
        let mut cols: Vec<usize> = pf.map().to_vec();
        cols.extend(pc.map().iter().map(|&j| j + f));
        let moved = permute_axis(&xy, 1, &Perm::new(cols).unwrap()).unwrap();
        let a = dmp(&xy, f, c, 2).unwrap();
        let b = dmp(&moved, f, c, 2).unwrap();
        worst = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(worst, f64::max);
    }
    let hand = pmp(&DenseArray::from_rows(&[[1.0], [2.0]]).unwrap(), 2).unwrap();
    let ones_excluded = in_exclusion_set(&DenseArray::filled(&[4, 5], 1.0), 3, POLY_TOL).unwrap();
    let generic = (0..1000)
        .filter(|_| !in_exclusion_set(&gauss(&mut rng, 5, 5), 3, POLY_TOL).unwrap())
        .count();
    outcome(
        worst <= POLY_TOL && hand == [2.0, 3.0, 5.0] && ones_excluded && generic == 1000,
        format!(
            "invariance deviation {worst:.1e} (tol {POLY_TOL:e}), pmp([[1],[2]], 2) = {hand:?}, all-ones in set: {ones_excluded}, generic samples outside: {generic}/1000"
        ),
    )
}

fn complexity() -> Outcome {
    let r = checks::perfscan(&[1000, 2000, 4000, 8000, 16000], 32, 16, tsgnn_core::tsgnn::Aggregator::Mean, 3, 0).unwrap();
    let ratios: Vec<String> = r.points.iter().filter_map(|p| p.ratio).map(|x| format!("{x:.2}")).collect();
    outcome(
        r.longest_run_in_band >= 3,
        format!(
            "time ratios per doubling of |E| [{}], {} consecutive in [{}, {}]",
            ratios.join(", "),
            r.longest_run_in_band,
            r.band_lo,
            r.band_hi
        ),
    )
}

fn real_transfer() -> Outcome {
    let Some(root) = std::env::var_os("TSGNN_DATA_DIR").map(PathBuf::from) else {
        return Outcome {
            passed: true,
            blocking: false,
            detail: "skipped: TSGNN_DATA_DIR is not set (expects cora/ and citeseer/ dataset directories)".into(),
        };
    };
    let pre = PreprocessConfig {
        l2_normalize: true,
        pca_dim: Some(64),
    };
    let load = |name: &str| load_dataset(root.join(name)).and_then(|g| pre.apply(&g));
    let (cora, citeseer) = match (load("cora"), load("citeseer")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            return Outcome {
                passed: false,
                blocking: false,
                detail: format!("could not load datasets: {e}"),
            }
        }
    };
    let config = TrainConfig {
        epochs: 500,
        preprocess: pre,
        ..TrainConfig::default()
    };
    let trained = train_on_graphs(&config, std::slice::from_ref(&cora)).unwrap();
    let acc = zeroshot(&trained.model, &citeseer).unwrap();
    Outcome {
        passed: acc >= TRANSFER_THRESHOLD,
        blocking: false,
        detail: format!("cora -> citeseer accuracy {acc:.3} (threshold {TRANSFER_THRESHOLD}, reference 0.6866)"),
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("g");
    let d = data.to_str().unwrap();
    let gen = ["tsgnn", "gen", "--classes", "3", "--nodes-per-class", "20", "--p-in", "0.2", "--p-out", "0.02", "--feat-dim", "6", "--out", d];
    assert_eq!(run_command(gen), 0);
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, r#"{"graphs": ["g"], "epochs": 25, "seed": 3}"#).unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let code = run_command(["tsgnn", "train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        let files: Vec<Vec<u8>> = ["model.json", "model_best.json", "report.jsonl"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        runs.push(files);
    }
    let same = runs[0] == runs[1];
    outcome(same, format!("checkpoints and report byte-identical across two runs: {same}"))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, o: Outcome| {
        let tag = match (o.passed, o.blocking) {
            (true, _) if o.detail.starts_with("skipped") => "SKIP",
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        println!("[{tag}] {name}: {}", o.detail);
        results.push((name, o));
    };
    record("1 equivariance", equivariance());
    record("2 equivariant basis", basis());
    record("3 gradient check", gradients());
    let t = transfer_setup();
    record("4 zero-shot permutation exactness", zero_shot_exactness(&t));
    record("5 symmetry ablation", symmetry_ablation(&t));
    record("6 desk-scale learning", desk_learning(&t));
    record("7 invariant polynomials and exclusion set", polynomials());
    record("8 linear scaling in edges", complexity());
    record("9 cora to citeseer transfer", real_transfer());
    record("10 determinism", determinism());

    let failed: Vec<&str> = results.iter().filter(|(_, o)| o.blocking && !o.passed).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all blocking criteria passed");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
