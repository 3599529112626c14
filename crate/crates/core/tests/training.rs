use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsgnn_core::graphdata::{gen_sbm, Graph, PreprocessConfig, SbmParams};
use tsgnn_core::ndarr::Precision;
use tsgnn_core::trainer::{correct_count, fit, train_on_graphs, zeroshot, TrainConfig, TrainError};
use tsgnn_core::tsgnn::MeanGnn;

fn sbm(classes: usize, per_class: usize, f: usize, seed: u64) -> Graph {
    let g = gen_sbm(&SbmParams {
        classes,
        nodes_per_class: per_class,
        p_in: 0.3,
        p_out: 0.02,
        feature_dim: f,
        noise: 0.4,
        seed,
    })
    .unwrap();
    PreprocessConfig::default().apply(&g).unwrap()
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        hidden_width: 6,
        ..TrainConfig::default()
    }
}

#[test]
fn baseline_trains_through_the_shared_loop() {
    let g = sbm(3, 20, 5, 1);
    let model = MeanGnn::init(5, 3, 2, 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let t = fit(model, std::slice::from_ref(&g), &short(30)).unwrap();
    let first = t.report.epochs[0].loss;
    let last = t.report.summary.final_loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn baseline_rejects_a_different_feature_width() {
    let g = sbm(3, 20, 5, 1);
    let model = MeanGnn::init(4, 3, 2, 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(correct_count(&model, &g, &g.splits().test).is_err());
}

#[test]
fn one_model_runs_on_graphs_of_any_shape() {
    let a = sbm(3, 20, 5, 1);
    let b = sbm(5, 12, 9, 2);
    let t = train_on_graphs(&short(5), &[a.clone(), b.clone()]).unwrap();
    let other = sbm(2, 15, 3, 3);
    let acc = zeroshot(&t.model, &other).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn single_precision_tracks_double() {
    let g = sbm(3, 20, 5, 4);
    let d = train_on_graphs(&short(10), std::slice::from_ref(&g)).unwrap();
    let s = train_on_graphs(
        &TrainConfig {
            precision: Precision::F32,
            ..short(10)
        },
        std::slice::from_ref(&g),
    )
    .unwrap();
    let (ld, ls) = (d.report.summary.final_loss, s.report.summary.final_loss);
    assert!(ls.is_finite());
    assert!((ld - ls).abs() <= 1e-3 * ld.max(1.0), "{ld} vs {ls}");
}

#[test]
fn divergence_reports_the_epoch() {
    let g = sbm(3, 20, 5, 5);
    let cfg = TrainConfig {
        lr: 1e200,
        ..short(20)
    };
    match train_on_graphs(&cfg, std::slice::from_ref(&g)) {
        Err(TrainError::Numerical { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected a numerical failure, got {other:?}"),
    }
}

#[test]
fn best_checkpoint_has_the_best_validation_accuracy() {
    let g = sbm(3, 20, 5, 6);
    let t = train_on_graphs(&short(15), std::slice::from_ref(&g)).unwrap();
    let s = &t.report.summary;
    let max_val = t.report.epochs.iter().map(|e| e.val_acc).fold(0.0, f64::max);
    assert_eq!(s.best_val_acc, max_val);
    assert_eq!(t.report.epochs[s.best_epoch - 1].val_acc, max_val);
    let acc = correct_count(&t.best, &g, &g.splits().val).unwrap() as f64 / g.splits().val.len() as f64;
    assert_eq!(acc, max_val);
}

#[test]
fn report_lines_are_versioned_json() {
    let g = sbm(3, 20, 5, 7);
    let t = train_on_graphs(&short(3), std::slice::from_ref(&g)).unwrap();
    let text = t.report.to_json_lines();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l["version"] == 1));
    assert!(lines.iter().all(|l| l.get("wall_ms").is_none()));
    assert_eq!(lines[3]["epochs"], 3);
}
