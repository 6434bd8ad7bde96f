mod common;

use filterts::data::{split_and_standardize, Dataset, SplitConfig, Splits};
use filterts::train::{adam_step, fit, AdamState, FitLogs, LogRecord, Selection, TrainConfig};
use filterts::{build_filter_bank, Error, FilterTs, ModelConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(variables: usize) -> ModelConfig {
    ModelConfig { variables, lookback: 48, horizon: 24, d_model: 64, num_static_filters: 4, ..ModelConfig::default() }
}

fn setup(ds: &Dataset, cfg: &ModelConfig, seed: u64) -> (Splits, FilterTs<f64>) {
    let splits = split_and_standardize(ds, &SplitConfig::default(), cfg.lookback, cfg.horizon).unwrap();
    let bank = build_filter_bank(&splits.train_series(), cfg.lookback, cfg.d_model, cfg.num_static_filters, cfg.delta_bandwidth).unwrap();
    let model = FilterTs::init(cfg.clone(), bank, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (splits, model)
}

fn run_logged(ds: &Dataset, cfg: &ModelConfig, train: &TrainConfig) -> (filterts::train::EvalReport, Vec<u8>) {
    let (splits, mut model) = setup(ds, cfg, train.seed);
    let mut log = Vec::new();
    let out = fit(&mut model, &splits, train, FitLogs { metrics: Some(&mut log), timing: None }).unwrap();
    (out.report, log)
}

#[test]
fn adam_sign_flip_matches_recurrence() {
    let mut p = Tensor::from_parts(&[1], vec![0.3], vec![-0.2]).unwrap();
    let mut st = AdamState::new(&[&[1]], 0.9, 0.999, 1e-8);
    let grads = [(0.5, -1.0), (-0.5, 2.0)];
    let (mut m, mut v, mut x) = ([0.0f64; 2], [0.0f64; 2], [0.3f64, -0.2]);
    for (t, &(gr, gi)) in grads.iter().enumerate() {
        let g = Tensor::from_parts(&[1], vec![gr], vec![gi]).unwrap();
        adam_step(vec![("p".into(), &mut p)], &[g], &mut st, 0.01).unwrap();
        let t = (t + 1) as i32;
        for (k, gk) in [gr, gi].into_iter().enumerate() {
            m[k] = 0.9 * m[k] + 0.1 * gk;
            v[k] = 0.999 * v[k] + 0.001 * gk * gk;
            x[k] -= 0.01 * (m[k] / (1.0 - 0.9f64.powi(t))) / ((v[k] / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
    }
    assert!((p.re()[0] - x[0]).abs() < 1e-12 && (p.im()[0] - x[1]).abs() < 1e-12);
}

#[test]
fn optimizer_state_round_trip_resumes_identically() {
    let names = vec!["a".to_string(), "b".to_string()];
    let mut a = Tensor::from_parts(&[2], vec![0.1, 0.2], vec![0.3, 0.4]).unwrap();
    let mut b = Tensor::from_real(&[3], vec![1.0, -1.0, 0.5]).unwrap();
    let ga = Tensor::from_parts(&[2], vec![0.7, -0.1], vec![0.05, 0.9]).unwrap();
    let gb = Tensor::from_real(&[3], vec![0.3, 0.2, -0.6]).unwrap();
    let mut st = AdamState::new(&[&[2], &[3]], 0.9, 0.999, 1e-8);
    adam_step(vec![("a".into(), &mut a), ("b".into(), &mut b)], &[ga.clone(), gb.clone()], &mut st, 1e-2).unwrap();
    let text = st.to_json(&names).unwrap();
    let mut resumed = AdamState::<f64>::from_json(&text, &names, &[&[2], &[3]]).unwrap();
    assert_eq!(resumed, st);
    let (mut a2, mut b2) = (a.clone(), b.clone());
    adam_step(vec![("a".into(), &mut a), ("b".into(), &mut b)], &[ga.clone(), gb.clone()], &mut st, 1e-2).unwrap();
    adam_step(vec![("a".into(), &mut a2), ("b".into(), &mut b2)], &[ga, gb], &mut resumed, 1e-2).unwrap();
    assert_eq!((a, b), (a2, b2));
}

#[test]
fn constant_series_is_learned() {
    let rows: Vec<Vec<f64>> = (0..600).map(|_| vec![4.2, -1.0]).collect();
    let ds = Dataset::from_rows("const", vec!["a".into(), "b".into()], &rows).unwrap();
    let train = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let (report, _) = run_logged(&ds, &small_config(2), &train);
    assert!(report.val.mse < 1e-12 && report.test.mse < 1e-12, "{report:?}");
}

#[test]
fn schedule_is_logged_exactly() {
    let ds = common::two_tone_dataset(600);
    let train = TrainConfig { epochs: 4, ..TrainConfig::default() };
    let (report, log) = run_logged(&ds, &small_config(2), &train);
    let records: Vec<LogRecord> = std::str::from_utf8(&log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for k in 0..4 {
        assert_eq!(report.epochs[k].lr, 1e-3 * 0.5f64.powi(k as i32));
        let train_rec = records.iter().find(|r| r.epoch == Some(k) && r.split == "train").unwrap();
        assert_eq!(train_rec.lr, Some(1e-3 * 0.5f64.powi(k as i32)));
    }
    let test = records.last().unwrap();
    assert_eq!(test.split, "test");
    assert_eq!((test.mse, test.mae), (report.test.mse, report.test.mae));
}

#[test]
fn seeded_runs_are_identical() {
    let ds = common::two_tone_dataset(600);
    let train = TrainConfig { epochs: 2, seed: 9, ..TrainConfig::default() };
    let (ra, la) = run_logged(&ds, &small_config(2), &train);
    let (rb, lb) = run_logged(&ds, &small_config(2), &train);
    assert_eq!(la, lb);
    let losses = |r: &filterts::train::EvalReport| r.epochs.iter().flat_map(|e| e.batch_losses.clone()).collect::<Vec<_>>();
    assert_eq!(losses(&ra), losses(&rb));
    let other = TrainConfig { seed: 10, ..train };
    assert_ne!(run_logged(&ds, &small_config(2), &other).1, la);
}

#[test]
fn first_epoch_loss_decreases() {
    let ds = common::two_tone_dataset(1500);
    let train = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let (report, _) = run_logged(&ds, &small_config(2), &train);
    let losses = &report.epochs[0].batch_losses;
    let head: f64 = losses[..3].iter().sum::<f64>() / 3.0;
    let tail: f64 = losses[losses.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(tail < head, "first {head} last {tail}");
}

#[test]
fn best_and_last_selection() {
    let ds = common::two_tone_dataset(600);
    let best = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let (rb, _) = run_logged(&ds, &small_config(2), &best);
    let min = rb.epochs.iter().map(|e| e.val.mse).fold(f64::INFINITY, f64::min);
    assert_eq!(rb.val.mse, min);
    let last = TrainConfig { selection: Selection::Last, ..best };
    let (rl, _) = run_logged(&ds, &small_config(2), &last);
    assert_eq!(rl.selected_epoch, Some(2));
    assert_eq!(rl.val, rl.epochs[2].val);
}

#[test]
fn zero_epochs_evaluates_untrained_model() {
    let ds = common::two_tone_dataset(600);
    let train = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let (report, log) = run_logged(&ds, &small_config(2), &train);
    assert!(report.epochs.is_empty() && report.selected_epoch.is_none());
    assert!(report.test.mse.is_finite() && report.test.mae.is_finite());
    assert_eq!(std::str::from_utf8(&log).unwrap().lines().count(), 2);
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let ds = common::two_tone_dataset(600);
    let cfg = small_config(2);
    let (splits, mut model) = setup(&ds, &cfg, 0);
    model.params.head.q.re_mut()[0] = f64::NAN;
    let err = fit(&mut model, &splits, &TrainConfig::default(), FitLogs::none()).err().unwrap();
    assert!(matches!(err, Error::NonFinite(_)));
    let msg = err.to_string();
    assert!(msg.contains("epoch 0") && msg.contains("batch 0"), "{msg}");
}

#[test]
fn bank_from_other_split_is_rejected() {
    let ds = common::two_tone_dataset(600);
    let cfg = small_config(2);
    let (_, mut model) = setup(&ds, &cfg, 0);
    let other = common::two_tone_dataset(700);
    let splits = split_and_standardize(&other, &SplitConfig::default(), cfg.lookback, cfg.horizon).unwrap();
    assert!(fit(&mut model, &splits, &TrainConfig::default(), FitLogs::none()).is_err());
}

#[test]
fn sinusoid_forecast_converges() {
    let ds = common::two_tone_dataset(5000);
    let cfg = ModelConfig { variables: 2, ..ModelConfig::default() };
    let (splits, mut model) = setup(&ds, &cfg, 0);
    let out = fit(&mut model, &splits, &TrainConfig::default(), FitLogs::none()).unwrap();
    assert!(out.report.test.mse < 0.05, "{:?}", out.report.test);
}
