//! Adam, MSE objective, per-epoch learning-rate decay, model selection and
//! MSE/MAE evaluation.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::TensorContainer;
use crate::data::{window_iter, Splits, SplitView};
use crate::error::{Error, Result};
use crate::model::{FilterTs, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Parameters from the epoch with the lowest validation MSE.
    Best,
    /// Parameters after the final epoch.
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; off when absent.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-3,
            epochs: 10,
            batch_size: 32,
            lr_decay: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: None,
            seed: 2024,
            selection: Selection::Best,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Usage(format!("train.initial_lr must be positive, got {}", self.initial_lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("train.batch_size must be ≥ 1".into()));
        }
        if self.lr_decay.is_nan() || self.lr_decay <= 0.0 {
            return Err(Error::Usage(format!("train.lr_decay must be positive, got {}", self.lr_decay)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Usage("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Usage(format!("train.clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `k` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial_lr * self.lr_decay.powi(epoch as i32)
    }
}

/// First and second moments per parameter tensor; complex entries are two
/// independent real coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[&[usize]], beta1: T, beta2: T, eps: T) -> Self {
        AdamState {
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_params(params: &ModelParams<T>, cfg: &TrainConfig) -> Self {
        let named = params.named();
        let shapes: Vec<&[usize]> = named.iter().map(|(_, t)| t.shape()).collect();
        Self::new(&shapes, T::of(cfg.beta1), T::of(cfg.beta2), T::of(cfg.adam_eps))
    }

    pub fn to_json(&self, names: &[String]) -> Result<String> {
        let m = TensorContainer::from_named(names.iter().cloned().zip(self.m.iter()));
        let v = TensorContainer::from_named(names.iter().cloned().zip(self.v.iter()));
        let file = OptimizerFile {
            step: self.step,
            beta1: self.beta1.as_f64(),
            beta2: self.beta2.as_f64(),
            eps: self.eps.as_f64(),
            m,
            v,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str, names: &[String], shapes: &[&[usize]]) -> Result<Self> {
        let file: OptimizerFile = serde_json::from_str(text)?;
        let mut state = Self::new(shapes, T::of(file.beta1), T::of(file.beta2), T::of(file.eps));
        state.step = file.step;
        file.m.restore_into(names.iter().cloned().zip(state.m.iter_mut()).collect())?;
        file.v.restore_into(names.iter().cloned().zip(state.v.iter_mut()).collect())?;
        Ok(state)
    }
}

#[derive(Serialize, Deserialize)]
struct OptimizerFile {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: TensorContainer,
    v: TensorContainer,
}

/// One bias-corrected Adam update of every parameter. Gradients are checked
/// for finiteness before anything is modified.
pub fn adam_step<T: Scalar>(
    params: Vec<(String, &mut Tensor<T>)>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim(format!("gradient of {name} has shape {:?}, parameter {:?}", g.shape(), p.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {name} is not finite")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (k, ((_, p), g)) in params.into_iter().zip(grads).enumerate() {
        let (pr, pi) = p.parts_mut();
        let (mr, mi) = state.m[k].parts_mut();
        let (vr, vi) = state.v[k].parts_mut();
        for (p, g, m, v) in [(pr, g.re(), mr, vr), (pi, g.im(), mi, vi)] {
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

/// Mean squared error as a graph node; both inputs must be real and share a
/// shape.
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::dim(format!(
            "prediction {:?} and target {:?} differ",
            g.shape(pred),
            g.shape(target)
        )));
    }
    let diff = g.sub(pred, target)?;
    let sq = g.abs_sq(diff);
    Ok(g.mean_all(sq))
}

/// Running sums of squared and absolute error, in a fixed order.
#[derive(Clone, Copy, Debug, Default)]
pub struct ErrorSums {
    pub sq: f64,
    pub abs: f64,
    pub count: usize,
}

impl ErrorSums {
    pub fn add<T: Scalar>(&mut self, pred: &Tensor<T>, target: &Tensor<f64>) {
        for (p, y) in pred.re().iter().zip(target.re()) {
            let d = p.as_f64() - y;
            self.sq += d * d;
            self.abs += d.abs();
        }
        self.count += target.len();
    }

    pub fn mse(&self) -> f64 {
        self.sq / self.count.max(1) as f64
    }

    pub fn mae(&self) -> f64 {
        self.abs / self.count.max(1) as f64
    }
}

pub fn mse(pred: &Tensor<f64>, target: &Tensor<f64>) -> f64 {
    let mut s = ErrorSums::default();
    s.add(pred, target);
    s.mse()
}

pub fn mae(pred: &Tensor<f64>, target: &Tensor<f64>) -> f64 {
    let mut s = ErrorSums::default();
    s.add(pred, target);
    s.mae()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Ordered pass over every window of `view`.
pub fn evaluate<T: Scalar>(model: &FilterTs<T>, values: &Tensor<f64>, view: SplitView, batch: usize) -> Result<Metrics> {
    let c = model.config();
    let mut sums = ErrorSums::default();
    for b in window_iter::<ChaCha8Rng>(values, view, c.lookback, c.horizon, batch, None) {
        let pred = model.predict(&b.inputs.cast())?;
        sums.add(&pred, &b.targets);
    }
    Ok(Metrics {
        mse: sums.mse(),
        mae: sums.mae(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: Metrics,
    pub val: Metrics,
    /// Loss of every batch in visiting order.
    pub batch_losses: Vec<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizon: usize,
    pub test: Metrics,
    pub val: Metrics,
    /// Epoch whose parameters were kept; `None` when no training happened.
    pub selected_epoch: Option<usize>,
    pub epochs: Vec<EpochRecord>,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: Option<usize>,
    pub split: String,
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    pub lr: Option<f64>,
}

/// Destinations for the line-delimited logs. Wall-clock times go to their own
/// stream so the metrics stream is reproducible byte for byte.
pub struct FitLogs<'a> {
    pub metrics: Option<&'a mut dyn Write>,
    pub timing: Option<&'a mut dyn Write>,
}

impl FitLogs<'_> {
    pub fn none() -> Self {
        FitLogs {
            metrics: None,
            timing: None,
        }
    }
}

fn write_line(out: &mut Option<&mut dyn Write>, value: &impl Serialize) -> Result<()> {
    if let Some(w) = out {
        let line = serde_json::to_string(value)?;
        writeln!(w, "{line}").map_err(|e| Error::io("<log>", e))?;
    }
    Ok(())
}

pub struct FitOutcome<T> {
    pub report: EvalReport,
    pub optimizer: AdamState<T>,
}

/// Trains `model` in place on the train view, selects parameters per
/// `cfg.selection`, and evaluates them on the test view.
pub fn fit<T: Scalar>(model: &mut FilterTs<T>, splits: &Splits, cfg: &TrainConfig, mut logs: FitLogs<'_>) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    let train_series = splits.train_series();
    let fingerprint = crate::sgfilter::SplitFingerprint::of(&train_series);
    if model.bank().built_from != fingerprint {
        return Err(Error::contract("filter bank was not built from this training split"));
    }
    let (l, f) = (model.config().lookback, model.config().horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = AdamState::for_params(&model.params, cfg);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams<T>, Metrics)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(epoch);
        let mut sums = crate::train::ErrorSums::default();
        let mut batch_losses = Vec::new();
        let batches = window_iter(&splits.values, splits.train, l, f, cfg.batch_size, Some(&mut rng));
        for (bi, batch) in batches.enumerate() {
            let mut g = Graph::new();
            let fwd = model.forward(&mut g, &batch.inputs.cast())?;
            let target = g.constant(batch.targets.cast());
            let loss = mse_loss(&mut g, fwd.prediction, target)?;
            let loss_value = g.value(loss).re()[0].as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss_value} at epoch {epoch}, batch {bi}")));
            }
            sums.add(g.value(fwd.prediction), &batch.targets);
            batch_losses.push(loss_value);
            g.backward(loss)?;
            let mut grads: Vec<Tensor<T>> = fwd
                .bound
                .vars()
                .into_iter()
                .map(|v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
                .collect();
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, T::of(c));
            }
            adam_step(model.params.named_mut(), &grads, &mut opt, T::of(lr))?;
        }
        let train = Metrics {
            mse: sums.mse(),
            mae: sums.mae(),
        };
        let val = evaluate(model, &splits.values, splits.val, cfg.batch_size)?;
        let seconds = started.elapsed().as_secs_f64();
        for (split, m) in [("train", train), ("val", val)] {
            write_line(
                &mut logs.metrics,
                &LogRecord {
                    epoch: Some(epoch),
                    split: split.into(),
                    horizon: f,
                    mse: m.mse,
                    mae: m.mae,
                    lr: Some(lr),
                },
            )?;
        }
        write_line(&mut logs.timing, &serde_json::json!({ "epoch": epoch, "seconds": seconds }))?;
        let improved = best.as_ref().is_none_or(|b| val.mse < b.0);
        if cfg.selection == Selection::Last || improved {
            best = Some((val.mse, epoch, model.params.clone(), val));
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            train,
            val,
            batch_losses,
            seconds,
        });
    }

    let (selected_epoch, val) = match best {
        Some((_, e, params, val)) => {
            model.params = params;
            (Some(e), val)
        }
        None => {
            let val = evaluate(model, &splits.values, splits.val, cfg.batch_size)?;
            write_line(
                &mut logs.metrics,
                &LogRecord {
                    epoch: None,
                    split: "val".into(),
                    horizon: f,
                    mse: val.mse,
                    mae: val.mae,
                    lr: None,
                },
            )?;
            (None, val)
        }
    };
    let test = evaluate(model, &splits.values, splits.test, cfg.batch_size)?;
    write_line(
        &mut logs.metrics,
        &LogRecord {
            epoch: selected_epoch,
            split: "test".into(),
            horizon: f,
            mse: test.mse,
            mae: test.mae,
            lr: None,
        },
    )?;
    Ok(FitOutcome {
        report: EvalReport {
            horizon: f,
            test,
            val,
            selected_epoch,
            epochs,
        },
        optimizer: opt,
    })
}

fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) {
    let total: T = grads
        .iter()
        .flat_map(|g| g.re().iter().chain(g.im()))
        .map(|&v| v * v)
        .sum::<T>()
        .sqrt();
    if total > max_norm {
        let s = max_norm / total;
        for g in grads {
            let (re, im) = g.parts_mut();
            re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::from_real(&[2, 2], vec![1., 2., 3., 4.]).unwrap());
        let y = g.constant(Tensor::from_real(&[2, 2], vec![1.; 4]).unwrap());
        let l = mse_loss(&mut g, p, y).unwrap();
        assert_eq!(g.value(l).re()[0], 3.5);
        let same = mse_loss(&mut g, p, p).unwrap();
        assert_eq!(g.value(same).re()[0], 0.0);
        let z = g.constant(Tensor::zeros(&[4]));
        assert!(mse_loss(&mut g, p, z).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.0_f64);
        let mut st = AdamState::new(&[&[]], 0.9, 0.999, 1e-8);
        adam_step(vec![("p".into(), &mut p)], &[Tensor::scalar(1.0)], &mut st, 0.1).unwrap();
        assert!((p.re()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = Tensor::from_parts(&[2], vec![1.0, -2.0], vec![0.5, 0.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[&[2]], 0.9, 0.999, 1e-8);
        adam_step(vec![("p".into(), &mut p)], &[Tensor::zeros(&[2])], &mut st, 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_rejects_nan_by_name() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new(&[&[]], 0.9, 0.999, 1e-8);
        let err = adam_step(vec![("head.q".into(), &mut p)], &[Tensor::scalar(f64::NAN)], &mut st, 0.1).unwrap_err();
        assert!(err.to_string().contains("head.q"));
        assert_eq!(p.re()[0], 0.0);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn lr_schedule_halves() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(3), 1e-3 / 8.0);
    }
}
