//! Command implementations behind the `filterts` binary: config loading and
//! merging, per-run output directories, and the four subcommands.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_csv, slice_time, split_and_standardize, Dataset, SplitConfig, Splits};
use crate::dcfilter::{build_dynamic_filters, quantile};
use crate::embedding::{informative_bins, instance_normalize, t2f_embed};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, FilterTs, ModelConfig};
use crate::sgfilter::{build_filter_bank, FilterBank};
use crate::spectral::fft_real;
use crate::tensor::Tensor;
use crate::train::{evaluate, fit, FitLogs, Metrics, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub name: String,
    pub split: SplitConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: PathBuf::from("data/ETTh1.csv"),
            name: "ETTh1".into(),
            split: SplitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Parent of the per-run directories.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            out: PathBuf::from("runs"),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            Error::Usage(format!("config key {path}: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    /// Reads `path` (defaults when absent), applies `ov`, and validates.
    pub fn resolve(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = ov.seed {
            cfg.train.seed = s;
        }
        if let Some(h) = ov.horizon {
            cfg.model.horizon = h;
        }
        if let Some(o) = &ov.out {
            cfg.out = o.clone();
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// First 12 hex digits of the SHA-256 of the compact effective config.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(text.as_bytes()))[..12].to_string())
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.out.join(format!("{}-s{}", self.hash()?, self.train.seed)))
    }
}

fn prepare_run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir()?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("config.json"), &cfg.to_json()?)?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = load_csv(&cfg.dataset.path, &cfg.dataset.name)?;
    if ds.variables() != cfg.model.variables {
        return Err(Error::Usage(format!(
            "dataset {} has N={} variables but model.variables is N={}",
            cfg.dataset.name,
            ds.variables(),
            cfg.model.variables
        )));
    }
    Ok(ds)
}

fn prepare_splits(cfg: &RunConfig, ds: &Dataset) -> Result<Splits> {
    split_and_standardize(ds, &cfg.dataset.split, cfg.model.lookback, cfg.model.horizon)
}

fn bank_for(cfg: &RunConfig, splits: &Splits) -> Result<FilterBank> {
    let m = &cfg.model;
    build_filter_bank(
        &splits.train_series(),
        m.lookback,
        m.d_model,
        m.num_static_filters,
        m.delta_bandwidth,
    )
}

/// Text printed by `build-bank`: one line per variable.
pub fn describe_bank(bank: &FilterBank, columns: &[String]) -> String {
    let mut out = String::new();
    for (i, (freqs, mags)) in bank.center_freqs.iter().zip(&bank.center_magnitudes).enumerate() {
        let name = columns.get(i).map(String::as_str).unwrap_or("?");
        let mags: Vec<String> = mags.iter().map(|m| format!("{m:.6}")).collect();
        let _ = writeln!(out, "{i} {name}: centers {freqs:?} magnitudes [{}]", mags.join(", "));
    }
    out
}

pub struct BankOutput {
    pub run_dir: PathBuf,
    pub bank_path: PathBuf,
    pub summary: String,
}

pub fn cmd_build_bank(cfg: &RunConfig) -> Result<BankOutput> {
    let ds = load_dataset(cfg)?;
    let splits = prepare_splits(cfg, &ds)?;
    let bank = bank_for(cfg, &splits)?;
    let dir = prepare_run_dir(cfg)?;
    let bank_path = dir.join("bank.json");
    bank.save(&bank_path)?;
    splits.stats.save(&dir.join("standardizer.json"))?;
    Ok(BankOutput {
        run_dir: dir,
        bank_path,
        summary: describe_bank(&bank, &ds.columns),
    })
}

pub struct TrainOutput {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report: crate::train::EvalReport,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let ds = load_dataset(cfg)?;
    let splits = prepare_splits(cfg, &ds)?;
    let dir = prepare_run_dir(cfg)?;
    let bank_path = dir.join("bank.json");
    let bank = match FilterBank::load(&bank_path) {
        Ok(b) if b.built_from == crate::sgfilter::SplitFingerprint::of(&splits.train_series()) => b,
        _ => {
            let b = bank_for(cfg, &splits)?;
            b.save(&bank_path)?;
            b
        }
    };
    splits.stats.save(&dir.join("standardizer.json"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = FilterTs::<f64>::init(cfg.model.clone(), bank, &mut rng)?;
    let metrics_path = dir.join("metrics.jsonl");
    let timing_path = dir.join("timing.jsonl");
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut timing = fs::File::create(&timing_path).map_err(|e| Error::io(&timing_path, e))?;
    let outcome = fit(
        &mut model,
        &splits,
        &cfg.train,
        FitLogs {
            metrics: Some(&mut metrics),
            timing: Some(&mut timing),
        },
    )?;
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let ckpt_path = dir.join("checkpoint.json");
    model.checkpoint("bank.json").save(&ckpt_path)?;
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    write_file(&dir.join("optimizer.json"), &outcome.optimizer.to_json(&names)?)?;
    write_file(&dir.join("report.json"), &serde_json::to_string_pretty(&outcome.report)?)?;
    Ok(TrainOutput {
        run_dir: dir,
        checkpoint: ckpt_path,
        report: outcome.report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub horizon: usize,
    pub test: Metrics,
}

/// Test-split metrics of a saved checkpoint. `horizon`, when given, must
/// equal the checkpoint's.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, horizon: Option<usize>) -> Result<EvalOutput> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if let Some(h) = horizon {
        if h != ckpt.model.horizon {
            return Err(Error::Usage(format!(
                "horizon {h} is not in the checkpoint (trained for F={})",
                ckpt.model.horizon
            )));
        }
    }
    let ds = load_csv(&cfg.dataset.path, &cfg.dataset.name)?;
    if ds.variables() != ckpt.model.variables {
        return Err(Error::dim(format!(
            "checkpoint expects N={} variables but dataset {} has N={}",
            ckpt.model.variables,
            cfg.dataset.name,
            ds.variables()
        )));
    }
    let splits = split_and_standardize(&ds, &cfg.dataset.split, ckpt.model.lookback, ckpt.model.horizon)?;
    let base = checkpoint.parent().unwrap_or(Path::new("."));
    let bank = FilterBank::load(&base.join(&ckpt.bank.file))?;
    let model = FilterTs::<f64>::from_checkpoint(&ckpt, bank)?;
    let test = evaluate(&model, &splits.values, splits.test, cfg.train.batch_size)?;
    let out = EvalOutput {
        horizon: ckpt.model.horizon,
        test,
    };
    write_file(&base.join("eval.json"), &serde_json::to_string_pretty(&out)?)?;
    Ok(out)
}

pub struct InspectOutput {
    pub dir: PathBuf,
    pub tau: f64,
    pub peak_bin: usize,
}

/// Writes `global.csv` (one-sided spectrum of the standardized training
/// series of `variable`) and `window.csv` (the embedded spectrum of one
/// training window over its informative bins, with the dynamic-filter mask).
pub fn cmd_inspect(cfg: &RunConfig, variable: usize, window_start: usize) -> Result<InspectOutput> {
    let ds = load_dataset(cfg)?;
    let splits = prepare_splits(cfg, &ds)?;
    let m = &cfg.model;
    if variable >= ds.variables() {
        return Err(Error::Usage(format!("variable {variable} out of range 0..{}", ds.variables())));
    }
    let train_len = splits.train.len();
    if window_start + m.lookback > train_len {
        return Err(Error::Usage(format!(
            "window start {window_start} out of range: training split has {train_len} steps, window needs {}",
            m.lookback
        )));
    }
    let dir = prepare_run_dir(cfg)?.join("inspect");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let train = splits.train_series();
    let series = &train.re()[variable * train_len..(variable + 1) * train_len];
    let spectrum = fft_real(series)?;
    let mut global = String::from("bin,magnitude\n");
    for (f, z) in spectrum.iter().take(train_len / 2 + 1).enumerate() {
        let _ = writeln!(global, "{f},{:e}", z.norm());
    }
    write_file(&dir.join("global.csv"), &global)?;

    let window = slice_time(&train, window_start, window_start + m.lookback);
    let row = Tensor::from_real(&[1, m.lookback], window.re()[variable * m.lookback..(variable + 1) * m.lookback].to_vec())?;
    let (norm, _) = instance_normalize(&row, m.eps)?;
    let freq = t2f_embed(&norm, m.d_model)?;
    let keep = informative_bins(m.lookback, m.d_model);
    let filters = build_dynamic_filters(&freq.values, keep, m.quantile)?;
    let tau = filters.tau[0];
    let mags: Vec<f64> = (0..keep).map(|f| freq.values.get(f).norm()).collect();
    let mut text = String::from("bin,magnitude,mask\n");
    for (f, mag) in mags.iter().enumerate() {
        let kept = u8::from(filters.h.get(f).norm() > 0.0);
        let _ = writeln!(text, "{f},{mag:e},{kept}");
    }
    write_file(&dir.join("window.csv"), &text)?;
    debug_assert_eq!(quantile(&mags, m.quantile), tau);
    let peak_bin = mags
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (f, &v)| if v > acc.1 { (f, v) } else { acc })
        .0;
    write_file(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "variable": variable,
            "window_start": window_start,
            "tau": tau,
            "quantile": m.quantile,
            "peak_bin": peak_bin,
        }))?,
    )?;
    Ok(InspectOutput { dir, tau, peak_bin })
}
