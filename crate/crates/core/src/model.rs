//! Full forecaster: embedding, `e` stacked filter layers with weighted
//! residual mixing and complex LayerNorm, and the frequency-to-time head.

use std::path::Path;

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::TensorContainer;
use crate::complex_nn::{clayernorm, clinear_apply, uniform_fan_in, BoundLayerNorm, ComplexLayerNorm, ComplexLinearLayer, BoundComplexLinear};
use crate::dcfilter::{build_dynamic_filters, dc_filter_forward, BoundDcFilter, DcFilterParams};
use crate::embedding::{informative_bins, instance_normalize, InstanceStats, T2FEmbed};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sgfilter::{sg_filter_forward, BoundSgFilter, FilterBank, SgFilterParams, SplitFingerprint};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Lookback window L.
    pub lookback: usize,
    /// Forecast horizon F.
    pub horizon: usize,
    /// Number of variables N.
    pub variables: usize,
    /// Hidden width D.
    pub d_model: usize,
    /// Stacked filter layers e.
    pub layers: usize,
    /// Amplitude quantile for the dynamic filters.
    pub quantile: f64,
    /// Static band-pass filters per variable (K).
    pub num_static_filters: usize,
    /// Half bandwidth of each static filter (Δf).
    pub delta_bandwidth: usize,
    /// Instance-normalization stability constant.
    pub eps: f64,
    /// LayerNorm variance floor.
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 96,
            horizon: 96,
            variables: 7,
            d_model: 128,
            layers: 1,
            quantile: 0.9,
            num_static_filters: 10,
            delta_bandwidth: 1,
            eps: 1e-5,
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Usage(m));
        if self.lookback < 2 {
            return fail(format!("model.lookback must be ≥ 2, got {}", self.lookback));
        }
        if self.horizon == 0 {
            return fail("model.horizon must be ≥ 1".into());
        }
        if self.variables == 0 {
            return fail("model.variables must be ≥ 1".into());
        }
        if self.d_model < 2 {
            return fail(format!("model.d_model must be ≥ 2, got {}", self.d_model));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return fail(format!("model.quantile must lie in (0, 1), got {}", self.quantile));
        }
        if self.num_static_filters == 0 || self.num_static_filters > self.lookback {
            return fail(format!(
                "model.num_static_filters must lie in 1..={}, got {}",
                self.lookback, self.num_static_filters
            ));
        }
        if !(self.eps > 0.0 && self.norm_eps > 0.0) {
            return fail("model.eps and model.norm_eps must be positive".into());
        }
        Ok(())
    }
}

/// Exact trainable-scalar count for `config`; complex entries count twice.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let (n, d, k, f) = (
        config.variables,
        config.d_model,
        config.num_static_filters,
        config.horizon,
    );
    let per_layer = 3            // alpha, beta, gamma
        + 2 * n * d              // A_o
        + 2 * n * n              // W
        + 2 * n * d              // A_p
        + 2 * n * k              // V
        + 4 * d; //                 LayerNorm gain and bias, per part
    let head = 2 * d * d + 2 * d * f;
    config.layers * per_layer + head
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    /// Real scalars, shape `[]`.
    pub alpha: Tensor<T>,
    pub beta: Tensor<T>,
    pub gamma: Tensor<T>,
    pub dc: DcFilterParams<T>,
    pub sg: SgFilterParams<T>,
    pub norm: ComplexLayerNorm<T>,
}

/// Frequency-to-time projection: `U = U_re + i·U_im` (D×D) then `Q` (2D×F).
#[derive(Clone, Debug, PartialEq)]
pub struct OutputHead<T> {
    pub u: ComplexLinearLayer<T>,
    pub q: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub layers: Vec<LayerParams<T>>,
    pub head: OutputHead<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub alpha: Var,
    pub beta: Var,
    pub gamma: Var,
    pub dc: BoundDcFilter,
    pub sg: BoundSgFilter,
    pub norm: BoundLayerNorm,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundHead {
    pub u: BoundComplexLinear,
    pub q: Var,
}

#[derive(Clone, Debug)]
pub struct BoundModel {
    pub layers: Vec<BoundLayer>,
    pub head: BoundHead,
}

impl BoundModel {
    /// Inverse of [`vars`](Self::vars).
    pub fn from_vars(vars: &[Var]) -> Result<Self> {
        if vars.len() < 3 || !(vars.len() - 3).is_multiple_of(9) {
            return Err(Error::dim(format!("{} variables do not form a model", vars.len())));
        }
        let layers = vars[..vars.len() - 3]
            .chunks(9)
            .map(|c| BoundLayer {
                alpha: c[0],
                beta: c[1],
                gamma: c[2],
                dc: BoundDcFilter { a_o: c[3], w: c[4] },
                sg: BoundSgFilter { a_p: c[5], v: c[6] },
                norm: BoundLayerNorm { gain: c[7], bias: c[8] },
            })
            .collect();
        let h = &vars[vars.len() - 3..];
        Ok(BoundModel {
            layers,
            head: BoundHead {
                u: BoundComplexLinear {
                    w_real: h[0],
                    w_imag: h[1],
                    bias: None,
                },
                q: h[2],
            },
        })
    }

    /// Graph leaves in [`ModelParams::named`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([l.alpha, l.beta, l.gamma, l.dc.a_o, l.dc.w, l.sg.a_p, l.sg.v, l.norm.gain, l.norm.bias]);
        }
        out.extend([self.head.u.w_real, self.head.u.w_imag, self.head.q]);
        out
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let (n, d, k, f) = (
            config.variables,
            config.d_model,
            config.num_static_filters,
            config.horizon,
        );
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                alpha: Tensor::scalar(T::one()),
                beta: Tensor::scalar(T::of(0.5)),
                gamma: Tensor::scalar(T::of(0.5)),
                dc: DcFilterParams::new(n, d),
                sg: SgFilterParams::new(n, d, k),
                norm: ComplexLayerNorm::new(d),
            })
            .collect();
        let u = ComplexLinearLayer::random(rng, d, d, false);
        let q = uniform_fan_in(rng, &[2 * d, f], 2 * d);
        ModelParams {
            layers,
            head: OutputHead { u, q },
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.push((p("alpha"), &l.alpha));
            out.push((p("beta"), &l.beta));
            out.push((p("gamma"), &l.gamma));
            out.push((p("dc.a_o"), &l.dc.a_o));
            out.push((p("dc.w"), &l.dc.w));
            out.push((p("sg.a_p"), &l.sg.a_p));
            out.push((p("sg.v"), &l.sg.v));
            out.push((p("norm.gain"), &l.norm.gain));
            out.push((p("norm.bias"), &l.norm.bias));
        }
        out.push(("head.u_re".into(), &self.head.u.w_real));
        out.push(("head.u_im".into(), &self.head.u.w_imag));
        out.push(("head.q".into(), &self.head.q));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.push((p("alpha"), &mut l.alpha));
            out.push((p("beta"), &mut l.beta));
            out.push((p("gamma"), &mut l.gamma));
            out.push((p("dc.a_o"), &mut l.dc.a_o));
            out.push((p("dc.w"), &mut l.dc.w));
            out.push((p("sg.a_p"), &mut l.sg.a_p));
            out.push((p("sg.v"), &mut l.sg.v));
            out.push((p("norm.gain"), &mut l.norm.gain));
            out.push((p("norm.bias"), &mut l.norm.bias));
        }
        out.push(("head.u_re".into(), &mut self.head.u.w_real));
        out.push(("head.u_im".into(), &mut self.head.u.w_imag));
        out.push(("head.q".into(), &mut self.head.q));
        out
    }

    /// Trainable scalars actually held: real-typed tensors count once per
    /// entry, complex ones twice.
    pub fn param_count(&self) -> usize {
        let complex_names = ["dc.a_o", "dc.w", "sg.a_p", "sg.v", "norm.gain", "norm.bias"];
        self.named()
            .into_iter()
            .map(|(name, t)| {
                if complex_names.iter().any(|c| name.ends_with(c)) {
                    2 * t.len()
                } else {
                    t.len()
                }
            })
            .sum()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundModel {
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                alpha: g.param(l.alpha.clone()),
                beta: g.param(l.beta.clone()),
                gamma: g.param(l.gamma.clone()),
                dc: l.dc.bind(g),
                sg: l.sg.bind(g),
                norm: l.norm.bind(g),
            })
            .collect();
        let head = BoundHead {
            u: self.head.u.bind(g),
            q: g.param(self.head.q.clone()),
        };
        BoundModel { layers, head }
    }

    pub fn to_container(&self) -> TensorContainer {
        TensorContainer::from_named(self.named())
    }
}

/// Result of building the forward graph for one batch.
pub struct Forward {
    pub prediction: Var,
    pub bound: BoundModel,
    pub stats: InstanceStats<f64>,
}

/// Forecaster with its parameters and static filter bank.
#[derive(Clone, Debug)]
pub struct FilterTs<T> {
    config: ModelConfig,
    pub params: ModelParams<T>,
    bank: FilterBank,
    embed: T2FEmbed<T>,
}

impl<T: Scalar> FilterTs<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>, bank: FilterBank) -> Result<Self> {
        config.validate()?;
        check_bank(&config, &bank)?;
        if params.layers.len() != config.layers {
            return Err(Error::dim(format!(
                "parameters hold {} layers, config expects {}",
                params.layers.len(),
                config.layers
            )));
        }
        let embed = T2FEmbed::new(config.lookback, config.d_model)?;
        Ok(FilterTs {
            config,
            params,
            bank,
            embed,
        })
    }

    pub fn init<R: Rng>(config: ModelConfig, bank: FilterBank, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, rng);
        Self::new(config, params, bank)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    /// Builds the forward graph for `x` (`[B, N, L]`); the prediction node
    /// has shape `[B, N, F]`.
    pub fn forward(&self, g: &mut Graph<T>, x: &Tensor<T>) -> Result<Forward> {
        let bound = self.params.bind(g);
        self.forward_bound(g, x, bound)
    }

    /// [`forward`](Self::forward) with parameters already in the graph, for
    /// callers that bind them themselves.
    pub fn forward_bound(&self, g: &mut Graph<T>, x: &Tensor<T>, bound: BoundModel) -> Result<Forward> {
        let c = &self.config;
        let (n, l) = (c.variables, c.lookback);
        let s = x.shape();
        if s.len() != 3 || s[1] != n || s[2] != l {
            return Err(Error::dim(format!("input must be [B, {n}, {l}], got {s:?}")));
        }
        let b = s[0];
        let (xn, stats) = instance_normalize(x, T::of(c.eps))?;
        let freq = self.embed.embed(&xn)?;
        let mut xv = g.constant(freq.values);
        let masks = g.constant(self.bank.masks());
        let keep = informative_bins(l, c.d_model);
        let quantile = T::of(c.quantile);
        let norm_eps = T::of(c.norm_eps);

        for layer in &bound.layers {
            let filters = build_dynamic_filters(g.value(xv), keep, quantile)?;
            let o = dc_filter_forward(g, xv, &layer.dc, &filters)?;
            let p = sg_filter_forward(g, xv, &layer.sg, masks)?;
            let alpha = g.real_part(layer.alpha);
            let beta = g.real_part(layer.beta);
            let gamma = g.real_part(layer.gamma);
            let ax = g.mul(alpha, xv)?;
            let bo = g.mul(beta, o)?;
            let gp = g.mul(gamma, p)?;
            let mix = g.add(ax, bo)?;
            let mix = g.add(mix, gp)?;
            let axis = g.shape(mix).len() - 1;
            xv = clayernorm(g, mix, axis, norm_eps, Some(&layer.norm))?;
        }

        let normalized = f2t_project(g, xv, &bound.head)?;
        let scale = Tensor::from_real(&[b, n, 1], stats.scale().collect())?;
        let shift = Tensor::from_real(&[b, n, 1], stats.mu.clone())?;
        let scale = g.constant(scale);
        let shift = g.constant(shift);
        let scaled = g.mul(normalized, scale)?;
        let prediction = g.add(scaled, shift)?;
        Ok(Forward {
            prediction,
            bound,
            stats: InstanceStats {
                shape: stats.shape,
                mu: stats.mu.iter().map(|v| v.as_f64()).collect(),
                sigma: stats.sigma.iter().map(|v| v.as_f64()).collect(),
                eps: stats.eps.as_f64(),
            },
        })
    }

    /// Forecast `[B, N, F]` for `x` without retaining the graph.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, x)?;
        Ok(g.value(fwd.prediction).clone())
    }

    pub fn checkpoint(&self, bank_file: &str) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: self.config.clone(),
            eps: self.config.eps,
            bank: BankRef {
                file: bank_file.to_string(),
                built_from: self.bank.built_from.clone(),
            },
            params: self.params.to_container(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, bank: FilterBank) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "checkpoint",
                found: ckpt.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        if bank.built_from != ckpt.bank.built_from {
            return Err(Error::contract(format!(
                "filter bank was built from {:?}, checkpoint expects {:?}",
                bank.built_from, ckpt.bank.built_from
            )));
        }
        let mut config = ckpt.model.clone();
        config.eps = ckpt.eps;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut params = ModelParams::init(&config, &mut rng);
        ckpt.params.restore_into(params.named_mut())?;
        Self::new(config, params, bank)
    }
}

/// Frequency-to-time head: `X·U`, concatenate `Re ∥ Im`, multiply by `Q`.
pub fn f2t_project<T: Scalar>(g: &mut Graph<T>, x: Var, head: &BoundHead) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let d = *shape.last().ok_or_else(|| Error::dim("head input of rank 0"))?;
    let f = g.shape(head.q)[1];
    let mixed = clinear_apply(g, &head.u, x)?;
    let re = g.real_part(mixed);
    let im = g.imag_part(mixed);
    let axis = shape.len() - 1;
    let cat = g.concat(&[re, im], axis)?;
    let rows: usize = shape[..axis].iter().product();
    let flat = g.reshape(cat, &[rows, 2 * d])?;
    let out = g.matmul(flat, head.q)?;
    let mut out_shape = shape;
    out_shape[axis] = f;
    g.reshape(out, &out_shape)
}

fn check_bank(config: &ModelConfig, bank: &FilterBank) -> Result<()> {
    let pairs = [
        ("N", config.variables, bank.n),
        ("D", config.d_model, bank.d),
        ("K", config.num_static_filters, bank.k),
        ("delta_f", config.delta_bandwidth, bank.delta_f),
        ("L", config.lookback, bank.window_len),
    ];
    for (what, want, got) in pairs {
        if want != got {
            return Err(Error::contract(format!(
                "filter bank {what}={got} does not match model {what}={want}"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankRef {
    /// Path of the bank file, relative to the checkpoint's directory.
    pub file: String,
    pub built_from: SplitFingerprint,
}

/// Versioned model checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub eps: f64,
    pub bank: BankRef,
    pub params: TensorContainer,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Unit complex helper for tests and callers building parameters by hand.
pub fn one<T: Scalar>() -> Complex<T> {
    Complex::new(T::one(), T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgfilter::build_filter_bank;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            lookback: 12,
            horizon: 5,
            variables: 2,
            d_model: 16,
            layers: 1,
            num_static_filters: 3,
            ..ModelConfig::default()
        }
    }

    fn series(n: usize, t: usize) -> Tensor<f64> {
        let re = (0..n * t)
            .map(|k| {
                let (i, j) = (k / t, k % t);
                (j as f64 * 0.37 * (i + 1) as f64).sin() + 0.1 * (j as f64 * 1.3).cos()
            })
            .collect();
        Tensor::from_real(&[n, t], re).unwrap()
    }

    fn model(config: &ModelConfig) -> FilterTs<f64> {
        let train = series(config.variables, 200);
        let bank = build_filter_bank(&train, config.lookback, config.d_model, config.num_static_filters, config.delta_bandwidth).unwrap();
        FilterTs::init(config.clone(), bank, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn parameter_count_matches_held_scalars() {
        for layers in 0..3 {
            let config = ModelConfig { layers, ..small_config() };
            let m = model(&config);
            assert_eq!(m.params.param_count(), count_parameters(&config));
        }
    }

    #[test]
    fn head_only_count() {
        let config = ModelConfig {
            layers: 0,
            d_model: 128,
            horizon: 96,
            ..ModelConfig::default()
        };
        assert_eq!(count_parameters(&config), 2 * 128 * 128 + 256 * 96);
        let full = ModelConfig { layers: 1, ..config.clone() };
        assert!(count_parameters(&config) < count_parameters(&full));
    }

    #[test]
    fn constant_input_predicts_its_level() {
        let config = small_config();
        let m = model(&config);
        let x = Tensor::from_real(&[1, 2, 12], [vec![3.5; 12], vec![-2.0; 12]].concat()).unwrap();
        let y = m.predict(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 5]);
        // Zero spectrum: layer norm of zeros is its bias (zero), head is bias-free.
        for f in 0..5 {
            assert!((y.re()[f] - 3.5).abs() < 1e-12);
            assert!((y.re()[5 + f] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bank_mismatch_is_rejected() {
        let config = small_config();
        let train = series(3, 200);
        let bank = build_filter_bank(&train, 12, 16, 3, 1).unwrap();
        let err = FilterTs::<f64>::init(config, bank, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(err.to_string().contains("N=3"), "{err}");
    }

    #[test]
    fn wrong_input_shape() {
        let m = model(&small_config());
        let x = Tensor::<f64>::zeros(&[1, 3, 12]);
        assert!(matches!(m.predict(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(&small_config());
        let ckpt = m.checkpoint("bank.json");
        let text = serde_json::to_string(&ckpt).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let restored = FilterTs::<f64>::from_checkpoint(&back, m.bank().clone()).unwrap();
        assert_eq!(restored.params, m.params);
    }

    #[test]
    fn single_precision_forward_is_close() {
        let config = small_config();
        let m = model(&config);
        let params32 = ModelParams::<f32> {
            layers: m
                .params
                .layers
                .iter()
                .map(|l| LayerParams {
                    alpha: l.alpha.cast(),
                    beta: l.beta.cast(),
                    gamma: l.gamma.cast(),
                    dc: DcFilterParams { a_o: l.dc.a_o.cast(), w: l.dc.w.cast() },
                    sg: SgFilterParams { a_p: l.sg.a_p.cast(), v: l.sg.v.cast() },
                    norm: ComplexLayerNorm { gain: l.norm.gain.cast(), bias: l.norm.bias.cast() },
                })
                .collect(),
            head: OutputHead {
                u: ComplexLinearLayer {
                    w_real: m.params.head.u.w_real.cast(),
                    w_imag: m.params.head.u.w_imag.cast(),
                    bias: None,
                },
                q: m.params.head.q.cast(),
            },
        };
        let m32 = FilterTs::new(config.clone(), params32, m.bank().clone()).unwrap();
        let x = series(2, 12).reshape(&[1, 2, 12]).unwrap();
        let y64 = m.predict(&x).unwrap();
        let y32 = m32.predict(&x.cast::<f32>()).unwrap();
        assert!(y32.cast::<f64>().max_abs_diff(&y64) < 1e-3);
    }
}
