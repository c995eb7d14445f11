//! Post-hoc attribution: gradient-weighted class-activation maps for the
//! size output, and masking-based local surrogates for the location output.
//!
//! Two complementary views of one trained model:
//!
//! * [`grad_campp`] asks *where* the size estimate comes from: it reads the
//!   last conv block's feature maps and their gradients off one recorded
//!   forward/backward pass, forms pixel-wise α weights, reduces them to one
//!   weight per feature map, and paints the positive part of the weighted sum
//!   back onto the input plane (bilinear upsampling, max-normalized).
//! * [`lime_explain`] asks *which channels* the location call depends on: it
//!   hides random subsets of channels (replacing each hidden channel's whole
//!   series with its training-split mean), watches the predicted-class
//!   probability move, and fits a kernel-weighted ridge regression over the
//!   binary masks. A channel's coefficient is its local influence.
//!
//! Both attributions are deterministic: the map unconditionally, the
//! surrogate given its seed stream.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{forward, forward_trace, ModelError, TrainedModel};
use crate::numerics::fmath;
use crate::numerics::ops;
use crate::numerics::{NumericsError, Rng, Tensor};

use core::fmt;

/// Errors from attribution.
#[derive(Debug, Clone, PartialEq)]
pub enum InterpretError {
    Model(ModelError),
    Numerics(NumericsError),
    /// The map method needs a convolutional trunk.
    UnsupportedArchitecture { arch: String },
    Config { detail: String },
    /// Perturbation design collapsed (all masks identical) even after one
    /// resample.
    DegenerateDesign,
    /// A model query returned a non-finite probability.
    NonFinite { what: &'static str },
}

impl fmt::Display for InterpretError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterpretError::Model(e) => write!(f, "model: {e}"),
            InterpretError::Numerics(e) => write!(f, "numerics: {e}"),
            InterpretError::UnsupportedArchitecture { arch } => {
                write!(f, "'{arch}' has no convolutional layer to attribute")
            }
            InterpretError::Config { detail } => write!(f, "invalid attribution config: {detail}"),
            InterpretError::DegenerateDesign => {
                write!(f, "perturbation design degenerate after resampling")
            }
            InterpretError::NonFinite { what } => write!(f, "non-finite value in {what}"),
        }
    }
}

impl core::error::Error for InterpretError {}

impl From<ModelError> for InterpretError {
    fn from(e: ModelError) -> Self {
        InterpretError::Model(e)
    }
}

impl From<NumericsError> for InterpretError {
    fn from(e: NumericsError) -> Self {
        InterpretError::Numerics(e)
    }
}

/// Which attribution produced a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencySource {
    GradCampp,
    LimeBroadcast,
}

impl SaliencySource {
    pub fn as_str(&self) -> &'static str {
        match self {
            SaliencySource::GradCampp => "grad_campp",
            SaliencySource::LimeBroadcast => "lime_broadcast",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "grad_campp" => Some(SaliencySource::GradCampp),
            "lime_broadcast" => Some(SaliencySource::LimeBroadcast),
            _ => None,
        }
    }
}

/// A per-case attribution map at input resolution: non-negative, finite, and
/// max-normalized to 1 unless identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub case_id: usize,
    /// `P×T`, aligned with the model's channel order.
    pub values: Tensor,
    pub source: SaliencySource,
}

/// Local surrogate explanation of the location call for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct LimeExplanation {
    pub case_id: usize,
    /// Signed influence per model channel.
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Weighted R² of the surrogate on its own perturbation sample.
    pub r_squared: f64,
    pub n_perturb: usize,
}

/// Surrogate sampling and fitting settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LimeConfig {
    pub n_perturb: usize,
    /// `None` selects the default `0.75·sqrt(P)`.
    pub kernel_width: Option<f64>,
    pub ridge: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_perturb: 500,
            kernel_width: None,
            ridge: 1e-3,
        }
    }
}

/// Divides a map by its maximum; an all-zero map stays all-zero.
fn max_normalize(values: &mut Tensor) {
    let max = values.max_value().unwrap_or(0.0);
    if max > 0.0 {
        for v in values.data_mut() {
            *v /= max;
        }
    }
}

/// Gradient-weighted activation map for the size output, painted over the
/// input plane.
///
/// With `A^k` the last conv block's post-activation feature maps and
/// `g = ∂size/∂A`, pixel weights are `α = g² / (2g² + (Σ_ab A_ab)·g³)`
/// (zero where the denominator vanishes), per-map weights
/// `w_k = Σ α·relu(g)`, and the map is `relu(Σ_k w_k A^k)` bilinearly
/// upsampled to `P×T` and max-normalized.
pub fn grad_campp(
    model: &TrainedModel,
    channels: &[String],
    matrix: &Tensor,
    case_id: usize,
) -> Result<SaliencyMap, InterpretError> {
    let trace = forward_trace(model, channels, matrix, false, None)?;
    let last_conv = trace.last_conv.ok_or_else(|| {
        InterpretError::UnsupportedArchitecture {
            arch: model.arch.kind.as_str().to_string(),
        }
    })?;
    let grads = trace.graph.backward(trace.size)?;
    let a = trace.graph.value(last_conv)?;
    let g = grads.wrt_node(last_conv)?;

    let (c, h, w) = (a.dim(0), a.dim(1), a.dim(2));
    let plane = h * w;
    let mut raw = Tensor::zeros(&[h, w]);
    {
        let out = raw.data_mut();
        let a_data = a.data();
        let g_data = g.data();
        for k in 0..c {
            let a_map = &a_data[k * plane..(k + 1) * plane];
            let g_map = &g_data[k * plane..(k + 1) * plane];
            let a_sum: f64 = a_map.iter().sum();
            let mut w_k = 0.0;
            for &g_ij in g_map {
                if g_ij > 0.0 {
                    let denom = 2.0 * g_ij * g_ij + a_sum * g_ij * g_ij * g_ij;
                    if denom != 0.0 {
                        // relu(g) keeps only positively influencing pixels.
                        w_k += (g_ij * g_ij / denom) * g_ij;
                    }
                }
            }
            for (slot, &a_ij) in out.iter_mut().zip(a_map) {
                *slot += w_k * a_ij;
            }
        }
        for v in out.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    let (p, t_len) = (model.arch.num_channels, model.arch.time_len);
    let mut values = ops::bilinear_upsample(&raw, p, t_len)?;
    max_normalize(&mut values);
    if !values.all_finite() {
        return Err(InterpretError::NonFinite {
            what: "activation map",
        });
    }
    Ok(SaliencyMap {
        case_id,
        values,
        source: SaliencySource::GradCampp,
    })
}

/// Solves the SPD system `m·x = rhs` (row-major `n×n`) by Cholesky
/// decomposition. A non-positive pivot reports a degenerate design.
fn cholesky_solve(mut m: Vec<f64>, n: usize, mut rhs: Vec<f64>) -> Result<Vec<f64>, InterpretError> {
    for j in 0..n {
        let mut diag = m[j * n + j];
        for k in 0..j {
            diag -= m[j * n + k] * m[j * n + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(InterpretError::DegenerateDesign);
        }
        let l_jj = fmath::sqrt(diag);
        m[j * n + j] = l_jj;
        for i in (j + 1)..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= m[i * n + k] * m[j * n + k];
            }
            m[i * n + j] = s / l_jj;
        }
    }
    // Forward substitution L·y = rhs.
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= m[i * n + k] * rhs[k];
        }
        rhs[i] = s / m[i * n + i];
    }
    // Back substitution Lᵀ·x = y.
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for k in (i + 1)..n {
            s -= m[k * n + i] * rhs[k];
        }
        rhs[i] = s / m[i * n + i];
    }
    Ok(rhs)
}

/// Kernel-weighted ridge fit of `ys` against binary masks (plus intercept).
/// Returns `(weights, intercept, weighted R²)`. The intercept is not
/// penalized. All masks being identical is a degenerate design.
fn fit_surrogate(
    masks: &[Vec<bool>],
    ys: &[f64],
    kernel_width: f64,
    ridge: f64,
) -> Result<(Vec<f64>, f64, f64), InterpretError> {
    let n = masks.len();
    let p = masks[0].len();
    if masks.iter().all(|m| m == &masks[0]) {
        return Err(InterpretError::DegenerateDesign);
    }
    let dim = p + 1;
    // Sample weights from Hamming distance to the unmasked case.
    let mut sample_w = Vec::with_capacity(n);
    for mask in masks {
        let d = mask.iter().filter(|&&bit| !bit).count() as f64;
        sample_w.push(fmath::exp(-(d * d) / (kernel_width * kernel_width)));
    }
    // Normal equations Σ w·x·xᵀ (+ ridge off the intercept) and Σ w·y·x,
    // with x = [1, mask...].
    let mut m = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    let mut x = vec![0.0; dim];
    for (i, mask) in masks.iter().enumerate() {
        x[0] = 1.0;
        for (slot, &bit) in x[1..].iter_mut().zip(mask) {
            *slot = if bit { 1.0 } else { 0.0 };
        }
        let w_i = sample_w[i];
        for r in 0..dim {
            let wx = w_i * x[r];
            for c_idx in 0..=r {
                m[r * dim + c_idx] += wx * x[c_idx];
            }
            rhs[r] += wx * ys[i];
        }
    }
    for r in 0..dim {
        for c_idx in (r + 1)..dim {
            m[r * dim + c_idx] = m[c_idx * dim + r];
        }
    }
    for d_idx in 1..dim {
        m[d_idx * dim + d_idx] += ridge;
    }
    let beta = cholesky_solve(m, dim, rhs)?;

    // Weighted R² against the weighted mean.
    let w_sum: f64 = sample_w.iter().sum();
    let y_bar = masks
        .iter()
        .enumerate()
        .map(|(i, _)| sample_w[i] * ys[i])
        .sum::<f64>()
        / w_sum;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (i, mask) in masks.iter().enumerate() {
        let mut pred = beta[0];
        for (j, &bit) in mask.iter().enumerate() {
            if bit {
                pred += beta[j + 1];
            }
        }
        ss_res += sample_w[i] * (ys[i] - pred) * (ys[i] - pred);
        ss_tot += sample_w[i] * (ys[i] - y_bar) * (ys[i] - y_bar);
    }
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok((beta[1..].to_vec(), beta[0], r_squared))
}

/// Fits a local surrogate over `num_features` binary mask bits against an
/// arbitrary black box. Masks keep each bit with probability one half; on a
/// degenerate draw the whole design is resampled once.
///
/// This is the reusable core of [`lime_explain`]; the black box is any
/// closure, which is what the fidelity oracles test against.
pub fn lime_fit<F>(
    num_features: usize,
    config: &LimeConfig,
    rng: &mut Rng,
    mut query: F,
) -> Result<(Vec<f64>, f64, f64, usize), InterpretError>
where
    F: FnMut(&[bool]) -> Result<f64, InterpretError>,
{
    if num_features == 0 {
        return Err(InterpretError::Config {
            detail: "zero interpretable features".to_string(),
        });
    }
    if config.n_perturb < num_features + 2 {
        return Err(InterpretError::Config {
            detail: format!(
                "n_perturb {} below minimum {} (features + 2)",
                config.n_perturb,
                num_features + 2
            ),
        });
    }
    if !(config.ridge > 0.0 && config.ridge.is_finite()) {
        return Err(InterpretError::Config {
            detail: format!("ridge {}", config.ridge),
        });
    }
    let kernel_width = match config.kernel_width {
        Some(kw) if kw > 0.0 && kw.is_finite() => kw,
        Some(kw) => {
            return Err(InterpretError::Config {
                detail: format!("kernel_width {kw}"),
            })
        }
        None => 0.75 * fmath::sqrt(num_features as f64),
    };

    let mut attempt = 0;
    loop {
        let masks: Vec<Vec<bool>> = (0..config.n_perturb)
            .map(|_| (0..num_features).map(|_| rng.bernoulli(0.5)).collect())
            .collect();
        let degenerate = masks.iter().all(|m| m == &masks[0]);
        if degenerate && attempt == 0 {
            attempt = 1;
            continue;
        }
        let mut ys = Vec::with_capacity(config.n_perturb);
        for mask in &masks {
            let y = query(mask)?;
            if !y.is_finite() {
                return Err(InterpretError::NonFinite {
                    what: "black-box query",
                });
            }
            ys.push(y);
        }
        let (weights, intercept, r_squared) =
            fit_surrogate(&masks, &ys, kernel_width, config.ridge)?;
        if !(weights.iter().all(|w| w.is_finite()) && intercept.is_finite()) {
            return Err(InterpretError::NonFinite {
                what: "surrogate coefficients",
            });
        }
        return Ok((weights, intercept, r_squared, config.n_perturb));
    }
}

/// Local surrogate for one case: interpretable features are the model's
/// channels; masking a channel replaces its whole series with the channel's
/// training mean; the target is the model's probability of this case's
/// predicted class.
pub fn lime_explain(
    model: &TrainedModel,
    channels: &[String],
    matrix: &Tensor,
    case_id: usize,
    config: &LimeConfig,
    rng: &mut Rng,
) -> Result<LimeExplanation, InterpretError> {
    let p = model.arch.num_channels;
    let t_len = model.arch.time_len;

    // Select the model's rows once; queries then run against this base.
    let mut base = Tensor::zeros(&[p, t_len]);
    {
        let out = base.data_mut();
        for (dst, name) in model.channels.iter().enumerate() {
            let src = channels.iter().position(|c| c == name).ok_or_else(|| {
                InterpretError::Model(ModelError::ChannelMismatch {
                    missing: vec![name.clone()],
                    available: channels.len(),
                })
            })?;
            out[dst * t_len..(dst + 1) * t_len]
                .copy_from_slice(&matrix.data()[src * t_len..(src + 1) * t_len]);
        }
    }
    let target_class = forward(model, &model.channels, &base)?.predicted_class();

    let mut masked = base.clone();
    let model_channels = model.channels.clone();
    let (weights, intercept, r_squared, n_perturb) =
        lime_fit(p, config, rng, |mask: &[bool]| {
            {
                let out = masked.data_mut();
                for (ch, &keep) in mask.iter().enumerate() {
                    let row = &mut out[ch * t_len..(ch + 1) * t_len];
                    if keep {
                        row.copy_from_slice(&base.data()[ch * t_len..(ch + 1) * t_len]);
                    } else {
                        row.fill(model.norm_stats[ch].mean);
                    }
                }
            }
            let pred = forward(model, &model_channels, &masked)?;
            Ok(pred.class_probs[target_class])
        })?;
    Ok(LimeExplanation {
        case_id,
        weights,
        intercept,
        r_squared,
        n_perturb,
    })
}

/// Spreads a surrogate explanation over the input plane: each channel row
/// carries its absolute weight at every time step, max-normalized.
pub fn lime_broadcast_map(explanation: &LimeExplanation, time_len: usize) -> SaliencyMap {
    let p = explanation.weights.len();
    let mut values = Tensor::zeros(&[p, time_len]);
    {
        let out = values.data_mut();
        for (ch, w) in explanation.weights.iter().enumerate() {
            let magnitude = fmath::abs(*w);
            out[ch * time_len..(ch + 1) * time_len].fill(magnitude);
        }
    }
    max_normalize(&mut values);
    SaliencyMap {
        case_id: explanation.case_id,
        values,
        source: SaliencySource::LimeBroadcast,
    }
}

/// Runs both attributions for one case: the activation map for the size
/// output and the masking surrogate (plus its broadcast map) for the
/// location output.
pub fn explain_case(
    model: &TrainedModel,
    channels: &[String],
    matrix: &Tensor,
    case_id: usize,
    config: &LimeConfig,
    rng: &mut Rng,
) -> Result<(SaliencyMap, LimeExplanation), InterpretError> {
    let map = grad_campp(model, channels, matrix, case_id)?;
    let lime = lime_explain(model, channels, matrix, case_id, config, rng)?;
    Ok((map, lime))
}
