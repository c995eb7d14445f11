//! The time-sequential residual CNN and its losses.
//!
//! A diagnosed transient enters as a `P×T` matrix (P monitored channels, T
//! time samples). The model:
//!
//! 1. z-scores each channel with statistics frozen from the training split,
//! 2. adds a sinusoidal positional encoding so absolute time survives the
//!    later pooling,
//! 3. treats the result as a one-channel `P×T` image and runs it through a
//!    stack of residual conv blocks (`conv → relu → conv → +skip → relu →
//!    maxpool`), pooling only along time so the channel axis keeps its
//!    meaning,
//! 4. averages over the remaining time axis, applies a shared dense layer
//!    (with dropout during training), and
//! 5. reads out a softmax location head and a linear size head.
//!
//! Three architectures share this code: `tres_cnn` (the full model),
//! `tres_cnn_plain` (same weight table, residual joins skipped, dropout off)
//! and `mlp_baseline` (flatten → dense). The plain variant keeps the skip
//! projections in its weight table precisely so the two conv variants are
//! comparable weight-for-weight.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::fmath;
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::ops;
use crate::numerics::{NumericsError, Rng, Tensor};

use core::fmt;

/// Class names in head order; index 0 is the cold-leg class.
pub const DEFAULT_CLASS_ORDER: [&str; 2] = ["cold_leg", "hot_leg"];

/// Numeric floor applied to per-channel standard deviations so constant
/// channels normalize to zero instead of dividing by zero.
pub const STD_FLOOR: f64 = 1e-8;

/// Errors from model construction, input preparation, or the loss helpers.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    Numerics(NumericsError),
    /// Invalid architecture configuration; the message names the offending
    /// field (and block, where applicable).
    Config { detail: String },
    /// Positional-encoding index outside the channel dimension.
    PositionalIndex { i: usize, dim: usize },
    /// The input does not provide every channel the model was trained on.
    ChannelMismatch {
        missing: Vec<String>,
        available: usize,
    },
    /// Input matrix shape disagrees with the channel list / time length.
    MatrixShape { detail: String },
    /// Weight table misses a parameter the architecture requires.
    MissingWeight { name: String },
    /// Weight table has a parameter of the wrong shape.
    WeightShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// Weight table contains a parameter the architecture does not define.
    UnexpectedWeight { name: String },
    /// A label row that is not exactly one-hot.
    NotOneHot { row: usize },
    /// Paired slices of different lengths.
    LengthMismatch { left: usize, right: usize },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Numerics(e) => write!(f, "numerics: {e}"),
            ModelError::Config { detail } => write!(f, "invalid architecture config: {detail}"),
            ModelError::PositionalIndex { i, dim } => {
                write!(f, "positional encoding index {i} outside dimension {dim}")
            }
            ModelError::ChannelMismatch { missing, available } => write!(
                f,
                "input (with {available} channels) is missing model channels: {missing:?}"
            ),
            ModelError::MatrixShape { detail } => write!(f, "bad input matrix: {detail}"),
            ModelError::MissingWeight { name } => write!(f, "weight table misses '{name}'"),
            ModelError::WeightShape {
                name,
                expected,
                got,
            } => write!(
                f,
                "weight '{name}' has shape {got:?}, architecture requires {expected:?}"
            ),
            ModelError::UnexpectedWeight { name } => {
                write!(f, "weight table has unexpected entry '{name}'")
            }
            ModelError::NotOneHot { row } => write!(f, "label row {row} is not one-hot"),
            ModelError::LengthMismatch { left, right } => {
                write!(f, "paired inputs of lengths {left} and {right}")
            }
        }
    }
}

impl core::error::Error for ModelError {}

impl From<NumericsError> for ModelError {
    fn from(e: NumericsError) -> Self {
        ModelError::Numerics(e)
    }
}

/// Which of the three architectures a config describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    TresCnn,
    TresCnnPlain,
    MlpBaseline,
}

impl ArchKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArchKind::TresCnn => "tres_cnn",
            ArchKind::TresCnnPlain => "tres_cnn_plain",
            ArchKind::MlpBaseline => "mlp_baseline",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "tres_cnn" => Some(ArchKind::TresCnn),
            "tres_cnn_plain" => Some(ArchKind::TresCnnPlain),
            "mlp_baseline" => Some(ArchKind::MlpBaseline),
            _ => None,
        }
    }
}

/// One residual block of the conv trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub filters: usize,
    /// Conv kernel (height over channels, width over time); both odd so the
    /// implicit same-padding is symmetric.
    pub kernel: (usize, usize),
    /// Max-pool window; also the pool stride. `(1, 2)` halves time only.
    pub pool: (usize, usize),
}

/// Complete architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub kind: ArchKind,
    pub blocks: Vec<BlockSpec>,
    pub dense_width: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub num_channels: usize,
    pub time_len: usize,
}

impl ArchConfig {
    /// The default trunk: three residual blocks with 3x5 kernels and
    /// time-halving pools, a 32-wide shared dense layer, dropout 0.2.
    pub fn tres_cnn(num_channels: usize, time_len: usize) -> Self {
        ArchConfig {
            kind: ArchKind::TresCnn,
            blocks: [2, 4, 8]
                .iter()
                .map(|&filters| BlockSpec {
                    filters,
                    kernel: (3, 5),
                    pool: (1, 2),
                })
                .collect(),
            dense_width: 32,
            dropout_rate: 0.2,
            num_classes: 2,
            num_channels,
            time_len,
        }
    }

    /// The ablation variant: identical weight table, residual joins skipped,
    /// dropout disabled.
    pub fn plain_variant(&self) -> Self {
        ArchConfig {
            kind: ArchKind::TresCnnPlain,
            dropout_rate: 0.0,
            ..self.clone()
        }
    }

    /// Dropout used at run time; the plain ablation always runs at zero.
    pub fn effective_dropout(&self) -> f64 {
        match self.kind {
            ArchKind::TresCnnPlain => 0.0,
            _ => self.dropout_rate,
        }
    }

    /// Validates the configuration, tracking spatial dimensions through the
    /// trunk so a pool that squeezes any axis below one sample is reported
    /// with its block index.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |detail: String| Err(ModelError::Config { detail });
        if self.num_classes < 2 {
            return fail(format!("num_classes {} < 2", self.num_classes));
        }
        if self.num_channels == 0 || self.time_len == 0 {
            return fail(format!(
                "empty input plane {}x{}",
                self.num_channels, self.time_len
            ));
        }
        if self.dense_width == 0 {
            return fail("dense_width 0".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if matches!(self.kind, ArchKind::MlpBaseline) {
            // The trunk is unused; nothing else to check.
            return Ok(());
        }
        if self.blocks.is_empty() {
            return fail("conv architecture with no blocks".to_string());
        }
        let (mut h, mut w) = (self.num_channels, self.time_len);
        for (idx, b) in self.blocks.iter().enumerate() {
            let block_no = idx + 1;
            if b.filters == 0 {
                return fail(format!("block {block_no}: 0 filters"));
            }
            if b.kernel.0 % 2 == 0 || b.kernel.1 % 2 == 0 || b.kernel.0 == 0 || b.kernel.1 == 0 {
                return fail(format!(
                    "block {block_no}: kernel {:?} must be odd in both dims",
                    b.kernel
                ));
            }
            if b.pool.0 == 0 || b.pool.1 == 0 {
                return fail(format!("block {block_no}: pool {:?} has a zero dim", b.pool));
            }
            // Convs keep h×w (same padding); pooling shrinks.
            if h < b.pool.0 || w < b.pool.1 {
                return fail(format!(
                    "block {block_no}: pool {:?} does not fit remaining plane {h}x{w}",
                    b.pool
                ));
            }
            h = (h - b.pool.0) / b.pool.0 + 1;
            w = (w - b.pool.1) / b.pool.1 + 1;
            if h == 0 || w == 0 {
                return fail(format!(
                    "block {block_no}: pooling shrinks the plane to {h}x{w}"
                ));
            }
        }
        Ok(())
    }

    /// `(name, shape, fan_in)` for every weight this architecture requires,
    /// in the canonical (sorted-name) order used everywhere else.
    pub fn expected_weights(&self) -> Result<Vec<WeightSpec>, ModelError> {
        self.validate()?;
        let mut specs: Vec<WeightSpec> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
            specs.push(WeightSpec {
                name,
                shape,
                fan_in,
            });
        };
        let feature_len = match self.kind {
            ArchKind::MlpBaseline => self.num_channels * self.time_len,
            _ => {
                let mut c_prev = 1usize;
                for (idx, b) in self.blocks.iter().enumerate() {
                    let blk = format!("block{}", idx + 1);
                    let fan1 = c_prev * b.kernel.0 * b.kernel.1;
                    push(
                        format!("{blk}.conv1.w"),
                        vec![b.filters, c_prev, b.kernel.0, b.kernel.1],
                        fan1,
                    );
                    push(format!("{blk}.conv1.b"), vec![b.filters], fan1);
                    let fan2 = b.filters * b.kernel.0 * b.kernel.1;
                    push(
                        format!("{blk}.conv2.w"),
                        vec![b.filters, b.filters, b.kernel.0, b.kernel.1],
                        fan2,
                    );
                    push(format!("{blk}.conv2.b"), vec![b.filters], fan2);
                    if c_prev != b.filters {
                        // 1x1 projection aligning channel counts on the skip
                        // path; bias-free.
                        push(
                            format!("{blk}.skip.w"),
                            vec![b.filters, c_prev, 1, 1],
                            c_prev,
                        );
                    }
                    c_prev = b.filters;
                }
                c_prev * self.num_channels
            }
        };
        push(
            "dense.w".to_string(),
            vec![self.dense_width, feature_len],
            feature_len,
        );
        push("dense.b".to_string(), vec![self.dense_width], feature_len);
        push(
            "head_class.w".to_string(),
            vec![self.num_classes, self.dense_width],
            self.dense_width,
        );
        push(
            "head_class.b".to_string(),
            vec![self.num_classes],
            self.dense_width,
        );
        push(
            "head_size.w".to_string(),
            vec![1, self.dense_width],
            self.dense_width,
        );
        push("head_size.b".to_string(), vec![1], self.dense_width);
        specs.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(specs)
    }
}

/// Shape and initialization scale of one named weight tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

/// Per-channel normalization statistics frozen from the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStat {
    pub mean: f64,
    /// Standard deviation, floored at [`STD_FLOOR`].
    pub std: f64,
}

impl NormStat {
    pub fn new(mean: f64, std: f64) -> Self {
        NormStat {
            mean,
            std: std.max(STD_FLOOR),
        }
    }

    /// Identity statistics (mean 0, std 1).
    pub fn identity() -> Self {
        NormStat {
            mean: 0.0,
            std: 1.0,
        }
    }
}

/// Run metadata carried with a model so downstream stages can check
/// provenance (same dataset, same seed) before comparing runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelMeta {
    pub train_seed: u64,
    pub iterations: usize,
    /// Fingerprint of the dataset (seed + shape + split) the model was
    /// trained against; zero for an untrained model.
    pub dataset_fingerprint: u64,
}

/// A model: architecture, the channels it consumes (in catalog order), class
/// names in head order, frozen normalization statistics, and named weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub arch: ArchConfig,
    pub channels: Vec<String>,
    pub class_order: Vec<String>,
    pub norm_stats: Vec<NormStat>,
    pub weights: BTreeMap<String, Tensor>,
    pub meta: ModelMeta,
    /// Positional-encoding map (`P×T`), derived from `arch`; rebuilt on
    /// construction, never serialized.
    pe: Tensor,
}

impl TrainedModel {
    /// Validates all cross-field invariants and assembles a model. This is
    /// the single constructor: initialization, checkpoint loading, and tests
    /// all go through it.
    pub fn assemble(
        arch: ArchConfig,
        channels: Vec<String>,
        class_order: Vec<String>,
        norm_stats: Vec<NormStat>,
        weights: BTreeMap<String, Tensor>,
        meta: ModelMeta,
    ) -> Result<Self, ModelError> {
        arch.validate()?;
        if channels.len() != arch.num_channels {
            return Err(ModelError::Config {
                detail: format!(
                    "{} channel names for num_channels {}",
                    channels.len(),
                    arch.num_channels
                ),
            });
        }
        if class_order.len() != arch.num_classes {
            return Err(ModelError::Config {
                detail: format!(
                    "{} class names for num_classes {}",
                    class_order.len(),
                    arch.num_classes
                ),
            });
        }
        if norm_stats.len() != arch.num_channels {
            return Err(ModelError::Config {
                detail: format!(
                    "{} normalization stats for num_channels {}",
                    norm_stats.len(),
                    arch.num_channels
                ),
            });
        }
        for spec in arch.expected_weights()? {
            match weights.get(&spec.name) {
                None => return Err(ModelError::MissingWeight { name: spec.name }),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(ModelError::WeightShape {
                        name: spec.name,
                        expected: spec.shape,
                        got: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        let expected_names: Vec<&String> = weights.keys().collect();
        for name in expected_names {
            if !arch
                .expected_weights()?
                .iter()
                .any(|spec| &spec.name == name)
            {
                return Err(ModelError::UnexpectedWeight { name: name.clone() });
            }
        }
        let pe = pe_map(arch.num_channels, arch.time_len)?;
        Ok(TrainedModel {
            arch,
            channels,
            class_order,
            norm_stats,
            weights,
            meta,
            pe,
        })
    }

    pub fn weight(&self, name: &str) -> &Tensor {
        // assemble() guarantees presence; a panic here is a program bug.
        &self.weights[name]
    }

    /// The precomputed positional-encoding map (`P×T`).
    pub fn pe(&self) -> &Tensor {
        &self.pe
    }
}

/// Sinusoidal positional encoding over the channel axis: channels with even
/// index `i` carry `sin(pos / 10000^(i/dim))`, odd ones carry
/// `cos(pos / 10000^((i-1)/dim))`, so adjacent channels share a frequency in
/// quadrature and the whole axis spans a geometric frequency ladder.
pub fn positional_encoding(pos: usize, i: usize, dim: usize) -> Result<f64, ModelError> {
    if i >= dim || dim == 0 {
        return Err(ModelError::PositionalIndex { i, dim });
    }
    let paired = (i - i % 2) as f64;
    let denom = fmath::pow(10000.0, paired / dim as f64);
    let angle = pos as f64 / denom;
    Ok(if i % 2 == 0 {
        fmath::sin(angle)
    } else {
        fmath::cos(angle)
    })
}

/// Full positional-encoding map, laid out `P×T` to match the input plane:
/// entry `(p, t)` is [`positional_encoding`] at `pos = t`, `i = p`.
pub fn pe_map(num_channels: usize, time_len: usize) -> Result<Tensor, ModelError> {
    if num_channels == 0 || time_len == 0 {
        return Err(ModelError::Config {
            detail: format!("positional map {num_channels}x{time_len}"),
        });
    }
    let mut map = Tensor::zeros(&[num_channels, time_len]);
    let data = map.data_mut();
    for p in 0..num_channels {
        let paired = (p - p % 2) as f64;
        let denom = fmath::pow(10000.0, paired / num_channels as f64);
        let row = &mut data[p * time_len..(p + 1) * time_len];
        for (t, slot) in row.iter_mut().enumerate() {
            let angle = t as f64 / denom;
            *slot = if p % 2 == 0 {
                fmath::sin(angle)
            } else {
                fmath::cos(angle)
            };
        }
    }
    Ok(map)
}

/// Initializes a model for `arch`: every weight drawn uniformly from
/// `[-sqrt(1/fan_in), sqrt(1/fan_in))` on its own named child stream of
/// `init_rng`, so the draw for one parameter never shifts another's.
///
/// Channels get placeholder names (`ch_00`, ...) and identity normalization;
/// training replaces both with dataset-derived values.
pub fn build_model(arch: &ArchConfig, init_rng: &Rng) -> Result<TrainedModel, ModelError> {
    let specs = arch.expected_weights()?;
    let mut weights = BTreeMap::new();
    for spec in &specs {
        let mut rng = init_rng.named_child(&spec.name);
        let bound = fmath::sqrt(1.0 / spec.fan_in as f64);
        let len: usize = spec.shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| rng.uniform(-bound, bound)).collect();
        weights.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?);
    }
    let channels = (0..arch.num_channels)
        .map(|p| format!("ch_{p:02}"))
        .collect();
    let class_order: Vec<String> = if arch.num_classes == 2 {
        DEFAULT_CLASS_ORDER.iter().map(|s| s.to_string()).collect()
    } else {
        (0..arch.num_classes)
            .map(|c| format!("class_{c}"))
            .collect()
    };
    let norm_stats = vec![NormStat::identity(); arch.num_channels];
    TrainedModel::assemble(
        arch.clone(),
        channels,
        class_order,
        norm_stats,
        weights,
        ModelMeta::default(),
    )
}

/// Model output: softmax class probabilities (in `class_order`) and the
/// scalar size estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_probs: Vec<f64>,
    pub size: f64,
}

impl Prediction {
    /// Index of the most probable class; ties resolve to the lower index.
    pub fn predicted_class(&self) -> usize {
        let mut best = 0usize;
        for (c, p) in self.class_probs.iter().enumerate().skip(1) {
            if *p > self.class_probs[best] {
                best = c;
            }
        }
        best
    }
}

/// Selects the model's channels from `channels`/`matrix`, z-scores them with
/// the frozen statistics, adds the positional encoding, and shapes the result
/// as a one-channel `1×P×T` image.
pub fn prepare_input(
    model: &TrainedModel,
    channels: &[String],
    matrix: &Tensor,
) -> Result<Tensor, ModelError> {
    if matrix.rank() != 2 || matrix.dim(0) != channels.len() {
        return Err(ModelError::MatrixShape {
            detail: format!(
                "matrix {:?} vs {} channel names",
                matrix.shape(),
                channels.len()
            ),
        });
    }
    let t_len = model.arch.time_len;
    if matrix.dim(1) != t_len {
        return Err(ModelError::MatrixShape {
            detail: format!(
                "matrix has {} time samples, model expects {t_len}",
                matrix.dim(1)
            ),
        });
    }
    let p = model.arch.num_channels;
    let mut rows = Vec::with_capacity(p);
    let mut missing = Vec::new();
    for name in &model.channels {
        match channels.iter().position(|c| c == name) {
            Some(idx) => rows.push(idx),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(ModelError::ChannelMismatch {
            missing,
            available: channels.len(),
        });
    }

    let mut out = Tensor::zeros(&[1, p, t_len]);
    let data = out.data_mut();
    let pe = model.pe.data();
    for (dst, &src) in rows.iter().enumerate() {
        let stat = model.norm_stats[dst];
        let src_row = &matrix.data()[src * t_len..(src + 1) * t_len];
        let pe_row = &pe[dst * t_len..(dst + 1) * t_len];
        let dst_row = &mut data[dst * t_len..(dst + 1) * t_len];
        for ((o, x), e) in dst_row.iter_mut().zip(src_row).zip(pe_row) {
            *o = (x - stat.mean) / stat.std + e;
        }
    }
    Ok(out)
}

/// Recorded forward pass: the tape plus the node ids downstream consumers
/// need (loss construction, Grad-CAM++).
pub struct ForwardTrace {
    pub graph: Graph,
    /// The prepared `1×P×T` input leaf.
    pub input: NodeId,
    /// Post-activation feature maps of the last conv block (`None` for the
    /// MLP baseline).
    pub last_conv: Option<NodeId>,
    /// Location-head logits (length `num_classes`).
    pub logits: NodeId,
    /// Size-head output (scalar).
    pub size: NodeId,
}

/// Graph-recorded forward pass. `training` enables dropout, which then draws
/// its mask from `dropout_rng`.
pub fn forward_trace(
    model: &TrainedModel,
    channels: &[String],
    matrix: &Tensor,
    training: bool,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<ForwardTrace, ModelError> {
    let x = prepare_input(model, channels, matrix)?;
    let mut g = Graph::new();
    let input = g.leaf(x);

    let mut ids: BTreeMap<&str, NodeId> = BTreeMap::new();
    for (name, tensor) in &model.weights {
        ids.insert(name.as_str(), g.param(name, tensor.clone()));
    }

    let arch = &model.arch;
    let mut cur = input;
    let mut last_conv = None;
    let features = match arch.kind {
        ArchKind::MlpBaseline => g.flatten(cur)?,
        ArchKind::TresCnn | ArchKind::TresCnnPlain => {
            let mut c_prev = 1usize;
            for (idx, b) in arch.blocks.iter().enumerate() {
                let blk = format!("block{}", idx + 1);
                let pad = (b.kernel.0 / 2, b.kernel.1 / 2);
                let w1 = ids[format!("{blk}.conv1.w").as_str()];
                let b1 = ids[format!("{blk}.conv1.b").as_str()];
                let w2 = ids[format!("{blk}.conv2.w").as_str()];
                let b2 = ids[format!("{blk}.conv2.b").as_str()];
                let c1 = g.conv2d(cur, w1, Some(b1), (1, 1), pad)?;
                let r1 = g.relu(c1)?;
                let c2 = g.conv2d(r1, w2, Some(b2), (1, 1), pad)?;
                let joined = match arch.kind {
                    ArchKind::TresCnn => {
                        let skip = if c_prev != b.filters {
                            let ws = ids[format!("{blk}.skip.w").as_str()];
                            g.conv2d(cur, ws, None, (1, 1), (0, 0))?
                        } else {
                            cur
                        };
                        g.add(c2, skip)?
                    }
                    _ => c2,
                };
                let r2 = g.relu(joined)?;
                last_conv = Some(r2);
                cur = g.maxpool2d(r2, b.pool, b.pool)?;
                c_prev = b.filters;
            }
            let pooled = g.mean_over_width(cur)?;
            g.flatten(pooled)?
        }
    };

    // Dropout acts on the pooled feature vector, before the dense layer:
    // masking the wide pooled features regularizes the trunk while the dense
    // layer averages the mask noise back out, so the two heads see a far
    // steadier signal than they would if the mask hit their direct input.
    let rate = arch.effective_dropout();
    let features = if training && rate > 0.0 {
        let rng = dropout_rng
            .as_deref_mut()
            .ok_or(ModelError::Config {
                detail: "training forward without a dropout stream".to_string(),
            })?;
        g.dropout(features, rate, rng, true)?
    } else {
        features
    };
    let dense = g.dense(features, ids["dense.w"], Some(ids["dense.b"]))?;
    let hidden = g.relu(dense)?;
    let logits = g.dense(hidden, ids["head_class.w"], Some(ids["head_class.b"]))?;
    let size = g.dense(hidden, ids["head_size.w"], Some(ids["head_size.b"]))?;

    Ok(ForwardTrace {
        graph: g,
        input,
        last_conv,
        logits,
        size,
    })
}

/// Tape-free inference forward pass. Bitwise-identical to the value side of
/// [`forward_trace`] in inference mode (a unit test holds this), but without
/// graph bookkeeping — this is the hot path for LIME's thousands of queries.
pub fn forward(
    model: &TrainedModel,
    channels: &[String],
    matrix: &Tensor,
) -> Result<Prediction, ModelError> {
    let x = prepare_input(model, channels, matrix)?;
    let arch = &model.arch;
    let features = match arch.kind {
        ArchKind::MlpBaseline => x.reshaped(vec![x.len()])?,
        ArchKind::TresCnn | ArchKind::TresCnnPlain => {
            let mut cur = x;
            let mut c_prev = 1usize;
            for (idx, b) in arch.blocks.iter().enumerate() {
                let blk = format!("block{}", idx + 1);
                let pad = (b.kernel.0 / 2, b.kernel.1 / 2);
                let c1 = ops::conv2d(
                    &cur,
                    model.weight(&format!("{blk}.conv1.w")),
                    Some(model.weight(&format!("{blk}.conv1.b"))),
                    (1, 1),
                    pad,
                )?;
                let r1 = ops::relu(&c1);
                let c2 = ops::conv2d(
                    &r1,
                    model.weight(&format!("{blk}.conv2.w")),
                    Some(model.weight(&format!("{blk}.conv2.b"))),
                    (1, 1),
                    pad,
                )?;
                let joined = match arch.kind {
                    ArchKind::TresCnn => {
                        if c_prev != b.filters {
                            let skip = ops::conv2d(
                                &cur,
                                model.weight(&format!("{blk}.skip.w")),
                                None,
                                (1, 1),
                                (0, 0),
                            )?;
                            c2.add(&skip)?
                        } else {
                            c2.add(&cur)?
                        }
                    }
                    _ => c2,
                };
                let r2 = ops::relu(&joined);
                let (pooled, _) = ops::maxpool2d(&r2, b.pool, b.pool)?;
                cur = pooled;
                c_prev = b.filters;
            }
            // Mean over the time axis, then flatten.
            let (c_n, h, w) = (cur.dim(0), cur.dim(1), cur.dim(2));
            let mut feat = Tensor::zeros(&[c_n * h]);
            {
                let o = feat.data_mut();
                let xs = cur.data();
                for row in 0..c_n * h {
                    o[row] = xs[row * w..(row + 1) * w].iter().sum::<f64>() / w as f64;
                }
            }
            feat
        }
    };
    let dense = ops::dense(&features, model.weight("dense.w"), Some(model.weight("dense.b")))?;
    let hidden = ops::relu(&dense);
    let logits = ops::dense(
        &hidden,
        model.weight("head_class.w"),
        Some(model.weight("head_class.b")),
    )?;
    let size = ops::dense(
        &hidden,
        model.weight("head_size.w"),
        Some(model.weight("head_size.b")),
    )?;
    let probs = ops::softmax(&logits)?;
    Ok(Prediction {
        class_probs: probs.into_data(),
        size: size.data()[0],
    })
}

/// Sum-of-squares regression loss `Σ_i (x_i - y_i)²` (no averaging; batch
/// losses just add).
pub fn loss_regression(predictions: &[f64], targets: &[f64]) -> Result<f64, ModelError> {
    if predictions.len() != targets.len() {
        return Err(ModelError::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Softmax cross-entropy summed over a batch: rows of `logits` against
/// one-hot rows of `labels`, each term computed from logits via max-shifted
/// log-sum-exp. Rows that are not exactly one-hot (entries 0/1 summing to 1)
/// are a validation error.
pub fn loss_classification(logits: &Tensor, labels: &Tensor) -> Result<f64, ModelError> {
    if logits.rank() != 2 || labels.rank() != 2 || logits.shape() != labels.shape() {
        return Err(ModelError::MatrixShape {
            detail: format!(
                "logits {:?} vs labels {:?} (want equal N x C)",
                logits.shape(),
                labels.shape()
            ),
        });
    }
    let (n, c) = (logits.dim(0), logits.dim(1));
    let mut total = 0.0;
    for row in 0..n {
        let y = &labels.data()[row * c..(row + 1) * c];
        let mut ones = 0usize;
        for v in y {
            if *v == 1.0 {
                ones += 1;
            } else if *v != 0.0 {
                return Err(ModelError::NotOneHot { row });
            }
        }
        if ones != 1 {
            return Err(ModelError::NotOneHot { row });
        }
        let x = &logits.data()[row * c..(row + 1) * c];
        let lse = ops::log_sum_exp(x);
        for (x_c, y_c) in x.iter().zip(y) {
            total -= y_c * (x_c - lse);
        }
    }
    Ok(total)
}

/// The diagnostic loss: classification plus regression, unweighted.
pub fn loss_total(classification: f64, regression: f64) -> f64 {
    classification + regression
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            kind: ArchKind::TresCnn,
            blocks: vec![
                BlockSpec {
                    filters: 2,
                    kernel: (3, 3),
                    pool: (1, 2),
                },
                BlockSpec {
                    filters: 3,
                    kernel: (3, 3),
                    pool: (1, 2),
                },
            ],
            dense_width: 5,
            dropout_rate: 0.2,
            num_classes: 2,
            num_channels: 4,
            time_len: 12,
        }
    }

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| rng.uniform(-2.0, 2.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn positional_encoding_matches_reference_formula() {
        // Independent route: pos * exp(-(i - i%2)/dim * ln 10000), composed
        // through exp/ln instead of pow.
        let dim = 38;
        for &(pos, i) in &[(0usize, 0usize), (10, 0), (10, 37), (199, 36), (57, 13)] {
            let direct = positional_encoding(pos, i, dim).unwrap();
            let paired = (i - i % 2) as f64;
            let angle = pos as f64 * libm::exp(-paired / dim as f64 * libm::log(10000.0));
            let reference = if i % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            };
            assert!(
                (direct - reference).abs() < 1e-12,
                "pos {pos} i {i}: {direct} vs {reference}"
            );
        }
        // Spot values: sin(10) for the first channel; near-zero frequency for
        // the last odd channel gives cos of a tiny angle, just below one.
        let v0 = positional_encoding(10, 0, 38).unwrap();
        assert!((v0 - libm::sin(10.0)).abs() < 1e-15);
        let v37 = positional_encoding(10, 37, 38).unwrap();
        assert!(v37 > 0.999998 && v37 < 1.0, "{v37}");
        assert!(matches!(
            positional_encoding(0, 38, 38),
            Err(ModelError::PositionalIndex { i: 38, dim: 38 })
        ));
    }

    #[test]
    fn pe_map_agrees_with_scalar_calls() {
        let map = pe_map(6, 9).unwrap();
        for p in 0..6 {
            for t in 0..9 {
                assert_eq!(map.at2(p, t), positional_encoding(t, p, 6).unwrap());
            }
        }
        // First even channel is sin(t); adjacent odd channel is cos at the
        // same unit frequency (quadrature pair).
        assert_eq!(map.at2(0, 3), libm::sin(3.0));
        assert_eq!(map.at2(1, 3), libm::cos(3.0));
    }

    #[test]
    fn expected_weights_cover_both_conv_variants_identically() {
        let arch = tiny_arch();
        let plain = arch.plain_variant();
        let a = arch.expected_weights().unwrap();
        let b = plain.expected_weights().unwrap();
        assert_eq!(a, b, "plain ablation must share the weight table");
        // First block changes channel count 1 -> 2, so it carries a skip
        // projection; names are sorted.
        assert!(a.iter().any(|s| s.name == "block1.skip.w"));
        let names: Vec<&str> = a.iter().map(|s| s.name.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        assert_eq!(names, sorted);
    }

    #[test]
    fn build_model_respects_fan_in_bounds_and_seed() {
        let arch = tiny_arch();
        let rng = Rng::new(77);
        let model = build_model(&arch, &rng).unwrap();
        for spec in arch.expected_weights().unwrap() {
            let bound = libm::sqrt(1.0 / spec.fan_in as f64);
            let w = model.weight(&spec.name);
            assert_eq!(w.shape(), spec.shape.as_slice());
            for v in w.data() {
                assert!(v.abs() <= bound, "{}: {v} outside ±{bound}", spec.name);
            }
        }
        let again = build_model(&arch, &Rng::new(77)).unwrap();
        assert_eq!(model.weights, again.weights);
        let other = build_model(&arch, &Rng::new(78)).unwrap();
        assert_ne!(model.weights, other.weights);
    }

    #[test]
    fn config_validation_names_the_offending_block() {
        let mut arch = tiny_arch();
        arch.blocks[1].pool = (1, 100);
        let err = arch.validate().unwrap_err();
        match err {
            ModelError::Config { detail } => {
                assert!(detail.contains("block 2"), "{detail}")
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut even = tiny_arch();
        even.blocks[0].kernel = (2, 3);
        assert!(even.validate().is_err());
        let mut no_blocks = tiny_arch();
        no_blocks.blocks.clear();
        assert!(no_blocks.validate().is_err());
        let mlp = ArchConfig {
            kind: ArchKind::MlpBaseline,
            blocks: vec![],
            ..tiny_arch()
        };
        assert!(mlp.validate().is_ok());
    }

    #[test]
    fn assemble_rejects_bad_weight_tables() {
        let arch = tiny_arch();
        let model = build_model(&arch, &Rng::new(1)).unwrap();

        let mut missing = model.weights.clone();
        missing.remove("dense.b");
        assert!(matches!(
            TrainedModel::assemble(
                arch.clone(),
                model.channels.clone(),
                model.class_order.clone(),
                model.norm_stats.clone(),
                missing,
                ModelMeta::default()
            ),
            Err(ModelError::MissingWeight { .. })
        ));

        let mut reshaped = model.weights.clone();
        reshaped.insert("dense.b".into(), Tensor::zeros(&[7]));
        assert!(matches!(
            TrainedModel::assemble(
                arch.clone(),
                model.channels.clone(),
                model.class_order.clone(),
                model.norm_stats.clone(),
                reshaped,
                ModelMeta::default()
            ),
            Err(ModelError::WeightShape { .. })
        ));

        let mut extra = model.weights.clone();
        extra.insert("rogue.w".into(), Tensor::zeros(&[1]));
        assert!(matches!(
            TrainedModel::assemble(
                arch,
                model.channels,
                model.class_order,
                model.norm_stats,
                extra,
                ModelMeta::default()
            ),
            Err(ModelError::UnexpectedWeight { .. })
        ));
    }

    #[test]
    fn prepare_input_selects_and_normalizes() {
        let arch = ArchConfig {
            num_channels: 2,
            time_len: 4,
            ..tiny_arch()
        };
        let mut model = build_model(&arch, &Rng::new(3)).unwrap();
        model.channels = vec!["b".into(), "d".into()];
        model.norm_stats = vec![NormStat::new(1.0, 2.0), NormStat::new(0.0, 1.0)];
        // Input provides four channels; the model wants rows b and d.
        let channels: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let matrix = Tensor::new(
            vec![4, 4],
            vec![
                9.0, 9.0, 9.0, 9.0, // a
                1.0, 3.0, 5.0, 7.0, // b
                9.0, 9.0, 9.0, 9.0, // c
                0.5, 0.5, 0.5, 0.5, // d
            ],
        )
        .unwrap();
        let x = prepare_input(&model, &channels, &matrix).unwrap();
        assert_eq!(x.shape(), &[1, 2, 4]);
        let pe = pe_map(2, 4).unwrap();
        // Row 0: (v-1)/2 + pe; row 1: v + pe.
        assert!((x.at3(0, 0, 1) - (1.0 + pe.at2(0, 1))).abs() < 1e-15);
        assert!((x.at3(0, 1, 2) - (0.5 + pe.at2(1, 2))).abs() < 1e-15);

        let err = prepare_input(&model, &channels[..2].to_vec(), &random_matrix(&mut Rng::new(0), 2, 4))
            .unwrap_err();
        match err {
            ModelError::ChannelMismatch { missing, available } => {
                assert_eq!(missing, vec![String::from("d")]);
                assert_eq!(available, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pure_forward_matches_graph_forward_bitwise() {
        let arch = tiny_arch();
        let model = build_model(&arch, &Rng::new(5)).unwrap();
        let mut rng = Rng::new(6);
        for _ in 0..4 {
            let matrix = random_matrix(&mut rng, 4, 12);
            let pure = forward(&model, &model.channels.clone(), &matrix).unwrap();
            let trace = forward_trace(&model, &model.channels, &matrix, false, None).unwrap();
            let logits = trace.graph.value(trace.logits).unwrap();
            let probs = ops::softmax(logits).unwrap();
            let size = trace.graph.value(trace.size).unwrap().data()[0];
            for (a, b) in pure.class_probs.iter().zip(probs.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            assert_eq!(pure.size.to_bits(), size.to_bits());
        }
    }

    #[test]
    fn mlp_baseline_forwards_and_has_no_conv_node() {
        let arch = ArchConfig {
            kind: ArchKind::MlpBaseline,
            blocks: vec![],
            ..tiny_arch()
        };
        let model = build_model(&arch, &Rng::new(9)).unwrap();
        let matrix = random_matrix(&mut Rng::new(10), 4, 12);
        let pred = forward(&model, &model.channels.clone(), &matrix).unwrap();
        assert_eq!(pred.class_probs.len(), 2);
        assert!((pred.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let trace = forward_trace(&model, &model.channels, &matrix, false, None).unwrap();
        assert!(trace.last_conv.is_none());
    }

    /// With equal weight tables the full and plain variants must still
    /// disagree on outputs — the residual joins have to do something.
    #[test]
    fn plain_ablation_changes_outputs_under_shared_weights() {
        let arch = tiny_arch();
        let full = build_model(&arch, &Rng::new(21)).unwrap();
        let plain = TrainedModel::assemble(
            arch.plain_variant(),
            full.channels.clone(),
            full.class_order.clone(),
            full.norm_stats.clone(),
            full.weights.clone(),
            ModelMeta::default(),
        )
        .unwrap();
        let matrix = random_matrix(&mut Rng::new(22), 4, 12);
        let a = forward(&full, &full.channels.clone(), &matrix).unwrap();
        let b = forward(&plain, &plain.channels.clone(), &matrix).unwrap();
        assert_ne!(a.class_probs, b.class_probs);
        assert_ne!(a.size, b.size);
    }

    #[test]
    fn training_dropout_changes_the_trace() {
        let arch = tiny_arch();
        let model = build_model(&arch, &Rng::new(31)).unwrap();
        let matrix = random_matrix(&mut Rng::new(32), 4, 12);
        let infer = forward_trace(&model, &model.channels, &matrix, false, None).unwrap();
        let mut dropout_rng = Rng::new(33);
        let train = forward_trace(&model, &model.channels, &matrix, true, Some(&mut dropout_rng))
            .unwrap();
        let a = infer.graph.value(infer.logits).unwrap();
        let b = train.graph.value(train.logits).unwrap();
        assert_ne!(a, b, "dropout should perturb the training forward");
        // Training without a dropout stream is a config error.
        assert!(forward_trace(&model, &model.channels, &matrix, true, None).is_err());
    }

    #[test]
    fn regression_loss_matches_hand_example() {
        let l = loss_regression(&[0.5, 0.7], &[0.4, 0.9]).unwrap();
        assert!((l - 0.05).abs() < 1e-15);
        assert!(loss_regression(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn classification_loss_matches_hand_example() {
        // Logits (2, 1), true class 0: loss = -2 + lse(2,1) = ln(1 + e^-1).
        let logits = Tensor::new(vec![1, 2], vec![2.0, 1.0]).unwrap();
        let labels = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let l = loss_classification(&logits, &labels).unwrap();
        let expected = libm::log(1.0 + libm::exp(-1.0));
        assert!((l - expected).abs() < 1e-12, "{l} vs {expected}");
        assert!((l - 0.31326).abs() < 1e-5);

        // Batch of two sums the per-row terms.
        let logits2 = Tensor::new(vec![2, 2], vec![2.0, 1.0, 2.0, 1.0]).unwrap();
        let labels2 = Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let l2 = loss_classification(&logits2, &labels2).unwrap();
        assert!((l2 - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn classification_loss_rejects_non_onehot_rows() {
        let logits = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        for bad in [[0.5, 0.5], [1.0, 1.0], [0.0, 0.0]] {
            let labels = Tensor::new(vec![1, 2], bad.to_vec()).unwrap();
            assert!(matches!(
                loss_classification(&logits, &labels),
                Err(ModelError::NotOneHot { row: 0 })
            ));
        }
    }

    #[test]
    fn classification_loss_is_stable_for_huge_logits() {
        let logits = Tensor::new(vec![1, 2], vec![1000.0, -1000.0]).unwrap();
        let labels = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let l = loss_classification(&logits, &labels).unwrap();
        assert!(l.is_finite());
        assert!(l.abs() < 1e-12, "true-class logit dominating means ~0 loss");
    }

    #[test]
    fn total_loss_adds_components() {
        let cl = loss_classification(
            &Tensor::new(vec![1, 2], vec![2.0, 1.0]).unwrap(),
            &Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let re = loss_regression(&[0.5, 0.7], &[0.4, 0.9]).unwrap();
        let total = loss_total(cl, re);
        assert!((total - (cl + re)).abs() < 1e-15);
        assert!((total - 0.36326).abs() < 1e-4);
    }

    #[test]
    fn predicted_class_breaks_ties_low() {
        let p = Prediction {
            class_probs: vec![0.5, 0.5],
            size: 0.0,
        };
        assert_eq!(p.predicted_class(), 0);
        let q = Prediction {
            class_probs: vec![0.1, 0.6, 0.3],
            size: 0.0,
        };
        assert_eq!(q.predicted_class(), 1);
    }
}
