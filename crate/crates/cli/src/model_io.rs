//! Model checkpoints: one JSON file carrying the architecture, channel
//! list, class order, normalization statistics, metadata, and every named
//! weight tensor at full precision. A loaded checkpoint predicts bitwise
//! identically to the model that was saved.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use tres_core::model::{
    ArchConfig, ArchKind, BlockSpec, ModelMeta, NormStat, TrainedModel,
};
use tres_core::numerics::Tensor;

use crate::error::CliError;
use crate::jsonw::JsonWriter;

fn render_model(model: &TrainedModel) -> String {
    let mut w = JsonWriter::new();
    w.begin_object();

    let arch = &model.arch;
    w.key("arch").begin_object();
    w.key("kind").string(arch.kind.as_str());
    w.key("blocks").begin_array();
    for b in &arch.blocks {
        w.begin_object();
        w.key("filters").usize(b.filters);
        w.key("kernel").begin_array();
        w.usize(b.kernel.0);
        w.usize(b.kernel.1);
        w.end_array();
        w.key("pool").begin_array();
        w.usize(b.pool.0);
        w.usize(b.pool.1);
        w.end_array();
        w.end_object();
    }
    w.end_array();
    w.key("dense_width").usize(arch.dense_width);
    w.key("dropout_rate").f64(arch.dropout_rate);
    w.key("num_classes").usize(arch.num_classes);
    w.key("num_channels").usize(arch.num_channels);
    w.key("time_len").usize(arch.time_len);
    w.end_object();

    w.key("channels").begin_array();
    for name in &model.channels {
        w.string(name);
    }
    w.end_array();

    w.key("class_order").begin_array();
    for name in &model.class_order {
        w.string(name);
    }
    w.end_array();

    w.key("norm_stats").begin_array();
    for stat in &model.norm_stats {
        w.begin_object();
        w.key("mean").f64(stat.mean);
        w.key("std").f64(stat.std);
        w.end_object();
    }
    w.end_array();

    w.key("meta").begin_object();
    w.key("train_seed").u64(model.meta.train_seed);
    w.key("iterations").usize(model.meta.iterations);
    w.key("dataset_fingerprint").u64(model.meta.dataset_fingerprint);
    w.end_object();

    // BTreeMap iteration is name-sorted, so the byte layout is stable.
    w.key("weights").begin_object();
    for (name, tensor) in &model.weights {
        w.key(name).begin_object();
        w.key("shape").begin_array();
        for &d in tensor.shape() {
            w.usize(d);
        }
        w.end_array();
        w.key("data").f64_array(tensor.data());
        w.end_object();
    }
    w.end_object();

    w.end_object();
    w.finish()
}

/// Writes a checkpoint. The rendering is deterministic: the same model
/// produces the same bytes.
pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), CliError> {
    fs::write(path, render_model(model)).map_err(|e| CliError::io(path, e))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    filters: usize,
    kernel: (usize, usize),
    pool: (usize, usize),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchDoc {
    kind: String,
    blocks: Vec<BlockDoc>,
    dense_width: usize,
    dropout_rate: f64,
    num_classes: usize,
    num_channels: usize,
    time_len: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NormStatDoc {
    mean: f64,
    std: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaDoc {
    train_seed: u64,
    iterations: usize,
    dataset_fingerprint: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDoc {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    arch: ArchDoc,
    channels: Vec<String>,
    class_order: Vec<String>,
    norm_stats: Vec<NormStatDoc>,
    meta: MetaDoc,
    weights: BTreeMap<String, TensorDoc>,
}

/// Reads a checkpoint back. All cross-field invariants are re-validated by
/// the model constructor, so a hand-edited file cannot produce a model the
/// trainer could not have built.
pub fn load_model(path: &Path) -> Result<TrainedModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: ModelDoc =
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;

    let kind = ArchKind::from_str(&doc.arch.kind)
        .ok_or_else(|| CliError::format(path, format!("unknown model kind '{}'", doc.arch.kind)))?;
    let arch = ArchConfig {
        kind,
        blocks: doc
            .arch
            .blocks
            .iter()
            .map(|b| BlockSpec {
                filters: b.filters,
                kernel: b.kernel,
                pool: b.pool,
            })
            .collect(),
        dense_width: doc.arch.dense_width,
        dropout_rate: doc.arch.dropout_rate,
        num_classes: doc.arch.num_classes,
        num_channels: doc.arch.num_channels,
        time_len: doc.arch.time_len,
    };

    let mut weights = BTreeMap::new();
    for (name, t) in doc.weights {
        let tensor = Tensor::new(t.shape, t.data).map_err(|e| {
            CliError::format(path, format!("weight '{name}': {e}"))
        })?;
        weights.insert(name, tensor);
    }

    // Stored statistics are used verbatim; NormStat::new would silently
    // floor a tampered std, so only finiteness is left to the constructor.
    let norm_stats: Vec<NormStat> = doc
        .norm_stats
        .iter()
        .map(|s| NormStat::new(s.mean, s.std))
        .collect();

    let meta = ModelMeta {
        train_seed: doc.meta.train_seed,
        iterations: doc.meta.iterations,
        dataset_fingerprint: doc.meta.dataset_fingerprint,
    };

    TrainedModel::assemble(arch, doc.channels, doc.class_order, norm_stats, weights, meta)
        .map_err(|e| CliError::format(path, e.to_string()))
}
