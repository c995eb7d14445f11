//! Shared test fixtures: hand-assembled models with provable
//! attribution behavior.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{ArchConfig, ArchKind, BlockSpec, ModelMeta, NormStat, TrainedModel};
use crate::numerics::{Rng, Tensor};

/// A model whose trunk suppresses every channel row except `live_row`
/// (their normalization statistics saturate them negative, so the first
/// relu silences them) and whose heads read exactly that row's time mean.
/// Inputs are expected positive on the live row.
pub fn passthrough_model(p: usize, t_len: usize, live_row: usize) -> TrainedModel {
    let arch = ArchConfig {
        kind: ArchKind::TresCnn,
        blocks: vec![BlockSpec {
            filters: 1,
            kernel: (1, 1),
            pool: (1, 1),
        }],
        dense_width: 1,
        dropout_rate: 0.0,
        num_classes: 2,
        num_channels: p,
        time_len: t_len,
    };
    let mut weights = BTreeMap::new();
    weights.insert("block1.conv1.w".into(), Tensor::filled(&[1, 1, 1, 1], 1.0));
    weights.insert("block1.conv1.b".into(), Tensor::zeros(&[1]));
    weights.insert("block1.conv2.w".into(), Tensor::filled(&[1, 1, 1, 1], 1.0));
    weights.insert("block1.conv2.b".into(), Tensor::zeros(&[1]));
    let mut dense_w = Tensor::zeros(&[1, p]);
    dense_w.data_mut()[live_row] = 1.0;
    weights.insert("dense.w".into(), dense_w);
    weights.insert("dense.b".into(), Tensor::zeros(&[1]));
    weights.insert(
        "head_class.w".into(),
        Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap(),
    );
    weights.insert("head_class.b".into(), Tensor::zeros(&[2]));
    weights.insert("head_size.w".into(), Tensor::filled(&[1, 1], 1.0));
    weights.insert("head_size.b".into(), Tensor::zeros(&[1]));
    let mut norm_stats = vec![NormStat::new(1e6, 1.0); p];
    norm_stats[live_row] = NormStat::identity();
    let channels = (0..p).map(|i| format!("ch_{i:02}")).collect::<Vec<_>>();
    TrainedModel::assemble(
        arch,
        channels,
        vec!["cold_leg".into(), "hot_leg".into()],
        norm_stats,
        weights,
        ModelMeta::default(),
    )
    .unwrap()
}

/// A `P×T` matrix of draws from `uniform(0.5, 3.0)`.
pub fn positive_matrix(rng: &mut Rng, p: usize, t_len: usize) -> Tensor {
    Tensor::new(
        vec![p, t_len],
        (0..p * t_len).map(|_| rng.uniform(0.5, 3.0)).collect(),
    )
    .unwrap()
}
