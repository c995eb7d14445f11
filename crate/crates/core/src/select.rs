//! Parameter significance: superimpose per-case attribution maps over the
//! training split, reduce each case's map to one score per channel, clean
//! the per-channel score distributions with the 1.5×IQR fence, and keep the
//! top-k channels.
//!
//! Everything here is a pure function of its inputs; reductions run in a
//! canonical case order so the output is bit-for-bit independent of how the
//! caller ordered the cases.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::interpret::{lime_broadcast_map, LimeExplanation, SaliencyMap};
use crate::numerics::Tensor;

use core::fmt;

/// Errors from attribution aggregation and ranking.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectError {
    /// The map and the surrogate explanation describe different cases.
    CaseMismatch { map_case: usize, lime_case: usize },
    EmptyInput,
    /// A case's map shape disagrees with the first case.
    ShapeMismatch {
        case_id: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// A channel's score row has the wrong number of case samples.
    LengthMismatch {
        channel: usize,
        expected: usize,
        got: usize,
    },
    Config { detail: String },
    NonFinite { what: String },
}

impl fmt::Display for SelectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectError::CaseMismatch { map_case, lime_case } => write!(
                f,
                "attribution case mismatch: map is case {map_case}, surrogate is case {lime_case}"
            ),
            SelectError::EmptyInput => write!(f, "no cases to aggregate"),
            SelectError::ShapeMismatch {
                case_id,
                expected,
                got,
            } => write!(
                f,
                "case {case_id} has map shape {got:?}, expected {expected:?}"
            ),
            SelectError::LengthMismatch {
                channel,
                expected,
                got,
            } => write!(
                f,
                "channel {channel} has {got} score samples, expected {expected}"
            ),
            SelectError::Config { detail } => write!(f, "invalid selection config: {detail}"),
            SelectError::NonFinite { what } => write!(f, "non-finite value in {what}"),
        }
    }
}

impl core::error::Error for SelectError {}

/// One case's merged attribution: the equal-weight blend of its two
/// (already max-normalized) maps, plus the per-channel time sums that act
/// as this case's significance sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseAttribution {
    pub case_id: usize,
    /// `P×T`, `0.5·activation_map + 0.5·broadcast_surrogate_map`.
    pub values: Tensor,
    /// Per-channel sum of `values` over the time axis.
    pub scores: Vec<f64>,
}

/// The superposition of many per-case maps.
#[derive(Debug, Clone, PartialEq)]
pub struct LumpedSaliency {
    /// `P×T` elementwise sum over cases.
    pub values: Tensor,
    pub case_count: usize,
}

/// Outcome of the 1.5×IQR fence on one sample vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSamples {
    /// Samples inside the fence, in their original order.
    pub retained: Vec<f64>,
    /// Indices (into the input) of the removed samples.
    pub removed_indices: Vec<usize>,
    /// True when fewer than four samples made fencing meaningless; the
    /// input is passed through unfiltered.
    pub insufficient: bool,
}

/// Full ranking output: scores, the distributions behind them, and the
/// selected channel set.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceRanking {
    /// Per-channel significance: sum of that channel's retained samples.
    pub scores: Vec<f64>,
    /// Per-channel retained samples (violin data), original case order.
    pub retained: Vec<Vec<f64>>,
    /// Per-channel count of fenced-out samples.
    pub removed_counts: Vec<usize>,
    /// True when the sample count was too small to fence.
    pub insufficient: bool,
    /// All channels, most significant first; ties broken by lower index.
    pub ranked: Vec<usize>,
    /// The first `k` of `ranked`.
    pub selected: Vec<usize>,
    pub k: usize,
}

/// Blends one case's two attribution maps with equal weight and reduces to
/// per-channel scores by summing each row over time.
pub fn combine_case_attribution(
    map: &SaliencyMap,
    lime: &LimeExplanation,
) -> Result<CaseAttribution, SelectError> {
    if map.case_id != lime.case_id {
        return Err(SelectError::CaseMismatch {
            map_case: map.case_id,
            lime_case: lime.case_id,
        });
    }
    if map.values.rank() != 2 {
        return Err(SelectError::Config {
            detail: format!("map for case {} is not a matrix", map.case_id),
        });
    }
    let (p, t_len) = (map.values.dim(0), map.values.dim(1));
    if lime.weights.len() != p {
        return Err(SelectError::Config {
            detail: format!(
                "case {}: {} surrogate weights for {} channels",
                map.case_id,
                lime.weights.len(),
                p
            ),
        });
    }
    let broadcast = lime_broadcast_map(lime, t_len);
    let mut values = Tensor::zeros(&[p, t_len]);
    {
        let out = values.data_mut();
        for ((slot, &a), &b) in out
            .iter_mut()
            .zip(map.values.data())
            .zip(broadcast.values.data())
        {
            *slot = 0.5 * a + 0.5 * b;
        }
    }
    if !values.all_finite() {
        return Err(SelectError::NonFinite {
            what: format!("combined map for case {}", map.case_id),
        });
    }
    let data = values.data();
    let scores = (0..p)
        .map(|row| data[row * t_len..(row + 1) * t_len].iter().sum())
        .collect();
    Ok(CaseAttribution {
        case_id: map.case_id,
        values,
        scores,
    })
}

/// Elementwise sum of per-case maps. The reduction runs in ascending
/// `case_id` order regardless of input order, so the result is bitwise
/// order-independent.
pub fn aggregate(cases: &[CaseAttribution]) -> Result<LumpedSaliency, SelectError> {
    if cases.is_empty() {
        return Err(SelectError::EmptyInput);
    }
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.sort_by_key(|&i| (cases[i].case_id, i));
    let expected = cases[order[0]].values.shape().to_vec();
    let mut values = Tensor::zeros(&expected);
    for &i in &order {
        let case = &cases[i];
        if case.values.shape() != expected.as_slice() {
            return Err(SelectError::ShapeMismatch {
                case_id: case.case_id,
                expected,
                got: case.values.shape().to_vec(),
            });
        }
        for (slot, &v) in values.data_mut().iter_mut().zip(case.values.data()) {
            *slot += v;
        }
    }
    Ok(LumpedSaliency {
        values,
        case_count: cases.len(),
    })
}

/// Median of a sorted slice by linear interpolation.
fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Tukey hinges of a sorted slice: medians of the lower and upper halves,
/// where an odd-length sample includes its median in both halves.
/// `[1,2,3,4,100]` gives hinges `(2, 4)`.
fn tukey_hinges(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let half = n / 2;
    let lower = if n % 2 == 1 {
        &sorted[..half + 1]
    } else {
        &sorted[..half]
    };
    let upper = &sorted[n - lower.len()..];
    (median_sorted(lower), median_sorted(upper))
}

/// Keeps samples within `[Q1 − 1.5·IQR, Q3 + 1.5·IQR]` with quartiles taken
/// as Tukey hinges. Fewer than four samples pass through unfiltered with
/// the `insufficient` flag raised.
pub fn remove_outliers_iqr(samples: &[f64]) -> FilteredSamples {
    if samples.len() < 4 {
        return FilteredSamples {
            retained: samples.to_vec(),
            removed_indices: Vec::new(),
            insufficient: true,
        };
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let (q1, q3) = tukey_hinges(&sorted);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let mut retained = Vec::with_capacity(samples.len());
    let mut removed_indices = Vec::new();
    for (i, &x) in samples.iter().enumerate() {
        if (lo..=hi).contains(&x) {
            retained.push(x);
        } else {
            removed_indices.push(i);
        }
    }
    FilteredSamples {
        retained,
        removed_indices,
        insufficient: false,
    }
}

/// Fences each channel's case-score samples, sums the survivors into one
/// significance score per channel, and ranks. `case_scores[p]` holds channel
/// `p`'s score across the training cases; every row must be equally long.
pub fn rank_and_select(
    case_scores: &[Vec<f64>],
    k: usize,
) -> Result<SignificanceRanking, SelectError> {
    let p = case_scores.len();
    if p == 0 {
        return Err(SelectError::EmptyInput);
    }
    if k == 0 {
        return Err(SelectError::Config {
            detail: "k must be positive".into(),
        });
    }
    if k > p {
        return Err(SelectError::Config {
            detail: format!("k {k} exceeds channel count {p}"),
        });
    }
    let n = case_scores[0].len();
    if n == 0 {
        return Err(SelectError::EmptyInput);
    }
    for (channel, row) in case_scores.iter().enumerate() {
        if row.len() != n {
            return Err(SelectError::LengthMismatch {
                channel,
                expected: n,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(SelectError::NonFinite {
                what: format!("score samples for channel {channel}"),
            });
        }
    }

    let mut scores: Vec<f64> = Vec::with_capacity(p);
    let mut retained = Vec::with_capacity(p);
    let mut removed_counts = Vec::with_capacity(p);
    let mut insufficient = false;
    for row in case_scores {
        let filtered = remove_outliers_iqr(row);
        insufficient |= filtered.insufficient;
        scores.push(filtered.retained.iter().sum());
        removed_counts.push(filtered.removed_indices.len());
        retained.push(filtered.retained);
    }

    let mut ranked: Vec<usize> = (0..p).collect();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores validated finite")
            .then(a.cmp(&b))
    });
    let selected = ranked[..k].to_vec();
    Ok(SignificanceRanking {
        scores,
        retained,
        removed_counts,
        insufficient,
        ranked,
        selected,
        k,
    })
}
