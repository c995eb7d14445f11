//! Per-case attribution artifacts: the class-discriminative saliency map
//! and the perturbation-surrogate explanation for one training case, stored
//! as `attr/case_NNNN.json` under the attribution directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use tres_core::interpret::{LimeExplanation, SaliencyMap, SaliencySource};
use tres_core::numerics::Tensor;

use crate::error::CliError;
use crate::jsonw::JsonWriter;

/// File name of a case's attribution record.
pub fn attr_file_name(case_id: usize) -> String {
    format!("case_{case_id:04}.json")
}

pub fn attr_dir(root: &Path) -> PathBuf {
    root.join("attr")
}

fn render_attribution(
    channels: &[String],
    map: &SaliencyMap,
    lime: &LimeExplanation,
) -> String {
    let mut w = JsonWriter::new();
    w.begin_object();
    w.key("case_id").usize(map.case_id);
    w.key("channels").begin_array();
    for name in channels {
        w.string(name);
    }
    w.end_array();
    w.key("grad_campp").begin_object();
    w.key("shape").begin_array();
    for &d in map.values.shape() {
        w.usize(d);
    }
    w.end_array();
    w.key("data").f64_array(map.values.data());
    w.end_object();
    w.key("lime").begin_object();
    w.key("intercept").f64(lime.intercept);
    w.key("r_squared").f64(lime.r_squared);
    w.key("n_perturb").usize(lime.n_perturb);
    w.key("weights").f64_array(&lime.weights);
    w.end_object();
    w.end_object();
    w.finish()
}

/// Writes one case's attribution record into `attr/` under `root`.
pub fn save_attribution(
    root: &Path,
    channels: &[String],
    map: &SaliencyMap,
    lime: &LimeExplanation,
) -> Result<(), CliError> {
    if map.case_id != lime.case_id {
        return Err(CliError::config(format!(
            "attribution pairs case {} with case {}",
            map.case_id, lime.case_id
        )));
    }
    let dir = attr_dir(root);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let path = dir.join(attr_file_name(map.case_id));
    fs::write(&path, render_attribution(channels, map, lime)).map_err(|e| CliError::io(&path, e))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapDoc {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LimeDoc {
    intercept: f64,
    r_squared: f64,
    n_perturb: usize,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttrDoc {
    case_id: usize,
    channels: Vec<String>,
    grad_campp: MapDoc,
    lime: LimeDoc,
}

/// Reads one case's attribution record, cross-checking it against the
/// channel list the caller is working with.
pub fn load_attribution(
    root: &Path,
    case_id: usize,
    expected_channels: &[String],
) -> Result<(SaliencyMap, LimeExplanation), CliError> {
    let path = attr_dir(root).join(attr_file_name(case_id));
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let doc: AttrDoc =
        serde_json::from_str(&text).map_err(|e| CliError::format(&path, e.to_string()))?;
    if doc.case_id != case_id {
        return Err(CliError::format(
            &path,
            format!("file for case {case_id} carries id {}", doc.case_id),
        ));
    }
    if doc.channels != expected_channels {
        return Err(CliError::format(
            &path,
            "channel list disagrees with the model checkpoint".to_string(),
        ));
    }
    let p = expected_channels.len();
    if doc.grad_campp.shape.len() != 2 || doc.grad_campp.shape[0] != p {
        return Err(CliError::format(
            &path,
            format!(
                "map shaped {:?} for {p} channels",
                doc.grad_campp.shape
            ),
        ));
    }
    if doc.lime.weights.len() != p {
        return Err(CliError::format(
            &path,
            format!("{} surrogate weights for {p} channels", doc.lime.weights.len()),
        ));
    }
    let values = Tensor::new(doc.grad_campp.shape, doc.grad_campp.data)
        .map_err(|e| CliError::format(&path, e.to_string()))?;
    let map = SaliencyMap {
        case_id,
        values,
        source: SaliencySource::GradCampp,
    };
    let lime = LimeExplanation {
        case_id,
        weights: doc.lime.weights,
        intercept: doc.lime.intercept,
        r_squared: doc.lime.r_squared,
        n_perturb: doc.lime.n_perturb,
    };
    Ok((map, lime))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vec<String>, SaliencyMap, LimeExplanation) {
        let channels = vec!["a".to_string(), "b".to_string()];
        let map = SaliencyMap {
            case_id: 7,
            values: Tensor::new(vec![2, 3], vec![0.0, 0.5, 1.0, 0.25, 0.0, 0.125]).unwrap(),
            source: SaliencySource::GradCampp,
        };
        let lime = LimeExplanation {
            case_id: 7,
            weights: vec![0.8, -0.1],
            intercept: 0.4,
            r_squared: 0.93,
            n_perturb: 64,
        };
        (channels, map, lime)
    }

    #[test]
    fn attribution_round_trips() {
        let (channels, map, lime) = sample();
        let dir = tempfile::tempdir().unwrap();
        save_attribution(dir.path(), &channels, &map, &lime).unwrap();
        let (m2, l2) = load_attribution(dir.path(), 7, &channels).unwrap();
        assert_eq!(m2.values, map.values);
        assert_eq!(m2.case_id, 7);
        assert_eq!(l2, lime);
    }

    #[test]
    fn channel_drift_is_rejected() {
        let (channels, map, lime) = sample();
        let dir = tempfile::tempdir().unwrap();
        save_attribution(dir.path(), &channels, &map, &lime).unwrap();
        let other = vec!["a".to_string(), "z".to_string()];
        assert!(load_attribution(dir.path(), 7, &other).is_err());
    }

    #[test]
    fn mismatched_pair_is_refused_at_save() {
        let (channels, map, mut lime) = sample();
        lime.case_id = 8;
        let dir = tempfile::tempdir().unwrap();
        assert!(save_attribution(dir.path(), &channels, &map, &lime).is_err());
    }
}
