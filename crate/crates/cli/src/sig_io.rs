//! Significance-ranking artifacts: the machine-readable ranking
//! (`significance.json`), the case-lumped saliency map
//! (`lumped_saliency.csv`), and the selected-channel list
//! (`selected_channels.txt`) that feeds the retraining stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use tres_core::select::{LumpedSaliency, SignificanceRanking};

use crate::error::CliError;
use crate::jsonw::{fmt17, JsonWriter};

pub fn significance_path(root: &Path) -> PathBuf {
    root.join("significance.json")
}

pub fn lumped_path(root: &Path) -> PathBuf {
    root.join("lumped_saliency.csv")
}

pub fn selected_path(root: &Path) -> PathBuf {
    root.join("selected_channels.txt")
}

fn render_significance(
    ranking: &SignificanceRanking,
    channels: &[String],
    case_count: usize,
) -> String {
    let mut w = JsonWriter::new();
    w.begin_object();
    w.key("k").usize(ranking.k);
    w.key("case_count").usize(case_count);
    w.key("insufficient_samples").bool(ranking.insufficient);

    // Catalog order: one record per channel with its score and the retained
    // sample distribution behind it.
    w.key("channels").begin_array();
    for (idx, name) in channels.iter().enumerate() {
        w.begin_object();
        w.key("name").string(name);
        w.key("score").f64(ranking.scores[idx]);
        w.key("removed_count").usize(ranking.removed_counts[idx]);
        w.key("retained").f64_array(&ranking.retained[idx]);
        w.end_object();
    }
    w.end_array();

    w.key("ranked").begin_array();
    for &idx in &ranking.ranked {
        w.string(&channels[idx]);
    }
    w.end_array();

    w.key("selected").begin_array();
    for &idx in &ranking.selected {
        w.string(&channels[idx]);
    }
    w.end_array();

    w.end_object();
    w.finish()
}

/// Writes all three ranking artifacts under `root`.
pub fn save_significance(
    root: &Path,
    ranking: &SignificanceRanking,
    lumped: &LumpedSaliency,
    channels: &[String],
) -> Result<(), CliError> {
    let p = channels.len();
    if ranking.scores.len() != p {
        return Err(CliError::config(format!(
            "ranking covers {} channels, catalog has {p}",
            ranking.scores.len()
        )));
    }
    if lumped.values.rank() != 2 || lumped.values.dim(0) != p {
        return Err(CliError::config(format!(
            "lumped map shaped {:?} for {p} channels",
            lumped.values.shape()
        )));
    }
    fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;

    let sig = significance_path(root);
    fs::write(&sig, render_significance(ranking, channels, lumped.case_count))
        .map_err(|e| CliError::io(&sig, e))?;

    // Case-mean map, one CSV row per channel.
    let t_len = lumped.values.dim(1);
    let mut csv = String::with_capacity(p * t_len * 26);
    csv.push_str("channel");
    for t in 0..t_len {
        csv.push_str(&format!(",{t}"));
    }
    csv.push('\n');
    let data = lumped.values.data();
    let scale = 1.0 / lumped.case_count as f64;
    for (idx, name) in channels.iter().enumerate() {
        csv.push_str(name);
        for t in 0..t_len {
            csv.push(',');
            csv.push_str(&fmt17(data[idx * t_len + t] * scale));
        }
        csv.push('\n');
    }
    let lp = lumped_path(root);
    fs::write(&lp, csv).map_err(|e| CliError::io(&lp, e))?;

    let mut txt = String::new();
    for &idx in &ranking.selected {
        txt.push_str(&channels[idx]);
        txt.push('\n');
    }
    let sp = selected_path(root);
    fs::write(&sp, txt).map_err(|e| CliError::io(&sp, e))?;
    Ok(())
}

/// Reads a channel list file: one name per line, blank lines ignored.
pub fn load_channel_list(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(CliError::format(path, "no channel names".to_string()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for name in &names {
        if !seen.insert(name.as_str()) {
            return Err(CliError::format(path, format!("duplicate channel '{name}'")));
        }
    }
    Ok(names)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelRecordDoc {
    name: String,
    score: f64,
    removed_count: usize,
    retained: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SignificanceDoc {
    k: usize,
    case_count: usize,
    insufficient_samples: bool,
    channels: Vec<ChannelRecordDoc>,
    ranked: Vec<String>,
    selected: Vec<String>,
}

/// The ranking facts the reporting stage needs.
pub struct SignificanceInfo {
    pub k: usize,
    pub case_count: usize,
    pub insufficient: bool,
    /// (name, score) in catalog order.
    pub scores: Vec<(String, f64)>,
    pub ranked: Vec<String>,
    pub selected: Vec<String>,
}

pub fn load_significance(root: &Path) -> Result<SignificanceInfo, CliError> {
    let path = significance_path(root);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let doc: SignificanceDoc =
        serde_json::from_str(&text).map_err(|e| CliError::format(&path, e.to_string()))?;
    if doc.selected.len() != doc.k || doc.ranked.len() != doc.channels.len() {
        return Err(CliError::format(
            &path,
            "ranking lengths are internally inconsistent".to_string(),
        ));
    }
    for c in &doc.channels {
        // The score is definitionally the sum of the retained samples, in
        // their stored order; both survive the file bitwise, so this holds
        // exactly unless the file was edited.
        if c.score != c.retained.iter().sum::<f64>() {
            return Err(CliError::format(
                &path,
                format!("channel '{}': score disagrees with its samples", c.name),
            ));
        }
        if doc.insufficient_samples as usize * c.removed_count != 0 {
            return Err(CliError::format(
                &path,
                format!(
                    "channel '{}' fenced {} samples in an unfenced ranking",
                    c.name, c.removed_count
                ),
            ));
        }
    }
    Ok(SignificanceInfo {
        k: doc.k,
        case_count: doc.case_count,
        insufficient: doc.insufficient_samples,
        scores: doc.channels.iter().map(|c| (c.name.clone(), c.score)).collect(),
        ranked: doc.ranked,
        selected: doc.selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tres_core::numerics::Tensor;
    use tres_core::select::rank_and_select;

    fn fixture() -> (SignificanceRanking, LumpedSaliency, Vec<String>) {
        // Three channels, five cases; channel 1 dominates.
        let case_scores = vec![
            vec![1.0, 1.1, 0.9, 1.0, 1.05],
            vec![5.0, 5.2, 4.8, 5.1, 4.9],
            vec![2.0, 2.1, 1.9, 2.0, 40.0],
        ];
        let ranking = rank_and_select(&case_scores, 2).unwrap();
        let lumped = LumpedSaliency {
            values: Tensor::new(vec![3, 4], (0..12).map(|v| v as f64).collect()).unwrap(),
            case_count: 5,
        };
        let channels = vec!["alpha".to_string(), "beta".to_string(), "gamma".to_string()];
        (ranking, lumped, channels)
    }

    #[test]
    fn artifacts_round_trip_and_agree() {
        let (ranking, lumped, channels) = fixture();
        let dir = tempfile::tempdir().unwrap();
        save_significance(dir.path(), &ranking, &lumped, &channels).unwrap();

        let info = load_significance(dir.path()).unwrap();
        assert_eq!(info.k, 2);
        assert_eq!(info.case_count, 5);
        assert_eq!(info.ranked[0], "beta");
        assert_eq!(info.selected.len(), 2);
        assert!(!info.insufficient);

        let listed = load_channel_list(&selected_path(dir.path())).unwrap();
        assert_eq!(listed, info.selected);

        let csv = fs::read_to_string(lumped_path(dir.path())).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "channel,0,1,2,3");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "alpha");
        // Mean of the sum: 1.0 / 5 cases.
        assert_eq!(first[2].parse::<f64>().unwrap(), 1.0 / 5.0);
    }

    #[test]
    fn channel_lists_reject_duplicates_and_empties() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("list.txt");
        fs::write(&path, "a\nb\na\n").unwrap();
        assert!(load_channel_list(&path).is_err());
        fs::write(&path, "\n\n").unwrap();
        assert!(load_channel_list(&path).is_err());
        fs::write(&path, " a \nb\n").unwrap();
        assert_eq!(load_channel_list(&path).unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn mismatched_shapes_are_refused() {
        let (ranking, lumped, mut channels) = fixture();
        channels.pop();
        let dir = tempfile::tempdir().unwrap();
        assert!(save_significance(dir.path(), &ranking, &lumped, &channels).is_err());
    }
}
