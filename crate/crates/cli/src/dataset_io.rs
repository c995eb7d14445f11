//! Dataset directory format: `manifest.json` (provenance, catalog, split,
//! labels) plus one CSV per case under `cases/`, every float printed with
//! 17 significant digits so a load reproduces the generated values bitwise.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use tres_core::datagen::{
    channel_catalog, dataset_fingerprint, BreakLocation, BreakSpec, CatalogConfig, Dataset,
    GeneratorConfig, KindCounts, Split, TransientCase,
};
use tres_core::numerics::Tensor;

use crate::error::CliError;
use crate::jsonw::{fmt17, JsonWriter};

/// File name of a case by id: `case_0007.csv`.
pub fn case_file_name(case_id: usize) -> String {
    format!("case_{case_id:04}.csv")
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn cases_dir(dir: &Path) -> PathBuf {
    dir.join("cases")
}

/// Refuses to write into a non-empty target unless `force` is set.
pub fn guard_output_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(CliError::config(format!(
                "output directory {} is not empty (pass --force to overwrite)",
                dir.display()
            )));
        }
    }
    Ok(())
}

fn render_manifest(ds: &Dataset) -> String {
    let mut w = JsonWriter::new();
    w.begin_object();
    w.key("master_seed").u64(ds.master_seed);
    w.key("fingerprint").u64(ds.fingerprint());

    w.key("config").begin_object();
    w.key("num_cases").usize(ds.config.num_cases);
    w.key("train_cases").usize(ds.config.train_cases);
    w.key("duration_s").f64(ds.config.duration_s);
    w.key("sample_hz").f64(ds.config.sample_hz);
    w.key("noise_frac").f64(ds.config.noise_frac);
    w.key("diameter_range").begin_array();
    w.f64(ds.config.diameter_range.0);
    w.f64(ds.config.diameter_range.1);
    w.end_array();
    w.key("catalog_counts").begin_object();
    for (name, counts) in [
        ("pressures", ds.config.catalog.pressures),
        ("temperatures", ds.config.catalog.temperatures),
        ("pumps", ds.config.catalog.pumps),
        ("voids", ds.config.catalog.voids),
        ("levels", ds.config.catalog.levels),
        ("flows", ds.config.catalog.flows),
        ("controls", ds.config.catalog.controls),
    ] {
        w.key(name).begin_object();
        w.key("informative").usize(counts.informative);
        w.key("decoys").usize(counts.decoys);
        w.end_object();
    }
    w.end_object();
    w.end_object();

    w.key("catalog").begin_array();
    for spec in &ds.catalog {
        w.begin_object();
        w.key("name").string(&spec.name);
        w.key("kind").string(spec.kind.as_str());
        w.key("informative").bool(spec.informative);
        w.end_object();
    }
    w.end_array();

    w.key("split").begin_object();
    w.key("train").begin_array();
    for id in ds.train_ids() {
        w.usize(id);
    }
    w.end_array();
    w.key("test").begin_array();
    for id in ds.test_ids() {
        w.usize(id);
    }
    w.end_array();
    w.end_object();

    w.key("cases").begin_array();
    for case in &ds.cases {
        w.begin_object();
        w.key("case_id").usize(case.case_id);
        w.key("seed").u64(case.seed);
        w.key("location").string(case.label.location.as_str());
        w.key("diameter").f64(case.label.diameter);
        w.end_object();
    }
    w.end_array();

    w.end_object();
    w.finish()
}

fn render_case_csv(case: &TransientCase, names: &[String], times: &[f64]) -> String {
    let t_len = times.len();
    let mut out = String::with_capacity(t_len * names.len() * 26);
    out.push_str("time");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let data = case.channels.data();
    for (row, &t) in times.iter().enumerate() {
        out.push_str(&fmt17(t));
        for ch in 0..names.len() {
            out.push(',');
            out.push_str(&fmt17(data[ch * t_len + row]));
        }
        out.push('\n');
    }
    out
}

/// Writes the full dataset directory. With `force`, existing content is
/// replaced.
pub fn save_dataset(ds: &Dataset, dir: &Path, force: bool) -> Result<(), CliError> {
    guard_output_dir(dir, force)?;
    let cases = cases_dir(dir);
    if force && cases.exists() {
        fs::remove_dir_all(&cases).map_err(|e| CliError::io(&cases, e))?;
    }
    fs::create_dir_all(&cases).map_err(|e| CliError::io(&cases, e))?;

    let manifest = manifest_path(dir);
    fs::write(&manifest, render_manifest(ds)).map_err(|e| CliError::io(&manifest, e))?;

    let names = ds.channel_names();
    let times = ds.times();
    for case in &ds.cases {
        let path = cases.join(case_file_name(case.case_id));
        fs::write(&path, render_case_csv(case, &names, &times))
            .map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KindCountsDoc {
    informative: usize,
    decoys: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogCountsDoc {
    pressures: KindCountsDoc,
    temperatures: KindCountsDoc,
    pumps: KindCountsDoc,
    voids: KindCountsDoc,
    levels: KindCountsDoc,
    flows: KindCountsDoc,
    controls: KindCountsDoc,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    num_cases: usize,
    train_cases: usize,
    duration_s: f64,
    sample_hz: f64,
    noise_frac: f64,
    diameter_range: (f64, f64),
    catalog_counts: CatalogCountsDoc,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogEntryDoc {
    name: String,
    kind: String,
    informative: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitDoc {
    train: Vec<usize>,
    test: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseMetaDoc {
    case_id: usize,
    seed: u64,
    location: String,
    diameter: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    master_seed: u64,
    fingerprint: u64,
    config: ConfigDoc,
    catalog: Vec<CatalogEntryDoc>,
    split: SplitDoc,
    cases: Vec<CaseMetaDoc>,
}

impl CatalogCountsDoc {
    fn to_config(&self) -> CatalogConfig {
        let kc = |d: &KindCountsDoc| KindCounts {
            informative: d.informative,
            decoys: d.decoys,
        };
        CatalogConfig {
            pressures: kc(&self.pressures),
            temperatures: kc(&self.temperatures),
            pumps: kc(&self.pumps),
            voids: kc(&self.voids),
            levels: kc(&self.levels),
            flows: kc(&self.flows),
            controls: kc(&self.controls),
        }
    }
}

/// The manifest's catalog and labels, without the case matrices. Enough for
/// reporting (informative flags, split, fingerprint).
pub struct ManifestInfo {
    pub master_seed: u64,
    pub fingerprint: u64,
    pub config: GeneratorConfig,
    pub channel_names: Vec<String>,
    pub informative: Vec<bool>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub labels: Vec<BreakSpec>,
    pub case_seeds: Vec<u64>,
}

/// Reads and cross-validates `manifest.json`.
pub fn load_manifest(dir: &Path) -> Result<ManifestInfo, CliError> {
    let path = manifest_path(dir);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let doc: ManifestDoc =
        serde_json::from_str(&text).map_err(|e| CliError::format(&path, e.to_string()))?;

    let config = GeneratorConfig {
        catalog: doc.config.catalog_counts.to_config(),
        num_cases: doc.config.num_cases,
        train_cases: doc.config.train_cases,
        duration_s: doc.config.duration_s,
        sample_hz: doc.config.sample_hz,
        noise_frac: doc.config.noise_frac,
        diameter_range: doc.config.diameter_range,
    };
    config.validate()?;

    // The catalog is a pure function of its counts; rebuild and cross-check
    // against the listing so a hand-edited manifest cannot drift silently.
    let rebuilt = channel_catalog(&config.catalog)?;
    if rebuilt.len() != doc.catalog.len() {
        return Err(CliError::format(
            &path,
            format!(
                "catalog lists {} channels, counts imply {}",
                doc.catalog.len(),
                rebuilt.len()
            ),
        ));
    }
    for (spec, entry) in rebuilt.iter().zip(&doc.catalog) {
        if spec.name != entry.name
            || spec.kind.as_str() != entry.kind
            || spec.informative != entry.informative
        {
            return Err(CliError::format(
                &path,
                format!("catalog entry '{}' disagrees with the generator", entry.name),
            ));
        }
    }

    if doc.cases.len() != config.num_cases {
        return Err(CliError::format(
            &path,
            format!(
                "{} case records for num_cases {}",
                doc.cases.len(),
                config.num_cases
            ),
        ));
    }
    let mut labels = Vec::with_capacity(doc.cases.len());
    let mut case_seeds = Vec::with_capacity(doc.cases.len());
    for (i, case) in doc.cases.iter().enumerate() {
        if case.case_id != i {
            return Err(CliError::format(
                &path,
                format!("case record {i} carries id {}", case.case_id),
            ));
        }
        let location = BreakLocation::from_str(&case.location).ok_or_else(|| {
            CliError::format(&path, format!("unknown location '{}'", case.location))
        })?;
        labels.push(BreakSpec {
            location,
            diameter: case.diameter,
        });
        case_seeds.push(case.seed);
    }

    let mut seen = vec![false; config.num_cases];
    for &id in doc.split.train.iter().chain(&doc.split.test) {
        if id >= config.num_cases || seen[id] {
            return Err(CliError::format(
                &path,
                format!("split repeats or overflows case id {id}"),
            ));
        }
        seen[id] = true;
    }
    if doc.split.train.len() != config.train_cases || seen.iter().any(|s| !s) {
        return Err(CliError::format(&path, "split does not cover every case".to_string()));
    }

    // Verify the identity digest before trusting labels or split, so a
    // hand-edited manifest is caught without touching any case file.
    let mut split = vec![Split::Test; config.num_cases];
    for &id in &doc.split.train {
        split[id] = Split::Train;
    }
    let names: Vec<String> = rebuilt.iter().map(|s| s.name.clone()).collect();
    let digest = dataset_fingerprint(
        doc.master_seed,
        &config,
        &names,
        &case_seeds,
        &labels,
        &split,
    );
    if digest != doc.fingerprint {
        return Err(CliError::format(
            &path,
            format!(
                "fingerprint mismatch: manifest claims {}, fields digest to {digest}",
                doc.fingerprint
            ),
        ));
    }

    Ok(ManifestInfo {
        master_seed: doc.master_seed,
        fingerprint: doc.fingerprint,
        config,
        channel_names: names,
        informative: rebuilt.iter().map(|s| s.informative).collect(),
        train_ids: doc.split.train,
        test_ids: doc.split.test,
        labels,
        case_seeds,
    })
}

/// Paths the given case ids would be read from, in id order. `--dry-run`
/// prints these instead of reading them.
pub fn planned_case_reads(dir: &Path, ids: &[usize]) -> Vec<PathBuf> {
    let cases = cases_dir(dir);
    ids.iter().map(|&id| cases.join(case_file_name(id))).collect()
}

/// Loads exactly the named cases — the attribution stage uses this to touch
/// only training-split files.
pub fn load_split_cases(
    dir: &Path,
    info: &ManifestInfo,
    ids: &[usize],
) -> Result<Vec<TransientCase>, CliError> {
    let t_len = info.config.samples();
    let cases = cases_dir(dir);
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if id >= info.config.num_cases {
            return Err(CliError::config(format!(
                "case id {id} outside dataset of {} cases",
                info.config.num_cases
            )));
        }
        let path = cases.join(case_file_name(id));
        let channels = parse_case_csv(&path, &info.channel_names, t_len)?;
        out.push(TransientCase {
            case_id: id,
            seed: info.case_seeds[id],
            label: info.labels[id],
            channels,
        });
    }
    Ok(out)
}

fn parse_case_csv(
    path: &Path,
    expected_names: &[String],
    t_len: usize,
) -> Result<Tensor, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::format(path, "empty file".to_string()))?;
    let mut cols = header.split(',');
    if cols.next() != Some("time") {
        return Err(CliError::format(path, "first column must be 'time'".to_string()));
    }
    let names: Vec<&str> = cols.collect();
    if names.len() != expected_names.len()
        || names
            .iter()
            .zip(expected_names)
            .any(|(got, want)| *got != want.as_str())
    {
        return Err(CliError::format(
            path,
            "header disagrees with the manifest catalog".to_string(),
        ));
    }
    let p = expected_names.len();
    let mut data = vec![0.0f64; p * t_len];
    let mut rows = 0usize;
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        if row >= t_len {
            return Err(CliError::format(
                path,
                format!("more than {t_len} data rows"),
            ));
        }
        let mut fields = line.split(',');
        let _time = fields
            .next()
            .ok_or_else(|| CliError::format(path, format!("row {row} empty")))?;
        for ch in 0..p {
            let field = fields.next().ok_or_else(|| {
                CliError::format(path, format!("row {row} has fewer than {p} values"))
            })?;
            data[ch * t_len + row] = field.parse().map_err(|_| {
                CliError::format(path, format!("row {row}: unparseable value '{field}'"))
            })?;
        }
        if fields.next().is_some() {
            return Err(CliError::format(
                path,
                format!("row {row} has more than {p} values"),
            ));
        }
        rows += 1;
    }
    if rows != t_len {
        return Err(CliError::format(
            path,
            format!("{rows} data rows, expected {t_len}"),
        ));
    }
    Tensor::new(vec![p, t_len], data).map_err(|e| CliError::format(path, e.to_string()))
}

/// Loads a dataset directory back into memory, bitwise equal to what
/// `save_dataset` wrote.
pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let info = load_manifest(dir)?;
    let catalog = channel_catalog(&info.config.catalog)?;
    let t_len = info.config.samples();
    let cases_dir = cases_dir(dir);

    let mut split = vec![Split::Test; info.config.num_cases];
    for &id in &info.train_ids {
        split[id] = Split::Train;
    }

    let mut cases = Vec::with_capacity(info.config.num_cases);
    for case_id in 0..info.config.num_cases {
        let path = cases_dir.join(case_file_name(case_id));
        let channels = parse_case_csv(&path, &info.channel_names, t_len)?;
        cases.push(TransientCase {
            case_id,
            seed: info.case_seeds[case_id],
            label: info.labels[case_id],
            channels,
        });
    }

    Ok(Dataset {
        catalog,
        cases,
        split,
        config: info.config,
        master_seed: info.master_seed,
    })
}
