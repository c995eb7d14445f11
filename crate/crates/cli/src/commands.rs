//! The five pipeline stages behind `tres-diag`: generate a labeled dataset,
//! train a diagnosis model, attribute its decisions per training case, rank
//! channels and select the top set, and report the full-vs-selected
//! comparison. Every stage re-verifies dataset provenance before trusting
//! an artifact from an earlier stage.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use rayon::prelude::*;

use tres_core::datagen::{
    case_seed, channel_catalog, draw_break_spec, generate_case, generate_dataset,
    split_assignment, BreakLocation, Dataset, DatagenError, TransientCase,
};
use tres_core::eval::{compare_runs, compute_metrics, ComparisonReport, Metrics};
use tres_core::interpret::explain_case;
use tres_core::model::{forward, TrainedModel};
use tres_core::numerics::Rng;
use tres_core::select::{aggregate, combine_case_attribution, rank_and_select, CaseAttribution};
use tres_core::train::{TrainCase, TrainLog, Trainer};

use crate::attr_io;
use crate::config::load_config;
use crate::dataset_io::{self, ManifestInfo};
use crate::error::CliError;
use crate::jsonw::JsonWriter;
use crate::log_io;
use crate::model_io;
use crate::sig_io;

/// Class names in head order; the first class is index zero everywhere.
fn class_order() -> Vec<String> {
    vec![
        BreakLocation::ColdLeg.as_str().to_string(),
        BreakLocation::HotLeg.as_str().to_string(),
    ]
}

/// Accepts either a run directory or a direct path to the checkpoint file.
fn resolve_model_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("model.json")
    } else {
        p.to_path_buf()
    }
}

fn check_model_provenance(
    model: &TrainedModel,
    info: &ManifestInfo,
    role: &str,
) -> Result<(), CliError> {
    if model.meta.dataset_fingerprint != info.fingerprint {
        return Err(CliError::config(format!(
            "{role} model was trained against dataset {:016x}, this dataset is {:016x}",
            model.meta.dataset_fingerprint, info.fingerprint
        )));
    }
    Ok(())
}

/// Test-split scores of one model over prepared cases.
fn evaluate_on(
    model: &TrainedModel,
    data_channels: &[String],
    cases: &[TransientCase],
) -> Result<Metrics, CliError> {
    let mut preds = Vec::with_capacity(cases.len());
    let mut truth = Vec::with_capacity(cases.len());
    let mut sizes_pred = Vec::with_capacity(cases.len());
    let mut sizes_true = Vec::with_capacity(cases.len());
    for case in cases {
        let p = forward(model, data_channels, &case.channels)?;
        preds.push(p.predicted_class());
        truth.push(case.label.location.class_index());
        sizes_pred.push(p.size);
        sizes_true.push(case.label.diameter);
    }
    Ok(compute_metrics(
        &preds,
        &truth,
        &sizes_pred,
        &sizes_true,
        model.arch.num_classes,
    )?)
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration file (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Case-count override.
    #[arg(long)]
    pub cases: Option<usize>,
    /// Training-case-count override.
    #[arg(long)]
    pub train_cases: Option<usize>,
    /// Generate cases across threads; the output is byte-identical to a
    /// serial run.
    #[arg(long)]
    pub parallel: bool,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

/// Per-case generation fanned out over threads. Each case's stream depends
/// only on the master seed and its id, and the split draw is independent of
/// the case bytes, so the result equals [`generate_dataset`] exactly.
pub fn generate_parallel(
    config: &tres_core::datagen::GeneratorConfig,
    master_seed: u64,
) -> Result<Dataset, DatagenError> {
    config.validate()?;
    let catalog = channel_catalog(&config.catalog)?;
    let cases = (0..config.num_cases)
        .into_par_iter()
        .map(|case_id| {
            let seed = case_seed(master_seed, case_id);
            let brk = draw_break_spec(config, case_id, seed);
            generate_case(&catalog, config, case_id, &brk, seed)
        })
        .collect::<Result<Vec<TransientCase>, DatagenError>>()?;
    Ok(Dataset {
        catalog,
        split: split_assignment(master_seed, config.num_cases, config.train_cases),
        cases,
        config: config.clone(),
        master_seed,
    })
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(n) = args.cases {
        cfg.dataset.num_cases = n;
    }
    if let Some(n) = args.train_cases {
        cfg.dataset.train_cases = n;
    }
    let gen = cfg.dataset.to_generator();
    let t0 = Instant::now();
    let ds = if args.parallel {
        generate_parallel(&gen, cfg.master_seed)?
    } else {
        generate_dataset(&gen, cfg.master_seed)?
    };
    dataset_io::save_dataset(&ds, &args.out, args.force)?;
    println!(
        "dataset: {} cases ({} train / {} test), {} channels x {} samples, seed {}, fingerprint {:016x} ({:.2}s)",
        ds.cases.len(),
        ds.train_ids().len(),
        ds.test_ids().len(),
        ds.catalog.len(),
        gen.samples(),
        ds.master_seed,
        ds.fingerprint(),
        t0.elapsed().as_secs_f64()
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (from `generate`).
    #[arg(long)]
    pub data: PathBuf,
    /// Output run directory; receives model.json and train_log.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Channel list file (one name per line), or 'all' for the full catalog.
    #[arg(long, default_value = "all")]
    pub channels: String,
    /// Architecture override: tres_cnn, tres_cnn_plain, or mlp_baseline.
    #[arg(long)]
    pub arch: Option<String>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(kind) = &args.arch {
        cfg.arch.kind = kind.clone();
    }
    let info = dataset_io::load_manifest(&args.data)?;

    let model_channels: Vec<String> = if args.channels == "all" {
        info.channel_names.clone()
    } else {
        let listed = sig_io::load_channel_list(Path::new(&args.channels))?;
        for name in &listed {
            if !info.channel_names.contains(name) {
                return Err(CliError::config(format!(
                    "channel '{name}' is not in the dataset catalog"
                )));
            }
        }
        listed
    };

    let t_len = info.config.samples();
    let arch = cfg.arch.to_arch(model_channels.len(), t_len)?;
    let train_config = cfg.train.to_train();

    // Only training-split files are read; the test split stays untouched
    // until the report stage.
    let cases = dataset_io::load_split_cases(&args.data, &info, &info.train_ids)?;
    let train_cases: Vec<TrainCase> = cases
        .iter()
        .map(|c| TrainCase {
            case_id: c.case_id,
            matrix: &c.channels,
            class_index: c.label.location.class_index(),
            size: c.label.diameter,
        })
        .collect();

    dataset_io::guard_output_dir(&args.out, args.force)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;

    let order = class_order();
    let mut trainer = Trainer::new(
        &arch,
        &model_channels,
        &order,
        &info.channel_names,
        &train_cases,
        &train_config,
        &Rng::new(info.master_seed),
    )?;
    let t0 = Instant::now();
    while !trainer.finished() {
        let stats = trainer.run_epoch(&info.channel_names, &train_cases)?;
        if stats.iteration % 20 == 0 {
            eprintln!(
                "epoch {:>4}/{}: loss {:.4} (class {:.4}, size {:.4})",
                stats.iteration,
                train_config.max_iterations,
                stats.loss_total,
                stats.loss_class,
                stats.loss_reg
            );
        }
    }
    let (mut model, log) = trainer.into_outcome();
    model.meta.train_seed = info.master_seed;
    model.meta.dataset_fingerprint = info.fingerprint;

    model_io::save_model(&model, &args.out.join("model.json"))?;
    log_io::save_log(&log, &args.out.join("train_log.json"))?;

    let final_loss = log.epochs.last().map(|e| e.loss_total).unwrap_or(f64::NAN);
    println!(
        "trained {} on {} channels: {} iterations, converged {}, final loss {:.4} ({:.1}s)",
        model.arch.kind.as_str(),
        model_channels.len(),
        log.iterations,
        log.converged,
        final_loss,
        t0.elapsed().as_secs_f64()
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory (or checkpoint file) of the model to explain.
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory; receives attr/case_NNNN.json per training case.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// List the case files this stage would read, then exit without
    /// computing or writing anything.
    #[arg(long)]
    pub dry_run: bool,
    /// Explain cases across threads; per-case streams keep the output
    /// identical to a serial run.
    #[arg(long)]
    pub parallel: bool,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

pub fn cmd_attribute(args: &AttributeArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let lime_config = cfg.lime.to_lime();
    let info = dataset_io::load_manifest(&args.data)?;
    let model = model_io::load_model(&resolve_model_path(&args.model))?;
    check_model_provenance(&model, &info, "attributed")?;

    if args.dry_run {
        println!(
            "dry run: {} training cases, {} perturbations each; test split untouched",
            info.train_ids.len(),
            lime_config.n_perturb
        );
        for path in dataset_io::planned_case_reads(&args.data, &info.train_ids) {
            println!("would read: {}", path.display());
        }
        return Ok(());
    }

    dataset_io::guard_output_dir(&args.out, args.force)?;
    let cases = dataset_io::load_split_cases(&args.data, &info, &info.train_ids)?;
    let t0 = Instant::now();

    let explain_one = |case: &TransientCase| {
        let mut rng = Rng::new(info.master_seed)
            .named_child("lime")
            .child(case.case_id as u64);
        explain_case(
            &model,
            &info.channel_names,
            &case.channels,
            case.case_id,
            &lime_config,
            &mut rng,
        )
    };

    if args.parallel {
        let results = cases
            .par_iter()
            .map(explain_one)
            .collect::<Result<Vec<_>, _>>()?;
        for (map, lime) in &results {
            attr_io::save_attribution(&args.out, &model.channels, map, lime)?;
        }
    } else {
        for (done, case) in cases.iter().enumerate() {
            let (map, lime) = explain_one(case)?;
            attr_io::save_attribution(&args.out, &model.channels, &map, &lime)?;
            if (done + 1) % 25 == 0 {
                eprintln!(
                    "attributed {}/{} cases ({:.1}s)",
                    done + 1,
                    cases.len(),
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }

    println!(
        "attributed {} training cases ({} perturbations each) in {:.1}s",
        cases.len(),
        lime_config.n_perturb,
        t0.elapsed().as_secs_f64()
    );
    println!("wrote {}", attr_io::attr_dir(&args.out).display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory (or checkpoint file) the attributions were made for.
    #[arg(long)]
    pub model: PathBuf,
    /// Attribution directory (from `attribute`).
    #[arg(long)]
    pub attr: PathBuf,
    /// Output directory; receives significance.json, lumped_saliency.csv,
    /// selected_channels.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// How many channels to select (overrides the configuration).
    #[arg(long)]
    pub k: Option<usize>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

pub fn cmd_select(args: &SelectArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let k = args.k.unwrap_or(cfg.select.k);
    let info = dataset_io::load_manifest(&args.data)?;
    let model = model_io::load_model(&resolve_model_path(&args.model))?;
    check_model_provenance(&model, &info, "ranked")?;

    // Per-case combined attributions, ascending case id (the train-id list
    // is already ascending).
    let mut combined: Vec<CaseAttribution> = Vec::with_capacity(info.train_ids.len());
    for &id in &info.train_ids {
        let (map, lime) = attr_io::load_attribution(&args.attr, id, &model.channels)?;
        combined.push(combine_case_attribution(&map, &lime)?);
    }

    let lumped = aggregate(&combined)?;
    let p = model.channels.len();
    let mut case_scores: Vec<Vec<f64>> = vec![Vec::with_capacity(combined.len()); p];
    for case in &combined {
        for (channel, &score) in case.scores.iter().enumerate() {
            case_scores[channel].push(score);
        }
    }
    let ranking = rank_and_select(&case_scores, k)?;

    dataset_io::guard_output_dir(&args.out, args.force)?;
    sig_io::save_significance(&args.out, &ranking, &lumped, &model.channels)?;

    let removed_total: usize = ranking.removed_counts.iter().sum();
    println!(
        "ranked {} channels over {} cases ({} outlier scores fenced); selected top {}:",
        p,
        combined.len(),
        removed_total,
        k
    );
    for &idx in &ranking.selected {
        println!("  {}", model.channels[idx]);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory of the all-channels model.
    #[arg(long)]
    pub full: PathBuf,
    /// Run directory of the selected-channels model.
    #[arg(long)]
    pub selected: PathBuf,
    /// Ranking directory (from `select`).
    #[arg(long)]
    pub ranking: PathBuf,
    /// Output directory; receives report.json and report.md.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

fn render_report_json(
    info: &ManifestInfo,
    cmp: &ComparisonReport,
    full_model: &TrainedModel,
    sel_model: &TrainedModel,
    full_log: &TrainLog,
    sel_log: &TrainLog,
    informative_selected: usize,
    top5: &[String],
    decoys_in_top5: usize,
    k: usize,
) -> String {
    let mut w = JsonWriter::new();
    w.begin_object();

    w.key("dataset").begin_object();
    w.key("master_seed").u64(info.master_seed);
    w.key("fingerprint").u64(info.fingerprint);
    w.key("num_cases").usize(info.config.num_cases);
    w.key("train_cases").usize(info.train_ids.len());
    w.key("test_cases").usize(info.test_ids.len());
    w.key("num_channels").usize(info.channel_names.len());
    w.key("time_len").usize(info.config.samples());
    w.end_object();

    let run = |w: &mut JsonWriter, model: &TrainedModel, log: &TrainLog, m: &Metrics| {
        w.key("arch").string(model.arch.kind.as_str());
        w.key("num_channels").usize(model.arch.num_channels);
        w.key("iterations").usize(log.iterations);
        w.key("converged").bool(log.converged);
        w.key("metrics").begin_object();
        w.key("accuracy").f64(m.accuracy);
        w.key("micro_f1").f64(m.micro_f1);
        w.key("sse_avg").f64(m.sse_avg);
        w.key("case_count").usize(m.case_count);
        w.end_object();
    };
    w.key("full_run").begin_object();
    run(&mut w, full_model, full_log, &cmp.metrics_full);
    w.end_object();
    w.key("selected_run").begin_object();
    run(&mut w, sel_model, sel_log, &cmp.metrics_selected);
    w.end_object();

    w.key("relative_change_pct").begin_object();
    w.key("accuracy").opt_f64(cmp.rel_err.accuracy);
    w.key("micro_f1").opt_f64(cmp.rel_err.micro_f1);
    w.key("sse_avg").opt_f64(cmp.rel_err.sse_avg);
    w.end_object();

    w.key("iteration_ratio").opt_f64(cmp.iteration_ratio);

    w.key("selected_channels").begin_array();
    for name in &cmp.selected_channels {
        w.string(name);
    }
    w.end_array();

    w.key("recovery").begin_object();
    w.key("k").usize(k);
    w.key("informative_selected").usize(informative_selected);
    w.key("decoys_in_top5").usize(decoys_in_top5);
    w.key("top5").begin_array();
    for name in top5 {
        w.string(name);
    }
    w.end_array();
    w.end_object();

    w.end_object();
    w.finish()
}

fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(p) => format!("{p:+.2}%"),
        None => "n/a".to_string(),
    }
}

#[allow(clippy::too_many_arguments)]
fn render_report_md(
    info: &ManifestInfo,
    cmp: &ComparisonReport,
    full_log: &TrainLog,
    sel_log: &TrainLog,
    informative: &std::collections::BTreeMap<&str, bool>,
    informative_selected: usize,
    top5: &[String],
    decoys_in_top5: usize,
    k: usize,
) -> String {
    let mut md = String::new();
    md.push_str("# Channel-selection comparison\n\n");
    md.push_str(&format!(
        "Dataset: {} cases ({} train / {} test), {} channels x {} samples, master seed {}, fingerprint {:016x}.\n\n",
        info.config.num_cases,
        info.train_ids.len(),
        info.test_ids.len(),
        info.channel_names.len(),
        info.config.samples(),
        info.master_seed,
        info.fingerprint
    ));

    md.push_str("| metric | full | selected | relative change |\n");
    md.push_str("|---|---|---|---|\n");
    md.push_str(&format!(
        "| accuracy | {:.4} | {:.4} | {} |\n",
        cmp.metrics_full.accuracy,
        cmp.metrics_selected.accuracy,
        fmt_pct(cmp.rel_err.accuracy)
    ));
    md.push_str(&format!(
        "| micro-F1 | {:.4} | {:.4} | {} |\n",
        cmp.metrics_full.micro_f1,
        cmp.metrics_selected.micro_f1,
        fmt_pct(cmp.rel_err.micro_f1)
    ));
    md.push_str(&format!(
        "| size error (avg SSE) | {:.5} | {:.5} | {} |\n\n",
        cmp.metrics_full.sse_avg,
        cmp.metrics_selected.sse_avg,
        fmt_pct(cmp.rel_err.sse_avg)
    ));

    let describe = |log: &TrainLog| {
        if log.converged {
            "stopping rule fired"
        } else {
            "hit the iteration cap"
        }
    };
    md.push_str(&format!(
        "Convergence: full {} iterations ({}; wall {:.1} s) vs selected {} iterations ({}; wall {:.1} s)",
        cmp.iterations_full,
        describe(full_log),
        cmp.wall_time_full_s,
        cmp.iterations_selected,
        describe(sel_log),
        cmp.wall_time_selected_s
    ));
    match cmp.iteration_ratio {
        Some(r) => md.push_str(&format!(" — iteration ratio {r:.3}.\n\n")),
        None => md.push_str(".\n\n"),
    }

    md.push_str(&format!(
        "Selected channels, rank order ({informative_selected}/{k} informative; `*` marks informative):\n\n"
    ));
    for name in &cmp.selected_channels {
        let mark = if informative.get(name.as_str()).copied().unwrap_or(false) {
            "*"
        } else {
            ""
        };
        md.push_str(&format!("- {name}{mark}\n"));
    }
    md.push_str(&format!(
        "\nTop-5 by significance: {} ({} decoys).\n",
        top5.join(", "),
        decoys_in_top5
    ));
    md
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let info = dataset_io::load_manifest(&args.data)?;
    let full_model = model_io::load_model(&args.full.join("model.json"))?;
    let full_log = log_io::load_log(&args.full.join("train_log.json"))?;
    let sel_model = model_io::load_model(&args.selected.join("model.json"))?;
    let sel_log = log_io::load_log(&args.selected.join("train_log.json"))?;
    let sig = sig_io::load_significance(&args.ranking)?;

    check_model_provenance(&full_model, &info, "full")?;
    check_model_provenance(&sel_model, &info, "selected")?;
    if full_model.channels != info.channel_names {
        return Err(CliError::config(
            "full-run model does not cover the complete channel catalog".to_string(),
        ));
    }
    if sel_model.channels != sig.selected {
        return Err(CliError::config(
            "selected-run model channels disagree with the ranking's selection".to_string(),
        ));
    }

    // The one stage that reads test-split files.
    let test_cases = dataset_io::load_split_cases(&args.data, &info, &info.test_ids)?;
    let metrics_full = evaluate_on(&full_model, &info.channel_names, &test_cases)?;
    let metrics_sel = evaluate_on(&sel_model, &info.channel_names, &test_cases)?;

    let cmp = compare_runs(
        (&metrics_full, &full_log),
        (&metrics_sel, &sel_log),
        sig.selected.clone(),
    )?;

    let informative: std::collections::BTreeMap<&str, bool> = info
        .channel_names
        .iter()
        .map(String::as_str)
        .zip(info.informative.iter().copied())
        .collect();
    let is_informative =
        |name: &String| informative.get(name.as_str()).copied().unwrap_or(false);
    let informative_selected = cmp.selected_channels.iter().filter(|n| is_informative(n)).count();
    let top5: Vec<String> = sig.ranked.iter().take(5).cloned().collect();
    let decoys_in_top5 = top5.iter().filter(|n| !is_informative(n)).count();

    dataset_io::guard_output_dir(&args.out, args.force)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;

    let json = render_report_json(
        &info,
        &cmp,
        &full_model,
        &sel_model,
        &full_log,
        &sel_log,
        informative_selected,
        &top5,
        decoys_in_top5,
        sig.k,
    );
    let json_path = args.out.join("report.json");
    std::fs::write(&json_path, json).map_err(|e| CliError::io(&json_path, e))?;

    let md = render_report_md(
        &info,
        &cmp,
        &full_log,
        &sel_log,
        &informative,
        informative_selected,
        &top5,
        decoys_in_top5,
        sig.k,
    );
    let md_path = args.out.join("report.md");
    std::fs::write(&md_path, md).map_err(|e| CliError::io(&md_path, e))?;

    println!(
        "full:     acc {:.4}  f1 {:.4}  sse {:.5}  ({} iterations)",
        metrics_full.accuracy, metrics_full.micro_f1, metrics_full.sse_avg, cmp.iterations_full
    );
    println!(
        "selected: acc {:.4}  f1 {:.4}  sse {:.5}  ({} iterations)",
        metrics_sel.accuracy, metrics_sel.micro_f1, metrics_sel.sse_avg, cmp.iterations_selected
    );
    println!(
        "relative change: acc {}, f1 {}, sse {}; iteration ratio {}",
        fmt_pct(cmp.rel_err.accuracy),
        fmt_pct(cmp.rel_err.micro_f1),
        fmt_pct(cmp.rel_err.sse_avg),
        cmp.iteration_ratio
            .map(|r| format!("{r:.3}"))
            .unwrap_or_else(|| "n/a".to_string())
    );
    println!(
        "recovery: {}/{} selected channels informative, {} decoys in top-5",
        informative_selected, sig.k, decoys_in_top5
    );
    println!("wrote {}", args.out.display());
    Ok(())
}
