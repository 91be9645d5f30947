//! One function per CLI command. Each writes its report into `config.out`
//! and returns it.

use std::time::Instant;

use serde_json::json;

use crate::baselines::{evaluate_cbr_path, evaluate_transe, train_transe, TranseModel};
use crate::error::{Error, Result};
use crate::eval::{HitsSummary, QueryOutcome};
use crate::gnn::checkpoint::write_sidecar;
use crate::gnn::{evaluate, load_checkpoint, save_checkpoint, train, EpisodeSet, GnnModel, TrainLog};
use crate::harness::external::{self, load_episodes};
use crate::harness::{ensure_dir, write_file, write_timing, ExperimentConfig, MetricsReport, Mode};
use crate::subgraph::{QuerySubgraph, SubgraphStats};
use crate::synth::{assemble_dataset, Dataset, Manifest, Shape};
use crate::Split;

/// Comparison systems run by `baseline`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    CbrPath,
    GnnTranse,
}

/// Episodes plus what model construction needs to know about them.
pub struct LoadedData {
    pub set: EpisodeSet,
    pub num_relations: usize,
    pub num_pattern_types: usize,
    pub dataset: Option<Dataset>,
}

pub fn load_data(cfg: &ExperimentConfig, use_distance: bool) -> Result<LoadedData> {
    match cfg.mode {
        Mode::Synthetic => {
            let ds = Dataset::read_dir(&cfg.data_dir)?;
            Ok(LoadedData {
                set: EpisodeSet::from_synthetic(&ds, use_distance)?,
                num_relations: ds.type_system.num_relations(),
                num_pattern_types: ds.pattern_types.len(),
                dataset: Some(ds),
            })
        }
        Mode::ExternalKg => {
            let (set, manifest) = load_episodes(&cfg.data_dir, use_distance)?;
            Ok(LoadedData {
                set,
                num_relations: manifest.num_relations,
                num_pattern_types: 0,
                dataset: None,
            })
        }
    }
}

fn finish(report: &MetricsReport, cfg: &ExperimentConfig, start: Instant) -> Result<()> {
    ensure_dir(&cfg.out)?;
    report.write(&cfg.out)?;
    write_timing(&cfg.out, &report.command, start.elapsed().as_secs_f64())
}

/// Generates the synthetic benchmark into `data_dir`; returns the manifest
/// and its sha256.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<(Manifest, String)> {
    let ds = assemble_dataset(&cfg.synth, cfg.seed)?;
    let hash = ds.write_dir(&cfg.data_dir)?;
    let path = cfg.data_dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    Ok((serde_json::from_str(&text)?, hash))
}

/// Trains one model per temperature in the grid (or the single configured
/// temperature), keeps the best on validation and writes the checkpoint.
pub fn train_selected(cfg: &ExperimentConfig, data: &LoadedData, use_distance: bool) -> Result<(GnnModel, TrainLog, serde_json::Value)> {
    let grid = if cfg.model.tau_grid.is_empty() {
        vec![cfg.model.temperature]
    } else {
        cfg.model.tau_grid.clone()
    };
    let mut best: Option<(GnnModel, TrainLog)> = None;
    let mut trials = Vec::new();
    for &tau in &grid {
        let mut model = GnnModel::new(cfg.gnn_config(data.num_relations, tau, use_distance))?;
        let log = train(&mut model, &data.set, &cfg.train)?;
        log::info!("tau {tau}: best valid avg {:.2} at epoch {}", log.best_valid_avg, log.best_epoch);
        trials.push(json!({ "temperature": tau, "best_valid_avg": log.best_valid_avg, "best_epoch": log.best_epoch }));
        if best.as_ref().is_none_or(|(_, b)| log.best_valid_avg > b.best_valid_avg) {
            best = Some((model, log));
        }
    }
    let (model, log) = best.expect("grid is non-empty");
    let selection = json!({ "selected_temperature": model.config().temperature, "trials": trials });
    Ok((model, log, selection))
}

fn eval_splits(model: &GnnModel, data: &LoadedData, k: usize, prefix: &str, report: &mut MetricsReport) -> Result<()> {
    for split in [Split::Valid, Split::Test] {
        let eps = data.set.split(split);
        if eps.is_empty() {
            continue;
        }
        report.add(&format!("{prefix}{split}"), evaluate(model, &data.set, &eps, k)?);
    }
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let start = Instant::now();
    let data = load_data(cfg, cfg.model.use_distance)?;
    let mut report = MetricsReport::new("train", cfg);
    let untrained = GnnModel::new(cfg.gnn_config(data.num_relations, cfg.model.temperature, cfg.model.use_distance))?;
    eval_splits(&untrained, &data, cfg.train.k_eval, "untrained/", &mut report)?;
    let (model, log, selection) = train_selected(cfg, &data, cfg.model.use_distance)?;
    eval_splits(&model, &data, cfg.train.k_eval, "", &mut report)?;
    let path = cfg.checkpoint_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_checkpoint(&path, &model, None)?;
    write_sidecar(&path, &json!({ "version": report.version, "config": cfg, "tau_selection": selection, "train": log }))?;
    report.notes.insert("tau_selection".into(), selection);
    report.train = Some(log);
    finish(&report, cfg, start)?;
    Ok(report)
}

fn load_model(cfg: &ExperimentConfig) -> Result<GnnModel> {
    Ok(load_checkpoint(&cfg.checkpoint_path())?.model)
}

fn check_dims(model: &GnnModel, data: &LoadedData) -> Result<()> {
    let c = model.config();
    if c.num_relations != data.num_relations {
        return Err(Error::Dimension(format!(
            "checkpoint has {} relations, data has {}",
            c.num_relations, data.num_relations
        )));
    }
    if let Some(d) = data.set.feature_dim() {
        if d != c.input_dim() {
            return Err(Error::Dimension(format!("checkpoint expects {} input features, data has {d}", c.input_dim())));
        }
    }
    Ok(())
}

/// Strict hits@1 of the checkpoint on `config.split`.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let start = Instant::now();
    let model = load_model(cfg)?;
    let data = load_data(cfg, model.config().use_distance)?;
    check_dims(&model, &data)?;
    let mut report = MetricsReport::new("eval", cfg);
    let eps = data.set.split(cfg.split);
    report.add(cfg.split.as_str(), evaluate(&model, &data.set, &eps, cfg.train.k_eval)?);
    finish(&report, cfg, start)?;
    Ok(report)
}

fn shape_columns(report: &MetricsReport) -> Vec<String> {
    let mut tags: Vec<String> = Shape::ALL.iter().map(|s| s.tag().to_string()).collect();
    for s in report.results.values() {
        for k in s.per_shape.keys() {
            if !tags.contains(k) {
                tags.push(k.clone());
            }
        }
    }
    tags.retain(|t| report.results.values().any(|s| s.per_shape.contains_key(t)));
    tags
}

fn summary_row(s: &HitsSummary, tags: &[String]) -> String {
    let shapes: Vec<String> = tags
        .iter()
        .map(|t| s.per_shape.get(t).map_or(String::new(), |h| format!("{:.4}", h.hits_at_1)))
        .collect();
    format!("{:.4},{:.4},{}", s.avg, s.overall, shapes.join(","))
}

/// Hits@1 of the checkpoint for every K in the sweep, on both valid and
/// test; `knn_sweep.csv` holds one row per K for `config.split`.
pub fn cmd_sweep_knn(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let start = Instant::now();
    let model = load_model(cfg)?;
    let data = load_data(cfg, model.config().use_distance)?;
    check_dims(&model, &data)?;
    let mut report = MetricsReport::new("sweep-knn", cfg);
    let mut effective = Vec::new();
    for &k in &cfg.sweep.k_values {
        for split in [Split::Valid, Split::Test] {
            let eps = data.set.split(split);
            if eps.is_empty() {
                continue;
            }
            let available = eps.iter().map(|&e| data.set.episodes[e].neighbors.len()).max().unwrap_or(0).max(1);
            let used = if k > available {
                log::warn!("k={k} exceeds the {available} cases available on {split}; using {available}");
                available
            } else {
                k
            };
            if split == cfg.split {
                effective.push((k, used));
            }
            report.add(&format!("k={k}/{split}"), evaluate(&model, &data.set, &eps, used)?);
        }
    }
    let tags = shape_columns(&report);
    let mut csv = format!("k,effective_k,split,avg,overall,{}\n", tags.join(","));
    for (k, used) in &effective {
        if let Some(s) = report.summary(&format!("k={k}/{}", cfg.split)) {
            csv += &format!("{k},{used},{},{}\n", cfg.split, summary_row(s, &tags));
        }
    }
    ensure_dir(&cfg.out)?;
    write_file(&cfg.out.join("knn_sweep.csv"), &csv)?;
    finish(&report, cfg, start)?;
    Ok(report)
}

/// Trains with and without the distance block on the same data and seeds.
pub fn cmd_ablate_distance(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let start = Instant::now();
    let mut report = MetricsReport::new("ablate-distance", cfg);
    let mut logs = serde_json::Map::new();
    for (label, on) in [("distance-on", true), ("distance-off", false)] {
        let data = load_data(cfg, on)?;
        let (model, log, selection) = train_selected(cfg, &data, on)?;
        eval_splits(&model, &data, cfg.train.k_eval, &format!("{label}/"), &mut report)?;
        logs.insert(
            label.into(),
            json!({ "feature_dim": model.config().input_dim(), "tau_selection": selection, "train": log }),
        );
    }
    report.notes.insert("runs".into(), serde_json::Value::Object(logs));
    let tags = shape_columns(&report);
    let mut csv = format!("variant,split,avg,overall,{}\n", tags.join(","));
    for (label, s) in &report.results {
        if let Some((variant, split)) = label.split_once('/') {
            csv += &format!("{variant},{split},{}\n", summary_row(s, &tags));
        }
    }
    ensure_dir(&cfg.out)?;
    write_file(&cfg.out.join("ablation.csv"), &csv)?;
    finish(&report, cfg, start)?;
    Ok(report)
}

/// External-KG subgraph collection into `data_dir`; the report goes to `out`.
pub fn cmd_collect(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let start = Instant::now();
    let (records, manifest) = external::collect(&cfg.external, &cfg.data_dir)?;
    let mut report = MetricsReport::new("collect", cfg);
    report.notes.insert("collect".into(), serde_json::to_value(&manifest)?);
    report.notes.insert(
        "fallback_queries".into(),
        json!(records.iter().filter(|r| r.fallback).count()),
    );
    ensure_dir(&cfg.out)?;
    SubgraphStats::write_csv(
        &cfg.out.join("subgraph_stats.csv"),
        &[
            ("adaptive".into(), manifest.adaptive.clone()),
            (format!("naive-{}hop", manifest.naive_hops), manifest.naive.clone()),
        ],
    )?;
    finish(&report, cfg, start)?;
    Ok(report)
}

/// Per-split subgraph statistics of the data in `data_dir`.
pub fn cmd_stats(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let start = Instant::now();
    let mut rows = Vec::new();
    match cfg.mode {
        Mode::Synthetic => {
            let ds = Dataset::read_dir(&cfg.data_dir)?;
            for split in Split::ALL {
                let items = ds
                    .split(split)
                    .map(|ex| {
                        let sg = QuerySubgraph::from_graph(ex.id, &ex.graph, &ex.query_entities, Some(&ex.gold_answers))?;
                        Ok((sg, ex.gold_answers.clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rows.push((split.to_string(), SubgraphStats::compute(items.iter().map(|(s, g)| (s, &g[..])))));
            }
        }
        Mode::ExternalKg => {
            let manifest = external::read_manifest(&cfg.data_dir)?;
            let records = external::read_records(&cfg.data_dir.join(external::RECORDS_FILE))?;
            for split in Split::ALL {
                let items = records
                    .iter()
                    .filter(|r| r.split == split)
                    .map(|r| Ok((r.subgraph(manifest.num_relations)?, r.answers.iter().map(|&a| crate::kg::EntityId(a)).collect::<Vec<_>>())))
                    .collect::<Result<Vec<_>>>()?;
                rows.push((split.to_string(), SubgraphStats::compute(items.iter().map(|(s, g)| (s, &g[..])))));
            }
        }
    }
    let mut report = MetricsReport::new("stats", cfg);
    report.notes.insert(
        "subgraph_stats".into(),
        serde_json::to_value(rows.iter().cloned().collect::<std::collections::BTreeMap<_, _>>())?,
    );
    ensure_dir(&cfg.out)?;
    SubgraphStats::write_csv(&cfg.out.join("stats.csv"), &rows)?;
    finish(&report, cfg, start)?;
    Ok(report)
}

fn cbr_path_outcomes(cfg: &ExperimentConfig, ds: &Dataset, split: Split) -> Vec<QueryOutcome> {
    evaluate_cbr_path(ds, split, cfg.train.k_eval, cfg.cbr_path.max_hops, cfg.cbr_path.weighting)
}

/// Runs a comparison system on valid and test.
pub fn cmd_baseline(cfg: &ExperimentConfig, which: Baseline) -> Result<MetricsReport> {
    let start = Instant::now();
    if cfg.mode != Mode::Synthetic {
        return Err(Error::Config("baselines run on synthetic data only".into()));
    }
    let (name, mut report) = match which {
        Baseline::CbrPath => ("cbr-path", MetricsReport::new("baseline cbr-path", cfg)),
        Baseline::GnnTranse => ("gnn-transe", MetricsReport::new("baseline gnn-transe", cfg)),
    };
    match which {
        Baseline::CbrPath => {
            let ds = Dataset::read_dir(&cfg.data_dir)?;
            for split in [Split::Valid, Split::Test] {
                report.add(split.as_str(), cbr_path_outcomes(cfg, &ds, split));
            }
        }
        Baseline::GnnTranse => {
            let data = load_data(cfg, cfg.model.use_distance)?;
            let gnn = GnnModel::new(cfg.gnn_config(data.num_relations, cfg.model.temperature, cfg.model.use_distance))?;
            let mut model = TranseModel::new(gnn, data.num_pattern_types, cfg.seed);
            let log = train_transe(&mut model, &data.set, &cfg.train, &cfg.transe)?;
            for split in [Split::Valid, Split::Test] {
                let eps = data.set.split(split);
                report.add(split.as_str(), evaluate_transe(&model, &data.set, &eps)?);
            }
            ensure_dir(&cfg.out)?;
            let path = cfg.out.join(format!("{name}.bin"));
            save_checkpoint(&path, &model.gnn, Some(&model.relations))?;
            report.train = Some(log);
        }
    }
    finish(&report, cfg, start)?;
    Ok(report)
}
