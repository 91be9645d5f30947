//! Experiment orchestration behind the `cbr-subg` binary: configuration,
//! commands and report files.

pub mod commands;
pub mod external;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{PathWeighting, TranseConfig};
use crate::error::{Error, Result};
use crate::eval::{HitsSummary, QueryOutcome};
use crate::gnn::{GnnConfig, TrainConfig, TrainLog};
use crate::subgraph::ReplayConfig;
use crate::synth::{Shape, SynthConfig, GENERATOR_VERSION};
use crate::Split;

pub use commands::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Synthetic,
    ExternalKg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub temperature: f64,
    /// When non-empty, one model is trained per value and the best on the
    /// validation split is kept.
    pub tau_grid: Vec<f64>,
    pub use_distance: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let g = GnnConfig::default();
        ModelSection {
            num_layers: g.num_layers,
            hidden_dim: g.hidden_dim,
            temperature: g.temperature,
            tau_grid: vec![0.02, 0.05, 0.1, 0.2],
            use_distance: g.use_distance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub k_values: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { k_values: vec![1, 2, 3, 4, 5] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub max_hops: usize,
    pub weighting: PathWeighting,
}

impl Default for PathSection {
    fn default() -> Self {
        PathSection {
            max_hops: 3,
            weighting: PathWeighting::Count,
        }
    }
}

/// Inputs of external-KG collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalSection {
    /// `head<TAB>relation<TAB>tail` lines.
    pub triples: PathBuf,
    /// One JSON case per line.
    pub cases: PathBuf,
    pub embeddings: PathBuf,
    /// Case id of every embedding row.
    pub ids: PathBuf,
    pub k: usize,
    pub max_hops: usize,
    /// Radius of the naive ball reported next to the adaptive subgraphs.
    pub naive_hops: usize,
    pub replay: ReplayConfig,
}

impl Default for ExternalSection {
    fn default() -> Self {
        ExternalSection {
            triples: PathBuf::from("kg/triples.tsv"),
            cases: PathBuf::from("kg/cases.jsonl"),
            embeddings: PathBuf::from("kg/embeddings.bin"),
            ids: PathBuf::from("kg/ids.txt"),
            k: 5,
            max_hops: 3,
            naive_hops: 3,
            replay: ReplayConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Directory that receives reports, checkpoints and collected subgraphs.
    pub out: PathBuf,
    /// Synthetic dataset directory, or the output of `collect` in
    /// external-KG mode.
    pub data_dir: PathBuf,
    /// Split evaluated by `eval`.
    pub split: Split,
    /// Defaults to `<out>/model.bin`.
    pub checkpoint: Option<PathBuf>,
    pub synth: SynthConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub cbr_path: PathSection,
    pub transe: TranseConfig,
    pub external: ExternalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            mode: Mode::Synthetic,
            out: PathBuf::from("runs/default"),
            data_dir: PathBuf::from("data/synthetic"),
            split: Split::Test,
            checkpoint: None,
            synth: SynthConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            sweep: SweepSection::default(),
            cbr_path: PathSection::default(),
            transe: TranseConfig::default(),
            external: ExternalSection::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| config_err(format!("'{}' is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(config_err("empty override key"))
}

impl ExperimentConfig {
    /// Defaults, then the file (if any), then `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = toml::Value::try_from(ExperimentConfig::default()).map_err(config_err)?;
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
            let file: toml::Table = toml::from_str(&text).map_err(|e| Error::Parse {
                path: p.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
            merge(&mut value, toml::Value::Table(file));
        }
        for (k, v) in overrides {
            set_path(&mut value, k, parse_value(v))?;
        }
        let mut cfg: ExperimentConfig = value.try_into().map_err(config_err)?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Ties derived seeds to the top-level seed.
    pub fn resolve(&mut self) {
        self.train.seed = self.seed;
        if self.checkpoint.is_none() {
            self.checkpoint = Some(self.out.join("model.bin"));
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.model.tau_grid.iter().chain([&self.model.temperature]).any(|&t| !(t > 0.0)) {
            return Err(config_err("temperatures must be positive"));
        }
        if self.external.k == 0 || self.sweep.k_values.contains(&0) {
            return Err(Error::InvalidK);
        }
        Ok(())
    }

    pub fn gnn_config(&self, num_relations: usize, temperature: f64, use_distance: bool) -> GnnConfig {
        GnnConfig {
            num_layers: self.model.num_layers,
            hidden_dim: self.model.hidden_dim,
            num_relations,
            use_distance,
            temperature,
            seed: self.seed,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.bin"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }
}

/// Everything a command reports. Wall-clock time is kept out of this file so
/// identical runs produce identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
    /// Summaries keyed by a label such as `test` or `k=3/valid`.
    pub results: BTreeMap<String, HitsSummary>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainLog>,
    /// Per-query rows, keyed like `results`.
    pub queries: BTreeMap<String, Vec<QueryOutcome>>,
}

pub fn version_stamp() -> String {
    format!("cbr-subg {} ({GENERATOR_VERSION})", env!("CARGO_PKG_VERSION"))
}

impl MetricsReport {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        MetricsReport {
            command: command.to_string(),
            version: version_stamp(),
            config: config.clone(),
            results: BTreeMap::new(),
            notes: BTreeMap::new(),
            train: None,
            queries: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, label: &str, outcomes: Vec<QueryOutcome>) -> &HitsSummary {
        self.results.insert(label.to_string(), HitsSummary::from_outcomes(&outcomes));
        self.queries.insert(label.to_string(), outcomes);
        &self.results[label]
    }

    pub fn summary(&self, label: &str) -> Option<&HitsSummary> {
        self.results.get(label)
    }

    /// `label,shape,hits,total,hits_at_1` rows, with `avg` and `overall`
    /// rows per label.
    pub fn hits_csv(&self) -> String {
        let mut s = String::from("label,shape,hits,total,hits_at_1\n");
        for (label, sum) in &self.results {
            for (shape, h) in &sum.per_shape {
                s += &format!("{label},{shape},{},{},{:.4}\n", h.hits, h.total, h.hits_at_1);
            }
            s += &format!("{label},avg,,{},{:.4}\n", sum.num_queries, sum.avg);
            let hits: usize = sum.per_shape.values().map(|h| h.hits).sum();
            s += &format!("{label},overall,{hits},{},{:.4}\n", sum.num_queries, sum.overall);
        }
        s
    }

    pub fn queries_csv(&self) -> String {
        let mut s = String::from("label,query_id,split,shape,hit,num_gold,top\n");
        for (label, rows) in &self.queries {
            for q in rows {
                let top: Vec<String> = q.top.iter().map(u64::to_string).collect();
                s += &format!(
                    "{label},{},{},{},{},{},{}\n",
                    q.query_id,
                    q.split,
                    q.shape,
                    q.hit as u8,
                    q.num_gold,
                    top.join(" ")
                );
            }
        }
        s
    }

    /// Writes `metrics.json`, `hits.csv` and `queries.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("metrics.json"), &(serde_json::to_string_pretty(self)? + "\n"))?;
        write_file(&dir.join("hits.csv"), &self.hits_csv())?;
        write_file(&dir.join("queries.csv"), &self.queries_csv())
    }

    /// A one-line human summary per result label.
    pub fn print(&self) {
        for (label, s) in &self.results {
            let known = Shape::ALL.iter().map(|sh| sh.tag());
            let other = s.per_shape.keys().map(String::as_str).filter(|k| Shape::from_tag(k).is_none());
            let shapes: Vec<String> = known
                .chain(other)
                .filter_map(|tag| s.per_shape.get(tag).map(|h| format!("{tag} {:.2}", h.hits_at_1)))
                .collect();
            println!("{label}: avg {:.2} overall {:.2} [{}]", s.avg, s.overall, shapes.join(", "));
        }
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::file(path, e))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

/// Records how long a command took, next to its report.
pub fn write_timing(dir: &Path, command: &str, seconds: f64) -> Result<()> {
    let v = serde_json::json!({ "command": command, "seconds": seconds });
    write_file(&dir.join("timing.json"), &(v.to_string() + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::load(None, &[]).unwrap();
        let text = cfg.to_toml().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, text).unwrap();
        assert_eq!(ExperimentConfig::load(Some(&p), &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply_with_types() {
        let o = |k: &str, v: &str| (k.to_string(), v.to_string());
        let cfg = ExperimentConfig::load(
            None,
            &[
                o("seed", "7"),
                o("train.epochs", "3"),
                o("model.tau_grid", "[0.1]"),
                o("out", "/tmp/x"),
                o("cbr_path.weighting", "precision"),
                o("synth.growth", "all-pairs"),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model.tau_grid, vec![0.1]);
        assert_eq!(cfg.out, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.cbr_path.weighting, PathWeighting::Precision);
        assert_eq!(cfg.checkpoint_path(), PathBuf::from("/tmp/x/model.bin"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::load(None, &[("model.depth".into(), "3".into())]).unwrap_err();
        assert!(err.is_input_error());
    }

    #[test]
    fn zero_k_is_rejected() {
        let err = ExperimentConfig::load(None, &[("train.k_eval".into(), "0".into())]).unwrap_err();
        assert!(matches!(err, Error::InvalidK));
    }

    #[test]
    fn csv_rows_match_summary() {
        let mut r = MetricsReport::new("eval", &ExperimentConfig::default());
        let q = |shape: &str, hit| QueryOutcome {
            query_id: 1,
            split: Split::Test,
            shape: shape.into(),
            hit,
            num_gold: 1,
            top: vec![4, 5],
            error: None,
        };
        r.add("test", vec![q("2p", true), q("2i", false)]);
        let csv = r.hits_csv();
        assert!(csv.contains("test,2p,1,1,100.0000"));
        assert!(csv.contains("test,avg,,2,50.0000"));
        assert!(r.queries_csv().contains("test,1,test,2p,1,1,4 5"));
    }
}
