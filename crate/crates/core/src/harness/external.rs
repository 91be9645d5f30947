//! External-KG mode: collect per-case subgraphs from a user-supplied graph
//! and cases, store them as JSON lines, and load them back as episodes.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{Episode, EpisodeSet, GraphInput};
use crate::harness::{ensure_dir, write_file, ExternalSection};
use crate::kg::{EntityId, LoadedGraph, Triple};
use crate::retrieval::{load_cases_with_embeddings, Case, CaseBase};
use crate::subgraph::{edge_subset, khop_subgraph, mine_chain_types, replay_chains, QuerySubgraph, SubgraphStats};
use crate::Split;

/// One collected query subgraph. Entity and relation ids index the
/// `entities.vocab` / `relations.vocab` files written next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgraphRecord {
    pub case_id: u64,
    pub split: Split,
    pub query_entities: Vec<u32>,
    pub answers: Vec<u32>,
    /// Retrieved training cases, nearest first.
    pub knn: Vec<u64>,
    pub triples: Vec<[u32; 3]>,
    pub num_chains: usize,
    pub fallback: bool,
    pub truncated: bool,
    /// Edge count of the naive ball around the query entities.
    pub naive_edges: usize,
    /// Whether every adaptive edge is also in the naive ball.
    pub within_naive: bool,
}

impl SubgraphRecord {
    pub fn subgraph(&self, num_relations: usize) -> Result<QuerySubgraph> {
        let triples = self.triples.iter().map(|&[h, r, t]| Triple::new(h, r, t)).collect();
        let qe: Vec<EntityId> = self.query_entities.iter().map(|&e| EntityId(e)).collect();
        let gold: Vec<EntityId> = self.answers.iter().map(|&e| EntityId(e)).collect();
        QuerySubgraph::from_triples(self.case_id, triples, &qe, Some(&gold), num_relations)
    }
}

/// Written as `collect.json` beside the records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectManifest {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_triples: usize,
    pub num_cases: usize,
    pub k: usize,
    pub max_hops: usize,
    pub naive_hops: usize,
    pub adaptive: SubgraphStats,
    pub naive: SubgraphStats,
    /// Queries whose adaptive subgraph has strictly fewer edges than the naive ball.
    pub smaller_than_naive_pct: f64,
}

pub const RECORDS_FILE: &str = "subgraphs.jsonl";
pub const MANIFEST_FILE: &str = "collect.json";

fn resolve_entities(names: &[String], kg: &LoadedGraph, case: u64) -> Vec<EntityId> {
    names
        .iter()
        .filter_map(|n| {
            let id = kg.entities.get(n).map(EntityId);
            if id.is_none() {
                log::warn!("case {case}: entity '{n}' not in the graph");
            }
            id
        })
        .collect()
}

/// Retrieves the K nearest training cases of every case, mines their
/// chains and replays them from the case's own entities.
pub fn collect(cfg: &ExternalSection, out: &Path) -> Result<(Vec<SubgraphRecord>, CollectManifest)> {
    if cfg.k == 0 {
        return Err(Error::InvalidK);
    }
    let kg = LoadedGraph::read_tsv(&cfg.triples)?;
    let cases = load_cases_with_embeddings(&cfg.cases, &cfg.embeddings, &cfg.ids)?;
    let train: Vec<Case> = cases.iter().filter(|c| c.split == Split::Train).cloned().collect();
    let base = CaseBase::normalize_and_index(train)?;
    let by_id: HashMap<u64, &Case> = cases.iter().map(|c| (c.case_id, c)).collect();
    let g = &kg.graph;

    let results = cases
        .par_iter()
        .map(|case| {
            let qe = resolve_entities(&case.query_entities, &kg, case.case_id);
            let gold = resolve_entities(&case.answers, &kg, case.case_id);
            let knn: Vec<u64> = base.knn(case, cfg.k)?.into_iter().map(|(id, _)| id).collect();
            let mut chains = BTreeSet::new();
            for id in &knn {
                let n = by_id[id];
                let nq = resolve_entities(&n.query_entities, &kg, n.case_id);
                let na = resolve_entities(&n.answers, &kg, n.case_id);
                chains.extend(mine_chain_types(g, &nq, &na, cfg.max_hops));
            }
            let mut replay = cfg.replay.clone();
            replay.seed = crate::derive_seed(replay.seed, &[case.case_id]);
            let sg = replay_chains(g, case.case_id, &qe, &chains, Some(&gold), &replay)?;
            let naive = khop_subgraph(g, case.case_id, &qe, cfg.naive_hops, Some(&gold))?;
            let record = SubgraphRecord {
                case_id: case.case_id,
                split: case.split,
                query_entities: qe.iter().map(|e| e.0).collect(),
                answers: gold.iter().map(|e| e.0).collect(),
                knn,
                triples: sg.triples.iter().map(|t| [t.head.0, t.relation.0, t.tail.0]).collect(),
                num_chains: chains.len(),
                fallback: sg.fallback,
                truncated: sg.truncated,
                naive_edges: naive.triples.len(),
                within_naive: edge_subset(&sg, &naive),
            };
            Ok((record, sg, naive, gold))
        })
        .collect::<Result<Vec<_>>>()?;

    let adaptive = SubgraphStats::compute(results.iter().map(|(_, sg, _, gold)| (sg, &gold[..])));
    let naive = SubgraphStats::compute(results.iter().map(|(_, _, n, gold)| (n, &gold[..])));
    let smaller = results.iter().filter(|(r, ..)| r.triples.len() < r.naive_edges).count();
    let manifest = CollectManifest {
        num_entities: g.num_entities(),
        num_relations: g.num_relations(),
        num_triples: g.num_triples(),
        num_cases: results.len(),
        k: cfg.k,
        max_hops: cfg.max_hops,
        naive_hops: cfg.naive_hops,
        adaptive: adaptive.clone(),
        naive: naive.clone(),
        smaller_than_naive_pct: if results.is_empty() {
            0.0
        } else {
            100.0 * smaller as f64 / results.len() as f64
        },
    };
    let records: Vec<SubgraphRecord> = results.into_iter().map(|(r, ..)| r).collect();

    ensure_dir(out)?;
    write_records(&out.join(RECORDS_FILE), &records)?;
    kg.write_vocab(out)?;
    write_file(&out.join(MANIFEST_FILE), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    SubgraphStats::write_csv(
        &out.join("subgraph_stats.csv"),
        &[("adaptive".to_string(), adaptive), (format!("naive-{}hop", cfg.naive_hops), naive)],
    )?;
    Ok((records, manifest))
}

pub fn write_records(path: &Path, records: &[SubgraphRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::file(path, e))?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<SubgraphRecord>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_manifest(dir: &Path) -> Result<CollectManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Episodes over collected subgraphs; graph `i` is record `i`.
pub fn load_episodes(dir: &Path, use_distance: bool) -> Result<(EpisodeSet, CollectManifest)> {
    let manifest = read_manifest(dir)?;
    let records = read_records(&dir.join(RECORDS_FILE))?;
    let index: HashMap<u64, usize> = records.iter().enumerate().map(|(i, r)| (r.case_id, i)).collect();
    let graphs = records
        .par_iter()
        .map(|r| GraphInput::new(&r.subgraph(manifest.num_relations)?, manifest.num_relations, use_distance))
        .collect::<Result<Vec<_>>>()?;
    let episodes = records
        .iter()
        .enumerate()
        .map(|(i, r)| Episode {
            query_id: r.case_id,
            split: r.split,
            shape: "all".to_string(),
            pattern_type: None,
            query: i,
            neighbors: r.knn.iter().filter_map(|id| index.get(id).copied()).collect(),
            gold: graphs[i].answers.clone(),
            num_gold: r.answers.len(),
            entity_offset: 0,
        })
        .collect();
    Ok((EpisodeSet { graphs, episodes }, manifest))
}
