//! Query-subgraph selection.
//!
//! Relation chains that connect a retrieved case's entities to its answers
//! are mined by depth-first search, then replayed from the new query's
//! entities; the union of every edge on a complete replay is the query's
//! subgraph. A plain k-hop ball is kept as the naive baseline and as the
//! fallback when nothing replays.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, KnowledgeGraph, RelationId, Triple};

/// Distance buckets used by the relative distance feature: 0, 1, 2 and 3+.
pub const DISTANCE_BUCKETS: usize = 4;

/// Ordered relation steps of a path, independent of the entities visited.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChainType {
    pub steps: Vec<(RelationId, Direction)>,
}

impl ChainType {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySubgraph {
    pub query_id: u64,
    /// Entity ids of the owning graph, ascending.
    pub nodes: Vec<EntityId>,
    /// Sorted, deduplicated.
    pub triples: Vec<Triple>,
    pub query_entities: Vec<EntityId>,
    /// Distance bucket per node (aligned with `nodes`): shortest undirected
    /// distance to the nearest query entity over the subgraph's own edges,
    /// clamped to `DISTANCE_BUCKETS - 1`.
    pub distances: Vec<u8>,
    /// Gold answers present in the subgraph, when the query is labeled.
    pub answers: Option<Vec<EntityId>>,
    #[serde(default)]
    pub fallback: bool,
    #[serde(default)]
    pub truncated: bool,
}

impl QuerySubgraph {
    /// Assembles a subgraph from its edges. Nodes are the query entities plus
    /// every edge endpoint; `gold` (if given) is intersected with the nodes.
    pub fn from_triples(
        query_id: u64,
        triples: Vec<Triple>,
        query_entities: &[EntityId],
        gold: Option<&[EntityId]>,
        num_relations: usize,
    ) -> Result<Self> {
        Self::assemble(query_id, triples, Vec::new(), query_entities, gold, num_relations)
    }

    /// The whole of `g`, isolated entities included, as one query's subgraph.
    pub fn from_graph(query_id: u64, g: &KnowledgeGraph, query_entities: &[EntityId], gold: Option<&[EntityId]>) -> Result<Self> {
        let all = (0..g.num_entities() as u32).map(EntityId).collect();
        Self::assemble(query_id, g.triples().to_vec(), all, query_entities, gold, g.num_relations())
    }

    fn assemble(
        query_id: u64,
        mut triples: Vec<Triple>,
        extra_nodes: Vec<EntityId>,
        query_entities: &[EntityId],
        gold: Option<&[EntityId]>,
        num_relations: usize,
    ) -> Result<Self> {
        triples.sort_unstable();
        triples.dedup();
        let mut nodes: Vec<EntityId> = query_entities
            .iter()
            .copied()
            .chain(extra_nodes)
            .chain(triples.iter().flat_map(|t| [t.head, t.tail]))
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        let mut sg = QuerySubgraph {
            query_id,
            nodes,
            triples,
            query_entities: query_entities.to_vec(),
            distances: Vec::new(),
            answers: None,
            fallback: false,
            truncated: false,
        };
        let local = sg.local_graph(num_relations)?;
        let sources: Vec<EntityId> = query_entities
            .iter()
            .filter_map(|&e| sg.local_index(e))
            .map(|i| EntityId(i as u32))
            .collect();
        sg.distances = if sources.is_empty() {
            vec![(DISTANCE_BUCKETS - 1) as u8; sg.nodes.len()]
        } else {
            local
                .multi_source_bfs_distance(&sources, DISTANCE_BUCKETS - 1)?
                .into_iter()
                .map(|d| d.map_or(DISTANCE_BUCKETS - 1, |d| d as usize) as u8)
                .collect()
        };
        if let Some(gold) = gold {
            sg.answers = Some(gold.iter().copied().filter(|&a| sg.local_index(a).is_some()).collect());
        }
        Ok(sg)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn local_index(&self, e: EntityId) -> Option<usize> {
        self.nodes.binary_search(&e).ok()
    }

    /// The subgraph re-indexed to `0..num_nodes` (position in `nodes`).
    pub fn local_graph(&self, num_relations: usize) -> Result<KnowledgeGraph> {
        let triples: Vec<Triple> = self
            .triples
            .iter()
            .map(|t| {
                let h = self.local_index(t.head).ok_or(Error::UnknownEntity(t.head.0))?;
                let tl = self.local_index(t.tail).ok_or(Error::UnknownEntity(t.tail.0))?;
                Ok(Triple {
                    head: EntityId(h as u32),
                    relation: t.relation,
                    tail: EntityId(tl as u32),
                })
            })
            .collect::<Result<_>>()?;
        KnowledgeGraph::build(&triples, self.nodes.len(), num_relations)
    }

    pub fn distinct_relations(&self) -> usize {
        self.triples.iter().map(|t| t.relation).collect::<BTreeSet<_>>().len()
    }
}

/// Chain types of every simple path (at most `max_hops` steps) from a query
/// entity to an answer. Entities missing from `kg` are skipped with a warning.
pub fn mine_chain_types(kg: &KnowledgeGraph, query_entities: &[EntityId], answers: &[EntityId], max_hops: usize) -> BTreeSet<ChainType> {
    let mut chains = BTreeSet::new();
    for &qe in query_entities {
        if qe.index() >= kg.num_entities() {
            log::warn!("query entity {} not in graph; skipping", qe.0);
            continue;
        }
        for path in kg.dfs_paths(qe, answers, max_hops) {
            if !path.is_empty() {
                chains.insert(ChainType { steps: path.steps });
            }
        }
    }
    chains
}

/// Result of following one chain from one start entity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainReplay {
    /// Edges on at least one complete instantiation, tagged with the step index.
    pub edges: Vec<(usize, Triple)>,
    /// Entities where a complete instantiation ends, ascending.
    pub endpoints: Vec<EntityId>,
}

/// Follows `chain` from `start` breadth-first, every branch at every step,
/// keeping only the edges that lie on a walk completing the whole chain.
/// `max_fanout` keeps only the lowest-id neighbors of each (entity, step).
pub fn replay_chain(kg: &KnowledgeGraph, start: EntityId, chain: &ChainType, max_fanout: Option<usize>) -> ChainReplay {
    if start.index() >= kg.num_entities() || chain.is_empty() {
        return ChainReplay::default();
    }
    let fan = |s: &'_ [crate::kg::Step]| -> usize { max_fanout.map_or(s.len(), |m| m.min(s.len())) };
    let mut levels: Vec<Vec<EntityId>> = vec![vec![start]];
    for &(rel, dir) in &chain.steps {
        let mut next: Vec<EntityId> = levels
            .last()
            .unwrap()
            .iter()
            .flat_map(|&u| {
                let s = kg.step_neighbors(u, rel, dir);
                s[..fan(s)].iter().map(|st| st.neighbor)
            })
            .collect();
        next.sort_unstable();
        next.dedup();
        if next.is_empty() {
            return ChainReplay::default();
        }
        levels.push(next);
    }
    // Walk back from the final level keeping only entities that complete the chain.
    let mut alive = levels.last().unwrap().clone();
    let endpoints = alive.clone();
    let mut edges = Vec::new();
    for (i, &(rel, dir)) in chain.steps.iter().enumerate().rev() {
        let mut prev_alive = Vec::new();
        for &u in &levels[i] {
            let s = kg.step_neighbors(u, rel, dir);
            let mut any = false;
            for st in &s[..fan(s)] {
                if alive.binary_search(&st.neighbor).is_ok() {
                    edges.push((i, st.triple(u)));
                    any = true;
                }
            }
            if any {
                prev_alive.push(u);
            }
        }
        alive = prev_alive;
    }
    edges.sort_unstable();
    ChainReplay { edges, endpoints }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    /// Cap on replayed edges; `None` disables the cap.
    pub edge_budget: Option<usize>,
    /// Use the k-hop fallback when chains were mined but none replays.
    pub fallback: bool,
    pub fallback_hops: usize,
    pub fallback_budget: usize,
    pub seed: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            edge_budget: Some(50_000),
            fallback: true,
            fallback_hops: 2,
            fallback_budget: 5_000,
            seed: 0,
        }
    }
}

impl ReplayConfig {
    pub fn unbounded() -> Self {
        ReplayConfig {
            edge_budget: None,
            fallback: false,
            ..Self::default()
        }
    }
}

fn replay_all(kg: &KnowledgeGraph, query_entities: &[EntityId], chains: &BTreeSet<ChainType>, max_fanout: Option<usize>) -> Vec<(usize, Triple)> {
    let mut edges: Vec<(usize, Triple)> = Vec::new();
    for &qe in query_entities {
        for chain in chains {
            edges.extend(replay_chain(kg, qe, chain, max_fanout).edges);
        }
    }
    // Keep each triple once, at its lowest step index.
    edges.sort_unstable_by_key(|&(lvl, t)| (t, lvl));
    edges.dedup_by_key(|e| e.1);
    edges.sort_unstable();
    edges
}

/// Union of every edge on a complete replay of any chain from any query
/// entity, with distances computed over the result.
pub fn replay_chains(
    kg: &KnowledgeGraph,
    query_id: u64,
    query_entities: &[EntityId],
    chains: &BTreeSet<ChainType>,
    gold: Option<&[EntityId]>,
    config: &ReplayConfig,
) -> Result<QuerySubgraph> {
    let mut edges = replay_all(kg, query_entities, chains, None);
    let mut truncated = false;
    if let Some(budget) = config.edge_budget {
        if edges.len() > budget {
            truncated = true;
            // Hub truncation: shrink the per-step fan-out until the union fits.
            let mut fanout = query_entities
                .iter()
                .flat_map(|&e| kg.incident(e).iter())
                .count()
                .max(1);
            while edges.len() > budget && fanout > 1 {
                fanout /= 2;
                edges = replay_all(kg, query_entities, chains, Some(fanout));
            }
            // Lower steps first keeps the kept edges connected to the query.
            edges.truncate(budget);
        }
    }
    if edges.is_empty() && !chains.is_empty() && config.fallback {
        let mut sg = fallback_subgraph(kg, query_id, query_entities, gold, config)?;
        sg.fallback = true;
        return Ok(sg);
    }
    let mut sg = QuerySubgraph::from_triples(
        query_id,
        edges.into_iter().map(|(_, t)| t).collect(),
        query_entities,
        gold,
        kg.num_relations(),
    )?;
    sg.truncated = truncated;
    Ok(sg)
}

/// All edges with both endpoints within `hops` undirected steps of a query entity.
pub fn khop_subgraph(kg: &KnowledgeGraph, query_id: u64, query_entities: &[EntityId], hops: usize, gold: Option<&[EntityId]>) -> Result<QuerySubgraph> {
    let known: Vec<EntityId> = query_entities.iter().copied().filter(|e| e.index() < kg.num_entities()).collect();
    if known.is_empty() {
        return QuerySubgraph::from_triples(query_id, Vec::new(), query_entities, gold, kg.num_relations());
    }
    let dist = kg.multi_source_bfs_distance(&known, hops)?;
    let mut triples = Vec::new();
    for (i, d) in dist.iter().enumerate() {
        if d.is_none() {
            continue;
        }
        let h = EntityId(i as u32);
        for &(r, t) in kg.out_adj(h) {
            if dist[t.index()].is_some() {
                triples.push(Triple { head: h, relation: r, tail: t });
            }
        }
    }
    QuerySubgraph::from_triples(query_id, triples, query_entities, gold, kg.num_relations())
}

/// The `fallback_hops` ball, sampled down to `fallback_budget` edges with
/// probability proportional to endpoint degree (weighted sampling without
/// replacement, fixed seed).
fn fallback_subgraph(kg: &KnowledgeGraph, query_id: u64, query_entities: &[EntityId], gold: Option<&[EntityId]>, config: &ReplayConfig) -> Result<QuerySubgraph> {
    let ball = khop_subgraph(kg, query_id, query_entities, config.fallback_hops, gold)?;
    if ball.triples.len() <= config.fallback_budget {
        return Ok(ball);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(config.seed, &[query_id]));
    let mut keyed: Vec<(f64, Triple)> = ball
        .triples
        .iter()
        .map(|&t| {
            let w = (kg.incident(t.head).len() + kg.incident(t.tail).len()) as f64;
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, t)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.truncate(config.fallback_budget);
    let mut sg = QuerySubgraph::from_triples(query_id, keyed.into_iter().map(|(_, t)| t).collect(), query_entities, gold, kg.num_relations())?;
    sg.truncated = true;
    Ok(sg)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubgraphStats {
    pub num_queries: usize,
    pub mean_edges: f64,
    pub mean_relations: f64,
    pub mean_entities: f64,
    /// Percentage of queries whose every gold answer is a subgraph node.
    pub coverage_pct: f64,
}

impl SubgraphStats {
    pub fn compute<'a>(items: impl IntoIterator<Item = (&'a QuerySubgraph, &'a [EntityId])>) -> Self {
        let mut s = SubgraphStats::default();
        let (mut edges, mut rels, mut ents, mut covered) = (0usize, 0usize, 0usize, 0usize);
        for (sg, gold) in items {
            s.num_queries += 1;
            edges += sg.triples.len();
            rels += sg.distinct_relations();
            ents += sg.nodes.len();
            if gold.iter().all(|&a| sg.local_index(a).is_some()) {
                covered += 1;
            }
        }
        if s.num_queries > 0 {
            let n = s.num_queries as f64;
            s.mean_edges = edges as f64 / n;
            s.mean_relations = rels as f64 / n;
            s.mean_entities = ents as f64 / n;
            s.coverage_pct = 100.0 * covered as f64 / n;
        }
        s
    }

    pub const CSV_HEADER: &'static str = "label,num_queries,mean_edges,mean_relations,mean_entities,coverage_pct";

    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{label},{},{:.6},{:.6},{:.6},{:.6}",
            self.num_queries, self.mean_edges, self.mean_relations, self.mean_entities, self.coverage_pct
        )
    }

    pub fn write_csv(path: &Path, rows: &[(String, SubgraphStats)]) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for (label, s) in rows {
            writeln!(w, "{}", s.csv_row(label))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Whether every edge of `inner` also belongs to `outer`.
pub fn edge_subset(inner: &QuerySubgraph, outer: &QuerySubgraph) -> bool {
    let outer: HashSet<&Triple> = outer.triples.iter().collect();
    inner.triples.iter().all(|t| outer.contains(t))
}
