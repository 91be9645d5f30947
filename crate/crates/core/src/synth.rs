//! Synthetic pattern-reasoning benchmark.
//!
//! A random type system decides which relation may join which pair of entity
//! types. Pattern types are reasoning shapes (2p, 3p, 2i, ip, pi) whose edges
//! carry relation types. Every example is a fresh 120-entity typed random
//! graph, grown outward from the query entities, into which one grounding of
//! its pattern type is inserted; the gold answers are whatever the pattern
//! matches in the final graph.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, KnowledgeGraph, RelationId, Triple};
use crate::{derive_seed, Split};

pub const GENERATOR_VERSION: &str = "synth-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_entity_types: u32,
    pub relation_prob: f64,
    pub num_entities: usize,
    pub edge_prob: f64,
    pub max_hops: usize,
    pub num_pattern_types: usize,
    /// Graphs per pattern type in each of train / valid / test.
    pub per_split: usize,
    pub max_resamples: usize,
    pub growth: Growth,
}

/// Which entity pairs the outward growth examines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Growth {
    /// A popped entity proposes edges only to entities not yet placed, so the
    /// random edges form a forest rooted at the query entities.
    Frontier,
    /// A popped entity proposes edges to every entity not yet popped.
    AllPairs,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_entity_types: 16,
            relation_prob: 0.3,
            num_entities: 120,
            edge_prob: 0.4,
            max_hops: 3,
            num_pattern_types: 200,
            per_split: 5,
            max_resamples: 100,
            growth: Growth::Frontier,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AllowedRelation {
    pub head_type: u32,
    pub relation: RelationId,
    pub tail_type: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeSystem {
    pub num_entity_types: u32,
    /// Sorted by relation id; relation ids are dense.
    pub allowed: Vec<AllowedRelation>,
}

impl TypeSystem {
    pub fn num_relations(&self) -> usize {
        self.allowed.len()
    }

    pub fn outgoing(&self, head_type: u32) -> impl Iterator<Item = &AllowedRelation> {
        self.allowed.iter().filter(move |a| a.head_type == head_type)
    }

    pub fn incoming(&self, tail_type: u32) -> impl Iterator<Item = &AllowedRelation> {
        self.allowed.iter().filter(move |a| a.tail_type == tail_type)
    }

    /// `table[h * T + t]` lists the relations allowed from type `h` to type `t`.
    pub fn between_table(&self) -> Vec<Vec<RelationId>> {
        let t = self.num_entity_types as usize;
        let mut table = vec![Vec::new(); t * t];
        for a in &self.allowed {
            table[a.head_type as usize * t + a.tail_type as usize].push(a.relation);
        }
        table
    }

    pub fn admits(&self, head_type: u32, relation: RelationId, tail_type: u32) -> bool {
        self.allowed
            .get(relation.index())
            .is_some_and(|a| a.head_type == head_type && a.tail_type == tail_type)
    }
}

/// Erdős–Rényi over ordered type pairs: every `(head_type, tail_type)` pair
/// independently receives its own relation type with probability
/// `relation_prob`.
pub fn sample_type_system(num_entity_types: u32, relation_prob: f64, seed: u64) -> TypeSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut allowed = Vec::new();
    for head_type in 0..num_entity_types {
        for tail_type in 0..num_entity_types {
            if rng.gen::<f64>() < relation_prob {
                allowed.push(AllowedRelation {
                    head_type,
                    relation: RelationId(allowed.len() as u32),
                    tail_type,
                });
            }
        }
    }
    TypeSystem {
        num_entity_types,
        allowed,
    }
}

/// Pattern variables. `E1`/`E2` are query entities, `Ans` the answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Var {
    E1,
    E2,
    V1,
    V2,
    Ans,
}

impl Var {
    pub fn is_query(self) -> bool {
        matches!(self, Var::E1 | Var::E2)
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Shape {
    #[serde(rename = "2p")]
    TwoP,
    #[serde(rename = "3p")]
    ThreeP,
    #[serde(rename = "2i")]
    TwoI,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "pi")]
    Pi,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::TwoP, Shape::ThreeP, Shape::TwoI, Shape::Ip, Shape::Pi];

    pub fn tag(self) -> &'static str {
        match self {
            Shape::TwoP => "2p",
            Shape::ThreeP => "3p",
            Shape::TwoI => "2i",
            Shape::Ip => "ip",
            Shape::Pi => "pi",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| s.tag() == tag)
    }

    /// Abstract `(head, tail)` edges. Listed so that every edge, taken in
    /// order, has exactly one endpoint not yet typed when grounding from `E1`.
    pub fn edges(self) -> &'static [(Var, Var)] {
        use Var::*;
        match self {
            Shape::TwoP => &[(E1, V1), (V1, Ans)],
            Shape::ThreeP => &[(E1, V1), (V1, V2), (V2, Ans)],
            Shape::TwoI => &[(E1, Ans), (E2, Ans)],
            Shape::Ip => &[(E1, V1), (E2, V1), (V1, Ans)],
            Shape::Pi => &[(E1, V1), (V1, Ans), (E2, Ans)],
        }
    }

    pub fn variables(self) -> &'static [Var] {
        use Var::*;
        match self {
            Shape::TwoP => &[E1, V1, Ans],
            Shape::ThreeP => &[E1, V1, V2, Ans],
            Shape::TwoI => &[E1, E2, Ans],
            Shape::Ip | Shape::Pi => &[E1, E2, V1, Ans],
        }
    }

    pub fn query_variables(self) -> &'static [Var] {
        match self {
            Shape::TwoP | Shape::ThreeP => &[Var::E1],
            _ => &[Var::E1, Var::E2],
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternType {
    pub id: u32,
    pub shape: Shape,
    /// Relation of each edge in `shape.edges()` order.
    pub edge_relations: Vec<RelationId>,
    pub node_types: BTreeMap<Var, u32>,
}

impl PatternType {
    pub fn node_type(&self, var: Var) -> u32 {
        self.node_types[&var]
    }

    pub fn typed_edges(&self) -> impl Iterator<Item = (Var, RelationId, Var)> + '_ {
        self.shape
            .edges()
            .iter()
            .zip(&self.edge_relations)
            .map(|(&(h, t), &r)| (h, r, t))
    }
}

const GROUNDING_RETRIES: usize = 1000;

/// Assigns entity types and relations to a shape by forward sampling from
/// `E1`: pick a type for `E1`, then for each edge sample a relation among the
/// ones allowed at its already-typed endpoint, which fixes the type of the
/// other endpoint. Dead ends restart from scratch.
pub fn ground_pattern(ts: &TypeSystem, shape: Shape, id: u32, rng: &mut impl Rng) -> Result<PatternType> {
    if ts.num_entity_types == 0 {
        return Err(Error::Ungroundable(shape.tag()));
    }
    'attempt: for _ in 0..GROUNDING_RETRIES {
        let mut node_types = BTreeMap::new();
        node_types.insert(Var::E1, rng.gen_range(0..ts.num_entity_types));
        let mut edge_relations = Vec::with_capacity(shape.edges().len());
        for &(head, tail) in shape.edges() {
            let choice = match (node_types.get(&head).copied(), node_types.get(&tail).copied()) {
                (Some(h), None) => {
                    let options: Vec<_> = ts.outgoing(h).collect();
                    if options.is_empty() {
                        continue 'attempt;
                    }
                    let a = options[rng.gen_range(0..options.len())];
                    node_types.insert(tail, a.tail_type);
                    a.relation
                }
                (None, Some(t)) => {
                    let options: Vec<_> = ts.incoming(t).collect();
                    if options.is_empty() {
                        continue 'attempt;
                    }
                    let a = options[rng.gen_range(0..options.len())];
                    node_types.insert(head, a.head_type);
                    a.relation
                }
                (Some(h), Some(t)) => {
                    let options: Vec<_> = ts
                        .outgoing(h)
                        .filter(|a| a.tail_type == t)
                        .collect();
                    if options.is_empty() {
                        continue 'attempt;
                    }
                    options[rng.gen_range(0..options.len())].relation
                }
                (None, None) => unreachable!("shape edges are listed in grounding order"),
            };
            edge_relations.push(choice);
        }
        return Ok(PatternType {
            id,
            shape,
            edge_relations,
            node_types,
        });
    }
    Err(Error::Ungroundable(shape.tag()))
}

/// All `Ans` bindings over injective assignments of the pattern's free
/// variables (every pattern variable binds a distinct entity) such that each
/// pattern edge exists in `g`. Sorted ascending.
pub fn execute_pattern(g: &KnowledgeGraph, pt: &PatternType, query_bindings: &[(Var, EntityId)]) -> Vec<EntityId> {
    let mut binding: [Option<EntityId>; 5] = [None; 5];
    for &(var, e) in query_bindings {
        binding[var.slot()] = Some(e);
    }
    let edges: Vec<_> = pt.typed_edges().collect();
    let mut found = vec![false; g.num_entities()];
    match_rest(g, &edges, pt.shape.variables(), &mut binding, &mut found);
    found
        .iter()
        .enumerate()
        .filter(|(_, &hit)| hit)
        .map(|(i, _)| EntityId(i as u32))
        .collect()
}

fn match_rest(
    g: &KnowledgeGraph,
    edges: &[(Var, RelationId, Var)],
    vars: &[Var],
    binding: &mut [Option<EntityId>; 5],
    found: &mut [bool],
) {
    // Pick the first unbound variable with a bound neighbor, else the first unbound one.
    let free: Vec<Var> = vars.iter().copied().filter(|v| binding[v.slot()].is_none()).collect();
    if free.is_empty() {
        if let Some(ans) = binding[Var::Ans.slot()] {
            found[ans.index()] = true;
        }
        return;
    }
    let anchor = free.iter().find_map(|&v| {
        edges.iter().find_map(|&(h, r, t)| {
            if t == v {
                binding[h.slot()].map(|e| (v, e, r, Direction::Forward))
            } else if h == v {
                binding[t.slot()].map(|e| (v, e, r, Direction::Backward))
            } else {
                None
            }
        })
    });
    let (var, candidates): (Var, Vec<EntityId>) = match anchor {
        Some((v, from, r, dir)) => (v, g.step_neighbors(from, r, dir).iter().map(|s| s.neighbor).collect()),
        None => (free[0], (0..g.num_entities() as u32).map(EntityId).collect()),
    };
    for cand in candidates {
        if binding.contains(&Some(cand)) {
            continue;
        }
        binding[var.slot()] = Some(cand);
        let consistent = edges.iter().all(|&(h, r, t)| match (binding[h.slot()], binding[t.slot()]) {
            (Some(he), Some(te)) => g.has_edge(he, r, te),
            _ => true,
        });
        if consistent {
            match_rest(g, edges, vars, binding, found);
        }
        binding[var.slot()] = None;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticExample {
    pub id: u64,
    pub split: Split,
    pub pattern_type_id: u32,
    pub shape: Shape,
    /// Entity ids are local (`0..num_entities`); `entity_offset` maps them
    /// into the dataset-wide id space where no two graphs share entities.
    pub graph: KnowledgeGraph,
    pub entity_offset: u64,
    pub query_entities: Vec<EntityId>,
    /// The inserted grounding, for inspection.
    pub bindings: BTreeMap<Var, EntityId>,
    pub gold_answers: Vec<EntityId>,
    pub knn: Vec<u64>,
}

impl SyntheticExample {
    pub fn query_bindings(&self) -> Vec<(Var, EntityId)> {
        self.bindings
            .iter()
            .filter(|(v, _)| v.is_query())
            .map(|(&v, &e)| (v, e))
            .collect()
    }
}

enum Attempt {
    Ok(SyntheticExample),
    Degenerate,
}

/// Samples one example for `pt`, retrying with an incremented seed when the
/// draw is degenerate (no gold answer, every entity of the answer type is an
/// answer, an entity left beyond `max_hops`, or no entity available for a
/// pattern variable).
pub fn sample_graph_with_pattern(
    ts: &TypeSystem,
    pt: &PatternType,
    config: &SynthConfig,
    seed: u64,
) -> Result<SyntheticExample> {
    let between = ts.between_table();
    for attempt in 0..=config.max_resamples {
        if let Attempt::Ok(ex) = try_sample(ts, &between, pt, config, seed.wrapping_add(attempt as u64))? {
            return Ok(ex);
        }
    }
    Err(Error::SamplingExhausted(config.max_resamples + 1))
}

fn try_sample(
    ts: &TypeSystem,
    between: &[Vec<RelationId>],
    pt: &PatternType,
    config: &SynthConfig,
    seed: u64,
) -> Result<Attempt> {
    let n = config.num_entities;
    let num_types = ts.num_entity_types;
    let query_vars = pt.shape.query_variables();
    if n < pt.shape.variables().len() || num_types == 0 {
        return Ok(Attempt::Degenerate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut types: Vec<u32> = (0..n).map(|_| rng.gen_range(0..num_types)).collect();
    let query_slots = sample_indices(&mut rng, n, query_vars.len()).into_vec();
    let mut bindings = BTreeMap::new();
    for (&var, &slot) in query_vars.iter().zip(&query_slots) {
        types[slot] = pt.node_type(var);
        bindings.insert(var, EntityId(slot as u32));
    }

    // Grow outward from the query entities. Each unordered pair is examined
    // once, when the first of its endpoints leaves the queue; pairs that would
    // put a new entity beyond `max_hops` are never examined.
    let t = num_types as usize;
    let mut depth: Vec<Option<usize>> = vec![None; n];
    let mut processed = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    for &slot in &query_slots {
        depth[slot] = Some(0);
        queue.push_back(slot);
    }
    let mut triples = Vec::new();
    while let Some(u) = queue.pop_front() {
        processed[u] = true;
        let du = depth[u].unwrap();
        for v in 0..n {
            if v == u || processed[v] || (config.growth == Growth::Frontier && depth[v].is_some()) {
                continue;
            }
            if depth[v].is_none() && du >= config.max_hops {
                continue;
            }
            for (a, b) in [(u, v), (v, u)] {
                let options = &between[types[a] as usize * t + types[b] as usize];
                if options.is_empty() {
                    continue;
                }
                let r = options[rng.gen_range(0..options.len())];
                if rng.gen::<f64>() < config.edge_prob {
                    triples.push(Triple {
                        head: EntityId(a as u32),
                        relation: r,
                        tail: EntityId(b as u32),
                    });
                    if depth[v].is_none() {
                        depth[v] = Some(du + 1);
                        queue.push_back(v);
                    }
                }
            }
        }
    }
    if depth.iter().any(Option::is_none) {
        return Ok(Attempt::Degenerate);
    }

    // Ground the remaining pattern variables on distinct entities of the
    // required types and insert the pattern's edges.
    for &var in pt.shape.variables() {
        if var.is_query() {
            continue;
        }
        let want = pt.node_type(var);
        let candidates: Vec<u32> = (0..n as u32)
            .filter(|&e| types[e as usize] == want && !bindings.values().any(|b| b.0 == e))
            .collect();
        if candidates.is_empty() {
            return Ok(Attempt::Degenerate);
        }
        bindings.insert(var, EntityId(candidates[rng.gen_range(0..candidates.len())]));
    }
    for (h, r, tl) in pt.typed_edges() {
        triples.push(Triple {
            head: bindings[&h],
            relation: r,
            tail: bindings[&tl],
        });
    }

    let graph = KnowledgeGraph::build(&triples, n, ts.num_relations())?.with_entity_types(types)?;
    let query_bindings: Vec<(Var, EntityId)> = query_vars.iter().map(|&v| (v, bindings[&v])).collect();
    let gold = execute_pattern(&graph, pt, &query_bindings);
    let answer_type = pt.node_type(Var::Ans);
    let eligible = (0..n)
        .filter(|&e| graph.entity_types().unwrap()[e] == answer_type && !query_slots.contains(&e))
        .count();
    if gold.is_empty() || gold.len() == eligible {
        return Ok(Attempt::Degenerate);
    }
    Ok(Attempt::Ok(SyntheticExample {
        id: 0,
        split: Split::Train,
        pattern_type_id: pt.id,
        shape: pt.shape,
        graph,
        entity_offset: 0,
        query_entities: query_bindings.iter().map(|&(_, e)| e).collect(),
        bindings,
        gold_answers: gold,
        knn: Vec::new(),
    }))
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: SynthConfig,
    pub seed: u64,
    pub type_system: TypeSystem,
    pub pattern_types: Vec<PatternType>,
    /// Ordered train, then valid, then test; `examples[i].id == i`.
    pub examples: Vec<SyntheticExample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SyntheticExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn example(&self, id: u64) -> &SyntheticExample {
        &self.examples[id as usize]
    }

    pub fn pattern_type(&self, id: u32) -> &PatternType {
        &self.pattern_types[id as usize]
    }
}

/// Samples the type system, `num_pattern_types` pattern types with shapes
/// drawn uniformly, and `3 * per_split` graphs per pattern type. Each
/// example's neighbor list is the train graphs of its pattern type (itself
/// excluded), in ascending id order.
pub fn assemble_dataset(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    let type_system = sample_type_system(config.num_entity_types, config.relation_prob, derive_seed(seed, &[0]));

    let pattern_types = (0..config.num_pattern_types)
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, p as u64]));
            let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
            ground_pattern(&type_system, shape, p as u32, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let per_split = config.per_split;
    let jobs: Vec<(Split, usize, usize)> = Split::ALL
        .iter()
        .enumerate()
        .flat_map(|(s, &split)| {
            (0..config.num_pattern_types).flat_map(move |p| (0..per_split).map(move |j| (split, p, s * per_split + j)))
        })
        .collect();

    let mut examples = jobs
        .par_iter()
        .map(|&(split, p, j)| {
            let mut ex = sample_graph_with_pattern(
                &type_system,
                &pattern_types[p],
                config,
                derive_seed(seed, &[2, p as u64, j as u64]),
            )?;
            ex.split = split;
            Ok(ex)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut train_by_pattern: Vec<Vec<u64>> = vec![Vec::new(); config.num_pattern_types];
    for (i, ex) in examples.iter_mut().enumerate() {
        ex.id = i as u64;
        ex.entity_offset = i as u64 * config.num_entities as u64;
        if ex.split == Split::Train {
            train_by_pattern[ex.pattern_type_id as usize].push(ex.id);
        }
    }
    for ex in examples.iter_mut() {
        ex.knn = train_by_pattern[ex.pattern_type_id as usize]
            .iter()
            .copied()
            .filter(|&id| id != ex.id)
            .collect();
    }

    Ok(Dataset {
        config: config.clone(),
        seed,
        type_system,
        pattern_types,
        examples,
    })
}

/// One line of `<split>.jsonl`. Entity ids are dataset-wide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: u64,
    pub split: Split,
    pub pattern_type_id: u32,
    pub shape: Shape,
    pub entity_offset: u64,
    pub num_entities: usize,
    pub entity_types: Vec<u32>,
    pub triples: Vec<[u64; 3]>,
    pub query_entities: Vec<u64>,
    pub gold_answers: Vec<u64>,
    pub knn: Vec<u64>,
}

impl ExampleRecord {
    pub fn from_example(ex: &SyntheticExample) -> Self {
        let off = ex.entity_offset;
        ExampleRecord {
            id: ex.id,
            split: ex.split,
            pattern_type_id: ex.pattern_type_id,
            shape: ex.shape,
            entity_offset: off,
            num_entities: ex.graph.num_entities(),
            entity_types: ex.graph.entity_types().map(<[u32]>::to_vec).unwrap_or_default(),
            triples: ex
                .graph
                .triples()
                .iter()
                .map(|t| [off + t.head.0 as u64, t.relation.0 as u64, off + t.tail.0 as u64])
                .collect(),
            query_entities: ex.query_entities.iter().map(|e| off + e.0 as u64).collect(),
            gold_answers: ex.gold_answers.iter().map(|e| off + e.0 as u64).collect(),
            knn: ex.knn.clone(),
        }
    }

    pub fn into_example(self, pt: &PatternType, num_relations: usize) -> Result<SyntheticExample> {
        let off = self.entity_offset;
        let local = |g: u64| -> Result<EntityId> {
            g.checked_sub(off)
                .filter(|&l| l < self.num_entities as u64)
                .map(|l| EntityId(l as u32))
                .ok_or_else(|| Error::Config(format!("example {}: entity {g} outside its id range", self.id)))
        };
        let triples = self
            .triples
            .iter()
            .map(|&[h, r, t]| Ok(Triple { head: local(h)?, relation: RelationId(r as u32), tail: local(t)? }))
            .collect::<Result<Vec<_>>>()?;
        let mut graph = KnowledgeGraph::build(&triples, self.num_entities, num_relations)?;
        if !self.entity_types.is_empty() {
            graph = graph.with_entity_types(self.entity_types)?;
        }
        let query_entities = self.query_entities.iter().map(|&e| local(e)).collect::<Result<Vec<_>>>()?;
        let bindings = pt
            .shape
            .query_variables()
            .iter()
            .copied()
            .zip(query_entities.iter().copied())
            .collect();
        Ok(SyntheticExample {
            id: self.id,
            split: self.split,
            pattern_type_id: self.pattern_type_id,
            shape: self.shape,
            graph,
            entity_offset: off,
            query_entities,
            bindings,
            gold_answers: self.gold_answers.iter().map(|&e| local(e)).collect::<Result<Vec<_>>>()?,
            knn: self.knn,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_version: String,
    pub seed: u64,
    pub config: SynthConfig,
    pub counts: BTreeMap<String, usize>,
    pub num_relations: usize,
    pub shape_counts: BTreeMap<String, usize>,
    pub files: BTreeMap<String, String>,
    pub type_system: TypeSystem,
    pub pattern_types: Vec<PatternType>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Dataset {
    pub fn manifest(&self, files: BTreeMap<String, String>) -> Manifest {
        let mut counts = BTreeMap::new();
        for split in Split::ALL {
            counts.insert(split.to_string(), self.split(split).count());
        }
        let mut shape_counts = BTreeMap::new();
        for pt in &self.pattern_types {
            *shape_counts.entry(pt.shape.tag().to_string()).or_insert(0) += 1;
        }
        Manifest {
            generator_version: GENERATOR_VERSION.to_string(),
            seed: self.seed,
            config: self.config.clone(),
            counts,
            num_relations: self.type_system.num_relations(),
            shape_counts,
            files,
            type_system: self.type_system.clone(),
            pattern_types: self.pattern_types.clone(),
        }
    }

    /// Writes `train.jsonl`, `valid.jsonl`, `test.jsonl` and `manifest.json`;
    /// returns the sha256 of the manifest.
    pub fn write_dir(&self, dir: &Path) -> Result<String> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let mut files = BTreeMap::new();
        for split in Split::ALL {
            let mut buf = Vec::new();
            for ex in self.split(split) {
                serde_json::to_writer(&mut buf, &ExampleRecord::from_example(ex))?;
                buf.push(b'\n');
            }
            let name = format!("{split}.jsonl");
            let path = dir.join(&name);
            fs::write(&path, &buf).map_err(|e| Error::file(&path, e))?;
            files.insert(name, sha256_hex(&buf));
        }
        let manifest = serde_json::to_vec_pretty(&self.manifest(files))?;
        let path = dir.join("manifest.json");
        fs::write(&path, &manifest).map_err(|e| Error::file(&path, e))?;
        Ok(sha256_hex(&manifest))
    }

    pub fn read_dir(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.json");
        let file = File::open(&path).map_err(|e| Error::file(&path, e))?;
        let manifest: Manifest = serde_json::from_reader(BufReader::new(file))?;
        let num_relations = manifest.type_system.num_relations();
        let mut examples = Vec::new();
        for split in Split::ALL {
            let path = dir.join(format!("{split}.jsonl"));
            let file = File::open(&path).map_err(|e| Error::file(&path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: ExampleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                let pt = manifest
                    .pattern_types
                    .get(record.pattern_type_id as usize)
                    .ok_or(Error::UnknownPatternType(record.pattern_type_id))?;
                examples.push(record.into_example(pt, num_relations)?);
            }
        }
        examples.sort_by_key(|e| e.id);
        if examples.iter().enumerate().any(|(i, e)| e.id != i as u64) {
            return Err(Error::Config(format!("{}: example ids are not contiguous", dir.display())));
        }
        // Bindings of free variables are not serialized; recover the query ones only.
        Ok(Dataset {
            config: manifest.config,
            seed: manifest.seed,
            type_system: manifest.type_system,
            pattern_types: manifest.pattern_types,
            examples,
        })
    }
}
