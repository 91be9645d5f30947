//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cbr_subg::baselines::{transe::TranseModel, TranseConfig, TranseLoss};
use cbr_subg::eval::{HitsSummary, QueryOutcome};
use cbr_subg::gnn::{loss_and_gradients, GnnConfig, GnnModel, GraphInput};
use cbr_subg::kg::{Direction, EntityId, KnowledgeGraph, RelationId, Triple};
use cbr_subg::retrieval::Case;
use cbr_subg::subgraph::{ChainType, QuerySubgraph};
use cbr_subg::synth::{PatternType, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` entities, `r` relations and `m` distinct random triples without self loops.
pub fn random_graph(rng: &mut impl Rng, n: usize, r: usize, m: usize) -> KnowledgeGraph {
    let mut set = BTreeSet::new();
    let mut guard = 0;
    while set.len() < m && guard < 100 * m {
        guard += 1;
        let h = rng.gen_range(0..n as u32);
        let t = rng.gen_range(0..n as u32);
        if h != t {
            set.insert(Triple::new(h, rng.gen_range(0..r as u32), t));
        }
    }
    let triples: Vec<Triple> = set.into_iter().collect();
    KnowledgeGraph::build(&triples, n, r).unwrap()
}

// ---------------------------------------------------------------------------
// Pattern execution by exhaustive assignment.

/// Every injective assignment of the free variables to entities is tried in
/// full; an assignment matches when every pattern edge is a stored triple.
pub fn brute_force_answers(g: &KnowledgeGraph, pt: &PatternType, query: &[(Var, EntityId)]) -> Vec<EntityId> {
    let stored: HashSet<Triple> = g.triples().iter().copied().collect();
    let bound: BTreeMap<Var, EntityId> = query.iter().copied().collect();
    let free: Vec<Var> = pt.shape.variables().iter().copied().filter(|v| !bound.contains_key(v)).collect();
    let n = g.num_entities() as u32;
    let mut answers = BTreeSet::new();
    let mut assign = vec![0u32; free.len()];
    let total = (n as u64).pow(free.len() as u32);
    for code in 0..total {
        let mut c = code;
        for slot in assign.iter_mut() {
            *slot = (c % n as u64) as u32;
            c /= n as u64;
        }
        let mut full = bound.clone();
        for (v, &e) in free.iter().zip(&assign) {
            full.insert(*v, EntityId(e));
        }
        let distinct: BTreeSet<EntityId> = full.values().copied().collect();
        if distinct.len() != full.len() {
            continue;
        }
        let ok = pt.typed_edges().all(|(h, r, t)| stored.contains(&Triple {
            head: full[&h],
            relation: r,
            tail: full[&t],
        }));
        if ok {
            answers.insert(full[&Var::Ans]);
        }
    }
    answers.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Chain instantiation by walk enumeration.

fn step_targets(triples: &[Triple], u: EntityId, rel: RelationId, dir: Direction) -> Vec<(EntityId, Triple)> {
    triples
        .iter()
        .filter_map(|t| match dir {
            Direction::Forward if t.head == u && t.relation == rel => Some((t.tail, *t)),
            Direction::Backward if t.tail == u && t.relation == rel => Some((t.head, *t)),
            _ => None,
        })
        .collect()
}

fn walk(triples: &[Triple], u: EntityId, steps: &[(RelationId, Direction)], path: &mut Vec<Triple>, out: &mut BTreeSet<Triple>) {
    let Some((&(rel, dir), rest)) = steps.split_first() else {
        out.extend(path.iter().copied());
        return;
    };
    for (v, t) in step_targets(triples, u, rel, dir) {
        path.push(t);
        walk(triples, v, rest, path, out);
        path.pop();
    }
}

/// Edges of every complete walk of each chain from each start entity.
pub fn enumerate_chain_edges(g: &KnowledgeGraph, starts: &[EntityId], chains: &BTreeSet<ChainType>) -> BTreeSet<Triple> {
    let mut out = BTreeSet::new();
    for &s in starts {
        for c in chains {
            walk(g.triples(), s, &c.steps, &mut Vec::new(), &mut out);
        }
    }
    out
}

/// Endpoints of every complete walk of `chain` from `start`.
pub fn chain_endpoints(g: &KnowledgeGraph, start: EntityId, chain: &ChainType) -> BTreeSet<EntityId> {
    let mut frontier = BTreeSet::from([start]);
    for &(rel, dir) in &chain.steps {
        frontier = frontier
            .iter()
            .flat_map(|&u| step_targets(g.triples(), u, rel, dir))
            .map(|(v, _)| v)
            .collect();
    }
    frontier
}

/// Chain types of simple paths from `start` to `goal` of at most `max_hops`
/// steps, found by scanning the triple list.
pub fn simple_path_chains(g: &KnowledgeGraph, start: EntityId, goal: EntityId, max_hops: usize) -> BTreeSet<ChainType> {
    fn go(
        g: &KnowledgeGraph,
        at: EntityId,
        goal: EntityId,
        left: usize,
        visited: &mut Vec<EntityId>,
        steps: &mut Vec<(RelationId, Direction)>,
        out: &mut BTreeSet<ChainType>,
    ) {
        if at == goal && !steps.is_empty() {
            out.insert(ChainType { steps: steps.clone() });
        }
        if left == 0 {
            return;
        }
        for t in g.triples() {
            for (from, to, dir) in [(t.head, t.tail, Direction::Forward), (t.tail, t.head, Direction::Backward)] {
                if from == at && !visited.contains(&to) {
                    visited.push(to);
                    steps.push((t.relation, dir));
                    go(g, to, goal, left - 1, visited, steps, out);
                    steps.pop();
                    visited.pop();
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    go(g, start, goal, max_hops, &mut vec![start], &mut Vec::new(), &mut out);
    out
}

/// Path-vote scores recomputed from scratch: each chain is weighted by the
/// number of (case, query entity, answer) triples it connects.
pub fn path_vote_oracle(
    cases: &[(&KnowledgeGraph, Vec<EntityId>, Vec<EntityId>)],
    query: &KnowledgeGraph,
    query_entities: &[EntityId],
    max_hops: usize,
) -> Vec<f64> {
    let mut weight: BTreeMap<ChainType, f64> = BTreeMap::new();
    for (g, qes, answers) in cases {
        for &qe in qes {
            for &a in answers {
                for c in simple_path_chains(g, qe, a, max_hops) {
                    *weight.entry(c).or_default() += 1.0;
                }
            }
        }
    }
    let mut scores = vec![0.0; query.num_entities()];
    for (c, w) in &weight {
        for &qe in query_entities {
            for e in chain_endpoints(query, qe, c) {
                scores[e.index()] += w;
            }
        }
    }
    scores
}

// ---------------------------------------------------------------------------
// Nearest neighbors by a double loop.

pub fn naive_knn(cases: &[Case], query: &Case, k: usize) -> Vec<u64> {
    let q = query.embedding.as_ref().unwrap();
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sims = Vec::new();
    for c in cases {
        if c.case_id == query.case_id {
            continue;
        }
        let e = c.embedding.as_ref().unwrap();
        let mut dot = 0.0;
        let mut en = 0.0;
        for i in 0..e.len() {
            dot += q[i] * e[i];
            en += e[i] * e[i];
        }
        sims.push((c.case_id, dot / (qn * en.sqrt())));
    }
    // Selection by repeated maximum.
    let mut out = Vec::new();
    for _ in 0..k.min(sims.len()) {
        let mut best = 0;
        for i in 1..sims.len() {
            if sims[i].1 > sims[best].1 || (sims[i].1 == sims[best].1 && sims[i].0 < sims[best].0) {
                best = i;
            }
        }
        out.push(sims.remove(best).0);
    }
    out
}

pub fn random_cases(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Case> {
    (0..n as u64)
        .map(|id| Case {
            case_id: id,
            query_text: None,
            query_entities: vec![],
            answers: vec![],
            embedding: Some((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            pattern_type_id: None,
            split: cbr_subg::Split::Train,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Metric recount.

/// Averages recomputed from per-query rows.
pub fn recount(outcomes: &[QueryOutcome]) -> (f64, f64, BTreeMap<String, f64>) {
    let mut by_shape: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for o in outcomes {
        let e = by_shape.entry(o.shape.clone()).or_default();
        e.0 += if o.hit { 1.0 } else { 0.0 };
        e.1 += 1.0;
    }
    let per: BTreeMap<String, f64> = by_shape.iter().map(|(k, (h, t))| (k.clone(), 100.0 * h / t)).collect();
    let avg = per.values().sum::<f64>() / per.len().max(1) as f64;
    let hits = outcomes.iter().filter(|o| o.hit).count() as f64;
    (avg, 100.0 * hits / outcomes.len().max(1) as f64, per)
}

pub fn summary_matches_recount(s: &HitsSummary, outcomes: &[QueryOutcome]) -> bool {
    let (avg, overall, per) = recount(outcomes);
    (s.avg - avg).abs() <= 1e-9
        && (s.overall - overall).abs() <= 1e-9
        && per.iter().all(|(k, v)| (s.shape(k) - v).abs() <= 1e-9)
}

// ---------------------------------------------------------------------------
// Gradient fixtures.

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Random labeled subgraph over `n` entities with the first one or two as
/// query entities and the given answers.
pub fn fixture_graph(rng: &mut impl Rng, n: usize, r: usize, m: usize, answers: &[u32], use_distance: bool) -> GraphInput {
    let g = random_graph(rng, n, r, m);
    let qe = [EntityId(0)];
    let gold: Vec<EntityId> = answers.iter().map(|&a| EntityId(a)).collect();
    let sg = QuerySubgraph::from_graph(0, &g, &qe, Some(&gold)).unwrap();
    GraphInput::new(&sg, r, use_distance).unwrap()
}

pub struct GradientFixture {
    pub model: GnnModel,
    pub query: GraphInput,
    pub neighbors: Vec<GraphInput>,
}

/// A 10-node query graph with two 10-node cases and a two-layer model.
pub fn gradient_fixture(seed: u64) -> GradientFixture {
    let mut r = rng(seed);
    let query = fixture_graph(&mut r, 10, 3, 16, &[4, 7], true);
    let neighbors = vec![
        fixture_graph(&mut r, 10, 3, 16, &[3], true),
        fixture_graph(&mut r, 10, 3, 16, &[5, 8], true),
    ];
    let model = GnnModel::new(GnnConfig {
        num_layers: 2,
        hidden_dim: 6,
        num_relations: 3,
        use_distance: true,
        temperature: 0.5,
        seed,
    })
    .unwrap();
    GradientFixture { model, query, neighbors }
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter of the contrastive loss.
pub fn gnn_gradient_error(f: &GradientFixture) -> f64 {
    let refs: Vec<&GraphInput> = f.neighbors.iter().collect();
    let (_, grad) = loss_and_gradients(&f.model, &f.query, &refs).unwrap();
    let mut m = f.model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..m.num_params() {
        let orig = m.params()[i];
        m.params_mut()[i] = orig + FD_EPS;
        let up = loss_and_gradients(&m, &f.query, &refs).unwrap().0;
        m.params_mut()[i] = orig - FD_EPS;
        let down = loss_and_gradients(&m, &f.query, &refs).unwrap().0;
        m.params_mut()[i] = orig;
        worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * FD_EPS)));
    }
    worst
}

/// Same check for the TransE-style loss, over GNN parameters and the
/// relation table.
pub fn transe_gradient_error(f: &GradientFixture, kind: TranseLoss) -> f64 {
    let cfg = TranseConfig {
        loss: kind,
        margin: 1.0,
        ..TranseConfig::default()
    };
    let base = TranseModel::new(f.model.clone(), 2, 3);
    let pattern = Some(1);
    let loss = |m: &TranseModel| m.loss_and_gradients(&f.query, pattern, &cfg).unwrap().0;
    let (_, g_gnn, g_rel) = base.loss_and_gradients(&f.query, pattern, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    let mut m = base.clone();
    for i in 0..m.gnn.num_params() {
        let orig = m.gnn.params()[i];
        m.gnn.params_mut()[i] = orig + FD_EPS;
        let up = loss(&m);
        m.gnn.params_mut()[i] = orig - FD_EPS;
        let down = loss(&m);
        m.gnn.params_mut()[i] = orig;
        worst = worst.max(relative_error(g_gnn[i], (up - down) / (2.0 * FD_EPS)));
    }
    for i in 0..m.relations.data().len() {
        let orig = m.relations.data()[i];
        m.relations.data_mut()[i] = orig + FD_EPS;
        let up = loss(&m);
        m.relations.data_mut()[i] = orig - FD_EPS;
        let down = loss(&m);
        m.relations.data_mut()[i] = orig;
        worst = worst.max(relative_error(g_rel[i], (up - down) / (2.0 * FD_EPS)));
    }
    worst
}

/// A uniformly random permutation of `0..n`.
pub fn permutation(rng: &mut impl Rng, n: usize) -> Vec<u32> {
    let mut p: Vec<u32> = (0..n as u32).collect();
    p.shuffle(rng);
    p
}

// ---------------------------------------------------------------------------
// Structural properties, each a function of a seed.

use cbr_subg::gnn::{contrastive_loss, episode_loss, infer, score_against_neighbors, CaseAnswers, NodeEmbeddings};
use cbr_subg::subgraph::{edge_subset, khop_subgraph, mine_chain_types, replay_chains, ReplayConfig};

pub type Property = fn(u64) -> Result<(), String>;

pub const PROPERTIES: &[(&str, Property)] = &[
    ("isomorphism equivariance", prop_equivariance),
    ("entity-id inductiveness", prop_inductive),
    ("loss non-negativity", prop_loss_nonnegative),
    ("score additivity over neighbors", prop_score_additivity),
    ("temperature-independent rankings", prop_tau_independence),
    ("adaptive subgraph within naive ball", prop_adaptive_within_naive),
];

fn small_model(seed: u64, r: usize, tau: f64) -> GnnModel {
    GnnModel::new(GnnConfig {
        num_layers: 2,
        hidden_dim: 8,
        num_relations: r,
        use_distance: true,
        temperature: tau,
        seed,
    })
    .unwrap()
}

fn labeled(g: &KnowledgeGraph, qe: &[EntityId], gold: &[EntityId], r: usize) -> GraphInput {
    let sg = QuerySubgraph::from_triples(0, g.triples().to_vec(), qe, Some(gold), r).unwrap();
    GraphInput::new(&sg, r, true).unwrap()
}

fn relabel(g: &KnowledgeGraph, map: impl Fn(EntityId) -> EntityId, n: usize) -> KnowledgeGraph {
    let t: Vec<Triple> = g
        .triples()
        .iter()
        .map(|t| Triple {
            head: map(t.head),
            relation: t.relation,
            tail: map(t.tail),
        })
        .collect();
    KnowledgeGraph::build(&t, n, g.num_relations()).unwrap()
}

fn embeddings(model: &GnnModel, g: &GraphInput) -> NodeEmbeddings {
    NodeEmbeddings::new(model.forward(g).unwrap())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn prop_equivariance(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.gen_range(4..14);
    let m = r.gen_range(0..3 * n);
    let g = random_graph(&mut r, n, 3, m);
    let p = permutation(&mut r, n);
    let pg = relabel(&g, |e| EntityId(p[e.index()]), n);
    let q = EntityId(r.gen_range(0..n as u32));
    let model = small_model(seed, 3, 0.1);
    let a = model.forward(&labeled(&g, &[q], &[], 3)).map_err(|e| e.to_string())?;
    let gi = labeled(&g, &[q], &[], 3);
    let pgi = labeled(&pg, &[EntityId(p[q.index()])], &[], 3);
    let b = model.forward(&pgi).map_err(|e| e.to_string())?;
    for (i, e) in gi.entities.iter().enumerate() {
        let j = pgi.entities.iter().position(|&x| x.0 == p[e.index()]).ok_or("node lost under relabeling")?;
        for (x, y) in a.row(i).iter().zip(b.row(j)) {
            if !close(*x, *y, 1e-12) {
                return Err(format!("node {e:?}: {x} vs {y}"));
            }
        }
    }
    Ok(())
}

pub fn prop_inductive(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.gen_range(4..12);
    let offset = r.gen_range(1..10_000u32);
    let shift = |e: EntityId| EntityId(e.0 + offset);
    let model = small_model(seed, 3, 0.1);
    let q = random_graph(&mut r, n, 3, 2 * n);
    let c = random_graph(&mut r, n, 3, 2 * n);
    let (qe, ca) = (EntityId(0), vec![EntityId(1), EntityId(2)]);
    let big = n + offset as usize;
    let score = |qg: &KnowledgeGraph, cg: &KnowledgeGraph, f: &dyn Fn(EntityId) -> EntityId| {
        let qi = labeled(qg, &[f(qe)], &[], 3);
        let ci = labeled(cg, &[f(qe)], &ca.iter().map(|&e| f(e)).collect::<Vec<_>>(), 3);
        let (qe_, ce_) = (embeddings(&model, &qi), embeddings(&model, &ci));
        let cases = [CaseAnswers {
            embeddings: &ce_,
            answers: &ci.answers,
        }];
        score_against_neighbors(&qe_, &cases).map(|s| (qi.entities.clone(), s))
    };
    let base = score(&q, &c, &|e| e);
    let moved = score(&relabel(&q, shift, big), &relabel(&c, shift, big), &shift);
    match (base, moved) {
        (Ok((ea, sa)), Ok((eb, sb))) => {
            if ea.iter().map(|&e| shift(e)).collect::<Vec<_>>() != eb || sa != sb {
                return Err("scores changed under entity renaming".into());
            }
            Ok(())
        }
        (Err(_), Err(_)) => Ok(()),
        _ => Err("renaming changed whether the query can be scored".into()),
    }
}

pub fn prop_loss_nonnegative(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.gen_range(1..40);
    let scale = [1e-3, 1.0, 1e3][r.gen_range(0..3)];
    let scores: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0) * scale).collect();
    let answers: Vec<usize> = (0..n).filter(|_| r.gen_bool(0.3)).collect();
    let tau = [0.01, 0.05, 0.2, 1.0][r.gen_range(0..4)];
    if !answers.is_empty() {
        let (loss, _) = contrastive_loss(&scores, &answers, tau).map_err(|e| e.to_string())?;
        if !(loss >= 0.0) {
            return Err(format!("loss {loss}"));
        }
    }
    let f = gradient_fixture(seed);
    let q = embeddings(&f.model, &f.query);
    let ns: Vec<NodeEmbeddings> = f.neighbors.iter().map(|g| embeddings(&f.model, g)).collect();
    let cases: Vec<CaseAnswers> = ns
        .iter()
        .zip(&f.neighbors)
        .map(|(e, g)| CaseAnswers {
            embeddings: e,
            answers: &g.answers,
        })
        .collect();
    let eg = episode_loss(&q, &f.query.answers, &cases, tau).map_err(|e| e.to_string())?;
    if !(eg.loss >= 0.0) {
        return Err(format!("episode loss {}", eg.loss));
    }
    Ok(())
}

pub fn prop_score_additivity(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let model = small_model(seed, 3, 0.1);
    let n = r.gen_range(3..12);
    let q = labeled(&random_graph(&mut r, n, 3, 2 * n), &[EntityId(0)], &[], 3);
    let k = r.gen_range(2..5);
    let cs: Vec<GraphInput> = (0..k)
        .map(|_| {
            let g = random_graph(&mut r, n, 3, 2 * n);
            let t = g.triples()[r.gen_range(0..g.num_triples())];
            labeled(&g, &[EntityId(0)], &[if r.gen_bool(0.5) { t.head } else { t.tail }], 3)
        })
        .collect();
    let qe = embeddings(&model, &q);
    let ce: Vec<NodeEmbeddings> = cs.iter().map(|g| embeddings(&model, g)).collect();
    let cases: Vec<CaseAnswers> = ce
        .iter()
        .zip(&cs)
        .map(|(e, g)| CaseAnswers {
            embeddings: e,
            answers: &g.answers,
        })
        .collect();
    let total = score_against_neighbors(&qe, &cases).map_err(|e| e.to_string())?;
    let mut sum = vec![0.0; total.len()];
    for c in &cases {
        for (s, x) in sum.iter_mut().zip(score_against_neighbors(&qe, std::slice::from_ref(c)).map_err(|e| e.to_string())?) {
            *s += x;
        }
    }
    for (a, b) in total.iter().zip(&sum) {
        if !close(*a, *b, 1e-12) {
            return Err(format!("{a} vs {b}"));
        }
    }
    Ok(())
}

pub fn prop_tau_independence(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.gen_range(3..14);
    let q = labeled(&random_graph(&mut r, n, 3, 2 * n), &[EntityId(0)], &[], 3);
    let cs: Vec<GraphInput> = (0..3)
        .map(|_| labeled(&random_graph(&mut r, n, 3, 2 * n), &[EntityId(0)], &[EntityId(1)], 3))
        .collect();
    let refs: Vec<&GraphInput> = cs.iter().collect();
    let a = small_model(seed, 3, r.gen_range(0.01..0.1));
    let mut b = a.clone();
    b.set_temperature(r.gen_range(0.5..5.0)).map_err(|e| e.to_string())?;
    let ra = infer(&a, &q, &refs, n).map_err(|e| e.to_string())?;
    let rb = infer(&b, &q, &refs, n).map_err(|e| e.to_string())?;
    if ra != rb {
        return Err("ranking depends on temperature".into());
    }
    Ok(())
}

pub fn prop_adaptive_within_naive(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.gen_range(6..30);
    let hops = r.gen_range(1..4);
    let case = random_graph(&mut r, n, 3, 2 * n);
    let m = r.gen_range(n..4 * n);
    let query = random_graph(&mut r, n, 3, m);
    let cq = [EntityId(r.gen_range(0..n as u32))];
    let ca: Vec<EntityId> = (0..2).map(|_| EntityId(r.gen_range(0..n as u32))).collect();
    let chains = mine_chain_types(&case, &cq, &ca, hops);
    let qe: Vec<EntityId> = (0..r.gen_range(1..3)).map(|_| EntityId(r.gen_range(0..n as u32))).collect();
    let config = ReplayConfig {
        fallback_hops: hops.min(2),
        ..ReplayConfig::default()
    };
    let adaptive = replay_chains(&query, seed, &qe, &chains, None, &config).map_err(|e| e.to_string())?;
    let naive = khop_subgraph(&query, seed, &qe, hops, None).map_err(|e| e.to_string())?;
    if !edge_subset(&adaptive, &naive) || adaptive.triples.len() > naive.triples.len() {
        return Err(format!("{} adaptive edges not within the {hops}-hop ball", adaptive.triples.len()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Oracle equivalence runs over many fixtures.

use cbr_subg::retrieval::CaseBase;
use cbr_subg::synth::{execute_pattern, ground_pattern, sample_graph_with_pattern, sample_type_system, Growth, Shape, SynthConfig};

/// Compares pattern execution with exhaustive assignment on `fixtures`
/// sampled graphs, each with the inserted and a random query binding.
/// Returns how many comparisons had a non-empty answer set.
pub fn check_execute_pattern(fixtures: usize) -> Result<usize, String> {
    let ts = sample_type_system(4, 0.5, 11);
    let mut r = rng(1);
    let mut nonempty = 0;
    for i in 0..fixtures {
        let shape = Shape::ALL[i % 5];
        let pt = ground_pattern(&ts, shape, i as u32, &mut r).map_err(|e| e.to_string())?;
        let cfg = SynthConfig {
            num_entity_types: 4,
            num_entities: 14,
            edge_prob: 0.5,
            growth: if i % 2 == 0 { Growth::AllPairs } else { Growth::Frontier },
            ..SynthConfig::default()
        };
        let ex = sample_graph_with_pattern(&ts, &pt, &cfg, i as u64).map_err(|e| e.to_string())?;
        let mut bindings = vec![ex.query_bindings()];
        let random: Vec<_> = ex
            .query_bindings()
            .iter()
            .enumerate()
            .map(|(j, &(v, _))| (v, EntityId((r.gen_range(0..14u32) + j as u32) % 14)))
            .collect();
        if random.len() < 2 || random[0].1 != random[1].1 {
            bindings.push(random);
        }
        for b in bindings {
            let got = execute_pattern(&ex.graph, &pt, &b);
            let want = brute_force_answers(&ex.graph, &pt, &b);
            if got != want {
                return Err(format!("fixture {i} bindings {b:?}: {got:?} vs {want:?}"));
            }
            nonempty += !got.is_empty() as usize;
        }
        if ex.gold_answers != execute_pattern(&ex.graph, &pt, &ex.query_bindings()) {
            return Err(format!("fixture {i}: stored gold differs from execution"));
        }
    }
    Ok(nonempty)
}

/// Compares unbounded chain replay with walk enumeration. Returns how many
/// fixtures replayed at least one edge.
pub fn check_replay(fixtures: usize) -> Result<usize, String> {
    let mut r = rng(2);
    let mut with_edges = 0;
    for i in 0..fixtures {
        let case = random_graph(&mut r, 14, 3, 30);
        let query = random_graph(&mut r, 14, 3, 30);
        let qe = vec![EntityId(r.gen_range(0..14))];
        let answers: Vec<EntityId> = (0..2).map(|_| EntityId(r.gen_range(0..14))).collect();
        let chains = mine_chain_types(&case, &qe, &answers, 3);
        let starts = vec![EntityId(r.gen_range(0..14)), EntityId(r.gen_range(0..14))];
        let sg = replay_chains(&query, i as u64, &starts, &chains, None, &ReplayConfig::unbounded()).map_err(|e| e.to_string())?;
        let want = enumerate_chain_edges(&query, &starts, &chains);
        let got: BTreeSet<Triple> = sg.triples.iter().copied().collect();
        if got != want {
            return Err(format!("fixture {i}: {} replayed edges vs {} enumerated", got.len(), want.len()));
        }
        with_edges += !want.is_empty() as usize;
    }
    Ok(with_edges)
}

/// Every case of a random base queried against it, top 5.
pub fn check_knn(n: usize) -> Result<(), String> {
    let mut r = rng(4);
    let cases = random_cases(&mut r, n, 12);
    let base = CaseBase::normalize_and_index(cases.clone()).map_err(|e| e.to_string())?;
    for q in &cases {
        let got: Vec<u64> = base.knn(q, 5).map_err(|e| e.to_string())?.into_iter().map(|(id, _)| id).collect();
        let want = naive_knn(&cases, q, 5);
        if got != want {
            return Err(format!("query {}: {got:?} vs {want:?}", q.case_id));
        }
    }
    Ok(())
}
