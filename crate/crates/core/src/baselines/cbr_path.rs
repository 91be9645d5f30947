//! Path voting: chains that connect each retrieved case's query entities
//! to its answers are replayed from the target query's entities, and every
//! reached node collects the chain's weight.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::kg::{EntityId, KnowledgeGraph};
use crate::subgraph::{mine_chain_types, replay_chain, ChainType};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathWeighting {
    /// Number of (case, query entity, answer) pairs the chain connects.
    #[default]
    Count,
    /// Mean fraction of the chain's endpoints that are answers, over the
    /// (case, query entity) pairs where the chain replays.
    Precision,
}

/// A solved case as seen by the path baseline.
#[derive(Clone, Copy, Debug)]
pub struct PathCase<'a> {
    pub graph: &'a KnowledgeGraph,
    pub query_entities: &'a [EntityId],
    pub answers: &'a [EntityId],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathVoteTable {
    pub weights: BTreeMap<ChainType, f64>,
}

impl PathVoteTable {
    pub fn from_cases(cases: &[PathCase], max_hops: usize, weighting: PathWeighting) -> Self {
        let mut counts: BTreeMap<ChainType, f64> = BTreeMap::new();
        for case in cases {
            for &qe in case.query_entities {
                for &a in case.answers {
                    for chain in mine_chain_types(case.graph, &[qe], &[a], max_hops) {
                        *counts.entry(chain).or_default() += 1.0;
                    }
                }
            }
        }
        let weights = match weighting {
            PathWeighting::Count => counts,
            PathWeighting::Precision => counts
                .into_keys()
                .filter_map(|chain| {
                    let mut sum = 0.0;
                    let mut n = 0usize;
                    for case in cases {
                        for &qe in case.query_entities {
                            let ends = replay_chain(case.graph, qe, &chain, None).endpoints;
                            if ends.is_empty() {
                                continue;
                            }
                            let hits = ends.iter().filter(|e| case.answers.contains(e)).count();
                            sum += hits as f64 / ends.len() as f64;
                            n += 1;
                        }
                    }
                    (n > 0 && sum > 0.0).then(|| (chain, sum / n as f64))
                })
                .collect(),
        };
        PathVoteTable { weights }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Accrued weight of every entity of `graph`. Each (chain, query entity)
    /// pair adds the chain's weight once to every endpoint it reaches.
    pub fn score(&self, graph: &KnowledgeGraph, query_entities: &[EntityId]) -> Vec<f64> {
        let mut scores = vec![0.0; graph.num_entities()];
        for (chain, &w) in &self.weights {
            for &qe in query_entities {
                for e in replay_chain(graph, qe, chain, None).endpoints {
                    scores[e.index()] += w;
                }
            }
        }
        scores
    }
}

/// Entities with positive score, best first, ties by id. Empty when no
/// chain replays.
pub fn cbr_path_predict(
    graph: &KnowledgeGraph,
    query_entities: &[EntityId],
    cases: &[PathCase],
    max_hops: usize,
    weighting: PathWeighting,
) -> Vec<(EntityId, f64)> {
    let table = PathVoteTable::from_cases(cases, max_hops, weighting);
    let scores = table.score(graph, query_entities);
    let mut ranked: Vec<(EntityId, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0)
        .map(|(i, &s)| (EntityId(i as u32), s))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Direction, RelationId, Triple};

    fn graph(triples: &[(u32, u32, u32)], n: usize) -> KnowledgeGraph {
        let t: Vec<Triple> = triples.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect();
        KnowledgeGraph::build(&t, n, 3).unwrap()
    }

    #[test]
    fn single_hop_chain_unique_instantiation() {
        let case_g = graph(&[(0, 1, 1), (0, 2, 2)], 3);
        let query_g = graph(&[(0, 1, 2), (0, 2, 1)], 3);
        let case = PathCase {
            graph: &case_g,
            query_entities: &[EntityId(0)],
            answers: &[EntityId(1)],
        };
        let ranked = cbr_path_predict(&query_g, &[EntityId(0)], &[case], 3, PathWeighting::Count);
        assert_eq!(ranked, vec![(EntityId(2), 1.0)]);
    }

    #[test]
    fn intersection_collects_both_chains() {
        // case: 0 -r0-> 2 <-r1- 1
        let case_g = graph(&[(0, 0, 2), (1, 1, 2)], 3);
        // query: 0 -r0-> 3, 0 -r0-> 4, 1 -r1-> 4, 1 -r1-> 5
        let query_g = graph(&[(0, 0, 3), (0, 0, 4), (1, 1, 4), (1, 1, 5)], 6);
        let case = PathCase {
            graph: &case_g,
            query_entities: &[EntityId(0), EntityId(1)],
            answers: &[EntityId(2)],
        };
        let table = PathVoteTable::from_cases(&[case], 1, PathWeighting::Count);
        assert_eq!(table.weights.len(), 2);
        let ranked = cbr_path_predict(&query_g, &[EntityId(0), EntityId(1)], &[case], 1, PathWeighting::Count);
        assert_eq!(ranked[0], (EntityId(4), 2.0));
        assert_eq!(ranked[1].1, 1.0);
    }

    #[test]
    fn counts_accumulate_over_cases() {
        let g = graph(&[(0, 1, 1)], 2);
        let case = PathCase {
            graph: &g,
            query_entities: &[EntityId(0)],
            answers: &[EntityId(1)],
        };
        let table = PathVoteTable::from_cases(&[case, case, case], 2, PathWeighting::Count);
        let chain = ChainType {
            steps: vec![(RelationId(1), Direction::Forward)],
        };
        assert_eq!(table.weights[&chain], 3.0);
    }

    #[test]
    fn no_replay_gives_empty_ranking() {
        let case_g = graph(&[(0, 1, 1)], 2);
        let query_g = graph(&[(0, 2, 1)], 2);
        let case = PathCase {
            graph: &case_g,
            query_entities: &[EntityId(0)],
            answers: &[EntityId(1)],
        };
        assert!(cbr_path_predict(&query_g, &[EntityId(0)], &[case], 3, PathWeighting::Count).is_empty());
    }

    #[test]
    fn precision_downweights_ambiguous_chains() {
        // r1 reaches the answer and a distractor; r2 reaches only the answer.
        let case_g = graph(&[(0, 1, 1), (0, 1, 2), (0, 2, 1)], 3);
        let case = PathCase {
            graph: &case_g,
            query_entities: &[EntityId(0)],
            answers: &[EntityId(1)],
        };
        let table = PathVoteTable::from_cases(&[case], 1, PathWeighting::Precision);
        let w = |r| {
            table.weights[&ChainType {
                steps: vec![(RelationId(r), Direction::Forward)],
            }]
        };
        assert_eq!(w(1), 0.5);
        assert_eq!(w(2), 1.0);
    }
}
