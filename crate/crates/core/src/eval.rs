//! Strict hits@1 and its per-shape aggregation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Split;

/// A query is solved only when every gold node scores strictly above every
/// other node. Ties fail, and so does a gold answer absent from the graph
/// (`gold_complete == false`) or an empty gold set.
pub fn strict_hit(scores: &[f64], gold: &[usize], gold_complete: bool) -> bool {
    if !gold_complete || gold.is_empty() {
        return false;
    }
    let mut is_gold = vec![false; scores.len()];
    for &g in gold {
        is_gold[g] = true;
    }
    let min_gold = gold.iter().map(|&g| scores[g]).fold(f64::INFINITY, f64::min);
    let max_other = scores
        .iter()
        .zip(&is_gold)
        .filter(|(_, &g)| !g)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    min_gold > max_other
}

/// Indices of the `n` highest scores, best first, ties by index.
pub fn rank_top(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Uniform random scores, the chance-level ranker.
pub fn random_scores(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: u64,
    pub split: Split,
    /// Pattern shape tag, or `"all"` when queries carry no shape.
    pub shape: String,
    pub hit: bool,
    pub num_gold: usize,
    /// Global ids of the highest ranked entities, best first.
    pub top: Vec<u64>,
    /// Why the query could not be scored, if it could not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeHits {
    pub hits: usize,
    pub total: usize,
    pub hits_at_1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitsSummary {
    pub per_shape: BTreeMap<String, ShapeHits>,
    /// Unweighted mean of the per-shape percentages.
    pub avg: f64,
    /// Percentage over all queries.
    pub overall: f64,
    pub num_queries: usize,
}

fn pct(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

impl HitsSummary {
    pub fn from_outcomes(outcomes: &[QueryOutcome]) -> Self {
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for o in outcomes {
            let c = counts.entry(o.shape.clone()).or_default();
            c.0 += o.hit as usize;
            c.1 += 1;
        }
        let per_shape: BTreeMap<String, ShapeHits> = counts
            .into_iter()
            .map(|(k, (hits, total))| {
                (
                    k,
                    ShapeHits {
                        hits,
                        total,
                        hits_at_1: pct(hits, total),
                    },
                )
            })
            .collect();
        let avg = if per_shape.is_empty() {
            0.0
        } else {
            per_shape.values().map(|s| s.hits_at_1).sum::<f64>() / per_shape.len() as f64
        };
        let hits = outcomes.iter().filter(|o| o.hit).count();
        HitsSummary {
            per_shape,
            avg,
            overall: pct(hits, outcomes.len()),
            num_queries: outcomes.len(),
        }
    }

    pub fn shape(&self, tag: &str) -> f64 {
        self.per_shape.get(tag).map_or(0.0, |s| s.hits_at_1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(shape: &str, hit: bool) -> QueryOutcome {
        QueryOutcome {
            query_id: 0,
            split: Split::Test,
            shape: shape.into(),
            hit,
            num_gold: 1,
            top: vec![],
            error: None,
        }
    }

    #[test]
    fn tie_with_weakest_answer_fails() {
        assert!(!strict_hit(&[0.9, 0.5, 0.5], &[0, 1], true));
    }

    #[test]
    fn answers_on_top_succeed() {
        assert!(strict_hit(&[0.9, 0.6, 0.5], &[0, 1], true));
        assert!(strict_hit(&[0.1, 0.6, 0.9], &[2], true));
    }

    #[test]
    fn missing_or_empty_gold_fails() {
        assert!(!strict_hit(&[0.9, 0.1], &[0], false));
        assert!(!strict_hit(&[0.9, 0.1], &[], true));
    }

    #[test]
    fn all_nodes_gold_succeeds() {
        assert!(strict_hit(&[0.1, 0.1], &[0, 1], true));
    }

    #[test]
    fn macro_and_micro_averages() {
        let outs = vec![outcome("2p", true), outcome("2p", true), outcome("2p", false), outcome("2i", false)];
        let s = HitsSummary::from_outcomes(&outs);
        assert!((s.shape("2p") - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.shape("2i"), 0.0);
        assert!((s.avg - 100.0 / 3.0).abs() < 1e-12);
        assert!((s.overall - 50.0).abs() < 1e-12);
    }
}
