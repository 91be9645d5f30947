//! Comparison systems: symbolic path voting and a TransE-style head on the
//! shared GNN.

pub mod cbr_path;
pub mod transe;

pub use cbr_path::{cbr_path_predict, PathCase, PathVoteTable, PathWeighting};
pub use transe::{evaluate_transe, train_transe, TranseConfig, TranseLoss, TranseModel};

use rayon::prelude::*;

use crate::eval::{rank_top, strict_hit, QueryOutcome};
use crate::synth::Dataset;
use crate::Split;

/// Path-voting outcome for every example of `split`, using the first `k`
/// retrieved cases of each.
pub fn evaluate_cbr_path(ds: &Dataset, split: Split, k: usize, max_hops: usize, weighting: PathWeighting) -> Vec<QueryOutcome> {
    let examples: Vec<_> = ds.split(split).collect();
    examples
        .par_iter()
        .map(|ex| {
            let cases: Vec<PathCase> = ex
                .knn
                .iter()
                .take(k)
                .map(|&id| {
                    let c = ds.example(id);
                    PathCase {
                        graph: &c.graph,
                        query_entities: &c.query_entities,
                        answers: &c.gold_answers,
                    }
                })
                .collect();
            let table = PathVoteTable::from_cases(&cases, max_hops, weighting);
            let scores = table.score(&ex.graph, &ex.query_entities);
            let gold: Vec<usize> = ex.gold_answers.iter().map(|e| e.index()).collect();
            QueryOutcome {
                query_id: ex.id,
                split: ex.split,
                shape: ex.shape.tag().to_string(),
                hit: strict_hit(&scores, &gold, true),
                num_gold: gold.len(),
                top: rank_top(&scores, 10).into_iter().map(|i| ex.entity_offset + i as u64).collect(),
                error: table.is_empty().then(|| "no chains mined".to_string()),
            }
        })
        .collect()
}
