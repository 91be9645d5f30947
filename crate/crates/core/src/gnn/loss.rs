//! Similarity scoring against neighbor answer sets and the contrastive loss.
//!
//! With `u_x` the L2-normalized embedding of node `x` in the query subgraph
//! and `c_j` the mean normalized embedding of the answers of neighbor `j`,
//!
//! ```text
//! S(x) = Σ_j u_x · c_j
//! L    = logsumexp_{x ∈ V} S(x)/τ − logsumexp_{a ∈ A} S(a)/τ
//! ```

use crate::error::{Error, Result};
use crate::gnn::features::GraphInput;
use crate::gnn::matrix::{axpy, dot, Matrix};
use crate::gnn::model::GnnModel;
use crate::kg::EntityId;

/// Last-layer node representations together with their unit-norm view.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings {
    raw: Matrix,
    unit: Matrix,
    norms: Vec<f64>,
}

impl NodeEmbeddings {
    /// Rows with zero norm stay zero in the normalized view, so they have
    /// cosine 0 with everything.
    pub fn new(raw: Matrix) -> Self {
        let mut unit = raw.clone();
        let mut norms = Vec::with_capacity(raw.rows());
        for i in 0..raw.rows() {
            let norm = dot(raw.row(i), raw.row(i)).sqrt();
            if norm > 0.0 {
                unit.row_mut(i).iter_mut().for_each(|x| *x /= norm);
            }
            norms.push(norm);
        }
        NodeEmbeddings { raw, unit, norms }
    }

    pub fn raw(&self) -> &Matrix {
        &self.raw
    }

    pub fn normalized(&self) -> &Matrix {
        &self.unit
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn num_nodes(&self) -> usize {
        self.raw.rows()
    }

    pub fn dim(&self) -> usize {
        self.raw.cols()
    }

    /// Maps a gradient with respect to the normalized rows back to the raw rows.
    pub fn normalize_backward(&self, d_unit: &Matrix) -> Matrix {
        let mut d_raw = Matrix::zeros(self.raw.rows(), self.raw.cols());
        for i in 0..self.raw.rows() {
            let norm = self.norms[i];
            if norm == 0.0 {
                continue;
            }
            let u = self.unit.row(i);
            let du = d_unit.row(i);
            let proj = dot(u, du);
            for ((d, &ui), &dui) in d_raw.row_mut(i).iter_mut().zip(u).zip(du) {
                *d = (dui - ui * proj) / norm;
            }
        }
        d_raw
    }
}

/// A retrieved case: its node embeddings and the local indices of its answers.
#[derive(Clone, Copy, Debug)]
pub struct CaseAnswers<'a> {
    pub embeddings: &'a NodeEmbeddings,
    pub answers: &'a [usize],
}

/// Mean normalized answer embedding of every neighbor that has answers,
/// paired with the neighbor's position.
pub fn neighbor_centroids(neighbors: &[CaseAnswers]) -> Result<Vec<(usize, Vec<f64>)>> {
    let out: Vec<_> = neighbors
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.answers.is_empty())
        .map(|(j, c)| {
            let mut centroid = vec![0.0; c.embeddings.dim()];
            for &a in c.answers {
                axpy(1.0, c.embeddings.normalized().row(a), &mut centroid);
            }
            let inv = 1.0 / c.answers.len() as f64;
            centroid.iter_mut().for_each(|x| *x *= inv);
            (j, centroid)
        })
        .collect();
    if out.is_empty() {
        return Err(Error::NoUsableCases);
    }
    Ok(out)
}

fn scores_from_centroids(query: &NodeEmbeddings, centroids: &[(usize, Vec<f64>)]) -> Result<Vec<f64>> {
    for (_, c) in centroids {
        if c.len() != query.dim() {
            return Err(Error::Dimension(format!("case embedding dim {} vs query {}", c.len(), query.dim())));
        }
    }
    Ok((0..query.num_nodes())
        .map(|x| {
            let u = query.normalized().row(x);
            centroids.iter().map(|(_, c)| dot(u, c)).sum()
        })
        .collect())
}

/// `S(x)` for every node of the query subgraph. Neighbors without answers
/// are skipped; if none remain the result is `NoUsableCases`.
pub fn score_against_neighbors(query: &NodeEmbeddings, neighbors: &[CaseAnswers]) -> Result<Vec<f64>> {
    scores_from_centroids(query, &neighbor_centroids(neighbors)?)
}

/// Node indices by descending score; ties go to the lower index.
pub fn rank_nodes(scores: &[f64]) -> Vec<usize> {
    crate::eval::rank_top(scores, scores.len())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Loss and `∂L/∂S` for scores `S` over all nodes with answer set `answers`.
pub fn contrastive_loss(scores: &[f64], answers: &[usize], tau: f64) -> Result<(f64, Vec<f64>)> {
    if answers.is_empty() {
        return Err(Error::NoAnswers);
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let logits: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let lse_all = log_sum_exp(logits.iter().copied());
    let lse_ans = log_sum_exp(answers.iter().map(|&a| logits[a]));
    let loss = (lse_all - lse_ans).max(0.0);
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - lse_all).exp() / tau).collect();
    for &a in answers {
        grad[a] -= (logits[a] - lse_ans).exp() / tau;
    }
    Ok((loss, grad))
}

/// Loss of one query against its cases, with gradients with respect to the
/// raw embeddings of the query and of every neighbor.
#[derive(Clone, Debug)]
pub struct EpisodeGradient {
    pub loss: f64,
    pub d_query: Matrix,
    /// `None` for neighbors that contributed nothing (no answers).
    pub d_neighbors: Vec<Option<Matrix>>,
}

pub fn episode_loss(
    query: &NodeEmbeddings,
    query_answers: &[usize],
    neighbors: &[CaseAnswers],
    tau: f64,
) -> Result<EpisodeGradient> {
    let centroids = neighbor_centroids(neighbors)?;
    let scores = scores_from_centroids(query, &centroids)?;
    let (loss, g) = contrastive_loss(&scores, query_answers, tau)?;
    let dim = query.dim();
    let mut c_sum = vec![0.0; dim];
    for (_, c) in &centroids {
        axpy(1.0, c, &mut c_sum);
    }
    let mut du = Matrix::zeros(query.num_nodes(), dim);
    let mut dc = vec![0.0; dim];
    for (x, &gx) in g.iter().enumerate() {
        if gx == 0.0 {
            continue;
        }
        axpy(gx, &c_sum, du.row_mut(x));
        axpy(gx, query.normalized().row(x), &mut dc);
    }
    let mut d_neighbors = vec![None; neighbors.len()];
    for (j, _) in &centroids {
        let case = &neighbors[*j];
        let mut du_j = Matrix::zeros(case.embeddings.num_nodes(), dim);
        let inv = 1.0 / case.answers.len() as f64;
        for &a in case.answers {
            axpy(inv, &dc, du_j.row_mut(a));
        }
        d_neighbors[*j] = Some(case.embeddings.normalize_backward(&du_j));
    }
    Ok(EpisodeGradient {
        loss,
        d_query: query.normalize_backward(&du),
        d_neighbors,
    })
}

/// Loss of one query and its full parameter gradient. Each distinct graph
/// gets one forward and one backward pass.
pub fn loss_and_gradients(model: &GnnModel, query: &GraphInput, neighbors: &[&GraphInput]) -> Result<(f64, Vec<f64>)> {
    let q_cache = model.forward_cached(query)?;
    let q_emb = NodeEmbeddings::new(q_cache.output.clone());
    let n_caches = neighbors.iter().map(|g| model.forward_cached(g)).collect::<Result<Vec<_>>>()?;
    let n_embs: Vec<NodeEmbeddings> = n_caches.iter().map(|c| NodeEmbeddings::new(c.output.clone())).collect();
    let cases: Vec<CaseAnswers> = n_embs
        .iter()
        .zip(neighbors)
        .map(|(e, g)| CaseAnswers {
            embeddings: e,
            answers: &g.answers,
        })
        .collect();
    let eg = episode_loss(&q_emb, &query.answers, &cases, model.config().temperature)?;
    let mut grad = vec![0.0; model.num_params()];
    model.backward(query, &q_cache, &eg.d_query, &mut grad);
    for ((g, cache), d) in neighbors.iter().zip(&n_caches).zip(&eg.d_neighbors) {
        if let Some(d) = d {
            model.backward(g, cache, d, &mut grad);
        }
    }
    Ok((eg.loss, grad))
}

/// Scores of every node of `query` against the answers of `neighbors`.
pub fn score_query(model: &GnnModel, query: &GraphInput, neighbors: &[&GraphInput]) -> Result<Vec<f64>> {
    let q = NodeEmbeddings::new(model.forward(query)?);
    let embs = neighbors
        .iter()
        .filter(|g| !g.answers.is_empty())
        .map(|g| Ok((NodeEmbeddings::new(model.forward(g)?), &g.answers[..])))
        .collect::<Result<Vec<_>>>()?;
    let cases: Vec<CaseAnswers> = embs
        .iter()
        .map(|(e, a)| CaseAnswers {
            embeddings: e,
            answers: a,
        })
        .collect();
    score_against_neighbors(&q, &cases)
}

/// The `top_n` highest scoring entities of the query subgraph.
pub fn infer(model: &GnnModel, query: &GraphInput, neighbors: &[&GraphInput], top_n: usize) -> Result<Vec<(EntityId, f64)>> {
    let scores = score_query(model, query, neighbors)?;
    Ok(rank_nodes(&scores)
        .into_iter()
        .take(top_n)
        .map(|i| (query.entities[i], scores[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[&[f64]]) -> NodeEmbeddings {
        let cols = rows[0].len();
        NodeEmbeddings::new(Matrix::from_vec(rows.len(), cols, rows.concat()))
    }

    #[test]
    fn identical_answer_scores_one() {
        let q = emb(&[&[3.0, 4.0], &[0.0, 1.0]]);
        let n = emb(&[&[0.6, 0.8]]);
        let s = score_against_neighbors(
            &q,
            &[CaseAnswers {
                embeddings: &n,
                answers: &[0],
            }],
        )
        .unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert!((s[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_embedding_scores_zero() {
        let q = emb(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let n = emb(&[&[1.0, 0.0]]);
        let s = score_against_neighbors(
            &q,
            &[CaseAnswers {
                embeddings: &n,
                answers: &[0],
            }],
        )
        .unwrap();
        assert_eq!(s, vec![0.0, 1.0]);
    }

    #[test]
    fn neighbors_without_answers_are_dropped() {
        let q = emb(&[&[1.0, 0.0]]);
        let n = emb(&[&[1.0, 0.0]]);
        let empty = CaseAnswers {
            embeddings: &n,
            answers: &[],
        };
        assert!(matches!(score_against_neighbors(&q, &[empty]), Err(Error::NoUsableCases)));
        assert!(matches!(score_against_neighbors(&q, &[]), Err(Error::NoUsableCases)));
    }

    #[test]
    fn all_answers_gives_zero_loss() {
        let (loss, grad) = contrastive_loss(&[0.3, -0.2, 0.9], &[0, 1, 2], 0.1).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn closed_form_two_nodes() {
        let (loss, _) = contrastive_loss(&[1.0, 0.0], &[0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((loss - -(e / (e + 1.0)).ln()).abs() < 1e-15);
        assert!((loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (loss, grad) = contrastive_loss(&[1e4, -1e4, 0.0], &[1], 1.0).unwrap();
        assert!(loss.is_finite());
        assert!((loss - 2e4).abs() < 1e-6);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn no_answers_is_an_error() {
        assert!(matches!(contrastive_loss(&[1.0], &[], 1.0), Err(Error::NoAnswers)));
    }

    #[test]
    fn ranking_ties_by_index() {
        assert_eq!(rank_nodes(&[0.5, 0.9, 0.5, 0.1]), vec![1, 0, 2, 3]);
    }

    #[test]
    fn normalize_backward_matches_finite_difference() {
        let raw = Matrix::from_vec(1, 3, vec![0.3, -1.2, 0.7]);
        let w = [0.4, 0.1, -0.9];
        let e = NodeEmbeddings::new(raw.clone());
        let d = e.normalize_backward(&Matrix::from_vec(1, 3, w.to_vec()));
        for k in 0..3 {
            let f = |delta: f64| {
                let mut m = raw.clone();
                m.row_mut(0)[k] += delta;
                dot(NodeEmbeddings::new(m).normalized().row(0), &w)
            };
            let fd = (f(1e-6) - f(-1e-6)) / 2e-6;
            assert!((fd - d.row(0)[k]).abs() < 1e-8);
        }
    }
}
