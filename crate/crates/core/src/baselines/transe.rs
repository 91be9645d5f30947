//! Translation scoring on top of the shared GNN: the pattern type of a
//! query acts as its relation and candidates are ranked by
//! `−‖h_q + r_p − h_x‖`, with `h_q` the mean embedding of the query nodes.
//! No retrieved cases are used.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{HitsSummary, QueryOutcome};
use crate::gnn::matrix::{axpy, dot, Matrix};
use crate::gnn::train::{epoch_order, outcome, Adam, EpochLog, EpisodeSet, TrainConfig, TrainLog};
use crate::gnn::{GnnModel, GraphInput};
use crate::{derive_seed, Split};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranseLoss {
    /// Cross-entropy over all nodes with every gold answer a positive.
    #[default]
    Softmax,
    /// Mean hinge `max(0, γ − s_a + s_x)` over (answer, non-answer) pairs.
    Margin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranseConfig {
    pub loss: TranseLoss,
    pub margin: f64,
    /// Training runs this many times the GNN's epoch budget.
    pub epoch_multiplier: usize,
}

impl Default for TranseConfig {
    fn default() -> Self {
        TranseConfig {
            loss: TranseLoss::Softmax,
            margin: 1.0,
            epoch_multiplier: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranseModel {
    pub gnn: GnnModel,
    /// One translation vector per pattern type.
    pub relations: Matrix,
}

fn query_centroid(emb: &Matrix, query_nodes: &[usize]) -> Result<Vec<f64>> {
    if query_nodes.is_empty() {
        return Err(Error::Dimension("query has no entities in its graph".into()));
    }
    let mut h = vec![0.0; emb.cols()];
    for &q in query_nodes {
        axpy(1.0, emb.row(q), &mut h);
    }
    let inv = 1.0 / query_nodes.len() as f64;
    h.iter_mut().for_each(|x| *x *= inv);
    Ok(h)
}

/// `−‖h_q + r − h_x‖` for every node `x`.
pub fn transe_scores(emb: &Matrix, query_nodes: &[usize], r: &[f64]) -> Result<Vec<f64>> {
    let mut t = query_centroid(emb, query_nodes)?;
    axpy(1.0, r, &mut t);
    Ok((0..emb.rows())
        .map(|x| {
            let d: f64 = t.iter().zip(emb.row(x)).map(|(a, b)| (a - b) * (a - b)).sum();
            -d.sqrt()
        })
        .collect())
}

/// Loss with gradients with respect to the node embeddings and `r`.
pub fn transe_loss(
    emb: &Matrix,
    query_nodes: &[usize],
    r: &[f64],
    answers: &[usize],
    kind: TranseLoss,
    margin: f64,
) -> Result<(f64, Matrix, Vec<f64>)> {
    if answers.is_empty() {
        return Err(Error::NoAnswers);
    }
    let scores = transe_scores(emb, query_nodes, r)?;
    let n = scores.len();
    let mut is_answer = vec![false; n];
    answers.iter().for_each(|&a| is_answer[a] = true);
    let (loss, ds) = match kind {
        TranseLoss::Softmax => crate::gnn::loss::contrastive_loss(&scores, answers, 1.0)?,
        TranseLoss::Margin => {
            let negatives: Vec<usize> = (0..n).filter(|&x| !is_answer[x]).collect();
            let mut ds = vec![0.0; n];
            let mut loss = 0.0;
            if !negatives.is_empty() {
                let inv = 1.0 / (answers.len() * negatives.len()) as f64;
                for &a in answers {
                    for &x in &negatives {
                        let v = margin - scores[a] + scores[x];
                        if v > 0.0 {
                            loss += v * inv;
                            ds[a] -= inv;
                            ds[x] += inv;
                        }
                    }
                }
            }
            (loss, ds)
        }
    };
    let mut t = query_centroid(emb, query_nodes)?;
    axpy(1.0, r, &mut t);
    let mut d_emb = Matrix::zeros(emb.rows(), emb.cols());
    let mut d_t = vec![0.0; emb.cols()];
    let mut diff = vec![0.0; emb.cols()];
    for x in 0..n {
        if ds[x] == 0.0 || scores[x] == 0.0 {
            continue;
        }
        for ((d, &a), &b) in diff.iter_mut().zip(&t).zip(emb.row(x)) {
            *d = a - b;
        }
        // s = −‖t − h_x‖, so ∂s/∂t = (t − h_x)/s and ∂s/∂h_x = −(t − h_x)/s.
        let c = ds[x] / scores[x];
        axpy(c, &diff, &mut d_t);
        axpy(-c, &diff, d_emb.row_mut(x));
    }
    let inv = 1.0 / query_nodes.len() as f64;
    for &q in query_nodes {
        axpy(inv, &d_t, d_emb.row_mut(q));
    }
    Ok((loss, d_emb, d_t))
}

impl TranseModel {
    /// Relation vectors drawn uniformly from `±6/sqrt(dim)`.
    pub fn new(gnn: GnnModel, num_pattern_types: usize, seed: u64) -> Self {
        let dim = gnn.output_dim();
        let bound = 6.0 / (dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7472_616e]));
        let data = (0..num_pattern_types * dim).map(|_| rng.gen_range(-bound..bound)).collect();
        TranseModel {
            gnn,
            relations: Matrix::from_vec(num_pattern_types, dim, data),
        }
    }

    fn relation(&self, pattern: Option<u32>) -> Result<&[f64]> {
        match pattern {
            Some(p) if (p as usize) < self.relations.rows() => Ok(self.relations.row(p as usize)),
            Some(p) => Err(Error::UnknownPatternType(p)),
            None => Err(Error::Config("query has no pattern type".into())),
        }
    }

    pub fn scores(&self, g: &GraphInput, pattern: Option<u32>) -> Result<Vec<f64>> {
        let r = self.relation(pattern)?;
        transe_scores(&self.gnn.forward(g)?, &g.query_nodes, r)
    }

    /// Loss for one query with gradients for the GNN parameters and the
    /// relation table (row-major, same shape as `relations`).
    pub fn loss_and_gradients(
        &self,
        g: &GraphInput,
        pattern: Option<u32>,
        cfg: &TranseConfig,
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let mut gnn_grad = vec![0.0; self.gnn.num_params()];
        let mut table_grad = vec![0.0; self.relations.data().len()];
        let loss = self.accumulate(g, pattern, cfg, &mut gnn_grad, &mut table_grad)?;
        Ok((loss, gnn_grad, table_grad))
    }

    fn accumulate(
        &self,
        g: &GraphInput,
        pattern: Option<u32>,
        cfg: &TranseConfig,
        gnn_grad: &mut [f64],
        table_grad: &mut [f64],
    ) -> Result<f64> {
        let r = self.relation(pattern)?;
        let cache = self.gnn.forward_cached(g)?;
        let (loss, d_emb, d_r) = transe_loss(&cache.output, &g.query_nodes, r, &g.answers, cfg.loss, cfg.margin)?;
        self.gnn.backward(g, &cache, &d_emb, gnn_grad);
        let dim = self.relations.cols();
        let p = pattern.unwrap() as usize;
        axpy(1.0, &d_r, &mut table_grad[p * dim..(p + 1) * dim]);
        Ok(loss)
    }
}

/// Trains GNN and relation table jointly for `epoch_multiplier ×
/// train.epochs` epochs, keeping the best validation state.
pub fn train_transe(model: &mut TranseModel, set: &EpisodeSet, train: &TrainConfig, cfg: &TranseConfig) -> Result<TrainLog> {
    train.validate()?;
    let usable: Vec<usize> = set
        .split(Split::Train)
        .into_iter()
        .filter(|&e| !set.graphs[set.episodes[e].query].answers.is_empty())
        .collect();
    let valid = set.split(Split::Valid);
    let mut log = TrainLog {
        skipped_queries: set.split(Split::Train).len() - usable.len(),
        ..TrainLog::default()
    };
    let mut adam_gnn = Adam::new(model.gnn.num_params(), train);
    let mut adam_rel = Adam::new(model.relations.data().len(), train);
    let mut best_state = model.clone();
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0;
    let seed = derive_seed(train.seed, &[0x7472_616e]);
    for epoch in 1..=train.epochs * cfg.epoch_multiplier.max(1) {
        let order = epoch_order(set, &usable, 0, seed, epoch);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for batch in order.chunks(train.accumulation) {
            let parts = batch
                .par_iter()
                .map(|&e| {
                    let ep = &set.episodes[e];
                    model.loss_and_gradients(&set.graphs[ep.query], ep.pattern_type, cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut g_gnn = vec![0.0; model.gnn.num_params()];
            let mut g_rel = vec![0.0; model.relations.data().len()];
            for (loss, gg, gr) in &parts {
                epoch_loss += loss;
                axpy(1.0, gg, &mut g_gnn);
                axpy(1.0, gr, &mut g_rel);
            }
            if !epoch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: epoch_loss,
                    epoch,
                    step: steps,
                    diagnostics: format!("layer norms {:?}", model.gnn.layer_norms()),
                });
            }
            adam_gnn.step(model.gnn.params_mut(), &g_gnn);
            adam_rel.step(model.relations.data_mut(), &g_rel);
            steps += 1;
        }
        let v = if valid.is_empty() {
            None
        } else {
            Some(HitsSummary::from_outcomes(&evaluate_transe(model, set, &valid)?))
        };
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / usable.len().max(1) as f64,
            valid_avg: v.as_ref().map_or(0.0, |v| v.avg),
            valid_overall: v.as_ref().map_or(0.0, |v| v.overall),
            steps,
        };
        log::info!("transe epoch {epoch}: loss {:.5} valid avg {:.2}", entry.train_loss, entry.valid_avg);
        let score = if v.is_some() { entry.valid_avg } else { -entry.train_loss };
        log.epochs.push(entry);
        if score > best {
            best = score;
            best_state = model.clone();
            log.best_epoch = epoch;
            log.best_valid_avg = log.epochs.last().unwrap().valid_avg;
            since_best = 0;
        } else {
            since_best += 1;
            if train.patience > 0 && since_best >= train.patience * cfg.epoch_multiplier.max(1) {
                break;
            }
        }
    }
    *model = best_state;
    Ok(log)
}

pub fn evaluate_transe(model: &TranseModel, set: &EpisodeSet, episodes: &[usize]) -> Result<Vec<QueryOutcome>> {
    episodes
        .par_iter()
        .map(|&e| {
            let ep = &set.episodes[e];
            let scores = model.scores(&set.graphs[ep.query], ep.pattern_type);
            if let Err(Error::UnknownPatternType(p)) = scores {
                return Err(Error::UnknownPatternType(p));
            }
            Ok(outcome(set, ep, scores))
        })
        .collect()
}

/// Adding the same vector to `h_q + r` and to `h_x` leaves the score unchanged.
pub fn translation_score(t: &[f64], h_x: &[f64]) -> f64 {
    let d: Vec<f64> = t.iter().zip(h_x).map(|(a, b)| a - b).collect();
    -dot(&d, &d).sqrt()
}
