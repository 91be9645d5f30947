//! Episodes, the Adam optimizer, the training loop and batched evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{rank_top, strict_hit, HitsSummary, QueryOutcome};
use crate::gnn::features::GraphInput;
use crate::gnn::loss::{episode_loss, score_against_neighbors, CaseAnswers, NodeEmbeddings};
use crate::gnn::matrix::{axpy, Matrix};
use crate::gnn::model::{ForwardCache, GnnModel};
use crate::subgraph::QuerySubgraph;
use crate::synth::Dataset;
use crate::{derive_seed, Split};

/// One query together with its retrieved cases, all as indices into
/// [`EpisodeSet::graphs`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub query_id: u64,
    pub split: Split,
    pub shape: String,
    pub pattern_type: Option<u32>,
    pub query: usize,
    /// Nearest cases first.
    pub neighbors: Vec<usize>,
    /// Local indices of gold answers present in the query graph.
    pub gold: Vec<usize>,
    /// Total gold answers, including any the subgraph missed.
    pub num_gold: usize,
    /// Added to graph entity ids to report dataset-wide ids.
    #[serde(default)]
    pub entity_offset: u64,
}

impl Episode {
    pub fn gold_complete(&self) -> bool {
        self.gold.len() == self.num_gold
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeSet {
    pub graphs: Vec<GraphInput>,
    pub episodes: Vec<Episode>,
}

impl EpisodeSet {
    /// Every example's whole graph is its query subgraph; graph `i` is the
    /// example with id `i`.
    pub fn from_synthetic(ds: &Dataset, use_distance: bool) -> Result<Self> {
        let num_relations = ds.type_system.num_relations();
        let graphs = ds
            .examples
            .par_iter()
            .map(|ex| {
                let sg = QuerySubgraph::from_graph(ex.id, &ex.graph, &ex.query_entities, Some(&ex.gold_answers))?;
                GraphInput::new(&sg, num_relations, use_distance)
            })
            .collect::<Result<Vec<_>>>()?;
        let episodes = ds
            .examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                debug_assert_eq!(ex.id as usize, i);
                Episode {
                    query_id: ex.id,
                    split: ex.split,
                    shape: ex.shape.tag().to_string(),
                    pattern_type: Some(ex.pattern_type_id),
                    query: i,
                    neighbors: ex.knn.iter().map(|&k| k as usize).collect(),
                    gold: graphs[i].answers.clone(),
                    num_gold: ex.gold_answers.len(),
                    entity_offset: ex.entity_offset,
                }
            })
            .collect();
        Ok(EpisodeSet { graphs, episodes })
    }

    pub fn split(&self, split: Split) -> Vec<usize> {
        (0..self.episodes.len()).filter(|&i| self.episodes[i].split == split).collect()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.graphs.first().map(GraphInput::feature_dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Queries whose gradients are summed before each optimizer step.
    pub accumulation: usize,
    pub k_train: usize,
    pub k_eval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            patience: 5,
            accumulation: 8,
            k_train: 5,
            k_eval: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_train == 0 || self.k_eval == 0 {
            return Err(Error::InvalidK);
        }
        if self.accumulation == 0 {
            return Err(Error::Config("accumulation must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-query loss over the epoch.
    pub train_loss: f64,
    pub valid_avg: f64,
    pub valid_overall: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid_avg: f64,
    pub skipped_queries: usize,
}

/// Episodes grouped so that queries sharing cases land in the same batch,
/// groups shuffled per epoch.
pub fn epoch_order(set: &EpisodeSet, episodes: &[usize], k: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &e in episodes {
        let ep = &set.episodes[e];
        let key = ep.neighbors.iter().take(k).copied().chain([ep.query]).min().unwrap();
        groups.entry(key).or_default().push(e);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64]));
    groups.shuffle(&mut rng);
    groups.into_iter().flatten().collect()
}

/// Queries that can contribute a loss: gold present and at least one case
/// with answers.
fn trainable(set: &EpisodeSet, e: usize, k: usize) -> bool {
    let ep = &set.episodes[e];
    !set.graphs[ep.query].answers.is_empty()
        && ep.neighbors.iter().take(k).any(|&n| !set.graphs[n].answers.is_empty())
}

struct BatchPass {
    graphs: Vec<usize>,
    caches: Vec<ForwardCache>,
    embeddings: Vec<NodeEmbeddings>,
}

fn batch_forward(model: &GnnModel, set: &EpisodeSet, episodes: &[usize], k: usize) -> Result<BatchPass> {
    let mut graphs: Vec<usize> = episodes
        .iter()
        .flat_map(|&e| {
            let ep = &set.episodes[e];
            std::iter::once(ep.query).chain(ep.neighbors.iter().take(k).copied())
        })
        .collect();
    graphs.sort_unstable();
    graphs.dedup();
    let caches = graphs
        .par_iter()
        .map(|&g| model.forward_cached(&set.graphs[g]))
        .collect::<Result<Vec<_>>>()?;
    let embeddings = caches.iter().map(|c| NodeEmbeddings::new(c.output.clone())).collect();
    Ok(BatchPass {
        graphs,
        caches,
        embeddings,
    })
}

/// Summed loss and gradient over a batch of episodes.
pub fn batch_gradient(model: &GnnModel, set: &EpisodeSet, episodes: &[usize], k: usize) -> Result<(f64, Vec<f64>)> {
    let pass = batch_forward(model, set, episodes, k)?;
    let pos = |g: usize| pass.graphs.binary_search(&g).expect("graph in batch");
    let mut d_out: Vec<Option<Matrix>> = vec![None; pass.graphs.len()];
    let mut add = |slot: usize, d: &Matrix| match &mut d_out[slot] {
        Some(acc) => axpy(1.0, d.data(), acc.data_mut()),
        None => d_out[slot] = Some(d.clone()),
    };
    let mut total = 0.0;
    let tau = model.config().temperature;
    for &e in episodes {
        let ep = &set.episodes[e];
        let nbrs: Vec<usize> = ep.neighbors.iter().take(k).copied().collect();
        let cases: Vec<CaseAnswers> = nbrs
            .iter()
            .map(|&n| CaseAnswers {
                embeddings: &pass.embeddings[pos(n)],
                answers: &set.graphs[n].answers,
            })
            .collect();
        let eg = episode_loss(&pass.embeddings[pos(ep.query)], &set.graphs[ep.query].answers, &cases, tau)?;
        total += eg.loss;
        add(pos(ep.query), &eg.d_query);
        for (&n, d) in nbrs.iter().zip(&eg.d_neighbors) {
            if let Some(d) = d {
                add(pos(n), d);
            }
        }
    }
    let mut grad = vec![0.0; model.num_params()];
    for (slot, d) in d_out.iter().enumerate() {
        if let Some(d) = d {
            model.backward(&set.graphs[pass.graphs[slot]], &pass.caches[slot], d, &mut grad);
        }
    }
    Ok((total, grad))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Trains `model` in place, keeping the parameters with the best validation
/// average strict hits@1.
pub fn train(model: &mut GnnModel, set: &EpisodeSet, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let train_eps: Vec<usize> = set.split(Split::Train);
    let usable: Vec<usize> = train_eps.iter().copied().filter(|&e| trainable(set, e, cfg.k_train)).collect();
    let valid_eps = set.split(Split::Valid);
    let mut log = TrainLog {
        skipped_queries: train_eps.len() - usable.len(),
        ..TrainLog::default()
    };
    if log.skipped_queries > 0 {
        log::warn!("{} training queries have no usable answers or cases", log.skipped_queries);
    }
    let mut adam = Adam::new(model.num_params(), cfg);
    let mut best_params = model.params().to_vec();
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(set, &usable, cfg.k_train, cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for batch in order.chunks(cfg.accumulation) {
            let (loss, grad) = batch_gradient(model, set, batch, cfg.k_train)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let norms = model.layer_norms();
                return Err(Error::NonFiniteLoss {
                    loss,
                    epoch,
                    step: steps,
                    diagnostics: format!("layer norms {norms:?}, grad norm {}", l2(&grad)),
                });
            }
            adam.step(model.params_mut(), &grad);
            epoch_loss += loss;
            steps += 1;
        }
        let valid = if valid_eps.is_empty() {
            None
        } else {
            Some(HitsSummary::from_outcomes(&evaluate(model, set, &valid_eps, cfg.k_eval)?))
        };
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / usable.len().max(1) as f64,
            valid_avg: valid.as_ref().map_or(0.0, |v| v.avg),
            valid_overall: valid.as_ref().map_or(0.0, |v| v.overall),
            steps,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} valid avg {:.2} overall {:.2}",
            entry.train_loss,
            entry.valid_avg,
            entry.valid_overall
        );
        let score = if valid.is_some() { entry.valid_avg } else { -entry.train_loss };
        log.epochs.push(entry);
        if score > best {
            best = score;
            best_params.copy_from_slice(model.params());
            log.best_epoch = epoch;
            log.best_valid_avg = log.epochs.last().unwrap().valid_avg;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }
    model.params_mut().copy_from_slice(&best_params);
    Ok(log)
}

/// Strict hits@1 outcome of every episode in `episodes`, in the given order,
/// using the first `k` cases of each.
pub fn evaluate(model: &GnnModel, set: &EpisodeSet, episodes: &[usize], k: usize) -> Result<Vec<QueryOutcome>> {
    if k == 0 {
        return Err(Error::InvalidK);
    }
    let mut needed: Vec<usize> = episodes
        .iter()
        .flat_map(|&e| {
            let ep = &set.episodes[e];
            std::iter::once(ep.query).chain(ep.neighbors.iter().take(k).copied())
        })
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let embs = needed
        .par_iter()
        .map(|&g| Ok(NodeEmbeddings::new(model.forward(&set.graphs[g])?)))
        .collect::<Result<Vec<_>>>()?;
    let emb = |g: usize| &embs[needed.binary_search(&g).expect("graph embedded")];
    Ok(episodes
        .iter()
        .map(|&e| {
            let ep = &set.episodes[e];
            let cases: Vec<CaseAnswers> = ep
                .neighbors
                .iter()
                .take(k)
                .map(|&n| CaseAnswers {
                    embeddings: emb(n),
                    answers: &set.graphs[n].answers,
                })
                .collect();
            let scores = score_against_neighbors(emb(ep.query), &cases);
            outcome(set, ep, scores)
        })
        .collect())
}

/// Turns a score vector (or a scoring failure) into an outcome record.
pub fn outcome(set: &EpisodeSet, ep: &Episode, scores: Result<Vec<f64>>) -> QueryOutcome {
    let g = &set.graphs[ep.query];
    let (hit, top, error) = match scores {
        Ok(s) => (
            strict_hit(&s, &ep.gold, ep.gold_complete()),
            rank_top(&s, 10).into_iter().map(|i| ep.entity_offset + g.entities[i].0 as u64).collect(),
            None,
        ),
        Err(e) => (false, Vec::new(), Some(e.to_string())),
    };
    QueryOutcome {
        query_id: ep.query_id,
        split: ep.split,
        shape: ep.shape.clone(),
        hit,
        num_gold: ep.num_gold,
        top,
        error,
    }
}
