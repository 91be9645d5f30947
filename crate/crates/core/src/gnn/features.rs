//! Structural node features and the message-passing layout of a subgraph.
//!
//! A node is described only by which relation types leave it (inverse
//! relations included, so incoming edges count as outgoing inverse edges)
//! and, optionally, a one-hot bucket of its distance to the query entities.
//! Nothing depends on entity identity, so unseen entities need no training.

use crate::error::{Error, Result};
use crate::gnn::matrix::Matrix;
use crate::kg::EntityId;
use crate::subgraph::{QuerySubgraph, DISTANCE_BUCKETS};

#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures {
    /// Width of the relation block (the doubled relation space).
    pub relation_dim: usize,
    /// Width of the distance block: `DISTANCE_BUCKETS`, or 0 when disabled.
    pub distance_dim: usize,
    /// Active feature indices per node, ascending.
    pub active: Vec<Vec<u32>>,
}

impl NodeFeatures {
    pub fn dim(&self) -> usize {
        self.relation_dim + self.distance_dim
    }

    pub fn num_nodes(&self) -> usize {
        self.active.len()
    }

    pub fn dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.num_nodes(), self.dim());
        for (i, idx) in self.active.iter().enumerate() {
            let row = m.row_mut(i);
            for &k in idx {
                row[k as usize] = 1.0;
            }
        }
        m
    }
}

/// Features over the doubled relation space `2 * num_relations`, followed by
/// the distance one-hot when `use_distance` is set.
pub fn featurize(sg: &QuerySubgraph, num_relations: usize, use_distance: bool) -> NodeFeatures {
    let n = sg.num_nodes();
    let relation_dim = 2 * num_relations;
    let mut active: Vec<Vec<u32>> = vec![Vec::new(); n];
    for t in &sg.triples {
        let (Some(h), Some(tl)) = (sg.local_index(t.head), sg.local_index(t.tail)) else {
            continue;
        };
        active[h].push(t.relation.0);
        active[tl].push(t.relation.0 + num_relations as u32);
    }
    for (i, a) in active.iter_mut().enumerate() {
        a.sort_unstable();
        a.dedup();
        if use_distance {
            let bucket = (sg.distances[i] as usize).min(DISTANCE_BUCKETS - 1);
            a.push((relation_dim + bucket) as u32);
        }
    }
    NodeFeatures {
        relation_dim,
        distance_dim: if use_distance { DISTANCE_BUCKETS } else { 0 },
        active,
    }
}

/// Messages reaching `target` along one relation of the doubled space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct MessageGroup {
    pub target: u32,
    pub relation: u32,
    pub start: u32,
    pub end: u32,
}

/// A subgraph prepared for the GNN: sparse input features, per-(target,
/// relation) neighbor groups, query nodes and labeled answers in local ids.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub(crate) features: NodeFeatures,
    pub(crate) groups: Vec<MessageGroup>,
    pub(crate) sources: Vec<u32>,
    pub query_nodes: Vec<usize>,
    /// Local indices of labeled answers, ascending.
    pub answers: Vec<usize>,
    /// Entity id of each local node.
    pub entities: Vec<EntityId>,
    relation_space: usize,
}

impl GraphInput {
    pub fn new(sg: &QuerySubgraph, num_relations: usize, use_distance: bool) -> Result<Self> {
        if sg.distances.len() != sg.num_nodes() {
            return Err(Error::Dimension(format!(
                "subgraph {} has {} distances for {} nodes",
                sg.query_id,
                sg.distances.len(),
                sg.num_nodes()
            )));
        }
        let feats = featurize(sg, num_relations, use_distance);
        let r = num_relations as u32;
        // (target, relation, source) for both directions of every edge.
        let mut msgs: Vec<(u32, u32, u32)> = Vec::with_capacity(2 * sg.triples.len());
        for t in &sg.triples {
            if t.relation.0 >= r {
                return Err(Error::Dimension(format!(
                    "relation {} outside the model's {} relations",
                    t.relation.0, num_relations
                )));
            }
            let h = sg.local_index(t.head).ok_or(Error::UnknownEntity(t.head.0))? as u32;
            let tl = sg.local_index(t.tail).ok_or(Error::UnknownEntity(t.tail.0))? as u32;
            msgs.push((tl, t.relation.0, h));
            msgs.push((h, t.relation.0 + r, tl));
        }
        msgs.sort_unstable();
        msgs.dedup();
        let mut groups = Vec::new();
        let mut sources = Vec::with_capacity(msgs.len());
        for (i, &(target, relation, source)) in msgs.iter().enumerate() {
            if i == 0 || (msgs[i - 1].0, msgs[i - 1].1) != (target, relation) {
                groups.push(MessageGroup {
                    target,
                    relation,
                    start: i as u32,
                    end: i as u32,
                });
            }
            sources.push(source);
            groups.last_mut().unwrap().end = i as u32 + 1;
        }
        let query_nodes = sg.query_entities.iter().filter_map(|&e| sg.local_index(e)).collect();
        let mut answers: Vec<usize> = sg
            .answers
            .iter()
            .flatten()
            .filter_map(|&e| sg.local_index(e))
            .collect();
        answers.sort_unstable();
        answers.dedup();
        Ok(GraphInput {
            features: feats,
            groups,
            sources,
            query_nodes,
            answers,
            entities: sg.nodes.clone(),
            relation_space: 2 * num_relations,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim()
    }

    pub fn relation_space(&self) -> usize {
        self.relation_space
    }

    pub fn features(&self) -> &NodeFeatures {
        &self.features
    }

    pub(crate) fn group_sources(&self, g: &MessageGroup) -> &[u32] {
        &self.sources[g.start as usize..g.end as usize]
    }

    /// Returns a copy with different answer labels (local indices).
    pub fn with_answers(mut self, answers: Vec<usize>) -> Self {
        self.answers = answers;
        self.answers.sort_unstable();
        self.answers.dedup();
        self
    }
}
