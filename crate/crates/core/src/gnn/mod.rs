//! Relational GCN reasoner: featurization, message passing, the
//! multi-case contrastive loss, training and checkpoints.

pub mod checkpoint;
pub mod features;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use features::{featurize, GraphInput, NodeFeatures};
pub use loss::{
    contrastive_loss, episode_loss, infer, loss_and_gradients, rank_nodes, score_against_neighbors, score_query, CaseAnswers,
    NodeEmbeddings,
};
pub use matrix::Matrix;
pub use model::{GnnConfig, GnnModel};
pub use train::{evaluate, train, Adam, Episode, EpisodeSet, TrainConfig, TrainLog};
