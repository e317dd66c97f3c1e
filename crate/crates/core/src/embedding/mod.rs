//! Node embeddings: one hop of attention-weighted neighbour aggregation
//! followed by a logistic bias classifier, trained with cross-entropy.
//!
//! For a node `i` with raw features `x_i` and neighbours `j`:
//!
//! ```text
//! z_j   = W_h x_j
//! e_ij  = leaky_relu(a_selfᵀ z_i + a_nbᵀ z_j)
//! α_ij  = softmax_j(e_ij)
//! h(i)  = relu(Σ_j α_ij z_j + W_r x_i)
//! p(i)  = sigmoid(cᵀ h(i) + b)
//! ```

mod model;
mod table;
mod train;

pub use model::{AggregationMode, EmbeddingCheckpoint, EmbeddingModel, LEAKY_SLOPE};
pub use table::EmbeddingTable;
pub use train::{
    loss_and_gradient, predict, train_embeddings, EmbeddingGradient, EmbeddingHyper, TrainedEmbedding,
    STABLE_LEARNING_RATE,
};
