//! Deep generalized CCA: one Linear -> Sigmoid -> BatchNorm block per view,
//! trained by minibatch SGD on the GCCA objective of the block outputs.

mod loss;
mod model_file;
mod network;
mod train;

pub use loss::{dgcca_loss_and_grad, LossAndGrad};
pub use model_file::{read_model, write_model, ModelFile, MODEL_MAGIC, MODEL_VERSION};
pub use network::{BlockLayout, ForwardCache, Mode, ParamGrads, ViewNetwork};
pub use train::{
    cosine_scores, cross_view_agreement, init_model, per_utterance_scores, train, DgccaTrainConfig, PairScores,
    TrainedDgcca,
};
