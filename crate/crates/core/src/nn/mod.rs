//! Tensor primitives, the Inception-style classifier, its training loop and
//! weight files.

mod io;
mod model;
pub mod ops;
mod tensor;
mod train;

pub use io::{decode_weights, encode_weights, load_weights, save_weights};
pub use model::{
    xent_loss, AdamState, ClassProbs, InceptionConfig, Model, NetParams, ParamEntry, StageOrder, Trainer,
    BN_MOMENTUM, XENT_FLOOR,
};
pub use tensor::{gemm, Scalar, Tensor4};
pub use train::{
    accuracy, adam_step, train, AdamConfig, Dataset, EarlyStopping, EpochRecord, TrainConfig, TrainHistory,
};
