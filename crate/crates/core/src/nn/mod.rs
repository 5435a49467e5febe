//! Neural surrogate of the homogenized constitutive law: two feed-forward
//! networks, one for stress and one for the internal-variable rate, rolled
//! out as a recurrent model.

mod loss;
mod mlp;
mod probe;
mod surrogate;
mod train;

pub use loss::{loss_accessible, loss_inaccessible, LossValue};
pub use mlp::{selu, selu_grad, MlpParams, SELU_ALPHA, SELU_SCALE};
pub use probe::{probe_linearity, r_squared, ProbeCurve, ProbeFamily, ProbeGrid};
pub use surrogate::{rnn_forward, RnnOutput, SurrogatePair, DEFAULT_HIDDEN, EXACT_SHIFT};
pub use train::{
    evaluate, loss_and_gradient, split_indices, train, train_two_phase, write_history_csv, Adam, EpochRecord,
    Evaluation, HiddenTarget, Init, LossKind, TrainConfig, TrainOutcome,
};
