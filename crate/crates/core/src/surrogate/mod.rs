//! Learned SDM decoders: a parameter-to-grid network and a point-wise baseline.

mod arch;
pub mod layers;
mod model;
mod network;
mod pointwise;
mod train;
pub mod weights;

pub use arch::{Architecture, Stage, TensorInfo, PARAM_COUNT};
pub use model::{
    forward, init_model, init_model_with, loss_and_gradient, loss_and_gradient_raw, SurrogateModel,
    TrainingMeta,
};
pub use pointwise::{
    clamped_l1, default_pointwise_hidden, pw_fill_grid, pw_forward, pw_loss_and_gradient, pw_output_gradient_raw,
    pw_train, pw_train_with_progress, sample_training_points, PointwiseModel, PwTrainConfig, CLAMP_DELTA,
    POINTWISE_INPUTS,
};
pub use train::{
    build_static_set, reference_sdm, train, train_with_progress, StaticSet, TrainConfig, TrainOutcome,
};
pub use weights::{load_model, load_pointwise, load_surrogate, save_pointwise, save_surrogate, ModelFile};

/// Floating-point type the networks run in.
pub trait Real: num_traits::Float + Send + Sync + std::fmt::Debug + 'static {}

impl Real for f32 {}
impl Real for f64 {}
