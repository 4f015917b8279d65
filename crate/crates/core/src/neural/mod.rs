//! Learned components of NeuralKalman: features, the shared recurrent
//! trunk, the heads for `A`, `g(·)`, `t(·)` and the covariances, and the
//! unrolled filter that ties them together.

mod config;
pub mod crf;
pub mod features;
pub mod layers;
mod model;
mod weights;

pub use config::{CrfReference, HookSet, ModelConfig, Scale, TransitionForm, Variant};
pub use features::{FrameInputs, Frontend};
pub use layers::Params;
pub use model::{split, NeuralCanceller, NeuralKalman, NkState, RunOutput, StepOutput};
pub use weights::{
    crf_identity_channel, expected_shapes, ModelWeights, Tensor, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};
