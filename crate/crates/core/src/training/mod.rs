//! Loss, optimizer and the end-to-end training loop through the unrolled
//! NeuralKalman filter.

mod example;
mod gradcheck;
mod loss;
mod optim;
mod trainer;

pub use example::{example_loss, ExampleForward, ModelObjective, TrainingExample};
pub use gradcheck::{model_grad_check, synthetic_example, GradCheckConfig};
pub use loss::{loss_terms, loss_var, si_sdr, si_sdr_var, LossConfig, LossTerms, SI_SDR_EPS};
pub use optim::{clip_global_norm, global_norm, Adam, AdamConfig};
pub use trainer::{
    build_examples, curve_csv, save_checkpoint, scene_seed, score_examples, sidecar_path,
    train_loop, write_curve, TraceRow, TrainConfig, TrainOutcome, Trainer, CURVE_HEADER,
};
