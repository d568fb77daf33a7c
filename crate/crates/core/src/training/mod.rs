//! Training-time machinery: the energy VAD, the loss family, exact
//! reverse-mode gradients through the recurrent stack, Adam, and the
//! one-minute minibatch protocol.

mod adam;
mod backprop;
mod batch;
mod losses;
mod trainer;
mod vad;

pub use adam::{AdamConfig, AdamState};
pub use backprop::{backward_sequence, forward_sequence, ForwardTrace, Gradients};
pub use batch::{make_batches, Batch, BatchStream, TrainSequence};
pub use losses::{
    loss_and_dgain, loss_mse, loss_noise, loss_speech, loss_weighted, snr_alpha, utterance_snr,
    LossConfig, LossFamily, LossParts,
};
pub use trainer::{
    accumulate_global_stats, train, train_from, train_step, StepStats, TrainConfig, TrainOutcome,
};
pub use vad::{vad_mask, VadConfig};
