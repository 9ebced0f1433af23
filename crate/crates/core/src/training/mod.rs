//! Alternating adversarial training of the generator and discriminator.
//!
//! Each step updates the discriminator once on `(x, G(x_zf))` and then the
//! generator once against the updated discriminator. Validation runs once per
//! epoch in eval mode; the learning rate halves on a fixed epoch period and
//! training stops after `patience` consecutive strict NMSE increases.

mod config;
mod run;
mod state;
mod step;

pub use config::{lr_schedule, TrainConfig};
pub use run::{
    eval_pairs, evaluate, make_batch, reconstruct_pairs, stack, train, unstack, zero_fill_report, zero_filled,
    EpochSummary, Pair, TrainOptions, TrainOutcome, BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE, LOG_HEADER, PEAK,
};
pub use state::{early_stop_update, EarlyStop, TrainState};
pub use step::{generator_objective, ms_ssim_params, train_step, Batch, GeneratorTerms, StepLosses};
