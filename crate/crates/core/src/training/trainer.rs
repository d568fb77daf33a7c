//! The training loop: seeded init, batch stream, per-step Adam updates, and
//! the CSV step log with the configuration echoed up front.

use std::io::Write;

use crate::data::Mixture;
use crate::dsp::{stft_magnitudes, FrameConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, GlobalStats, Normalization};
use crate::model::{init_params, ModelParams};
use crate::training::adam::{AdamConfig, AdamState};
use crate::training::backprop::{backward_sequence, forward_sequence, Gradients};
use crate::training::batch::{Batch, BatchStream};
use crate::training::losses::{loss_and_dgain, LossConfig, LossFamily};

/// Keeps the batch RNG out of the weight-init RNG's keystream while staying
/// a pure function of the run seed.
const BATCH_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub seed: u64,
    pub hidden: usize,
    pub steps: u64,
    pub seq_len_seconds: f64,
    /// Audio per batch; 60 s is the standard protocol, smaller values keep
    /// toy runs cheap.
    pub batch_budget_seconds: f64,
    pub loss: LossConfig,
    pub feature: FeatureKind,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: 256,
            steps: 100,
            seq_len_seconds: 10.0,
            batch_budget_seconds: 60.0,
            loss: LossConfig::default_fixed(),
            feature: FeatureKind::default_lps_fd(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// `# key value` lines echoed at the top of every training log so a run
    /// is identifiable from its artifacts alone.
    pub fn echo_lines(&self) -> Vec<(String, String)> {
        vec![
            ("seed".into(), self.seed.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("seq_len_seconds".into(), self.seq_len_seconds.to_string()),
            ("batch_budget_seconds".into(), self.batch_budget_seconds.to_string()),
            ("loss_family".into(), self.loss.family.name().into()),
            ("alpha".into(), self.loss.alpha.to_string()),
            ("beta_db".into(), self.loss.beta_db.to_string()),
            ("feature".into(), self.feature.transform.name().into()),
            ("normalization".into(), self.feature.normalization.name().into()),
            ("tau_s".into(), self.feature.tau_s.to_string()),
            ("lr".into(), self.adam.lr.to_string()),
        ]
    }
}

/// Per-step numbers, exactly what one log row carries.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub speech: f64,
    pub noise: f64,
    /// Batch-mean speech-distortion weight (NaN for the MSE family).
    pub alpha: f64,
    pub grad_norm: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub global_stats: Option<GlobalStats>,
    pub history: Vec<StepStats>,
}

/// One optimizer step over a batch: averaged gradients over sequences, then
/// a bias-corrected Adam update.
pub fn train_step(
    params: &mut ModelParams,
    batch: &Batch,
    loss: &LossConfig,
    adam: &mut AdamState,
    adam_cfg: &AdamConfig,
    step: u64,
) -> Result<StepStats> {
    if batch.sequences.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut grads = Gradients::zeros_like(params);
    let (mut loss_sum, mut speech_sum, mut noise_sum, mut alpha_sum) = (0.0, 0.0, 0.0, 0.0);
    for (i, seq) in batch.sequences.iter().enumerate() {
        let trace = forward_sequence(params, &seq.features)?;
        let (parts, dgain) = loss_and_dgain(
            &trace.gains,
            &seq.clean_mag,
            &seq.noisy_mag,
            &seq.noise_mag,
            &seq.sa_mask,
            loss,
        )
        .map_err(|e| Error::Numeric(format!("sequence {i}: {e}")))?;
        let seq_grads = backward_sequence(params, &seq.features, &trace, &dgain)?;
        grads.add_scaled(&seq_grads, 1.0);
        loss_sum += parts.total;
        speech_sum += parts.speech;
        noise_sum += parts.noise;
        alpha_sum += parts.alpha;
    }
    let n = batch.sequences.len() as f64;
    grads.scale(1.0 / n);
    let grad_norm = grads.norm();
    adam.step(params, &grads, adam_cfg)?;
    Ok(StepStats {
        step,
        loss: loss_sum / n,
        speech: speech_sum / n,
        noise: noise_sum / n,
        alpha: if loss.family == LossFamily::Mse { f64::NAN } else { alpha_sum / n },
        grad_norm,
    })
}

/// Accumulates per-bin statistics of the transformed noisy features over the
/// whole pool, for global normalization.
pub fn accumulate_global_stats(
    pool: &[Mixture],
    frame: &FrameConfig,
    feature: FeatureKind,
) -> Result<GlobalStats> {
    use crate::features::{lps, Transform};
    let stft = crate::dsp::Stft::new(frame.clone());
    let mut stats = GlobalStats::new(frame.bins());
    for mix in pool {
        let mags = stft_magnitudes(&stft, &mix.noisy)?;
        for t in 0..mags.nrows() {
            let row = mags.row(t);
            let row = row.as_slice().unwrap();
            match feature.transform {
                Transform::Lps => stats.accumulate(&lps(row)?)?,
                Transform::Magnitude => stats.accumulate(row)?,
            }
        }
    }
    Ok(stats)
}

/// Runs the full loop: optional global-stats pass, seeded init, `steps`
/// batches, one CSV row per step into `log`. `progress` fires after every
/// step (checkpoint cadence is the caller's policy).
pub fn train(
    pool: &[Mixture],
    frame: &FrameConfig,
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
    progress: Option<&mut dyn FnMut(u64, &ModelParams, Option<&GlobalStats>) -> Result<()>>,
) -> Result<TrainOutcome> {
    train_from(pool, frame, cfg, None, log, progress)
}

/// Same loop, optionally resumed. `start` carries parameters plus the number
/// of steps already taken; the batch stream is advanced past those steps, so
/// the resumed run sees the batches an uninterrupted run would have seen.
/// Optimizer moments restart (they are not checkpointed), and `cfg.steps`
/// stays the total step target, not an increment.
pub fn train_from(
    pool: &[Mixture],
    frame: &FrameConfig,
    cfg: &TrainConfig,
    start: Option<(ModelParams, u64)>,
    mut log: Option<&mut dyn Write>,
    mut progress: Option<&mut dyn FnMut(u64, &ModelParams, Option<&GlobalStats>) -> Result<()>>,
) -> Result<TrainOutcome> {
    let global = if cfg.feature.normalization == Normalization::Global {
        Some(accumulate_global_stats(pool, frame, cfg.feature)?)
    } else {
        None
    };
    let (mut params, steps_done) = match start {
        Some((params, steps_done)) => {
            if params.input_dim() != frame.bins() {
                return Err(Error::DimensionMismatch(format!(
                    "resumed model expects {} inputs, frame config has {} bins",
                    params.input_dim(),
                    frame.bins()
                )));
            }
            (params, steps_done)
        }
        None => (init_params(cfg.seed, cfg.hidden, frame.bins())?, 0),
    };
    let mut stream = BatchStream::with_budget(
        pool,
        frame,
        cfg.feature,
        global.clone(),
        cfg.loss.vad,
        cfg.seq_len_seconds,
        cfg.batch_budget_seconds,
        cfg.seed ^ BATCH_SEED_SALT,
    )?;
    stream.skip_batches(steps_done);
    let mut adam = AdamState::new(&params);

    if let Some(w) = log.as_deref_mut() {
        for (k, v) in cfg.echo_lines() {
            writeln!(w, "# {k} {v}")?;
        }
        if steps_done > 0 {
            writeln!(w, "# resumed_at_step {steps_done}")?;
        }
        writeln!(w, "step,loss,loss_speech,loss_noise,alpha,grad_norm")?;
    }

    let mut history = Vec::with_capacity(cfg.steps.saturating_sub(steps_done) as usize);
    for step in steps_done + 1..=cfg.steps {
        let batch = stream.next_batch()?;
        let stats = train_step(&mut params, &batch, &cfg.loss, &mut adam, &cfg.adam, step)?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                stats.step, stats.loss, stats.speech, stats.noise, stats.alpha, stats.grad_norm
            )?;
        }
        if let Some(cb) = progress.as_deref_mut() {
            cb(step, &params, global.as_ref())?;
        }
        history.push(stats);
    }
    Ok(TrainOutcome { params, global_stats: global, history })
}
