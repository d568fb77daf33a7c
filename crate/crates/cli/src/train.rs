//! `train`: build (or load) a mixture pool, run the training loop, and leave
//! behind a CSV step log plus a self-contained checkpoint.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use streamgain::checkpoint::{Checkpoint, TrainMeta};
use streamgain::data::{
    level_normalize, mix_at_snr, random_excerpt, Mixture, DEFAULT_TARGET_DBFS,
};
use streamgain::dsp::FrameConfig;
use streamgain::features::GlobalStats;
use streamgain::model::ModelParams;
use streamgain::training::{train_from, TrainConfig, TrainOutcome};
use streamgain::{Error, Result};

use crate::config::{RunConfig, RunFlags};

pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// checkpoint to continue training from (step counter carries on)
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Synthesizes the training pool from raw clips: excerpt, level-normalize
/// the speech, and mix, cycling through the SNR set. Derived from the run
/// seed, so the pool itself is reproducible.
pub fn pool_from_manifest(cfg: &RunConfig) -> Result<Vec<Mixture>> {
    let manifest = cfg.manifest.as_ref().expect("caller checked the data source");
    let (speech, noise) = crate::dataset::load_manifest_clips(manifest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5D5A_8C3B_1E0F_2D47);
    let mut pool = Vec::with_capacity(cfg.train_mixes);
    for i in 0..cfg.train_mixes.max(1) {
        let snr = cfg.snr_set[i % cfg.snr_set.len()];
        let speech_clip = &speech[rng.gen_range(0..speech.len())];
        let noise_clip = &noise[rng.gen_range(0..noise.len())];
        let speech_ex = random_excerpt(&speech_clip.samples, cfg.mix_seconds, &mut rng)?;
        let noise_ex = random_excerpt(&noise_clip.samples, cfg.mix_seconds, &mut rng)?;
        let leveled = level_normalize(
            &streamgain::data::Clip::new(
                speech_ex,
                streamgain::data::SAMPLE_RATE_HZ,
                speech_clip.source_id.clone(),
                streamgain::data::ClipRole::Speech,
            )?,
            DEFAULT_TARGET_DBFS,
        )?;
        pool.push(mix_at_snr(&leveled.samples, &noise_ex, snr)?);
    }
    Ok(pool)
}

/// The training pool: pre-mixed triplets when a dataset directory is given,
/// otherwise mixtures synthesized from the manifest.
pub fn build_pool(cfg: &RunConfig) -> Result<Vec<Mixture>> {
    if let Some(dir) = &cfg.dataset {
        let items = crate::dataset::read_dataset(dir)?;
        if items.is_empty() {
            return Err(Error::Data(format!("{}: dataset is empty", dir.display())));
        }
        items.iter().map(|item| item.load()).collect()
    } else {
        pool_from_manifest(cfg)
    }
}

fn checkpoint_for(
    frame: &FrameConfig,
    run: &RunConfig,
    train: &TrainConfig,
    params: &ModelParams,
    stats: Option<&GlobalStats>,
    steps: u64,
) -> Result<Checkpoint> {
    Checkpoint::new(
        frame.clone(),
        train.feature,
        stats.cloned(),
        params.clone(),
        TrainMeta {
            steps,
            loss_family: train.loss.family,
            alpha: train.loss.alpha,
            beta_db: train.loss.beta_db,
            seed: run.seed,
        },
    )
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::resolve(&args.run)?;
    let frame = FrameConfig::default_16k();

    let start = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            // geometry and feature recipe are properties of the weights;
            // they come from the checkpoint, not from flags
            cfg.feature = ckpt.feature.transform.name().into();
            cfg.norm = ckpt.feature.normalization.name().into();
            cfg.tau = ckpt.feature.tau_s;
            cfg.hidden = ckpt.params.hidden_sizes()[0];
            Some((ckpt.params, ckpt.meta.steps))
        }
        None => None,
    };
    let train_cfg = cfg.train_config()?;

    let pool = build_pool(&cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join(TRAIN_LOG);
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    for (k, v) in cfg.echo_lines() {
        writeln!(log, "# {k} {v}")?;
    }

    let every = cfg.checkpoint_every;
    let (run_cfg, frame_cb, train_cb) = (&cfg, &frame, &train_cfg);
    let mut save_intermediate =
        |step: u64, params: &ModelParams, stats: Option<&GlobalStats>| -> Result<()> {
            if every > 0 && step % every == 0 && step < train_cb.steps {
                let path = run_cfg.out_dir.join(format!("model_step{step:06}.ckpt"));
                checkpoint_for(frame_cb, run_cfg, train_cb, params, stats, step)?.save(&path)?;
            }
            Ok(())
        };

    let start_steps = start.as_ref().map_or(0, |(_, s)| *s);
    let TrainOutcome { params, global_stats, history } = train_from(
        &pool,
        &frame,
        &train_cfg,
        start,
        Some(&mut log),
        Some(&mut save_intermediate),
    )?;
    log.flush()?;

    let total_steps = history.last().map_or(start_steps, |s| s.step);
    let final_path = cfg.out_dir.join(FINAL_CHECKPOINT);
    checkpoint_for(&frame, &cfg, &train_cfg, &params, global_stats.as_ref(), total_steps)?
        .save(&final_path)?;

    match (history.first(), history.last()) {
        (Some(first), Some(last)) => println!(
            "trained steps {}..={} (loss {:.6} -> {:.6}), checkpoint at {}",
            first.step,
            last.step,
            first.loss,
            last.loss,
            final_path.display()
        ),
        _ => println!(
            "no steps to run (already at step {total_steps}), checkpoint at {}",
            final_path.display()
        ),
    }
    Ok(())
}
