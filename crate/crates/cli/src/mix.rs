//! `mix`: cut random excerpts of speech and noise, level-normalize the
//! speech, combine at the named SNRs, and write (noisy, clean, noise)
//! triplets plus an index the other commands consume.

use std::path::PathBuf;

use clap::Args;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use streamgain::data::{
    level_normalize, mix_at_snr, random_excerpt, Clip, ClipRole, Mixture, DEFAULT_TARGET_DBFS,
    SAMPLE_RATE_HZ,
};
use streamgain::wav::write_wav;
use streamgain::{Error, Result};

use crate::config::parse_snr_set;
use crate::dataset::{IndexWriter, DATASET_INDEX};

#[derive(Args, Debug)]
pub struct MixArgs {
    /// manifest of raw `role<TAB>path` clips
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// number of triplets to write
    #[arg(long)]
    count: usize,
    #[arg(long, default_value = "0,10,20")]
    snr_set: String,
    /// excerpt length in seconds
    #[arg(long, default_value_t = 4.0)]
    clip_seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Same scale for all three signals keeps the SNR and the additive identity
/// noisy = clean + noise exact while leaving headroom in the files.
fn rescale_into_range(mix: &mut Mixture) {
    let peak = mix
        .noisy
        .iter()
        .chain(&mix.clean)
        .chain(&mix.noise)
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.99 {
        let s = 0.99 / peak;
        for v in mix.noisy.iter_mut().chain(&mut mix.clean).chain(&mut mix.noise) {
            *v *= s;
        }
    }
}

pub fn run(args: &MixArgs) -> Result<()> {
    let snr_set = parse_snr_set(&args.snr_set)?;
    if args.clip_seconds <= 0.0 {
        return Err(Error::InvalidConfig("clip_seconds must be positive".into()));
    }
    let (speech, noise) = crate::dataset::load_manifest_clips(&args.manifest)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let index_file = std::fs::File::create(args.out_dir.join(DATASET_INDEX))?;
    let mut index = IndexWriter::new(std::io::BufWriter::new(index_file))?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for i in 0..args.count {
        let snr = snr_set[i % snr_set.len()];
        let speech_clip = &speech[rng.gen_range(0..speech.len())];
        let noise_clip = &noise[rng.gen_range(0..noise.len())];

        let speech_ex = random_excerpt(&speech_clip.samples, args.clip_seconds, &mut rng)?;
        let noise_ex = random_excerpt(&noise_clip.samples, args.clip_seconds, &mut rng)?;
        let leveled = level_normalize(
            &Clip::new(
                speech_ex,
                SAMPLE_RATE_HZ,
                speech_clip.source_id.clone(),
                ClipRole::Speech,
            )?,
            DEFAULT_TARGET_DBFS,
        )?;
        let mut mix = mix_at_snr(&leveled.samples, &noise_ex, snr)?;
        rescale_into_range(&mut mix);

        let clip_id = format!("mix{i:04}_snr{snr}db");
        let names = [
            (format!("{clip_id}_noisy.wav"), &mix.noisy),
            (format!("{clip_id}_clean.wav"), &mix.clean),
            (format!("{clip_id}_noise.wav"), &mix.noise),
        ];
        for (name, samples) in &names {
            write_wav(&args.out_dir.join(name), samples)?;
        }
        index.row(
            &clip_id,
            snr,
            &names[0].0,
            &names[1].0,
            &names[2].0,
            &speech_clip.source_id,
            &noise_clip.source_id,
        )?;
    }
    index.finish()?;
    println!(
        "wrote {} triplets at SNRs {:?} dB to {}",
        args.count,
        snr_set,
        args.out_dir.display()
    );
    Ok(())
}
