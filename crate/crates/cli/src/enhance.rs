//! `enhance`: run a checkpoint over a WAV file frame by frame and report the
//! real-time factor and any output clipping.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use streamgain::checkpoint::Checkpoint;
use streamgain::wav::{read_wav, write_wav};
use streamgain::Result;

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// 16 kHz mono WAV to denoise
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// feed the stream in chunks of this many samples instead of all at
    /// once; output is identical either way
    #[arg(long)]
    chunk_samples: Option<usize>,
}

pub fn run(args: &EnhanceArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let samples = read_wav(&args.input)?;

    let mut enhancer = ckpt.enhancer()?;
    let started = Instant::now();
    let mut out = Vec::with_capacity(samples.len());
    match args.chunk_samples {
        Some(n) if n > 0 => {
            for chunk in samples.chunks(n) {
                out.extend(enhancer.push(chunk)?);
            }
        }
        _ => out.extend(enhancer.push(&samples)?),
    }
    out.extend(enhancer.finish()?);
    let elapsed = started.elapsed().as_secs_f64();

    let clipped = write_wav(&args.output, &out)?;
    let audio_s = samples.len() as f64 / ckpt.frame.sample_rate_hz as f64;
    if audio_s > 0.0 {
        println!(
            "enhanced {audio_s:.2} s in {elapsed:.2} s (real-time factor {:.3}), {clipped} samples clipped",
            elapsed / audio_s
        );
    } else {
        println!("enhanced empty input, {clipped} samples clipped");
    }
    Ok(())
}
