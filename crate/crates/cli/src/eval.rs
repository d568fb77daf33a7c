//! `eval`: score a dataset three ways (untouched noisy audio, the model,
//! and the ideal Wiener mask computed from the true clean/noise split) and
//! write per-clip CSVs plus a per-condition summary.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use streamgain::checkpoint::Checkpoint;
use streamgain::dsp::FrameConfig;
use streamgain::enhance::{apply_gain_sequence, streaming_magnitudes};
use streamgain::metrics::{cepstral_distance, oracle_wiener, si_sdr, EvalReport, EvalRow};
use streamgain::training::VadConfig;
use streamgain::{Error, Result};

use crate::dataset::read_dataset;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// trained checkpoint; omit to score only the noisy and oracle systems
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// dataset directory written by `mix`
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// merge externally computed per-clip scores into the model report;
    /// repeatable, form `name=path` with `clip_id,value` CSV lines
    #[arg(long)]
    external: Vec<String>,
}

struct System {
    label: &'static str,
    report: EvalReport,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let items = read_dataset(&args.dataset)?;
    if items.is_empty() {
        return Err(Error::Data(format!("{}: dataset is empty", args.dataset.display())));
    }
    let ckpt = args.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let frame = ckpt.as_ref().map_or_else(FrameConfig::default_16k, |c| c.frame.clone());
    let vad = VadConfig::default();

    let mut systems = vec![System { label: "noisy", report: EvalReport::new() }];
    if ckpt.is_some() {
        systems.push(System { label: "model", report: EvalReport::new() });
    }
    systems.push(System { label: "oracle_wiener", report: EvalReport::new() });

    for item in &items {
        let mix = item.load()?;
        let noisy_si = si_sdr(&mix.clean, &mix.noisy)?;
        let row = |report: &mut EvalReport, enhanced: &[f64]| -> Result<()> {
            report.push(EvalRow {
                clip_id: item.clip_id.clone(),
                condition_db: item.snr_db,
                si_sdr_db: si_sdr(&mix.clean, enhanced)?,
                cd: cepstral_distance(&mix.clean, enhanced, &frame, &vad)?,
                noisy_si_sdr_db: noisy_si,
            });
            Ok(())
        };

        for system in &mut systems {
            match system.label {
                "noisy" => row(&mut system.report, &mix.noisy)?,
                "model" => {
                    let ckpt = ckpt.as_ref().expect("model system implies a checkpoint");
                    let mut enhancer = ckpt.enhancer()?;
                    let mut out = enhancer.push(&mix.noisy)?;
                    out.extend(enhancer.finish()?);
                    row(&mut system.report, &out)?;
                }
                "oracle_wiener" => {
                    let clean_mag = streaming_magnitudes(&frame, &mix.clean)?;
                    let noise_mag = streaming_magnitudes(&frame, &mix.noise)?;
                    let gains = oracle_wiener(&clean_mag, &noise_mag)?;
                    let out = apply_gain_sequence(&frame, &mix.noisy, &gains)?;
                    row(&mut system.report, &out)?;
                }
                other => unreachable!("unknown system {other}"),
            }
        }
    }

    for spec in &args.external {
        let (name, path) = spec.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("--external takes name=path, got {spec:?}"))
        })?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{path}: {e}")))?;
        let target = systems
            .iter_mut()
            .find(|s| s.label == "model")
            .ok_or_else(|| {
                Error::InvalidConfig(
                    "--external scores need a --checkpoint to attach to".into(),
                )
            })?;
        target.report.add_external_scores(name, &text)?;
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let mut summary = Vec::new();
    for system in &systems {
        let csv_path = args.out_dir.join(format!("report_{}.csv", system.label));
        let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
        system.report.write_csv(&mut csv)?;
        csv.flush()?;

        writeln!(summary, "system: {}", system.label)?;
        system.report.write_summary(&mut summary)?;
        writeln!(summary)?;
    }
    std::fs::write(args.out_dir.join("summary.txt"), &summary)?;
    print!("{}", String::from_utf8_lossy(&summary));
    println!("per-clip reports in {}", args.out_dir.display());
    Ok(())
}
