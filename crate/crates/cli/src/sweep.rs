//! `sweep`: train one model per weighting coefficient, measure quality and
//! the two loss energies on a held-out dataset, and emit curve data with the
//! best coefficient marked per metric.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use ndarray::Array2;

use streamgain::data::Mixture;
use streamgain::dsp::{stft_magnitudes, FrameConfig, Stft};
use streamgain::enhance::enhance_signal;
use streamgain::features::{FeatureExtractor, FeatureKind, GlobalStats};
use streamgain::metrics::{cepstral_distance, si_sdr};
use streamgain::model::ModelParams;
use streamgain::training::{
    forward_sequence, loss_noise, loss_speech, train, vad_mask, LossFamily, VadConfig,
};
use streamgain::{Error, Result};

use crate::config::{parse_snr_set, RunConfig, RunFlags};
use crate::dataset::read_dataset;

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// fixed-weighting coefficients to sweep, e.g. `0.05,0.35,0.65,0.95`
    #[arg(long, conflicts_with = "betas")]
    alphas: Option<String>,
    /// SNR-weighting betas in dB to sweep
    #[arg(long)]
    betas: Option<String>,
    /// held-out dataset directory (output of `mix`) the curves are measured on
    #[arg(long)]
    eval_dataset: PathBuf,
}

/// Higher SI-SDR is better; the other metrics are distances or residual
/// energies where lower is better.
const METRICS: [(&str, bool); 4] = [
    ("si_sdr_db", true),
    ("cd", false),
    ("speech_distortion", false),
    ("residual_noise", false),
];

struct CurvePoint {
    coefficient: f64,
    values: [f64; 4],
}

/// Mean metrics of one trained model over the held-out items: waveform
/// scores from the streaming path, loss energies from the model's own gains
/// on the training-style frame grid.
fn measure(
    frame: &FrameConfig,
    feature: FeatureKind,
    stats: Option<&GlobalStats>,
    params: &ModelParams,
    items: &[Mixture],
    vad: &VadConfig,
) -> Result<[f64; 4]> {
    let stft = Stft::new(frame.clone());
    let mut sums = [0.0f64; 4];
    for mix in items {
        let enhanced = enhance_signal(frame, feature, stats.cloned(), params, &mix.noisy)?;
        sums[0] += si_sdr(&mix.clean, &enhanced)?;
        sums[1] += cepstral_distance(&mix.clean, &enhanced, frame, vad)?;

        let noisy_mag = stft_magnitudes(&stft, &mix.noisy)?;
        let clean_mag = stft_magnitudes(&stft, &mix.clean)?;
        let noise_mag = stft_magnitudes(&stft, &mix.noise)?;
        let mut extractor =
            FeatureExtractor::new(feature, frame.bins(), frame.hop_seconds(), stats.cloned())?;
        let mut features = Array2::zeros(noisy_mag.dim());
        for t in 0..noisy_mag.nrows() {
            let f = extractor.process(noisy_mag.row(t).as_slice().unwrap())?;
            features.row_mut(t).assign(&ndarray::Array1::from_vec(f));
        }
        let gains = forward_sequence(params, &features)?.gains;
        let sa_mask = vad_mask(&clean_mag, vad, frame.bin_hz())?;
        sums[2] += loss_speech(&gains, &clean_mag, &sa_mask)?;
        sums[3] += loss_noise(&gains, &noise_mag)?;
    }
    let n = items.len() as f64;
    Ok(sums.map(|s| s / n))
}

pub fn run(args: &SweepArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&args.run)?;
    let (label, family, coefficients) = match (&args.alphas, &args.betas) {
        (Some(list), None) => ("alpha", LossFamily::FixedWeighted, parse_snr_set(list)?),
        (None, Some(list)) => ("beta_db", LossFamily::SnrWeighted, parse_snr_set(list)?),
        _ => {
            return Err(Error::InvalidConfig(
                "exactly one of --alphas or --betas is required".into(),
            ))
        }
    };
    if family == LossFamily::FixedWeighted {
        if let Some(bad) = coefficients.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidConfig(format!("alpha {bad} outside [0, 1]")));
        }
    }

    let frame = FrameConfig::default_16k();
    let vad = VadConfig::default();
    let pool = crate::train::build_pool(&cfg)?;
    let eval_items: Vec<Mixture> = read_dataset(&args.eval_dataset)?
        .iter()
        .map(|item| item.load())
        .collect::<Result<_>>()?;
    if eval_items.is_empty() {
        return Err(Error::Data(format!(
            "{}: dataset is empty",
            args.eval_dataset.display()
        )));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;

    let mut curve = Vec::with_capacity(coefficients.len());
    for &c in &coefficients {
        let mut train_cfg = cfg.train_config()?;
        train_cfg.loss.family = family;
        match family {
            LossFamily::FixedWeighted => train_cfg.loss.alpha = c,
            LossFamily::SnrWeighted => train_cfg.loss.beta_db = c,
            LossFamily::Mse => unreachable!("sweeps are over weighted families"),
        }
        let log_path = cfg.out_dir.join(format!("train_{label}{c}.csv"));
        let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
        for (k, v) in cfg.echo_lines() {
            writeln!(log, "# {k} {v}")?;
        }
        let outcome = train(&pool, &frame, &train_cfg, Some(&mut log), None)?;
        log.flush()?;

        let values = measure(
            &frame,
            train_cfg.feature,
            outcome.global_stats.as_ref(),
            &outcome.params,
            &eval_items,
            &vad,
        )?;
        println!(
            "{label} {c}: si_sdr {:.2} dB, cd {:.3}, speech_distortion {:.6}, residual_noise {:.6}",
            values[0], values[1], values[2], values[3]
        );
        curve.push(CurvePoint { coefficient: c, values });
    }

    // per metric, the index of the best coefficient
    let best: Vec<usize> = METRICS
        .iter()
        .enumerate()
        .map(|(m, (_, higher_is_better))| {
            let key = |p: &CurvePoint| p.values[m];
            let mut idx = 0;
            for (i, p) in curve.iter().enumerate() {
                let better = if *higher_is_better {
                    key(p) > key(&curve[idx])
                } else {
                    key(p) < key(&curve[idx])
                };
                if better {
                    idx = i;
                }
            }
            idx
        })
        .collect();

    let csv_path = cfg.out_dir.join("sweep.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(csv, "coefficient,metric,value,best")?;
    for (i, point) in curve.iter().enumerate() {
        for (m, (name, _)) in METRICS.iter().enumerate() {
            writeln!(
                csv,
                "{},{name},{},{}",
                point.coefficient,
                point.values[m],
                u8::from(best[m] == i)
            )?;
        }
    }
    csv.flush()?;

    for (m, (name, _)) in METRICS.iter().enumerate() {
        println!("best {label} for {name}: {}", curve[best[m]].coefficient);
    }
    println!("curve data in {}", csv_path.display());
    Ok(())
}
