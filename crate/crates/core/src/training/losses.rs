//! The loss family: plain magnitude MSE, the speech-distortion /
//! noise-residual decomposition with a fixed weight, and the SNR-adaptive
//! weight.
//!
//! "Mean" is always taken jointly over frames and bins of one sequence;
//! sequence losses are then averaged over the batch. The speech term runs
//! only over speech-active (SA) frames; the noise term runs over all frames.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::training::vad::VadConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossFamily {
    Mse,
    FixedWeighted,
    SnrWeighted,
}

impl LossFamily {
    pub fn name(&self) -> &'static str {
        match self {
            LossFamily::Mse => "mse",
            LossFamily::FixedWeighted => "fixed_weighted",
            LossFamily::SnrWeighted => "snr_weighted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossFamily::Mse),
            "fixed_weighted" | "fixed" => Ok(LossFamily::FixedWeighted),
            "snr_weighted" | "snr" => Ok(LossFamily::SnrWeighted),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss family {other:?} (expected mse, fixed_weighted, or snr_weighted)"
            ))),
        }
    }
}

/// Which loss to train with, and its weighting knobs.
///
/// `beta_db` is the SNR-adaptive midpoint: an utterance at that SNR gets
/// alpha = 0.5. It is exposed in dB everywhere and converted to linear
/// internally.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub family: LossFamily,
    pub alpha: f64,
    pub beta_db: f64,
    pub vad: VadConfig,
}

impl LossConfig {
    pub fn new(family: LossFamily, alpha: f64, beta_db: f64, vad: VadConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
        }
        let cfg = Self { family, alpha, beta_db, vad };
        if cfg.beta_linear() <= 0.0 {
            return Err(Error::InvalidConfig(format!("beta {beta_db} dB is not positive linear")));
        }
        Ok(cfg)
    }

    /// Fixed weighting at the operating point used throughout: alpha = 0.35.
    pub fn default_fixed() -> Self {
        Self::new(LossFamily::FixedWeighted, 0.35, 18.2, VadConfig::default()).unwrap()
    }

    pub fn beta_linear(&self) -> f64 {
        10f64.powf(self.beta_db / 10.0)
    }
}

fn check_shapes(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean over all frames and bins of `(|S| - G|X|)^2`.
pub fn loss_mse(gain: &Array2<f64>, clean: &Array2<f64>, noisy: &Array2<f64>) -> Result<f64> {
    check_shapes(gain, clean, "gain vs clean")?;
    check_shapes(gain, noisy, "gain vs noisy")?;
    let n = gain.len() as f64;
    let sum = gain
        .iter()
        .zip(clean.iter())
        .zip(noisy.iter())
        .map(|((&g, &s), &x)| {
            let d = s - g * x;
            d * d
        })
        .sum::<f64>();
    Ok(sum / n)
}

/// Speech distortion: mean over speech-active frames and all bins of
/// `(|S| - G|S|)^2`. An empty mask contributes zero.
pub fn loss_speech(gain: &Array2<f64>, clean: &Array2<f64>, sa_mask: &[bool]) -> Result<f64> {
    check_shapes(gain, clean, "gain vs clean")?;
    if sa_mask.len() != gain.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "mask covers {} frames, tensors have {}",
            sa_mask.len(),
            gain.nrows()
        )));
    }
    let active = sa_mask.iter().filter(|&&v| v).count();
    if active == 0 {
        return Ok(0.0);
    }
    let bins = gain.ncols();
    let mut sum = 0.0;
    for (t, &voiced) in sa_mask.iter().enumerate() {
        if !voiced {
            continue;
        }
        for k in 0..bins {
            let d = clean[[t, k]] * (1.0 - gain[[t, k]]);
            sum += d * d;
        }
    }
    Ok(sum / (active * bins) as f64)
}

/// Residual noise: mean over all frames and bins of `(G|N|)^2`.
pub fn loss_noise(gain: &Array2<f64>, noise: &Array2<f64>) -> Result<f64> {
    check_shapes(gain, noise, "gain vs noise")?;
    let n = gain.len() as f64;
    let sum = gain
        .iter()
        .zip(noise.iter())
        .map(|(&g, &v)| {
            let d = g * v;
            d * d
        })
        .sum::<f64>();
    Ok(sum / n)
}

/// Convex combination `alpha * L_speech + (1 - alpha) * L_noise`.
pub fn loss_weighted(
    gain: &Array2<f64>,
    clean: &Array2<f64>,
    noise: &Array2<f64>,
    sa_mask: &[bool],
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(alpha * loss_speech(gain, clean, sa_mask)? + (1.0 - alpha) * loss_noise(gain, noise)?)
}

/// Linear utterance SNR `sum |S|^2 / sum |N|^2` over whole magnitude tensors.
pub fn utterance_snr(clean: &Array2<f64>, noise: &Array2<f64>) -> Result<f64> {
    check_shapes(clean, noise, "clean vs noise")?;
    let es: f64 = clean.iter().map(|&v| v * v).sum();
    let en: f64 = noise.iter().map(|&v| v * v).sum();
    if en <= 0.0 {
        log::warn!("zero-noise utterance: SNR saturates");
        return Ok(f64::INFINITY);
    }
    Ok(es / en)
}

/// SNR-adaptive speech-distortion weight `alpha = SNR / (SNR + beta)`.
///
/// Equals 0.5 exactly at SNR = beta, increases monotonically with SNR, and
/// saturates to 1 for noise-free utterances.
pub fn snr_alpha(clean: &Array2<f64>, noise: &Array2<f64>, beta_linear: f64) -> Result<f64> {
    if beta_linear <= 0.0 {
        return Err(Error::InvalidConfig(format!("beta must be positive, got {beta_linear}")));
    }
    let snr = utterance_snr(clean, noise)?;
    if snr.is_infinite() {
        return Ok(1.0);
    }
    Ok(snr / (snr + beta_linear))
}

/// Per-sequence loss pieces, as logged per training step.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: f64,
    pub speech: f64,
    pub noise: f64,
    /// The speech-distortion weight actually used (configured or SNR-derived;
    /// NaN for the plain MSE family).
    pub alpha: f64,
}

/// Evaluates the configured loss on one sequence's gains and returns both its
/// pieces and the gradient of the total with respect to every gain entry.
///
/// The SNR-adaptive alpha depends only on the data, not on the gains, so it
/// contributes no extra gradient term.
pub fn loss_and_dgain(
    gain: &Array2<f64>,
    clean: &Array2<f64>,
    noisy: &Array2<f64>,
    noise: &Array2<f64>,
    sa_mask: &[bool],
    cfg: &LossConfig,
) -> Result<(LossParts, Array2<f64>)> {
    let speech = loss_speech(gain, clean, sa_mask)?;
    let noise_l = loss_noise(gain, noise)?;
    let (frames, bins) = gain.dim();
    let active = sa_mask.iter().filter(|&&v| v).count();

    let (total, alpha) = match cfg.family {
        LossFamily::Mse => (loss_mse(gain, clean, noisy)?, f64::NAN),
        LossFamily::FixedWeighted => {
            (cfg.alpha * speech + (1.0 - cfg.alpha) * noise_l, cfg.alpha)
        }
        LossFamily::SnrWeighted => {
            let a = snr_alpha(clean, noise, cfg.beta_linear())?;
            (a * speech + (1.0 - a) * noise_l, a)
        }
    };
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {total} on a {frames}-frame sequence")));
    }

    let mut dgain = Array2::zeros((frames, bins));
    match cfg.family {
        LossFamily::Mse => {
            let n = (frames * bins) as f64;
            for t in 0..frames {
                for k in 0..bins {
                    let (g, s, x) = (gain[[t, k]], clean[[t, k]], noisy[[t, k]]);
                    dgain[[t, k]] = 2.0 * (g * x - s) * x / n;
                }
            }
        }
        LossFamily::FixedWeighted | LossFamily::SnrWeighted => {
            let a = alpha;
            let n_all = (frames * bins) as f64;
            let n_sa = (active * bins) as f64;
            for t in 0..frames {
                for k in 0..bins {
                    let (g, s, v) = (gain[[t, k]], clean[[t, k]], noise[[t, k]]);
                    let mut d = (1.0 - a) * 2.0 * g * v * v / n_all;
                    if sa_mask[t] && active > 0 {
                        d += a * 2.0 * (g - 1.0) * s * s / n_sa;
                    }
                    dgain[[t, k]] = d;
                }
            }
        }
    }
    Ok((LossParts { total, speech, noise: noise_l, alpha }, dgain))
}
