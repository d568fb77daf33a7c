//! Energy-based frame-level voice activity detection, used offline at
//! training time to pick the speech-active frames the distortion loss runs
//! over.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Band, smoothing, and threshold of the energy VAD.
#[derive(Clone, Copy, Debug)]
pub struct VadConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Length of the centered moving average over band power; must be odd.
    pub smooth_frames: usize,
    /// Frames this far (in dB) below the utterance's smoothed peak are
    /// treated as silence.
    pub threshold_db: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self { band_low_hz: 300.0, band_high_hz: 5000.0, smooth_frames: 3, threshold_db: 30.0 }
    }
}

impl VadConfig {
    /// Inclusive bin range covering the configured band: the lowest bin at or
    /// above `band_low_hz` through the highest at or below `band_high_hz`.
    pub fn bin_range(&self, bin_hz: f64, bins: usize) -> Result<(usize, usize)> {
        if self.smooth_frames % 2 == 0 || self.smooth_frames == 0 {
            return Err(Error::InvalidConfig(format!(
                "smoothing length must be odd, got {}",
                self.smooth_frames
            )));
        }
        if !(self.band_low_hz >= 0.0 && self.band_low_hz < self.band_high_hz) {
            return Err(Error::InvalidConfig(format!(
                "band [{}, {}] Hz is not ordered",
                self.band_low_hz, self.band_high_hz
            )));
        }
        let lo = (self.band_low_hz / bin_hz).ceil() as usize;
        let hi = (self.band_high_hz / bin_hz).floor() as usize;
        if hi >= bins {
            return Err(Error::InvalidConfig(format!(
                "band reaches bin {hi} but the spectrum has {bins} bins (Nyquist exceeded)"
            )));
        }
        if lo > hi {
            return Err(Error::InvalidConfig("band narrower than one bin".into()));
        }
        Ok((lo, hi))
    }
}

/// Marks the voiced frames of a clean-speech magnitude sequence.
///
/// Band power per frame is summed over the configured bins, smoothed with a
/// zero-padded centered moving average, and compared against the smoothed
/// trace's own peak minus the threshold. The comparison is strict: a frame
/// sitting exactly at the threshold is unvoiced. An all-silent utterance
/// yields an all-false mask (and a warning); the speech-distortion loss then
/// contributes nothing.
pub fn vad_mask(clean_stftm: &Array2<f64>, cfg: &VadConfig, bin_hz: f64) -> Result<Vec<bool>> {
    let (frames, bins) = clean_stftm.dim();
    let (lo, hi) = cfg.bin_range(bin_hz, bins)?;

    let power: Vec<f64> = (0..frames)
        .map(|t| (lo..=hi).map(|k| clean_stftm[[t, k]] * clean_stftm[[t, k]]).sum())
        .collect();

    let half = cfg.smooth_frames / 2;
    let smoothed: Vec<f64> = (0..frames)
        .map(|t| {
            let mut acc = 0.0;
            for d in 0..cfg.smooth_frames {
                let idx = t as i64 + d as i64 - half as i64;
                if idx >= 0 && (idx as usize) < frames {
                    acc += power[idx as usize];
                }
            }
            acc / cfg.smooth_frames as f64
        })
        .collect();

    let peak = smoothed.iter().cloned().fold(0.0_f64, f64::max);
    if peak <= 0.0 {
        log::warn!("all-silent utterance: VAD mask is empty");
        return Ok(vec![false; frames]);
    }
    let threshold = peak * 10f64.powf(-cfg.threshold_db / 10.0);
    Ok(smoothed.iter().map(|&s| s > threshold).collect())
}
