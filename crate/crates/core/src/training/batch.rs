//! The one-minute minibatch protocol: every batch carries a fixed audio
//! budget (60 s by default) split into `round(budget / seq_len)` sequences,
//! each a random aligned excerpt of one mixture.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::{Mixture, SAMPLE_RATE_HZ};
use crate::dsp::{stft_magnitudes, FrameConfig, Stft};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureKind, GlobalStats};
use crate::training::losses::utterance_snr;
use crate::training::vad::{vad_mask, VadConfig};

/// One training sequence: aligned magnitude tensors (frames x bins), the
/// precomputed network input, the speech-active mask, and the sequence's
/// global SNR.
pub struct TrainSequence {
    pub features: Array2<f64>,
    pub noisy_mag: Array2<f64>,
    pub clean_mag: Array2<f64>,
    pub noise_mag: Array2<f64>,
    pub sa_mask: Vec<bool>,
    pub snr_linear: f64,
}

pub struct Batch {
    pub sequences: Vec<TrainSequence>,
    pub seq_len_seconds: f64,
}

/// Draws aligned excerpts of training sequences from a mixture pool.
pub struct BatchStream<'a> {
    pool: &'a [Mixture],
    stft: Stft,
    feature: FeatureKind,
    global: Option<GlobalStats>,
    vad: VadConfig,
    seq_len_s: f64,
    budget_s: f64,
    rng: ChaCha8Rng,
}

/// Stream of one-minute batches. `seq_len_seconds` may be anything positive;
/// the grid {1, 2, 5, 10, 20} is the one studied, not a restriction.
pub fn make_batches<'a>(
    pool: &'a [Mixture],
    frame: &FrameConfig,
    feature: FeatureKind,
    global: Option<GlobalStats>,
    vad: VadConfig,
    seq_len_seconds: f64,
    seed: u64,
) -> Result<BatchStream<'a>> {
    BatchStream::with_budget(pool, frame, feature, global, vad, seq_len_seconds, 60.0, seed)
}

impl<'a> BatchStream<'a> {
    /// Same protocol with a non-standard audio budget per batch; smaller
    /// budgets keep toy-scale experiments fast.
    #[allow(clippy::too_many_arguments)]
    pub fn with_budget(
        pool: &'a [Mixture],
        frame: &FrameConfig,
        feature: FeatureKind,
        global: Option<GlobalStats>,
        vad: VadConfig,
        seq_len_seconds: f64,
        budget_seconds: f64,
        seed: u64,
    ) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Data("empty mixture pool".into()));
        }
        if seq_len_seconds <= 0.0 || budget_seconds <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sequence length {seq_len_seconds} s and budget {budget_seconds} s must be positive"
            )));
        }
        let seq_samples = (seq_len_seconds * SAMPLE_RATE_HZ as f64).round() as usize;
        if seq_samples < frame.frame_len {
            return Err(Error::InvalidConfig(format!(
                "sequence length {seq_len_seconds} s is shorter than one analysis frame"
            )));
        }
        Ok(Self {
            pool,
            stft: Stft::new(frame.clone()),
            feature,
            global,
            vad,
            seq_len_s: seq_len_seconds,
            budget_s: budget_seconds,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn sequences_per_batch(&self) -> usize {
        ((self.budget_s / self.seq_len_s).round() as usize).max(1)
    }

    fn seq_samples(&self) -> usize {
        (self.seq_len_s * SAMPLE_RATE_HZ as f64).round() as usize
    }

    /// Cuts one aligned excerpt out of a mixture, tiling if it is shorter
    /// than the sequence length.
    fn aligned_excerpt(&mut self, mix: &Mixture, len: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let total = mix.noisy.len();
        let slice_at = |src: &[f64], offset: usize| -> Vec<f64> {
            (offset..offset + len).map(|i| src[i % total]).collect()
        };
        let max_offset = total.saturating_sub(len);
        let offset = self.rng.gen_range(0..=max_offset);
        (slice_at(&mix.noisy, offset), slice_at(&mix.clean, offset), slice_at(&mix.noise, offset))
    }

    /// Advances past `n` batches without cutting or transforming them,
    /// consuming exactly the randomness `next_batch` would. A run resumed at
    /// step k therefore sees the same data an uninterrupted run would.
    pub fn skip_batches(&mut self, n: u64) {
        let count = self.sequences_per_batch();
        let len = self.seq_samples();
        for _ in 0..n {
            for _ in 0..count {
                let mix = &self.pool[self.rng.gen_range(0..self.pool.len())];
                let max_offset = mix.noisy.len().saturating_sub(len);
                let _ = self.rng.gen_range(0..=max_offset);
            }
        }
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let count = self.sequences_per_batch();
        let len = self.seq_samples();
        let mut sequences = Vec::with_capacity(count);
        for _ in 0..count {
            let mix = &self.pool[self.rng.gen_range(0..self.pool.len())];
            let (noisy, clean, noise) = self.aligned_excerpt(mix, len);

            let noisy_mag = stft_magnitudes(&self.stft, &noisy)?;
            let clean_mag = stft_magnitudes(&self.stft, &clean)?;
            let noise_mag = stft_magnitudes(&self.stft, &noise)?;

            let mut extractor = FeatureExtractor::new(
                self.feature,
                self.stft.config().bins(),
                self.stft.config().hop_seconds(),
                self.global.clone(),
            )?;
            let frames = noisy_mag.nrows();
            let mut features = Array2::zeros((frames, self.stft.config().bins()));
            for t in 0..frames {
                let f = extractor.process(noisy_mag.row(t).as_slice().unwrap())?;
                features.row_mut(t).assign(&ndarray::Array1::from_vec(f));
            }

            let sa_mask = vad_mask(&clean_mag, &self.vad, self.stft.config().bin_hz())?;
            let snr_linear = utterance_snr(&clean_mag, &noise_mag)?;
            sequences.push(TrainSequence {
                features,
                noisy_mag,
                clean_mag,
                noise_mag,
                sa_mask,
                snr_linear,
            });
        }
        Ok(Batch { sequences, seq_len_seconds: self.seq_len_s })
    }
}
