//! The inference path: noisy samples in, enhanced samples out, one hop at a
//! time. Analysis, feature extraction, the GRU stack, gain application and
//! overlap-add resynthesis all run frame-synchronously, so memory use is
//! constant regardless of stream length.
//!
//! The analysis/synthesis pipeline is `frame_len - hop` samples behind its
//! input. The enhancer compensates: output sample `i` corresponds to input
//! sample `i`, and [`StreamEnhancer::finish`] pads with zeros internally so
//! the output has exactly the input's length.

use ndarray::{Array1, Array2};

use crate::checkpoint::Checkpoint;
use crate::dsp::{apply_gain, FrameConfig, Framer, OlaState, Stft};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureKind, GlobalStats};
use crate::model::{forward_frame, GruState, ModelParams};

pub struct StreamEnhancer<'a> {
    params: &'a ModelParams,
    stft: Stft,
    framer: Framer,
    ola: OlaState,
    features: FeatureExtractor,
    state: GruState,
    /// Leading synthesized samples still to discard (pipeline delay).
    to_drop: usize,
    samples_in: usize,
    samples_out: usize,
    finished: bool,
}

impl<'a> StreamEnhancer<'a> {
    pub fn new(
        frame: &FrameConfig,
        feature: FeatureKind,
        global: Option<GlobalStats>,
        params: &'a ModelParams,
    ) -> Result<Self> {
        if params.input_dim() != frame.bins() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} inputs, frame config has {} bins",
                params.input_dim(),
                frame.bins()
            )));
        }
        let features = FeatureExtractor::new(feature, frame.bins(), frame.hop_seconds(), global)?;
        Ok(Self {
            params,
            stft: Stft::new(frame.clone()),
            framer: Framer::new(frame),
            ola: OlaState::new(frame),
            features,
            state: GruState::new(params),
            to_drop: frame.latency_samples(),
            samples_in: 0,
            samples_out: 0,
            finished: false,
        })
    }

    /// Input samples ahead of what has been emitted so far; what `finish`
    /// will flush.
    pub fn pending(&self) -> usize {
        self.samples_in - self.samples_out
    }

    fn ingest(&mut self, samples: &[f64], out: &mut Vec<f64>) -> Result<()> {
        self.framer.push(samples);
        while let Some((frame, index)) = self.framer.next_frame() {
            let spectrum = self.stft.analyze(frame, index)?;
            let gains = {
                let mags = spectrum.magnitudes();
                let feat = self.features.process(&mags)?;
                forward_frame(self.params, &mut self.state, &feat)?
            };
            let gained = apply_gain(&spectrum, &gains)?;
            let synth = self.stft.synthesize(&gained, &mut self.ola)?;
            let keep = synth.len().min(self.to_drop);
            self.to_drop -= keep;
            out.extend_from_slice(&synth[keep..]);
        }
        Ok(())
    }

    /// Feeds a chunk of any size and returns whatever enhanced samples are
    /// ready. Chunking is transparent: any split of the input produces the
    /// same concatenated output.
    pub fn push(&mut self, samples: &[f64]) -> Result<Vec<f64>> {
        if self.finished {
            return Err(Error::Contract("push after finish".into()));
        }
        let mut out = Vec::new();
        self.samples_in += samples.len();
        self.ingest(samples, &mut out)?;
        self.samples_out += out.len();
        Ok(out)
    }

    /// Flushes the pipeline delay with internal zero padding and returns the
    /// tail, making the total output exactly as long as the total input.
    pub fn finish(&mut self) -> Result<Vec<f64>> {
        if self.finished {
            return Err(Error::Contract("finish called twice".into()));
        }
        self.finished = true;
        let cfg = self.stft.config();
        let (hop, latency) = (cfg.hop, cfg.latency_samples());
        let frames_needed = (self.samples_in + latency).div_ceil(hop);
        let zeros = frames_needed * hop - self.samples_in;
        let mut out = Vec::new();
        self.ingest(&vec![0.0; zeros], &mut out)?;
        out.truncate(self.samples_in - self.samples_out);
        self.samples_out += out.len();
        Ok(out)
    }

    /// Back to a fresh stream: framer, overlap-add, feature normalization
    /// and recurrent state all cleared.
    pub fn reset(&mut self) {
        let cfg = self.stft.config();
        self.framer = Framer::new(cfg);
        self.ola.reset();
        self.features.reset();
        self.state.reset();
        self.to_drop = cfg.latency_samples();
        self.samples_in = 0;
        self.samples_out = 0;
        self.finished = false;
    }
}

impl Checkpoint {
    /// A fresh enhancement stream using this checkpoint's geometry, feature
    /// recipe and weights.
    pub fn enhancer(&self) -> Result<StreamEnhancer<'_>> {
        StreamEnhancer::new(&self.frame, self.feature, self.stats.clone(), &self.params)
    }
}

/// Whole-signal convenience wrapper over the streaming path.
pub fn enhance_signal(
    frame: &FrameConfig,
    feature: FeatureKind,
    global: Option<GlobalStats>,
    params: &ModelParams,
    samples: &[f64],
) -> Result<Vec<f64>> {
    let mut enhancer = StreamEnhancer::new(frame, feature, global, params)?;
    let mut out = enhancer.push(samples)?;
    out.extend(enhancer.finish()?);
    Ok(out)
}

/// Number of analysis frames the streaming pipeline produces for an input of
/// `n` samples (leading priming plus trailing flush included).
pub fn streaming_frame_count(frame: &FrameConfig, n: usize) -> usize {
    (n + frame.latency_samples()).div_ceil(frame.hop)
}

/// Magnitude spectrogram on the streaming pipeline's frame grid: primed with
/// zeros like a live stream and zero-padded at the end, so row `t` here is
/// exactly the frame a [`StreamEnhancer`] sees at step `t`. Masks computed
/// from these line up one-to-one with [`apply_gain_sequence`].
pub fn streaming_magnitudes(frame: &FrameConfig, samples: &[f64]) -> Result<Array2<f64>> {
    let stft = Stft::new(frame.clone());
    let frames = streaming_frame_count(frame, samples.len());
    let mut framer = Framer::new(frame);
    framer.push(samples);
    framer.push(&vec![0.0; frames * frame.hop - samples.len()]);
    let mut out = Array2::zeros((frames, frame.bins()));
    while let Some((chunk, index)) = framer.next_frame() {
        let spectrum = stft.analyze(chunk, index)?;
        out.row_mut(index).assign(&Array1::from_vec(spectrum.magnitudes()));
    }
    Ok(out)
}

/// Runs externally supplied per-frame gains (one row per streaming frame)
/// through the same analysis/resynthesis chain as the model path, with the
/// same delay compensation. Output length equals input length.
pub fn apply_gain_sequence(
    frame: &FrameConfig,
    samples: &[f64],
    gains: &Array2<f64>,
) -> Result<Vec<f64>> {
    let frames = streaming_frame_count(frame, samples.len());
    if gains.dim() != (frames, frame.bins()) {
        return Err(Error::DimensionMismatch(format!(
            "gains are {:?}, streaming grid needs ({frames}, {})",
            gains.dim(),
            frame.bins()
        )));
    }
    let stft = Stft::new(frame.clone());
    let mut framer = Framer::new(frame);
    let mut ola = OlaState::new(frame);
    framer.push(samples);
    framer.push(&vec![0.0; frames * frame.hop - samples.len()]);
    let mut out = Vec::with_capacity(samples.len());
    let mut to_drop = frame.latency_samples();
    while let Some((chunk, index)) = framer.next_frame() {
        let spectrum = stft.analyze(chunk, index)?;
        let gained = apply_gain(&spectrum, gains.row(index).as_slice().unwrap())?;
        let synth = stft.synthesize(&gained, &mut ola)?;
        let keep = synth.len().min(to_drop);
        to_drop -= keep;
        out.extend_from_slice(&synth[keep..]);
    }
    out.truncate(samples.len());
    Ok(out)
}
