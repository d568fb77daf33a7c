//! Streaming STFT analysis and weighted overlap-add synthesis.
//!
//! The processing chain is frame-in/frame-out: [`Stft::analyze`] turns one
//! windowed frame into a half spectrum, a real-valued gain is applied per bin
//! with the noisy phase kept ([`apply_gain`]), and [`Stft::synthesize`]
//! reconstructs `hop` output samples per frame via weighted overlap-add.
//!
//! The synthesis window equals the analysis window; the overlapped
//! window-squared sum is precomputed and divided out, which gives exact
//! reconstruction at any overlap where that sum is strictly positive.
//! [`Framer`] handles hop-in/hop-out streaming with a fixed algorithmic
//! latency of `frame_len - hop` samples.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};

/// Frame geometry and analysis window for the STFT chain.
#[derive(Clone, Debug)]
pub struct FrameConfig {
    pub sample_rate_hz: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Vec<f64>,
}

impl FrameConfig {
    /// 16 kHz, 32 ms frames, 8 ms hop (75% overlap), 512-point FFT.
    pub fn default_16k() -> Self {
        Self::new(16_000, 512, 128, 512).expect("default config is valid")
    }

    pub fn new(sample_rate_hz: u32, frame_len: usize, hop: usize, fft_size: usize) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if hop == 0 || frame_len == 0 {
            return Err(Error::InvalidConfig("frame_len and hop must be positive".into()));
        }
        if hop * 4 != frame_len {
            return Err(Error::InvalidConfig(format!(
                "hop must be frame_len/4 (got frame_len={frame_len}, hop={hop})"
            )));
        }
        if fft_size < frame_len {
            return Err(Error::InvalidConfig(format!(
                "fft_size {fft_size} must be at least frame_len {frame_len}"
            )));
        }
        let window = make_window(frame_len)?;
        Ok(Self { sample_rate_hz, frame_len, hop, fft_size, window })
    }

    /// Number of spectrum bins: `fft_size/2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame shift in seconds.
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate_hz as f64
    }

    /// Algorithmic latency of the streaming chain in samples.
    ///
    /// A [`Framer`] primes its buffer with this many zeros, so the output
    /// stream lags the input by exactly `frame_len - hop` samples (24 ms at
    /// the default configuration).
    pub fn latency_samples(&self) -> usize {
        self.frame_len - self.hop
    }

    /// Width of one frequency bin in Hz.
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.fft_size as f64
    }
}

/// Periodic (DFT-even) Hamming window: `w[n] = 0.54 - 0.46 cos(2*pi*n/N)`.
///
/// The periodic form sums to a constant across shifts of `N/4`, which the
/// overlap-add chain relies on.
pub fn make_window(frame_len: usize) -> Result<Vec<f64>> {
    if frame_len == 0 || frame_len % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "window length must be even and positive, got {frame_len}"
        )));
    }
    Ok((0..frame_len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / frame_len as f64).cos())
        .collect())
}

/// One frame of complex STFT coefficients (`fft_size/2 + 1` bins).
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub frame_index: usize,
}

impl Spectrum {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }
}

/// Applies a real per-bin gain to a spectrum, preserving the noisy phase.
pub fn apply_gain(noisy: &Spectrum, gain: &[f64]) -> Result<Spectrum> {
    if gain.len() != noisy.bins.len() {
        return Err(Error::DimensionMismatch(format!(
            "gain has {} values but spectrum has {} bins",
            gain.len(),
            noisy.bins.len()
        )));
    }
    for (k, &g) in gain.iter().enumerate() {
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::Contract(format!("gain[{k}] = {g} outside [0, 1]")));
        }
    }
    Ok(Spectrum {
        bins: noisy.bins.iter().zip(gain).map(|(c, &g)| c * g).collect(),
        frame_index: noisy.frame_index,
    })
}

/// Per-stream overlap-add state for [`Stft::synthesize`].
pub struct OlaState {
    /// Carry-over of the last `frame_len - hop` accumulated samples.
    tail: Vec<f64>,
    /// Steady-state sum of squared window values across overlapping frames,
    /// one entry per output sample within a hop.
    norm: Vec<f64>,
    frame_len: usize,
    hop: usize,
    // scratch space so synthesis does not allocate per frame
    time_buf: Vec<f64>,
    spec_buf: Vec<Complex64>,
}

impl OlaState {
    pub fn new(cfg: &FrameConfig) -> Self {
        let overlap_frames = cfg.frame_len / cfg.hop;
        let norm = (0..cfg.hop)
            .map(|j| {
                (0..overlap_frames)
                    .map(|m| {
                        let w = cfg.window[j + m * cfg.hop];
                        w * w
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<_>>();
        debug_assert!(norm.iter().all(|&v| v > 0.0));
        Self {
            tail: vec![0.0; cfg.frame_len - cfg.hop],
            norm,
            frame_len: cfg.frame_len,
            hop: cfg.hop,
            time_buf: vec![0.0; cfg.fft_size],
            spec_buf: vec![Complex64::new(0.0, 0.0); cfg.bins()],
        }
    }

    pub fn reset(&mut self) {
        self.tail.fill(0.0);
    }
}

/// STFT analysis/synthesis engine. Immutable after construction and shareable
/// across streams; all per-stream state lives in [`OlaState`].
pub struct Stft {
    cfg: FrameConfig,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
}

impl Stft {
    pub fn new(cfg: FrameConfig) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        let r2c = planner.plan_fft_forward(cfg.fft_size);
        let c2r = planner.plan_fft_inverse(cfg.fft_size);
        Self { cfg, r2c, c2r }
    }

    pub fn config(&self) -> &FrameConfig {
        &self.cfg
    }

    /// Windowed real FFT of one `frame_len` frame.
    pub fn analyze(&self, samples: &[f64], frame_index: usize) -> Result<Spectrum> {
        if samples.len() != self.cfg.frame_len {
            return Err(Error::FrameSize { expected: self.cfg.frame_len, got: samples.len() });
        }
        let mut input = vec![0.0; self.cfg.fft_size];
        for (dst, (&x, &w)) in input.iter_mut().zip(samples.iter().zip(&self.cfg.window)) {
            *dst = x * w;
        }
        let mut bins = vec![Complex64::new(0.0, 0.0); self.cfg.bins()];
        self.r2c
            .process(&mut input, &mut bins)
            .map_err(|e| Error::Fft(e.to_string()))?;
        Ok(Spectrum { bins, frame_index })
    }

    /// Inverse FFT, synthesis windowing, and weighted overlap-add.
    /// Emits exactly `hop` samples per call.
    pub fn synthesize(&self, spec: &Spectrum, state: &mut OlaState) -> Result<Vec<f64>> {
        if state.frame_len != self.cfg.frame_len || state.hop != self.cfg.hop {
            return Err(Error::DimensionMismatch(
                "OlaState was initialized for a different frame configuration".into(),
            ));
        }
        if spec.bins.len() != self.cfg.bins() {
            return Err(Error::DimensionMismatch(format!(
                "spectrum has {} bins, expected {}",
                spec.bins.len(),
                self.cfg.bins()
            )));
        }
        state.spec_buf.copy_from_slice(&spec.bins);
        self.c2r
            .process(&mut state.spec_buf, &mut state.time_buf)
            .map_err(|e| Error::Fft(e.to_string()))?;

        // synthesis window + the 1/N the unnormalized FFT pair requires
        let scale = 1.0 / self.cfg.fft_size as f64;
        let hop = self.cfg.hop;
        let frame_len = self.cfg.frame_len;
        let mut out = Vec::with_capacity(hop);
        for j in 0..hop {
            let y = state.time_buf[j] * self.cfg.window[j] * scale;
            out.push((y + state.tail[j]) / state.norm[j]);
        }
        // shift the carry-over and add the rest of the windowed frame
        let tail_len = frame_len - hop;
        for n in 0..tail_len {
            let y = state.time_buf[n + hop] * self.cfg.window[n + hop] * scale;
            let carried = if n + hop < tail_len { state.tail[n + hop] } else { 0.0 };
            state.tail[n] = y + carried;
        }
        Ok(out)
    }
}

/// Magnitude spectrogram (frames x bins) of every complete frame of
/// `samples`, frames starting at multiples of the hop with no stream
/// priming. Offline helper for training and evaluation; the streaming path
/// goes through [`Framer`].
pub fn stft_magnitudes(stft: &Stft, samples: &[f64]) -> Result<ndarray::Array2<f64>> {
    let cfg = stft.config();
    if samples.len() < cfg.frame_len {
        return Err(Error::Data(format!(
            "{} samples is shorter than one {}-sample frame",
            samples.len(),
            cfg.frame_len
        )));
    }
    let frames = (samples.len() - cfg.frame_len) / cfg.hop + 1;
    let mut mags = ndarray::Array2::zeros((frames, cfg.bins()));
    for t in 0..frames {
        let spec = stft.analyze(&samples[t * cfg.hop..t * cfg.hop + cfg.frame_len], t)?;
        for (k, c) in spec.bins.iter().enumerate() {
            mags[[t, k]] = c.norm();
        }
    }
    Ok(mags)
}

/// Splits an incoming sample stream into overlapping analysis frames.
///
/// The buffer is primed with `frame_len - hop` zeros so one full hop of input
/// yields the first frame; output is therefore delayed by exactly
/// [`FrameConfig::latency_samples`]. Call [`Framer::flush_padding`] at end of
/// stream for the zero-padding that drains buffered input.
pub struct Framer {
    fifo: std::collections::VecDeque<f64>,
    frame_buf: Vec<f64>,
    frame_len: usize,
    hop: usize,
    frames_emitted: usize,
}

impl Framer {
    pub fn new(cfg: &FrameConfig) -> Self {
        let mut fifo = std::collections::VecDeque::with_capacity(2 * cfg.frame_len);
        fifo.extend(std::iter::repeat(0.0).take(cfg.frame_len - cfg.hop));
        Self {
            fifo,
            frame_buf: vec![0.0; cfg.frame_len],
            frame_len: cfg.frame_len,
            hop: cfg.hop,
            frames_emitted: 0,
        }
    }

    pub fn push(&mut self, samples: &[f64]) {
        self.fifo.extend(samples.iter().copied());
    }

    /// Next complete analysis frame, consuming one hop of input.
    pub fn next_frame(&mut self) -> Option<(&[f64], usize)> {
        if self.fifo.len() < self.frame_len {
            return None;
        }
        for (dst, &src) in self.frame_buf.iter_mut().zip(self.fifo.iter()) {
            *dst = src;
        }
        self.fifo.drain(..self.hop);
        let index = self.frames_emitted;
        self.frames_emitted += 1;
        Some((&self.frame_buf, index))
    }

    /// Number of zero samples that must be pushed so every buffered input
    /// sample makes it into a frame.
    pub fn flush_padding(&self) -> usize {
        let buffered = self.fifo.len();
        if buffered == 0 {
            return 0;
        }
        // pad to the next full frame boundary
        let needed = self.frame_len as i64 - buffered as i64;
        if needed <= 0 {
            let rem = (buffered - self.frame_len) % self.hop;
            if rem == 0 { 0 } else { self.hop - rem }
        } else {
            needed as usize
        }
    }
}
