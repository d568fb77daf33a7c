//! Network input features: log power spectra and input normalization.
//!
//! Three normalization schemes are supported on top of the raw magnitude or
//! LPS transform:
//!
//! - global: per-bin mean/std accumulated offline over a training corpus
//! - frequency-dependent (FD) online: per-bin exponential running mean and
//!   variance, updated every frame
//! - frequency-independent (FI) online: the same per-bin running statistics,
//!   but averaged across bins into one shared scalar mean/std so relative
//!   dynamics across frequency are preserved
//!
//! All of it is frame-synchronous and causal; the online schemes carry their
//! state in [`NormState`].

use crate::error::{Error, Result};

/// Power floor for the log transform, i.e. -120 dB.
pub const LPS_FLOOR: f64 = 1e-12;

/// Floor applied to variance estimates before division.
pub const VAR_FLOOR: f64 = 1e-10;

/// Log power spectrum: `ln(max(mag^2, 1e-12))` per bin.
pub fn lps(mag: &[f64]) -> Result<Vec<f64>> {
    for (k, &m) in mag.iter().enumerate() {
        if m < 0.0 {
            return Err(Error::Contract(format!("magnitude[{k}] = {m} is negative")));
        }
    }
    Ok(mag.iter().map(|&m| (m * m).max(LPS_FLOOR).ln()).collect())
}

/// Exponential smoothing constant `c = exp(-hop/tau)` for the online
/// normalizers.
pub fn smoothing_constant(tau_s: f64, hop_s: f64) -> Result<f64> {
    if tau_s <= 0.0 || hop_s <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "smoothing constant needs positive tau and hop (got tau={tau_s}, hop={hop_s})"
        )));
    }
    Ok((-hop_s / tau_s).exp())
}

/// Per-bin corpus statistics for global normalization.
///
/// Accumulation uses Welford's streaming update so 10⁷-frame corpora do not
/// lose precision, and shards can be combined with [`GlobalStats::merge`].
/// The standard deviation is the population one (divide by the frame count).
#[derive(Clone, Debug)]
pub struct GlobalStats {
    mean: Vec<f64>,
    /// Sum of squared deviations from the running mean, per bin.
    m2: Vec<f64>,
    count: u64,
}

impl GlobalStats {
    pub fn new(bins: usize) -> Self {
        Self { mean: vec![0.0; bins], m2: vec![0.0; bins], count: 0 }
    }

    /// Rebuilds stats from exported mean/std summaries. The floored std is a
    /// derived quantity, so this is not bit-exact; serialization should go
    /// through [`GlobalStats::raw_moments`] instead.
    pub fn from_moments(mean: Vec<f64>, std: Vec<f64>, count: u64) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} bins, std has {}",
                mean.len(),
                std.len()
            )));
        }
        let m2 = std.iter().map(|&s| s * s * count as f64).collect();
        Ok(Self { mean, m2, count })
    }

    /// The accumulator state itself: per-bin mean, per-bin sum of squared
    /// deviations, and the frame count. Round-trips exactly.
    pub fn raw_moments(&self) -> (&[f64], &[f64], u64) {
        (&self.mean, &self.m2, self.count)
    }

    /// Inverse of [`GlobalStats::raw_moments`].
    pub fn from_raw_moments(mean: Vec<f64>, m2: Vec<f64>, count: u64) -> Result<Self> {
        if mean.len() != m2.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} bins, m2 has {}",
                mean.len(),
                m2.len()
            )));
        }
        if m2.iter().any(|&v| v < 0.0) {
            return Err(Error::Data("negative squared-deviation sum".into()));
        }
        Ok(Self { mean, m2, count })
    }

    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population standard deviation per bin, floored for division safety.
    pub fn std(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|&m2| (m2 / n).sqrt().max(VAR_FLOOR.sqrt())).collect()
    }

    pub fn accumulate(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} bins, stats have {}",
                frame.len(),
                self.mean.len()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(frame) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
        Ok(())
    }

    /// Combines two independently accumulated shards.
    pub fn merge(&mut self, other: &GlobalStats) -> Result<()> {
        if other.bins() != self.bins() {
            return Err(Error::DimensionMismatch("merging stats with different bin counts".into()));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.bins() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    /// Standardizes one frame with the accumulated per-bin moments.
    pub fn apply(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if self.count < 2 {
            return Err(Error::UninitializedStats);
        }
        if frame.len() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} bins, stats have {}",
                frame.len(),
                self.mean.len()
            )));
        }
        let std = self.std();
        Ok(frame
            .iter()
            .zip(&self.mean)
            .zip(&std)
            .map(|((&x, &mu), &sd)| (x - mu) / sd)
            .collect())
    }
}

/// Running per-bin first and second moments for the online normalizers.
///
/// The very first frame seeds the state (mean = frame, second moment = its
/// square) instead of decaying from zeros; this makes the first output zero
/// rather than a multi-second transient of badly scaled features.
#[derive(Clone, Debug)]
pub struct NormState {
    mu: Vec<f64>,
    m2: Vec<f64>,
    c: f64,
    frame_count: u64,
}

impl NormState {
    pub fn new(bins: usize, c: f64) -> Result<Self> {
        if !(0.0 < c && c < 1.0) {
            return Err(Error::InvalidConfig(format!("smoothing constant {c} outside (0, 1)")));
        }
        Ok(Self { mu: vec![0.0; bins], m2: vec![0.0; bins], c, frame_count: 0 })
    }

    /// State with explicit moments, treated as already seeded.
    pub fn with_stats(mu: Vec<f64>, m2: Vec<f64>, c: f64) -> Result<Self> {
        if mu.len() != m2.len() {
            return Err(Error::DimensionMismatch(format!(
                "mu has {} bins, m2 has {}",
                mu.len(),
                m2.len()
            )));
        }
        if !(0.0 < c && c < 1.0) {
            return Err(Error::InvalidConfig(format!("smoothing constant {c} outside (0, 1)")));
        }
        Ok(Self { mu, m2, c, frame_count: 1 })
    }

    pub fn bins(&self) -> usize {
        self.mu.len()
    }

    pub fn reset(&mut self) {
        self.mu.fill(0.0);
        self.m2.fill(0.0);
        self.frame_count = 0;
    }

    /// Decay-updates the per-bin moments with the current frame. Runs before
    /// normalization so the time-t statistics include the time-t input.
    fn update(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.mu.len() {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} bins, norm state has {}",
                frame.len(),
                self.mu.len()
            )));
        }
        if self.frame_count == 0 {
            for ((mu, m2), &x) in self.mu.iter_mut().zip(&mut self.m2).zip(frame) {
                *mu = x;
                *m2 = x * x;
            }
        } else {
            let c = self.c;
            for ((mu, m2), &x) in self.mu.iter_mut().zip(&mut self.m2).zip(frame) {
                *mu = c * *mu + (1.0 - c) * x;
                *m2 = c * *m2 + (1.0 - c) * x * x;
            }
        }
        self.frame_count += 1;
        Ok(())
    }

    /// Frequency-dependent online normalization: each bin standardized by its
    /// own running mean and variance.
    pub fn fd_normalize(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        self.update(frame)?;
        Ok(frame
            .iter()
            .zip(self.mu.iter().zip(&self.m2))
            .map(|(&x, (&mu, &m2))| (x - mu) / (m2 - mu * mu).max(VAR_FLOOR).sqrt())
            .collect())
    }

    /// Frequency-independent online normalization: per-bin moments are
    /// updated as usual, then the mean and the derived variances are averaged
    /// across bins and that one scalar pair standardizes every bin.
    pub fn fi_normalize(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        self.update(frame)?;
        let bins = self.mu.len() as f64;
        let mu_bar = self.mu.iter().sum::<f64>() / bins;
        let var_bar =
            self.mu.iter().zip(&self.m2).map(|(&mu, &m2)| m2 - mu * mu).sum::<f64>() / bins;
        let sd = var_bar.max(VAR_FLOOR).sqrt();
        Ok(frame.iter().map(|&x| (x - mu_bar) / sd).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Magnitude,
    Lps,
}

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::Magnitude => "mag",
            Transform::Lps => "lps",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mag" | "magnitude" => Ok(Transform::Magnitude),
            "lps" => Ok(Transform::Lps),
            other => Err(Error::InvalidConfig(format!(
                "unknown feature transform {other:?} (expected mag or lps)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    None,
    Global,
    FdOnline,
    FiOnline,
}

impl Normalization {
    pub fn name(&self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::Global => "global",
            Normalization::FdOnline => "fd",
            Normalization::FiOnline => "fi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "global" => Ok(Normalization::Global),
            "fd" => Ok(Normalization::FdOnline),
            "fi" => Ok(Normalization::FiOnline),
            other => Err(Error::InvalidConfig(format!(
                "unknown normalization {other:?} (expected none, global, fd, or fi)"
            ))),
        }
    }
}

/// Which feature the network sees: transform plus normalization scheme, with
/// the online schemes' time constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureKind {
    pub transform: Transform,
    pub normalization: Normalization,
    pub tau_s: f64,
}

impl FeatureKind {
    pub const DEFAULT_TAU_S: f64 = 3.0;

    pub fn new(transform: Transform, normalization: Normalization, tau_s: f64) -> Result<Self> {
        if tau_s <= 0.0 {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {tau_s}")));
        }
        Ok(Self { transform, normalization, tau_s })
    }

    /// LPS with FD online normalization, the configuration used throughout
    /// unless overridden.
    pub fn default_lps_fd() -> Self {
        Self {
            transform: Transform::Lps,
            normalization: Normalization::FdOnline,
            tau_s: Self::DEFAULT_TAU_S,
        }
    }
}

/// Per-stream feature pipeline: transform then normalization, one magnitude
/// frame in, one network input frame out.
pub struct FeatureExtractor {
    kind: FeatureKind,
    global: Option<GlobalStats>,
    state: Option<NormState>,
}

impl FeatureExtractor {
    pub fn new(
        kind: FeatureKind,
        bins: usize,
        hop_s: f64,
        global: Option<GlobalStats>,
    ) -> Result<Self> {
        let state = match kind.normalization {
            Normalization::FdOnline | Normalization::FiOnline => {
                Some(NormState::new(bins, smoothing_constant(kind.tau_s, hop_s)?)?)
            }
            Normalization::None | Normalization::Global => None,
        };
        if kind.normalization == Normalization::Global {
            match &global {
                None => return Err(Error::UninitializedStats),
                Some(g) if g.bins() != bins => {
                    return Err(Error::DimensionMismatch(format!(
                        "global stats cover {} bins, stream has {}",
                        g.bins(),
                        bins
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Self { kind, global, state })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn process(&mut self, mag: &[f64]) -> Result<Vec<f64>> {
        let feature = match self.kind.transform {
            Transform::Magnitude => mag.to_vec(),
            Transform::Lps => lps(mag)?,
        };
        match self.kind.normalization {
            Normalization::None => Ok(feature),
            Normalization::Global => {
                self.global.as_ref().ok_or(Error::UninitializedStats)?.apply(&feature)
            }
            Normalization::FdOnline => {
                self.state.as_mut().expect("state exists for online norm").fd_normalize(&feature)
            }
            Normalization::FiOnline => {
                self.state.as_mut().expect("state exists for online norm").fi_normalize(&feature)
            }
        }
    }

    /// Clears the online normalization state for a new stream.
    pub fn reset(&mut self) {
        if let Some(state) = &mut self.state {
            state.reset();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lps_floor_and_identity_cases() {
        let floor = lps(&[0.0]).unwrap()[0];
        assert_eq!(floor, LPS_FLOOR.ln());
        assert!((floor - (-27.6310)).abs() < 1e-3);
        assert_eq!(lps(&[1.0]).unwrap()[0], 0.0);
        let above = lps(&[1e-5]).unwrap()[0];
        assert!((above - (-23.0259)).abs() < 1e-3);
        assert!(above > floor);
    }

    #[test]
    fn lps_rejects_negative_magnitude() {
        assert!(matches!(lps(&[1.0, -0.5]), Err(Error::Contract(_))));
    }

    #[test]
    fn global_frame_at_mean_maps_to_zero() {
        let mut stats = GlobalStats::new(3);
        stats.accumulate(&[0.0, 4.0, -2.0]).unwrap();
        stats.accumulate(&[2.0, 6.0, 2.0]).unwrap();
        let out = stats.apply(stats.mean().to_vec().as_slice()).unwrap();
        assert!(out.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn global_two_frame_set_standardizes_to_unit_values() {
        // values {0, 2} per bin: mean 1, population std 1
        let mut stats = GlobalStats::new(2);
        stats.accumulate(&[0.0, 0.0]).unwrap();
        stats.accumulate(&[2.0, 2.0]).unwrap();
        assert_eq!(stats.apply(&[0.0, 0.0]).unwrap(), vec![-1.0, -1.0]);
        assert_eq!(stats.apply(&[2.0, 2.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn global_apply_needs_two_frames() {
        let mut stats = GlobalStats::new(1);
        assert!(matches!(stats.apply(&[0.0]), Err(Error::UninitializedStats)));
        stats.accumulate(&[1.0]).unwrap();
        assert!(matches!(stats.apply(&[0.0]), Err(Error::UninitializedStats)));
    }

    #[test]
    fn global_normalized_corpus_has_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let frames: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..4).map(|_| rng.gen_range(-5.0..7.0)).collect())
            .collect();
        let mut stats = GlobalStats::new(4);
        for f in &frames {
            stats.accumulate(f).unwrap();
        }
        // recompute moments of the normalized corpus directly
        let normalized: Vec<Vec<f64>> = frames.iter().map(|f| stats.apply(f).unwrap()).collect();
        for k in 0..4 {
            let n = normalized.len() as f64;
            let mean = normalized.iter().map(|f| f[k]).sum::<f64>() / n;
            let var = normalized.iter().map(|f| (f[k] - mean) * (f[k] - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10, "bin {k} mean {mean}");
            assert!((var - 1.0).abs() < 1e-10, "bin {k} var {var}");
        }
    }

    #[test]
    fn global_merge_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let frames: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut whole = GlobalStats::new(3);
        for f in &frames {
            whole.accumulate(f).unwrap();
        }
        let mut a = GlobalStats::new(3);
        let mut b = GlobalStats::new(3);
        for f in &frames[..137] {
            a.accumulate(f).unwrap();
        }
        for f in &frames[137..] {
            b.accumulate(f).unwrap();
        }
        a.merge(&b).unwrap();
        assert_eq!(a.count(), whole.count());
        for k in 0..3 {
            assert!((a.mean()[k] - whole.mean()[k]).abs() < 1e-12);
            assert!((a.std()[k] - whole.std()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_constant_known_values() {
        let c = smoothing_constant(3.0, 0.008).unwrap();
        assert!((c - 0.9973369).abs() < 1e-6);
        let e_inv = smoothing_constant(0.008, 0.008).unwrap();
        assert!((e_inv - (-1.0f64).exp()).abs() < 1e-15);
        assert!(smoothing_constant(1e12, 0.008).unwrap() > 1.0 - 1e-10);
        assert!(matches!(smoothing_constant(0.0, 0.008), Err(Error::InvalidConfig(_))));
        assert!(matches!(smoothing_constant(3.0, -1.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn fd_constant_input_stays_zero() {
        let frame = vec![3.0, -1.5, 0.25];
        let mut state =
            NormState::with_stats(frame.clone(), frame.iter().map(|x| x * x).collect(), 0.9)
                .unwrap();
        for _ in 0..50 {
            let out = state.fd_normalize(&frame).unwrap();
            assert!(out.iter().all(|&v| v == 0.0), "{out:?}");
        }
    }

    #[test]
    fn fd_single_bin_hand_case() {
        // mu=0, m2=0, c=0.5, x=2:
        //   mu' = 0.5*0 + 0.5*2 = 1, m2' = 0.5*0 + 0.5*4 = 2
        //   out = (2 - 1)/sqrt(2 - 1) = 1
        let mut state = NormState::with_stats(vec![0.0], vec![0.0], 0.5).unwrap();
        let out = state.fd_normalize(&[2.0]).unwrap();
        assert_eq!(out, vec![1.0]);
        assert_eq!(state.mu, vec![1.0]);
        assert_eq!(state.m2, vec![2.0]);
    }

    #[test]
    fn fd_first_frame_seeds_state_and_outputs_zero() {
        let mut state = NormState::new(3, 0.99).unwrap();
        let out = state.fd_normalize(&[5.0, -2.0, 0.1]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert_eq!(state.mu, vec![5.0, -2.0, 0.1]);
    }

    #[test]
    fn fd_whitens_stationary_noise() {
        let c = smoothing_constant(3.0, 0.008).unwrap();
        let mut state = NormState::new(1, c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut outputs = Vec::new();
        for t in 0..10_000 {
            let x = rng.gen_range(-2.0..2.0) + 0.7;
            let out = state.fd_normalize(&[x]).unwrap();
            if t >= 2000 {
                outputs.push(out[0]);
            }
        }
        let n = outputs.len() as f64;
        let mean = outputs.iter().sum::<f64>() / n;
        let var = outputs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.1, "long-run mean {mean}");
        assert!((var - 1.0).abs() < 0.2, "long-run variance {var}");
    }

    #[test]
    fn fi_uniform_frame_at_shared_mean_is_zero() {
        let mut state = NormState::with_stats(vec![2.0, 2.0], vec![5.0, 5.0], 0.5).unwrap();
        // after the update the shared mean stays 2 when the input is 2
        let out = state.fi_normalize(&[2.0, 2.0]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fi_two_bin_hand_case() {
        // mu=[0,0], m2=[0,0], c=0.5, x=[2,0]:
        //   per-bin mu' = [1, 0], m2' = [2, 0]
        //   shared mean = 0.5, per-bin variances [2-1, 0-0] = [1, 0] -> shared 0.5
        //   out = ([2,0] - 0.5)/sqrt(0.5) = [1.5, -0.5]*sqrt(2)
        let mut state = NormState::with_stats(vec![0.0, 0.0], vec![0.0, 0.0], 0.5).unwrap();
        let out = state.fi_normalize(&[2.0, 0.0]).unwrap();
        let s = 0.5f64.sqrt();
        assert!((out[0] - 1.5 / s).abs() < 1e-15);
        assert!((out[1] - (-0.5 / s)).abs() < 1e-15);
    }

    #[test]
    fn fi_preserves_relative_dynamics_across_bins() {
        let mut state = NormState::new(4, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..20 {
            state.fi_normalize(&(0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        }
        let frame = [0.8, -0.3, 0.1, 0.5];
        let out = state.clone().fi_normalize(&frame).unwrap();
        // shared affine map: differences scale by one positive constant
        let scale = (out[0] - out[1]) / (frame[0] - frame[1]);
        assert!(scale > 0.0);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let got = out[i] - out[j];
                    let expect = scale * (frame[i] - frame[j]);
                    assert!((got - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn online_normalization_is_deterministic_given_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut state = NormState::new(5, 0.97).unwrap();
        for _ in 0..10 {
            state.fd_normalize(&(0..5).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        }
        let frame: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = state.clone().fd_normalize(&frame).unwrap();
        let b = state.clone().fd_normalize(&frame).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lps_online_features_forget_a_global_gain() {
        // a waveform gain of alpha shifts LPS by the constant 2 ln(alpha);
        // after the running mean converges the normalized features of the
        // scaled and unscaled streams agree
        let hop_s = 0.008;
        let tau_s = 0.25;
        let c = smoothing_constant(tau_s, hop_s).unwrap();
        let settle = (10.0 * tau_s / hop_s).ceil() as usize;
        let total = settle * 2;

        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let mags: Vec<Vec<f64>> = (0..total)
            .map(|_| (0..8).map(|_| rng.gen_range(0.01..1.0)).collect())
            .collect();

        let run = |gain: f64| {
            let mut state = NormState::new(8, c).unwrap();
            let mut outs = Vec::new();
            for m in &mags {
                let scaled: Vec<f64> = m.iter().map(|&v| v * gain).collect();
                outs.push(state.fd_normalize(&lps(&scaled).unwrap()).unwrap());
            }
            outs
        };
        let base = run(1.0);
        let scaled = run(10.0);

        let mut sq = 0.0;
        let mut n = 0.0;
        for t in settle..total {
            for k in 0..8 {
                let d = base[t][k] - scaled[t][k];
                sq += d * d;
                n += 1.0;
            }
        }
        let rms = (sq / n).sqrt();
        assert!(rms < 0.05, "normalized features differ by {rms} RMS after settling");
    }

    #[test]
    fn variance_floor_keeps_outputs_finite() {
        let mut state = NormState::new(2, 0.9).unwrap();
        for _ in 0..100 {
            let out = state.fd_normalize(&[LPS_FLOOR.ln(), 0.0]).unwrap();
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn extractor_composes_transform_and_normalization() {
        let kind = FeatureKind::new(Transform::Lps, Normalization::None, 3.0).unwrap();
        let mut passthrough = FeatureExtractor::new(kind, 3, 0.008, None).unwrap();
        let mag = [0.5, 1.0, 0.0];
        assert_eq!(passthrough.process(&mag).unwrap(), lps(&mag).unwrap());

        let kind = FeatureKind::new(Transform::Magnitude, Normalization::None, 3.0).unwrap();
        let mut raw = FeatureExtractor::new(kind, 3, 0.008, None).unwrap();
        assert_eq!(raw.process(&mag).unwrap(), mag.to_vec());
    }

    #[test]
    fn extractor_global_requires_stats() {
        let kind = FeatureKind::new(Transform::Lps, Normalization::Global, 3.0).unwrap();
        assert!(matches!(
            FeatureExtractor::new(kind, 3, 0.008, None),
            Err(Error::UninitializedStats)
        ));
    }

    #[test]
    fn extractor_reset_restarts_online_state() {
        let kind = FeatureKind::default_lps_fd();
        let mut ex = FeatureExtractor::new(kind, 2, 0.008, None).unwrap();
        let first = ex.process(&[0.3, 0.7]).unwrap();
        ex.process(&[0.9, 0.2]).unwrap();
        ex.reset();
        let again = ex.process(&[0.3, 0.7]).unwrap();
        assert_eq!(first, again);
    }
}
