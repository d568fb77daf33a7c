//! Objective evaluation: SI-SDR, a cepstral distance, the oracle Wiener
//! upper bound, and the report plumbing around them.
//!
//! PESQ and STOI are deliberately not implemented here; externally computed
//! score files can be merged into an [`EvalReport`] instead.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;

use crate::dsp::{stft_magnitudes, FrameConfig, Stft};
use crate::error::{Error, Result};
use crate::features::lps;
use crate::training::{vad_mask, VadConfig};

/// Symmetric cap applied to SI-SDR so perfect or orthogonal estimates stay
/// finite in reports.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Number of cepstral coefficients compared (quefrencies 1..=24; the gain
/// term c[0] is excluded).
pub const CD_ORDER: usize = 24;

/// Scale-invariant signal-to-distortion ratio in dB.
///
/// The estimate is compared against the orthogonal projection of itself onto
/// the reference: `a = <est,ref>/||ref||^2`, value
/// `10 log10(||a ref||^2 / ||a ref - est||^2)`, clamped to +-100 dB.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::DimensionMismatch(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|&v| v * v).sum();
    if ref_energy <= 0.0 {
        return Err(Error::Data("silent reference has no defined SI-SDR".into()));
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(&e, &r)| e * r).sum();
    let a = dot / ref_energy;
    let target_energy = a * a * ref_energy;
    let err_energy: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(&r, &e)| {
            let d = a * r - e;
            d * d
        })
        .sum();
    if err_energy <= 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    if target_energy <= 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target_energy / err_energy).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Cepstral coefficients 1..=CD_ORDER of one frame's log power spectrum.
///
/// The spectrum is the half spectrum of an `n_fft`-point transform; the real
/// cepstrum is its inverse DFT after symmetric extension, which collapses to
/// a cosine sum over the half spectrum.
fn cepstrum_tail(log_power: &[f64], n_fft: usize) -> [f64; CD_ORDER] {
    let half = n_fft / 2;
    debug_assert_eq!(log_power.len(), half + 1);
    let mut c = [0.0; CD_ORDER];
    for (q, out) in c.iter_mut().enumerate() {
        let q = q + 1;
        let mut acc = log_power[0];
        for k in 1..half {
            acc += 2.0 * log_power[k] * (2.0 * std::f64::consts::PI * (q * k) as f64 / n_fft as f64).cos();
        }
        acc += log_power[half] * if q % 2 == 0 { 1.0 } else { -1.0 };
        *out = acc / n_fft as f64;
    }
    c
}

/// Mean cepstral distance over the reference's speech-active frames.
///
/// Per frame: log power spectra (floored like the LPS feature), real cepstra,
/// then `(10/ln 10) * sqrt(2 * sum_{q=1..24} (c_ref[q] - c_est[q])^2)`.
/// Excluding c[0] makes the distance invariant to a global gain on either
/// signal. This is the FFT-cepstrum variant; published numbers computed with
/// LPC-based variants are not directly comparable.
pub fn cepstral_distance(
    reference: &[f64],
    estimate: &[f64],
    frame: &FrameConfig,
    vad: &VadConfig,
) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::DimensionMismatch(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.len() < frame.frame_len {
        return Err(Error::Data(format!(
            "signals shorter than one frame ({} < {})",
            reference.len(),
            frame.frame_len
        )));
    }
    let stft = Stft::new(frame.clone());
    let ref_mag = stft_magnitudes(&stft, reference)?;
    let est_mag = stft_magnitudes(&stft, estimate)?;
    let mask = vad_mask(&ref_mag, vad, frame.bin_hz())?;
    let active = mask.iter().filter(|&&v| v).count();
    if active == 0 {
        return Err(Error::Data("no speech-active reference frames to average over".into()));
    }

    let scale = 10.0 / std::f64::consts::LN_10;
    let mut sum = 0.0;
    for (t, &voiced) in mask.iter().enumerate() {
        if !voiced {
            continue;
        }
        let lr = lps(ref_mag.row(t).as_slice().unwrap())?;
        let le = lps(est_mag.row(t).as_slice().unwrap())?;
        let cr = cepstrum_tail(&lr, frame.fft_size);
        let ce = cepstrum_tail(&le, frame.fft_size);
        let sq: f64 = cr.iter().zip(&ce).map(|(&a, &b)| (a - b) * (a - b)).sum();
        sum += scale * (2.0 * sq).sqrt();
    }
    Ok(sum / active as f64)
}

/// Ideal Wiener gains from the true clean and noise magnitudes:
/// `G = |S|^2 / (|S|^2 + |N|^2)`, with silent bins (0/0) mapped to 0.
pub fn oracle_wiener(clean_stftm: &Array2<f64>, noise_stftm: &Array2<f64>) -> Result<Array2<f64>> {
    if clean_stftm.dim() != noise_stftm.dim() {
        return Err(Error::DimensionMismatch(format!(
            "clean is {:?}, noise is {:?}",
            clean_stftm.dim(),
            noise_stftm.dim()
        )));
    }
    Ok(ndarray::Zip::from(clean_stftm).and(noise_stftm).map_collect(|&s, &n| {
        let (s2, n2) = (s * s, n * n);
        if s2 + n2 <= 0.0 {
            0.0
        } else {
            s2 / (s2 + n2)
        }
    }))
}

/// One evaluated clip under one SNR condition.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub clip_id: String,
    pub condition_db: f64,
    pub si_sdr_db: f64,
    pub cd: f64,
    /// SI-SDR of the unprocessed noisy signal, the baseline the delta column
    /// is computed against.
    pub noisy_si_sdr_db: f64,
}

impl EvalRow {
    pub fn si_sdr_delta_db(&self) -> f64 {
        self.si_sdr_db - self.noisy_si_sdr_db
    }
}

/// Aggregate over one condition; non-finite scores are excluded from the
/// means and counted instead.
#[derive(Clone, Debug)]
pub struct ConditionSummary {
    pub condition_db: f64,
    pub clips: usize,
    pub excluded: usize,
    pub mean_si_sdr_db: f64,
    pub mean_delta_db: f64,
    pub mean_cd: f64,
    pub external: BTreeMap<String, f64>,
}

/// Per-clip scores plus optional externally computed metric columns
/// (e.g. PESQ or STOI produced by reference implementations elsewhere).
#[derive(Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    external: BTreeMap<String, BTreeMap<String, f64>>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    /// Merges a `clip_id,value` CSV of externally computed scores under the
    /// given metric name.
    pub fn add_external_scores(&mut self, metric: &str, csv_text: &str) -> Result<()> {
        let mut scores = BTreeMap::new();
        for (ln, raw) in csv_text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, value) = line.split_once(',').ok_or_else(|| {
                Error::Data(format!("{metric} scores line {}: expected clip_id,value", ln + 1))
            })?;
            let v: f64 = value.trim().parse().map_err(|_| {
                Error::Data(format!("{metric} scores line {}: bad number {value:?}", ln + 1))
            })?;
            scores.insert(id.trim().to_string(), v);
        }
        self.external.insert(metric.to_string(), scores);
        Ok(())
    }

    pub fn external_metrics(&self) -> Vec<&str> {
        self.external.keys().map(|s| s.as_str()).collect()
    }

    fn summarize(&self, rows: &[&EvalRow], condition_db: f64) -> ConditionSummary {
        let finite: Vec<&&EvalRow> =
            rows.iter().filter(|r| r.si_sdr_db.is_finite() && r.cd.is_finite()).collect();
        let n = finite.len() as f64;
        let mean = |f: &dyn Fn(&EvalRow) -> f64| {
            if finite.is_empty() {
                f64::NAN
            } else {
                finite.iter().map(|r| f(r)).sum::<f64>() / n
            }
        };
        let mut external = BTreeMap::new();
        for (metric, scores) in &self.external {
            let vals: Vec<f64> =
                rows.iter().filter_map(|r| scores.get(&r.clip_id)).copied().collect();
            if !vals.is_empty() {
                external
                    .insert(metric.clone(), vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        ConditionSummary {
            condition_db,
            clips: rows.len(),
            excluded: rows.len() - finite.len(),
            mean_si_sdr_db: mean(&|r| r.si_sdr_db),
            mean_delta_db: mean(&|r| r.si_sdr_delta_db()),
            mean_cd: mean(&|r| r.cd),
            external,
        }
    }

    /// Means per SNR condition (ascending) plus an overall row at the end.
    pub fn aggregates(&self) -> Vec<ConditionSummary> {
        let mut conditions: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !conditions.iter().any(|&c| c == r.condition_db) {
                conditions.push(r.condition_db);
            }
        }
        conditions.sort_by(f64::total_cmp);
        let mut out = Vec::new();
        for c in conditions {
            let rows: Vec<&EvalRow> =
                self.rows.iter().filter(|r| r.condition_db == c).collect();
            out.push(self.summarize(&rows, c));
        }
        let all: Vec<&EvalRow> = self.rows.iter().collect();
        out.push(self.summarize(&all, f64::NAN));
        out
    }

    /// Per-clip CSV: fixed columns, then one column per external metric.
    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        let metrics = self.external_metrics();
        write!(w, "clip_id,condition_db,si_sdr_db,si_sdr_delta_db,cd,noisy_si_sdr_db")?;
        for m in &metrics {
            write!(w, ",{m}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(
                w,
                "{},{},{},{},{},{}",
                r.clip_id,
                r.condition_db,
                r.si_sdr_db,
                r.si_sdr_delta_db(),
                r.cd,
                r.noisy_si_sdr_db
            )?;
            for m in &metrics {
                match self.external.get(*m).and_then(|s| s.get(&r.clip_id)) {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Human-readable condition table: SI-SDR, CD, then external columns.
    pub fn write_summary(&self, w: &mut dyn Write) -> Result<()> {
        let metrics = self.external_metrics();
        write!(w, "{:>12} {:>6} {:>10} {:>9} {:>8}", "condition", "clips", "si_sdr_db", "delta_db", "cd")?;
        for m in &metrics {
            write!(w, " {m:>8}")?;
        }
        writeln!(w, " {:>9}", "excluded")?;
        for s in self.aggregates() {
            let label = if s.condition_db.is_nan() {
                "all".to_string()
            } else {
                format!("{} dB", s.condition_db)
            };
            write!(
                w,
                "{label:>12} {:>6} {:>10.2} {:>9.2} {:>8.3}",
                s.clips, s.mean_si_sdr_db, s.mean_delta_db, s.mean_cd
            )?;
            for m in &metrics {
                match s.external.get(*m) {
                    Some(v) => write!(w, " {v:>8.3}")?,
                    None => write!(w, " {:>8}", "-")?,
                }
            }
            writeln!(w, " {:>9}", s.excluded)?;
        }
        Ok(())
    }
}
