//! Dataset synthesis: per-utterance level normalization, random excerpting,
//! and mixing speech with noise at exact global SNRs.
//!
//! Everything here is pure sample arithmetic on in-memory clips; WAV I/O
//! lives in [`crate::wav`].

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Level-normalization target for speech, as RMS in dBFS.
pub const DEFAULT_TARGET_DBFS: f64 = -25.0;

/// Default global SNR grid for mixing, in dB.
pub const DEFAULT_SNR_GRID_DB: [f64; 5] = [40.0, 30.0, 20.0, 10.0, 0.0];

/// Window length used when measuring active RMS.
const ACTIVE_WIN_S: f64 = 0.010;
/// Windows more than this far below the loudest window are left out of the
/// level measurement.
const ACTIVE_FLOOR_DB: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipRole {
    Speech,
    Noise,
}

/// One mono 16 kHz audio clip.
#[derive(Clone, Debug)]
pub struct Clip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
    pub role: ClipRole,
}

impl Clip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: String, role: ClipRole) -> Result<Self> {
        if sample_rate != SAMPLE_RATE_HZ {
            return Err(Error::Data(format!(
                "{source_id}: sample rate {sample_rate} Hz, this pipeline runs at {SAMPLE_RATE_HZ} Hz only"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{source_id}: non-finite sample")));
        }
        Ok(Self { samples, sample_rate, source_id, role })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// RMS over the active part of a clip: the signal is cut into 10 ms windows
/// and windows more than 40 dB below the loudest one are ignored, so leading
/// and trailing silence does not drag the level estimate down. Returns `None`
/// for an all-zero clip. The window selection is relative to the clip's own
/// peak, which makes the measurement scale with the waveform exactly.
pub fn active_rms(samples: &[f64], sample_rate: u32) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let win = ((ACTIVE_WIN_S * sample_rate as f64) as usize).max(1);
    let mean_sq: Vec<f64> = samples
        .chunks(win)
        .map(|c| c.iter().map(|&v| v * v).sum::<f64>() / c.len() as f64)
        .collect();
    let peak = mean_sq.iter().cloned().fold(0.0_f64, f64::max);
    if peak <= 0.0 {
        return None;
    }
    let floor = peak * 10f64.powf(-ACTIVE_FLOOR_DB / 10.0);
    let active: Vec<f64> = mean_sq.into_iter().filter(|&m| m >= floor).collect();
    let mean = active.iter().sum::<f64>() / active.len() as f64;
    Some(mean.sqrt())
}

/// Scales a clip so its active RMS lands on `target_dbfs`.
pub fn level_normalize(clip: &Clip, target_dbfs: f64) -> Result<Clip> {
    let rms = active_rms(&clip.samples, clip.sample_rate)
        .ok_or_else(|| Error::Data(format!("{}: silent clip cannot be level-normalized", clip.source_id)))?;
    let target = 10f64.powf(target_dbfs / 20.0);
    let gain = target / rms;
    Ok(Clip {
        samples: clip.samples.iter().map(|&v| v * gain).collect(),
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
        role: clip.role,
    })
}

/// Aligned output of one mix: `noisy = clean + noise` holds bit-for-bit.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Scales `noise` so that `10 log10(E_speech / E_noise)` equals `snr_db`
/// exactly, then adds. Both inputs must have the same length (excerpt first)
/// and carry energy.
pub fn mix_at_snr(speech: &[f64], noise: &[f64], snr_db: f64) -> Result<Mixture> {
    if speech.len() != noise.len() {
        return Err(Error::DimensionMismatch(format!(
            "speech has {} samples, noise has {}",
            speech.len(),
            noise.len()
        )));
    }
    let e_s: f64 = speech.iter().map(|&v| v * v).sum();
    let e_n: f64 = noise.iter().map(|&v| v * v).sum();
    if e_n <= 0.0 {
        return Err(Error::Data("silent noise cannot be scaled to a finite SNR".into()));
    }
    if e_s <= 0.0 {
        return Err(Error::Data("silent speech has no defined SNR".into()));
    }
    let gain = (e_s / (e_n * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = noise.iter().map(|&v| v * gain).collect();
    let noisy: Vec<f64> = speech.iter().zip(&scaled).map(|(&s, &n)| s + n).collect();
    Ok(Mixture { noisy, clean: speech.to_vec(), noise: scaled })
}

/// Uniformly random excerpt of `duration_s`. Clips shorter than the target
/// are tiled end-to-end first, so short desk-scale material stays usable.
pub fn random_excerpt(samples: &[f64], duration_s: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Data("cannot excerpt an empty clip".into()));
    }
    if duration_s <= 0.0 {
        return Err(Error::InvalidConfig(format!("excerpt duration {duration_s} s")));
    }
    let target = (duration_s * SAMPLE_RATE_HZ as f64).round() as usize;
    let tiled: Vec<f64>;
    let source: &[f64] = if samples.len() >= target {
        samples
    } else {
        let reps = target.div_ceil(samples.len());
        tiled = samples.iter().cycle().take(reps * samples.len()).copied().collect();
        &tiled
    };
    let offset = rng.gen_range(0..=source.len() - target);
    Ok(source[offset..offset + target].to_vec())
}

/// One line of a dataset manifest: which role a file plays.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub role: ClipRole,
    pub path: PathBuf,
}

/// Parses a plain-text manifest of `role<TAB>path` lines. Blank lines and
/// `#` comments are skipped.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (role_str, path_str) = line.split_once('\t').ok_or_else(|| {
            Error::Data(format!("manifest line {}: expected `role<TAB>path`, got {line:?}", ln + 1))
        })?;
        let role = match role_str.trim() {
            "speech" => ClipRole::Speech,
            "noise" => ClipRole::Noise,
            other => {
                return Err(Error::Data(format!(
                    "manifest line {}: unknown role {other:?} (expected speech or noise)",
                    ln + 1
                )))
            }
        };
        let p = PathBuf::from(path_str.trim());
        let path = if p.is_absolute() { p } else { base_dir.join(p) };
        entries.push(ManifestEntry { role, path });
    }
    if entries.is_empty() {
        return Err(Error::Data("manifest contains no entries".into()));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn speech_clip(samples: Vec<f64>) -> Clip {
        Clip::new(samples, SAMPLE_RATE_HZ, "test".into(), ClipRole::Speech).unwrap()
    }

    fn measured_snr_db(clean: &[f64], noise: &[f64]) -> f64 {
        let es: f64 = clean.iter().map(|v| v * v).sum();
        let en: f64 = noise.iter().map(|v| v * v).sum();
        10.0 * (es / en).log10()
    }

    #[test]
    fn clip_validation() {
        assert!(Clip::new(vec![0.0], 44_100, "t".into(), ClipRole::Speech).is_err());
        assert!(Clip::new(vec![f64::NAN], SAMPLE_RATE_HZ, "t".into(), ClipRole::Speech).is_err());
    }

    #[test]
    fn normalize_is_identity_at_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let raw: Vec<f64> = (0..16_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let clip = speech_clip(raw);
        let once = level_normalize(&clip, DEFAULT_TARGET_DBFS).unwrap();
        let twice = level_normalize(&once, DEFAULT_TARGET_DBFS).unwrap();
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_halves_a_doubled_clip() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let raw: Vec<f64> = (0..8000).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let base = level_normalize(&speech_clip(raw), DEFAULT_TARGET_DBFS).unwrap();
        let doubled = speech_clip(base.samples.iter().map(|v| v * 2.0).collect());
        let back = level_normalize(&doubled, DEFAULT_TARGET_DBFS).unwrap();
        for (a, b) in back.samples.iter().zip(&base.samples) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn normalize_hits_target_within_a_hundredth_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        // speech-ish clip with silent lead-in and tail
        let mut raw = vec![0.0; 3200];
        raw.extend((0..16_000).map(|_| rng.gen_range(-0.4..0.4)));
        raw.extend(std::iter::repeat(0.0).take(3200));
        let normed = level_normalize(&speech_clip(raw), DEFAULT_TARGET_DBFS).unwrap();
        let rms = active_rms(&normed.samples, SAMPLE_RATE_HZ).unwrap();
        let db = 20.0 * rms.log10();
        assert!((db - DEFAULT_TARGET_DBFS).abs() < 0.01, "active level {db} dBFS");
    }

    #[test]
    fn normalize_ignores_long_silence() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let burst: Vec<f64> = (0..1600).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut padded = vec![0.0; 32_000];
        padded.extend(&burst);
        let a = level_normalize(&speech_clip(burst.clone()), DEFAULT_TARGET_DBFS).unwrap();
        let b = level_normalize(&speech_clip(padded), DEFAULT_TARGET_DBFS).unwrap();
        // the gain applied must be (nearly) independent of the added silence
        let ga = a.samples[0] / burst[0];
        let gb = b.samples[32_000] / burst[0];
        assert!((ga - gb).abs() / ga.abs() < 1e-9, "{ga} vs {gb}");
    }

    #[test]
    fn silent_clip_is_rejected() {
        let clip = speech_clip(vec![0.0; 1000]);
        assert!(matches!(level_normalize(&clip, -25.0), Err(Error::Data(_))));
        assert!(active_rms(&[], SAMPLE_RATE_HZ).is_none());
    }

    #[test]
    fn zero_db_mix_equalizes_energies() {
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        let speech: Vec<f64> = (0..4000).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let noise: Vec<f64> = (0..4000).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let mix = mix_at_snr(&speech, &noise, 0.0).unwrap();
        let es: f64 = mix.clean.iter().map(|v| v * v).sum();
        let en: f64 = mix.noise.iter().map(|v| v * v).sum();
        assert!((es / en - 1.0).abs() < 1e-9);
    }

    #[test]
    fn extreme_snr_drives_noise_gain_to_zero() {
        let speech = vec![0.1; 1000];
        let noise = vec![0.1; 1000];
        let mix = mix_at_snr(&speech, &noise, 140.0).unwrap();
        let g = mix.noise[0] / noise[0];
        assert!(g < 1e-6, "gain {g}");
    }

    #[test]
    fn requested_snr_is_recovered_from_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(76);
        for &snr in &DEFAULT_SNR_GRID_DB {
            let speech: Vec<f64> = (0..6000).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let noise: Vec<f64> = (0..6000).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let mix = mix_at_snr(&speech, &noise, snr).unwrap();
            let measured = measured_snr_db(&mix.clean, &mix.noise);
            assert!((measured - snr).abs() < 0.01, "asked {snr}, measured {measured}");
        }
    }

    #[test]
    fn mix_addition_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let speech: Vec<f64> = (0..2000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let noise: Vec<f64> = (0..2000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mix = mix_at_snr(&speech, &noise, 10.0).unwrap();
        for i in 0..2000 {
            assert_eq!(mix.noisy[i], mix.clean[i] + mix.noise[i]);
        }
    }

    #[test]
    fn mix_rejects_silent_inputs_and_length_mismatch() {
        let live = vec![0.1; 100];
        let silent = vec![0.0; 100];
        assert!(matches!(mix_at_snr(&live, &silent, 0.0), Err(Error::Data(_))));
        assert!(matches!(mix_at_snr(&silent, &live, 0.0), Err(Error::Data(_))));
        assert!(matches!(mix_at_snr(&live, &live[..50], 0.0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn excerpt_of_full_length_returns_whole_clip() {
        let clip: Vec<f64> = (0..SAMPLE_RATE_HZ as usize).map(|i| i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let ex = random_excerpt(&clip, 1.0, &mut rng).unwrap();
        assert_eq!(ex, clip);
    }

    #[test]
    fn excerpting_is_reproducible_from_the_seed() {
        let clip: Vec<f64> = (0..80_000).map(|i| (i as f64).sin()).collect();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (random_excerpt(&clip, 0.5, &mut rng).unwrap(), random_excerpt(&clip, 0.5, &mut rng).unwrap())
        };
        assert_eq!(draw(79), draw(79));
        assert_ne!(draw(79).0, draw(80).0);
    }

    #[test]
    fn short_clips_are_tiled() {
        let clip = vec![1.0, 2.0, 3.0, 4.0];
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let ex = random_excerpt(&clip, 0.001, &mut rng).unwrap(); // 16 samples
        assert_eq!(ex.len(), 16);
        // every window of 4 consecutive samples is a rotation of the clip
        for w in ex.windows(4).step_by(4) {
            let mut sorted = w.to_vec();
            sorted.sort_by(f64::total_cmp);
            assert_eq!(sorted, clip);
        }
    }

    #[test]
    fn excerpt_offsets_are_roughly_uniform() {
        // 10^4 draws into 10 buckets; chi-square with 9 degrees of freedom
        // stays under the p=0.001 critical value 27.88. A ramp clip makes the
        // chosen offset readable from the excerpt's first sample.
        let clip: Vec<f64> = (0..2600).map(|i| i as f64).collect();
        let target = 1600; // 0.1 s
        let range = clip.len() - target + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let mut buckets = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            let ex = random_excerpt(&clip, 0.1, &mut rng).unwrap();
            let offset = ex[0] as usize;
            assert!(offset < range);
            buckets[offset * 10 / range] += 1;
        }
        let expect = draws as f64 / 10.0;
        let chi2: f64 = buckets.iter().map(|&b| (b as f64 - expect).powi(2) / expect).sum();
        assert!(chi2 < 27.88, "chi-square {chi2}, buckets {buckets:?}");
    }

    #[test]
    fn manifest_round_trip() {
        let text = "# corpus\nspeech\tclips/a.wav\n\nnoise\t/abs/b.wav\n";
        let entries = parse_manifest(text, Path::new("/base")).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].role, ClipRole::Speech);
        assert_eq!(entries[0].path, Path::new("/base/clips/a.wav"));
        assert_eq!(entries[1].path, Path::new("/abs/b.wav"));

        assert!(parse_manifest("speech a.wav\n", Path::new(".")).is_err());
        assert!(parse_manifest("voice\ta.wav\n", Path::new(".")).is_err());
        assert!(parse_manifest("# only comments\n", Path::new(".")).is_err());
    }
}
