//! On-disk dataset layout shared by the commands: `mix` writes a
//! `dataset.tsv` plus per-clip WAV triplets into a directory, and `train`,
//! `eval` and `sweep` read them back.

use std::io::Write;
use std::path::{Path, PathBuf};

use streamgain::data::{Clip, ClipRole, Mixture};
use streamgain::wav::read_wav;
use streamgain::{Error, Result};

pub const DATASET_INDEX: &str = "dataset.tsv";
const INDEX_HEADER: &str = "clip_id\tsnr_db\tnoisy\tclean\tnoise\tspeech_src\tnoise_src";

/// One mixed triplet as recorded in the dataset index.
#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub clip_id: String,
    pub snr_db: f64,
    pub noisy: PathBuf,
    pub clean: PathBuf,
    pub noise: PathBuf,
}

impl DatasetItem {
    pub fn load(&self) -> Result<Mixture> {
        let noisy = read_wav(&self.noisy)?;
        let clean = read_wav(&self.clean)?;
        let noise = read_wav(&self.noise)?;
        if noisy.len() != clean.len() || noisy.len() != noise.len() {
            return Err(Error::Data(format!(
                "{}: triplet lengths disagree ({}, {}, {})",
                self.clip_id,
                noisy.len(),
                clean.len(),
                noise.len()
            )));
        }
        Ok(Mixture { noisy, clean, noise })
    }
}

pub struct IndexWriter<W: Write> {
    out: W,
}

impl<W: Write> IndexWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{INDEX_HEADER}")?;
        Ok(Self { out })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn row(
        &mut self,
        clip_id: &str,
        snr_db: f64,
        noisy: &str,
        clean: &str,
        noise: &str,
        speech_src: &str,
        noise_src: &str,
    ) -> Result<()> {
        writeln!(
            self.out,
            "{clip_id}\t{snr_db}\t{noisy}\t{clean}\t{noise}\t{speech_src}\t{noise_src}"
        )?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a dataset directory produced by `mix`. Paths in the index are
/// relative to the directory.
pub fn read_dataset(dir: &Path) -> Result<Vec<DatasetItem>> {
    let index = dir.join(DATASET_INDEX);
    let text = std::fs::read_to_string(&index)
        .map_err(|e| Error::Data(format!("{}: {e}", index.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == INDEX_HEADER => {}
        _ => {
            return Err(Error::Data(format!(
                "{}: missing or unrecognized header line",
                index.display()
            )))
        }
    }
    let mut items = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(Error::Data(format!(
                "{} line {}: expected 7 tab-separated columns, got {}",
                index.display(),
                ln + 2,
                cols.len()
            )));
        }
        let snr_db: f64 = cols[1].parse().map_err(|_| {
            Error::Data(format!("{} line {}: bad SNR {:?}", index.display(), ln + 2, cols[1]))
        })?;
        items.push(DatasetItem {
            clip_id: cols[0].to_string(),
            snr_db,
            noisy: dir.join(cols[2]),
            clean: dir.join(cols[3]),
            noise: dir.join(cols[4]),
        });
    }
    Ok(items)
}

/// Loads and tags the raw clips a manifest points at.
pub fn load_manifest_clips(manifest: &Path) -> Result<(Vec<Clip>, Vec<Clip>)> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = streamgain::data::parse_manifest(&text, base)?;
    let (mut speech, mut noise) = (Vec::new(), Vec::new());
    for entry in entries {
        let samples = read_wav(&entry.path)?;
        let clip = Clip::new(
            samples,
            streamgain::data::SAMPLE_RATE_HZ,
            entry.path.display().to_string(),
            entry.role,
        )?;
        match entry.role {
            ClipRole::Speech => speech.push(clip),
            ClipRole::Noise => noise.push(clip),
        }
    }
    if speech.is_empty() || noise.is_empty() {
        return Err(Error::Data(format!(
            "{}: need at least one speech and one noise entry (got {} speech, {} noise)",
            manifest.display(),
            speech.len(),
            noise.len()
        )));
    }
    Ok((speech, noise))
}
