//! Self-contained model checkpoints: a diffable plain-text header with an
//! explicit field table, followed by the raw tensor data as little-endian
//! f64. Loading needs no side files, and save -> load -> save is
//! byte-identical (nothing time- or environment-dependent goes in).

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::dsp::FrameConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, GlobalStats, Normalization, Transform};
use crate::model::{GruLayerParams, ModelParams, MODEL_VERSION};
use crate::training::LossFamily;

const MAGIC: &str = "STREAMGAIN-CKPT v1";
const END_HEADER: &str = "end_header";

/// How the checkpointed model was trained; carried along so a run is
/// identifiable from the artifact alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainMeta {
    pub steps: u64,
    pub loss_family: LossFamily,
    pub alpha: f64,
    pub beta_db: f64,
    pub seed: u64,
}

/// Everything enhancement needs: framing geometry, feature recipe (with
/// global stats when that normalization is in use), and the weights.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub frame: FrameConfig,
    pub feature: FeatureKind,
    pub stats: Option<GlobalStats>,
    pub params: ModelParams,
    pub meta: TrainMeta,
}

impl Checkpoint {
    pub fn new(
        frame: FrameConfig,
        feature: FeatureKind,
        stats: Option<GlobalStats>,
        params: ModelParams,
        meta: TrainMeta,
    ) -> Result<Self> {
        if (feature.normalization == Normalization::Global) != stats.is_some() {
            return Err(Error::Checkpoint(format!(
                "global stats {} but normalization is {}",
                if stats.is_some() { "present" } else { "missing" },
                feature.normalization.name()
            )));
        }
        if let Some(s) = &stats {
            if s.bins() != frame.bins() {
                return Err(Error::Checkpoint(format!(
                    "stats cover {} bins, frame config has {}",
                    s.bins(),
                    frame.bins()
                )));
            }
        }
        if params.input_dim() != frame.bins() {
            return Err(Error::Checkpoint(format!(
                "model expects {} inputs, frame config has {} bins",
                params.input_dim(),
                frame.bins()
            )));
        }
        params.validate()?;
        Ok(Self { frame, feature, stats, params, meta })
    }

    /// Tensor field table in canonical order: per layer
    /// `W_z W_r W_h U_z U_r U_h b_z b_r b_h`, then the output layer, then
    /// the raw normalization moments when present.
    fn fields(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (i, l) in self.params.layers.iter().enumerate() {
            for (suffix, a) in [
                ("w_z", &l.w_z),
                ("w_r", &l.w_r),
                ("w_h", &l.w_h),
                ("u_z", &l.u_z),
                ("u_r", &l.u_r),
                ("u_h", &l.u_h),
            ] {
                out.push((
                    format!("layer{i}.{suffix}"),
                    vec![a.nrows(), a.ncols()],
                    a.as_slice().unwrap(),
                ));
            }
            for (suffix, v) in [("b_z", &l.b_z), ("b_r", &l.b_r), ("b_h", &l.b_h)] {
                out.push((format!("layer{i}.{suffix}"), vec![v.len()], v.as_slice().unwrap()));
            }
        }
        out.push((
            "fc.weight".into(),
            vec![self.params.fc_weight.nrows(), self.params.fc_weight.ncols()],
            self.params.fc_weight.as_slice().unwrap(),
        ));
        out.push((
            "fc.bias".into(),
            vec![self.params.fc_bias.len()],
            self.params.fc_bias.as_slice().unwrap(),
        ));
        if let Some(stats) = &self.stats {
            let (mean, m2, _) = stats.raw_moments();
            out.push(("stats.mean".into(), vec![mean.len()], mean));
            out.push(("stats.m2".into(), vec![m2.len()], m2));
        }
        out
    }

    fn render(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        writeln!(header, "{MAGIC}").unwrap();
        writeln!(header, "sample_rate_hz {}", self.frame.sample_rate_hz).unwrap();
        writeln!(header, "frame_len {}", self.frame.frame_len).unwrap();
        writeln!(header, "hop {}", self.frame.hop).unwrap();
        writeln!(header, "fft_size {}", self.frame.fft_size).unwrap();
        writeln!(header, "transform {}", self.feature.transform.name()).unwrap();
        writeln!(header, "normalization {}", self.feature.normalization.name()).unwrap();
        writeln!(header, "tau_s {}", self.feature.tau_s).unwrap();
        writeln!(header, "steps {}", self.meta.steps).unwrap();
        writeln!(header, "loss_family {}", self.meta.loss_family.name()).unwrap();
        writeln!(header, "alpha {}", self.meta.alpha).unwrap();
        writeln!(header, "beta_db {}", self.meta.beta_db).unwrap();
        writeln!(header, "seed {}", self.meta.seed).unwrap();
        if let Some(stats) = &self.stats {
            writeln!(header, "stats_count {}", stats.count()).unwrap();
        }

        let mut blob = Vec::new();
        for (name, shape, data) in self.fields() {
            let shape_s =
                shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            writeln!(header, "tensor {name} f64 {shape_s} {}", blob.len()).unwrap();
            for &v in data {
                if !v.is_finite() {
                    return Err(Error::Checkpoint(format!("non-finite value in {name}")));
                }
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        writeln!(header, "{END_HEADER}").unwrap();

        let mut bytes = header.into_bytes();
        bytes.extend_from_slice(&blob);
        Ok(bytes)
    }

    /// Writes atomically: the bytes land in a sibling temp file first and
    /// are renamed into place, so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.render()?;
        let file_name = path
            .file_name()
            .ok_or_else(|| Error::Checkpoint(format!("{} has no file name", path.display())))?;
        let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut next_line = |bytes: &[u8]| -> Result<String> {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Checkpoint("header not terminated".into()))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?
                .to_string();
            pos += nl + 1;
            Ok(line)
        };

        if next_line(bytes)? != MAGIC {
            return Err(Error::Checkpoint(format!("not a {MAGIC} file")));
        }

        let mut scalars: std::collections::BTreeMap<String, String> = Default::default();
        let mut tensors: Vec<(String, Vec<usize>, usize)> = Vec::new();
        loop {
            let line = next_line(bytes)?;
            if line == END_HEADER {
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["tensor", name, "f64", shape, offset] => {
                    let dims: Vec<usize> = shape
                        .split('x')
                        .map(|d| d.parse().map_err(|_| bad_field("tensor shape", shape)))
                        .collect::<Result<_>>()?;
                    let offset = offset.parse().map_err(|_| bad_field("tensor offset", offset))?;
                    tensors.push((name.to_string(), dims, offset));
                }
                [key, value] => {
                    scalars.insert(key.to_string(), value.to_string());
                }
                _ => return Err(Error::Checkpoint(format!("malformed header line {line:?}"))),
            }
        }
        let blob = &bytes[pos..];

        let known = [
            "sample_rate_hz",
            "frame_len",
            "hop",
            "fft_size",
            "transform",
            "normalization",
            "tau_s",
            "steps",
            "loss_family",
            "alpha",
            "beta_db",
            "seed",
            "stats_count",
        ];
        for key in scalars.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::Checkpoint(format!("unknown header field {key}")));
            }
        }
        let get = |key: &str| -> Result<&str> {
            scalars
                .get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Checkpoint(format!("missing header field {key}")))
        };
        fn parse<T: std::str::FromStr>(label: &str, s: &str) -> Result<T> {
            s.parse().map_err(|_| bad_field(label, s))
        }

        let frame = FrameConfig::new(
            parse("sample_rate_hz", get("sample_rate_hz")?)?,
            parse("frame_len", get("frame_len")?)?,
            parse("hop", get("hop")?)?,
            parse("fft_size", get("fft_size")?)?,
        )?;
        let feature = FeatureKind::new(
            Transform::parse(get("transform")?)?,
            Normalization::parse(get("normalization")?)?,
            parse("tau_s", get("tau_s")?)?,
        )?;
        let meta = TrainMeta {
            steps: parse("steps", get("steps")?)?,
            loss_family: LossFamily::parse(get("loss_family")?)?,
            alpha: parse("alpha", get("alpha")?)?,
            beta_db: parse("beta_db", get("beta_db")?)?,
            seed: parse("seed", get("seed")?)?,
        };

        let read_tensor = |dims: &[usize], offset: usize, name: &str| -> Result<Vec<f64>> {
            let len: usize = dims.iter().product();
            let end = offset
                .checked_add(len * 8)
                .filter(|&e| e <= blob.len())
                .ok_or_else(|| {
                    Error::Checkpoint(format!("tensor {name} runs past the end of the file"))
                })?;
            Ok(blob[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };

        let mut layers = Vec::new();
        let mut it = tensors.iter().peekable();
        while it.peek().is_some_and(|(name, ..)| name.starts_with("layer")) {
            let i = layers.len();
            let mut take = |suffix: &str, rank: usize| -> Result<(Vec<usize>, Vec<f64>)> {
                let (name, dims, offset) = it
                    .next()
                    .ok_or_else(|| Error::Checkpoint(format!("missing layer{i}.{suffix}")))?;
                if name != &format!("layer{i}.{suffix}") || dims.len() != rank {
                    return Err(Error::Checkpoint(format!(
                        "expected layer{i}.{suffix} (rank {rank}), found {name} {dims:?}"
                    )));
                }
                Ok((dims.clone(), read_tensor(dims, *offset, name)?))
            };
            let mut mats = Vec::new();
            for suffix in ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h"] {
                let (dims, data) = take(suffix, 2)?;
                mats.push(
                    Array2::from_shape_vec((dims[0], dims[1]), data)
                        .map_err(|e| Error::Checkpoint(e.to_string()))?,
                );
            }
            let mut vecs = Vec::new();
            for suffix in ["b_z", "b_r", "b_h"] {
                let (_, data) = take(suffix, 1)?;
                vecs.push(Array1::from_vec(data));
            }
            let mut layer = GruLayerParams::zeros(mats[0].ncols(), mats[0].nrows());
            let [w_z, w_r, w_h, u_z, u_r, u_h]: [Array2<f64>; 6] = mats.try_into().unwrap();
            let [b_z, b_r, b_h]: [Array1<f64>; 3] = vecs.try_into().unwrap();
            layer.w_z = w_z;
            layer.w_r = w_r;
            layer.w_h = w_h;
            layer.u_z = u_z;
            layer.u_r = u_r;
            layer.u_h = u_h;
            layer.b_z = b_z;
            layer.b_r = b_r;
            layer.b_h = b_h;
            layers.push(layer);
        }

        let mut take_named = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
            let (found, dims, offset) = it
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if found != name {
                return Err(Error::Checkpoint(format!("expected tensor {name}, found {found}")));
            }
            Ok((dims.clone(), read_tensor(dims, *offset, name)?))
        };
        let (fc_dims, fc_data) = take_named("fc.weight")?;
        if fc_dims.len() != 2 {
            return Err(Error::Checkpoint("fc.weight must be rank 2".into()));
        }
        let fc_weight = Array2::from_shape_vec((fc_dims[0], fc_dims[1]), fc_data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let (_, fc_bias) = take_named("fc.bias")?;
        let fc_bias = Array1::from_vec(fc_bias);

        let stats = if let Some(count) = scalars.get("stats_count") {
            let count: u64 = parse("stats_count", count)?;
            let (_, mean) = take_named("stats.mean")?;
            let (_, m2) = take_named("stats.m2")?;
            Some(GlobalStats::from_raw_moments(mean, m2, count)?)
        } else {
            None
        };
        if let Some((name, ..)) = it.next() {
            return Err(Error::Checkpoint(format!("unexpected trailing tensor {name}")));
        }

        let params =
            ModelParams { layers, fc_weight, fc_bias, version: MODEL_VERSION };
        Self::new(frame, feature, stats, params, meta)
    }
}

fn bad_field(label: &str, value: &str) -> Error {
    Error::Checkpoint(format!("cannot parse {label} from {value:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_checkpoint(global: bool) -> Checkpoint {
        let frame = FrameConfig::default_16k();
        let params = init_params(5, 8, frame.bins()).unwrap();
        let feature = if global {
            FeatureKind::new(Transform::Lps, Normalization::Global, 3.0).unwrap()
        } else {
            FeatureKind::default_lps_fd()
        };
        let stats = global.then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut s = GlobalStats::new(frame.bins());
            for _ in 0..50 {
                let frame: Vec<f64> = (0..257).map(|_| rng.gen_range(-8.0..2.0)).collect();
                s.accumulate(&frame).unwrap();
            }
            s
        });
        let meta = TrainMeta {
            steps: 120,
            loss_family: LossFamily::FixedWeighted,
            alpha: 0.35,
            beta_db: 18.2,
            seed: 5,
        };
        Checkpoint::new(frame, feature, stats, params, meta).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample_checkpoint(true);
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();

        assert_eq!(back.frame.frame_len, ckpt.frame.frame_len);
        assert_eq!(back.frame.hop, ckpt.frame.hop);
        assert_eq!(back.feature.transform.name(), "lps");
        assert_eq!(back.feature.normalization.name(), "global");
        assert_eq!(back.feature.tau_s, 3.0);
        assert_eq!(back.meta, ckpt.meta);
        for (a, b) in back.params.tensors().iter().zip(ckpt.params.tensors()) {
            assert_eq!(*a, b);
        }
        let (mean_a, m2_a, n_a) = back.stats.as_ref().unwrap().raw_moments();
        let (mean_b, m2_b, n_b) = ckpt.stats.as_ref().unwrap().raw_moments();
        assert_eq!((mean_a, m2_a, n_a), (mean_b, m2_b, n_b));
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        for global in [false, true] {
            let first = dir.path().join(format!("a_{global}.ckpt"));
            let second = dir.path().join(format!("b_{global}.ckpt"));
            sample_checkpoint(global).save(&first).unwrap();
            Checkpoint::load(&first).unwrap().save(&second).unwrap();
            assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
        }
    }

    #[test]
    fn no_temp_file_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        sample_checkpoint(false).save(&dir.path().join("m.ckpt")).unwrap();
        let names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["m.ckpt".to_string()]);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        sample_checkpoint(false).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[MAGIC.len() - 1] = b'2';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        sample_checkpoint(false).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn unknown_header_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        sample_checkpoint(false).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let insert_at = MAGIC.len() + 1;
        let mut tampered = bytes[..insert_at].to_vec();
        tampered.extend_from_slice(b"frobnicate 3\n");
        tampered.extend_from_slice(&bytes[insert_at..]);
        std::fs::write(&path, &tampered).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("frobnicate"), "{err}");
    }

    #[test]
    fn stats_must_match_normalization_mode() {
        let frame = FrameConfig::default_16k();
        let params = init_params(5, 8, frame.bins()).unwrap();
        let meta = TrainMeta {
            steps: 0,
            loss_family: LossFamily::Mse,
            alpha: 0.35,
            beta_db: 18.2,
            seed: 0,
        };
        // global normalization without stats
        let feature = FeatureKind::new(Transform::Lps, Normalization::Global, 3.0).unwrap();
        assert!(Checkpoint::new(frame.clone(), feature, None, params.clone(), meta).is_err());
        // stats without global normalization
        let feature = FeatureKind::default_lps_fd();
        let stats = GlobalStats::new(frame.bins());
        assert!(Checkpoint::new(frame, feature, Some(stats), params, meta).is_err());
    }
}
