//! End-to-end tests that drive the installed binary the way a user would:
//! real processes, real files, real exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use streamgain::checkpoint::Checkpoint;
use streamgain::wav::{read_wav, write_wav};

const SR: usize = 16_000;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_streamgain"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "command failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("spawn").status.code().expect("exit code")
}

/// Two synthetic talkers (AM-modulated harmonics) and two noise beds, plus a
/// manifest pointing at them. Enough material for 4 s excerpts.
fn make_corpus(dir: &Path) -> PathBuf {
    let seconds = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (idx, f0) in [(1, 140.0f64), (2, 230.0)] {
        let samples: Vec<f64> = (0..seconds * SR)
            .map(|i| {
                let t = i as f64 / SR as f64;
                let am = 0.6 + 0.4 * (2.0 * std::f64::consts::PI * 2.3 * t).sin();
                0.25 * am
                    * ((2.0 * std::f64::consts::PI * f0 * t).sin()
                        + 0.5 * (2.0 * std::f64::consts::PI * 2.0 * f0 * t).sin())
            })
            .collect();
        write_wav(&dir.join(format!("speech{idx}.wav")), &samples).unwrap();
    }
    for idx in 1..=2 {
        let samples: Vec<f64> = (0..seconds * SR).map(|_| rng.gen_range(-0.2..0.2)).collect();
        write_wav(&dir.join(format!("noise{idx}.wav")), &samples).unwrap();
    }
    let manifest = dir.join("manifest.tsv");
    std::fs::write(
        &manifest,
        "speech\tspeech1.wav\nspeech\tspeech2.wav\nnoise\tnoise1.wav\nnoise\tnoise2.wav\n",
    )
    .unwrap();
    manifest
}

/// Mixes a small dataset and returns its directory.
fn make_dataset(dir: &Path, manifest: &Path, count: usize, seed: u64) -> PathBuf {
    let data = dir.join(format!("data{seed}"));
    run_ok(
        bin()
            .args(["mix", "--count", &count.to_string(), "--seed", &seed.to_string()])
            .args(["--clip-seconds", "2", "--snr-set", "0,10"])
            .arg("--manifest")
            .arg(manifest)
            .arg("--out-dir")
            .arg(&data),
    );
    data
}

/// Trains a deliberately tiny model so tests stay fast.
fn train_tiny(dir: &Path, manifest: &Path, out_name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(out_name);
    run_ok(
        bin()
            .args(["train", "--steps", "2", "--hidden", "4", "--seed", "5"])
            .args(["--seq-len-seconds", "1", "--batch-budget-seconds", "2"])
            .args(["--train-mixes", "2", "--mix-seconds", "2"])
            .args(extra)
            .arg("--manifest")
            .arg(manifest)
            .arg("--out-dir")
            .arg(&out),
    );
    out
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(exit_code(bin().arg("--help")), 0);
    assert_eq!(exit_code(bin().arg("frobnicate")), 1);
    assert_eq!(exit_code(bin().arg("train")), 1); // no data source
    assert_eq!(exit_code(bin().args(["enhance", "--checkpoint"])), 1); // missing value
}

#[test]
fn bad_config_file_exits_1_with_the_offending_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.conf");
    std::fs::write(&cfg, "hidden = 4\nfrobnicate = 12\n").unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("frobnicate"), "stderr was: {stderr}");
    assert!(stderr.contains("line 2"), "stderr was: {stderr}");
}

#[test]
fn missing_dataset_exits_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        exit_code(
            bin()
                .args(["eval", "--dataset"])
                .arg(tmp.path().join("nope"))
                .arg("--out-dir")
                .arg(tmp.path().join("out"))
        ),
        2
    );
}

#[test]
fn mix_writes_exact_deterministic_triplets() {
    let tmp = TempDir::new().unwrap();
    let manifest = make_corpus(tmp.path());
    let data = make_dataset(tmp.path(), &manifest, 4, 11);

    let index = std::fs::read_to_string(data.join("dataset.tsv")).unwrap();
    let rows: Vec<&str> = index.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);

    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols.len(), 7);
        // round-robin over the snr set
        let want_snr = [0.0, 10.0][i % 2];
        assert_eq!(cols[1].parse::<f64>().unwrap(), want_snr);

        let noisy = read_wav(&data.join(cols[2])).unwrap();
        let clean = read_wav(&data.join(cols[3])).unwrap();
        let noise = read_wav(&data.join(cols[4])).unwrap();
        assert_eq!(noisy.len(), 2 * SR);

        // the advertised SNR must re-measure from the files themselves
        let e_s: f64 = clean.iter().map(|v| v * v).sum();
        let e_n: f64 = noise.iter().map(|v| v * v).sum();
        let measured = 10.0 * (e_s / e_n).log10();
        assert!(
            (measured - want_snr).abs() < 0.01,
            "clip {i}: measured {measured} dB, want {want_snr} dB"
        );
        // and the mixture must be literally additive
        for ((&y, &s), &n) in noisy.iter().zip(&clean).zip(&noise) {
            assert!((y - (s + n)).abs() < 2e-7); // float32 storage rounding
        }
    }

    // same seed, same bytes
    let again = make_dataset(tmp.path(), &manifest, 4, 11);
    for row in &rows {
        let name = row.split('\t').nth(2).unwrap();
        assert_eq!(
            std::fs::read(data.join(name)).unwrap(),
            std::fs::read(again.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn mix_count_zero_writes_a_valid_empty_index() {
    let tmp = TempDir::new().unwrap();
    let manifest = make_corpus(tmp.path());
    let data = tmp.path().join("empty");
    run_ok(
        bin()
            .args(["mix", "--count", "0", "--manifest"])
            .arg(&manifest)
            .arg("--out-dir")
            .arg(&data),
    );
    let index = std::fs::read_to_string(data.join("dataset.tsv")).unwrap();
    assert_eq!(index.lines().count(), 1); // header only
    assert!(index.starts_with("clip_id\t"));
}

#[test]
fn train_writes_a_self_describing_checkpoint_and_log() {
    let tmp = TempDir::new().unwrap();
    let manifest = make_corpus(tmp.path());
    let out = train_tiny(tmp.path(), &manifest, "run", &["--checkpoint-every", "1"]);

    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    for key in ["# seed 5", "# hidden 4", "# steps 2", "# loss_family fixed_weighted"] {
        assert!(log.contains(key), "log missing {key:?}:\n{log}");
    }
    assert!(log.contains("step,loss,"));
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 3); // header + 2 rows

    // intermediate cadence: step 1 saved, final step only as model.ckpt
    assert!(out.join("model_step000001.ckpt").exists());
    assert!(!out.join("model_step000002.ckpt").exists());

    let ckpt = Checkpoint::load(&out.join("model.ckpt")).unwrap();
    assert_eq!(ckpt.meta.steps, 2);
    assert_eq!(ckpt.meta.seed, 5);
    assert_eq!(ckpt.params.hidden_sizes(), vec![4, 4, 4]);
}

#[test]
fn train_resume_continues_the_step_counter() {
    let tmp = TempDir::new().unwrap();
    let manifest = make_corpus(tmp.path());
    let out = train_tiny(tmp.path(), &manifest, "run", &[]);

    run_ok(
        bin()
            .args(["train", "--steps", "4", "--seed", "5"])
            .args(["--seq-len-seconds", "1", "--batch-budget-seconds", "2"])
            .args(["--train-mixes", "2", "--mix-seconds", "2"])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--out-dir")
            .arg(&out)
            .arg("--resume")
            .arg(out.join("model.ckpt")),
    );
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.contains("# resumed_at_step 2"), "log:\n{log}");
    assert!(log.lines().any(|l| l.starts_with("3,")), "log:\n{log}");
    assert!(log.lines().any(|l| l.starts_with("4,")), "log:\n{log}");
    assert_eq!(Checkpoint::load(&out.join("model.ckpt")).unwrap().meta.steps, 4);
}

#[test]
fn same_config_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let manifest = make_corpus(tmp.path());
    let out = train_tiny(tmp.path(), &manifest, "rep", &[]);
    let first_ckpt = std::fs::read(out.join("model.ckpt")).unwrap();
    let first_log = std::fs::read(out.join("train_log.csv")).unwrap();

    // run again into the same directory: identical config, identical bytes
    train_tiny(tmp.path(), &manifest, "rep", &[]);
    assert_eq!(first_ckpt, std::fs::read(out.join("model.ckpt")).unwrap());
    assert_eq!(first_log, std::fs::read(out.join("train_log.csv")).unwrap());
}

#[test]
fn enhance_is_chunking_invariant_and_preserves_silence() {
    let tmp = TempDir::new().unwrap();
    let manifest = make_corpus(tmp.path());
    let data = make_dataset(tmp.path(), &manifest, 1, 3);
    let out = train_tiny(tmp.path(), &manifest, "run", &[]);
    let ckpt = out.join("model.ckpt");
    let noisy = data.join("mix0000_snr0db_noisy.wav");

    let whole = tmp.path().join("whole.wav");
    let chunked = tmp.path().join("chunked.wav");
    let stdout = run_ok(
        bin().arg("enhance").arg("--checkpoint").arg(&ckpt).arg("--input").arg(&noisy)
            .arg("--output").arg(&whole),
    );
    let text = String::from_utf8_lossy(&stdout.stdout).to_string();
    assert!(text.contains("real-time factor"), "stdout: {text}");
    run_ok(
        bin().arg("enhance").arg("--checkpoint").arg(&ckpt).arg("--input").arg(&noisy)
            .arg("--output").arg(&chunked).args(["--chunk-samples", "160"]),
    );
    assert_eq!(
        std::fs::read(&whole).unwrap(),
        std::fs::read(&chunked).unwrap(),
        "chunked output differs from whole-file output"
    );
    assert_eq!(read_wav(&whole).unwrap().len(), read_wav(&noisy).unwrap().len());

    let silence = tmp.path().join("silence.wav");
    write_wav(&silence, &vec![0.0; SR]).unwrap();
    let quiet = tmp.path().join("quiet.wav");
    run_ok(
        bin().arg("enhance").arg("--checkpoint").arg(&ckpt).arg("--input").arg(&silence)
            .arg("--output").arg(&quiet),
    );
    let samples = read_wav(&quiet).unwrap();
    assert_eq!(samples.len(), SR);
    assert!(samples.iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn eval_reports_all_three_systems_and_merges_external_scores() {
    let tmp = TempDir::new().unwrap();
    let manifest = make_corpus(tmp.path());
    let data = make_dataset(tmp.path(), &manifest, 2, 3);
    let run = train_tiny(tmp.path(), &manifest, "run", &[]);

    // fabricate an externally computed score per clip
    let pesq = tmp.path().join("pesq.csv");
    std::fs::write(&pesq, "mix0000_snr0db,2.1\nmix0001_snr10db,2.9\n").unwrap();

    let out_dir = tmp.path().join("evald");
    let output = run_ok(
        bin().arg("eval").arg("--checkpoint").arg(run.join("model.ckpt"))
            .arg("--dataset").arg(&data).arg("--out-dir").arg(&out_dir)
            .arg("--external").arg(format!("pesq={}", pesq.display())),
    );
    let stdout = String::from_utf8_lossy(&output.stdout).to_string();
    for label in ["noisy", "model", "oracle_wiener"] {
        assert!(out_dir.join(format!("report_{label}.csv")).exists());
        assert!(stdout.contains(&format!("system: {label}")), "stdout: {stdout}");
    }

    let noisy_csv = std::fs::read_to_string(out_dir.join("report_noisy.csv")).unwrap();
    for line in noisy_csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        // passthrough improvement over itself is exactly zero
        assert_eq!(cols[3], "0", "noisy row not a passthrough: {line}");
        assert_eq!(cols[2], cols[5], "noisy row not a passthrough: {line}");
    }

    let model_csv = std::fs::read_to_string(out_dir.join("report_model.csv")).unwrap();
    assert!(model_csv.lines().next().unwrap().ends_with(",pesq"));
    assert!(model_csv.contains("2.1"));

    // summary.txt mirrors stdout
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("system: oracle_wiener"));
}

#[test]
fn sweep_emits_one_row_per_coefficient_and_metric() {
    let tmp = TempDir::new().unwrap();
    let manifest = make_corpus(tmp.path());
    let data = make_dataset(tmp.path(), &manifest, 2, 3);
    let out_dir = tmp.path().join("sweepd");
    run_ok(
        bin()
            .args(["sweep", "--alphas", "0.2,0.8", "--steps", "2", "--hidden", "4"])
            .args(["--seq-len-seconds", "1", "--batch-budget-seconds", "2"])
            .args(["--train-mixes", "2", "--mix-seconds", "2", "--seed", "5"])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--eval-dataset")
            .arg(&data)
            .arg("--out-dir")
            .arg(&out_dir),
    );
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 4, "coefficients x metrics");
    for metric in ["si_sdr_db", "cd", "speech_distortion", "residual_noise"] {
        let best: usize = rows
            .iter()
            .filter(|r| r.split(',').nth(1) == Some(metric))
            .map(|r| r.split(',').nth(3).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(best, 1, "{metric} should have exactly one best row");
    }
    // each coefficient keeps its own training log
    assert!(out_dir.join("train_alpha0.2.csv").exists());
    assert!(out_dir.join("train_alpha0.8.csv").exists());
}
