mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use binaural_rtf::experiment::report::{Report, CSV_HEADER};
use binaural_rtf::experiment::wav::write_wav;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binaural-rtf"))
        .args(args)
        .output()
        .unwrap()
}

fn short_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        format!("seeds = [1, 2]\n{extra}\n[scene]\nduration_s = 3.0\n"),
    )
    .unwrap();
    path
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = walk(dir)
        .into_iter()
        .map(|p| {
            (
                p.strip_prefix(dir).unwrap().display().to_string(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn full_grid_has_one_row_per_condition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--no-write-audio",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 73);
    let mut keys: Vec<String> = lines[1..]
        .iter()
        .map(|l| l.split(',').take(4).collect::<Vec<_>>().join(","))
        .collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), 72);
    assert!(!out.join("audio").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let out = dir.path().join("out");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        if out.exists() {
            std::fs::remove_dir_all(&out).unwrap();
        }
        let o = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--snr",
            "0",
            "--reverb",
            "500ms",
            "--write-audio",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        snapshots.push(read_dir_bytes(&out));
    }
    assert_eq!(snapshots[0].len(), 2 + 4 * 2);
    assert!(snapshots[0] == snapshots[1]);
}

#[test]
fn json_report_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "estimators = [\"SC\", \"true\"]");
    let out = dir.path().join("out");
    let o = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--snr",
        "5",
        "--reverb",
        "250ms",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    let report: Report = serde_json::from_str(&text).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.config.seeds, vec![3]);

    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let row = &value["rows"][0];
    for key in [
        "estimator",
        "snr_db",
        "reverb_label",
        "seed",
        "metrics",
        "speech_frames",
        "fallback_bins",
        "audio_file",
    ] {
        assert!(row.get(key).is_some(), "missing {key}");
    }
    let metrics = &row["metrics"];
    for key in [
        "delta_isnr_db",
        "ild_error_db",
        "itd_error_us",
        "per_band_detail",
        "msc_curves",
    ] {
        assert!(metrics.get(key).is_some(), "missing {key}");
    }
    let band = &metrics["per_band_detail"][0];
    for key in [
        "center_hz",
        "weight",
        "input_snr_db",
        "output_snr_db",
        "ild_error_db",
        "itd_error_us",
    ] {
        assert!(band.get(key).is_some(), "missing {key}");
    }
    let weights: f64 = metrics["per_band_detail"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["weight"].as_f64().unwrap())
        .sum();
    assert!((weights - 1.0).abs() < 1e-9);
    assert!(metrics["msc_curves"].as_array().unwrap().len() >= 2);

    let truth = &value["rows"][1]["metrics"];
    assert!(truth["ild_error_db"].as_f64().unwrap() < 1e-6);
    assert!(truth["itd_error_us"].as_f64().unwrap() < 1e-6);
    let audio = value["rows"][1]["audio_file"].as_str().unwrap();
    assert!(out.join(audio).exists());
}

#[test]
fn file_mode_processes_recorded_components() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::render(3.0, 0.0, "250ms", 5);
    let speech = dir.path().join("speech.wav");
    let noise = dir.path().join("noise.wav");
    write_wav(&speech, &s.truth.speech, 16000).unwrap();
    write_wav(&noise, &s.truth.noise, 16000).unwrap();
    let cfg = dir.path().join("files.toml");
    std::fs::write(
        &cfg,
        "estimators = [\"B\", \"CW\", \"SC\"]\nsnr_grid_db = [-5, 5]\nseeds = [1]\n\
         [files]\nspeech = \"speech.wav\"\nnoise = \"noise.wav\"\nexternal_last_channel = true\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--no-write-audio",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[2], "recorded");
        // no ground truth in file mode, so no cue errors
        assert_eq!(r[5], "");
        assert_eq!(r[6], "");
    }
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "colour = 1\n").unwrap();
    assert_eq!(
        run(&["--config", unknown.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["--estimator", "XY", "--out", out]).status.code(),
        Some(2)
    );

    let missing = dir.path().join("missing.toml");
    assert_eq!(
        run(&["--config", missing.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(3)
    );

    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = short_config(dir.path(), "");
    let o = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        blocker.join("sub").to_str().unwrap(),
        "--estimator",
        "B",
        "--snr",
        "0",
        "--reverb",
        "anechoic",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));

    let silent = vec![vec![0.0; 48000]; 5];
    let speech = dir.path().join("silent.wav");
    write_wav(&speech, &silent, 16000).unwrap();
    let noise = dir.path().join("noise.wav");
    let s = common::render(3.0, 0.0, "anechoic", 1);
    write_wav(&noise, &s.truth.noise, 16000).unwrap();
    let files = dir.path().join("silent.toml");
    std::fs::write(
        &files,
        "estimators = [\"B\"]\nseeds = [1]\nsnr_grid_db = [0]\n[files]\nspeech = \"silent.wav\"\nnoise = \"noise.wav\"\nexternal_last_channel = true\n",
    )
    .unwrap();
    let o = run(&["--config", files.to_str().unwrap(), "--out", out]);
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
