//! Experiment runner over estimators, SNRs, reverberation presets and seeds.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod wav;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{isnr_improvement, measure_msc, BandWeights, MetricReport, MscCurve};
use crate::rtf::Estimator;
use crate::scene::{
    distance, render_scene, speech_like_source, RenderedScene, ReverbProxy, SceneDescription,
};
use crate::stft::{self, SpectralFrameTensor, StftConfig};

use config::{parse_reverb_label, ExperimentConfig, FileSet, ReverbPreset, SceneConfig};
use pipeline::{process, ComponentInput, ProcessingSettings};
use report::{emit_report, format_significant, ReportRow};

/// Subdirectory of the output directory holding enhanced signals.
pub const AUDIO_DIR: &str = "audio";

/// One point of the grid, shared by all estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub snr_db: f64,
    pub reverb_label: String,
    pub seed: u64,
}

impl Condition {
    pub fn describe(&self) -> String {
        format!(
            "snr={} dB, reverb={}, seed={}",
            format_significant(self.snr_db, 6),
            self.reverb_label,
            self.seed
        )
    }
}

/// Grid in report order: reverberation, then SNR, then seed.
pub fn conditions(cfg: &ExperimentConfig) -> Vec<Condition> {
    let mut out = Vec::new();
    for label in cfg.reverb_labels() {
        for &snr_db in &cfg.snr_grid_db {
            for &seed in &cfg.seeds {
                out.push(Condition {
                    snr_db,
                    reverb_label: label.clone(),
                    seed,
                });
            }
        }
    }
    out
}

/// Renders the synthetic scene of one condition. The seed drives the source
/// signal, the noise field and the echo pattern.
pub fn build_scene(
    scene: &SceneConfig,
    stft: &StftConfig,
    cond: &Condition,
) -> Result<RenderedScene> {
    let geometry = scene.geometry()?;
    let source_position = scene.source_position();
    let fs = stft.sample_rate;
    let samples = (scene.duration_s * fs).round() as usize;
    let source_signal = speech_like_source(samples, fs, scene.leading_silence_s, cond.seed);
    let reverb = match parse_reverb_label(&cond.reverb_label)? {
        ReverbPreset::Anechoic => ReverbProxy::anechoic(),
        ReverbPreset::T60(t60) => {
            let mic = |i: usize| distance(&geometry.mic_positions[i], &source_position);
            let distances = [
                mic(0),
                mic(geometry.right_reference()),
                mic(geometry.external_index()),
            ];
            ReverbProxy::preset(
                t60,
                scene.room_volume_m3,
                distances,
                scene.speed_of_sound,
                cond.seed,
            )
        }
    };
    let desc = SceneDescription {
        geometry,
        source_position,
        source_signal,
        reverb,
        snr_db: cond.snr_db,
        external_snr_offset_db: scene.external_snr_offset_db,
        noise_seed: cond.seed,
        noise_spectrum: scene.noise_spectrum,
        residual_coherence: scene.residual_coherence,
    };
    render_scene(&desc, stft)
}

impl From<&RenderedScene> for ComponentInput {
    fn from(s: &RenderedScene) -> Self {
        ComponentInput {
            mics_per_device: s.mics_per_device,
            speech: s.speech.clone(),
            noise: s.noise.clone(),
            source: Some(s.source.clone()),
            atf: Some(s.truth.atf.clone()),
        }
    }
}

fn read_checked(path: &Path, fs: f64) -> Result<Vec<Vec<f64>>> {
    let (chans, rate) = wav::read_wav(path)?;
    if rate as f64 != fs {
        return Err(Error::Config(format!(
            "{} has sample rate {rate}, expected {fs}",
            path.display()
        )));
    }
    Ok(chans)
}

fn append_external(head: &mut Vec<Vec<f64>>, path: &Path, fs: f64) -> Result<()> {
    let mut ext = read_checked(path, fs)?;
    if ext.len() != 1 {
        return Err(Error::Config(format!("{} must be mono", path.display())));
    }
    head.push(ext.remove(0));
    Ok(())
}

/// Loads separately recorded components at their native level.
pub fn load_files(files: &FileSet, stft: &StftConfig) -> Result<ComponentInput> {
    let fs = stft.sample_rate;
    let mut speech = read_checked(&files.speech, fs)?;
    let mut noise = read_checked(&files.noise, fs)?;
    if let (Some(es), Some(en)) = (&files.external_speech, &files.external_noise) {
        append_external(&mut speech, es, fs)?;
        append_external(&mut noise, en, fs)?;
    }
    if speech.len() != noise.len() {
        return Err(Error::Config(
            "speech and noise files differ in channel count".into(),
        ));
    }
    let head = speech.len().saturating_sub(1);
    if head < 2 || head % 2 != 0 {
        return Err(Error::Config(format!(
            "{} channels including the external mic; need 2M head channels plus one",
            speech.len()
        )));
    }
    let len = speech[0].len();
    if speech.iter().chain(&noise).any(|c| c.len() != len) {
        return Err(Error::Config("component files differ in length".into()));
    }
    let source = match &files.source {
        Some(p) => {
            let s = read_checked(p, fs)?;
            if s.len() != 1 || s[0].len() != len {
                return Err(Error::Config(
                    "source file must be mono with the component length".into(),
                ));
            }
            Some(stft::analyze(&s, stft)?)
        }
        None => None,
    };
    Ok(ComponentInput {
        mics_per_device: head / 2,
        speech: stft::analyze(&speech, stft)?,
        noise: stft::analyze(&noise, stft)?,
        source,
        atf: None,
    })
}

fn channel_power(t: &SpectralFrameTensor, ch: usize) -> f64 {
    (0..t.num_frames())
        .flat_map(|l| (0..t.num_bins()).map(move |k| (k, l)))
        .map(|(k, l)| t.get(ch, k, l).norm_sqr())
        .sum()
}

/// Scales the noise of every channel so the right reference reaches `snr_db`.
pub fn rescale_noise(input: &ComponentInput, snr_db: f64) -> Result<ComponentInput> {
    let r = input.mics_per_device;
    let (ps, pn) = (
        channel_power(&input.speech, r),
        channel_power(&input.noise, r),
    );
    if !(ps > 0.0) {
        return Err(Error::NoSpeech);
    }
    if !(pn > 0.0) {
        return Err(Error::Scene(
            "noise component is silent at the right reference".into(),
        ));
    }
    let mut out = input.clone();
    out.noise
        .scale((ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt());
    Ok(out)
}

fn synth_channel(t: &SpectralFrameTensor, ch: usize) -> Result<Vec<f64>> {
    Ok(stft::synthesize(&t.channel(ch))?.remove(0))
}

fn msc_curves(noise: &SpectralFrameTensor, m: usize) -> Result<Vec<MscCurve>> {
    let cfg = noise.config();
    let ext = 2 * m;
    let mut pairs = vec![[0, m]];
    if m > 1 {
        pairs.push([0, 1]);
    }
    pairs.push([m, ext]);
    let time = stft::synthesize(noise)?;
    let freqs: Vec<f64> = (0..cfg.num_bins()).map(|k| cfg.bin_frequency(k)).collect();
    pairs
        .into_iter()
        .map(|pair| {
            Ok(MscCurve {
                pair,
                frequencies_hz: freqs.clone(),
                values: measure_msc(&time[pair[0]], &time[pair[1]], cfg)?,
            })
        })
        .collect()
}

/// Metrics and enhanced stereo signal of one estimator.
#[derive(Debug, Clone)]
pub struct EstimatorResult {
    pub row: ReportRow,
    pub audio: [Vec<f64>; 2],
}

/// Processes one condition for every estimator. ΔiSNR compares the right
/// reference microphone with the right output.
pub fn evaluate(
    input: &ComponentInput,
    cond: &Condition,
    estimators: &[Estimator],
    settings: &ProcessingSettings,
    weights: &BandWeights,
) -> Result<Vec<EstimatorResult>> {
    let out = process(input, estimators, settings)?;
    let m = input.mics_per_device;
    let fs = input.speech.config().sample_rate;
    let x_in = synth_channel(&input.speech, m)?;
    let n_in = synth_channel(&input.noise, m)?;
    let curves = msc_curves(&input.noise, m)?;
    out.outputs
        .into_iter()
        .map(|o| {
            let x_out = synth_channel(&o.speech.right, 0)?;
            let n_out = synth_channel(&o.noise.right, 0)?;
            let isnr = isnr_improvement(&x_in, &n_in, &x_out, &n_out, fs, weights)?;
            let metrics = MetricReport::assemble(
                &isnr,
                o.cues.as_ref().map(|c| c.bins.as_slice()),
                o.cues.as_ref().map(|c| c.ild_error_db),
                o.cues.as_ref().map(|c| c.itd_error_us),
                curves.clone(),
            );
            let audio = [
                synth_channel(&o.noisy.left, 0)?,
                synth_channel(&o.noisy.right, 0)?,
            ];
            Ok(EstimatorResult {
                row: ReportRow {
                    estimator: o.estimator,
                    snr_db: cond.snr_db,
                    reverb_label: cond.reverb_label.clone(),
                    seed: cond.seed,
                    metrics,
                    speech_frames: out.labels.speech_count(),
                    fallback_bins: o.fallback_count,
                    audio_file: None,
                },
                audio,
            })
        })
        .collect()
}

pub fn band_weights(cfg: &ExperimentConfig) -> Result<BandWeights> {
    match (&cfg.band_weights, cfg.uniform_weights) {
        (Some(_), true) => Err(Error::Config(
            "band_weights and uniform_weights exclude each other".into(),
        )),
        (Some(p), false) => BandWeights::from_file(p),
        (None, true) => Ok(BandWeights::uniform()),
        (None, false) => Ok(BandWeights::sii()),
    }
}

pub fn settings(cfg: &ExperimentConfig) -> ProcessingSettings {
    ProcessingSettings {
        smoothing: cfg.smoothing(),
        vad_threshold_db: cfg.vad_threshold_db,
        static_filters: cfg.static_filters,
    }
}

fn audio_name(est: Estimator, cond: &Condition) -> String {
    let safe: String = cond
        .reverb_label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!(
        "{}_snr{}_{}_seed{}.wav",
        est,
        format_significant(cond.snr_db, 6),
        safe,
        cond.seed
    )
}

/// Evaluates the whole grid; conditions run in parallel and rows come back in
/// grid order with estimators in configuration order. Enhanced signals are
/// written to `audio_dir` when given.
pub fn run_grid(cfg: &ExperimentConfig, audio_dir: Option<&Path>) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let weights = band_weights(cfg)?;
    let settings = settings(cfg);
    let files = match &cfg.files {
        Some(f) => Some(load_files(f, &cfg.stft)?),
        None => None,
    };
    if let Some(dir) = audio_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let per_condition: Vec<Result<Vec<ReportRow>>> = conditions(cfg)
        .par_iter()
        .map(|cond| {
            let label = |e: Error| Error::Condition {
                condition: cond.describe(),
                source: Box::new(e),
            };
            let input = match (&files, &cfg.scene) {
                (Some(f), _) => rescale_noise(f, cond.snr_db),
                (None, Some(scene)) => {
                    build_scene(scene, &cfg.stft, cond).map(|s| ComponentInput::from(&s))
                }
                (None, None) => Err(Error::Config("no scene or files".into())),
            }
            .map_err(label)?;
            let results =
                evaluate(&input, cond, &cfg.estimators, &settings, &weights).map_err(label)?;
            results
                .into_iter()
                .map(|mut r| {
                    if let Some(dir) = audio_dir {
                        let name = audio_name(r.row.estimator, cond);
                        let rate = cfg.stft.sample_rate.round() as u32;
                        wav::write_wav(&dir.join(&name), &r.audio, rate)?;
                        r.row.audio_file = Some(format!("{AUDIO_DIR}/{name}"));
                    }
                    Ok(r.row)
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_condition {
        rows.extend(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub rows: Vec<ReportRow>,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Runs the grid and writes enhanced audio (if enabled) and both report files
/// into the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let audio = cfg.write_audio.then(|| cfg.output_dir.join(AUDIO_DIR));
    let rows = run_grid(cfg, audio.as_deref())?;
    let (csv, json) = emit_report(&rows, cfg, &cfg.output_dir)?;
    Ok(ExperimentSummary { rows, csv, json })
}
