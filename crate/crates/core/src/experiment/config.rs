//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariance::{alpha_from_time_constant, Smoothing, DEFAULT_VAD_THRESHOLD_DB};
use crate::error::{Error, Result};
use crate::rtf::Estimator;
use crate::scene::{ArrayGeometry, NoiseSpectrum, Position, DEFAULT_SPEED_OF_SOUND};
use crate::stft::StftConfig;

/// Label used for the single condition of a recorded file set.
/// A 7 x 6 x 2.7 m room.
pub const DEFAULT_ROOM_VOLUME_M3: f64 = 7.0 * 6.0 * 2.7;

pub const RECORDED_LABEL: &str = "recorded";

/// Parameters of the synthetic scene template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub duration_s: f64,
    pub leading_silence_s: f64,
    pub mics_per_device: usize,
    pub head_width_m: f64,
    pub mic_spacing_m: f64,
    pub source_distance_m: f64,
    /// Angle from the front toward the right ear, in degrees.
    pub source_azimuth_deg: f64,
    /// External microphone position; defaults to three quarters of the way
    /// from the head center to the source.
    pub external_position: Option<Position>,
    /// External-mic SNR relative to the right-reference SNR.
    pub external_snr_offset_db: f64,
    pub noise_spectrum: NoiseSpectrum,
    pub residual_coherence: f64,
    /// Room volume that sets the reverberant energy for a given T60.
    pub room_volume_m3: f64,
    pub speed_of_sound: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            duration_s: 20.0,
            leading_silence_s: 0.5,
            mics_per_device: 2,
            head_width_m: 0.15,
            mic_spacing_m: 0.01,
            source_distance_m: 2.0,
            source_azimuth_deg: 35.0,
            external_position: None,
            external_snr_offset_db: 9.6,
            noise_spectrum: NoiseSpectrum::default(),
            residual_coherence: 0.0,
            room_volume_m3: DEFAULT_ROOM_VOLUME_M3,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
        }
    }
}

impl SceneConfig {
    pub fn source_position(&self) -> Position {
        let az = self.source_azimuth_deg.to_radians();
        [
            self.source_distance_m * az.cos(),
            -self.source_distance_m * az.sin(),
            0.0,
        ]
    }

    pub fn external_position(&self) -> Position {
        self.external_position.unwrap_or_else(|| {
            let s = self.source_position();
            [0.75 * s[0], 0.75 * s[1], 0.75 * s[2]]
        })
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        let mut g = ArrayGeometry::binaural(
            self.mics_per_device,
            self.head_width_m,
            self.mic_spacing_m,
            self.external_position(),
        )?;
        g.speed_of_sound = self.speed_of_sound;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Config("scene.duration_s must be positive".into()));
        }
        if !(self.leading_silence_s.is_finite() && self.leading_silence_s >= 0.0)
            || self.leading_silence_s >= self.duration_s
        {
            return Err(Error::Config(
                "scene.leading_silence_s must lie in [0, duration_s)".into(),
            ));
        }
        if !(self.room_volume_m3.is_finite() && self.room_volume_m3 > 0.0) {
            return Err(Error::Config(
                "scene.room_volume_m3 must be positive".into(),
            ));
        }
        if !(self.source_distance_m.is_finite() && self.source_distance_m > 0.0) {
            return Err(Error::Config(
                "scene.source_distance_m must be positive".into(),
            ));
        }
        if !self.external_snr_offset_db.is_finite() {
            return Err(Error::Config(
                "scene.external_snr_offset_db must be finite".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.residual_coherence) {
            return Err(Error::Config(
                "scene.residual_coherence must lie in [0, 1]".into(),
            ));
        }
        self.geometry().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Separately recorded components. Head files hold `L1..LM, R1..RM`; the
/// external channel is either in its own mono files or appended as the last
/// channel when `external_last_channel` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSet {
    pub speech: PathBuf,
    pub noise: PathBuf,
    #[serde(default)]
    pub external_speech: Option<PathBuf>,
    #[serde(default)]
    pub external_noise: Option<PathBuf>,
    #[serde(default)]
    pub external_last_channel: bool,
    /// Clean source signal, needed by the oracle estimator.
    #[serde(default)]
    pub source: Option<PathBuf>,
}

impl FileSet {
    fn validate(&self) -> Result<()> {
        let separate = (
            self.external_speech.is_some(),
            self.external_noise.is_some(),
        );
        match (self.external_last_channel, separate) {
            (true, (false, false)) | (false, (true, true)) => Ok(()),
            (true, _) => Err(Error::Config(
                "files.external_last_channel excludes separate external files".into(),
            )),
            (false, _) => Err(Error::Config(
                "files need both external_speech and external_noise, or external_last_channel"
                    .into(),
            )),
        }
    }

    /// Resolves relative paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.speech);
        fix(&mut self.noise);
        for p in [
            &mut self.external_speech,
            &mut self.external_noise,
            &mut self.source,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConstants {
    pub tau_y: f64,
    pub tau_n: f64,
    /// Cross-PSD time constant; `tau_y` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_c: Option<f64>,
}

impl Default for TimeConstants {
    fn default() -> Self {
        Self {
            tau_y: 0.050,
            tau_n: 0.500,
            tau_c: None,
        }
    }
}

impl TimeConstants {
    pub fn smoothing(&self, stft: &StftConfig) -> Smoothing {
        let mut s =
            Smoothing::from_time_constants(self.tau_y, self.tau_n, stft.sample_rate, stft.hop);
        if let Some(tau_c) = self.tau_c {
            s.cross = alpha_from_time_constant(tau_c, stft.sample_rate, stft.hop);
        }
        s
    }
}

/// Reverberation severity of one grid entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReverbPreset {
    Anechoic,
    T60(f64),
}

/// Parses `"anechoic"` or a reverberation time such as `"500ms"` or `"0.5s"`.
pub fn parse_reverb_label(label: &str) -> Result<ReverbPreset> {
    let l = label.trim().to_ascii_lowercase();
    if l == "anechoic" {
        return Ok(ReverbPreset::Anechoic);
    }
    let seconds = if let Some(ms) = l.strip_suffix("ms") {
        ms.trim().parse::<f64>().ok().map(|v| v / 1000.0)
    } else if let Some(s) = l.strip_suffix('s') {
        s.trim().parse::<f64>().ok()
    } else {
        None
    };
    match seconds {
        Some(t) if t.is_finite() && t > 0.0 => Ok(ReverbPreset::T60(t)),
        _ => Err(Error::Config(format!(
            "reverb label '{label}' is not 'anechoic' or a time like '500ms'"
        ))),
    }
}

fn default_estimators() -> Vec<Estimator> {
    vec![
        Estimator::Biased,
        Estimator::CovarianceWhitening,
        Estimator::SpatialCoherence,
        Estimator::OracleSpatialCoherence,
    ]
}

fn default_snr_grid() -> Vec<f64> {
    vec![-5.0, 0.0, 5.0]
}

fn default_reverb_grid() -> Vec<String> {
    ["250ms", "500ms", "750ms"].map(String::from).to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_vad() -> f64 {
    DEFAULT_VAD_THRESHOLD_DB
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scene: Option<SceneConfig>,
    #[serde(default)]
    pub files: Option<FileSet>,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_snr_grid")]
    pub snr_grid_db: Vec<f64>,
    /// Defaults to three presets for scenes and to a single label for files.
    #[serde(default)]
    pub reverb_grid: Option<Vec<String>>,
    #[serde(default = "default_vad")]
    pub vad_threshold_db: f64,
    #[serde(default)]
    pub time_constants: TimeConstants,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Use the long-term statistics for every frame instead of tracking them.
    #[serde(default, rename = "static")]
    pub static_filters: bool,
    #[serde(default)]
    pub uniform_weights: bool,
    /// Band-importance table replacing the bundled one.
    #[serde(default)]
    pub band_weights: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub write_audio: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: Some(SceneConfig::default()),
            files: None,
            stft: StftConfig::default(),
            estimators: default_estimators(),
            snr_grid_db: default_snr_grid(),
            reverb_grid: None,
            vad_threshold_db: default_vad(),
            time_constants: TimeConstants::default(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            static_filters: false,
            uniform_weights: false,
            band_weights: None,
            write_audio: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(files) = &mut cfg.files {
            files.rebase(base);
        }
        if let Some(p) = &mut cfg.band_weights {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn reverb_labels(&self) -> Vec<String> {
        match (&self.reverb_grid, self.files.is_some()) {
            (Some(g), _) => g.clone(),
            (None, true) => vec![RECORDED_LABEL.to_string()],
            (None, false) => default_reverb_grid(),
        }
    }

    pub fn smoothing(&self) -> Smoothing {
        self.time_constants.smoothing(&self.stft)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.scene, &self.files) {
            (Some(s), None) => {
                s.validate()?;
                for label in self.reverb_labels() {
                    parse_reverb_label(&label)?;
                }
            }
            (None, Some(f)) => {
                f.validate()?;
                if self.reverb_labels().len() != 1 {
                    return Err(Error::Config(
                        "a file set is a single recording; reverb_grid takes one label".into(),
                    ));
                }
                if self.estimators.contains(&Estimator::True) {
                    return Err(Error::Config(
                        "the true-RTF estimator needs a simulated scene".into(),
                    ));
                }
                if self.estimators.contains(&Estimator::OracleSpatialCoherence)
                    && f.source.is_none()
                {
                    return Err(Error::Config(
                        "SC_opt needs files.source (the clean source signal)".into(),
                    ));
                }
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either [scene] or [files], not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "either [scene] or [files] is required".into(),
                ))
            }
        }
        self.stft
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.estimators.is_empty() {
            return Err(Error::Config("estimators must not be empty".into()));
        }
        let mut sorted = self.estimators.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.estimators.len() {
            return Err(Error::Config("estimators contain duplicates".into()));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "snr_grid_db must be a non-empty list of finite values".into(),
            ));
        }
        let labels = self.reverb_labels();
        if labels.is_empty() {
            return Err(Error::Config("reverb_grid must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        for (name, dup) in [
            (
                "snr_grid_db",
                has_duplicates(self.snr_grid_db.iter().map(|v| v.to_bits())),
            ),
            ("reverb_grid", has_duplicates(labels.iter().cloned())),
            ("seeds", has_duplicates(self.seeds.iter().copied())),
        ] {
            if dup {
                return Err(Error::Config(format!("{name} contains duplicates")));
            }
        }
        if !(self.vad_threshold_db.is_finite() && self.vad_threshold_db > 0.0) {
            return Err(Error::Config("vad_threshold_db must be positive".into()));
        }
        let tc = &self.time_constants;
        let tau_c = tc.tau_c.unwrap_or(tc.tau_y);
        if ![tc.tau_y, tc.tau_n, tau_c]
            .iter()
            .all(|t| t.is_finite() && *t > 0.0)
        {
            return Err(Error::Config("time constants must be positive".into()));
        }
        self.smoothing().validate()?;
        Ok(())
    }
}

fn has_duplicates<T: Ord>(items: impl Iterator<Item = T>) -> bool {
    let mut v: Vec<T> = items.collect();
    let n = v.len();
    v.sort();
    v.dedup();
    v.len() != n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::distance;

    #[test]
    fn minimal_scene_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("[scene]\n").unwrap();
        assert_eq!(cfg.snr_grid_db, vec![-5.0, 0.0, 5.0]);
        assert_eq!(cfg.reverb_labels(), vec!["250ms", "500ms", "750ms"]);
        assert_eq!(cfg.estimators.len(), 4);
        let s = cfg.smoothing();
        assert!((s.speech - 0.8521).abs() < 1e-4);
        assert!((s.noise - 0.9841).abs() < 1e-4);
        assert!(cfg.write_audio);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(matches!(
            ExperimentConfig::from_toml("[scene]\nbogus = 1\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml(
                "[scene]\n[stft]\nframe_len = 256\nhop = 128\nsample_rate = 16000.0\nfoo = 2\n"
            ),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("seedz = [1]\n[scene]\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
            estimators = ["B", "SC", "true"]
            snr_grid_db = [0.0]
            reverb_grid = ["anechoic", "0.4s"]
            seeds = [3, 4]
            static = true
            write_audio = false
            [scene]
            duration_s = 4.0
            room_volume_m3 = 60.0
            external_position = [1.0, -0.5, 0.0]
            noise_spectrum = "white"
            [time_constants]
            tau_y = 0.1
            tau_c = 0.2
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert!(cfg.static_filters);
        assert_eq!(cfg.time_constants.tau_n, 0.5);
        let smoothing = cfg.smoothing();
        assert!(smoothing.cross > smoothing.speech);
        let scene = cfg.scene.as_ref().unwrap();
        assert_eq!(scene.external_position(), [1.0, -0.5, 0.0]);
        assert_eq!(scene.noise_spectrum, NoiseSpectrum::White);
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            "",
            "estimators = []\n[scene]\n",
            "estimators = [\"B\", \"B\"]\n[scene]\n",
            "estimators = [\"XX\"]\n[scene]\n",
            "snr_grid_db = []\n[scene]\n",
            "seeds = []\n[scene]\n",
            "reverb_grid = [\"loud\"]\n[scene]\n",
            "reverb_grid = []\n[scene]\n",
            "[scene]\nduration_s = -1.0\n",
            "[scene]\nresidual_coherence = 2.0\n",
            "[scene]\n[files]\nspeech = \"a.wav\"\nnoise = \"b.wav\"\nexternal_last_channel = true\n",
            "[files]\nspeech = \"a.wav\"\nnoise = \"b.wav\"\n",
            "estimators = [\"true\"]\n[files]\nspeech = \"a.wav\"\nnoise = \"b.wav\"\nexternal_last_channel = true\n",
            "estimators = [\"SC_opt\"]\n[files]\nspeech = \"a.wav\"\nnoise = \"b.wav\"\nexternal_last_channel = true\n",
            "[scene]\n[stft]\nframe_len = 255\nhop = 128\nsample_rate = 16000.0\n",
        ] {
            let r = ExperimentConfig::from_toml(text);
            assert!(matches!(r, Err(Error::Config(_))), "accepted: {text:?}");
        }
    }

    #[test]
    fn file_mode_gets_single_label() {
        let cfg = ExperimentConfig::from_toml(
            "estimators = [\"B\", \"SC\"]\n[files]\nspeech = \"a.wav\"\nnoise = \"b.wav\"\nexternal_last_channel = true\n",
        )
        .unwrap();
        assert_eq!(cfg.reverb_labels(), vec![RECORDED_LABEL]);
    }

    #[test]
    fn reverb_labels_parse() {
        assert_eq!(
            parse_reverb_label("250ms").unwrap(),
            ReverbPreset::T60(0.25)
        );
        assert_eq!(
            parse_reverb_label("0.75s").unwrap(),
            ReverbPreset::T60(0.75)
        );
        assert_eq!(
            parse_reverb_label("Anechoic").unwrap(),
            ReverbPreset::Anechoic
        );
        assert!(parse_reverb_label("0ms").is_err());
        assert!(parse_reverb_label("fast").is_err());
    }

    #[test]
    fn default_geometry_distances() {
        let s = SceneConfig::default();
        let src = s.source_position();
        assert!((distance(&src, &[0.0; 3]) - 2.0).abs() < 1e-12);
        assert!(src[1] < 0.0);
        let ext = s.external_position();
        assert!((distance(&ext, &src) - 0.5).abs() < 1e-12);
        assert!((distance(&ext, &[0.0; 3]) - 1.5).abs() < 1e-12);
        assert_eq!(s.external_snr_offset_db, 9.6);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }
}
