//! Recursive per-bin covariance tracking gated by a broadband oracle VAD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::stft::SpectralFrameTensor;

/// Default VAD threshold below the loudest frame, in dB.
pub const DEFAULT_VAD_THRESHOLD_DB: f64 = 40.0;

/// Exponential forgetting factor for a time constant `tau` at the frame rate
/// `fs / hop`.
pub fn alpha_from_time_constant(tau: f64, fs: f64, hop: usize) -> f64 {
    (-(hop as f64) / (fs * tau)).exp()
}

/// Per-frame speech activity, `true` for speech-plus-noise frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VadLabels(Vec<bool>);

impl VadLabels {
    pub fn new(labels: Vec<bool>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_speech(&self, frame: usize) -> bool {
        self.0[frame]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn speech_count(&self) -> usize {
        self.0.iter().filter(|s| **s).count()
    }

    pub fn noise_count(&self) -> usize {
        self.len() - self.speech_count()
    }
}

/// Labels a frame as speech when its broadband energy in the clean reference
/// component is within `threshold_db` of the loudest frame.
pub fn oracle_vad(clean_reference: &SpectralFrameTensor, threshold_db: f64) -> Result<VadLabels> {
    if clean_reference.num_channels() != 1 {
        return Err(Error::Dimension(format!(
            "VAD expects one channel, got {}",
            clean_reference.num_channels()
        )));
    }
    let energies = clean_reference.frame_energies();
    let max = energies.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::NoSpeech);
    }
    let floor = max * 10f64.powf(-threshold_db / 10.0);
    Ok(VadLabels(energies.iter().map(|e| *e > floor).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    /// Noisy-signal covariance, updated in speech frames.
    pub speech: f64,
    /// Noise covariance, updated in noise-only frames.
    pub noise: f64,
    /// Cross-PSD with the external (or oracle) reference, updated in speech frames.
    pub cross: f64,
}

impl Smoothing {
    /// Forgetting factors from time constants; the cross-PSD shares `tau_speech`.
    pub fn from_time_constants(tau_speech: f64, tau_noise: f64, fs: f64, hop: usize) -> Self {
        let speech = alpha_from_time_constant(tau_speech, fs, hop);
        Self {
            speech,
            noise: alpha_from_time_constant(tau_noise, fs, hop),
            cross: speech,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("speech", self.speech),
            ("noise", self.noise),
            ("cross", self.cross),
        ] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Config(format!(
                    "{name} smoothing factor {a} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

impl Default for Smoothing {
    fn default() -> Self {
        Self::from_time_constants(0.050, 0.500, 16000.0, 128)
    }
}

/// Running estimate of `E{y r*}` per bin for a scalar reference `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectrum {
    alpha: f64,
    values: Vec<Vec<C64>>,
}

impl CrossSpectrum {
    pub fn zeros(num_bins: usize, channels: usize, alpha: f64) -> Self {
        Self {
            alpha,
            values: vec![vec![C64::new(0.0, 0.0); channels]; num_bins],
        }
    }

    /// Sample average of `y r*` over the speech frames.
    pub fn long_term(
        head: &SpectralFrameTensor,
        reference: &SpectralFrameTensor,
        labels: &VadLabels,
        alpha: f64,
    ) -> Result<Self> {
        check_frames(head, labels)?;
        check_frames(reference, labels)?;
        if reference.num_channels() != 1 || reference.num_bins() != head.num_bins() {
            return Err(Error::Dimension(
                "cross-spectrum reference must be one channel on the same grid".into(),
            ));
        }
        let speech = labels.speech_count();
        if speech == 0 {
            return Err(Error::DegenerateLabels);
        }
        let mut out = Self::zeros(head.num_bins(), head.num_channels(), alpha);
        for l in (0..labels.len()).filter(|l| labels.is_speech(*l)) {
            for (k, acc) in out.values.iter_mut().enumerate() {
                let r = reference.get(0, k, l).conj();
                for (a, y) in acc.iter_mut().zip(head.vector(k, l)) {
                    *a += y * r;
                }
            }
        }
        let scale = 1.0 / speech as f64;
        out.values.iter_mut().flatten().for_each(|z| *z *= scale);
        Ok(out)
    }

    pub fn update_bin(&mut self, bin: usize, y: &[C64], reference: C64, is_speech: bool) {
        if !is_speech {
            return;
        }
        let a = self.alpha;
        let r = reference.conj() * (1.0 - a);
        for (v, yi) in self.values[bin].iter_mut().zip(y) {
            *v = *v * a + yi * r;
        }
    }

    pub fn bin(&self, bin: usize) -> &[C64] {
        &self.values[bin]
    }

    pub fn num_bins(&self) -> usize {
        self.values.len()
    }
}

/// Statistics of one frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinCovariance {
    pub r_y: CMatrix,
    pub r_n: CMatrix,
}

/// Noisy and noise covariance matrices per bin, plus the cross-PSD vector with
/// the external microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState {
    smoothing: Smoothing,
    bins: Vec<BinCovariance>,
    cross: CrossSpectrum,
}

fn check_frames(t: &SpectralFrameTensor, labels: &VadLabels) -> Result<()> {
    if t.num_frames() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} VAD labels for {} frames",
            labels.len(),
            t.num_frames()
        )));
    }
    Ok(())
}

impl CovarianceState {
    pub fn zeros(num_bins: usize, channels: usize, smoothing: Smoothing) -> Self {
        Self {
            smoothing,
            bins: vec![
                BinCovariance {
                    r_y: CMatrix::zeros(channels),
                    r_n: CMatrix::zeros(channels),
                };
                num_bins
            ],
            cross: CrossSpectrum::zeros(num_bins, channels, smoothing.cross),
        }
    }

    /// Long-term initialization: `R_y` and `r_yE` average all speech frames,
    /// `R_n` averages all noise frames.
    pub fn initialize(
        head: &SpectralFrameTensor,
        external: &SpectralFrameTensor,
        labels: &VadLabels,
        smoothing: Smoothing,
    ) -> Result<Self> {
        smoothing.validate()?;
        check_frames(head, labels)?;
        let (speech, noise) = (labels.speech_count(), labels.noise_count());
        if speech == 0 || noise == 0 {
            return Err(Error::DegenerateLabels);
        }
        let channels = head.num_channels();
        let mut state = Self::zeros(head.num_bins(), channels, smoothing);
        for l in 0..labels.len() {
            let (is_speech, w) = if labels.is_speech(l) {
                (true, 1.0 / speech as f64)
            } else {
                (false, 1.0 / noise as f64)
            };
            for (k, b) in state.bins.iter_mut().enumerate() {
                let target = if is_speech { &mut b.r_y } else { &mut b.r_n };
                target.add_outer(head.vector(k, l), w);
            }
        }
        for b in &mut state.bins {
            b.r_y.symmetrize();
            b.r_n.symmetrize();
        }
        state.cross = CrossSpectrum::long_term(head, external, labels, smoothing.cross)?;
        Ok(state)
    }

    pub fn smoothing(&self) -> &Smoothing {
        &self.smoothing
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn num_channels(&self) -> usize {
        self.bins.first().map_or(0, |b| b.r_y.dim())
    }

    pub fn bin(&self, bin: usize) -> &BinCovariance {
        &self.bins[bin]
    }

    pub fn bin_mut(&mut self, bin: usize) -> &mut BinCovariance {
        &mut self.bins[bin]
    }

    pub fn cross(&self, bin: usize) -> &[C64] {
        self.cross.bin(bin)
    }

    /// One recursive step for a single bin: speech frames refresh `R_y` and
    /// `r_yE`, noise frames refresh `R_n`.
    pub fn update_bin(
        &mut self,
        bin: usize,
        y: &[C64],
        external: C64,
        is_speech: bool,
    ) -> Result<()> {
        let b = &mut self.bins[bin];
        if y.len() != b.r_y.dim() {
            return Err(Error::Dimension(format!(
                "frame vector has {} channels, state has {}",
                y.len(),
                b.r_y.dim()
            )));
        }
        let (target, alpha) = if is_speech {
            (&mut b.r_y, self.smoothing.speech)
        } else {
            (&mut b.r_n, self.smoothing.noise)
        };
        target.scale(alpha);
        target.add_outer(y, 1.0 - alpha);
        target.symmetrize();
        self.cross.update_bin(bin, y, external, is_speech);
        Ok(())
    }

    /// Updates every bin of frame `frame`; `head` and `external` share a grid.
    pub fn update_frame(
        &mut self,
        head: &SpectralFrameTensor,
        external: &SpectralFrameTensor,
        frame: usize,
        is_speech: bool,
    ) -> Result<()> {
        if head.num_bins() != self.num_bins() {
            return Err(Error::Dimension("bin count mismatch".into()));
        }
        for k in 0..self.num_bins() {
            self.update_bin(
                k,
                head.vector(k, frame),
                external.get(0, k, frame),
                is_speech,
            )?;
        }
        Ok(())
    }
}
