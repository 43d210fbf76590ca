//! Windowed STFT analysis and weighted overlap-add synthesis.
//!
//! Frame `l` covers samples `l*hop .. l*hop + frame_len`; bin `k` of that frame is
//! `sum_t x(l*hop + t) w(t) exp(-j 2 pi k t / frame_len)` with a periodic
//! square-root Hann window `w`. Only the `frame_len/2 + 1` non-negative bins are
//! kept. Trailing samples that do not fill a frame are dropped.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    #[default]
    SqrtHann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: f64,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 256,
            hop: 128,
            sample_rate: 16000.0,
            window: WindowKind::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn new(frame_len: usize, hop: usize, sample_rate: f64) -> Result<Self> {
        let cfg = Self {
            frame_len,
            hop,
            sample_rate,
            window: WindowKind::SqrtHann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks sizes and the constant-overlap-add property of `w^2`.
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::InvalidStft(format!(
                "frame length {} must be positive and even",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::InvalidStft(format!(
                "hop {} must be in 1..={}",
                self.hop, self.frame_len
            )));
        }
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::InvalidStft(format!(
                "sample rate {} must be positive",
                self.sample_rate
            )));
        }
        self.overlap_gain().map(|_| ())
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate / self.frame_len as f64
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::SqrtHann => sqrt_hann(self.frame_len),
        }
    }

    /// The constant `sum_l w^2(t - l*hop)`, or an error when it varies with `t`.
    pub fn overlap_gain(&self) -> Result<f64> {
        let w = self.window();
        let mut sums = vec![0.0; self.hop];
        for (t, wt) in w.iter().enumerate() {
            sums[t % self.hop] += wt * wt;
        }
        let first = sums[0];
        if first <= 0.0 || sums.iter().any(|s| (s - first).abs() > 1e-9 * first) {
            return Err(Error::InvalidStft(format!(
                "window is not overlap-add consistent for frame {} / hop {}",
                self.frame_len, self.hop
            )));
        }
        Ok(first)
    }
}

/// Periodic square-root Hann window.
pub fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * t as f64 / len as f64;
            (0.5 - 0.5 * phase.cos()).max(0.0).sqrt()
        })
        .collect()
}

/// Complex STFT coefficients for a set of channels sharing one frame grid.
///
/// Stored frame-major so that the channel vector `y(k, l)` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrameTensor {
    config: StftConfig,
    num_channels: usize,
    num_bins: usize,
    num_frames: usize,
    data: Vec<C64>,
}

impl SpectralFrameTensor {
    pub fn zeros(config: StftConfig, num_channels: usize, num_frames: usize) -> Self {
        let num_bins = config.num_bins();
        Self {
            config,
            num_channels,
            num_bins,
            num_frames,
            data: vec![C64::new(0.0, 0.0); num_channels * num_bins * num_frames],
        }
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    #[inline]
    fn offset(&self, bin: usize, frame: usize) -> usize {
        (frame * self.num_bins + bin) * self.num_channels
    }

    pub fn get(&self, channel: usize, bin: usize, frame: usize) -> C64 {
        self.data[self.offset(bin, frame) + channel]
    }

    pub fn set(&mut self, channel: usize, bin: usize, frame: usize, value: C64) {
        let o = self.offset(bin, frame);
        self.data[o + channel] = value;
    }

    /// All channels at one time-frequency point.
    pub fn vector(&self, bin: usize, frame: usize) -> &[C64] {
        let o = self.offset(bin, frame);
        &self.data[o..o + self.num_channels]
    }

    pub fn vector_mut(&mut self, bin: usize, frame: usize) -> &mut [C64] {
        let o = self.offset(bin, frame);
        &mut self.data[o..o + self.num_channels]
    }

    /// All bins and channels of one frame, bin-major.
    pub fn frame(&self, frame: usize) -> &[C64] {
        let o = self.offset(0, frame);
        &self.data[o..o + self.num_bins * self.num_channels]
    }

    pub fn frame_mut(&mut self, frame: usize) -> &mut [C64] {
        let o = self.offset(0, frame);
        let n = self.num_bins * self.num_channels;
        &mut self.data[o..o + n]
    }

    pub fn channel(&self, channel: usize) -> SpectralFrameTensor {
        self.select_channels(&[channel])
    }

    pub fn select_channels(&self, channels: &[usize]) -> SpectralFrameTensor {
        let mut out = SpectralFrameTensor::zeros(self.config, channels.len(), self.num_frames);
        for l in 0..self.num_frames {
            for k in 0..self.num_bins {
                let src = self.vector(k, l);
                let dst = out.vector_mut(k, l);
                for (d, &c) in dst.iter_mut().zip(channels) {
                    *d = src[c];
                }
            }
        }
        out
    }

    fn check_same_shape(&self, other: &SpectralFrameTensor) -> Result<()> {
        if self.num_channels != other.num_channels
            || self.num_bins != other.num_bins
            || self.num_frames != other.num_frames
        {
            return Err(Error::Dimension(format!(
                "tensor shapes differ: ({}, {}, {}) vs ({}, {}, {})",
                self.num_channels,
                self.num_bins,
                self.num_frames,
                other.num_channels,
                other.num_bins,
                other.num_frames
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &SpectralFrameTensor) -> Result<SpectralFrameTensor> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|z| *z *= s);
    }

    /// Energy of each frame summed over channels and one-sided bins.
    pub fn frame_energies(&self) -> Vec<f64> {
        (0..self.num_frames)
            .map(|l| self.frame(l).iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

/// Forward STFT of equal-length channels.
pub fn analyze<S: AsRef<[f64]>>(signal: &[S], cfg: &StftConfig) -> Result<SpectralFrameTensor> {
    cfg.validate()?;
    if signal.is_empty() {
        return Err(Error::Empty("signal has no channels"));
    }
    let len = signal[0].as_ref().len();
    for (c, ch) in signal.iter().enumerate() {
        if ch.as_ref().len() != len {
            return Err(Error::ChannelLengthMismatch {
                channel: c,
                len: ch.as_ref().len(),
                expected: len,
            });
        }
    }
    if len < cfg.frame_len {
        return Err(Error::SignalTooShort {
            len,
            min: cfg.frame_len,
        });
    }

    let n = cfg.frame_len;
    let num_frames = cfg.num_frames(len);
    let window = cfg.window();
    let fft = plans(n).forward;
    let mut out = SpectralFrameTensor::zeros(*cfg, signal.len(), num_frames);
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for (c, ch) in signal.iter().enumerate() {
        let x = ch.as_ref();
        for l in 0..num_frames {
            let start = l * cfg.hop;
            for (t, b) in buf.iter_mut().enumerate() {
                *b = C64::new(x[start + t] * window[t], 0.0);
            }
            fft.process(&mut buf);
            for k in 0..out.num_bins {
                out.set(c, k, l, buf[k]);
            }
        }
    }
    Ok(out)
}

/// Inverse STFT by weighted overlap-add with the analysis window.
///
/// The output has `(num_frames - 1) * hop + frame_len` samples per channel and is
/// normalized by the constant overlap gain; edges that are not fully overlapped
/// keep their partial window weighting.
pub fn synthesize(tensor: &SpectralFrameTensor) -> Result<Vec<Vec<f64>>> {
    if tensor.num_frames == 0 || tensor.num_channels == 0 {
        return Err(Error::Empty("tensor has no frames"));
    }
    let cfg = tensor.config;
    let gain = cfg.overlap_gain()?;
    let n = cfg.frame_len;
    let window = cfg.window();
    let ifft = plans(n).inverse;
    let len = (tensor.num_frames - 1) * cfg.hop + n;
    let scale = 1.0 / (n as f64 * gain);
    let mut out = vec![vec![0.0; len]; tensor.num_channels];
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for (c, y) in out.iter_mut().enumerate() {
        for l in 0..tensor.num_frames {
            buf[0] = C64::new(tensor.get(c, 0, l).re, 0.0);
            for k in 1..n / 2 {
                let z = tensor.get(c, k, l);
                buf[k] = z;
                buf[n - k] = z.conj();
            }
            buf[n / 2] = C64::new(tensor.get(c, n / 2, l).re, 0.0);
            ifft.process(&mut buf);
            let start = l * cfg.hop;
            for t in 0..n {
                y[start + t] += buf[t].re * window[t] * scale;
            }
        }
    }
    Ok(out)
}
