//! Synthetic acoustic scenes: a binaural pair of hearing devices, one external
//! microphone, a single desired source and a spherically isotropic noise field.
//!
//! Scenes are rendered in the STFT domain. The desired component of channel `i`
//! is `a_i(k) S(k, l)` with the free-field direct-path transfer function
//! `a_i(k) = exp(-j w_k r_i / c) / r_i`, which keeps the per-bin ATFs exact.
//! Echo taps of the reverberation proxy are snapped to whole hops so each echo is
//! an exact frame shift `S(k, l - q)`. Time-domain signals are the synthesis of
//! those tensors.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::stft::{self, SpectralFrameTensor, StftConfig};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Eigenvalue floor applied to coherence matrices before factorization.
pub const COHERENCE_EIGEN_FLOOR: f64 = 1e-10;

/// Minimum source length accepted by [`render_scene`], in seconds.
pub const MIN_SOURCE_SECONDS: f64 = 2.0;

/// Time resolution at which reflection arrivals are drawn, in Hz.
pub const REFLECTION_GRID_HZ: f64 = 48_000.0;
/// Upper limit on the simulated reflection density, per second.
pub const MAX_REFLECTION_DENSITY: f64 = 4000.0;

/// Sabine critical distance `0.057 sqrt(V / T60)` in meters.
pub fn critical_distance(volume_m3: f64, t60: f64) -> f64 {
    0.057 * (volume_m3 / t60).sqrt()
}

/// Pole of the one-pole lowpass shaping the speech-like excitation.
pub const SPEECH_LOWPASS_POLE: f64 = 0.7;

pub type Position = [f64; 3];

/// Unnormalized sinc, `sin(x) / x` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Magnitude-squared coherence of a spherically isotropic field between two
/// points `distance` meters apart.
pub fn diffuse_msc(distance: f64, freq: f64, c: f64) -> f64 {
    debug_assert!(distance >= 0.0 && freq >= 0.0 && c > 0.0);
    let omega = 2.0 * std::f64::consts::PI * freq;
    sinc(omega * distance / c).powi(2)
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Microphone layout: `M` left-device mics, `M` right-device mics, then the
/// external microphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<Position>,
    pub speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<Position>, speed_of_sound: f64) -> Result<Self> {
        let g = Self {
            mic_positions,
            speed_of_sound,
        };
        g.validate()?;
        Ok(g)
    }

    /// Two devices `head_width` apart on the +-y axis (left is +y), each with
    /// `mics_per_device` microphones spaced `mic_spacing` along x, plus an
    /// external microphone.
    pub fn binaural(
        mics_per_device: usize,
        head_width: f64,
        mic_spacing: f64,
        external: Position,
    ) -> Result<Self> {
        let mut mics = Vec::with_capacity(2 * mics_per_device + 1);
        for side in [1.0, -1.0] {
            for m in 0..mics_per_device {
                mics.push([-(m as f64) * mic_spacing, side * head_width / 2.0, 0.0]);
            }
        }
        mics.push(external);
        Self::new(mics, DEFAULT_SPEED_OF_SOUND)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mic_positions.len();
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::Scene(format!(
                "geometry needs 2M+1 microphones with M >= 1, got {n}"
            )));
        }
        if self.mic_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Scene("microphone position is not finite".into()));
        }
        if !(self.speed_of_sound > 0.0) || !self.speed_of_sound.is_finite() {
            return Err(Error::Scene("speed of sound must be positive".into()));
        }
        Ok(())
    }

    pub fn mics_per_device(&self) -> usize {
        (self.mic_positions.len() - 1) / 2
    }

    pub fn num_head_mics(&self) -> usize {
        2 * self.mics_per_device()
    }

    pub fn left_reference(&self) -> usize {
        0
    }

    pub fn right_reference(&self) -> usize {
        self.mics_per_device()
    }

    pub fn external_index(&self) -> usize {
        self.num_head_mics()
    }

    pub fn head_positions(&self) -> &[Position] {
        &self.mic_positions[..self.num_head_mics()]
    }

    pub fn head_center(&self) -> Position {
        let head = self.head_positions();
        let mut c = [0.0; 3];
        for p in head {
            for d in 0..3 {
                c[d] += p[d] / head.len() as f64;
            }
        }
        c
    }
}

/// Pairwise diffuse-field coherence `sinc(w d_ij / c)` at `freq`.
pub fn build_coherence_matrix(positions: &[Position], freq: f64, c: f64) -> DMatrix<f64> {
    let n = positions.len();
    let omega = 2.0 * std::f64::consts::PI * freq;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            sinc(omega * distance(&positions[i], &positions[j]) / c)
        }
    })
}

/// Square-root factor `C` with `C C^T = Gamma`, eigenvalues floored first.
pub fn coherence_factor(gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(gamma.clone());
    let mut v = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(COHERENCE_EIGEN_FLOOR).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    v
}

/// RNG for one frequency bin. Each bin owns an independent ChaCha stream so the
/// output does not depend on the order in which bins are generated.
fn bin_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Diffuse noise directly in the STFT domain, scaled so that its synthesis has
/// unit variance per channel.
pub fn diffuse_noise_tensor(
    positions: &[Position],
    c: f64,
    num_frames: usize,
    cfg: &StftConfig,
    seed: u64,
    stream_offset: u64,
) -> Result<SpectralFrameTensor> {
    let channels = positions.len();
    let sigma = (cfg.frame_len as f64 * cfg.overlap_gain()?).sqrt();
    let num_bins = cfg.num_bins();
    let mut out = SpectralFrameTensor::zeros(*cfg, channels, num_frames);
    let mut g = vec![C64::new(0.0, 0.0); channels];
    for k in 0..num_bins {
        let factor = coherence_factor(&build_coherence_matrix(positions, cfg.bin_frequency(k), c));
        let real_only = k == 0 || k == num_bins - 1;
        let mut rng = bin_rng(seed, stream_offset + k as u64);
        for l in 0..num_frames {
            for z in g.iter_mut() {
                *z = if real_only {
                    C64::new(sigma * rng.sample::<f64, _>(StandardNormal), 0.0)
                } else {
                    let s = sigma * std::f64::consts::FRAC_1_SQRT_2;
                    C64::new(
                        s * rng.sample::<f64, _>(StandardNormal),
                        s * rng.sample::<f64, _>(StandardNormal),
                    )
                };
            }
            let y = out.vector_mut(k, l);
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = (0..channels).map(|j| g[j] * factor[(i, j)]).sum();
            }
        }
    }
    Ok(out)
}

/// Time-domain diffuse noise with sinc-law coherence between `positions`.
pub fn generate_diffuse_noise(
    positions: &[Position],
    c: f64,
    num_samples: usize,
    cfg: &StftConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if positions.is_empty() {
        return Err(Error::Empty("no microphone positions"));
    }
    let min = 10 * cfg.frame_len;
    if num_samples < min {
        return Err(Error::SignalTooShort {
            len: num_samples,
            min,
        });
    }
    // one spare frame on each side keeps the kept span fully overlapped
    let frames = num_samples.div_ceil(cfg.hop) + 2;
    let tensor = diffuse_noise_tensor(positions, c, frames, cfg, seed, 0)?;
    let full = stft::synthesize(&tensor)?;
    let start = cfg.frame_len;
    Ok(full
        .into_iter()
        .map(|ch| ch[start..start + num_samples].to_vec())
        .collect())
}

/// One echo of the reverberation proxy; `gain` is relative to the channel's
/// direct path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoTap {
    pub delay_s: f64,
    pub gain: f64,
}

/// Sparse decaying echoes per ear plus the external microphone.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReverbProxy {
    pub left: Vec<EchoTap>,
    pub right: Vec<EchoTap>,
    pub external: Vec<EchoTap>,
}

impl ReverbProxy {
    pub fn anechoic() -> Self {
        Self::default()
    }

    /// Statistical room reverberation for the three tap groups.
    ///
    /// Reflections arrive after the direct path with density
    /// `4 pi c^3 t^2 / V` (capped at [`MAX_REFLECTION_DENSITY`]), each with
    /// spherical-spreading amplitude `r / (c t)` relative to the direct path,
    /// decaying by 60 dB over `t60` and with a random sign. Where the density
    /// is capped the amplitudes carry the missing energy. The resulting
    /// direct-to-reverberant ratio follows the diffuse-field value
    /// `(r_c / r)^2` with critical distance `r_c` of a room of `volume_m3`.
    /// `distances` are the source distances of the left ear, right ear and
    /// external microphone.
    pub fn preset(t60: f64, volume_m3: f64, distances: [f64; 3], c: f64, seed: u64) -> Self {
        let draw = |stream: u64, r: f64| {
            let mut rng = bin_rng(seed, stream);
            let dt = 1.0 / REFLECTION_GRID_HZ;
            let t0 = r / c;
            let mut taps = Vec::new();
            let mut t = t0;
            while t < t0 + t60 {
                let density = 4.0 * std::f64::consts::PI * c.powi(3) * t * t / volume_m3;
                let used = density.min(MAX_REFLECTION_DENSITY);
                if rng.random::<f64>() < used * dt {
                    let arrival = t + rng.random::<f64>() * dt;
                    let spread = r / (c * arrival);
                    let energy_boost = (density / used).sqrt();
                    let decay = 10f64.powf(-3.0 * (arrival - t0) / t60);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    taps.push(EchoTap {
                        delay_s: arrival - t0,
                        gain: sign * spread * energy_boost * decay,
                    });
                }
                t += dt;
            }
            taps
        };
        Self {
            left: draw(1, distances[0]),
            right: draw(2, distances[1]),
            external: draw(3, distances[2]),
        }
    }

    /// Sum of squared tap gains per group: reverberant over direct energy.
    pub fn energy_ratios(&self) -> [f64; 3] {
        let e = |taps: &[EchoTap]| taps.iter().map(|t| t.gain * t.gain).sum();
        [e(&self.left), e(&self.right), e(&self.external)]
    }

    pub fn validate(&self) -> Result<()> {
        for tap in self.left.iter().chain(&self.right).chain(&self.external) {
            if !tap.gain.is_finite() || tap.gain.abs() >= 1.0 {
                return Err(Error::Scene(format!(
                    "echo gain {} must have magnitude below 1",
                    tap.gain
                )));
            }
            if !(tap.delay_s > 0.0) || !tap.delay_s.is_finite() {
                return Err(Error::Scene(format!(
                    "echo delay {} must be positive",
                    tap.delay_s
                )));
            }
        }
        Ok(())
    }
}

/// Long-term spectrum of the diffuse noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSpectrum {
    White,
    /// Same spectral tilt as [`speech_like_source`], like multi-talker babble.
    #[default]
    SpeechShaped,
}

/// Real per-bin amplitude gains applied equally to every noise channel,
/// normalized to unit mean power over the full spectrum.
pub fn noise_spectrum_gains(spectrum: NoiseSpectrum, cfg: &StftConfig) -> Vec<f64> {
    let bins = cfg.num_bins();
    match spectrum {
        NoiseSpectrum::White => vec![1.0; bins],
        NoiseSpectrum::SpeechShaped => {
            let n = cfg.frame_len as f64;
            let raw: Vec<f64> = (0..bins)
                .map(|k| {
                    let w = std::f64::consts::TAU * k as f64 / n;
                    1.0 / (C64::new(1.0, 0.0) - C64::from_polar(SPEECH_LOWPASS_POLE, -w)).norm()
                })
                .collect();
            // interior bins stand for a conjugate pair
            let weight = |k: usize| if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
            let power: f64 = raw
                .iter()
                .enumerate()
                .map(|(k, g)| weight(k) * g * g)
                .sum::<f64>()
                / n;
            raw.iter().map(|g| g / power.sqrt()).collect()
        }
    }
}

/// Everything needed to render one synthetic experiment.
#[derive(Debug, Clone)]
pub struct SceneDescription {
    pub geometry: ArrayGeometry,
    pub source_position: Position,
    pub source_signal: Vec<f64>,
    pub reverb: ReverbProxy,
    /// Broadband SNR at the right reference microphone; `+inf` disables noise.
    pub snr_db: f64,
    pub external_snr_offset_db: f64,
    pub noise_seed: u64,
    pub noise_spectrum: NoiseSpectrum,
    /// Fraction of left-reference noise power leaked into the external mic noise.
    pub residual_coherence: f64,
}

impl SceneDescription {
    pub fn validate(&self, cfg: &StftConfig) -> Result<()> {
        self.geometry.validate()?;
        self.reverb.validate()?;
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Scene(format!("invalid SNR {}", self.snr_db)));
        }
        if !self.external_snr_offset_db.is_finite() {
            return Err(Error::Scene("external SNR offset must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.residual_coherence) {
            return Err(Error::Scene(format!(
                "residual coherence {} outside [0, 1]",
                self.residual_coherence
            )));
        }
        if self.source_position.iter().any(|v| !v.is_finite()) {
            return Err(Error::Scene("source position is not finite".into()));
        }
        for (i, p) in self.geometry.mic_positions.iter().enumerate() {
            if distance(p, &self.source_position) < 1e-3 {
                return Err(Error::Scene(format!(
                    "source coincides with microphone {i}"
                )));
            }
        }
        let min = (MIN_SOURCE_SECONDS * cfg.sample_rate).ceil() as usize;
        if self.source_signal.len() < min {
            return Err(Error::Scene(format!(
                "source has {} samples, need at least {min} ({MIN_SOURCE_SECONDS} s)",
                self.source_signal.len()
            )));
        }
        Ok(())
    }
}

/// Free-field direct-path ATFs `exp(-j w r / c) / r` for every microphone and bin.
pub fn direct_path_atf(
    geometry: &ArrayGeometry,
    source: &Position,
    cfg: &StftConfig,
) -> Vec<Vec<C64>> {
    let c = geometry.speed_of_sound;
    (0..cfg.num_bins())
        .map(|k| {
            let omega = 2.0 * std::f64::consts::PI * cfg.bin_frequency(k);
            geometry
                .mic_positions
                .iter()
                .map(|p| {
                    let r = distance(p, source);
                    C64::from_polar(1.0 / r, -omega * r / c)
                })
                .collect()
        })
        .collect()
}

/// Known quantities of a simulated scene.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Direct-path ATF per bin over all `2M + 1` microphones.
    pub atf: Vec<Vec<C64>>,
    /// Desired speech component per channel (time domain, external last).
    pub speech: Vec<Vec<f64>>,
    /// Noise component per channel (time domain, external last).
    pub noise: Vec<Vec<f64>>,
    pub noise_gain: f64,
    pub external_noise_gain: f64,
}

impl GroundTruth {
    /// ATF entries of the head-mounted microphones only.
    pub fn head_atf(&self, bin: usize) -> &[C64] {
        let n = self.atf[bin].len() - 1;
        &self.atf[bin][..n]
    }
}

/// A rendered scene in both representations.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub config: StftConfig,
    pub mics_per_device: usize,
    /// Desired component, all `2M + 1` channels.
    pub speech: SpectralFrameTensor,
    /// Noise component, all `2M + 1` channels.
    pub noise: SpectralFrameTensor,
    /// STFT of the clean source signal.
    pub source: SpectralFrameTensor,
    /// Noisy microphone signals, time domain, external last.
    pub mixture: Vec<Vec<f64>>,
    pub truth: GroundTruth,
}

impl RenderedScene {
    pub fn num_head_mics(&self) -> usize {
        2 * self.mics_per_device
    }

    pub fn external_index(&self) -> usize {
        self.num_head_mics()
    }

    /// Noisy tensor `speech + noise` over all channels.
    pub fn noisy(&self) -> SpectralFrameTensor {
        self.speech
            .add(&self.noise)
            .expect("components share one frame grid")
    }
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn tap_group(geometry: &ArrayGeometry, channel: usize) -> usize {
    let m = geometry.mics_per_device();
    if channel < m {
        0
    } else if channel < 2 * m {
        1
    } else {
        2
    }
}

/// Per-lag transfer functions of a tap group: each echo lands on the nearest
/// frame lag and keeps the remaining sub-hop delay as a phase ramp.
fn echo_kernels(taps: &[EchoTap], cfg: &StftConfig) -> Vec<Vec<C64>> {
    let hop_s = cfg.hop as f64 / cfg.sample_rate;
    let bins = cfg.num_bins();
    let mut kernels: Vec<Vec<C64>> = Vec::new();
    for t in taps {
        let q = (t.delay_s / hop_s).round() as usize;
        let residual = t.delay_s - q as f64 * hop_s;
        if kernels.len() <= q {
            kernels.resize(q + 1, vec![C64::new(0.0, 0.0); bins]);
        }
        for (k, g) in kernels[q].iter_mut().enumerate() {
            let omega = 2.0 * std::f64::consts::PI * cfg.bin_frequency(k);
            *g += C64::from_polar(t.gain, -omega * residual);
        }
    }
    kernels
}

/// Direct path plus echoes of a single-channel tensor.
fn apply_echoes(source: &SpectralFrameTensor, taps: &[EchoTap]) -> SpectralFrameTensor {
    let cfg = source.config();
    let kernels = echo_kernels(taps, cfg);
    let mut out = source.clone();
    for l in 0..source.num_frames() {
        for (q, kernel) in kernels.iter().enumerate().take(l + 1) {
            for (k, g) in kernel.iter().enumerate() {
                if *g != C64::new(0.0, 0.0) {
                    let v = out.get(0, k, l) + source.get(0, k, l - q) * g;
                    out.set(0, k, l, v);
                }
            }
        }
    }
    out
}

/// Renders the desired and noise components of a scene and mixes them at the
/// requested SNR.
pub fn render_scene(desc: &SceneDescription, cfg: &StftConfig) -> Result<RenderedScene> {
    cfg.validate()?;
    desc.validate(cfg)?;
    let geometry = &desc.geometry;
    let channels = geometry.mic_positions.len();
    let head = geometry.num_head_mics();
    let ext = geometry.external_index();
    let right_ref = geometry.right_reference();

    let source = stft::analyze(&[&desc.source_signal[..]], cfg)?;
    let frames = source.num_frames();
    let bins = cfg.num_bins();
    let atf = direct_path_atf(geometry, &desc.source_position, cfg);

    let reverberant: Vec<SpectralFrameTensor> =
        [&desc.reverb.left, &desc.reverb.right, &desc.reverb.external]
            .into_iter()
            .map(|taps| apply_echoes(&source, taps))
            .collect();
    let mut speech = SpectralFrameTensor::zeros(*cfg, channels, frames);
    for ch in 0..channels {
        let group = &reverberant[tap_group(geometry, ch)];
        for l in 0..frames {
            for k in 0..bins {
                speech.set(ch, k, l, atf[k][ch] * group.get(0, k, l));
            }
        }
    }

    let c = geometry.speed_of_sound;
    let head_noise = diffuse_noise_tensor(
        geometry.head_positions(),
        c,
        frames,
        cfg,
        desc.noise_seed,
        0,
    )?;
    let ext_noise = diffuse_noise_tensor(
        &geometry.mic_positions[ext..=ext],
        c,
        frames,
        cfg,
        desc.noise_seed,
        1 << 32,
    )?;
    let mut noise = SpectralFrameTensor::zeros(*cfg, channels, frames);
    let leak = desc.residual_coherence;
    let shape = noise_spectrum_gains(desc.noise_spectrum, cfg);
    for l in 0..frames {
        for k in 0..bins {
            let h = head_noise.vector(k, l);
            let v = noise.vector_mut(k, l);
            v[..head].copy_from_slice(h);
            v[ext] = ext_noise.get(0, k, l) * (1.0 - leak).sqrt() + h[0] * leak.sqrt();
            v.iter_mut().for_each(|z| *z *= shape[k]);
        }
    }

    let speech_time = stft::synthesize(&speech)?;
    let mut noise_time = stft::synthesize(&noise)?;

    let gain_for = |speech_power: f64, noise_power: f64, snr_db: f64| {
        if snr_db == f64::INFINITY || noise_power == 0.0 {
            0.0
        } else {
            (speech_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
        }
    };
    let noise_gain = gain_for(
        mean_power(&speech_time[right_ref]),
        mean_power(&noise_time[right_ref]),
        desc.snr_db,
    );
    let external_noise_gain = gain_for(
        mean_power(&speech_time[ext]),
        mean_power(&noise_time[ext]),
        desc.snr_db + desc.external_snr_offset_db,
    );

    for l in 0..frames {
        for k in 0..bins {
            let v = noise.vector_mut(k, l);
            for z in v[..head].iter_mut() {
                *z *= noise_gain;
            }
            v[ext] *= external_noise_gain;
        }
    }
    for (ch, x) in noise_time.iter_mut().enumerate() {
        let g = if ch == ext {
            external_noise_gain
        } else {
            noise_gain
        };
        x.iter_mut().for_each(|v| *v *= g);
    }

    let mixture = speech_time
        .iter()
        .zip(&noise_time)
        .map(|(x, n)| x.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();

    Ok(RenderedScene {
        config: *cfg,
        mics_per_device: geometry.mics_per_device(),
        speech,
        noise,
        source,
        mixture,
        truth: GroundTruth {
            atf,
            speech: speech_time,
            noise: noise_time,
            noise_gain,
            external_noise_gain,
        },
    })
}

/// Speech-like test source: lowpass Gaussian excitation gated into talk spurts
/// and pauses, with a syllable-rate amplitude modulation and leading silence.
pub fn speech_like_source(
    num_samples: usize,
    sample_rate: f64,
    leading_silence_s: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let fs = sample_rate;
    let lead = ((leading_silence_s * fs) as usize).min(num_samples);
    let ramp = (0.02 * fs) as usize;

    let mut envelope = vec![0.0; num_samples];
    let mut t = lead;
    while t < num_samples {
        let spurt = (rng.random_range(0.15..0.5) * fs) as usize;
        let pause = (rng.random_range(0.05..0.3) * fs) as usize;
        let rate = rng.random_range(3.0..6.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let level = rng.random_range(0.5..1.0);
        for i in 0..spurt.min(num_samples - t) {
            let edge = (i.min(spurt - i) as f64 / ramp as f64).min(1.0);
            let fade = 0.5 - 0.5 * (std::f64::consts::PI * edge).cos();
            let syllable = 0.6 + 0.4 * (std::f64::consts::TAU * rate * i as f64 / fs + phase).sin();
            envelope[t + i] = level * fade * syllable;
        }
        t += spurt + pause;
    }

    let mut state = 0.0;
    envelope
        .iter()
        .map(|e| {
            let excitation: f64 = rng.sample(StandardNormal);
            state = SPEECH_LOWPASS_POLE * state + excitation;
            e * state
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn noise_spectrum_gains_have_unit_power() {
        let cfg = StftConfig::default();
        assert!(noise_spectrum_gains(NoiseSpectrum::White, &cfg)
            .iter()
            .all(|g| *g == 1.0));
        let g = noise_spectrum_gains(NoiseSpectrum::SpeechShaped, &cfg);
        let n = cfg.frame_len as f64;
        let last = g.len() - 1;
        let power: f64 = g
            .iter()
            .enumerate()
            .map(|(k, v)| {
                if k == 0 || k == last {
                    v * v
                } else {
                    2.0 * v * v
                }
            })
            .sum::<f64>()
            / n;
        assert_close(power, 1.0, 1e-12);
        // lowpass tilt: (1 + p) / (1 - p) in amplitude between Nyquist and DC
        assert_close(g[0] / g[last], 1.7 / 0.3, 1e-12);
    }

    #[test]
    fn msc_edge_values() {
        assert_eq!(diffuse_msc(0.0, 1234.0, 343.0), 1.0);
        assert_close(diffuse_msc(1.0, 171.5, 343.0), 0.0, 1e-30);
        let x = 2.0 * std::f64::consts::PI * 1000.0 / 343.0;
        let direct = (x.sin() / x).powi(2);
        assert_close(diffuse_msc(1.0, 1000.0, 343.0), direct, 1e-15);
        assert!((x - 18.3184).abs() < 1e-3);
        assert!((direct - 7.7e-4).abs() < 0.5e-4, "{direct}");
    }

    #[test]
    fn coherence_matrix_shapes() {
        let one = build_coherence_matrix(&[[0.0; 3]], 500.0, 343.0);
        assert_eq!(one, DMatrix::from_element(1, 1, 1.0));

        // sinc zero at d = c / (2 f)
        let d = 343.0 / (2.0 * 1000.0);
        let two = build_coherence_matrix(&[[0.0; 3], [d, 0.0, 0.0]], 1000.0, 343.0);
        assert_close(two[(0, 1)], 0.0, 1e-15);
        assert_close(two[(1, 0)], 0.0, 1e-15);

        let line = [[0.0; 3], [0.1, 0.0, 0.0], [0.3, 0.0, 0.0]];
        let g = build_coherence_matrix(&line, 500.0, 343.0);
        for i in 0..3 {
            assert_eq!(g[(i, i)], 1.0);
            for j in 0..3 {
                assert_eq!(g[(i, j)], g[(j, i)]);
                if i != j {
                    let msc = diffuse_msc(distance(&line[i], &line[j]), 500.0, 343.0);
                    assert_close(g[(i, j)].powi(2), msc, 1e-15);
                }
            }
        }
    }

    #[test]
    fn factor_reproduces_coherence() {
        let pos = [
            [0.0; 3],
            [0.01, 0.0, 0.0],
            [0.0, 0.15, 0.0],
            [0.01, 0.15, 0.0],
        ];
        for f in [0.0, 250.0, 4000.0] {
            let g = build_coherence_matrix(&pos, f, 343.0);
            let c = coherence_factor(&g);
            let back = &c * c.transpose();
            // floor perturbs rank-deficient matrices by at most ~1e-10
            assert!((back - g).abs().max() < 1e-8);
        }
    }

    #[test]
    fn single_channel_noise_has_unit_variance() {
        let cfg = StftConfig::default();
        let x = generate_diffuse_noise(&[[0.0; 3]], 343.0, 160_000, &cfg, 9).unwrap();
        let v = mean_power(&x[0]);
        assert!((0.9..=1.1).contains(&v), "variance {v}");
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let cfg = StftConfig::default();
        let pos = [[0.0; 3], [0.2, 0.0, 0.0]];
        let a = generate_diffuse_noise(&pos, 343.0, 4000, &cfg, 1).unwrap();
        let b = generate_diffuse_noise(&pos, 343.0, 4000, &cfg, 1).unwrap();
        let c = generate_diffuse_noise(&pos, 343.0, 4000, &cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn short_noise_request_rejected() {
        let cfg = StftConfig::default();
        assert!(generate_diffuse_noise(&[[0.0; 3]], 343.0, 100, &cfg, 0).is_err());
    }

    #[test]
    fn geometry_validation() {
        assert!(ArrayGeometry::new(vec![[0.0; 3]; 2], 343.0).is_err());
        assert!(ArrayGeometry::new(vec![[0.0; 3]; 3], 343.0).is_ok());
        assert!(ArrayGeometry::new(vec![[0.0, f64::NAN, 0.0]; 3], 343.0).is_err());
        let g = ArrayGeometry::binaural(2, 0.15, 0.01, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.mics_per_device(), 2);
        assert_eq!(
            (g.left_reference(), g.right_reference(), g.external_index()),
            (0, 2, 4)
        );
    }

    #[test]
    fn reverb_energy_follows_critical_distance() {
        let volume = 7.0 * 6.0 * 2.7;
        for t60 in [0.25, 0.5, 0.75] {
            let rc = critical_distance(volume, t60);
            for r in [0.5, 2.0] {
                let mut ratio = 0.0;
                for seed in 0..8 {
                    ratio += ReverbProxy::preset(t60, volume, [r; 3], 343.0, seed).energy_ratios()
                        [0]
                        / 8.0;
                }
                let expected = (r / rc).powi(2);
                assert!(
                    (ratio / expected - 1.0).abs() < 0.2,
                    "t60 {t60} r {r}: {ratio} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn fractional_echo_delay_is_phase_ramp() {
        let cfg = StftConfig::default();
        let hop_s = cfg.hop as f64 / cfg.sample_rate;
        let taps = [
            EchoTap {
                delay_s: 2.25 * hop_s,
                gain: 0.5,
            },
            EchoTap {
                delay_s: 0.2 * hop_s,
                gain: -0.25,
            },
        ];
        let kernels = echo_kernels(&taps, &cfg);
        assert_eq!(kernels.len(), 3);
        for k in 0..cfg.num_bins() {
            let w = 2.0 * std::f64::consts::PI * cfg.bin_frequency(k);
            assert!((kernels[2][k] - C64::from_polar(0.5, 0.25 * hop_s * -w)).norm() < 1e-12);
            assert!((kernels[0][k] - C64::from_polar(-0.25, -0.2 * hop_s * w)).norm() < 1e-12);
            assert_eq!(kernels[1][k], C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn reverb_preset_decays_and_is_valid() {
        let volume = 7.0 * 6.0 * 2.7;
        let d = [2.0, 2.0, 0.5];
        let r = ReverbProxy::preset(0.75, volume, d, 343.0, 3);
        r.validate().unwrap();
        assert_ne!(r.left, r.right);
        assert!(r.left.iter().all(|t| t.delay_s <= 0.75 + 1e-12));
        let short = ReverbProxy::preset(0.25, volume, d, 343.0, 3);
        assert!(short.left.len() < r.left.len());
        assert_eq!(r, ReverbProxy::preset(0.75, volume, d, 343.0, 3));
        let bad = ReverbProxy {
            left: vec![EchoTap {
                delay_s: 0.02,
                gain: 1.0,
            }],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn speech_source_has_leading_silence() {
        let s = speech_like_source(32000, 16000.0, 0.5, 4);
        assert!(s[..8000].iter().all(|v| *v == 0.0));
        assert!(mean_power(&s[8000..]) > 0.0);
        assert_eq!(s, speech_like_source(32000, 16000.0, 0.5, 4));
    }
}
