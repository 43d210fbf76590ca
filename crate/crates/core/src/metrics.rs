//! Intelligibility-weighted SNR improvement, interaural cue errors and
//! coherence measurements.

use std::f64::consts::PI;
use std::path::Path;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::beamformer::BeamformerFilters;
use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::stft::{self, StftConfig};

const SII_TABLE: &str = include_str!("../data/sii_third_octave.txt");

/// Lower edge of the ILD averaging band in Hz.
pub const ILD_BAND_LOW_HZ: f64 = 500.0;
/// Upper edge of the ILD averaging band in Hz.
pub const ILD_BAND_HIGH_HZ: f64 = 8000.0;
/// Lower edge of the ITD averaging band in Hz.
pub const ITD_BAND_LOW_HZ: f64 = 200.0;
/// Upper edge of the ITD averaging band in Hz.
pub const ITD_BAND_HIGH_HZ: f64 = 1500.0;
/// Minimum number of frames for an MSC estimate.
pub const MSC_MIN_FRAMES: usize = 100;

/// Relative band power treated as zero.
pub const ZERO_BAND_POWER: f64 = 1e-15;

const EXCLUSION_TOLERANCE: f64 = 1e-12;

/// One-third-octave band centers with importance weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BandWeights {
    centers: Vec<f64>,
    weights: Vec<f64>,
}

impl BandWeights {
    pub fn new(centers: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("band table is empty".into()));
        }
        if centers.len() != weights.len() {
            return Err(Error::Config(
                "band centers and weights differ in length".into(),
            ));
        }
        if centers.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config("band centers must be positive".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("band weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("band weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { centers, weights })
    }

    /// Speech-intelligibility band importance, 160 Hz to 8 kHz.
    pub fn sii() -> Self {
        Self::parse(SII_TABLE).expect("bundled band table is valid")
    }

    /// Equal weights on the same band centers as [`BandWeights::sii`].
    pub fn uniform() -> Self {
        let centers = Self::sii().centers;
        let weights = vec![1.0; centers.len()];
        Self::new(centers, weights).expect("uniform weights are valid")
    }

    /// Parses rows of `center_hz weight`; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut centers = Vec::new();
        let mut weights = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed = match fields.as_slice() {
                [c, w] => c.parse::<f64>().ok().zip(w.parse::<f64>().ok()),
                _ => None,
            };
            let (c, w) = parsed.ok_or_else(|| {
                Error::Config(format!(
                    "band table line {}: expected `center_hz weight`",
                    n + 1
                ))
            })?;
            centers.push(c);
            weights.push(w);
        }
        Self::new(centers, weights)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Lower and upper edge of a one-third-octave band.
pub fn band_edges(center: f64) -> (f64, f64) {
    let f = 2f64.powf(1.0 / 6.0);
    (center / f, center * f)
}

/// Power per band from a full-length FFT; a bin at `f` belongs to the band
/// with `low <= f < high`. Bands below [`ZERO_BAND_POWER`] of the total
/// spectral power are reported as zero.
pub fn band_powers(signal: &[f64], sample_rate: f64, centers: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return vec![0.0; centers.len()];
    }
    let mut buf: Vec<C64> = signal.iter().map(|&v| C64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let total: f64 = buf[..n / 2 + 1].iter().map(|z| z.norm_sqr()).sum();
    let floor = ZERO_BAND_POWER * total;
    let mut out = vec![0.0; centers.len()];
    for (b, &c) in centers.iter().enumerate() {
        let (lo, hi) = band_edges(c);
        let k_lo = (lo * n as f64 / sample_rate).ceil() as usize;
        let k_hi = ((hi * n as f64 / sample_rate).ceil() as usize).min(n / 2 + 1);
        let p: f64 = buf[k_lo.min(k_hi)..k_hi].iter().map(|z| z.norm_sqr()).sum();
        out[b] = if p > floor { p } else { 0.0 };
    }
    out
}

/// SNRs of one band before and after processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSnr {
    pub center_hz: f64,
    pub weight: f64,
    pub input_snr_db: f64,
    pub output_snr_db: f64,
}

/// Weighted SNR improvement with the bands that entered it.
#[derive(Debug, Clone, PartialEq)]
pub struct IsnrResult {
    pub delta_db: f64,
    pub bands: Vec<BandSnr>,
    pub skipped_centers: Vec<f64>,
}

/// `sum_i I_i (SNR_i^out - SNR_i^in)` over one-third-octave bands. Bands with
/// zero speech or noise power on either side are skipped and the remaining
/// weights renormalized.
pub fn isnr_improvement(
    x_in: &[f64],
    n_in: &[f64],
    x_out: &[f64],
    n_out: &[f64],
    sample_rate: f64,
    weights: &BandWeights,
) -> Result<IsnrResult> {
    let len = x_in.len();
    for (i, s) in [n_in, x_out, n_out].iter().enumerate() {
        if s.len() != len {
            return Err(Error::ChannelLengthMismatch {
                channel: i + 1,
                len: s.len(),
                expected: len,
            });
        }
    }
    if len == 0 {
        return Err(Error::Empty("signal"));
    }
    let centers = weights.centers();
    let px_in = band_powers(x_in, sample_rate, centers);
    let pn_in = band_powers(n_in, sample_rate, centers);
    let px_out = band_powers(x_out, sample_rate, centers);
    let pn_out = band_powers(n_out, sample_rate, centers);

    let mut bands = Vec::new();
    let mut skipped = Vec::new();
    for b in 0..centers.len() {
        let powers = [px_in[b], pn_in[b], px_out[b], pn_out[b]];
        if powers.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            skipped.push(centers[b]);
            continue;
        }
        bands.push(BandSnr {
            center_hz: centers[b],
            weight: weights.weights()[b],
            input_snr_db: 10.0 * (px_in[b] / pn_in[b]).log10(),
            output_snr_db: 10.0 * (px_out[b] / pn_out[b]).log10(),
        });
    }
    let total: f64 = bands.iter().map(|b| b.weight).sum();
    if bands.is_empty() || total <= 0.0 {
        return Err(Error::Empty("bands with nonzero speech and noise power"));
    }
    for b in &mut bands {
        b.weight /= total;
    }
    let delta_db = bands
        .iter()
        .map(|b| b.weight * (b.output_snr_db - b.input_snr_db))
        .sum();
    Ok(IsnrResult {
        delta_db,
        bands,
        skipped_centers: skipped,
    })
}

/// Interaural errors of one bin; `None` outside the respective band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinCue {
    pub bin: usize,
    pub frequency_hz: f64,
    pub ild_error_db: Option<f64>,
    pub itd_error_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CueErrors {
    pub ild_error_db: f64,
    pub itd_error_us: f64,
    pub bins: Vec<BinCue>,
    pub excluded_bins: Vec<usize>,
}

/// Interaural transfer `rho = left / right`, `None` when the right side vanishes.
fn interaural(left: C64, right: C64, scale: f64) -> Option<C64> {
    if right.norm() <= EXCLUSION_TOLERANCE * scale || left.norm() <= EXCLUSION_TOLERANCE * scale {
        None
    } else {
        Some(left / right)
    }
}

/// ILD and ITD errors of the direct-path component between the reference
/// microphones and the filter outputs. `atf[k]` holds at least the head
/// channels in filter order; the reference indices are `0` and `mics_per_device`.
pub fn binaural_cue_errors(
    filters: &BeamformerFilters,
    atf: &[Vec<C64>],
    mics_per_device: usize,
    cfg: &StftConfig,
) -> Result<CueErrors> {
    if filters.num_bins() != atf.len() || atf.len() != cfg.num_bins() {
        return Err(Error::Dimension(format!(
            "{} filter bins, {} ATF bins, {} STFT bins",
            filters.num_bins(),
            atf.len(),
            cfg.num_bins()
        )));
    }
    let n = 2 * mics_per_device;
    let mut bins = Vec::new();
    let mut excluded = Vec::new();
    let (mut ild_sum, mut ild_count) = (0.0, 0usize);
    let (mut itd_sum, mut itd_count) = (0.0, 0usize);
    for (k, (f, a)) in filters.bins.iter().zip(atf).enumerate() {
        let freq = cfg.bin_frequency(k);
        let in_ild = (ILD_BAND_LOW_HZ..=ILD_BAND_HIGH_HZ).contains(&freq);
        let in_itd = (ITD_BAND_LOW_HZ..=ITD_BAND_HIGH_HZ).contains(&freq);
        if !(in_ild || in_itd) {
            continue;
        }
        if a.len() < n || f.left.len() != n || f.right.len() != n {
            return Err(Error::Dimension(format!(
                "bin {k}: filters or ATF do not cover {n} head channels"
            )));
        }
        let a = &a[..n];
        let a_norm = linalg::norm(a);
        let rho_in = interaural(a[0], a[mics_per_device], a_norm);
        let rho_out = interaural(
            linalg::dot_h(&f.left, a),
            linalg::dot_h(&f.right, a),
            a_norm * linalg::norm(&f.left).max(linalg::norm(&f.right)),
        );
        let (rho_in, rho_out) = match (rho_in, rho_out) {
            (Some(i), Some(o)) => (i, o),
            _ => {
                excluded.push(k);
                continue;
            }
        };
        let ild =
            in_ild.then(|| (20.0 * rho_out.norm().log10() - 20.0 * rho_in.norm().log10()).abs());
        let itd = in_itd.then(|| (rho_out / rho_in).arg().abs() / (2.0 * PI * freq) * 1e6);
        if let Some(v) = ild {
            ild_sum += v;
            ild_count += 1;
        }
        if let Some(v) = itd {
            itd_sum += v;
            itd_count += 1;
        }
        bins.push(BinCue {
            bin: k,
            frequency_hz: freq,
            ild_error_db: ild,
            itd_error_us: itd,
        });
    }
    if ild_count == 0 || itd_count == 0 {
        return Err(Error::Empty("reliable bins in the cue bands"));
    }
    Ok(CueErrors {
        ild_error_db: ild_sum / ild_count as f64,
        itd_error_us: itd_sum / itd_count as f64,
        bins,
        excluded_bins: excluded,
    })
}

/// Long-term MSC `|S12|^2 / (S11 S22)` per bin from frame-averaged spectra.
pub fn measure_msc(x1: &[f64], x2: &[f64], cfg: &StftConfig) -> Result<Vec<f64>> {
    if x1.len() != x2.len() {
        return Err(Error::ChannelLengthMismatch {
            channel: 1,
            len: x2.len(),
            expected: x1.len(),
        });
    }
    cfg.validate()?;
    let frames = if x1.len() >= cfg.frame_len {
        cfg.num_frames(x1.len())
    } else {
        0
    };
    if frames < MSC_MIN_FRAMES {
        return Err(Error::TooFewFrames {
            got: frames,
            need: MSC_MIN_FRAMES,
        });
    }
    let t = stft::analyze(&[x1, x2], cfg)?;
    Ok((0..t.num_bins())
        .map(|k| {
            let (mut s11, mut s22, mut s12) = (0.0, 0.0, C64::new(0.0, 0.0));
            for l in 0..t.num_frames() {
                let v = t.vector(k, l);
                s11 += v[0].norm_sqr();
                s22 += v[1].norm_sqr();
                s12 += v[0] * v[1].conj();
            }
            let denom = s11 * s22;
            if denom > 0.0 {
                (s12.norm_sqr() / denom).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect())
}

/// Per-band row of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandDetail {
    pub center_hz: f64,
    pub weight: f64,
    pub input_snr_db: f64,
    pub output_snr_db: f64,
    pub ild_error_db: Option<f64>,
    pub itd_error_us: Option<f64>,
}

/// Coherence of one microphone pair against frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MscCurve {
    pub pair: [usize; 2],
    pub frequencies_hz: Vec<f64>,
    pub values: Vec<f64>,
}

/// Metrics of one processed condition. Cue errors are absent when no
/// ground-truth transfer functions are available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub delta_isnr_db: f64,
    pub ild_error_db: Option<f64>,
    pub itd_error_us: Option<f64>,
    pub per_band_detail: Vec<BandDetail>,
    pub msc_curves: Vec<MscCurve>,
}

impl MetricReport {
    /// Joins SNR bands with bin-level cue errors averaged inside each band.
    pub fn assemble(
        isnr: &IsnrResult,
        cues: Option<&[BinCue]>,
        ild: Option<f64>,
        itd: Option<f64>,
        msc_curves: Vec<MscCurve>,
    ) -> Self {
        let per_band_detail = isnr
            .bands
            .iter()
            .map(|b| {
                let (lo, hi) = band_edges(b.center_hz);
                let mean = |pick: fn(&BinCue) -> Option<f64>| {
                    let vals: Vec<f64> = cues?
                        .iter()
                        .filter(|c| c.frequency_hz >= lo && c.frequency_hz < hi)
                        .filter_map(pick)
                        .collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                };
                BandDetail {
                    center_hz: b.center_hz,
                    weight: b.weight,
                    input_snr_db: b.input_snr_db,
                    output_snr_db: b.output_snr_db,
                    ild_error_db: mean(|c| c.ild_error_db),
                    itd_error_us: mean(|c| c.itd_error_us),
                }
            })
            .collect();
        Self {
            delta_isnr_db: isnr.delta_db,
            ild_error_db: ild,
            itd_error_us: itd,
            per_band_detail,
            msc_curves,
        }
    }
}
