//! Frame-by-frame processing of one condition: covariance tracking, RTF
//! estimation, BMVDR filtering of the noisy signals and of each component.

use crate::beamformer::{compute_bmvdr, filter_output, BeamformerFilters, BinFilters};
use crate::covariance::{oracle_vad, CovarianceState, CrossSpectrum, Smoothing, VadLabels};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::metrics::{binaural_cue_errors, BinCue};
use crate::rtf::{
    estimate_biased, estimate_cw_pair, estimate_sc, estimate_sc_from_source_cross, rtf_from_atf,
    Estimator, RtfVector, Side,
};
use crate::stft::SpectralFrameTensor;

/// Component-wise input over `2M + 1` channels, external microphone last.
#[derive(Debug, Clone)]
pub struct ComponentInput {
    pub mics_per_device: usize,
    pub speech: SpectralFrameTensor,
    pub noise: SpectralFrameTensor,
    /// Clean source, required by the oracle estimator.
    pub source: Option<SpectralFrameTensor>,
    /// Direct-path ATFs per bin, required by the true estimator and cue errors.
    pub atf: Option<Vec<Vec<C64>>>,
}

impl ComponentInput {
    pub fn num_head_mics(&self) -> usize {
        2 * self.mics_per_device
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_head_mics() + 1;
        if self.mics_per_device == 0 {
            return Err(Error::Dimension("no microphones per device".into()));
        }
        for (name, t) in [("speech", &self.speech), ("noise", &self.noise)] {
            if t.num_channels() != n {
                return Err(Error::Dimension(format!(
                    "{name} has {} channels, expected {n}",
                    t.num_channels()
                )));
            }
        }
        if self.speech.num_frames() != self.noise.num_frames()
            || self.speech.num_bins() != self.noise.num_bins()
        {
            return Err(Error::Dimension("speech and noise grids differ".into()));
        }
        if let Some(s) = &self.source {
            if s.num_channels() != 1 || s.num_frames() != self.speech.num_frames() {
                return Err(Error::Dimension(
                    "source must be one channel on the same grid".into(),
                ));
            }
        }
        if let Some(a) = &self.atf {
            if a.len() != self.speech.num_bins() || a.iter().any(|v| v.len() < n - 1) {
                return Err(Error::Dimension(
                    "ATF does not cover every bin and head channel".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessingSettings {
    pub smoothing: Smoothing,
    pub vad_threshold_db: f64,
    /// Compute the filters once from the long-term statistics.
    pub static_filters: bool,
}

/// Left and right outputs of one signal.
#[derive(Debug, Clone)]
pub struct BinauralOutput {
    pub left: SpectralFrameTensor,
    pub right: SpectralFrameTensor,
}

impl BinauralOutput {
    fn zeros(like: &SpectralFrameTensor) -> Self {
        let z = SpectralFrameTensor::zeros(*like.config(), 1, like.num_frames());
        Self {
            left: z.clone(),
            right: z,
        }
    }

    fn set(&mut self, k: usize, l: usize, f: &BinFilters, y: &[C64]) {
        self.left.set(0, k, l, filter_output(&f.left, y));
        self.right.set(0, k, l, filter_output(&f.right, y));
    }
}

/// Cue errors averaged over speech frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CueSummary {
    pub ild_error_db: f64,
    pub itd_error_us: f64,
    /// Per-bin errors averaged over the same frames.
    pub bins: Vec<BinCue>,
    pub frames: usize,
}

#[derive(Debug, Clone)]
pub struct EstimatorOutput {
    pub estimator: Estimator,
    pub noisy: BinauralOutput,
    pub speech: BinauralOutput,
    pub noise: BinauralOutput,
    pub cues: Option<CueSummary>,
    /// Bin-frames where estimation failed and the previous filter was kept.
    pub fallback_count: usize,
}

#[derive(Debug, Clone)]
pub struct ProcessOutput {
    pub labels: VadLabels,
    pub outputs: Vec<EstimatorOutput>,
}

#[derive(Default, Clone, Copy)]
struct BinSums {
    cue: Option<BinCue>,
    ild: f64,
    ild_n: usize,
    itd: f64,
    itd_n: usize,
}

#[derive(Default)]
struct CueAccumulator {
    ild_sum: f64,
    itd_sum: f64,
    frames: usize,
    bins: Vec<BinSums>,
}

impl CueAccumulator {
    fn add(&mut self, bins: &[BinCue], ild: f64, itd: f64) {
        self.ild_sum += ild;
        self.itd_sum += itd;
        self.frames += 1;
        for b in bins {
            if self.bins.len() <= b.bin {
                self.bins.resize(b.bin + 1, BinSums::default());
            }
            let slot = &mut self.bins[b.bin];
            slot.cue.get_or_insert(*b);
            if let Some(v) = b.ild_error_db {
                slot.ild += v;
                slot.ild_n += 1;
            }
            if let Some(v) = b.itd_error_us {
                slot.itd += v;
                slot.itd_n += 1;
            }
        }
    }

    fn finish(self) -> Option<CueSummary> {
        if self.frames == 0 {
            return None;
        }
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        Some(CueSummary {
            ild_error_db: self.ild_sum / self.frames as f64,
            itd_error_us: self.itd_sum / self.frames as f64,
            bins: self
                .bins
                .into_iter()
                .filter_map(|s| {
                    s.cue.map(|b| BinCue {
                        ild_error_db: mean(s.ild, s.ild_n),
                        itd_error_us: mean(s.itd, s.itd_n),
                        ..b
                    })
                })
                .collect(),
            frames: self.frames,
        })
    }
}

struct Estimators<'a> {
    state: CovarianceState,
    oracle: Option<CrossSpectrum>,
    truth: Option<Vec<(RtfVector, RtfVector)>>,
    head: &'a SpectralFrameTensor,
    external: SpectralFrameTensor,
    source: Option<&'a SpectralFrameTensor>,
}

impl Estimators<'_> {
    fn update(&mut self, l: usize, is_speech: bool) -> Result<()> {
        self.state
            .update_frame(self.head, &self.external, l, is_speech)?;
        if let (Some(cross), Some(src)) = (&mut self.oracle, self.source) {
            for k in 0..self.head.num_bins() {
                cross.update_bin(k, self.head.vector(k, l), src.get(0, k, l), is_speech);
            }
        }
        Ok(())
    }

    fn filters(&self, est: Estimator, k: usize) -> Result<BinFilters> {
        let b = self.state.bin(k);
        let (left, right) = match est {
            Estimator::Biased => (
                estimate_biased(&b.r_y, Side::Left)?,
                estimate_biased(&b.r_y, Side::Right)?,
            ),
            Estimator::CovarianceWhitening => estimate_cw_pair(&b.r_y, &b.r_n)?,
            Estimator::SpatialCoherence => {
                let c = self.state.cross(k);
                (estimate_sc(c, Side::Left)?, estimate_sc(c, Side::Right)?)
            }
            Estimator::OracleSpatialCoherence => {
                let c = self
                    .oracle
                    .as_ref()
                    .ok_or_else(|| Error::Config("SC_opt needs the clean source".into()))?
                    .bin(k);
                (
                    estimate_sc_from_source_cross(c, Side::Left)?,
                    estimate_sc_from_source_cross(c, Side::Right)?,
                )
            }
            Estimator::True => self.truth.as_ref().ok_or_else(|| {
                Error::Config("the true estimator needs ground-truth ATFs".into())
            })?[k]
                .clone(),
        };
        compute_bmvdr(&b.r_n, &left, &right)
    }
}

/// Errors that only make one bin-frame unusable.
fn is_local(e: &Error) -> bool {
    matches!(
        e,
        Error::UnreliableBin { .. }
            | Error::ZeroReferencePower
            | Error::DegenerateSteering(_)
            | Error::NotPositiveDefinite
            | Error::NoConvergence(_)
    )
}

/// Runs every estimator over all frames. The statistics are updated with
/// frame `l` before the filters applied to frame `l` are computed. When an
/// estimate fails in a bin, the previous filter of that bin is kept
/// (reference selection before the first success).
pub fn process(
    input: &ComponentInput,
    estimators: &[Estimator],
    settings: &ProcessingSettings,
) -> Result<ProcessOutput> {
    input.validate()?;
    let m = input.mics_per_device;
    let n_head = input.num_head_mics();
    let head_channels: Vec<usize> = (0..n_head).collect();
    let noisy = input.speech.add(&input.noise)?;
    let head = noisy.select_channels(&head_channels);
    let external = noisy.channel(n_head);
    let labels = oracle_vad(&input.speech.channel(m), settings.vad_threshold_db)?;
    let state = CovarianceState::initialize(&head, &external, &labels, settings.smoothing)?;

    let oracle = match (
        &input.source,
        estimators.contains(&Estimator::OracleSpatialCoherence),
    ) {
        (Some(src), true) => {
            if src.as_slice().iter().all(|z| z.norm_sqr() == 0.0) {
                return Err(Error::NoSpeech);
            }
            Some(CrossSpectrum::long_term(
                &head,
                src,
                &labels,
                settings.smoothing.cross,
            )?)
        }
        (None, true) => return Err(Error::Config("SC_opt needs the clean source".into())),
        _ => None,
    };
    let truth = match (&input.atf, estimators.contains(&Estimator::True)) {
        (Some(atf), true) => Some(
            atf.iter()
                .map(|a| {
                    Ok((
                        rtf_from_atf(&a[..n_head], Side::Left)?,
                        rtf_from_atf(&a[..n_head], Side::Right)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        (None, true) => {
            return Err(Error::Config(
                "the true estimator needs ground-truth ATFs".into(),
            ))
        }
        _ => None,
    };
    let mut bank = Estimators {
        state,
        oracle,
        truth,
        head: &head,
        external,
        source: input.source.as_ref(),
    };

    let cfg = *noisy.config();
    let bins = noisy.num_bins();
    let mut current = vec![BeamformerFilters::passthrough(bins, m); estimators.len()];
    let mut fallbacks = vec![0usize; estimators.len()];
    let mut outputs: Vec<(BinauralOutput, BinauralOutput, BinauralOutput)> = estimators
        .iter()
        .map(|_| {
            (
                BinauralOutput::zeros(&noisy),
                BinauralOutput::zeros(&noisy),
                BinauralOutput::zeros(&noisy),
            )
        })
        .collect();
    let mut cues: Vec<CueAccumulator> = estimators
        .iter()
        .map(|_| CueAccumulator::default())
        .collect();

    for l in 0..noisy.num_frames() {
        let is_speech = labels.is_speech(l);
        let recompute = !settings.static_filters || l == 0;
        if !settings.static_filters {
            bank.update(l, is_speech)?;
        }
        for (e, &est) in estimators.iter().enumerate() {
            if recompute {
                for k in 0..bins {
                    match bank.filters(est, k) {
                        Ok(f) => current[e].bins[k] = f,
                        Err(err) if is_local(&err) => fallbacks[e] += 1,
                        Err(err) => return Err(err),
                    }
                }
            }
            let (zy, zx, zn) = &mut outputs[e];
            for k in 0..bins {
                let f = &current[e].bins[k];
                zy.set(k, l, f, &head.vector(k, l)[..n_head]);
                zx.set(k, l, f, &input.speech.vector(k, l)[..n_head]);
                zn.set(k, l, f, &input.noise.vector(k, l)[..n_head]);
            }
            if is_speech {
                if let Some(atf) = &input.atf {
                    if let Ok(c) = binaural_cue_errors(&current[e], atf, m, &cfg) {
                        cues[e].add(&c.bins, c.ild_error_db, c.itd_error_us);
                    }
                }
            }
        }
    }

    let outputs = estimators
        .iter()
        .zip(outputs)
        .zip(cues)
        .zip(fallbacks)
        .map(
            |(((&estimator, (noisy, speech, noise)), cue), fallback_count)| EstimatorOutput {
                estimator,
                noisy,
                speech,
                noise,
                cues: cue.finish(),
                fallback_count,
            },
        )
        .collect();
    Ok(ProcessOutput { labels, outputs })
}
