//! Relative transfer function estimators.
//!
//! Every estimator returns a 2M-vector normalized so that the entry of the
//! chosen reference microphone (index 0 on the left device, index M on the
//! right device) is exactly one.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::covariance::{CrossSpectrum, VadLabels};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, Cholesky, C64};
use crate::scene::GroundTruth;
use crate::stft::SpectralFrameTensor;

/// Relative floor on the reference cross-PSD entry of the SC estimators.
pub const SC_REFERENCE_FLOOR: f64 = 1e-3;
/// Power iteration stops when `|A v - rho v| <= tol * |rho|`.
pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn reference_index(self, mics_per_device: usize) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => mics_per_device,
        }
    }

    pub fn selector(self, mics_per_device: usize) -> Vec<C64> {
        let mut e = vec![C64::new(0.0, 0.0); 2 * mics_per_device];
        e[self.reference_index(mics_per_device)] = C64::new(1.0, 0.0);
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "B")]
    Biased,
    #[serde(rename = "CW")]
    CovarianceWhitening,
    #[serde(rename = "SC")]
    SpatialCoherence,
    #[serde(rename = "SC_opt")]
    OracleSpatialCoherence,
    #[serde(rename = "true")]
    True,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Biased,
        Estimator::CovarianceWhitening,
        Estimator::SpatialCoherence,
        Estimator::OracleSpatialCoherence,
        Estimator::True,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Biased => "B",
            Estimator::CovarianceWhitening => "CW",
            Estimator::SpatialCoherence => "SC",
            Estimator::OracleSpatialCoherence => "SC_opt",
            Estimator::True => "true",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

/// Steering vector of one bin relative to a reference microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct RtfVector {
    values: Vec<C64>,
    side: Side,
    estimator: Estimator,
}

impl RtfVector {
    /// Divides by the reference entry and pins that entry to exactly `1 + 0j`.
    pub fn normalize(
        raw: &[C64],
        side: Side,
        mics_per_device: usize,
        estimator: Estimator,
    ) -> Result<Self> {
        let r = side.reference_index(mics_per_device);
        if raw.len() != 2 * mics_per_device {
            return Err(Error::Dimension(format!(
                "RTF needs {} entries, got {}",
                2 * mics_per_device,
                raw.len()
            )));
        }
        let denom = raw[r];
        if denom.norm() == 0.0 {
            return Err(Error::ZeroReferencePower);
        }
        let mut values: Vec<C64> = raw.iter().map(|z| z / denom).collect();
        values[r] = C64::new(1.0, 0.0);
        if values
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::UnreliableBin {
                magnitude: denom.norm(),
            });
        }
        Ok(Self {
            values,
            side,
            estimator,
        })
    }

    /// Reference-selection vector `e`, the identity passthrough steering.
    pub fn passthrough(side: Side, mics_per_device: usize, estimator: Estimator) -> Self {
        Self {
            values: side.selector(mics_per_device),
            side,
            estimator,
        }
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn mics_per_device(&self) -> usize {
        self.values.len() / 2
    }

    /// Same direction re-referenced to the other device.
    pub fn rereference(&self, side: Side) -> Result<Self> {
        Self::normalize(&self.values, side, self.mics_per_device(), self.estimator)
    }

    /// `|| self - other || / || other ||`
    pub fn relative_error(&self, other: &RtfVector) -> f64 {
        let diff: Vec<C64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        linalg::norm(&diff) / linalg::norm(&other.values)
    }
}

fn mics_per_device_of(n: usize) -> Result<usize> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "{n} channels is not a binaural 2M layout"
        )));
    }
    Ok(n / 2)
}

/// Reference column of the noisy covariance, normalized by its diagonal entry.
pub fn estimate_biased(r_y: &CMatrix, side: Side) -> Result<RtfVector> {
    let m = mics_per_device_of(r_y.dim())?;
    let r = side.reference_index(m);
    if !(r_y[(r, r)].re > 0.0) {
        return Err(Error::ZeroReferencePower);
    }
    RtfVector::normalize(&r_y.column(r), side, m, Estimator::Biased)
}

/// Unit-norm principal eigenvector of a Hermitian matrix.
///
/// Power iteration from `start`; when it stalls on a small eigengap the full
/// Hermitian eigendecomposition is used instead.
pub fn principal_eigenvector(a: &CMatrix, start: &[C64]) -> Result<Vec<C64>> {
    match linalg::principal_eigenvector(a, start, POWER_TOLERANCE, POWER_MAX_ITER) {
        Ok((v, _)) => Ok(v),
        Err(Error::NoConvergence(_)) => {
            let n = a.dim();
            let m = DMatrix::from_fn(n, n, |i, j| a[(i, j)]);
            let eig = SymmetricEigen::try_new(m, 1e-14, 10_000)
                .ok_or(Error::NoConvergence(POWER_MAX_ITER))?;
            let best = eig.eigenvalues.imax();
            Ok(eig.eigenvectors.column(best).iter().cloned().collect())
        }
        Err(e) => Err(e),
    }
}

fn cw_direction(r_y: &CMatrix, r_n: &CMatrix, start: Side) -> Result<(Vec<C64>, usize)> {
    if r_y.dim() != r_n.dim() {
        return Err(Error::Dimension("R_y and R_n differ in size".into()));
    }
    let m = mics_per_device_of(r_y.dim())?;
    let chol = Cholesky::regularized(r_n)?;
    let whitened = chol.whiten(r_y);
    let v = principal_eigenvector(&whitened, &start.selector(m))?;
    Ok((chol.mul_factor(&v), m))
}

fn normalize_cw(a: &[C64], side: Side, m: usize) -> Result<RtfVector> {
    let r = side.reference_index(m);
    if a[r].norm() <= 1e-14 * linalg::norm(a) {
        return Err(Error::UnreliableBin {
            magnitude: a[r].norm(),
        });
    }
    RtfVector::normalize(a, side, m, Estimator::CovarianceWhitening)
}

/// Covariance-whitening estimate: whiten `R_y` with the Cholesky factor of
/// `R_n`, take the principal eigenvector, de-whiten and normalize.
pub fn estimate_cw(r_y: &CMatrix, r_n: &CMatrix, side: Side) -> Result<RtfVector> {
    let (a, m) = cw_direction(r_y, r_n, side)?;
    normalize_cw(&a, side, m)
}

/// Left and right CW estimates sharing one eigenvector (started from the left
/// reference), so the two are exact re-normalizations of each other.
pub fn estimate_cw_pair(r_y: &CMatrix, r_n: &CMatrix) -> Result<(RtfVector, RtfVector)> {
    let (a, m) = cw_direction(r_y, r_n, Side::Left)?;
    Ok((
        normalize_cw(&a, Side::Left, m)?,
        normalize_cw(&a, Side::Right, m)?,
    ))
}

fn normalize_cross(r_ye: &[C64], side: Side, estimator: Estimator) -> Result<RtfVector> {
    let m = mics_per_device_of(r_ye.len())?;
    let r = side.reference_index(m);
    let magnitude = r_ye[r].norm();
    if !(magnitude > SC_REFERENCE_FLOOR * linalg::norm(r_ye)) {
        return Err(Error::UnreliableBin { magnitude });
    }
    RtfVector::normalize(r_ye, side, m, estimator)
}

/// Spatial-coherence estimate from the head/external cross-PSD vector.
pub fn estimate_sc(r_ye: &[C64], side: Side) -> Result<RtfVector> {
    normalize_cross(r_ye, side, Estimator::SpatialCoherence)
}

/// Spatial-coherence estimate from a cross-PSD with the clean source.
pub fn estimate_sc_from_source_cross(r_ys: &[C64], side: Side) -> Result<RtfVector> {
    normalize_cross(r_ys, side, Estimator::OracleSpatialCoherence)
}

/// Oracle spatial-coherence estimate using the clean source as the external
/// reference. The cross-PSD starts from its long-term speech-frame average and
/// is then tracked recursively through all frames; the per-bin result reflects
/// the final state.
pub fn estimate_sc_oracle(
    head: &SpectralFrameTensor,
    source: &SpectralFrameTensor,
    labels: &VadLabels,
    alpha: f64,
    side: Side,
) -> Result<Vec<Result<RtfVector>>> {
    if source.as_slice().iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::NoSpeech);
    }
    if source.num_frames() != head.num_frames() {
        return Err(Error::Dimension(format!(
            "source has {} frames, head signals {}",
            source.num_frames(),
            head.num_frames()
        )));
    }
    let mut cross = CrossSpectrum::long_term(head, source, labels, alpha)?;
    for l in 0..head.num_frames() {
        for k in 0..head.num_bins() {
            cross.update_bin(
                k,
                head.vector(k, l),
                source.get(0, k, l),
                labels.is_speech(l),
            );
        }
    }
    Ok((0..cross.num_bins())
        .map(|k| estimate_sc_from_source_cross(cross.bin(k), side))
        .collect())
}

/// RTF of the ground-truth ATF restricted to the head-mounted microphones.
pub fn rtf_from_atf(atf: &[C64], side: Side) -> Result<RtfVector> {
    let m = mics_per_device_of(atf.len())?;
    RtfVector::normalize(atf, side, m, Estimator::True)
}

/// True RTF per bin from a simulated scene's direct-path ATFs.
pub fn true_rtf(truth: &GroundTruth, side: Side) -> Result<Vec<RtfVector>> {
    (0..truth.atf.len())
        .map(|k| rtf_from_atf(truth.head_atf(k), side))
        .collect()
}
