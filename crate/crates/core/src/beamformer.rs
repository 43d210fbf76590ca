//! Binaural MVDR filters and their application to STFT frames.

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, Cholesky, C64};
use crate::rtf::{RtfVector, Side};
use crate::stft::SpectralFrameTensor;

/// Smallest accepted `a^H R_n^{-1} a`, relative to `|a|^2 / (tr(R_n) / n)`.
pub const DEGENERATE_STEERING: f64 = 1e-12;

/// Left and right filter vectors of one frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinFilters {
    pub left: Vec<C64>,
    pub right: Vec<C64>,
}

impl BinFilters {
    /// Reference-microphone selection on both sides.
    pub fn passthrough(mics_per_device: usize) -> Self {
        Self {
            left: Side::Left.selector(mics_per_device),
            right: Side::Right.selector(mics_per_device),
        }
    }

    pub fn side(&self, side: Side) -> &[C64] {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

/// Filters for every bin of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerFilters {
    pub bins: Vec<BinFilters>,
}

impl BeamformerFilters {
    pub fn passthrough(num_bins: usize, mics_per_device: usize) -> Self {
        Self {
            bins: vec![BinFilters::passthrough(mics_per_device); num_bins],
        }
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }
}

/// `w = R^{-1} a / (a^H R^{-1} a)` from a factored noise covariance.
pub fn mvdr_filter(chol: &Cholesky, noise_scale: f64, rtf: &[C64]) -> Result<Vec<C64>> {
    let solved = chol.solve(rtf);
    let denom = linalg::dot_h(rtf, &solved);
    let norm_sq = linalg::norm(rtf).powi(2);
    if !(denom.re * noise_scale > DEGENERATE_STEERING * norm_sq) || !denom.re.is_finite() {
        return Err(Error::DegenerateSteering(denom.re));
    }
    // a^H R^{-1} a is real for Hermitian R; drop rounding residue in the imaginary part
    let d = denom.re;
    Ok(solved.into_iter().map(|z| z / d).collect())
}

/// Binaural MVDR filters for one bin; `R_n` is regularized by diagonal loading
/// when it is numerically singular.
pub fn compute_bmvdr(
    r_n: &CMatrix,
    rtf_left: &RtfVector,
    rtf_right: &RtfVector,
) -> Result<BinFilters> {
    let n = r_n.dim();
    if rtf_left.values().len() != n || rtf_right.values().len() != n {
        return Err(Error::Dimension(format!(
            "RTF length does not match {n}x{n} noise covariance"
        )));
    }
    if rtf_left.side() != Side::Left || rtf_right.side() != Side::Right {
        return Err(Error::Dimension(
            "RTF vectors must be left- and right-referenced".into(),
        ));
    }
    let chol = Cholesky::regularized(r_n)?;
    let scale = r_n.trace().re / n as f64;
    Ok(BinFilters {
        left: mvdr_filter(&chol, scale, rtf_left.values())?,
        right: mvdr_filter(&chol, scale, rtf_right.values())?,
    })
}

/// `w^H y`
pub fn filter_output(w: &[C64], y: &[C64]) -> C64 {
    linalg::dot_h(w, y)
}

/// Applies per-frame filters to head-microphone frames, returning the left
/// and right single-channel outputs.
pub fn apply(
    filters: &[BeamformerFilters],
    tensor: &SpectralFrameTensor,
) -> Result<(SpectralFrameTensor, SpectralFrameTensor)> {
    if filters.len() != tensor.num_frames() {
        return Err(Error::Dimension(format!(
            "{} filter frames for {} signal frames",
            filters.len(),
            tensor.num_frames()
        )));
    }
    let cfg = *tensor.config();
    let mut left = SpectralFrameTensor::zeros(cfg, 1, tensor.num_frames());
    let mut right = SpectralFrameTensor::zeros(cfg, 1, tensor.num_frames());
    for (l, frame) in filters.iter().enumerate() {
        if frame.num_bins() != tensor.num_bins() {
            return Err(Error::Dimension(format!(
                "filters cover {} bins, signal has {}",
                frame.num_bins(),
                tensor.num_bins()
            )));
        }
        for (k, f) in frame.bins.iter().enumerate() {
            let y = tensor.vector(k, l);
            if f.left.len() != y.len() || f.right.len() != y.len() {
                return Err(Error::Dimension(format!(
                    "filter length {} for {} channels",
                    f.left.len(),
                    y.len()
                )));
            }
            left.set(0, k, l, filter_output(&f.left, y));
            right.set(0, k, l, filter_output(&f.right, y));
        }
    }
    Ok((left, right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rtf::Estimator;
    use crate::stft::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        let mut r = CMatrix::identity(n).scaled(0.1);
        for _ in 0..n {
            r.add_outer(&random_vec(rng, n), 1.0);
        }
        r
    }

    fn rtf(values: &[C64], side: Side) -> RtfVector {
        RtfVector::normalize(values, side, values.len() / 2, Estimator::True).unwrap()
    }

    #[test]
    fn identity_noise_with_selector_steering_passes_through() {
        let e = Side::Left.selector(2);
        let f = compute_bmvdr(
            &CMatrix::identity(4),
            &rtf(&e, Side::Left),
            &rtf(&Side::Right.selector(2), Side::Right),
        )
        .unwrap();
        assert_eq!(f.left, e);
    }

    #[test]
    fn identity_noise_gives_matched_filter() {
        let a = vec![c(1.0, 0.0), c(0.5, 0.5), c(-0.2, 1.0), c(0.3, -0.7)];
        let a_l = rtf(&a, Side::Left);
        let a_r = rtf(&a, Side::Right);
        let f = compute_bmvdr(&CMatrix::identity(4), &a_l, &a_r).unwrap();
        let n2 = linalg::norm(a_l.values()).powi(2);
        for (w, v) in f.left.iter().zip(a_l.values()) {
            assert!((w - v / n2).norm() < 1e-15);
        }
        assert!((linalg::norm(&f.left) - 1.0 / linalg::norm(a_l.values())).abs() < 1e-15);
    }

    #[test]
    fn two_mic_explicit_inverse() {
        let r_n = CMatrix::from_rows(&[
            vec![c(1.0, 0.0), c(0.5, 0.0)],
            vec![c(0.5, 0.0), c(1.0, 0.0)],
        ]);
        let a = vec![c(1.0, 0.0), c(1.0, 0.0)];
        // explicit 2x2 inverse: [[1, -0.5], [-0.5, 1]] / 0.75
        let det = 1.0 - 0.25;
        let inv = [[1.0 / det, -0.5 / det], [-0.5 / det, 1.0 / det]];
        let ra: Vec<f64> = (0..2).map(|i| inv[i][0] * 1.0 + inv[i][1] * 1.0).collect();
        let denom: f64 = ra.iter().sum();
        let expected: Vec<f64> = ra.iter().map(|v| v / denom).collect();
        assert!((expected[0] - 0.5).abs() < 1e-15);
        let f = compute_bmvdr(&r_n, &rtf(&a, Side::Left), &rtf(&a, Side::Right)).unwrap();
        for (w, e) in f.left.iter().zip(&expected) {
            assert!((w - c(*e, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn degenerate_steering_rejected() {
        let chol = Cholesky::new(&CMatrix::identity(2)).unwrap();
        assert!(matches!(
            mvdr_filter(&chol, 1.0, &[c(0.0, 0.0), c(0.0, 0.0)]),
            Err(Error::DegenerateSteering(_))
        ));
    }

    #[test]
    fn distortionless_and_no_worse_than_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r_n = random_pd(&mut rng, 4);
            let a = random_vec(&mut rng, 4);
            let (a_l, a_r) = (rtf(&a, Side::Left), rtf(&a, Side::Right));
            let f = compute_bmvdr(&r_n, &a_l, &a_r).unwrap();
            assert!((linalg::dot_h(&f.left, a_l.values()) - c(1.0, 0.0)).norm() < 1e-10);
            assert!((linalg::dot_h(&f.right, a_r.values()) - c(1.0, 0.0)).norm() < 1e-10);
            for (w, side) in [(&f.left, Side::Left), (&f.right, Side::Right)] {
                let out = linalg::dot_h(w, &r_n.mul_vec(w)).re;
                let r = side.reference_index(2);
                assert!(out <= r_n[(r, r)].re * (1.0 + 1e-12));
            }
            // speech frames built from the steering vector come out as the reference component
            let s = C64::from_polar(rng.random_range(0.1..2.0), rng.random_range(-3.0..3.0));
            let x: Vec<C64> = a.iter().map(|z| z * s).collect();
            assert!((filter_output(&f.left, &x) - x[0]).norm() < 1e-8 * x[0].norm().max(1.0));
            assert!((filter_output(&f.right, &x) - x[2]).norm() < 1e-8 * x[2].norm().max(1.0));
        }
    }

    #[test]
    fn feasible_perturbations_never_reduce_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let r_n = random_pd(&mut rng, 4);
            let a_l = rtf(&random_vec(&mut rng, 4), Side::Left);
            let a_r = a_l.rereference(Side::Right).unwrap();
            let w = compute_bmvdr(&r_n, &a_l, &a_r).unwrap().left;
            let base = linalg::dot_h(&w, &r_n.mul_vec(&w)).re;
            for _ in 0..10 {
                // project a random direction onto the constraint null space a^H d = 0
                let d = random_vec(&mut rng, 4);
                let a = a_l.values();
                let coef = linalg::dot_h(a, &d) / linalg::norm(a).powi(2);
                let d: Vec<C64> = d.iter().zip(a).map(|(di, ai)| di - ai * coef).collect();
                let wp: Vec<C64> = w.iter().zip(&d).map(|(x, y)| x + y).collect();
                assert!((linalg::dot_h(&wp, a) - c(1.0, 0.0)).norm() < 1e-10);
                let out = linalg::dot_h(&wp, &r_n.mul_vec(&wp)).re;
                assert!(out >= base * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn apply_selector_zero_and_loop_oracle() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frames = 3;
        let mut t = SpectralFrameTensor::zeros(cfg, 4, frames);
        for l in 0..frames {
            for k in 0..cfg.num_bins() {
                t.vector_mut(k, l).copy_from_slice(&random_vec(&mut rng, 4));
            }
        }
        let pass = vec![BeamformerFilters::passthrough(cfg.num_bins(), 2); frames];
        let (zl, zr) = apply(&pass, &t).unwrap();
        for l in 0..frames {
            for k in 0..cfg.num_bins() {
                assert_eq!(zl.get(0, k, l), t.get(0, k, l));
                assert_eq!(zr.get(0, k, l), t.get(2, k, l));
            }
        }

        let zero = SpectralFrameTensor::zeros(cfg, 4, frames);
        let (zl, _) = apply(&pass, &zero).unwrap();
        assert!(zl.as_slice().iter().all(|z| z.norm() == 0.0));

        let random: Vec<BeamformerFilters> = (0..frames)
            .map(|_| BeamformerFilters {
                bins: (0..cfg.num_bins())
                    .map(|_| BinFilters {
                        left: random_vec(&mut rng, 4),
                        right: random_vec(&mut rng, 4),
                    })
                    .collect(),
            })
            .collect();
        let (zl, zr) = apply(&random, &t).unwrap();
        for l in 0..frames {
            for k in 0..cfg.num_bins() {
                let f = &random[l].bins[k];
                let mut el = c(0.0, 0.0);
                let mut er = c(0.0, 0.0);
                for ch in 0..4 {
                    el += f.left[ch].conj() * t.get(ch, k, l);
                    er += f.right[ch].conj() * t.get(ch, k, l);
                }
                assert!((zl.get(0, k, l) - el).norm() < 1e-12);
                assert!((zr.get(0, k, l) - er).norm() < 1e-12);
            }
        }
        assert!(apply(&random[..2], &t).is_err());
    }
}
