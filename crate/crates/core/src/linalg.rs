//! Dense complex matrices for the small per-bin problems (2M x 2M).

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Square complex matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    /// `v v^H`
    pub fn outer(v: &[C64]) -> Self {
        let mut m = Self::zeros(v.len());
        m.add_outer(v, 1.0);
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.n).map(|i| self[(i, j)]).collect()
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|z| *z *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    /// `self += weight * v v^H`
    pub fn add_outer(&mut self, v: &[C64], weight: f64) {
        debug_assert_eq!(v.len(), self.n);
        let n = self.n;
        for i in 0..n {
            let vi = v[i] * weight;
            let row = &mut self.data[i * n..(i + 1) * n];
            for (r, vj) in row.iter_mut().zip(v) {
                *r += vi * vj.conj();
            }
        }
    }

    pub fn add_assign(&mut self, other: &CMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Replace by `(A + A^H) / 2`; forces a real diagonal.
    pub fn symmetrize(&mut self) {
        let n = self.n;
        for i in 0..n {
            let d = self[(i, i)].re;
            self[(i, i)] = C64::new(d, 0.0);
            for j in i + 1..n {
                let avg = (self[(i, j)] + self[(j, i)].conj()) * 0.5;
                self[(i, j)] = avg;
                self[(j, i)] = avg.conj();
            }
        }
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                self.data[i * n..(i + 1) * n]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn mul_mat(&self, other: &CMatrix) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

/// Diagonal loading shared by whitening and the MVDR solve: `1e-6 * tr(R) / n`.
pub fn loading_level(r: &CMatrix) -> f64 {
    1e-6 * r.trace().re / r.dim() as f64
}

/// Lower-triangular Cholesky factor `L` with `R = L L^H`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: CMatrix,
}

impl Cholesky {
    pub fn new(r: &CMatrix) -> Result<Self> {
        let n = r.dim();
        let mut l = CMatrix::zeros(n);
        for j in 0..n {
            let mut d = r[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = d.sqrt();
            l[(j, j)] = C64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = r[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    /// Cholesky of `R + delta I` with the standard loading level.
    pub fn loaded(r: &CMatrix) -> Result<Self> {
        let delta = loading_level(r);
        let mut loaded = r.clone();
        for i in 0..r.dim() {
            loaded[(i, i)] += delta;
        }
        Self::new(&loaded)
    }

    /// Plain Cholesky, falling back to the loaded factor when `R` is singular
    /// or has a squared pivot below the loading level.
    pub fn regularized(r: &CMatrix) -> Result<Self> {
        let delta = loading_level(r);
        match Self::new(r) {
            Ok(chol) if (0..r.dim()).all(|i| chol.l[(i, i)].re.powi(2) >= delta) => Ok(chol),
            _ => Self::loaded(r),
        }
    }

    pub fn factor(&self) -> &CMatrix {
        &self.l
    }

    /// Solve `L x = b`.
    pub fn solve_lower(&self, b: &[C64]) -> Vec<C64> {
        let n = self.l.dim();
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)].re;
        }
        x
    }

    /// Solve `L^H x = b`.
    pub fn solve_upper(&self, b: &[C64]) -> Vec<C64> {
        let n = self.l.dim();
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[(k, i)].conj() * x[k];
            }
            x[i] = s / self.l[(i, i)].re;
        }
        x
    }

    /// Solve `R x = b`.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `L^{-1} A L^{-H}` for Hermitian `A`, result symmetrized.
    pub fn whiten(&self, a: &CMatrix) -> CMatrix {
        let n = a.dim();
        // B = L^{-1} A, column by column
        let mut b = CMatrix::zeros(n);
        for j in 0..n {
            let col = self.solve_lower(&a.column(j));
            for i in 0..n {
                b[(i, j)] = col[i];
            }
        }
        // W = B L^{-H} = (L^{-1} B^H)^H
        let bh = b.adjoint();
        let mut w = CMatrix::zeros(n);
        for j in 0..n {
            let col = self.solve_lower(&bh.column(j));
            for i in 0..n {
                w[(j, i)] = col[i].conj();
            }
        }
        w.symmetrize();
        w
    }

    /// `L v`
    pub fn mul_factor(&self, v: &[C64]) -> Vec<C64> {
        self.l.mul_vec(v)
    }
}

pub fn dot_h(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Principal eigenpair of a Hermitian matrix by power iteration.
///
/// Stops once the Rayleigh-quotient residual `|A v - rho v|` drops below
/// `tol * |rho|`, starting from `start`. Returns the unit-norm eigenvector and
/// its eigenvalue.
pub fn principal_eigenvector(
    a: &CMatrix,
    start: &[C64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<C64>, f64)> {
    let mut v = start.to_vec();
    let nv = norm(&v);
    if !(nv > 0.0) {
        return Err(Error::Dimension("zero start vector".into()));
    }
    v.iter_mut().for_each(|z| *z /= nv);
    for _ in 0..=max_iter {
        let av = a.mul_vec(&v);
        let rho = dot_h(&v, &av).re;
        let residual: f64 = av
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - y * rho).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if !residual.is_finite() {
            return Err(Error::NoConvergence(0));
        }
        if residual <= tol * rho.abs() {
            return Ok((v, rho));
        }
        let nn = norm(&av);
        if !(nn > 0.0) {
            // v lies in the null space; the matrix is zero along it
            return Ok((v, rho));
        }
        v = av.into_iter().map(|z| z / nn).collect();
    }
    Err(Error::NoConvergence(max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sample_pd() -> CMatrix {
        let mut r = CMatrix::identity(3);
        r.add_outer(&[c(1.0, 0.5), c(-0.3, 0.2), c(0.7, -1.0)], 2.0);
        r.add_outer(&[c(0.2, 0.0), c(1.0, 1.0), c(0.0, -0.4)], 0.5);
        r
    }

    #[test]
    fn cholesky_reconstructs() {
        let r = sample_pd();
        let chol = Cholesky::new(&r).unwrap();
        let l = chol.factor();
        let back = l.mul_mat(&l.adjoint());
        for (a, b) in back.as_slice().iter().zip(r.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn cholesky_solve_matches_product() {
        let r = sample_pd();
        let x = vec![c(1.0, -1.0), c(0.5, 2.0), c(-3.0, 0.0)];
        let b = r.mul_vec(&x);
        let solved = Cholesky::new(&r).unwrap().solve(&b);
        for (a, b) in solved.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn whiten_of_r_is_identity() {
        let r = sample_pd();
        let w = Cholesky::new(&r).unwrap().whiten(&r);
        let id = CMatrix::identity(3);
        for (a, b) in w.as_slice().iter().zip(id.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let mut r = CMatrix::identity(2);
        r[(1, 1)] = c(-1.0, 0.0);
        assert!(matches!(Cholesky::new(&r), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn power_iteration_finds_dominant_direction() {
        let a = vec![c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 1.0)];
        let mut m = CMatrix::identity(3);
        m.add_outer(&a, 5.0);
        let (v, lambda) =
            principal_eigenvector(&m, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], 1e-14, 500)
                .unwrap();
        let expected = 1.0 + 5.0 * norm(&a).powi(2);
        assert!((lambda - expected).abs() < 1e-9 * expected);
        let phase = v[0] / a[0];
        for (vi, ai) in v.iter().zip(&a) {
            assert!((vi - ai * phase).norm() < 1e-6);
        }
    }

    #[test]
    fn symmetrize_removes_drift() {
        let mut m = sample_pd();
        m[(0, 1)] += c(1e-9, 0.0);
        m[(2, 2)] += c(0.0, 1e-9);
        m.symmetrize();
        assert_eq!(m.hermitian_defect(), 0.0);
        assert_eq!(m[(2, 2)].im, 0.0);
    }
}
