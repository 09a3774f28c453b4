//! Small dense complex linear algebra.
//!
//! Everything here operates on matrices of dimension at most a few dozen:
//! the stacked beamformer dimension is `M(L_h - tau + 1)` and covariance
//! matrices are `M x M`. Storage is row-major and every routine is a pure
//! function of its inputs, apart from the `*_in_place` variants used in the
//! per-frame hot loops.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use thiserror::Error;

use crate::scalar::{cone, creal, czero, Real, C};

/// Maximum tolerated relative deviation `max|A - A^H| / max|A|`.
pub const HERMITIAN_TOL: f64 = 1e-6;
/// Relative Frobenius residual bound met by [`hpd_solve`] on well-conditioned input.
pub const SOLVE_TOL: f64 = 1e-9;
/// Relative residual bound met by [`gevd_principal`].
pub const GEVD_TOL: f64 = 1e-8;
/// Smallest admissible denominator magnitude in [`rank_one_inverse_update`].
pub const DENOM_FLOOR: f64 = 1e-30;

const JACOBI_MAX_SWEEPS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (relative deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix is not positive definite (pivot {pivot:e} at row {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("degenerate rank-one update denominator {value:e}")]
    DegenerateDenominator { value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T, E = LinalgError> = std::result::Result<T, E>;

/// Dense complex column vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CVec<T> {
    entries: Vec<C<T>>,
}

impl<T: Real> CVec<T> {
    pub fn zeros(len: usize) -> Self {
        Self { entries: vec![czero(); len] }
    }

    pub fn from_vec(entries: Vec<C<T>>) -> Self {
        Self { entries }
    }

    pub fn from_real(values: &[T]) -> Self {
        Self { entries: values.iter().map(|&v| creal(v)).collect() }
    }

    /// Canonical basis vector `e_k` of length `len`.
    pub fn basis(len: usize, k: usize) -> Self {
        let mut v = Self::zeros(len);
        v.entries[k] = cone();
        v
    }

    pub fn ones(len: usize) -> Self {
        Self { entries: vec![cone(); len] }
    }

    pub fn into_vec(self) -> Vec<C<T>> {
        self.entries
    }

    /// Inner product `self^H other`.
    pub fn dot(&self, other: &Self) -> C<T> {
        debug_assert_eq!(self.len(), other.len());
        self.entries.iter().zip(&other.entries).fold(czero(), |acc, (a, b)| acc + a.conj() * b)
    }

    pub fn norm_sqr(&self) -> T {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.entries.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    pub fn scaled(&self, s: C<T>) -> Self {
        Self { entries: self.entries.iter().map(|&z| z * s).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a - b).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|z| z.re == T::zero() && z.im == T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Rescales to unit norm and rotates the first nonzero entry onto the
    /// nonnegative real axis.
    pub fn normalize_phase(&mut self) {
        let norm = self.norm();
        if norm == T::zero() {
            return;
        }
        let thresh = self.max_abs() * T::epsilon() * T::lit(16.0);
        let Some(pivot) = self.entries.iter().find(|z| z.norm() > thresh).copied() else {
            return;
        };
        let rot = pivot.conj() / (creal(pivot.norm()) * creal(norm));
        for z in &mut self.entries {
            *z = *z * rot;
        }
        if let Some(first) = self.entries.iter_mut().find(|z| z.norm() > thresh) {
            first.im = T::zero();
        }
    }
}

impl<T> Deref for CVec<T> {
    type Target = [C<T>];
    fn deref(&self) -> &[C<T>] {
        &self.entries
    }
}

impl<T> DerefMut for CVec<T> {
    fn deref_mut(&mut self) -> &mut [C<T>] {
        &mut self.entries
    }
}

impl<T: Real> From<Vec<C<T>>> for CVec<T> {
    fn from(entries: Vec<C<T>>) -> Self {
        Self { entries }
    }
}

/// Dense complex matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<C<T>>,
}

impl<T: Real> CMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![czero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag_real(&vec![T::one(); n])
    }

    pub fn from_diag_real(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = creal(d);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[CVec<T>]) -> Self {
        let rows = cols.first().map_or(0, |c| c.len());
        Self::from_fn(rows, cols.len(), |i, j| cols[j][i])
    }

    /// `x y^H`.
    pub fn outer(x: &[C<T>], y: &[C<T>]) -> Self {
        Self::from_fn(x.len(), y.len(), |i, j| x[i] * y[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[C<T>] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> CVec<T> {
        CVec::from_vec((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn set_column(&mut self, j: usize, v: &[C<T>]) {
        for (i, &z) in v.iter().enumerate() {
            self[(i, j)] = z;
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[C<T>]) -> CVec<T> {
        assert_eq!(self.cols, x.len(), "mul_vec dimension mismatch");
        CVec::from_vec(
            (0..self.rows)
                .map(|i| self.row(i).iter().zip(x).fold(czero(), |acc, (a, b)| acc + a * b))
                .collect(),
        )
    }

    pub fn scaled(&self, s: C<T>) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self <- a * self + b * x x^H`, restricted to square matrices.
    pub fn rank_one_accumulate(&mut self, a: T, b: T, x: &[C<T>]) {
        debug_assert!(self.is_square() && self.rows == x.len());
        let n = self.rows;
        for i in 0..n {
            let xi = x[i] * b;
            let row = &mut self.data[i * n..(i + 1) * n];
            for (r, xj) in row.iter_mut().zip(x) {
                *r = *r * a + xi * xj.conj();
            }
        }
    }

    pub fn add_scaled_identity(&mut self, s: T) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)].re = self[(i, i)].re + s;
        }
    }

    pub fn trace(&self) -> C<T> {
        (0..self.rows.min(self.cols)).fold(czero(), |acc, i| acc + self[(i, i)])
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `max|A - A^H|` in absolute terms.
    pub fn hermitian_deviation(&self) -> T {
        if !self.is_square() {
            return T::infinity();
        }
        let n = self.rows;
        let mut dev = T::zero();
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    /// Fails with [`LinalgError::NotHermitian`] unless
    /// `max|A - A^H| <= HERMITIAN_TOL * max|A|`.
    pub fn check_hermitian(&self) -> Result<()> {
        if !self.is_square() {
            return Err(LinalgError::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        let scale = self.max_abs();
        let dev = self.hermitian_deviation();
        if dev > T::lit(HERMITIAN_TOL) * scale || !dev.is_finite() {
            let rel = if scale > T::zero() { dev / scale } else { dev };
            return Err(LinalgError::NotHermitian { deviation: rel.to_f64_lossy() });
        }
        Ok(())
    }

    /// Replaces the matrix by `(A + A^H) / 2`; the result is exactly Hermitian.
    pub fn hermitianize(&mut self) {
        debug_assert!(self.is_square());
        let n = self.rows;
        let half = T::lit(0.5);
        for i in 0..n {
            self.data[i * n + i].im = T::zero();
            for j in i + 1..n {
                let avg = (self.data[i * n + j] + self.data[j * n + i].conj()) * half;
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg.conj();
            }
        }
    }
}

impl<T> Index<(usize, usize)> for CMat<T> {
    type Output = C<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for CMat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^H`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: CMat<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factorizes a Hermitian positive-definite matrix. Only the lower
    /// triangle of `a` is read; Hermitian symmetry is checked separately.
    pub fn factor(a: &CMat<T>) -> Result<Self> {
        let n = a.rows();
        let mut l = CMat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d = d - l[(j, k)].norm_sqr();
            }
            if !(d > T::zero()) {
                return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d.to_f64_lossy() });
            }
            let djj = d.sqrt();
            l[(j, j)] = creal(djj);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &CMat<T> {
        &self.l
    }

    /// Solves `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut [C<T>]) {
        let n = self.l.rows();
        for i in 0..n {
            let mut s = b[i];
            let row = self.l.row(i);
            for k in 0..i {
                s = s - row[k] * b[k];
            }
            b[i] = s / row[i].re;
        }
    }

    /// Solves `L^H x = y` in place.
    pub fn backward_in_place(&self, y: &mut [C<T>]) {
        let n = self.l.rows();
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - self.l[(k, i)].conj() * y[k];
            }
            y[i] = s / self.l[(i, i)].re;
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [C<T>]) {
        self.forward_in_place(b);
        self.backward_in_place(b);
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &CMat<T>) -> CMat<T> {
        let mut x = CMat::zeros(b.rows(), b.cols());
        let mut col = vec![czero(); b.rows()];
        for j in 0..b.cols() {
            for (i, c) in col.iter_mut().enumerate() {
                *c = b[(i, j)];
            }
            self.solve_in_place(&mut col);
            x.set_column(j, &col);
        }
        x
    }
}

/// Solves `A X = B` for Hermitian positive-definite `A` via Cholesky.
pub fn hpd_solve<T: Real>(a: &CMat<T>, b: &CMat<T>) -> Result<CMat<T>> {
    a.check_hermitian()?;
    if b.rows() != a.rows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "right-hand side has {} rows, matrix is {}x{}",
            b.rows(),
            a.rows(),
            a.cols()
        )));
    }
    Ok(Cholesky::factor(a)?.solve(b))
}

/// Scratch buffer reused by [`rank_one_inverse_update_in_place`].
#[derive(Debug, Clone, Default)]
pub struct UpdateScratch<T> {
    u: Vec<C<T>>,
    coef: T,
}

impl<T: Real> UpdateScratch<T> {
    /// RLS gain `w A^{-1} x / (gamma + w x^H A^{-1} x)` of the most recent
    /// update, using the inverse from before that update. Zero when `w = 0`.
    pub fn gain(&self) -> impl Iterator<Item = C<T>> + '_ {
        let coef = self.coef;
        self.u.iter().map(move |&u| u * coef)
    }
}

/// Woodbury update: given `Ainv = A^{-1}`, returns the inverse of
/// `gamma * A + w * x x^H`. The result is re-Hermitianized.
pub fn rank_one_inverse_update<T: Real>(ainv: &CMat<T>, x: &[C<T>], w: T, gamma: T) -> Result<CMat<T>> {
    ainv.check_hermitian()?;
    if x.len() != ainv.rows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "vector of length {} for a {}x{} inverse",
            x.len(),
            ainv.rows(),
            ainv.cols()
        )));
    }
    let mut out = ainv.clone();
    rank_one_inverse_update_in_place(&mut out, x, w, gamma, &mut UpdateScratch::default())?;
    Ok(out)
}

/// In-place form of [`rank_one_inverse_update`]. `ainv` must already be
/// Hermitian; only its upper triangle and the conjugate of its lower
/// triangle are averaged into the result, which is then mirrored, giving
/// exactly `(R + R^H)/2` of the full update.
pub fn rank_one_inverse_update_in_place<T: Real>(
    ainv: &mut CMat<T>,
    x: &[C<T>],
    w: T,
    gamma: T,
    scratch: &mut UpdateScratch<T>,
) -> Result<()> {
    let n = ainv.rows();
    debug_assert_eq!(x.len(), n);
    let inv_gamma = T::one() / gamma;
    let half = T::lit(0.5);

    if w == T::zero() {
        scratch.u.clear();
        scratch.u.resize(n, czero());
        scratch.coef = T::zero();
        let data = ainv.as_mut_slice();
        for i in 0..n {
            data[i * n + i] = creal(data[i * n + i].re * inv_gamma);
            for j in i + 1..n {
                let v = (data[i * n + j] + data[j * n + i].conj()) * half * inv_gamma;
                data[i * n + j] = v;
                data[j * n + i] = v.conj();
            }
        }
        return Ok(());
    }

    scratch.u.clear();
    scratch.u.resize(n, czero());
    let u = &mut scratch.u;
    {
        let data = ainv.as_slice();
        for i in 0..n {
            let row = &data[i * n..(i + 1) * n];
            u[i] = row.iter().zip(x).fold(czero(), |acc, (a, b)| acc + a * b);
        }
    }
    let quad = x.iter().zip(u.iter()).fold(czero(), |acc: C<T>, (a, b)| acc + a.conj() * b);
    let denom = gamma + w * quad.re;
    if !(denom.abs() >= T::lit(DENOM_FLOOR)) {
        return Err(LinalgError::DegenerateDenominator { value: denom.to_f64_lossy() });
    }
    let coef = w / denom;
    scratch.coef = coef;
    let data = ainv.as_mut_slice();
    for i in 0..n {
        let ui = u[i] * coef;
        data[i * n + i] = creal((data[i * n + i].re - (ui * u[i].conj()).re) * inv_gamma);
        for j in i + 1..n {
            let avg = (data[i * n + j] + data[j * n + i].conj()) * half;
            let v = (avg - ui * u[j].conj()) * inv_gamma;
            data[i * n + j] = v;
            data[j * n + i] = v.conj();
        }
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Returns eigenvalues in ascending order and the matching
/// unit-norm eigenvectors as columns.
pub fn hermitian_eigh<T: Real>(a: &CMat<T>) -> Result<(Vec<T>, CMat<T>)> {
    a.check_hermitian()?;
    let n = a.rows();
    let mut m = a.clone();
    m.hermitianize();
    let mut v = CMat::identity(n);
    let scale = m.frobenius_norm();
    if scale == T::zero() {
        return Ok((vec![T::zero(); n], v));
    }
    let tol = T::epsilon() * scale;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off + m[(i, j)].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let mag = apq.norm();
                if mag <= tol * T::lit(1e-3) {
                    continue;
                }
                let phase = apq / mag;
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let theta = (aqq - app) / (T::lit(2.0) * mag);
                let t = if theta == T::zero() {
                    T::one()
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                // Unitary G = diag(1, e^{-i phi}) * [[c, s], [-s, c]] acting on (p, q).
                let gpp = creal(c);
                let gpq = creal(s);
                let gqp = phase.conj() * (-s);
                let gqq = phase.conj() * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = akp * gpp + akq * gqp;
                    m[(k, q)] = akp * gpq + akq * gqq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = gpp.conj() * apk + gqp.conj() * aqk;
                    m[(q, k)] = gpq.conj() * apk + gqq.conj() * aqk;
                }
                m[(p, q)] = czero();
                m[(q, p)] = czero();
                m[(p, p)].im = T::zero();
                m[(q, q)].im = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * gpp + vkq * gqp;
                    v[(k, q)] = vkp * gpq + vkq * gqq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].re.partial_cmp(&m[(j, j)].re).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)].re).collect();
    let vectors = CMat::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok((values, vectors))
}

/// Unit-norm eigenvector of the largest eigenvalue of a Hermitian PSD matrix,
/// with the first nonzero entry real and nonnegative.
pub fn principal_eigvec<T: Real>(a: &CMat<T>) -> Result<CVec<T>> {
    let (_, vecs) = hermitian_eigh(a)?;
    let mut v = vecs.column(a.rows() - 1);
    v.normalize_phase();
    Ok(v)
}

/// Largest generalized eigenpair of `A v = lambda B v` for Hermitian `A`
/// and Hermitian positive-definite `B`, computed by Cholesky whitening.
pub fn gevd_principal<T: Real>(a: &CMat<T>, b: &CMat<T>) -> Result<(T, CVec<T>)> {
    a.check_hermitian()?;
    b.check_hermitian()?;
    if a.rows() != b.rows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "pencil of {}x{} and {}x{} matrices",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = a.rows();
    let chol = Cholesky::factor(b)?;

    // Y = L^{-1} A, then W = L^{-1} Y^H = (L^{-1} A L^{-H})^H.
    let mut y = a.clone();
    let mut col = vec![czero(); n];
    for j in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = y[(i, j)];
        }
        chol.forward_in_place(&mut col);
        y.set_column(j, &col);
    }
    let mut w = y.adjoint();
    for j in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = w[(i, j)];
        }
        chol.forward_in_place(&mut col);
        w.set_column(j, &col);
    }
    w.hermitianize();

    let (vals, vecs) = hermitian_eigh(&w)?;
    let lambda = vals[n - 1];
    let mut v = vecs.column(n - 1);
    chol.backward_in_place(&mut v);
    v.normalize_phase();
    Ok((lambda, v))
}
