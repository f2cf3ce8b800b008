//! Dense complex linear algebra helpers.
//!
//! Everything here works on [`CMat`], a column-major `DMatrix<Complex64>`.
//! Hermitian systems are always solved through a Cholesky factor; no
//! explicit inverse is ever formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
pub use nalgebra::Complex;

use crate::error::{PrecodingError, Result};

pub type Complex64 = Complex<f64>;
pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative residual at which [`lambda_max`] accepts its Ritz value.
pub const LANCZOS_TOL: f64 = 1e-10;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

fn gemm_into(a: &CMat, a_rows: usize, a_cols: usize, transpose_a: bool, b: &CMat, transpose_b: bool) -> CMat {
    let (rsa, csa) = if transpose_a { (a.nrows() as isize, 1) } else { (1, a.nrows() as isize) };
    let (rsb, csb) = if transpose_b { (b.nrows() as isize, 1) } else { (1, b.nrows() as isize) };
    let n = if transpose_b { b.nrows() } else { b.ncols() };
    let mut c = CMat::zeros(a_rows, n);
    if a_rows == 0 || n == 0 || a_cols == 0 {
        return c;
    }
    // SAFETY: Complex<f64> is repr(C) {re, im}, the same layout as [f64; 2];
    // strides describe the column-major storage of each operand and `c` is
    // a fresh a_rows × n buffer.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            a_rows,
            a_cols,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            rsa,
            csa,
            b.as_ptr() as *const [f64; 2],
            rsb,
            csb,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            1,
            a_rows as isize,
        );
    }
    c
}

/// `A B` through a blocked kernel.
pub fn mul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions differ");
    gemm_into(a, a.nrows(), a.ncols(), false, b, false)
}

/// `A^H B`.
pub fn adjoint_mul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.nrows(), b.nrows(), "inner dimensions differ");
    gemm_into(&a.conjugate(), a.ncols(), a.nrows(), true, b, false)
}

/// `A B^H`.
pub fn mul_adjoint(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.ncols(), "inner dimensions differ");
    gemm_into(a, a.nrows(), a.ncols(), false, &b.conjugate(), true)
}

/// Lifts a real matrix into the complex field.
pub fn complexify(m: &DMatrix<f64>) -> CMat {
    m.map(|x| c64(x, 0.0))
}

/// `(M + M^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    debug_assert!(m.is_square());
    let mut h = m + m.adjoint();
    h.scale_mut(0.5);
    h
}

/// Symmetrizes in place so that the matrix is exactly Hermitian.
pub fn make_hermitian(m: &mut CMat) {
    let n = m.nrows();
    for j in 0..n {
        m[(j, j)].im = 0.0;
        for i in (j + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

pub fn trace(m: &CMat) -> Complex64 {
    m.diagonal().iter().sum()
}

pub fn real_trace(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// `Re Tr(A B)` without forming the product.
pub fn re_trace_product(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

/// Squared Frobenius norm, i.e. `Tr(M^H M)`.
pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn frob(m: &CMat) -> f64 {
    frob_sq(m).sqrt()
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Relative Frobenius discrepancy `||a - b|| / max(||a||, ||b||)`; zero when both vanish.
pub fn rel_frob_diff(a: &CMat, b: &CMat) -> f64 {
    let scale = frob(a).max(frob(b));
    if scale == 0.0 {
        0.0
    } else {
        frob(&(a - b)) / scale
    }
}

/// Column-major position of entry `(row, col)` in `vec(H)` for a matrix with `rows` rows.
#[inline]
pub fn vec_index(row: usize, col: usize, rows: usize) -> usize {
    col * rows + row
}

/// `vec(H)` stacking columns.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Cholesky factorization reading the lower triangle of `m`.
///
/// Fails unless every pivot is real, finite and positive.
pub fn cholesky(m: CMat) -> Option<Cholesky<Complex64, Dyn>> {
    let n = m.nrows();
    let mut l = m;
    for j in 0..n {
        let mut d = l[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = c64(d, 0.0);
        for i in (j + 1)..n {
            let mut s = l[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Some(Cholesky::pack_dirty(l))
}

/// Cholesky factor of a Hermitian positive definite matrix.
///
/// The input is symmetrized first. If the plain factorization fails a
/// diagonal jitter is added once and the factorization retried.
pub fn factor_hpd(m: &CMat, jitter: f64, what: &str) -> Result<Cholesky<Complex64, Dyn>> {
    let mut h = m.clone();
    make_hermitian(&mut h);
    if let Some(ch) = cholesky(h.clone()) {
        return Ok(ch);
    }
    if jitter > 0.0 {
        for i in 0..h.nrows() {
            h[(i, i)].re += jitter;
        }
        if let Some(ch) = cholesky(h) {
            return Ok(ch);
        }
    }
    Err(PrecodingError::Numerical(format!(
        "{what}: {n}x{n} matrix is not Hermitian positive definite (jitter {jitter:e})",
        n = m.nrows()
    )))
}

/// `log|M|` from a Cholesky factor.
pub fn chol_logdet(ch: &Cholesky<Complex64, Dyn>) -> f64 {
    let l = ch.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>() * 2.0
}

/// `log|M|` for Hermitian positive definite `M`.
pub fn logdet_hpd(m: &CMat, jitter: f64, what: &str) -> Result<f64> {
    Ok(chol_logdet(&factor_hpd(m, jitter, what)?))
}

/// Sorted (ascending) eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let mut h = m.clone();
    make_hermitian(&mut h);
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Cheap PSD test: `M + tol·I` admits a Cholesky factor.
pub fn is_psd_within(m: &CMat, tol: f64) -> bool {
    let mut h = m.clone();
    make_hermitian(&mut h);
    for i in 0..h.nrows() {
        h[(i, i)].re += tol.max(f64::MIN_POSITIVE);
    }
    cholesky(h).is_some()
}

/// Outcome of [`lambda_max`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaMax {
    pub value: f64,
    /// Matrix-vector products spent.
    pub iterations: usize,
}

fn lanczos_start(n: usize) -> CVec {
    let mut x = CVec::from_fn(n, |i, _| {
        let t = (i + 1) as f64;
        c64(1.0 + 0.5 * t.sin(), 0.25 * (1.7 * t).cos())
    });
    let norm = x.norm();
    x.unscale_mut(norm);
    x
}

/// Projects `w` off every basis vector, twice.
fn orthogonalize(w: &mut CVec, basis: &[CVec]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dotc(w);
            w.axpy(-c, q, c64(1.0, 0.0));
        }
    }
}

/// Top eigenvalue of the Lanczos tridiagonal and the residual norm of its
/// Ritz vector.
fn top_ritz(diag: &[f64], offdiag: &[f64], beta: f64) -> (f64, f64) {
    let size = diag.len();
    let t = DMatrix::from_fn(size, size, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            offdiag[i]
        } else if j + 1 == i {
            offdiag[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let top = eig.eigenvalues.imax();
    (eig.eigenvalues[top], beta * eig.eigenvectors[(size - 1, top)].abs())
}

/// Largest eigenvalue of a Hermitian PSD matrix by Lanczos with full
/// reorthogonalization.
///
/// Stops once the residual of the top Ritz pair falls below
/// `LANCZOS_TOL·θ`. A Krylov breakdown continues from the next coordinate
/// axis not already spanned by the basis, so after `n` steps the result is exact
/// up to rounding.
pub fn lambda_max(m: &CMat) -> LambdaMax {
    let n = m.nrows();
    if n == 0 || frob_sq(m) == 0.0 {
        return LambdaMax {
            value: 0.0,
            iterations: 0,
        };
    }
    let scale = frob(m);
    let trace = real_trace(m);
    let mut basis: Vec<CVec> = Vec::with_capacity(n.min(64));
    let mut diag: Vec<f64> = Vec::new();
    let mut offdiag: Vec<f64> = Vec::new();
    let mut q = lanczos_start(n);
    let mut next_axis = 0;
    let mut w = CVec::zeros(n);
    let mut theta = 0.0;
    for step in 1..=n {
        m.mul_to(&q, &mut w);
        diag.push(q.dotc(&w).re);
        basis.push(q.clone());
        orthogonalize(&mut w, &basis);
        let beta = w.norm();

        let breakdown = beta <= 1e-13 * scale;
        if step == n || breakdown || step % 4 == 0 {
            let (ritz, residual) = top_ritz(&diag, &offdiag, beta);
            theta = ritz;
            // after a breakdown the spectrum left outside the basis is PSD with
            // trace `tr(M) - tr(T)`, which bounds its largest eigenvalue
            let rest = trace - diag.iter().sum::<f64>();
            let done = if breakdown {
                rest <= theta
            } else {
                theta > 0.0 && residual <= LANCZOS_TOL * theta
            };
            if step == n || done {
                return LambdaMax {
                    value: theta,
                    iterations: step,
                };
            }
        }

        if !breakdown {
            offdiag.push(beta);
            q = w.unscale(beta);
        } else {
            offdiag.push(0.0);
            loop {
                let mut fresh = CVec::zeros(n);
                fresh[next_axis % n] = c64(1.0, 0.0);
                next_axis += 1;
                orthogonalize(&mut fresh, &basis);
                let norm = fresh.norm();
                if norm > 1e-8 {
                    q = fresh.unscale(norm);
                    break;
                }
            }
        }
    }
    LambdaMax {
        value: theta,
        iterations: n,
    }
}

/// Serde adapters that store a complex matrix as `{rows, cols, re, im}` in
/// column-major order.
pub mod serde_cmat {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{c64, CMat};

    #[derive(Serialize, Deserialize)]
    pub struct MatrixDump {
        pub rows: usize,
        pub cols: usize,
        pub re: Vec<f64>,
        pub im: Vec<f64>,
    }

    impl From<&CMat> for MatrixDump {
        fn from(m: &CMat) -> Self {
            MatrixDump {
                rows: m.nrows(),
                cols: m.ncols(),
                re: m.iter().map(|z| z.re).collect(),
                im: m.iter().map(|z| z.im).collect(),
            }
        }
    }

    impl MatrixDump {
        pub fn into_matrix<E: serde::de::Error>(self) -> Result<CMat, E> {
            let n = self.rows * self.cols;
            if self.re.len() != n || self.im.len() != n {
                return Err(E::custom(format!(
                    "matrix dump {}x{} carries {} real / {} imaginary entries",
                    self.rows,
                    self.cols,
                    self.re.len(),
                    self.im.len()
                )));
            }
            Ok(CMat::from_iterator(
                self.rows,
                self.cols,
                self.re.iter().zip(&self.im).map(|(&r, &i)| c64(r, i)),
            ))
        }
    }

    pub fn serialize<S: Serializer>(m: &CMat, s: S) -> Result<S::Ok, S::Error> {
        MatrixDump::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMat, D::Error> {
        MatrixDump::deserialize(d)?.into_matrix()
    }

    /// Real matrices, stored as `{rows, cols, data}` in column-major order.
    pub mod real_vec {
        use nalgebra::DMatrix;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct RealDump {
            rows: usize,
            cols: usize,
            data: Vec<f64>,
        }

        pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
            ms.iter()
                .map(|m| RealDump {
                    rows: m.nrows(),
                    cols: m.ncols(),
                    data: m.as_slice().to_vec(),
                })
                .collect::<Vec<_>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
            Vec::<RealDump>::deserialize(d)?
                .into_iter()
                .map(|r| {
                    if r.data.len() != r.rows * r.cols {
                        return Err(serde::de::Error::custom("real matrix dump has wrong length"));
                    }
                    Ok(DMatrix::from_column_slice(r.rows, r.cols, &r.data))
                })
                .collect()
        }
    }

    pub mod vec {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        use super::{CMat, MatrixDump};

        pub fn serialize<S: Serializer>(ms: &[CMat], s: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(MatrixDump::from).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMat>, D::Error> {
            Vec::<MatrixDump>::deserialize(d)?
                .into_iter()
                .map(MatrixDump::into_matrix)
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn herm(entries: &[f64], n: usize) -> CMat {
        CMat::from_row_slice(n, n, &entries.iter().map(|&x| c64(x, 0.0)).collect::<Vec<_>>())
    }

    #[test]
    fn blocked_products_match_naive() {
        let a = CMat::from_fn(5, 3, |i, j| c64((i * 3 + j) as f64 * 0.3 - 1.0, (i + 2 * j) as f64 * 0.1));
        let b = CMat::from_fn(3, 4, |i, j| c64((i as f64 - j as f64) * 0.7, 0.2 * (i * j) as f64 - 0.5));
        let c = CMat::from_fn(5, 4, |i, j| c64(0.1 * (i + j) as f64, -0.3 * i as f64));
        assert!(rel_frob_diff(&mul(&a, &b), &(&a * &b)) < 1e-14);
        assert!(rel_frob_diff(&adjoint_mul(&a, &c), &(a.adjoint() * &c)) < 1e-14);
        assert!(rel_frob_diff(&mul_adjoint(&a, &a), &(&a * a.adjoint())) < 1e-14);
        assert_eq!(mul(&zeros(2, 0), &zeros(0, 3)), zeros(2, 3));
    }

    #[test]
    fn lambda_max_diagonal() {
        let m = herm(&[2.0, 0.0, 0.0, 1.0], 2);
        let lm = lambda_max(&m);
        assert!((lm.value - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn lambda_max_matches_characteristic_root() {
        // [[2,1],[1,2]]: roots of t^2 - 4t + 3.
        let m = herm(&[2.0, 1.0, 1.0, 2.0], 2);
        let root = (4.0 + (16.0f64 - 12.0).sqrt()) / 2.0;
        assert!((lambda_max(&m).value - root).abs() <= 1e-9);
    }

    #[test]
    fn lambda_max_survives_krylov_breakdown() {
        // the start vector is an eigenvector for the small eigenvalue
        let x = lanczos_start(3);
        let p = &x * x.adjoint();
        let m = &p + (CMat::identity(3, 3) - &p) * c64(3.0, 0.0);
        let lm = lambda_max(&m);
        assert!((lm.value - 3.0).abs() <= 1e-9, "{lm:?}");
    }

    #[test]
    fn lambda_max_of_low_rank() {
        let a = CMat::from_fn(30, 2, |i, j| c64(((i + 3 * j) as f64).sin(), 0.0));
        let m = &a * a.adjoint();
        let exact = *hermitian_eigenvalues(&m).last().unwrap();
        assert!((lambda_max(&m).value - exact).abs() <= 1e-9 * exact);
    }

    #[test]
    fn lambda_max_with_clustered_top() {
        let n = 40;
        let a = CMat::from_fn(n, n, |i, j| c64(((i * 7 + j * 3) as f64).sin(), ((i + 2 * j) as f64).cos()));
        let (q, _) = a.qr().unpack();
        let spectrum = CMat::from_diagonal(&CVec::from_fn(n, |i, _| c64(1.0 - 1e-6 * (i * i) as f64, 0.0)));
        let m = &q * spectrum * q.adjoint();
        let lm = lambda_max(&m);
        let exact = *hermitian_eigenvalues(&m).last().unwrap();
        assert!((lm.value - exact).abs() <= 1e-9, "{lm:?} vs {exact}");
    }

    #[test]
    fn lambda_max_of_zero() {
        assert_eq!(lambda_max(&zeros(3, 3)).value, 0.0);
    }

    #[test]
    fn factor_hpd_rejects_indefinite() {
        let m = herm(&[1.0, 0.0, 0.0, -1.0], 2);
        assert!(factor_hpd(&m, 1e-12, "test").is_err());
    }

    #[test]
    fn logdet_matches_product_of_eigenvalues() {
        let m = herm(&[4.0, 1.0, 1.0, 3.0], 2);
        let ld = logdet_hpd(&m, 0.0, "test").unwrap();
        assert!((ld - 11.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn vec_index_is_column_major() {
        let m = CMat::from_fn(2, 3, |r, c| c64((10 * r + c) as f64, 0.0));
        let v = vectorize(&m);
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(v[vec_index(r, c, 2)], m[(r, c)]);
            }
        }
    }
}
