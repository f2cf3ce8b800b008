//! Moment contractions `U = E[H Q H^H]` and `Λ = E[H^H K H]`.
//!
//! The dense kernels read a full second moment `D` laid out by column-major
//! vectorization. The structured kernels take the link mean and per-entry
//! variance instead and never touch an `M_rM_t × M_rM_t` matrix.

use nalgebra::DMatrix;

use crate::channel::SecondMoments;
use crate::linalg::{self, c64, CMat};
use crate::network::PrecoderSet;

/// `U[m, n] = Σ_{m', n'} Q[m', n'] · D[m'M_r + m, n'M_r + n]`.
pub fn outer_dense(q: &CMat, d: &CMat, mr: usize) -> CMat {
    let mt = q.nrows();
    debug_assert_eq!(d.nrows(), mr * mt);
    let mut u = CMat::zeros(mr, mr);
    let mut acc = vec![c64(0.0, 0.0); mr];
    for np in 0..mt {
        let q_col = q.column(np);
        let q_col = q_col.as_slice();
        for n in 0..mr {
            let col = d.column(np * mr + n);
            acc.fill(c64(0.0, 0.0));
            for (&w, block) in q_col.iter().zip(col.as_slice().chunks_exact(mr)) {
                for (a, &x) in acc.iter_mut().zip(block) {
                    *a += w * x;
                }
            }
            for (m, &a) in acc.iter().enumerate() {
                u[(m, n)] += a;
            }
        }
    }
    linalg::make_hermitian(&mut u);
    u
}

/// `Λ[m, n] = Σ_{m', n'} K[m', n'] · conj(D[m·M_r + m', n·M_r + n'])`.
pub fn inner_dense(k: &CMat, d: &CMat, mr: usize) -> CMat {
    let mt = d.nrows() / mr;
    debug_assert_eq!(k.nrows(), mr);
    let mut lam = CMat::zeros(mt, mt);
    for n in 0..mt {
        for np in 0..mr {
            let col = d.column(n * mr + np);
            let col = col.as_slice();
            let k_col: Vec<_> = k.column(np).iter().map(|z| z.conj()).collect();
            for m in 0..=n {
                let acc: linalg::Complex64 = k_col
                    .iter()
                    .zip(&col[m * mr..(m + 1) * mr])
                    .map(|(&kk, &x)| kk * x)
                    .sum();
                lam[(m, n)] += acc.conj();
            }
        }
    }
    for n in 0..mt {
        lam[(n, n)].im = 0.0;
        for m in 0..n {
            lam[(n, m)] = lam[(m, n)].conj();
        }
    }
    lam
}

/// `Ĥ Q Ĥ^H + diag(S · Diag(Q))` for mean `Ĥ` and entry variances `S`.
pub fn outer_structured(q: &CMat, mean: &CMat, variance: &DMatrix<f64>) -> CMat {
    let mut u = linalg::mul_adjoint(&linalg::mul(mean, q), mean);
    for m in 0..mean.nrows() {
        let s: f64 = (0..mean.ncols()).map(|mp| variance[(m, mp)] * q[(mp, mp)].re).sum();
        u[(m, m)] += c64(s, 0.0);
    }
    linalg::make_hermitian(&mut u);
    u
}

/// `Ĥ^H K Ĥ + diag(S^T · Diag(K))`.
pub fn inner_structured(k: &CMat, mean: &CMat, variance: &DMatrix<f64>) -> CMat {
    let mut lam = linalg::adjoint_mul(mean, &linalg::mul(k, mean));
    for m in 0..mean.ncols() {
        let s: f64 = (0..mean.nrows()).map(|mp| variance[(mp, m)] * k[(mp, mp)].re).sum();
        lam[(m, m)] += c64(s, 0.0);
    }
    linalg::make_hermitian(&mut lam);
    lam
}

/// Every `U_{u,s} = E[H_{u,ℓ(s)} V_s V_s^H H_{u,ℓ(s)}^H]`, indexed `u·KL + s`.
pub fn compute_u<M: SecondMoments + ?Sized>(moments: &M, precoders: &PrecoderSet) -> Vec<CMat> {
    let dims = moments.dims();
    let users = dims.users();
    let grams: Vec<CMat> = precoders.v.iter().map(|v| v * v.adjoint()).collect();
    let mut out = Vec::with_capacity(users * users);
    for u in 0..users {
        for (s, q) in grams.iter().enumerate() {
            out.push(moments.outer_expectation(u, dims.cell_of(s), q));
        }
    }
    out
}

/// `Y (I + Γ) Y^H`, the kernel contracted into `Λ`.
pub fn lambda_kernel(y: &CMat, gamma: &CMat) -> CMat {
    let n = gamma.nrows();
    let mut k = y * (gamma + CMat::identity(n, n)) * y.adjoint();
    linalg::make_hermitian(&mut k);
    k
}

/// Every `Λ_{j,s} = E[H_{s,j}^H Y_s (I+Γ_s) Y_s^H H_{s,j}]`, indexed `j·KL + s`.
pub fn compute_lambda<M: SecondMoments + ?Sized>(moments: &M, y: &[CMat], gamma: &[CMat]) -> Vec<CMat> {
    let dims = moments.dims();
    let users = dims.users();
    let kernels: Vec<CMat> = y.iter().zip(gamma).map(|(y, g)| lambda_kernel(y, g)).collect();
    let mut out = Vec::with_capacity(dims.l * users);
    for j in 0..dims.l {
        for (s, k) in kernels.iter().enumerate() {
            out.push(moments.inner_expectation(s, j, k));
        }
    }
    out
}

fn gaussian_parts(hbar: &CMat, w: &DMatrix<f64>, rho: f64) -> (CMat, DMatrix<f64>) {
    (hbar * c64(rho, 0.0), w.map(|x| (1.0 - rho * rho) * x * x))
}

/// `U` of one Gaussian link `ρH̄ + √(1-ρ²) W⊙X` with precoder `V`.
pub fn compute_u_gaussian(v: &CMat, hbar: &CMat, w: &DMatrix<f64>, rho: f64) -> CMat {
    let (mean, var) = gaussian_parts(hbar, w, rho);
    outer_structured(&(v * v.adjoint()), &mean, &var)
}

/// `Λ` of one Gaussian link with receiver `Y` and weight `Γ`.
pub fn compute_lambda_gaussian(y: &CMat, gamma: &CMat, hbar: &CMat, w: &DMatrix<f64>, rho: f64) -> CMat {
    let (mean, var) = gaussian_parts(hbar, w, rho);
    inner_structured(&lambda_kernel(y, gamma), &mean, &var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::StructuredMoments;
    use crate::network::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn deterministic_outer_is_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random(&mut rng, 2, 3);
        let v = random(&mut rng, 3, 2);
        let vec_h = linalg::vectorize(&h);
        let d = &vec_h * vec_h.adjoint();
        let q = &v * v.adjoint();
        let expected = &h * &q * h.adjoint();
        assert!(linalg::rel_frob_diff(&outer_dense(&q, &d, 2), &expected) < 1e-14);
        let k = random(&mut rng, 2, 2);
        let k = &k * k.adjoint();
        let expected = h.adjoint() * &k * &h;
        assert!(linalg::rel_frob_diff(&inner_dense(&k, &d, 2), &expected) < 1e-14);
    }

    #[test]
    fn white_moment_sums_power() {
        let v = CMat::from_element(2, 1, c64(std::f64::consts::FRAC_1_SQRT_2, 0.0));
        let u = outer_dense(&(&v * v.adjoint()), &CMat::identity(2, 2), 1);
        assert!((u[(0, 0)].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_precoder_gives_zero() {
        let d = CMat::identity(4, 4);
        assert_eq!(outer_dense(&CMat::zeros(2, 2), &d, 2), CMat::zeros(2, 2));
        assert_eq!(inner_dense(&CMat::zeros(2, 2), &d, 2), CMat::zeros(2, 2));
    }

    #[test]
    fn zero_mean_unit_mask_row_sums() {
        let hbar = CMat::zeros(2, 3);
        let w = DMatrix::from_element(2, 3, 1.0);
        let v = CMat::from_row_slice(3, 1, &[c64(1.0, 0.0), c64(0.0, 2.0), c64(0.5, 0.5)]);
        let u = compute_u_gaussian(&v, &hbar, &w, f64::EPSILON);
        let power = linalg::frob_sq(&v);
        assert!((u[(0, 0)].re - power).abs() < 1e-12);
        assert!((u[(1, 1)].re - power).abs() < 1e-12);
        assert!(u[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn zero_mean_identity_receiver_column_power() {
        let hbar = CMat::zeros(2, 3);
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.5, 1.0, 3.0]);
        let lam = compute_lambda_gaussian(&CMat::identity(2, 2), &CMat::zeros(2, 2), &hbar, &w, f64::EPSILON);
        for (c, expected) in [1.25, 5.0, 9.0].into_iter().enumerate() {
            assert!((lam[(c, c)].re - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn structured_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = Dims::new(1, 1, 4, 3);
        let mean = random(&mut rng, 3, 4);
        let var = DMatrix::from_fn(3, 4, |_, _| rng.random_range(0.0..2.0));
        let sm = StructuredMoments::new(dims, vec![mean.clone()], vec![var.clone()]).unwrap();
        let dense = sm.to_dense();
        let v = random(&mut rng, 4, 3);
        let q = &v * v.adjoint();
        assert!(linalg::rel_frob_diff(&outer_structured(&q, &mean, &var), &outer_dense(&q, &dense.d[0], 3)) < 1e-12);
        let y = random(&mut rng, 3, 3);
        let k = lambda_kernel(&y, &CMat::identity(3, 3));
        assert!(linalg::rel_frob_diff(&inner_structured(&k, &mean, &var), &inner_dense(&k, &dense.d[0], 3)) < 1e-12);
    }

    #[test]
    fn stacked_inner_sum_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = Dims::new(2, 2, 5, 2);
        let mean: Vec<CMat> = (0..dims.links()).map(|_| random(&mut rng, 2, 5)).collect();
        let var: Vec<DMatrix<f64>> = (0..dims.links())
            .map(|_| DMatrix::from_fn(2, 5, |_, _| rng.random_range(0.0..1.0)))
            .collect();
        let sm = StructuredMoments::new(dims, mean, var).unwrap();
        let dense = sm.to_dense();
        let kernels: Vec<Option<CMat>> = (0..dims.users())
            .map(|u| (u != 2).then(|| lambda_kernel(&random(&mut rng, 2, 2), &CMat::identity(2, 2))))
            .collect();
        for bs in 0..dims.l {
            let stacked = sm.inner_expectation_sum(bs, &kernels);
            let reference = dense.inner_expectation_sum(bs, &kernels);
            assert!(linalg::rel_frob_diff(&stacked, &reference) < 1e-12);
        }
    }
}
