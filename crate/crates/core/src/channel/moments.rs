//! First and second channel moments.
//!
//! `D_{jk,ℓ} = E[vec(H) vec(H)^H]` uses column-major vectorization, so entry
//! `H[m, m']` sits at position `m'·M_r + m`. Every contraction in the solvers
//! relies on this layout.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChannelSampler, FadingModel};
use crate::error::{PrecodingError, Result};
use crate::fp::contraction;
use crate::linalg::{self, c64, CMat};
use crate::network::Dims;

/// Relative PSD slack on second moments (scaled by the trace).
pub const PSD_SLACK: f64 = 1e-9;

/// What the solvers need from the channel statistics.
///
/// Implementors expose the mean of every direct channel and the two
/// expectations `E[H Q H^H]` and `E[H^H K H]` for any link.
pub trait SecondMoments {
    fn dims(&self) -> Dims;

    /// `C_{jk} = E[H_{jk,j}]` for flattened user `u`.
    fn first_moment(&self, user: usize) -> &CMat;

    /// `E[H_{u,ℓ} Q H_{u,ℓ}^H]` for an `M_t × M_t` matrix `Q` (result `M_r × M_r`).
    fn outer_expectation(&self, user: usize, bs: usize, q: &CMat) -> CMat;

    /// `E[H_{u,ℓ}^H K H_{u,ℓ}]` for an `M_r × M_r` matrix `K` (result `M_t × M_t`).
    fn inner_expectation(&self, user: usize, bs: usize, k: &CMat) -> CMat;

    /// `Σ_u E[H_{u,ℓ}^H K_u H_{u,ℓ}]` over the users that carry a kernel.
    fn inner_expectation_sum(&self, bs: usize, kernels: &[Option<CMat>]) -> CMat {
        let mt = self.dims().mt;
        let mut total = CMat::zeros(mt, mt);
        for (u, k) in kernels.iter().enumerate() {
            if let Some(k) = k {
                total += self.inner_expectation(u, bs, k);
            }
        }
        linalg::make_hermitian(&mut total);
        total
    }

    /// Checks the moment invariants the solvers depend on.
    fn validate(&self) -> Result<()>;
}

/// Dense moments: `C` per user and a full `D` per link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMoments {
    pub dims: Dims,
    /// `C_{jk}`, `M_r × M_t`, per user.
    #[serde(with = "crate::linalg::serde_cmat::vec")]
    pub c: Vec<CMat>,
    /// `D_{jk,ℓ}`, `M_rM_t × M_rM_t`, indexed `u·L + ℓ`.
    #[serde(with = "crate::linalg::serde_cmat::vec")]
    pub d: Vec<CMat>,
}

impl ChannelMoments {
    pub fn new(dims: Dims, c: Vec<CMat>, d: Vec<CMat>) -> Result<Self> {
        let m = ChannelMoments { dims, c, d };
        m.check_shapes()?;
        Ok(m)
    }

    fn check_shapes(&self) -> Result<()> {
        let dims = self.dims;
        dims.validate()?;
        if self.c.len() != dims.users() || self.d.len() != dims.links() {
            return Err(PrecodingError::Config(format!(
                "moments hold {} first / {} second moments, expected {} / {}",
                self.c.len(),
                self.d.len(),
                dims.users(),
                dims.links()
            )));
        }
        if self.c.iter().any(|c| c.shape() != (dims.mr, dims.mt)) {
            return Err(PrecodingError::Config("first moment has wrong shape".into()));
        }
        let n = dims.vec_len();
        if self.d.iter().any(|d| d.shape() != (n, n)) {
            return Err(PrecodingError::Config(format!("second moment must be {n}x{n}")));
        }
        Ok(())
    }

    /// Rank-1 moments of a deterministic channel: `C = H_{jk,j}`, `D = vec(H)vec(H)^H`.
    pub fn deterministic(dims: Dims, links: &[CMat]) -> Result<Self> {
        let c = (0..dims.users()).map(|u| links[dims.link(u, dims.cell_of(u))].clone()).collect();
        let d = links
            .iter()
            .map(|h| {
                let v = linalg::vectorize(h);
                &v * v.adjoint()
            })
            .collect();
        Self::new(dims, c, d)
    }

    pub fn second_moment(&self, user: usize, bs: usize) -> &CMat {
        &self.d[self.dims.link(user, bs)]
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| PrecodingError::Serialization(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PrecodingError::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PrecodingError::io(path, e))?;
        let m: ChannelMoments =
            serde_json::from_str(&text).map_err(|e| PrecodingError::Serialization(e.to_string()))?;
        m.check_shapes()?;
        Ok(m)
    }
}

impl SecondMoments for ChannelMoments {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn first_moment(&self, user: usize) -> &CMat {
        &self.c[user]
    }

    fn outer_expectation(&self, user: usize, bs: usize, q: &CMat) -> CMat {
        contraction::outer_dense(q, self.second_moment(user, bs), self.dims.mr)
    }

    fn inner_expectation(&self, user: usize, bs: usize, k: &CMat) -> CMat {
        contraction::inner_dense(k, self.second_moment(user, bs), self.dims.mr)
    }

    /// Every `D` must be Hermitian PSD and every direct-link covariance
    /// `D_{jk,j} - vec(C)vec(C)^H` PSD, both within `PSD_SLACK·Tr(D)`.
    fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        let dims = self.dims;
        for u in 0..dims.users() {
            if !linalg::all_finite(&self.c[u]) {
                return Err(PrecodingError::Input(format!("first moment of user {u} is not finite")));
            }
            for bs in 0..dims.l {
                let d = self.second_moment(u, bs);
                if !linalg::all_finite(d) {
                    return Err(PrecodingError::Input(format!(
                        "second moment of link ({u}, {bs}) is not finite"
                    )));
                }
                let scale = linalg::real_trace(d).abs().max(f64::MIN_POSITIVE);
                let skew = linalg::frob(&(d - d.adjoint()));
                if skew > 1e-9 * linalg::frob(d).max(f64::MIN_POSITIVE) {
                    return Err(PrecodingError::Input(format!(
                        "second moment of link ({u}, {bs}) is not Hermitian"
                    )));
                }
                if !linalg::is_psd_within(d, PSD_SLACK * scale) {
                    return Err(PrecodingError::Input(format!(
                        "second moment of link ({u}, {bs}) is not positive semidefinite"
                    )));
                }
                if bs == dims.cell_of(u) {
                    let c = linalg::vectorize(&self.c[u]);
                    let cov = d - &c * c.adjoint();
                    if !linalg::is_psd_within(&cov, PSD_SLACK * scale) {
                        return Err(PrecodingError::Input(format!(
                            "second moment of user {u} does not dominate its first moment \
                             (D - vec(C)vec(C)^H is indefinite)"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mean plus independent zero-mean entries:
/// `D = vec(Ĥ)vec(Ĥ)^H + diag(vec(S))` with `Ĥ` the link mean and `S` the
/// per-entry variance. Both analytic fading families have this form, and the
/// contractions collapse to a couple of small matrix products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredMoments {
    pub dims: Dims,
    /// Mean `E[H]` per link.
    #[serde(with = "crate::linalg::serde_cmat::vec")]
    pub mean: Vec<CMat>,
    /// Entry variances `E|H - E H|²` per link.
    #[serde(with = "crate::linalg::serde_cmat::real_vec")]
    pub variance: Vec<DMatrix<f64>>,
}

impl StructuredMoments {
    pub fn new(dims: Dims, mean: Vec<CMat>, variance: Vec<DMatrix<f64>>) -> Result<Self> {
        dims.validate()?;
        if mean.len() != dims.links() || variance.len() != dims.links() {
            return Err(PrecodingError::Config(format!(
                "expected {} links of mean and variance",
                dims.links()
            )));
        }
        if mean.iter().any(|m| m.shape() != (dims.mr, dims.mt))
            || variance.iter().any(|m| m.shape() != (dims.mr, dims.mt))
        {
            return Err(PrecodingError::Config("mean/variance link has wrong shape".into()));
        }
        Ok(StructuredMoments { dims, mean, variance })
    }

    /// Zero-variance moments of a fixed channel set.
    pub fn deterministic(dims: Dims, links: Vec<CMat>) -> Result<Self> {
        let variance = vec![DMatrix::zeros(dims.mr, dims.mt); dims.links()];
        Self::new(dims, links, variance)
    }

    pub fn link_mean(&self, user: usize, bs: usize) -> &CMat {
        &self.mean[self.dims.link(user, bs)]
    }

    pub fn link_variance(&self, user: usize, bs: usize) -> &DMatrix<f64> {
        &self.variance[self.dims.link(user, bs)]
    }

    /// Expands to the dense `(C, D)` representation.
    pub fn to_dense(&self) -> ChannelMoments {
        let dims = self.dims;
        let c = (0..dims.users()).map(|u| self.first_moment(u).clone()).collect();
        let d = self
            .mean
            .iter()
            .zip(&self.variance)
            .map(|(m, s)| {
                let v = linalg::vectorize(m);
                let mut d = &v * v.adjoint();
                for (i, var) in s.iter().enumerate() {
                    d[(i, i)] += c64(*var, 0.0);
                }
                d
            })
            .collect();
        ChannelMoments { dims, c, d }
    }
}

impl SecondMoments for StructuredMoments {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn first_moment(&self, user: usize) -> &CMat {
        self.link_mean(user, self.dims.cell_of(user))
    }

    fn outer_expectation(&self, user: usize, bs: usize, q: &CMat) -> CMat {
        contraction::outer_structured(q, self.link_mean(user, bs), self.link_variance(user, bs))
    }

    fn inner_expectation(&self, user: usize, bs: usize, k: &CMat) -> CMat {
        contraction::inner_structured(k, self.link_mean(user, bs), self.link_variance(user, bs))
    }

    /// One stacked product `A^H G` with `A` the link means and `G` the
    /// kernels applied to them.
    fn inner_expectation_sum(&self, bs: usize, kernels: &[Option<CMat>]) -> CMat {
        let dims = self.dims;
        let active: Vec<(usize, &CMat)> = kernels.iter().enumerate().filter_map(|(u, k)| k.as_ref().map(|k| (u, k))).collect();
        let rows = active.len() * dims.mr;
        let mut a = CMat::zeros(rows, dims.mt);
        let mut g = CMat::zeros(rows, dims.mt);
        let mut diag = vec![0.0; dims.mt];
        for (i, &(u, k)) in active.iter().enumerate() {
            let mean = self.link_mean(u, bs);
            a.rows_mut(i * dims.mr, dims.mr).copy_from(mean);
            g.rows_mut(i * dims.mr, dims.mr).copy_from(&linalg::mul(k, mean));
            let var = self.link_variance(u, bs);
            for (m, d) in diag.iter_mut().enumerate() {
                *d += (0..dims.mr).map(|r| var[(r, m)] * k[(r, r)].re).sum::<f64>();
            }
        }
        let mut total = linalg::adjoint_mul(&a, &g);
        for (m, d) in diag.into_iter().enumerate() {
            total[(m, m)] += c64(d, 0.0);
        }
        linalg::make_hermitian(&mut total);
        total
    }

    fn validate(&self) -> Result<()> {
        if self.mean.iter().any(|m| !linalg::all_finite(m)) {
            return Err(PrecodingError::Input("link mean has non-finite entries".into()));
        }
        if self.variance.iter().flat_map(|v| v.iter()).any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(PrecodingError::Input("entry variances must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Closed-form moments of either fading family in structured form:
/// mean `ρ·H̄`, entry variance `(1-ρ²)·W²` (Gaussian) or `(1-ρ²)·Ω` (Nakagami).
pub fn structured_moments(model: &FadingModel) -> StructuredMoments {
    let dims = model.dims();
    let rho = model.rho();
    let (hbar, power): (&[CMat], Vec<DMatrix<f64>>) = match model {
        FadingModel::Gaussian(g) => (&g.hbar, g.w.iter().map(|w| w.map(|x| x * x)).collect()),
        FadingModel::Nakagami(n) => (&n.hbar, n.omega.clone()),
    };
    let mut mean = Vec::with_capacity(dims.links());
    let mut variance = Vec::with_capacity(dims.links());
    for u in 0..dims.users() {
        let r = rho[u];
        for bs in 0..dims.l {
            let idx = dims.link(u, bs);
            mean.push(&hbar[idx] * c64(r, 0.0));
            variance.push(&power[idx] * (1.0 - r * r));
        }
    }
    StructuredMoments::new(dims, mean, variance).expect("model dims are valid")
}

/// Closed-form dense moments `C = ρH̄`, `D = vec(ρH̄)vec(ρH̄)^H + (1-ρ²)·diag(vec(S))`.
pub fn analytic_moments(model: &FadingModel) -> ChannelMoments {
    structured_moments(model).to_dense()
}

/// Sample averages of `H` and `vec(H)vec(H)^H` over `n_samples` blocks.
///
/// Sample `i` uses the ChaCha stream `i` of `seed`. `D` is symmetrized to be
/// exactly Hermitian. Fewer samples than `M_r·M_t` leave `D` rank-deficient;
/// that is reported as a warning only.
pub fn empirical_moments<S: ChannelSampler>(sampler: &S, n_samples: usize, seed: u64) -> ChannelMoments {
    let dims = sampler.dims();
    let n = dims.vec_len();
    if n_samples < n {
        log::warn!(
            "{n_samples} samples for {n}-dimensional second moments; D will be rank-deficient"
        );
    }
    let mut sum_h = vec![CMat::zeros(dims.mr, dims.mt); dims.links()];
    let mut sum_d = vec![CMat::zeros(n, n); dims.links()];
    for i in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let block = sampler.sample(&mut rng);
        for (idx, h) in block.links().iter().enumerate() {
            sum_h[idx] += h;
            let v = linalg::vectorize(h);
            sum_d[idx].ger(c64(1.0, 0.0), &v, &v.conjugate(), c64(1.0, 0.0));
        }
    }
    let scale = c64(1.0 / n_samples.max(1) as f64, 0.0);
    let c = (0..dims.users())
        .map(|u| &sum_h[dims.link(u, dims.cell_of(u))] * scale)
        .collect();
    let d = sum_d
        .into_iter()
        .map(|mut d| {
            d *= scale;
            linalg::make_hermitian(&mut d);
            d
        })
        .collect();
    ChannelMoments { dims, c, d }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{FixedChannel, GaussianFadingModel};
    use crate::network::ChannelRealization;

    fn gaussian(rho: f64, hbar: &[(f64, f64)], w: &[f64]) -> FadingModel {
        let dims = Dims::new(1, 1, hbar.len(), 1);
        FadingModel::Gaussian(
            GaussianFadingModel::new(
                dims,
                vec![CMat::from_row_slice(1, hbar.len(), &hbar.iter().map(|&(r, i)| c64(r, i)).collect::<Vec<_>>())],
                vec![DMatrix::from_row_slice(1, w.len(), w)],
                vec![rho],
            )
            .unwrap(),
        )
    }

    #[test]
    fn rho_one_is_rank_one() {
        let m = analytic_moments(&gaussian(1.0, &[(1.0, 2.0), (0.5, -1.0)], &[1.0, 1.0]));
        let v = linalg::vectorize(&m.c[0]);
        assert!(linalg::rel_frob_diff(&m.d[0], &(&v * v.adjoint())) < 1e-15);
        let ev = linalg::hermitian_eigenvalues(&m.d[0]);
        assert!(ev[0].abs() < 1e-12);
    }

    #[test]
    fn white_second_moment_in_small_rho_limit() {
        let m = analytic_moments(&gaussian(1e-9, &[(0.0, 0.0), (0.0, 0.0)], &[1.0, 1.0]));
        assert!(linalg::rel_frob_diff(&m.d[0], &CMat::identity(2, 2)) < 1e-15);
    }

    #[test]
    fn one_by_two_hand_evaluation() {
        let m = analytic_moments(&gaussian(0.6, &[(1.0, 0.0), (0.0, 0.0)], &[0.0, 1.0]));
        assert!(linalg::rel_frob_diff(&m.c[0], &CMat::from_row_slice(1, 2, &[c64(0.6, 0.0), c64(0.0, 0.0)])) < 1e-15);
        let expected = CMat::from_row_slice(2, 2, &[c64(0.36, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(0.64, 0.0)]);
        assert!(linalg::rel_frob_diff(&m.d[0], &expected) < 1e-15);
        m.validate().unwrap();
    }

    #[test]
    fn covariance_is_diagonal() {
        let m = analytic_moments(&gaussian(0.3, &[(1.0, 2.0), (0.5, -1.0), (0.1, 0.0)], &[1.0, 0.2, 3.0]));
        let v = linalg::vectorize(&m.c[0]);
        let cov = &m.d[0] - &v * v.adjoint();
        let tr = linalg::real_trace(&m.d[0]);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(cov[(i, j)].norm() <= 1e-12 * tr);
                }
            }
        }
    }

    #[test]
    fn empirical_equals_analytic_for_fixed_channel() {
        let dims = Dims::new(1, 1, 2, 2);
        let h = CMat::from_fn(2, 2, |r, c| c64(r as f64 + 0.5, c as f64 - 1.0));
        let fixed = FixedChannel(ChannelRealization::new(dims, vec![h.clone()]).unwrap());
        let emp = empirical_moments(&fixed, 10, 1);
        let det = ChannelMoments::deterministic(dims, &[h]).unwrap();
        assert!(linalg::rel_frob_diff(&emp.c[0], &det.c[0]) < 1e-15);
        assert!(linalg::rel_frob_diff(&emp.d[0], &det.d[0]) < 1e-15);
    }

    #[test]
    fn empirical_moments_are_psd() {
        let model = gaussian(0.5, &[(1.0, 0.0), (0.0, 1.0), (0.3, 0.3)], &[1.0, 0.5, 2.0]);
        let emp = empirical_moments(&model, 50, 9);
        emp.validate().unwrap();
    }

    #[test]
    fn validate_rejects_dominated_first_moment() {
        let dims = Dims::new(1, 1, 1, 1);
        let m = ChannelMoments::new(dims, vec![CMat::from_element(1, 1, c64(2.0, 0.0))], vec![CMat::identity(1, 1)]).unwrap();
        assert!(matches!(m.validate(), Err(PrecodingError::Input(_))));
    }

    #[test]
    fn json_round_trip() {
        let m = analytic_moments(&gaussian(0.7, &[(1.0, -2.0), (0.5, 0.25)], &[1.0, 3.0]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("moments.json");
        m.save_json(&path).unwrap();
        assert_eq!(ChannelMoments::load_json(&path).unwrap(), m);
    }
}
