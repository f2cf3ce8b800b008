//! Fading models and their channel moments.
//!
//! Both families share the structure `H = ρ·H̄ + √(1-ρ²)·R` where `R` has
//! independent zero-mean entries: complex Gaussian scaled by `W` for the
//! Rayleigh family, uniform-phase Nakagami-m magnitudes for the other.

mod jakes;
pub mod moments;

pub use jakes::{bessel_j0, jakes_rho};
pub use moments::{
    analytic_moments, empirical_moments, structured_moments, ChannelMoments, SecondMoments,
    StructuredMoments,
};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PrecodingError, Result};
use crate::linalg::{c64, CMat, Complex64};
use crate::network::topology::Topology;
use crate::network::{ChannelRealization, Dims};

/// Default Nakagami shape.
pub const DEFAULT_NAKAGAMI_M: f64 = 0.5;

/// Anything that can draw i.i.d. channel blocks.
pub trait ChannelSampler {
    fn dims(&self) -> Dims;
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization;
}

fn check_rho(dims: Dims, rho: &[f64]) -> Result<()> {
    if rho.len() != dims.users() {
        return Err(PrecodingError::Config(format!(
            "expected {} correlation coefficients, got {}",
            dims.users(),
            rho.len()
        )));
    }
    if let Some(r) = rho.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(PrecodingError::Config(format!("rho must lie in (0, 1], got {r}")));
    }
    Ok(())
}

fn check_links<T>(dims: Dims, what: &str, links: &[T], shape: impl Fn(&T) -> (usize, usize)) -> Result<()> {
    if links.len() != dims.links() {
        return Err(PrecodingError::Config(format!(
            "expected {} {what} links, got {}",
            dims.links(),
            links.len()
        )));
    }
    if let Some(bad) = links.iter().find(|m| shape(m) != (dims.mr, dims.mt)) {
        return Err(PrecodingError::Config(format!(
            "{what} link has shape {:?}, expected ({}, {})",
            shape(bad),
            dims.mr,
            dims.mt
        )));
    }
    Ok(())
}

fn standard_complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c64(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Rayleigh/Rician family: `H = ρ·H̄ + √(1-ρ²)·(W ⊙ X)`, `X` i.i.d. `CN(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFadingModel {
    pub dims: Dims,
    /// Static component per link.
    #[serde(with = "crate::linalg::serde_cmat::vec")]
    pub hbar: Vec<CMat>,
    /// Nonnegative scale mask per link.
    #[serde(with = "crate::linalg::serde_cmat::real_vec")]
    pub w: Vec<DMatrix<f64>>,
    /// Temporal correlation per user.
    pub rho: Vec<f64>,
}

impl GaussianFadingModel {
    pub fn new(dims: Dims, hbar: Vec<CMat>, w: Vec<DMatrix<f64>>, rho: Vec<f64>) -> Result<Self> {
        let model = GaussianFadingModel { dims, hbar, w, rho };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        check_links(self.dims, "static", &self.hbar, |m| m.shape())?;
        check_links(self.dims, "scale", &self.w, |m| m.shape())?;
        check_rho(self.dims, &self.rho)?;
        if self.w.iter().flat_map(|m| m.iter()).any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(PrecodingError::Config("scale mask entries must be finite and >= 0".into()));
        }
        if self.hbar.iter().any(|m| !crate::linalg::all_finite(m)) {
            return Err(PrecodingError::Input("static component has non-finite entries".into()));
        }
        Ok(())
    }

    /// Builds the model on a topology: `W` is filled with each link's large-scale
    /// amplitude and `H̄` is one draw of `W ⊙ X` from `rng`.
    pub fn from_topology<R: Rng + ?Sized>(topology: &Topology, rho: Vec<f64>, rng: &mut R) -> Result<Self> {
        let dims = topology.dims;
        let w: Vec<DMatrix<f64>> = topology
            .scale
            .iter()
            .map(|&s| DMatrix::from_element(dims.mr, dims.mt, s))
            .collect();
        let hbar = w
            .iter()
            .map(|wl| CMat::from_fn(dims.mr, dims.mt, |r, c| standard_complex_normal(rng) * wl[(r, c)]))
            .collect();
        Self::new(dims, hbar, w, rho)
    }
}

/// Non-Gaussian family: `H = ρ·H̄ + √(1-ρ²)·M`, each `M` entry with uniform
/// phase and `Nakagami(m, Ω)` magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NakagamiFadingModel {
    pub dims: Dims,
    #[serde(with = "crate::linalg::serde_cmat::vec")]
    pub hbar: Vec<CMat>,
    /// Shape parameter.
    pub m: f64,
    /// Mean power `E|M_{mn}|²` per link.
    #[serde(with = "crate::linalg::serde_cmat::real_vec")]
    pub omega: Vec<DMatrix<f64>>,
    pub rho: Vec<f64>,
}

impl NakagamiFadingModel {
    pub fn new(dims: Dims, hbar: Vec<CMat>, m: f64, omega: Vec<DMatrix<f64>>, rho: Vec<f64>) -> Result<Self> {
        let model = NakagamiFadingModel {
            dims,
            hbar,
            m,
            omega,
            rho,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        check_links(self.dims, "static", &self.hbar, |m| m.shape())?;
        check_links(self.dims, "mean-power", &self.omega, |m| m.shape())?;
        check_rho(self.dims, &self.rho)?;
        if !(self.m >= 0.5 && self.m.is_finite()) {
            return Err(PrecodingError::Config(format!(
                "Nakagami shape must be >= 0.5, got {}",
                self.m
            )));
        }
        if self.omega.iter().flat_map(|m| m.iter()).any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(PrecodingError::Config("mean-power entries must be finite and > 0".into()));
        }
        if self.hbar.iter().any(|m| !crate::linalg::all_finite(m)) {
            return Err(PrecodingError::Input("static component has non-finite entries".into()));
        }
        Ok(())
    }

    /// `Ω` is the squared large-scale amplitude of each link; `H̄` is one draw of `M`.
    pub fn from_topology<R: Rng + ?Sized>(topology: &Topology, m: f64, rho: Vec<f64>, rng: &mut R) -> Result<Self> {
        let dims = topology.dims;
        let omega: Vec<DMatrix<f64>> = topology
            .scale
            .iter()
            .map(|&s| DMatrix::from_element(dims.mr, dims.mt, s * s))
            .collect();
        let gamma = unit_gamma(m)?;
        let hbar = omega
            .iter()
            .map(|om| CMat::from_fn(dims.mr, dims.mt, |r, c| nakagami_entry(rng, &gamma, m, om[(r, c)])))
            .collect();
        Self::new(dims, hbar, m, omega, rho)
    }
}

fn unit_gamma(m: f64) -> Result<Gamma<f64>> {
    Gamma::new(m, 1.0).map_err(|e| PrecodingError::Config(format!("invalid Nakagami shape {m}: {e}")))
}

/// One uniform-phase entry with `|x|² ~ Gamma(m, Ω/m)`.
fn nakagami_entry<R: Rng + ?Sized>(rng: &mut R, unit: &Gamma<f64>, m: f64, omega: f64) -> Complex64 {
    let power = unit.sample(rng) * omega / m;
    // (0, 2π]
    let phase = std::f64::consts::TAU * (1.0 - rng.random::<f64>());
    Complex64::from_polar(power.sqrt(), phase)
}

/// Draws one block from the Gaussian model.
pub fn sample_gaussian<R: Rng + ?Sized>(model: &GaussianFadingModel, rng: &mut R) -> ChannelRealization {
    let dims = model.dims;
    let mut links = Vec::with_capacity(dims.links());
    for u in 0..dims.users() {
        let rho = model.rho[u];
        let spread = (1.0 - rho * rho).max(0.0).sqrt();
        for bs in 0..dims.l {
            let idx = dims.link(u, bs);
            let (hbar, w) = (&model.hbar[idx], &model.w[idx]);
            links.push(CMat::from_fn(dims.mr, dims.mt, |r, c| {
                let x = standard_complex_normal(rng);
                hbar[(r, c)] * rho + x * (spread * w[(r, c)])
            }));
        }
    }
    ChannelRealization::new(dims, links).expect("validated model yields a valid block")
}

/// Draws one block from the Nakagami model.
pub fn sample_nakagami<R: Rng + ?Sized>(model: &NakagamiFadingModel, rng: &mut R) -> ChannelRealization {
    let dims = model.dims;
    let unit = unit_gamma(model.m).expect("validated shape");
    let mut links = Vec::with_capacity(dims.links());
    for u in 0..dims.users() {
        let rho = model.rho[u];
        let spread = (1.0 - rho * rho).max(0.0).sqrt();
        for bs in 0..dims.l {
            let idx = dims.link(u, bs);
            let (hbar, om) = (&model.hbar[idx], &model.omega[idx]);
            links.push(CMat::from_fn(dims.mr, dims.mt, |r, c| {
                let x = nakagami_entry(rng, &unit, model.m, om[(r, c)]);
                hbar[(r, c)] * rho + x * spread
            }));
        }
    }
    ChannelRealization::new(dims, links).expect("validated model yields a valid block")
}

impl ChannelSampler for GaussianFadingModel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        sample_gaussian(self, rng)
    }
}

impl ChannelSampler for NakagamiFadingModel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        sample_nakagami(self, rng)
    }
}

/// Either fading family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FadingModel {
    Gaussian(GaussianFadingModel),
    Nakagami(NakagamiFadingModel),
}

impl FadingModel {
    pub fn rho(&self) -> &[f64] {
        match self {
            FadingModel::Gaussian(g) => &g.rho,
            FadingModel::Nakagami(n) => &n.rho,
        }
    }

    pub fn hbar(&self) -> &[CMat] {
        match self {
            FadingModel::Gaussian(g) => &g.hbar,
            FadingModel::Nakagami(n) => &n.hbar,
        }
    }
}

impl ChannelSampler for FadingModel {
    fn dims(&self) -> Dims {
        match self {
            FadingModel::Gaussian(g) => g.dims,
            FadingModel::Nakagami(n) => n.dims,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        match self {
            FadingModel::Gaussian(g) => sample_gaussian(g, rng),
            FadingModel::Nakagami(n) => sample_nakagami(n, rng),
        }
    }
}

/// A channel that never changes; handy for deterministic checks.
#[derive(Debug, Clone)]
pub struct FixedChannel(pub ChannelRealization);

impl ChannelSampler for FixedChannel {
    fn dims(&self) -> Dims {
        self.0.dims
    }

    fn sample<R: Rng + ?Sized>(&self, _rng: &mut R) -> ChannelRealization {
        self.0.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_1x2(rho: f64, w: [f64; 2]) -> GaussianFadingModel {
        let dims = Dims::new(1, 1, 2, 1);
        GaussianFadingModel::new(
            dims,
            vec![CMat::from_row_slice(1, 2, &[c64(1.0, 0.5), c64(-0.3, 0.2)])],
            vec![DMatrix::from_row_slice(1, 2, &w)],
            vec![rho],
        )
        .unwrap()
    }

    #[test]
    fn rho_one_returns_static_component() {
        let model = gaussian_1x2(1.0, [1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = sample_gaussian(&model, &mut rng);
        assert_eq!(h.link(0, 0), &model.hbar[0]);
    }

    #[test]
    fn zero_mask_scales_static_component() {
        let model = gaussian_1x2(0.6, [0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = sample_gaussian(&model, &mut rng);
        assert_eq!(h.link(0, 0), &(&model.hbar[0] * c64(0.6, 0.0)));
    }

    #[test]
    fn gaussian_entry_variance() {
        let rho = 0.6;
        let w = [0.7, 1.9];
        let model = gaussian_1x2(rho, w);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        for (col, &wc) in w.iter().enumerate() {
            let mean = model.hbar[0][(0, col)] * rho;
            let mut rng_col = rng.clone();
            let samples: Vec<f64> = (0..n)
                .map(|_| (sample_gaussian(&model, &mut rng_col).link(0, 0)[(0, col)] - mean).norm_sqr())
                .collect();
            let m = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let expected = (1.0 - rho * rho) * wc * wc;
            assert!((m - expected).abs() <= 3.0 * se, "col {col}: {m} vs {expected} (se {se})");
            rng = rng_col;
        }
    }

    fn nakagami_scalar(m: f64, omega: f64) -> NakagamiFadingModel {
        let dims = Dims::new(1, 1, 1, 1);
        // zero static part; ρ only has to be positive
        NakagamiFadingModel::new(
            dims,
            vec![CMat::zeros(1, 1)],
            m,
            vec![DMatrix::from_element(1, 1, omega)],
            vec![1e-9],
        )
        .unwrap()
    }

    fn stats(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn nakagami_moments() {
        let omega = 2.5;
        let model = nakagami_scalar(0.5, omega);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let draws: Vec<Complex64> = (0..n).map(|_| sample_nakagami(&model, &mut rng).link(0, 0)[(0, 0)]).collect();

        let (p, se) = stats(&draws.iter().map(|z| z.norm_sqr()).collect::<Vec<_>>());
        assert!((p - omega).abs() <= 3.0 * se, "{p} vs {omega}");

        let (re, se_re) = stats(&draws.iter().map(|z| z.re).collect::<Vec<_>>());
        let (im, se_im) = stats(&draws.iter().map(|z| z.im).collect::<Vec<_>>());
        assert!(re.abs() <= 3.0 * se_re && im.abs() <= 3.0 * se_im);
    }

    #[test]
    fn nakagami_mean_magnitude_at_half_shape() {
        let model = nakagami_scalar(0.5, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mags: Vec<f64> = (0..100_000)
            .map(|_| sample_nakagami(&model, &mut rng).link(0, 0)[(0, 0)].norm())
            .collect();
        let (m, se) = stats(&mags);
        // Γ(1)/Γ(1/2)·√(Ω/m) = √2/√π
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((m - expected).abs() <= 3.0 * se, "{m} vs {expected}");
    }

    #[test]
    fn invariants_are_enforced() {
        let dims = Dims::new(1, 1, 2, 1);
        let hbar = vec![CMat::zeros(1, 2)];
        let w = vec![DMatrix::from_element(1, 2, 1.0)];
        assert!(GaussianFadingModel::new(dims, hbar.clone(), w.clone(), vec![0.0]).is_err());
        assert!(GaussianFadingModel::new(dims, hbar.clone(), w.clone(), vec![1.1]).is_err());
        let neg = vec![DMatrix::from_element(1, 2, -1.0)];
        assert!(GaussianFadingModel::new(dims, hbar.clone(), neg, vec![0.5]).is_err());
        assert!(NakagamiFadingModel::new(dims, hbar.clone(), 0.4, w.clone(), vec![0.5]).is_err());
        let zero = vec![DMatrix::from_element(1, 2, 0.0)];
        assert!(NakagamiFadingModel::new(dims, hbar, 0.5, zero, vec![0.5]).is_err());
    }
}
