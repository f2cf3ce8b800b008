//! Network data model and per-block rate evaluation.
//!
//! Users are flattened as `u = j·K + k` for user `k` of cell `j`; per-link
//! containers are flattened as `u·L + ℓ` for the link from BS `ℓ` to user `u`.

pub mod monte_carlo;
pub mod topology;

use serde::{Deserialize, Serialize};

use crate::error::{PrecodingError, Result};
use crate::linalg::{self, c64, CMat};

/// Slack allowed on the per-BS power budget.
pub const POWER_SLACK: f64 = 1e-9;

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Number of cells (one BS each).
    pub l: usize,
    /// Users per cell.
    pub k: usize,
    /// Transmit antennas per BS.
    pub mt: usize,
    /// Receive antennas per user.
    pub mr: usize,
}

impl Dims {
    pub fn new(l: usize, k: usize, mt: usize, mr: usize) -> Self {
        Dims { l, k, mt, mr }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.k == 0 || self.mr == 0 {
            return Err(PrecodingError::Config(format!(
                "dimensions must be positive, got {self:?}"
            )));
        }
        if self.mt < self.mr {
            return Err(PrecodingError::Config(format!(
                "need mt >= mr, got mt={} mr={}",
                self.mt, self.mr
            )));
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.l * self.k
    }

    pub fn links(&self) -> usize {
        self.users() * self.l
    }

    #[inline]
    pub fn user(&self, cell: usize, k: usize) -> usize {
        cell * self.k + k
    }

    #[inline]
    pub fn cell_of(&self, user: usize) -> usize {
        user / self.k
    }

    #[inline]
    pub fn link(&self, user: usize, bs: usize) -> usize {
        user * self.l + bs
    }

    /// Users served by BS `cell`.
    pub fn cell_users(&self, cell: usize) -> std::ops::Range<usize> {
        cell * self.k..(cell + 1) * self.k
    }

    /// Size of `vec(H)` for one link.
    pub fn vec_len(&self) -> usize {
        self.mt * self.mr
    }
}

/// Static network parameters shared by every solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub dims: Dims,
    /// Per-BS power budget (W).
    pub power: f64,
    /// Noise power (W).
    pub sigma2: f64,
    /// Rate weight per user, indexed by flattened user.
    pub weights: Vec<f64>,
}

impl NetworkConfig {
    /// Unit weights for every user.
    pub fn new(dims: Dims, power: f64, sigma2: f64) -> Result<Self> {
        let cfg = NetworkConfig {
            dims,
            power,
            sigma2,
            weights: vec![1.0; dims.users()],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = weights;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(PrecodingError::Config(format!(
                "power budget must be positive, got {}",
                self.power
            )));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(PrecodingError::Config(format!(
                "noise power must be positive, got {}",
                self.sigma2
            )));
        }
        if self.weights.len() != self.dims.users() {
            return Err(PrecodingError::Config(format!(
                "expected {} weights, got {}",
                self.dims.users(),
                self.weights.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(PrecodingError::Config(format!(
                "rate weights must be finite and nonnegative, got {w}"
            )));
        }
        Ok(())
    }

    /// Diagonal jitter used when an interference-plus-noise factorization fails.
    pub fn jitter(&self) -> f64 {
        1e-12 * self.sigma2
    }
}

/// One block of channel matrices `H_{jk,ℓ}` (each `mr × mt`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub dims: Dims,
    links: Vec<CMat>,
}

impl ChannelRealization {
    pub fn new(dims: Dims, links: Vec<CMat>) -> Result<Self> {
        if links.len() != dims.links() {
            return Err(PrecodingError::Config(format!(
                "expected {} channel links, got {}",
                dims.links(),
                links.len()
            )));
        }
        for (i, h) in links.iter().enumerate() {
            if h.shape() != (dims.mr, dims.mt) {
                return Err(PrecodingError::Config(format!(
                    "link {i} has shape {:?}, expected ({}, {})",
                    h.shape(),
                    dims.mr,
                    dims.mt
                )));
            }
            if !linalg::all_finite(h) {
                return Err(PrecodingError::Input(format!("link {i} has non-finite entries")));
            }
        }
        Ok(ChannelRealization { dims, links })
    }

    pub fn link(&self, user: usize, bs: usize) -> &CMat {
        &self.links[self.dims.link(user, bs)]
    }

    /// All `L` channels into `user`, ordered by BS.
    pub fn user_links(&self, user: usize) -> &[CMat] {
        let l = self.dims.l;
        &self.links[user * l..(user + 1) * l]
    }

    pub fn links(&self) -> &[CMat] {
        &self.links
    }
}

/// Precoders `V_{jk}` (each `mt × mr`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecoderSet {
    pub dims: Dims,
    #[serde(with = "crate::linalg::serde_cmat::vec")]
    pub v: Vec<CMat>,
}

impl PrecoderSet {
    pub fn new(dims: Dims, v: Vec<CMat>) -> Result<Self> {
        if v.len() != dims.users() {
            return Err(PrecodingError::Config(format!(
                "expected {} precoders, got {}",
                dims.users(),
                v.len()
            )));
        }
        if let Some((i, m)) = v.iter().enumerate().find(|(_, m)| m.shape() != (dims.mt, dims.mr)) {
            return Err(PrecodingError::Config(format!(
                "precoder {i} has shape {:?}, expected ({}, {})",
                m.shape(),
                dims.mt,
                dims.mr
            )));
        }
        Ok(PrecoderSet { dims, v })
    }

    pub fn zeros(dims: Dims) -> Self {
        PrecoderSet {
            dims,
            v: vec![CMat::zeros(dims.mt, dims.mr); dims.users()],
        }
    }

    /// `Σ_k Tr(V_{jk} V_{jk}^H)` for BS `cell`.
    pub fn cell_power(&self, cell: usize) -> f64 {
        self.dims.cell_users(cell).map(|u| linalg::frob_sq(&self.v[u])).sum()
    }

    pub fn is_feasible(&self, power: f64) -> bool {
        (0..self.dims.l).all(|j| self.cell_power(j) <= power * (1.0 + POWER_SLACK))
    }

    /// Fails if any BS exceeds its budget beyond [`POWER_SLACK`].
    pub fn check_feasible(&self, power: f64) -> Result<()> {
        for j in 0..self.dims.l {
            let p = self.cell_power(j);
            if p > power * (1.0 + POWER_SLACK) {
                return Err(PrecodingError::Input(format!(
                    "BS {j} transmits {p} W, above the budget {power} W"
                )));
            }
        }
        Ok(())
    }
}

/// Rate (nats) of `user` for one block.
///
/// `h_user` holds the `L` channels into the user, ordered by BS. The
/// interference-plus-noise covariance `F` is factored once and
/// `log|I + S^H F^{-1} S|` evaluated with `S = H_{jk,j} V_{jk}`, which equals
/// `log|I + S S^H F^{-1}|`.
pub fn instantaneous_rate(
    h_user: &[CMat],
    precoders: &PrecoderSet,
    user: usize,
    sigma2: f64,
) -> Result<f64> {
    let dims = precoders.dims;
    if h_user.len() != dims.l {
        return Err(PrecodingError::Config(format!(
            "expected {} channels into user {user}, got {}",
            dims.l,
            h_user.len()
        )));
    }
    if user >= dims.users() {
        return Err(PrecodingError::Config(format!("user index {user} out of range")));
    }
    if !(sigma2 > 0.0) {
        return Err(PrecodingError::Config(format!("noise power must be positive, got {sigma2}")));
    }
    for h in h_user {
        if h.shape() != (dims.mr, dims.mt) {
            return Err(PrecodingError::Config(format!(
                "channel shape {:?} does not match precoder dims ({}, {})",
                h.shape(),
                dims.mr,
                dims.mt
            )));
        }
        if !linalg::all_finite(h) {
            return Err(PrecodingError::Input("non-finite channel entry".into()));
        }
    }

    let mut f = CMat::identity(dims.mr, dims.mr) * linalg::c64(sigma2, 0.0);
    let mut signal = None;
    for (bs, h) in h_user.iter().enumerate() {
        for s in dims.cell_users(bs) {
            let hv = h * &precoders.v[s];
            if s == user {
                signal = Some(hv);
            } else {
                f += &hv * hv.adjoint();
            }
        }
    }
    let signal = signal.expect("serving precoder visited");

    rate_from_covariances(&f, &signal, 1e-12 * sigma2)
}

/// `Σ ω_{jk} R_{jk}` for one block.
pub fn weighted_sum_rate(
    channel: &ChannelRealization,
    precoders: &PrecoderSet,
    cfg: &NetworkConfig,
) -> Result<f64> {
    RateScorer::new(cfg, precoders)?.weighted_sum_rate(channel)
}

/// Scores many blocks against one precoder set.
///
/// Each cell's precoders are stacked once into `W_ℓ = [V_{ℓ1} … V_{ℓK}]`.
/// Per block, the channels from BS `ℓ` to every user are stacked into one
/// `(KL·M_r) × M_t` matrix, so all received matrices come from `L` products.
/// Real and imaginary parts are kept in separate buffers so the products
/// run over contiguous columns.
pub struct RateScorer<'a> {
    cfg: &'a NetworkConfig,
    /// `(re, im)` of each `W_ℓ`, column-major.
    stacked: Vec<(Vec<f64>, Vec<f64>)>,
    from_bs: (Vec<f64>, Vec<f64>),
    /// `(re, im)` of `[H_{u,ℓ} W_ℓ]_u` for every `ℓ`, each `(KL·M_r) × K M_r`.
    received: (Vec<f64>, Vec<f64>),
}

impl<'a> RateScorer<'a> {
    pub fn new(cfg: &'a NetworkConfig, precoders: &PrecoderSet) -> Result<Self> {
        let dims = cfg.dims;
        if precoders.dims != dims {
            return Err(PrecodingError::Config("precoder and network dimensions differ".into()));
        }
        let stacked = (0..dims.l)
            .map(|j| {
                let cell: Vec<_> = dims.cell_users(j).flat_map(|u| precoders.v[u].iter().copied()).collect();
                (cell.iter().map(|z| z.re).collect(), cell.iter().map(|z| z.im).collect())
            })
            .collect();
        let rows = dims.users() * dims.mr;
        let received = dims.l * rows * dims.k * dims.mr;
        Ok(RateScorer {
            cfg,
            stacked,
            from_bs: (vec![0.0; rows * dims.mt], vec![0.0; rows * dims.mt]),
            received: (vec![0.0; received], vec![0.0; received]),
        })
    }

    pub fn weighted_sum_rate(&mut self, channel: &ChannelRealization) -> Result<f64> {
        let dims = self.cfg.dims;
        if channel.dims != dims {
            return Err(PrecodingError::Config("channel and network dimensions differ".into()));
        }
        let (mr, mt, users) = (dims.mr, dims.mt, dims.users());
        let rows = users * mr;
        let width = dims.k * mr;
        for (bs, (w_re, w_im)) in self.stacked.iter().enumerate() {
            let (a_re, a_im) = &mut self.from_bs;
            for u in 0..users {
                let h = channel.link(u, bs);
                for t in 0..mt {
                    for r in 0..mr {
                        let z = h[(r, t)];
                        a_re[t * rows + u * mr + r] = z.re;
                        a_im[t * rows + u * mr + r] = z.im;
                    }
                }
            }
            let block = bs * rows * width..(bs + 1) * rows * width;
            let out_re = &mut self.received.0[block.clone()];
            let out_im = &mut self.received.1[block];
            let columns = out_re.chunks_exact_mut(rows).zip(out_im.chunks_exact_mut(rows));
            for ((o_re, o_im), (x_re, x_im)) in columns.zip(w_re.chunks_exact(mt).zip(w_im.chunks_exact(mt))) {
                o_re.fill(0.0);
                o_im.fill(0.0);
                let inputs = a_re.chunks_exact(rows).zip(a_im.chunks_exact(rows));
                for ((c_re, c_im), (&x_re, &x_im)) in inputs.zip(x_re.iter().zip(x_im)) {
                    for (((o_re, o_im), &c_re), &c_im) in o_re.iter_mut().zip(o_im.iter_mut()).zip(c_re).zip(c_im) {
                        *o_re += c_re * x_re - c_im * x_im;
                        *o_im += c_re * x_im + c_im * x_re;
                    }
                }
            }
        }

        let (out_re, out_im) = &self.received;
        let mut total = 0.0;
        let mut acc = vec![c64(0.0, 0.0); mr * mr];
        for u in 0..users {
            let weight = self.cfg.weights[u];
            if weight == 0.0 {
                continue;
            }
            let own_bs = dims.cell_of(u);
            let own_col = (u % dims.k) * mr;
            let user_rows = u * mr..(u + 1) * mr;
            acc.fill(c64(0.0, 0.0));
            let columns = out_re.chunks_exact(rows).zip(out_im.chunks_exact(rows)).enumerate();
            for (col, (x_re, x_im)) in columns {
                let (bs, s) = (col / width, col % width);
                if bs == own_bs && (own_col..own_col + mr).contains(&s) {
                    continue;
                }
                let (x_re, x_im) = (&x_re[user_rows.clone()], &x_im[user_rows.clone()]);
                for c in 0..mr {
                    for r in c..mr {
                        acc[c * mr + r] += c64(
                            x_re[r] * x_re[c] + x_im[r] * x_im[c],
                            x_im[r] * x_re[c] - x_re[r] * x_im[c],
                        );
                    }
                }
            }
            for i in 0..mr {
                acc[i * mr + i].re += self.cfg.sigma2;
            }
            // log|I + S^H F^{-1} S| = log|F + S S^H| - log|F|
            let mut factor = acc.clone();
            let mut jitter = 0.0;
            let log_f = match lower_logdet(&mut factor, mr) {
                Some(v) => v,
                None => {
                    jitter = self.cfg.jitter();
                    factor.copy_from_slice(&acc);
                    for i in 0..mr {
                        factor[i * mr + i].re += jitter;
                    }
                    lower_logdet(&mut factor, mr).ok_or_else(|| {
                        PrecodingError::Numerical(format!(
                            "interference-plus-noise covariance: {mr}x{mr} matrix is not Hermitian positive definite (jitter {jitter:e})"
                        ))
                    })?
                }
            };
            let signal_col = |c: usize| {
                let i = (own_bs * width + own_col + c) * rows + u * mr;
                (&out_re[i..i + mr], &out_im[i..i + mr])
            };
            for c in 0..mr {
                acc[c * mr + c].re += jitter;
                for k in 0..mr {
                    let (s_re, s_im) = signal_col(k);
                    for r in c..mr {
                        acc[c * mr + r] += c64(
                            s_re[r] * s_re[c] + s_im[r] * s_im[c],
                            s_im[r] * s_re[c] - s_re[r] * s_im[c],
                        );
                    }
                }
            }
            let log_total = lower_logdet(&mut acc, mr)
                .ok_or_else(|| PrecodingError::Numerical("received covariance is not positive definite".into()))?;
            total += weight * (log_total - log_f).max(0.0);
        }
        Ok(total)
    }
}

/// `log|A|` for Hermitian positive definite `A` whose lower triangle is
/// stored column-major in `a`; factors `a` in place.
fn lower_logdet(a: &mut [linalg::Complex64], n: usize) -> Option<f64> {
    let mut logdet = 0.0;
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= a[k * n + j].norm_sqr();
        }
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        let d = d.sqrt();
        logdet += 2.0 * d.ln();
        a[j * n + j] = c64(d, 0.0);
        for i in j + 1..n {
            let mut s = a[j * n + i];
            for k in 0..j {
                s -= a[k * n + i] * a[k * n + j].conj();
            }
            a[j * n + i] = s / d;
        }
    }
    Some(logdet)
}

/// `log|I + S^H F^{-1} S|` for interference-plus-noise `F` and signal `S`.
fn rate_from_covariances(f: &CMat, signal: &CMat, jitter: f64) -> Result<f64> {
    let ch = linalg::factor_hpd(f, jitter, "interference-plus-noise covariance")?;
    let x = ch.l().solve_lower_triangular(signal).ok_or_else(|| {
        PrecodingError::Numerical("singular Cholesky factor of interference covariance".into())
    })?;
    let g = CMat::identity(signal.ncols(), signal.ncols()) + x.adjoint() * x;
    let rate = linalg::logdet_hpd(&g, 0.0, "rate determinant")?;
    Ok(rate.max(0.0))
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watt_to_dbm(watt: f64) -> f64 {
    10.0 * watt.log10() + 30.0
}
