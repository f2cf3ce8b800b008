//! Matrix fractional programming solver (Algorithm 1).
//!
//! Each iteration evaluates the moment contractions `U` at the current
//! precoders, sets the receivers `Y` and weights `Γ` to their closed-form
//! optima, contracts `Λ`, and solves one regularized least-squares problem
//! per cell for the new precoders, with the power multiplier found by
//! bisection. The surrogate `f̂` evaluated at `(V, Γ*, Y*)` never decreases.

pub mod contraction;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::channel::SecondMoments;
use crate::error::{PrecodingError, Result};
use crate::linalg::{self, c64, CMat};
use crate::network::{NetworkConfig, PrecoderSet};

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITERS: usize = 200;
/// Relative power residual at which the multiplier bisection stops.
pub const BISECTION_TOL: f64 = 1e-8;
pub const BISECTION_MAX_STEPS: usize = 200;

/// When to stop iterating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Stop once `|f̂_t - f̂_{t-1}| < tol·|f̂_{t-1}|`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(PrecodingError::Config(format!("tolerance must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }

    pub(crate) fn converged(&self, previous: f64, current: f64) -> bool {
        (current - previous).abs() < self.tol * previous.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

/// Receivers `Y_{jk}` and weights `Γ_{jk}` (both `M_r × M_r`), per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxState {
    #[serde(with = "crate::linalg::serde_cmat::vec")]
    pub gamma: Vec<CMat>,
    #[serde(with = "crate::linalg::serde_cmat::vec")]
    pub y: Vec<CMat>,
}

/// Objective history of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    /// `f̂` at the initial point followed by one value per iteration.
    pub fhat: Vec<f64>,
    /// Wall time of each iteration.
    pub iter_times: Vec<Duration>,
    pub iterations: usize,
    pub stop_reason: StopReason,
}

impl SolveTrace {
    pub fn final_fhat(&self) -> f64 {
        *self.fhat.last().expect("trace holds the initial value")
    }

    pub fn median_iter_time(&self) -> Option<Duration> {
        let mut t = self.iter_times.clone();
        if t.is_empty() {
            return None;
        }
        t.sort();
        let n = t.len();
        Some(if n % 2 == 1 { t[n / 2] } else { (t[n / 2 - 1] + t[n / 2]) / 2 })
    }

    pub fn mean_iter_time(&self) -> Option<Duration> {
        if self.iter_times.is_empty() {
            None
        } else {
            Some(self.iter_times.iter().sum::<Duration>() / self.iter_times.len() as u32)
        }
    }

    /// Largest relative drop `(f̂_{t-1} - f̂_t) / |f̂_{t-1}|` along the trace.
    pub fn worst_relative_decrease(&self) -> f64 {
        self.fhat
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Result of [`run_algorithm1`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub precoders: PrecoderSet,
    pub aux: AuxState,
    pub trace: SolveTrace,
}

/// What an observer sees after each iteration (iteration 0 is the initial point).
pub struct IterateView<'a> {
    pub iteration: usize,
    pub precoders: &'a PrecoderSet,
    pub aux: &'a AuxState,
    pub fhat: f64,
}

/// Everything that follows from the precoders alone.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub aux: AuxState,
    pub fhat: f64,
}

pub(crate) fn evaluate<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    precoders: &PrecoderSet,
) -> Result<Evaluation> {
    let totals = interference_totals(moments, precoders);
    let y = update_y(moments, cfg, precoders, &totals)?;
    let gamma = update_gamma(moments, cfg, precoders, &totals)?;
    let aux = AuxState { gamma, y };
    let fhat = objective_fhat(moments, cfg, precoders, &aux, &totals)?;
    Ok(Evaluation { aux, fhat })
}

/// `√(P/(K·M_r))` times the `M_r` dominant right singular vectors of each `C_{jk}`.
pub fn initial_precoders<M: SecondMoments + ?Sized>(moments: &M, cfg: &NetworkConfig) -> PrecoderSet {
    let dims = cfg.dims;
    let amp = (cfg.power / (dims.k * dims.mr) as f64).sqrt();
    let v = (0..dims.users())
        .map(|u| {
            let svd = moments.first_moment(u).clone().svd(false, true);
            let vt = svd.v_t.expect("right singular vectors requested");
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
            let mut v = CMat::zeros(dims.mt, dims.mr);
            for (col, &i) in order.iter().take(dims.mr).enumerate() {
                for r in 0..dims.mt {
                    v[(r, col)] = vt[(i, r)].conj() * amp;
                }
            }
            v
        })
        .collect();
    PrecoderSet { dims, v }
}

/// `Σ_{(ℓ,s)} U_{jk,ℓs}` for every user, aggregating the precoder Gram
/// matrices of each cell before contracting.
pub fn interference_totals<M: SecondMoments + ?Sized>(moments: &M, precoders: &PrecoderSet) -> Vec<CMat> {
    let dims = moments.dims();
    let cell_grams: Vec<CMat> = (0..dims.l)
        .map(|bs| {
            let mut w = CMat::zeros(dims.mt, dims.k * dims.mr);
            for (i, s) in dims.cell_users(bs).enumerate() {
                w.columns_mut(i * dims.mr, dims.mr).copy_from(&precoders.v[s]);
            }
            linalg::mul_adjoint(&w, &w)
        })
        .collect();
    (0..dims.users())
        .map(|u| {
            let mut t = CMat::zeros(dims.mr, dims.mr);
            for (bs, q) in cell_grams.iter().enumerate() {
                t += moments.outer_expectation(u, bs, q);
            }
            linalg::make_hermitian(&mut t);
            t
        })
        .collect()
}

fn noise_plus(t: &CMat, sigma2: f64) -> CMat {
    let mut m = t.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += c64(sigma2, 0.0);
    }
    m
}

/// `Y_{jk} = (σ²I + Σ U)^{-1} C_{jk} V_{jk}`.
pub fn update_y<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    precoders: &PrecoderSet,
    totals: &[CMat],
) -> Result<Vec<CMat>> {
    (0..cfg.dims.users())
        .map(|u| {
            let s = moments.first_moment(u) * &precoders.v[u];
            let ch = linalg::factor_hpd(&noise_plus(&totals[u], cfg.sigma2), cfg.jitter(), "receiver covariance")?;
            Ok(ch.solve(&s))
        })
        .collect()
}

/// `Γ_{jk} = V^H C^H (σ²I + Σ U - C V V^H C^H)^{-1} C V`.
pub fn update_gamma<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    precoders: &PrecoderSet,
    totals: &[CMat],
) -> Result<Vec<CMat>> {
    (0..cfg.dims.users())
        .map(|u| {
            let s = moments.first_moment(u) * &precoders.v[u];
            let bracket = noise_plus(&totals[u], cfg.sigma2) - &s * s.adjoint();
            let ch = linalg::factor_hpd(&bracket, cfg.jitter(), "interference covariance").map_err(|_| {
                PrecodingError::Numerical(format!(
                    "interference covariance of user {u} is not positive definite; \
                     the second moments do not dominate the first moments"
                ))
            })?;
            let mut g = s.adjoint() * ch.solve(&s);
            linalg::make_hermitian(&mut g);
            Ok(g)
        })
        .collect()
}

/// `Ξ_j = Σ_{(ℓ,s)} ω_{ℓs} Λ_{j,ℓs}` for every cell.
pub fn compute_xi<M: SecondMoments + ?Sized>(moments: &M, cfg: &NetworkConfig, aux: &AuxState) -> Vec<CMat> {
    let dims = cfg.dims;
    let kernels: Vec<Option<CMat>> = (0..dims.users())
        .map(|s| {
            (cfg.weights[s] != 0.0)
                .then(|| contraction::lambda_kernel(&aux.y[s], &aux.gamma[s]) * c64(cfg.weights[s], 0.0))
        })
        .collect();
    (0..dims.l).map(|j| moments.inner_expectation_sum(j, &kernels)).collect()
}

/// `ω_{jk} C_{jk}^H Y_{jk} (I + Γ_{jk})`, the linear term of each user's precoder subproblem.
pub fn precoder_targets<M: SecondMoments + ?Sized>(moments: &M, cfg: &NetworkConfig, aux: &AuxState) -> Vec<CMat> {
    let mr = cfg.dims.mr;
    (0..cfg.dims.users())
        .map(|u| {
            let ig = &aux.gamma[u] + CMat::identity(mr, mr);
            moments.first_moment(u).adjoint() * &aux.y[u] * ig * c64(cfg.weights[u], 0.0)
        })
        .collect()
}

/// Solves `(Ξ + ηI) V = B` for a stacked cell right-hand side; `None` if not positive definite.
fn regularized_solve(xi: &CMat, eta: f64, b: &CMat) -> Option<CMat> {
    let mut a = xi.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += c64(eta, 0.0);
    }
    linalg::cholesky(a).map(|ch| ch.solve(b))
}

/// Optimal precoders of one cell: `V = (Ξ + ηI)^{-1} B` with the smallest
/// `η ≥ 0` meeting the power budget. Returns the stacked `[V_1 … V_K]` and `η`.
pub fn solve_cell(xi: &CMat, b: &CMat, power: f64) -> Result<(CMat, f64)> {
    if !linalg::all_finite(xi) || !linalg::all_finite(b) {
        return Err(PrecodingError::Input("non-finite precoder subproblem".into()));
    }
    if linalg::frob_sq(b) == 0.0 {
        return Ok((CMat::zeros(b.nrows(), b.ncols()), 0.0));
    }
    if let Some(v) = regularized_solve(xi, 0.0, b) {
        if linalg::frob_sq(&v) <= power {
            return Ok((v, 0.0));
        }
    }

    let mut hi = 1.0;
    let (mut v_hi, mut p_hi) = loop {
        if let Some(v) = regularized_solve(xi, hi, b) {
            let p = linalg::frob_sq(&v);
            if p <= power {
                break (v, p);
            }
        }
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(PrecodingError::Numerical("power multiplier search diverged".into()));
        }
    };
    let mut lo = 0.0;
    for _ in 0..BISECTION_MAX_STEPS {
        if (power - p_hi) / power <= BISECTION_TOL || hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match regularized_solve(xi, mid, b) {
            Some(v) => {
                let p = linalg::frob_sq(&v);
                if p > power {
                    lo = mid;
                } else {
                    hi = mid;
                    v_hi = v;
                    p_hi = p;
                }
            }
            None => lo = mid,
        }
    }
    Ok((v_hi, hi))
}

/// Stacks the cell's user matrices side by side.
pub(crate) fn stack_cell(mats: &[CMat], cfg: &NetworkConfig, cell: usize) -> CMat {
    let dims = cfg.dims;
    let mut out = CMat::zeros(dims.mt, dims.k * dims.mr);
    for (i, u) in dims.cell_users(cell).enumerate() {
        out.columns_mut(i * dims.mr, dims.mr).copy_from(&mats[u]);
    }
    out
}

pub(crate) fn unstack_cell(stacked: &CMat, cfg: &NetworkConfig, cell: usize, out: &mut [CMat]) {
    let mr = cfg.dims.mr;
    for (i, u) in cfg.dims.cell_users(cell).enumerate() {
        out[u] = stacked.columns(i * mr, mr).into_owned();
    }
}

/// New precoders of every cell with their power multipliers `η_j`.
pub fn update_v<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    aux: &AuxState,
    xi: &[CMat],
) -> Result<(PrecoderSet, Vec<f64>)> {
    let dims = cfg.dims;
    let targets = precoder_targets(moments, cfg, aux);
    let mut v = vec![CMat::zeros(dims.mt, dims.mr); dims.users()];
    let mut eta = Vec::with_capacity(dims.l);
    for j in 0..dims.l {
        let (stacked, e) = solve_cell(&xi[j], &stack_cell(&targets, cfg, j), cfg.power)?;
        unstack_cell(&stacked, cfg, j, &mut v);
        eta.push(e);
    }
    Ok((PrecoderSet { dims, v }, eta))
}

/// Per-user terms of `f̂` that do not involve the interference:
/// `ω[log|I+Γ| - TrΓ + 2Re Tr((I+Γ)V^H C^H Y)]`.
pub(crate) fn signal_terms<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    precoders: &PrecoderSet,
    aux: &AuxState,
    user: usize,
) -> Result<f64> {
    let mr = cfg.dims.mr;
    let ig = &aux.gamma[user] + CMat::identity(mr, mr);
    let logdet = linalg::logdet_hpd(&ig, 0.0, "I + Γ")?;
    let s = moments.first_moment(user) * &precoders.v[user];
    let cross = linalg::re_trace_product(&ig, &(s.adjoint() * &aux.y[user]));
    Ok(cfg.weights[user] * (logdet - linalg::real_trace(&aux.gamma[user]) + 2.0 * cross))
}

/// The surrogate objective
/// `Σ ω[log|I+Γ| - TrΓ + 2Re Tr((I+Γ)V^H C^H Y) - Tr((I+Γ)Y^H(ΣU + σ²I)Y)]`.
pub fn objective_fhat<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    precoders: &PrecoderSet,
    aux: &AuxState,
    totals: &[CMat],
) -> Result<f64> {
    let mr = cfg.dims.mr;
    let mut total = 0.0;
    for u in 0..cfg.dims.users() {
        if cfg.weights[u] == 0.0 {
            continue;
        }
        let ig = &aux.gamma[u] + CMat::identity(mr, mr);
        let y = &aux.y[u];
        let quad = linalg::re_trace_product(&ig, &(y.adjoint() * noise_plus(&totals[u], cfg.sigma2) * y));
        total += signal_terms(moments, cfg, precoders, aux, u)? - cfg.weights[u] * quad;
    }
    Ok(total)
}

/// The same objective written as a quadratic in `V` through `Ξ`.
pub fn objective_fhat_from_xi<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    precoders: &PrecoderSet,
    aux: &AuxState,
    xi: &[CMat],
) -> Result<f64> {
    let dims = cfg.dims;
    let mut total = 0.0;
    for u in 0..dims.users() {
        let v = &precoders.v[u];
        total -= linalg::re_trace_product(&v.adjoint(), &(&xi[dims.cell_of(u)] * v));
        if cfg.weights[u] == 0.0 {
            continue;
        }
        let ig = &aux.gamma[u] + CMat::identity(dims.mr, dims.mr);
        let yy = aux.y[u].adjoint() * &aux.y[u];
        total += signal_terms(moments, cfg, precoders, aux, u)?
            - cfg.weights[u] * cfg.sigma2 * linalg::re_trace_product(&ig, &yy);
    }
    Ok(total)
}

/// Checks shared by both solvers before iterating.
pub(crate) fn check_inputs<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    init: &PrecoderSet,
    stop: &StopRule,
) -> Result<()> {
    cfg.validate()?;
    stop.validate()?;
    if moments.dims() != cfg.dims || init.dims != cfg.dims {
        return Err(PrecodingError::Config(format!(
            "moments {:?}, initial precoders {:?} and network {:?} disagree on dimensions",
            moments.dims(),
            init.dims,
            cfg.dims
        )));
    }
    PrecoderSet::new(init.dims, init.v.clone())?;
    if init.v.iter().any(|v| !linalg::all_finite(v)) {
        return Err(PrecodingError::Input("initial precoders have non-finite entries".into()));
    }
    init.check_feasible(cfg.power)?;
    moments.validate()
}

/// Runs Algorithm 1 from `init` until the stop rule fires.
pub fn run_algorithm1<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    init: &PrecoderSet,
    stop: &StopRule,
) -> Result<Solution> {
    run_algorithm1_observed(moments, cfg, init, stop, |_| {})
}

/// [`run_algorithm1`] calling `observe` on the initial point and after every iteration.
pub fn run_algorithm1_observed<M, F>(
    moments: &M,
    cfg: &NetworkConfig,
    init: &PrecoderSet,
    stop: &StopRule,
    mut observe: F,
) -> Result<Solution>
where
    M: SecondMoments + ?Sized,
    F: FnMut(&IterateView<'_>),
{
    check_inputs(moments, cfg, init, stop)?;
    let mut precoders = init.clone();
    let mut eval = evaluate(moments, cfg, &precoders).map_err(|e| e.at_iteration(0))?;
    observe(&IterateView {
        iteration: 0,
        precoders: &precoders,
        aux: &eval.aux,
        fhat: eval.fhat,
    });

    let mut fhat = vec![eval.fhat];
    let mut iter_times = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    for it in 1..=stop.max_iters {
        let start = Instant::now();
        let step = (|| {
            let xi = compute_xi(moments, cfg, &eval.aux);
            let (next, _) = update_v(moments, cfg, &eval.aux, &xi)?;
            let next_eval = evaluate(moments, cfg, &next)?;
            Ok::<_, PrecodingError>((next, next_eval))
        })()
        .map_err(|e| e.at_iteration(it))?;
        iter_times.push(start.elapsed());
        let previous = eval.fhat;
        (precoders, eval) = step;
        fhat.push(eval.fhat);
        observe(&IterateView {
            iteration: it,
            precoders: &precoders,
            aux: &eval.aux,
            fhat: eval.fhat,
        });
        if stop.converged(previous, eval.fhat) {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    let iterations = iter_times.len();
    Ok(Solution {
        precoders,
        aux: eval.aux,
        trace: SolveTrace {
            fhat,
            iter_times,
            iterations,
            stop_reason,
        },
    })
}
