//! Inverse-free solver for large antenna arrays (Algorithm 2).
//!
//! The quadratic `Tr(V^H Ξ V)` in the precoder subproblem is majorized by
//! `α‖V‖²` plus linear terms around the previous iterate `Z`, with `α` the
//! largest eigenvalue of `Ξ`. The precoder update then reduces to a
//! gradient-like step followed by a power rescaling, so no `M_t × M_t`
//! system is ever solved.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::SecondMoments;
use crate::error::{PrecodingError, Result};
use crate::fp::{
    self, check_inputs, compute_xi, evaluate, precoder_targets, AuxState, IterateView, SolveTrace, StopReason,
    StopRule,
};
use crate::linalg::{self, c64, CMat};
use crate::network::{NetworkConfig, PrecoderSet};

/// Inflation applied to the computed largest eigenvalue.
pub const ALPHA_INFLATION: f64 = 1e-9;

/// Majorization state: previous iterate `Z`, `Ξ_j` and `α_j` per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastAuxState {
    #[serde(with = "crate::linalg::serde_cmat::vec")]
    pub z: Vec<CMat>,
    #[serde(with = "crate::linalg::serde_cmat::vec")]
    pub xi: Vec<CMat>,
    pub alpha: Vec<f64>,
}

/// Objective values around one precoder update, for checking
/// `f̂_new ≥ ζ_new ≥ ζ_old = f̂_old`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichStep {
    pub fhat_old: f64,
    pub zeta_old: f64,
    pub zeta_new: f64,
    pub fhat_new: f64,
}

impl SandwichStep {
    /// Largest relative violation of the chain; nonpositive when it holds.
    pub fn violation(&self) -> f64 {
        let scale = self.fhat_old.abs().max(f64::MIN_POSITIVE);
        [
            self.zeta_new - self.fhat_new,
            self.zeta_old - self.zeta_new,
            (self.zeta_old - self.fhat_old).abs(),
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
            / scale
    }
}

/// Result of [`run_algorithm2`].
#[derive(Debug, Clone)]
pub struct FastSolution {
    pub precoders: PrecoderSet,
    pub aux: AuxState,
    pub fast: FastAuxState,
    pub trace: SolveTrace,
    /// Filled only when sandwich logging is requested.
    pub sandwich: Vec<SandwichStep>,
}

/// `Ξ_j` and `α_j = λ_max(Ξ_j)·(1 + 1e-9)` for every cell.
pub fn compute_xi_alpha<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    aux: &AuxState,
) -> (Vec<CMat>, Vec<f64>) {
    let xi = compute_xi(moments, cfg, aux);
    let alpha = xi.iter().map(|x| linalg::lambda_max(x).value * (1.0 + ALPHA_INFLATION)).collect();
    (xi, alpha)
}

/// `Z = V`.
pub fn update_z(precoders: &PrecoderSet) -> Vec<CMat> {
    precoders.v.clone()
}

/// `Ψ = Z + (B - ΞZ)/α` per user, rescaled per cell onto the power budget
/// when it overshoots.
///
/// With `α_j = 0` the cell's subproblem is linear; its precoders then point
/// along `B` at full power, or stay at `Z` when `B` vanishes.
pub fn update_v_fast<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    aux: &AuxState,
    fast: &FastAuxState,
) -> Result<PrecoderSet> {
    let dims = cfg.dims;
    let targets = precoder_targets(moments, cfg, aux);
    let mut v = vec![CMat::zeros(dims.mt, dims.mr); dims.users()];
    for j in 0..dims.l {
        let alpha = fast.alpha[j];
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(PrecodingError::Input(format!("cell {j} has invalid curvature bound {alpha}")));
        }
        let b = fp::stack_cell(&targets, cfg, j);
        let z = fp::stack_cell(&fast.z, cfg, j);
        let psi = if alpha > 0.0 {
            &z + (&b - linalg::mul(&fast.xi[j], &z)) * c64(1.0 / alpha, 0.0)
        } else if linalg::frob_sq(&b) > 0.0 {
            let scale = (cfg.power / linalg::frob_sq(&b)).sqrt();
            &b * c64(scale, 0.0)
        } else {
            z
        };
        if !linalg::all_finite(&psi) {
            return Err(PrecodingError::Input(format!("non-finite precoder step in cell {j}")));
        }
        let p = linalg::frob_sq(&psi);
        let stacked = if p > cfg.power {
            &psi * c64((cfg.power / p).sqrt(), 0.0)
        } else {
            psi
        };
        fp::unstack_cell(&stacked, cfg, j, &mut v);
    }
    Ok(PrecoderSet { dims, v })
}

/// The minorizer `ζ(V, Γ, Y, Z)` of `f̂`.
pub fn objective_zeta<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    precoders: &PrecoderSet,
    aux: &AuxState,
    fast: &FastAuxState,
) -> Result<f64> {
    let dims = cfg.dims;
    let mut total = 0.0;
    for u in 0..dims.users() {
        let j = dims.cell_of(u);
        let (v, z, alpha) = (&precoders.v[u], &fast.z[u], fast.alpha[j]);
        let xi_z = &fast.xi[j] * z;
        // (αI - Ξ)Z
        let shifted = z * c64(alpha, 0.0) - &xi_z;
        total += 2.0 * linalg::re_trace_product(&v.adjoint(), &shifted);
        total -= linalg::re_trace_product(&z.adjoint(), &shifted);
        total -= alpha * linalg::frob_sq(v);
        if cfg.weights[u] == 0.0 {
            continue;
        }
        let ig = &aux.gamma[u] + CMat::identity(dims.mr, dims.mr);
        let yy = aux.y[u].adjoint() * &aux.y[u];
        total += fp::signal_terms(moments, cfg, precoders, aux, u)?
            - cfg.weights[u] * cfg.sigma2 * linalg::re_trace_product(&ig, &yy);
    }
    Ok(total)
}

/// Right-hand side of the nonhomogeneous bound
/// `Tr(X^H K X + 2Re{X^H(L-K)Z} + Z^H(K-L)Z)`, which dominates
/// `Tr(X^H L X)` whenever `L ⪯ K`, with equality at `Z = X`.
pub fn nonhomogeneous_bound(l: &CMat, k: &CMat, x: &CMat, z: &CMat) -> f64 {
    let diff = l - k;
    linalg::re_trace_product(&x.adjoint(), &(k * x)) + 2.0 * linalg::re_trace_product(&x.adjoint(), &(&diff * z))
        - linalg::re_trace_product(&z.adjoint(), &(&diff * z))
}

/// Runs Algorithm 2 from `init`. With `log_sandwich` the four objective
/// values around every precoder update are recorded.
pub fn run_algorithm2<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    init: &PrecoderSet,
    stop: &StopRule,
    log_sandwich: bool,
) -> Result<FastSolution> {
    run_algorithm2_observed(moments, cfg, init, stop, log_sandwich, |_| {})
}

/// [`run_algorithm2`] calling `observe` on the initial point and after every iteration.
pub fn run_algorithm2_observed<M, F>(
    moments: &M,
    cfg: &NetworkConfig,
    init: &PrecoderSet,
    stop: &StopRule,
    log_sandwich: bool,
    mut observe: F,
) -> Result<FastSolution>
where
    M: SecondMoments + ?Sized,
    F: FnMut(&IterateView<'_>),
{
    check_inputs(moments, cfg, init, stop)?;
    let dims = cfg.dims;
    let mut precoders = init.clone();
    let mut eval = evaluate(moments, cfg, &precoders).map_err(|e| e.at_iteration(0))?;
    observe(&IterateView {
        iteration: 0,
        precoders: &precoders,
        aux: &eval.aux,
        fhat: eval.fhat,
    });

    let mut fast = FastAuxState {
        z: update_z(&precoders),
        xi: vec![CMat::zeros(dims.mt, dims.mt); dims.l],
        alpha: vec![0.0; dims.l],
    };
    let mut fhat = vec![eval.fhat];
    let mut iter_times = Vec::new();
    let mut sandwich = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    for it in 1..=stop.max_iters {
        let start = Instant::now();
        let step = (|| {
            let z = update_z(&precoders);
            let (xi, alpha) = compute_xi_alpha(moments, cfg, &eval.aux);
            let state = FastAuxState { z, xi, alpha };
            let next = update_v_fast(moments, cfg, &eval.aux, &state)?;
            let next_eval = evaluate(moments, cfg, &next)?;
            Ok::<_, PrecodingError>((next, next_eval, state))
        })()
        .map_err(|e| e.at_iteration(it))?;
        iter_times.push(start.elapsed());

        let (next, next_eval, state) = step;
        if log_sandwich {
            let record = (|| {
                Ok::<_, PrecodingError>(SandwichStep {
                    fhat_old: eval.fhat,
                    zeta_old: objective_zeta(moments, cfg, &precoders, &eval.aux, &state)?,
                    zeta_new: objective_zeta(moments, cfg, &next, &eval.aux, &state)?,
                    fhat_new: next_eval.fhat,
                })
            })()
            .map_err(|e| e.at_iteration(it))?;
            sandwich.push(record);
        }
        let previous = eval.fhat;
        precoders = next;
        eval = next_eval;
        fast = state;
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
    Ok(FastSolution {
        precoders,
        aux: eval.aux,
        fast,
        trace: SolveTrace {
            fhat,
            iter_times,
            iterations,
            stop_reason,
        },
        sandwich,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelMoments;
    use crate::network::Dims;

    fn scalar(x: f64) -> CMat {
        CMat::from_element(1, 1, c64(x, 0.0))
    }

    #[test]
    fn scalar_step() {
        let dims = Dims::new(1, 1, 1, 1);
        let m = ChannelMoments::deterministic(dims, &[scalar(1.0)]).unwrap();
        let cfg = NetworkConfig::new(dims, 4.0, 1.0).unwrap();
        let aux = AuxState {
            gamma: vec![scalar(4.0)],
            y: vec![scalar(0.4)],
        };
        let fast = FastAuxState {
            z: vec![scalar(2.0)],
            xi: vec![scalar(0.8)],
            alpha: vec![0.8],
        };
        let v = update_v_fast(&m, &cfg, &aux, &fast).unwrap();
        assert!((v.v[0][(0, 0)].re - 2.0).abs() < 1e-14);
        assert!((v.cell_power(0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_of_diagonal() {
        let dims = Dims::new(1, 1, 2, 1);
        let h = CMat::from_row_slice(1, 2, &[c64(2f64.sqrt(), 0.0), c64(0.0, 0.0)]);
        let m = ChannelMoments::deterministic(dims, &[h]).unwrap();
        let cfg = NetworkConfig::new(dims, 1.0, 1.0).unwrap();
        let aux = AuxState {
            gamma: vec![scalar(0.0)],
            y: vec![scalar(1.0)],
        };
        let (xi, alpha) = compute_xi_alpha(&m, &cfg, &aux);
        assert!((xi[0][(0, 0)].re - 2.0).abs() < 1e-14);
        assert!((alpha[0] - 2.0 * (1.0 + ALPHA_INFLATION)).abs() < 1e-12);
    }

    #[test]
    fn zero_state() {
        let dims = Dims::new(1, 1, 1, 1);
        let m = ChannelMoments::deterministic(dims, &[scalar(1.0)]).unwrap();
        let cfg = NetworkConfig::new(dims, 1.0, 1.0).unwrap();
        let zero = PrecoderSet::zeros(dims);
        let aux = AuxState {
            gamma: vec![scalar(0.0)],
            y: vec![scalar(0.0)],
        };
        let (xi, alpha) = compute_xi_alpha(&m, &cfg, &aux);
        assert_eq!(alpha[0], 0.0);
        let fast = FastAuxState {
            z: update_z(&zero),
            xi,
            alpha,
        };
        assert_eq!(update_v_fast(&m, &cfg, &aux, &fast).unwrap(), zero);
        assert_eq!(objective_zeta(&m, &cfg, &zero, &aux, &fast).unwrap(), 0.0);
    }

    #[test]
    fn zero_curvature_goes_full_power() {
        let dims = Dims::new(1, 1, 2, 1);
        let m = ChannelMoments::deterministic(dims, &[CMat::from_row_slice(1, 2, &[c64(1.0, 0.0), c64(0.0, 1.0)])])
            .unwrap();
        let cfg = NetworkConfig::new(dims, 3.0, 1.0).unwrap();
        let aux = AuxState {
            gamma: vec![scalar(0.0)],
            y: vec![scalar(1.0)],
        };
        let fast = FastAuxState {
            z: vec![CMat::zeros(2, 1)],
            xi: vec![CMat::zeros(2, 2)],
            alpha: vec![0.0],
        };
        let v = update_v_fast(&m, &cfg, &aux, &fast).unwrap();
        assert!((v.cell_power(0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zeta_touches_fhat_at_previous_iterate() {
        let dims = Dims::new(1, 2, 3, 2);
        let links: Vec<CMat> =
            (0..2).map(|i| CMat::from_fn(2, 3, |r, c| c64((i + r + 2 * c) as f64 * 0.4 - 1.0, r as f64 - 0.5))).collect();
        let m = ChannelMoments::deterministic(dims, &links).unwrap();
        let cfg = NetworkConfig::new(dims, 1.0, 0.2).unwrap();
        let v = fp::initial_precoders(&m, &cfg);
        let eval = evaluate(&m, &cfg, &v).unwrap();
        let (xi, alpha) = compute_xi_alpha(&m, &cfg, &eval.aux);
        let fast = FastAuxState {
            z: update_z(&v),
            xi,
            alpha,
        };
        let zeta = objective_zeta(&m, &cfg, &v, &eval.aux, &fast).unwrap();
        assert!((zeta - eval.fhat).abs() <= 1e-10 * eval.fhat.abs());
    }
}
