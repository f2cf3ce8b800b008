//! Scenario construction, the static-channel baseline and sweep orchestration.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig, Family, SweepParam};
use crate::channel::{structured_moments, FadingModel, GaussianFadingModel, NakagamiFadingModel, StructuredMoments};
use crate::error::{PrecodingError, Result};
use crate::fast_fp::run_algorithm2;
use crate::fp::{evaluate, initial_precoders, run_algorithm1, Solution, StopRule};
use crate::linalg::CMat;
use crate::network::monte_carlo::{monte_carlo_weighted_sum_rates, McEstimate};
use crate::network::topology::{generate_topology, Topology, TopologyParams};
use crate::network::{dbm_to_watt, Dims, NetworkConfig, PrecoderSet};

const TOPOLOGY_STREAM: u64 = 1;
const STATIC_STREAM: u64 = 2;
const BLOCK_STREAM: u64 = 3;

/// Independent 64-bit seed for one purpose (`stream`) of an experiment seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Physical parameters of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub dims: Dims,
    pub family: Family,
    pub nakagami_m: f64,
    pub rho: f64,
    pub power_w: f64,
    pub sigma2_w: f64,
    pub topology: TopologyParams,
    pub weights: Option<Vec<f64>>,
}

/// A network with its fading model and closed-form moments.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: NetworkConfig,
    pub topology: Topology,
    pub model: FadingModel,
    pub moments: StructuredMoments,
}

/// Drops users, draws shadowing and the static channel components.
///
/// The topology and `H̄` depend only on `seed` and the dimensions, so sweeps
/// over noise power or correlation reuse the same network.
pub fn build_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    let dims = spec.dims;
    let mut cfg = NetworkConfig::new(dims, spec.power_w, spec.sigma2_w)?;
    if let Some(w) = &spec.weights {
        cfg = cfg.with_weights(w.clone())?;
    }
    let topology = generate_topology(dims, &spec.topology, derive_seed(seed, TOPOLOGY_STREAM))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STATIC_STREAM));
    let rho = vec![spec.rho; dims.users()];
    let model = match spec.family {
        Family::Gaussian => FadingModel::Gaussian(GaussianFadingModel::from_topology(&topology, rho, &mut rng)?),
        Family::Nakagami => {
            FadingModel::Nakagami(NakagamiFadingModel::from_topology(&topology, spec.nakagami_m, rho, &mut rng)?)
        }
    };
    let moments = structured_moments(&model);
    Ok(Scenario {
        cfg,
        topology,
        model,
        moments,
    })
}

/// Algorithm 1 run on zero-variance moments built from the static
/// components of every link, i.e. precoding as if the channel were fixed.
pub fn wmmse_static(static_links: &[CMat], cfg: &NetworkConfig, stop: &StopRule) -> Result<Solution> {
    let moments = StructuredMoments::deterministic(cfg.dims, static_links.to_vec())?;
    let init = initial_precoders(&moments, cfg);
    run_algorithm1(&moments, cfg, &init, stop)
}

/// One line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sweep_param: String,
    pub sweep_value: f64,
    pub algorithm: Algorithm,
    pub fhat_nats: Option<f64>,
    pub mc_rate_nats: Option<f64>,
    pub mc_ci99_nats: Option<f64>,
    pub iters: Option<usize>,
    pub iter_time_ms: Option<f64>,
    pub seed: u64,
    pub block_digest: Option<String>,
    /// Set when the solver or the evaluation failed at this point.
    pub error: Option<String>,
}

impl ReportRow {
    /// `f̂ ≤ MC mean + CI`; `None` for failed rows.
    pub fn bound_holds(&self) -> Option<bool> {
        match (self.fhat_nats, self.mc_rate_nats, self.mc_ci99_nats) {
            (Some(f), Some(m), Some(ci)) => Some(f <= m + ci),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn failed_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    /// Rows whose objective exceeds the Monte-Carlo upper confidence limit.
    pub fn bound_violations(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.bound_holds() == Some(false))
    }
}

/// The scenario of sweep point `value`.
pub fn scenario_spec(cfg: &ExperimentConfig, param: SweepParam, value: f64) -> Result<ScenarioSpec> {
    let mut dims = cfg.dims();
    let mut rho = cfg.fading.resolve_rho()?;
    let mut sigma2_dbm = cfg.network.sigma2_dbm;
    match param {
        SweepParam::Sigma2Dbm => sigma2_dbm = value,
        SweepParam::Rho => rho = value,
        SweepParam::Mt => dims.mt = value as usize,
    }
    Ok(ScenarioSpec {
        dims,
        family: cfg.scenario.family,
        nakagami_m: cfg.scenario.nakagami_m,
        rho,
        power_w: dbm_to_watt(cfg.network.power_dbm),
        sigma2_w: dbm_to_watt(sigma2_dbm),
        topology: TopologyParams {
            cell_radius_m: cfg.scenario.cell_radius_m,
            wrap_around: cfg.wrap_around(),
            shadowing_std_db: cfg.scenario.shadowing_std_db,
        },
        weights: cfg.network.weights.clone(),
    })
}

struct Solved {
    precoders: PrecoderSet,
    fhat: f64,
    iters: usize,
    mean_iter_ms: Option<f64>,
}

fn solve(alg: Algorithm, scenario: &Scenario, stop: &StopRule) -> Result<Solved> {
    let (moments, cfg) = (&scenario.moments, &scenario.cfg);
    match alg {
        Algorithm::Fp => {
            let sol = run_algorithm1(moments, cfg, &initial_precoders(moments, cfg), stop)?;
            Ok(Solved {
                fhat: sol.trace.final_fhat(),
                iters: sol.trace.iterations,
                mean_iter_ms: sol.trace.mean_iter_time().map(|t| t.as_secs_f64() * 1e3),
                precoders: sol.precoders,
            })
        }
        Algorithm::FastFp => {
            let sol = run_algorithm2(moments, cfg, &initial_precoders(moments, cfg), stop, false)?;
            Ok(Solved {
                fhat: sol.trace.final_fhat(),
                iters: sol.trace.iterations,
                mean_iter_ms: sol.trace.mean_iter_time().map(|t| t.as_secs_f64() * 1e3),
                precoders: sol.precoders,
            })
        }
        Algorithm::WmmseStatic => {
            let sol = wmmse_static(&moments.mean, cfg, stop)?;
            let fhat = evaluate(moments, cfg, &sol.precoders)?.fhat;
            Ok(Solved {
                fhat,
                iters: sol.trace.iterations,
                mean_iter_ms: sol.trace.mean_iter_time().map(|t| t.as_secs_f64() * 1e3),
                precoders: sol.precoders,
            })
        }
    }
}

/// Solves with each algorithm, then scores every successful solution on one
/// shared pass over the Monte-Carlo blocks.
fn solve_and_score(
    scenario: &Scenario,
    algorithms: &[Algorithm],
    stop: &StopRule,
    n_blocks: usize,
    seed: u64,
) -> Vec<Result<(Solved, McEstimate)>> {
    let solved: Vec<Result<Solved>> = algorithms.iter().map(|&alg| solve(alg, scenario, stop)).collect();
    let sets: Vec<PrecoderSet> = solved.iter().flatten().map(|s| s.precoders.clone()).collect();
    let scored = monte_carlo_weighted_sum_rates(&scenario.model, &scenario.cfg, &sets, n_blocks, seed);
    let mut estimates = match scored {
        Ok(estimates) => estimates.into_iter(),
        Err(e) => return solved.into_iter().map(|s| s.and(Err(PrecodingError::Config(e.to_string())))).collect(),
    };
    solved
        .into_iter()
        .map(|s| s.map(|s| (s, estimates.next().expect("one estimate per solved set"))))
        .collect()
}

/// Runs every algorithm at every sweep point and scores all precoders of a
/// point on the same Monte-Carlo blocks. Failures are recorded in the row
/// and the sweep continues. Rows are ordered by sweep index, then algorithm
/// name.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let stop = StopRule {
        tol: cfg.solver.tol,
        max_iters: cfg.solver.max_iters,
    };
    let mut algorithms = cfg.algorithms.clone();
    algorithms.sort_by_key(|a| a.name());
    algorithms.dedup();
    let block_seed = derive_seed(cfg.seed, BLOCK_STREAM);

    let (param, values) = cfg.sweep_points();
    let mut rows = Vec::with_capacity(values.len() * algorithms.len());
    for value in values {
        let scenario = scenario_spec(cfg, param, value).and_then(|spec| build_scenario(&spec, cfg.seed));
        let outcomes: Vec<Result<(Solved, McEstimate)>> = match &scenario {
            Ok(s) => solve_and_score(s, &algorithms, &stop, cfg.n_blocks, block_seed),
            Err(e) => algorithms.iter().map(|_| Err(PrecodingError::Config(e.to_string()))).collect(),
        };
        for (&alg, outcome) in algorithms.iter().zip(outcomes) {
            let mut row = ReportRow {
                sweep_param: param.name().to_string(),
                sweep_value: value,
                algorithm: alg,
                fhat_nats: None,
                mc_rate_nats: None,
                mc_ci99_nats: None,
                iters: None,
                iter_time_ms: None,
                seed: cfg.seed,
                block_digest: None,
                error: None,
            };
            match outcome {
                Ok((solved, mc)) => {
                    row.fhat_nats = Some(solved.fhat);
                    row.mc_rate_nats = Some(mc.mean);
                    row.mc_ci99_nats = Some(mc.half_width_99);
                    row.iters = Some(solved.iters);
                    row.iter_time_ms = if cfg.record_timing { solved.mean_iter_ms } else { None };
                    row.block_digest = Some(mc.block_digest);
                }
                Err(e) => {
                    log::warn!("{} at {}={value}: {e}", alg, param.name());
                    row.error = Some(e.to_string());
                }
            }
            rows.push(row);
        }
    }

    Ok(ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: cfg.digest(),
        seed: cfg.seed,
        config: cfg.clone(),
        rows,
    })
}

/// Default correlation grid for bound checks.
pub const BOUND_CHECK_RHO: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 0.99];

/// Algorithm 1's `f̂` against its Monte-Carlo rate for several correlations.
/// Uses the configured `ρ` sweep if there is one.
pub fn bound_check(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut cfg = cfg.clone();
    cfg.algorithms = vec![Algorithm::Fp];
    if cfg.sweep.as_ref().map(|s| s.param) != Some(SweepParam::Rho) {
        cfg.sweep = Some(super::config::SweepSection {
            param: SweepParam::Rho,
            values: BOUND_CHECK_RHO.to_vec(),
        });
    }
    run_experiment(&cfg)
}
