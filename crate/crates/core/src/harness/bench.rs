//! Per-iteration timing of both solvers as the array grows.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::{Family, DEFAULT_POWER_DBM, DEFAULT_RHO, DEFAULT_SIGMA2_DBM};
use super::experiment::{build_scenario, ScenarioSpec};
use crate::error::{PrecodingError, Result};
use crate::fast_fp::run_algorithm2;
use crate::fp::{initial_precoders, run_algorithm1, StopRule};
use crate::network::topology::TopologyParams;
use crate::channel::SecondMoments;
use crate::network::{dbm_to_watt, Dims, NetworkConfig};

pub const BENCH_USERS: usize = 16;
pub const BENCH_RX_ANTENNAS: usize = 2;
pub const BENCH_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mt: usize,
    pub k: usize,
    pub mr: usize,
    pub iterations: usize,
    pub fp_median_ms: f64,
    pub fast_fp_median_ms: f64,
}

impl BenchRow {
    /// How many times faster one Algorithm 2 iteration is.
    pub fn speedup(&self) -> f64 {
        self.fp_median_ms / self.fast_fp_median_ms
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Median per-iteration wall time of both solvers on one single-cell
/// Gaussian scenario. `dense` switches from the structured moments used by
/// experiments to full second-moment matrices. Each solver gets one short
/// warmup run, then `iterations` timed iterations with the tolerance at zero.
pub fn bench_point(mt: usize, k: usize, mr: usize, iterations: usize, seed: u64, dense: bool) -> Result<BenchRow> {
    let spec = ScenarioSpec {
        dims: Dims::new(1, k, mt, mr),
        family: Family::Gaussian,
        nakagami_m: 0.5,
        rho: DEFAULT_RHO,
        power_w: dbm_to_watt(DEFAULT_POWER_DBM),
        sigma2_w: dbm_to_watt(DEFAULT_SIGMA2_DBM),
        topology: TopologyParams::for_cells(1),
        weights: None,
    };
    let scenario = build_scenario(&spec, seed)?;
    let (fp, fast) = if dense {
        time_solvers(&scenario.moments.to_dense(), &scenario.cfg, iterations)?
    } else {
        time_solvers(&scenario.moments, &scenario.cfg, iterations)?
    };
    let median = |t: Option<Duration>| t.map(ms).ok_or_else(|| PrecodingError::Config("no iterations timed".into()));
    Ok(BenchRow {
        mt,
        k,
        mr,
        iterations,
        fp_median_ms: median(fp)?,
        fast_fp_median_ms: median(fast)?,
    })
}

fn time_solvers<M: SecondMoments + ?Sized>(
    moments: &M,
    cfg: &NetworkConfig,
    iterations: usize,
) -> Result<(Option<Duration>, Option<Duration>)> {
    let init = initial_precoders(moments, cfg);
    let warmup = StopRule { tol: 0.0, max_iters: 1 };
    let timed = StopRule {
        tol: 0.0,
        max_iters: iterations,
    };
    run_algorithm1(moments, cfg, &init, &warmup)?;
    let fp = run_algorithm1(moments, cfg, &init, &timed)?;
    run_algorithm2(moments, cfg, &init, &warmup, false)?;
    let fast = run_algorithm2(moments, cfg, &init, &timed, false)?;
    Ok((fp.trace.median_iter_time(), fast.trace.median_iter_time()))
}

pub fn run_bench(mt_list: &[usize], iterations: usize, seed: u64, dense: bool) -> Result<Vec<BenchRow>> {
    mt_list
        .iter()
        .map(|&mt| bench_point(mt, BENCH_USERS, BENCH_RX_ANTENNAS, iterations, seed, dense))
        .collect()
}

pub fn write_bench_csv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("mt,k,mr,iterations,fp_median_ms,fast_fp_median_ms,speedup\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mt,
            r.k,
            r.mr,
            r.iterations,
            r.fp_median_ms,
            r.fast_fp_median_ms,
            r.speedup()
        ));
    }
    std::fs::write(path, text).map_err(|e| PrecodingError::io(path, e))
}
