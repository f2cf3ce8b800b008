//! Hexagonal cell layout, user drops and large-scale fading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dims;
use crate::error::{PrecodingError, Result};

pub const DEFAULT_CELL_RADIUS_M: f64 = 300.0;
pub const DEFAULT_SHADOWING_STD_DB: f64 = 8.0;

/// Layout parameters for [`generate_topology`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyParams {
    /// Hexagon circumradius (m).
    pub cell_radius_m: f64,
    /// Toroidal mirroring of the 7-cell cluster.
    pub wrap_around: bool,
    pub shadowing_std_db: f64,
}

impl TopologyParams {
    /// Defaults for `l` cells: 300 m radius, 8 dB shadowing, wrap-around for the 7-cell layout.
    pub fn for_cells(l: usize) -> Self {
        TopologyParams {
            cell_radius_m: DEFAULT_CELL_RADIUS_M,
            wrap_around: l == 7,
            shadowing_std_db: DEFAULT_SHADOWING_STD_DB,
        }
    }
}

/// BS and user positions with the per-link large-scale amplitude scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub dims: Dims,
    pub params: TopologyParams,
    pub bs_positions: Vec<[f64; 2]>,
    /// Indexed by flattened user.
    pub user_positions: Vec<[f64; 2]>,
    /// Effective BS-user distance per link (m), indexed `u·L + ℓ`.
    pub distances_m: Vec<f64>,
    /// Shadowing draw per link (dB).
    pub shadowing_db: Vec<f64>,
    /// Amplitude scale `10^{-ξ/10}` per link; its square is the mean power gain.
    pub scale: Vec<f64>,
}

impl Topology {
    pub fn link_scale(&self, user: usize, bs: usize) -> f64 {
        self.scale[self.dims.link(user, bs)]
    }

    pub fn link_distance_m(&self, user: usize, bs: usize) -> f64 {
        self.distances_m[self.dims.link(user, bs)]
    }
}

/// `ξ = 0.5·(128.1 + 37.6·log10(d_km) + τ)` in dB.
pub fn half_pathloss_db(distance_km: f64, shadowing_db: f64) -> f64 {
    0.5 * (128.1 + 37.6 * distance_km.log10() + shadowing_db)
}

/// Per-entry amplitude scale `10^{-ξ/10}`.
pub fn link_amplitude_scale(distance_km: f64, shadowing_db: f64) -> f64 {
    10f64.powf(-half_pathloss_db(distance_km, shadowing_db) / 10.0)
}

/// Unit direction of the `i`-th neighbor of a hexagonal cell (edge normals).
fn neighbor_direction(i: usize) -> [f64; 2] {
    let angle = std::f64::consts::FRAC_PI_6 + i as f64 * std::f64::consts::FRAC_PI_3;
    [angle.cos(), angle.sin()]
}

/// Whether `p` lies in the hexagon of circumradius `radius` centered at the origin
/// (vertices at multiples of 60°).
fn in_hexagon(p: [f64; 2], radius: f64) -> bool {
    let apothem = radius * 3f64.sqrt() / 2.0;
    (0..6).all(|i| {
        let n = neighbor_direction(i);
        p[0] * n[0] + p[1] * n[1] <= apothem
    })
}

fn bs_layout(l: usize, radius: f64) -> Vec<[f64; 2]> {
    let isd = 3f64.sqrt() * radius;
    std::iter::once([0.0, 0.0])
        .chain((0..l.saturating_sub(1)).map(|i| {
            let n = neighbor_direction(i);
            [isd * n[0], isd * n[1]]
        }))
        .collect()
}

/// Translations of the 7-cell cluster onto its six mirror copies.
fn wrap_shifts(radius: f64) -> Vec<[f64; 2]> {
    let isd = 3f64.sqrt() * radius;
    let a = neighbor_direction(0);
    let b = neighbor_direction(1);
    let base = [isd * (2.0 * a[0] + b[0]), isd * (2.0 * a[1] + b[1])];
    (0..6)
        .map(|i| {
            let (s, c) = (i as f64 * std::f64::consts::FRAC_PI_3).sin_cos();
            [c * base[0] - s * base[1], s * base[0] + c * base[1]]
        })
        .collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Places `L` hexagonal cells, drops `K` users uniformly in each and draws
/// log-normal shadowing per link.
///
/// With wrap-around the BS-user distance is the minimum over the BS and its
/// six mirror images. Shadowing is fixed per topology seed.
pub fn generate_topology(dims: Dims, params: &TopologyParams, seed: u64) -> Result<Topology> {
    dims.validate()?;
    if !(params.cell_radius_m > 0.0 && params.cell_radius_m.is_finite()) {
        return Err(PrecodingError::Config(format!(
            "cell radius must be positive, got {}",
            params.cell_radius_m
        )));
    }
    if params.wrap_around && !(dims.l == 1 || dims.l == 7) {
        return Err(PrecodingError::Config(format!(
            "wrap-around needs 1 or 7 cells, got {}",
            dims.l
        )));
    }
    if dims.l > 7 {
        return Err(PrecodingError::Config(format!(
            "layouts beyond the first hexagonal ring (7 cells) are not supported, got {}",
            dims.l
        )));
    }
    if !(params.shadowing_std_db >= 0.0) {
        return Err(PrecodingError::Config("shadowing deviation must be nonnegative".into()));
    }

    let radius = params.cell_radius_m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bs_positions = bs_layout(dims.l, radius);

    let mut user_positions = Vec::with_capacity(dims.users());
    for bs in &bs_positions {
        for _ in 0..dims.k {
            let p = loop {
                let candidate = [
                    rng.random_range(-radius..=radius),
                    rng.random_range(-radius..=radius),
                ];
                if in_hexagon(candidate, radius) && dist(candidate, [0.0, 0.0]) > 0.0 {
                    break candidate;
                }
            };
            user_positions.push([bs[0] + p[0], bs[1] + p[1]]);
        }
    }

    let shifts = if params.wrap_around {
        wrap_shifts(radius)
    } else {
        Vec::new()
    };
    let shadow = Normal::new(0.0, params.shadowing_std_db.max(f64::MIN_POSITIVE))
        .expect("finite shadowing deviation");

    let mut distances_m = Vec::with_capacity(dims.links());
    let mut shadowing_db = Vec::with_capacity(dims.links());
    let mut scale = Vec::with_capacity(dims.links());
    for user in &user_positions {
        for bs in &bs_positions {
            let d = shifts
                .iter()
                .map(|s| dist(*user, [bs[0] + s[0], bs[1] + s[1]]))
                .fold(dist(*user, *bs), f64::min);
            let tau = if params.shadowing_std_db > 0.0 {
                shadow.sample(&mut rng)
            } else {
                0.0
            };
            distances_m.push(d);
            shadowing_db.push(tau);
            scale.push(link_amplitude_scale(d / 1000.0, tau));
        }
    }

    Ok(Topology {
        dims,
        params: *params,
        bs_positions,
        user_positions,
        distances_m,
        shadowing_db,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pathloss_at_one_km() {
        assert!((half_pathloss_db(1.0, 0.0) - 64.05).abs() < 1e-12);
        let s = link_amplitude_scale(1.0, 0.0);
        assert!((s / 10f64.powf(-6.405) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_topology() {
        let dims = Dims::new(7, 4, 8, 2);
        let p = TopologyParams::for_cells(7);
        assert_eq!(generate_topology(dims, &p, 11).unwrap(), generate_topology(dims, &p, 11).unwrap());
        assert_ne!(generate_topology(dims, &p, 11).unwrap(), generate_topology(dims, &p, 12).unwrap());
    }

    #[test]
    fn users_within_serving_radius() {
        for l in [1, 7] {
            let dims = Dims::new(l, 20, 4, 2);
            let topo = generate_topology(dims, &TopologyParams::for_cells(l), 3).unwrap();
            for u in 0..dims.users() {
                let d = topo.link_distance_m(u, dims.cell_of(u));
                assert!(d > 0.0 && d <= DEFAULT_CELL_RADIUS_M, "user {u} at {d} m");
            }
        }
    }

    #[test]
    fn wrap_around_rejects_other_cell_counts() {
        let dims = Dims::new(3, 2, 4, 2);
        let params = TopologyParams {
            wrap_around: true,
            ..TopologyParams::for_cells(3)
        };
        assert!(matches!(
            generate_topology(dims, &params, 0),
            Err(PrecodingError::Config(_))
        ));
    }

    #[test]
    fn wrap_around_is_symmetric_for_cluster() {
        // Every BS sees a user at the center cell no farther than the cluster's reach.
        let dims = Dims::new(7, 10, 4, 2);
        let topo = generate_topology(dims, &TopologyParams::for_cells(7), 5).unwrap();
        let isd = 3f64.sqrt() * DEFAULT_CELL_RADIUS_M;
        for d in &topo.distances_m {
            assert!(*d <= 2.0 * isd + DEFAULT_CELL_RADIUS_M);
        }
    }

    #[test]
    fn wrap_shift_length() {
        let isd = 3f64.sqrt() * 300.0;
        for s in wrap_shifts(300.0) {
            assert!(((s[0].hypot(s[1])) - 7f64.sqrt() * isd).abs() < 1e-9);
        }
    }
}
