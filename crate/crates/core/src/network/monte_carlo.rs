//! Monte-Carlo estimate of the long-term weighted sum rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NetworkConfig, PrecoderSet, RateScorer};
use crate::channel::ChannelSampler;
use crate::error::{PrecodingError, Result};

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

pub const DEFAULT_BLOCKS: usize = 1000;

/// Sample mean of `Σ ω R` with its 99% confidence half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub half_width_99: f64,
    pub n_blocks: usize,
    /// SHA-256 over every sampled channel entry; equal digests mean the
    /// same blocks were drawn.
    pub block_digest: String,
}

impl McEstimate {
    pub fn upper(&self) -> f64 {
        self.mean + self.half_width_99
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width_99
    }
}

/// The ChaCha stream used for block `index` under `seed`.
pub fn block_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Averages `Σ ω_{jk} R_{jk}` over `n_blocks` i.i.d. blocks.
///
/// Block `b` is drawn from stream `b` of `seed`, so two calls with the same
/// seed see the same channels whatever precoders they score.
pub fn monte_carlo_weighted_sum_rate<S: ChannelSampler + ?Sized>(
    sampler: &S,
    cfg: &NetworkConfig,
    precoders: &PrecoderSet,
    n_blocks: usize,
    seed: u64,
) -> Result<McEstimate> {
    let mut out = monte_carlo_weighted_sum_rates(sampler, cfg, std::slice::from_ref(precoders), n_blocks, seed)?;
    Ok(out.remove(0))
}

/// Scores every precoder set on the same `n_blocks` blocks, drawing each
/// block once. Each estimate equals what [`monte_carlo_weighted_sum_rate`]
/// returns for that set alone.
pub fn monte_carlo_weighted_sum_rates<S: ChannelSampler + ?Sized>(
    sampler: &S,
    cfg: &NetworkConfig,
    precoders: &[PrecoderSet],
    n_blocks: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    if n_blocks < 2 {
        return Err(PrecodingError::Config(format!("need at least 2 blocks, got {n_blocks}")));
    }
    if sampler.dims() != cfg.dims || precoders.iter().any(|p| p.dims != cfg.dims) {
        return Err(PrecodingError::Config("sampler, precoders and network dimensions differ".into()));
    }

    let mut scorers = precoders
        .iter()
        .map(|p| RateScorer::new(cfg, p))
        .collect::<Result<Vec<_>>>()?;
    let mut stats = vec![(0.0f64, 0.0f64); precoders.len()];
    let mut hasher = Sha256::new();
    let mut bytes = Vec::new();
    for b in 0..n_blocks {
        let mut rng = block_rng(seed, b as u64);
        let block = sampler.sample(&mut rng);
        bytes.clear();
        for h in block.links() {
            for z in h.iter() {
                bytes.extend_from_slice(&z.re.to_le_bytes());
                bytes.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        hasher.update(&bytes);
        for (scorer, (mean, m2)) in scorers.iter_mut().zip(&mut stats) {
            let x = scorer.weighted_sum_rate(&block)?;
            let delta = x - *mean;
            *mean += delta / (b + 1) as f64;
            *m2 += delta * (x - *mean);
        }
    }
    let digest = hex::encode(hasher.finalize());
    Ok(stats
        .into_iter()
        .map(|(mean, m2)| {
            let variance = (m2 / (n_blocks - 1) as f64).max(0.0);
            McEstimate {
                mean,
                half_width_99: Z_99 * (variance / n_blocks as f64).sqrt(),
                n_blocks,
                block_digest: digest.clone(),
            }
        })
        .collect())
}
