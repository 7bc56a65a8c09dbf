//! Seeded per-episode draws.
//!
//! Every random quantity of an episode comes from its own ChaCha8 stream
//! keyed by `(seed, episode, stream)`. Draws therefore do not depend on the
//! order episodes or cells are evaluated in, and every cell of a sweep sees
//! the same draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::money::Money;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    Principal = 1,
    Risk = 2,
    History = 3,
    Noise = 4,
    Merchant = 5,
    Override = 6,
    Failure = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, episode: u64, s: Stream) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ episode) ^ s as u64);
    ChaCha8Rng::seed_from_u64(key)
}

/// Distribution of jobs in the market.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketModel {
    /// Parameters of the normal underlying the principal's log-normal law.
    pub log_mu: f64,
    pub log_sigma: f64,
    pub beta_a: f64,
    pub beta_b: f64,
}

impl Default for MarketModel {
    fn default() -> Self {
        MarketModel { log_mu: 4.0, log_sigma: 1.2, beta_a: 1.5, beta_b: 8.5 }
    }
}

/// A finite universe: principal and failure probability drawn uniformly
/// from short lists, the user's history matching `p` exactly and no noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyUniverse {
    pub principals: Vec<Money>,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawModel {
    Market(MarketModel),
    Toy(ToyUniverse),
}

impl Default for DrawModel {
    fn default() -> Self {
        DrawModel::Market(MarketModel::default())
    }
}

/// Everything random about one episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDraw {
    pub principal: Money,
    /// True failure probability.
    pub p: f64,
    pub history_len: u32,
    pub history_failures: u32,
    /// Standard normal; the user's noise is `σ_user · z`.
    pub noise_z: f64,
    pub merchant_roll: f64,
    pub override_roll: f64,
    pub failure_roll: f64,
}

impl DrawModel {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            DrawModel::Market(m) => {
                LogNormal::new(m.log_mu, m.log_sigma).map_err(|e| e.to_string())?;
                Beta::new(m.beta_a, m.beta_b).map_err(|e| e.to_string())?;
            }
            DrawModel::Toy(t) => {
                if t.principals.is_empty() || t.probabilities.is_empty() {
                    return Err("toy universe needs principals and probabilities".into());
                }
                if t.principals.iter().any(|m| !m.is_positive()) {
                    return Err("toy principals must be positive".into());
                }
                if t.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err("toy probabilities must lie in [0, 1]".into());
                }
            }
        }
        Ok(())
    }

    /// The draw for episode `episode` under master seed `seed`.
    pub fn draw(&self, seed: u64, episode: u64, history: u32) -> EpisodeDraw {
        let uniform = |s| stream(seed, episode, s).random::<f64>();
        let (principal, p, failures, z) = match self {
            DrawModel::Market(m) => {
                let ln = LogNormal::new(m.log_mu, m.log_sigma).expect("validated");
                let major = ln.sample(&mut stream(seed, episode, Stream::Principal));
                let principal = Money::round_minor(major * 100.0).max(Money(1));
                let beta = Beta::new(m.beta_a, m.beta_b).expect("validated");
                let p = beta.sample(&mut stream(seed, episode, Stream::Risk));
                let mut h = stream(seed, episode, Stream::History);
                let failures = (0..history).filter(|_| h.random::<f64>() < p).count() as u32;
                let z: f64 = StandardNormal.sample(&mut stream(seed, episode, Stream::Noise));
                (principal, p, failures, z)
            }
            DrawModel::Toy(t) => {
                let principal = t.principals[stream(seed, episode, Stream::Principal).random_range(0..t.principals.len())];
                let p = t.probabilities[stream(seed, episode, Stream::Risk).random_range(0..t.probabilities.len())];
                (principal, p, (p * history as f64).round() as u32, 0.0)
            }
        };
        EpisodeDraw {
            principal,
            p,
            history_len: history,
            history_failures: failures,
            noise_z: z,
            merchant_roll: uniform(Stream::Merchant),
            override_roll: uniform(Stream::Override),
            failure_roll: uniform(Stream::Failure),
        }
    }

    pub fn draws(&self, seed: u64, episodes: u64, history: u32) -> Vec<EpisodeDraw> {
        (0..episodes).map(|e| self.draw(seed, e, history)).collect()
    }
}
