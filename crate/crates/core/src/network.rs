//! Delay and loss models, and seeded realizations of them.
//!
//! Every draw comes from a generator keyed by `(seed, stream, a, b)`, so any
//! single entry of a realization can be reproduced without replaying the
//! draws that precede it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::PlantSpec;
use crate::error::{Error, Result};

/// Independent draw streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Delay = 1,
    SensorLoss = 2,
    ActuatorLoss = 3,
    LinkLoss = 4,
    MomentDelay = 11,
    MomentLoss = 12,
    EpisodeSeed = 21,
}

/// Counter-style generator: a fresh ChaCha8 stream per key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyedRng {
    seed: u64,
}

impl KeyedRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (chunk, word) in key
            .chunks_exact_mut(8)
            .zip([self.seed, stream as u64, a, b])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// One uniform draw in `[0, 1)` for the given key.
    pub fn uniform(&self, stream: Stream, a: u64, b: u64) -> f64 {
        self.stream(stream, a, b).random::<f64>()
    }

    pub fn derive_seed(&self, stream: Stream, a: u64) -> u64 {
        self.stream(stream, a, 0).random::<u64>()
    }
}

/// Delay law, expressed as fractions of the sampling period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    /// `τ ~ Uniform[0, alpha·T]`.
    Uniform { alpha: f64 },
    /// `τ = fraction·T` always.
    PointMass { fraction: f64 },
    /// `τ = fractions[j]·T` with probability `weights[j]`.
    Discrete { fractions: Vec<f64>, weights: Vec<f64> },
}

impl DelayModel {
    pub fn uniform(alpha: f64) -> Self {
        DelayModel::Uniform { alpha }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        match self {
            DelayModel::Uniform { alpha } if !in_unit(*alpha) => {
                Err(Error::InvalidArgument(format!("delay alpha {alpha} outside [0, 1]")))
            }
            DelayModel::PointMass { fraction } if !in_unit(*fraction) => {
                Err(Error::InvalidArgument(format!("delay fraction {fraction} outside [0, 1]")))
            }
            DelayModel::Discrete { fractions, weights } => {
                if fractions.is_empty() || fractions.len() != weights.len() {
                    return Err(Error::InvalidArgument("discrete delay needs matching non-empty fractions and weights".into()));
                }
                if fractions.iter().any(|f| !in_unit(*f)) || weights.iter().any(|w| w.is_nan() || *w < 0.0) {
                    return Err(Error::InvalidArgument("discrete delay fractions must lie in [0, 1] and weights be non-negative".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!("discrete delay weights sum to {total}, not 1")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Maps a uniform draw `u ∈ [0, 1)` to a delay in seconds.
    pub fn sample(&self, u: f64, period: f64) -> f64 {
        let tau = match self {
            DelayModel::Uniform { alpha } => u * alpha * period,
            DelayModel::PointMass { fraction } => fraction * period,
            DelayModel::Discrete { fractions, weights } => {
                let mut acc = 0.0;
                let mut pick = fractions[fractions.len() - 1];
                for (f, w) in fractions.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        pick = *f;
                        break;
                    }
                }
                pick * period
            }
        };
        tau.clamp(0.0, period)
    }

    pub fn mean(&self, period: f64) -> f64 {
        match self {
            DelayModel::Uniform { alpha } => 0.5 * alpha * period,
            DelayModel::PointMass { fraction } => fraction * period,
            DelayModel::Discrete { fractions, weights } => {
                fractions.iter().zip(weights).map(|(f, w)| f * w).sum::<f64>() * period
            }
        }
    }

    pub fn is_degenerate(&self) -> bool {
        match self {
            DelayModel::Uniform { alpha } => *alpha == 0.0,
            DelayModel::PointMass { .. } => true,
            DelayModel::Discrete { weights, .. } => weights.iter().filter(|w| **w > 0.0).count() <= 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoMode {
    Perfect,
    Imperfect,
}

impl std::fmt::Display for InfoMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InfoMode::Perfect => "perfect",
            InfoMode::Imperfect => "imperfect",
        })
    }
}

impl std::str::FromStr for InfoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(InfoMode::Perfect),
            "imperfect" => Ok(InfoMode::Imperfect),
            other => Err(Error::InvalidArgument(format!("unknown information mode '{other}' (expected perfect|imperfect)"))),
        }
    }
}

/// Per-controller delay laws and link success probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub delay: Vec<DelayModel>,
    /// Sensor → controller success probability.
    pub p_sc: Vec<f64>,
    /// Controller → actuator success probability.
    pub p_ca: Vec<f64>,
    /// `p_link[i][m]`: controller m → controller i success probability.
    pub p_link: Vec<Vec<f64>>,
    pub info_mode: InfoMode,
}

impl NetworkSpec {
    /// Same loss probability on every link and the same delay law everywhere.
    pub fn homogeneous(p: usize, delay: DelayModel, success: f64, info_mode: InfoMode) -> Self {
        let p_link = (0..p)
            .map(|i| (0..p).map(|m| if i == m { 1.0 } else { success }).collect())
            .collect();
        Self {
            delay: vec![delay; p],
            p_sc: vec![success; p],
            p_ca: vec![success; p],
            p_link,
            info_mode,
        }
    }

    /// Lossless, delay-free network.
    pub fn ideal(p: usize) -> Self {
        Self::homogeneous(p, DelayModel::PointMass { fraction: 0.0 }, 1.0, InfoMode::Perfect)
    }

    pub fn controllers(&self) -> usize {
        self.delay.len()
    }

    pub fn with_mode(&self, info_mode: InfoMode) -> Self {
        Self {
            info_mode,
            ..self.clone()
        }
    }

    pub fn restrict(&self, p: usize) -> Self {
        Self {
            delay: self.delay[..p].to_vec(),
            p_sc: self.p_sc[..p].to_vec(),
            p_ca: self.p_ca[..p].to_vec(),
            p_link: self.p_link[..p].iter().map(|row| row[..p].to_vec()).collect(),
            info_mode: self.info_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.delay.len();
        if p == 0 {
            return Err(Error::InvalidArgument("network needs at least one controller".into()));
        }
        if self.p_sc.len() != p || self.p_ca.len() != p || self.p_link.len() != p {
            return Err(Error::dim("network probability lists", p, format!("sc {}, ca {}, link {}", self.p_sc.len(), self.p_ca.len(), self.p_link.len())));
        }
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        for d in &self.delay {
            d.validate()?;
        }
        if !self.p_sc.iter().chain(&self.p_ca).all(|v| prob(*v)) {
            return Err(Error::InvalidArgument("success probabilities must lie in [0, 1]".into()));
        }
        for (i, row) in self.p_link.iter().enumerate() {
            if row.len() != p {
                return Err(Error::dim(&format!("p_link[{i}]"), p, row.len()));
            }
            if !row.iter().all(|v| prob(*v)) {
                return Err(Error::InvalidArgument(format!("p_link[{i}] has entries outside [0, 1]")));
            }
            if row[i] != 1.0 {
                return Err(Error::InvalidArgument(format!("p_link[{i}][{i}] must be 1")));
            }
        }
        Ok(())
    }

    pub fn validate_against(&self, plant: &PlantSpec) -> Result<()> {
        self.validate()?;
        if self.controllers() != plant.controllers() {
            return Err(Error::dim("network vs plant controller count", plant.controllers(), self.controllers()));
        }
        Ok(())
    }

    /// End-to-end delivery probability through controller `i`.
    pub fn p_delivery(&self, i: usize) -> f64 {
        self.p_sc[i] * self.p_ca[i]
    }
}

/// One joint draw of every delay and switch over the horizon.
/// Outer index is the step `k`, then the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRealization {
    pub seed: u64,
    pub tau: Vec<Vec<f64>>,
    pub theta_sc: Vec<Vec<bool>>,
    pub theta_ca: Vec<Vec<bool>>,
    pub theta: Vec<Vec<bool>>,
    /// `theta_link[k][i][m]`: controller m's packet issued at step k reached controller i.
    pub theta_link: Vec<Vec<Vec<bool>>>,
}

impl ScenarioRealization {
    pub fn horizon(&self) -> usize {
        self.tau.len()
    }

    pub fn controllers(&self) -> usize {
        self.tau.first().map_or(0, Vec::len)
    }

    /// Chronological delivery history `θ_{i,0..=k}`.
    pub fn delivery_history(&self, i: usize, k: usize) -> Vec<bool> {
        self.theta[..=k].iter().map(|row| row[i]).collect()
    }
}

fn pair_key(i: usize, m: usize) -> u64 {
    ((i as u64) << 32) | m as u64
}

/// Draws every delay and switch for `plant.horizon` steps.
pub fn sample_scenario(spec: &NetworkSpec, plant: &PlantSpec, seed: u64) -> ScenarioRealization {
    let rng = KeyedRng::new(seed);
    let p = spec.controllers();
    let n = plant.horizon;
    let mut real = ScenarioRealization {
        seed,
        tau: Vec::with_capacity(n),
        theta_sc: Vec::with_capacity(n),
        theta_ca: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        theta_link: Vec::with_capacity(n),
    };
    for k in 0..n {
        let kk = k as u64;
        let tau: Vec<f64> = (0..p)
            .map(|i| spec.delay[i].sample(rng.uniform(Stream::Delay, kk, i as u64), plant.period))
            .collect();
        let sc: Vec<bool> = (0..p)
            .map(|i| rng.uniform(Stream::SensorLoss, kk, i as u64) < spec.p_sc[i])
            .collect();
        let ca: Vec<bool> = (0..p)
            .map(|i| rng.uniform(Stream::ActuatorLoss, kk, i as u64) < spec.p_ca[i])
            .collect();
        let theta = sc.iter().zip(&ca).map(|(a, b)| *a && *b).collect();
        let link = (0..p)
            .map(|i| {
                (0..p)
                    .map(|m| i == m || rng.uniform(Stream::LinkLoss, kk, pair_key(i, m)) < spec.p_link[i][m])
                    .collect()
            })
            .collect();
        real.tau.push(tau);
        real.theta_sc.push(sc);
        real.theta_ca.push(ca);
        real.theta.push(theta);
        real.theta_link.push(link);
    }
    real
}

/// Sample frequencies across realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSummary {
    pub draws: usize,
    pub sc: Vec<f64>,
    pub ca: Vec<f64>,
    pub delivery: Vec<f64>,
    pub link: Vec<Vec<f64>>,
    pub tau_mean: Vec<f64>,
    pub tau_var: Vec<f64>,
}

pub fn empirical_rates(realizations: &[ScenarioRealization]) -> Result<RateSummary> {
    let first = realizations
        .first()
        .ok_or_else(|| Error::InvalidArgument("empirical_rates needs at least one realization".into()))?;
    let p = first.controllers();
    let mut count = 0usize;
    let mut sc = vec![0usize; p];
    let mut ca = vec![0usize; p];
    let mut del = vec![0usize; p];
    let mut link = vec![vec![0usize; p]; p];
    let mut tau_sum = vec![0.0; p];
    let mut tau_sq = vec![0.0; p];
    for real in realizations {
        if real.controllers() != p {
            return Err(Error::dim("realization controller count", p, real.controllers()));
        }
        for k in 0..real.horizon() {
            count += 1;
            for i in 0..p {
                sc[i] += real.theta_sc[k][i] as usize;
                ca[i] += real.theta_ca[k][i] as usize;
                del[i] += real.theta[k][i] as usize;
                tau_sum[i] += real.tau[k][i];
                tau_sq[i] += real.tau[k][i] * real.tau[k][i];
                for (count, &hit) in link[i].iter_mut().zip(&real.theta_link[k][i]) {
                    *count += hit as usize;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("realizations have zero horizon".into()));
    }
    let n = count as f64;
    let rate = |v: &[usize]| v.iter().map(|c| *c as f64 / n).collect::<Vec<_>>();
    let tau_mean: Vec<f64> = tau_sum.iter().map(|s| s / n).collect();
    let tau_var = tau_sq
        .iter()
        .zip(&tau_mean)
        .map(|(sq, mean)| (sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0))
        .collect();
    Ok(RateSummary {
        draws: count,
        sc: rate(&sc),
        ca: rate(&ca),
        delivery: rate(&del),
        link: link.iter().map(|row| rate(row)).collect(),
        tau_mean,
        tau_var,
    })
}
