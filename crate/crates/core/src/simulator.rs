//! Closed-loop rollouts under sampled delays and losses.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::discretization::{build_beta, Discretizer, PlantSpec};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::network::{sample_scenario, InfoMode, KeyedRng, NetworkSpec, ScenarioRealization, Stream};
use crate::solver::GainSchedule;

/// What a perfect-information controller does when its sensor packet is lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmissionPolicy {
    /// Emit nothing; the history slot is zero.
    #[default]
    SkipOnSensorLoss,
    /// Always emit `-L z_k`.
    Always,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// `x[k]` for `k = 0..=N`.
    pub x: Vec<Vector>,
    /// Issued controls `u[i][k]` (zero when nothing was emitted).
    pub u: Vec<Vec<Vector>>,
    /// Actuator-held inputs `ũ[i][k]`.
    pub u_applied: Vec<Vec<Vector>>,
    pub emitted: Vec<Vec<bool>>,
    pub realization: ScenarioRealization,
    pub j_joint: f64,
    pub j: Vec<f64>,
}

impl SimulationTrace {
    pub fn horizon(&self) -> usize {
        self.x.len() - 1
    }

    /// Writes one row per step: `k, x…, u…, ũ…, θ…, τ…`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let p = self.u.len();
        let m = self.x[0].len();
        let kk = self.u.first().and_then(|u| u.first()).map_or(0, |v| v.len());
        let mut out = String::new();
        let mut header = vec!["k".to_string()];
        header.extend((1..=m).map(|r| format!("x_{r}")));
        for prefix in ["u", "u_applied"] {
            for i in 1..=p {
                header.extend((1..=kk).map(|c| if kk == 1 { format!("{prefix}_{i}") } else { format!("{prefix}_{i}_{c}") }));
            }
        }
        header.extend((1..=p).map(|i| format!("theta_{i}")));
        header.extend((1..=p).map(|i| format!("tau_{i}")));
        out.push_str(&header.join(","));
        out.push('\n');
        let n = self.horizon();
        for k in 0..=n {
            let mut row = vec![k.to_string()];
            row.extend(self.x[k].iter().map(f64::to_string));
            for series in [&self.u, &self.u_applied] {
                for per in series.iter() {
                    if k < n {
                        row.extend(per[k].iter().map(f64::to_string));
                    } else {
                        row.extend(std::iter::repeat_n(String::new(), kk));
                    }
                }
            }
            for i in 0..p {
                row.push(if k < n { u8::from(self.realization.theta[k][i]).to_string() } else { String::new() });
            }
            for i in 0..p {
                row.push(if k < n { self.realization.tau[k][i].to_string() } else { String::new() });
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Stacks `[x_k; û_{k-1}; …; û_0]` from the issued-control history.
pub fn augmented_state(x: &Vector, issued: &[Vec<Vector>], k: usize) -> Vector {
    let p = issued.len();
    let kk = issued.first().and_then(|u| u.first()).map_or(0, |v| v.len());
    let m = x.len();
    let mut z = Vector::zeros(m + p * k * kk);
    z.rows_mut(0, m).copy_from(x);
    for lag in 1..=k {
        for (c, per) in issued.iter().enumerate() {
            z.rows_mut(m + (lag - 1) * p * kk + c * kk, kk).copy_from(&per[k - lag]);
        }
    }
    z
}

/// What controller `i` sees of `z_k`: the full vector with perfect
/// information, or lost entries zeroed with imperfect information.
pub fn observation(i: usize, k: usize, z: &Vector, schedule: &GainSchedule, realization: &ScenarioRealization) -> Vector {
    if schedule.mode == InfoMode::Perfect {
        return z.clone();
    }
    let lay = schedule.layout(k);
    let mut obs = z.clone();
    if !realization.theta_sc[k][i] {
        obs.rows_mut(0, lay.state_dim).fill(0.0);
    }
    for lag in 1..=k {
        for m in 0..lay.controllers {
            if !realization.theta_link[k - lag][i][m] {
                obs.rows_mut(lay.history_offset(m, lag), lay.input_dim).fill(0.0);
            }
        }
    }
    obs
}

/// The control issued by controller `i` at step `k`, or `None`.
pub fn controller_emit(
    i: usize,
    k: usize,
    z: &Vector,
    schedule: &GainSchedule,
    realization: &ScenarioRealization,
    policy: EmissionPolicy,
) -> Result<Option<Vector>> {
    if i >= schedule.controllers || k >= schedule.horizon {
        return Err(Error::InvalidArgument(format!(
            "schedule covers {} controllers and {} steps, asked for controller {i} at step {k}",
            schedule.controllers, schedule.horizon
        )));
    }
    let l = schedule.gain(i, k);
    if l.ncols() != z.len() {
        return Err(Error::dim("augmented state", l.ncols(), z.len()));
    }
    let sensed = realization.theta_sc[k][i];
    match schedule.mode {
        InfoMode::Perfect if !sensed && policy == EmissionPolicy::SkipOnSensorLoss => Ok(None),
        InfoMode::Perfect => Ok(Some(-(l * z))),
        InfoMode::Imperfect => Ok(Some(-(l * observation(i, k, z, schedule, realization)))),
    }
}

/// Direct update `x_{k+1} = Φx + Σ_i Γ⁰(τ_i)ũ_{i,k} + Γ¹(τ_i)ũ_{i,k-1}`.
pub fn step_plant(disc: &Discretizer, x: &Vector, held_now: &[Vector], held_prev: &[Vector], tau: &[f64]) -> Result<Vector> {
    let mut next = disc.phi() * x;
    for i in 0..held_now.len() {
        let (g0, g1) = disc.gammas(i, tau[i])?;
        next += g0 * &held_now[i] + g1 * &held_prev[i];
    }
    Ok(next)
}

/// The same update through the lag maps: `x_{k+1} = Φx + Σ_i Σ_j β^j_{i,k} u_{i,k-j}`.
pub fn step_plant_beta(
    disc: &Discretizer,
    x: &Vector,
    issued: &[Vec<Vector>],
    realization: &ScenarioRealization,
    k: usize,
) -> Result<Vector> {
    let mut next = disc.phi() * x;
    for (i, per) in issued.iter().enumerate() {
        let step = disc.step(i, realization.tau[k][i])?;
        let betas = build_beta(&step, &realization.delivery_history(i, k), k)?;
        for (j, b) in betas.beta.iter().enumerate() {
            next += b * &per[k - j];
        }
    }
    Ok(next)
}

/// Actuator hold: the new input if delivered, else the previous one.
pub fn hold(issued: &Vector, previous: &Vector, delivered: bool) -> Vector {
    if delivered {
        issued.clone()
    } else {
        previous.clone()
    }
}

fn check_compat(plant: &PlantSpec, network: &NetworkSpec, schedule: &GainSchedule) -> Result<()> {
    if schedule.controllers != plant.controllers() || network.controllers() != plant.controllers() {
        return Err(Error::dim("schedule controllers", plant.controllers(), schedule.controllers));
    }
    if schedule.state_dim != plant.state_dim() || schedule.input_dim != plant.input_dim() {
        return Err(Error::dim(
            "schedule dimensions",
            format!("{}x{}", plant.state_dim(), plant.input_dim()),
            format!("{}x{}", schedule.state_dim, schedule.input_dim),
        ));
    }
    if schedule.horizon < plant.horizon {
        return Err(Error::InvalidArgument(format!(
            "schedule horizon {} shorter than plant horizon {}",
            schedule.horizon, plant.horizon
        )));
    }
    Ok(())
}

/// Replays one episode of `plant.horizon` steps from the realization drawn
/// with `seed`.
pub fn run_episode(plant: &PlantSpec, network: &NetworkSpec, schedule: &GainSchedule, seed: u64, policy: EmissionPolicy) -> Result<SimulationTrace> {
    check_compat(plant, network, schedule)?;
    let disc = Discretizer::new(plant)?;
    let realization = sample_scenario(network, plant, seed);
    run_with_realization(plant, &disc, schedule, realization, policy)
}

pub fn run_with_realization(
    plant: &PlantSpec,
    disc: &Discretizer,
    schedule: &GainSchedule,
    realization: ScenarioRealization,
    policy: EmissionPolicy,
) -> Result<SimulationTrace> {
    let n = plant.horizon;
    let p = plant.controllers();
    let kk = plant.input_dim();
    if realization.horizon() < n || realization.controllers() != p {
        return Err(Error::dim("realization", format!("{n} steps x {p} controllers"), format!("{} x {}", realization.horizon(), realization.controllers())));
    }
    let zero = Vector::zeros(kk);
    let mut x = vec![plant.x0_vector()];
    let mut issued: Vec<Vec<Vector>> = vec![Vec::with_capacity(n); p];
    let mut applied: Vec<Vec<Vector>> = vec![Vec::with_capacity(n); p];
    let mut emitted: Vec<Vec<bool>> = vec![Vec::with_capacity(n); p];
    let mut stage = 0.0;
    let mut control_cost = vec![0.0; p];
    for k in 0..n {
        let xk = &x[k];
        let z = augmented_state(xk, &issued, k);
        for i in 0..p {
            let u = controller_emit(i, k, &z, schedule, &realization, policy)?;
            emitted[i].push(u.is_some());
            issued[i].push(u.unwrap_or_else(|| zero.clone()));
        }
        let mut held_now = Vec::with_capacity(p);
        let mut held_prev = Vec::with_capacity(p);
        for i in 0..p {
            let prev = if k == 0 { zero.clone() } else { applied[i][k - 1].clone() };
            let now = hold(&issued[i][k], &prev, realization.theta[k][i]);
            applied[i].push(now.clone());
            held_now.push(now);
            held_prev.push(prev);
        }
        stage += xk.dot(&(&plant.q_stage * xk));
        for i in 0..p {
            control_cost[i] += issued[i][k].dot(&(&plant.r[i] * &issued[i][k]));
        }
        let next = step_plant(disc, xk, &held_now, &held_prev, &realization.tau[k])?;
        x.push(next);
    }
    let terminal = x[n].dot(&(&plant.q_terminal * &x[n]));
    let base = terminal + stage;
    let j = control_cost.iter().map(|c| base + c).collect();
    let j_joint = base + control_cost.iter().sum::<f64>();
    Ok(SimulationTrace {
        x,
        u: issued,
        u_applied: applied,
        emitted,
        realization,
        j_joint,
        j,
    })
}

/// States re-derived from a trace through the lag maps.
pub fn beta_path_states(plant: &PlantSpec, trace: &SimulationTrace) -> Result<Vec<Vector>> {
    let disc = Discretizer::new(plant)?;
    let mut x = vec![trace.x[0].clone()];
    for k in 0..trace.horizon() {
        let next = step_plant_beta(&disc, &x[k], &trace.u, &trace.realization, k)?;
        x.push(next);
    }
    Ok(x)
}

/// Realized costs of one schedule over a batch of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSummary {
    pub name: String,
    pub runs: usize,
    pub seeds: Vec<u64>,
    /// Per-run joint cost.
    pub joint: Vec<f64>,
    /// `per_controller[i][run]`.
    pub per_controller: Vec<Vec<f64>>,
    pub joint_mean: f64,
    pub joint_stderr: f64,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Sample mean and standard error (`std / sqrt(n)`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean).powi(2))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl CostSummary {
    fn from_runs(name: &str, seeds: Vec<u64>, traces: &[(f64, Vec<f64>)]) -> Self {
        let joint: Vec<f64> = traces.iter().map(|t| t.0).collect();
        let p = traces.first().map_or(0, |t| t.1.len());
        let per_controller: Vec<Vec<f64>> = (0..p).map(|i| traces.iter().map(|t| t.1[i]).collect()).collect();
        let (joint_mean, joint_stderr) = mean_stderr(&joint);
        let (mean, stderr) = per_controller.iter().map(|v| mean_stderr(v)).unzip();
        Self {
            name: name.to_string(),
            runs: joint.len(),
            seeds,
            joint,
            per_controller,
            joint_mean,
            joint_stderr,
            mean,
            stderr,
        }
    }

    /// Mean and standard error of the per-run joint-cost difference `self - other`.
    pub fn paired_difference(&self, other: &CostSummary) -> Result<(f64, f64)> {
        if self.seeds != other.seeds {
            return Err(Error::InvalidArgument("summaries were not run on the same scenarios".into()));
        }
        let diff: Vec<f64> = self.joint.iter().zip(&other.joint).map(|(a, b)| a - b).collect();
        Ok(mean_stderr(&diff))
    }
}

/// Episode seeds for a batch.
pub fn episode_seeds(seed: u64, n_runs: usize) -> Vec<u64> {
    let rng = KeyedRng::new(seed);
    (0..n_runs as u64).map(|r| rng.derive_seed(Stream::EpisodeSeed, r)).collect()
}

/// Evaluates every schedule on the same episode seeds. Schedules with fewer
/// controllers than the plant run on the plant and network restricted to
/// their leading controllers; each schedule runs in its own information mode.
pub fn run_monte_carlo(
    plant: &PlantSpec,
    network: &NetworkSpec,
    schedules: &[(String, GainSchedule)],
    n_runs: usize,
    seed: u64,
    policy: EmissionPolicy,
) -> Result<Vec<CostSummary>> {
    if schedules.is_empty() {
        return Err(Error::InvalidArgument("no schedules to evaluate".into()));
    }
    if n_runs < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 runs, got {n_runs}")));
    }
    let seeds = episode_seeds(seed, n_runs);
    schedules
        .iter()
        .map(|(name, schedule)| {
            let p = schedule.controllers;
            if p > plant.controllers() {
                return Err(Error::dim("schedule controllers", plant.controllers(), p));
            }
            let plant_p = plant.restrict(p);
            let net_p = network.restrict(p).with_mode(schedule.mode);
            check_compat(&plant_p, &net_p, schedule)?;
            let disc = Discretizer::new(&plant_p)?;
            let runs: Vec<(f64, Vec<f64>)> = seeds
                .par_iter()
                .map(|&s| {
                    let real = sample_scenario(&net_p, &plant_p, s);
                    run_with_realization(&plant_p, &disc, schedule, real, policy).map(|t| (t.j_joint, t.j))
                })
                .collect::<Result<_>>()?;
            Ok(CostSummary::from_runs(name, seeds.clone(), &runs))
        })
        .collect()
}

/// `name,mean,stderr,runs` of the joint cost, one row per schedule.
pub fn write_summary_csv(summaries: &[CostSummary], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "schedule,mean,stderr,runs")?;
    for s in summaries {
        writeln!(f, "{},{},{},{}", s.name, s.joint_mean, s.joint_stderr, s.runs)?;
    }
    Ok(())
}

/// Largest deviation between the direct and lag-map state paths.
pub fn dual_path_gap(plant: &PlantSpec, trace: &SimulationTrace) -> Result<f64> {
    let alt = beta_path_states(plant, trace)?;
    Ok(trace
        .x
        .iter()
        .zip(&alt)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max))
}
