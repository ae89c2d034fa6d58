//! Backward recursion for the decentralized game: value matrices `S_{i,k}`
//! and feedback gains `L_{i,k}` for every controller.
//!
//! At each step the equilibrium feedbacks `F_i = -L_i` solve
//!
//! ```text
//! G_i F̃_i + Σ_{l≠i} Y_i^l F̃_l = -E[D_iᵀ S_{i,k+1} C⁰]      for all i
//! ```
//!
//! where `F̃_l = F_l · diag(q_l)` and `q_l` are the probabilities that
//! controller `l` observes each column of `z_k` (all ones with perfect
//! information). Every column block of `z_k` shares the same left-hand
//! operator, so one stacked `pK x pK` factorization serves all of them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::discretization::PlantSpec;
use crate::error::{Error, Result};
pub use crate::layout::AugmentedLayout;
use crate::linalg::{self, Mat};
use crate::moments::{scale_columns, BetaSample, MomentEngine, MomentSet};
use crate::network::{InfoMode, NetworkSpec};

/// Condition number above which the stacked system is reported singular.
pub const SINGULAR_CONDITION: f64 = 1e13;
/// Relative PSD tolerance for value matrices.
pub const PSD_TOL: f64 = 1e-8;

/// Solved feedback coefficients `F_i = [A_i^k, α_{i,k}^{1,1}, …]` at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub layout: AugmentedLayout,
    pub feedback: Vec<Mat>,
}

impl Coefficients {
    pub fn zeros(layout: AugmentedLayout) -> Self {
        let f = Mat::zeros(layout.input_dim, layout.dim());
        Self {
            layout,
            feedback: vec![f; layout.controllers],
        }
    }

    /// `A_i^k`.
    pub fn state_block(&self, i: usize) -> Mat {
        self.feedback[i]
            .view((0, 0), (self.layout.input_dim, self.layout.state_dim))
            .into_owned()
    }

    /// `α_{i,k}^{m,lag}`.
    pub fn history_block(&self, i: usize, m: usize, lag: usize) -> Mat {
        let kk = self.layout.input_dim;
        self.feedback[i]
            .view((0, self.layout.history_offset(m, lag)), (kk, kk))
            .into_owned()
    }

    /// `L_{i,k} = -[A_i^k, α…]`.
    pub fn gain(&self, i: usize) -> Mat {
        -&self.feedback[i]
    }
}

/// Per-column observation probabilities of each controller at one step.
pub fn observation_weights(network: &NetworkSpec, layout: &AugmentedLayout) -> Vec<Vec<f64>> {
    let n = layout.dim();
    (0..layout.controllers)
        .map(|l| match network.info_mode {
            InfoMode::Perfect => vec![1.0; n],
            InfoMode::Imperfect => (0..n)
                .map(|c| match layout.history_owner(c) {
                    None => network.p_sc[l],
                    Some((m, _)) => network.p_link[l][m],
                })
                .collect(),
        })
        .collect()
}

/// Solves the coupled coefficient equations for every controller at once.
///
/// Returns the coefficients and the effective feedbacks `F̃_l`.
pub fn solve_coefficients(moments: &MomentSet, weights: &[Vec<f64>]) -> Result<(Coefficients, Vec<Mat>)> {
    let lay = moments.layout;
    let p = lay.controllers;
    let kk = lay.input_dim;
    let n = lay.dim();
    if weights.len() != p || weights.iter().any(|w| w.len() != n) {
        return Err(Error::dim("observation weights", format!("{p} x {n}"), weights.len()));
    }
    let mut stacked = Mat::zeros(p * kk, p * kk);
    let mut rhs = Mat::zeros(p * kk, n);
    for i in 0..p {
        for l in 0..p {
            let block = if l == i { moments.g[i].clone() } else { moments.y(i, l) };
            stacked.view_mut((i * kk, l * kk), (kk, kk)).copy_from(&block);
        }
        rhs.view_mut((i * kk, 0), (kk, n)).copy_from(&(-moments.cross(i)));
    }
    let condition = linalg::condition_number(&stacked);
    if !condition.is_finite() || condition > SINGULAR_CONDITION {
        return Err(Error::Singular {
            step: lay.step,
            condition,
        });
    }
    let solved = stacked
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular {
            step: lay.step,
            condition,
        })?;
    let mut effective = Vec::with_capacity(p);
    let mut feedback = Vec::with_capacity(p);
    for (i, q) in weights.iter().enumerate() {
        let eff = solved.view((i * kk, 0), (kk, n)).into_owned();
        let inv: Vec<f64> = q.iter().map(|w| if *w > 0.0 { 1.0 / w } else { 0.0 }).collect();
        feedback.push(if q.iter().all(|w| *w == 1.0) { eff.clone() } else { scale_columns(&eff, &inv) });
        effective.push(eff);
    }
    Ok((Coefficients { layout: lay, feedback }, effective))
}

/// Explicit two-controller elimination of the coefficient equations
/// (perfect information). Independent of the stacked solve.
pub fn two_player_closed_form(moments: &MomentSet) -> Result<Coefficients> {
    let lay = moments.layout;
    if lay.controllers != 2 {
        return Err(Error::InvalidArgument("closed form needs exactly two controllers".into()));
    }
    let kk = lay.input_dim;
    let n = lay.dim();
    let ginv = |i: usize, x: &Mat| -> Result<Mat> {
        moments.g[i]
            .clone()
            .lu()
            .solve(x)
            .ok_or(Error::Singular { step: lay.step, condition: f64::INFINITY })
    };
    // a_1^i (and b_{1,n}^{i,m} column-wise) and a_2^i = b_{2,n}^{i,m}.
    let a1 = [ginv(0, &moments.cross(0))?, ginv(1, &moments.cross(1))?];
    let a2 = [ginv(0, &moments.y(0, 1))?, ginv(1, &moments.y(1, 0))?];
    let eye = DMatrix::<f64>::identity(kk, kk);
    let solve = |lhs: Mat, r: Mat| -> Result<Mat> {
        lhs.lu()
            .solve(&r)
            .ok_or(Error::Singular { step: lay.step, condition: f64::INFINITY })
    };
    let f1 = solve(&eye - &a2[0] * &a2[1], &a2[0] * &a1[1] - &a1[0])?;
    let f2 = solve(&eye - &a2[1] * &a2[0], &a2[1] * &a1[0] - &a1[1])?;
    debug_assert_eq!(f1.ncols(), n);
    Ok(Coefficients {
        layout: lay,
        feedback: vec![f1, f2],
    })
}

/// Transition pair `(C_{i,k}, D_{i,k})` for one sampled draw and numeric
/// coefficients of the other controllers.
pub fn assemble_cd(coeffs: &Coefficients, sample: &BetaSample, phi: &Mat, i: usize) -> Result<(Mat, Mat)> {
    let lay = coeffs.layout;
    if sample.step != lay.step || sample.controllers.len() != lay.controllers {
        return Err(Error::dim("assemble_cd sample", format!("step {} with {} controllers", lay.step, lay.controllers), format!("step {} with {}", sample.step, sample.controllers.len())));
    }
    if phi.nrows() != lay.state_dim {
        return Err(Error::dim("assemble_cd phi", lay.state_dim, phi.nrows()));
    }
    let m = lay.state_dim;
    let kk = lay.input_dim;
    let n = lay.dim();
    let nn = lay.next().dim();
    let mut c = Mat::zeros(nn, n);
    let mut top = Mat::zeros(m, n);
    top.view_mut((0, 0), (m, m)).copy_from(phi);
    for (mm, cb) in sample.controllers.iter().enumerate() {
        for lag in 1..=lay.step {
            let mut d = top.view_mut((0, lay.history_offset(mm, lag)), (m, kk));
            d += &cb.betas.beta[lag];
        }
    }
    for l in (0..lay.controllers).filter(|&l| l != i) {
        top += &sample.controllers[l].betas.beta[0] * &coeffs.feedback[l];
        c.view_mut((m + l * kk, 0), (kk, n)).copy_from(&coeffs.feedback[l]);
    }
    c.view_mut((0, 0), (m, n)).copy_from(&top);
    let w = lay.stack_width();
    for t in 0..(n - m) {
        c[(m + w + t, m + t)] = 1.0;
    }
    let mut d = Mat::zeros(nn, kk);
    d.view_mut((0, 0), (m, kk)).copy_from(&sample.controllers[i].betas.beta[0]);
    d.view_mut((m + i * kk, 0), (kk, kk)).copy_from(&DMatrix::identity(kk, kk));
    Ok((c, d))
}

/// `Q̄`: `q` in the state block, zero elsewhere.
pub fn embed_state_weight(q: &Mat, layout: &AugmentedLayout) -> Mat {
    let n = layout.dim();
    let mut out = Mat::zeros(n, n);
    out.view_mut((0, 0), (layout.state_dim, layout.state_dim)).copy_from(q);
    out
}

/// Outcome of one backward step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub coefficients: Coefficients,
    pub gains: Vec<Mat>,
    pub values: Vec<Mat>,
}

/// Coefficients, gains and value matrices at step `k` from its moments.
pub fn riccati_step(plant: &PlantSpec, network: &NetworkSpec, moments: &MomentSet) -> Result<StepResult> {
    let lay = moments.layout;
    let weights = observation_weights(network, &lay);
    let (coefficients, effective) = solve_coefficients(moments, &weights)?;
    let q_stage = embed_state_weight(&plant.q_stage, &lay);
    let mut values = Vec::with_capacity(lay.controllers);
    for (i, eff) in effective.iter().enumerate() {
        let csc = moments.expected_csc(i, &coefficients.feedback, &weights)?;
        let mut s = &q_stage + csc - eff.transpose() * &moments.g[i] * eff;
        linalg::symmetrize_in_place(&mut s);
        check_psd(&s, lay.step, i)?;
        values.push(s);
    }
    let gains = (0..lay.controllers).map(|i| coefficients.gain(i)).collect();
    Ok(StepResult {
        coefficients,
        gains,
        values,
    })
}

fn check_psd(s: &Mat, step: usize, controller: usize) -> Result<()> {
    if !linalg::all_finite(s) {
        return Err(Error::NonFinite(format!("value matrix of controller {controller} at step {step}")));
    }
    let norm = linalg::sym_norm(s);
    if norm == 0.0 || linalg::is_psd_within(s, PSD_TOL * norm) {
        return Ok(());
    }
    Err(Error::NotPositiveSemidefinite {
        step,
        controller,
        min_eigenvalue: linalg::min_eigenvalue(s),
        norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub n_samples: usize,
    pub seed: u64,
    /// Keep every `S_{i,k}` (memory grows cubically with the horizon).
    #[serde(default)]
    pub keep_values: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            n_samples: 4000,
            seed: 1,
            keep_values: false,
        }
    }
}

/// Time-varying gains `L[i][k]`, each `K x (M + p·k·K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub state_dim: usize,
    pub input_dim: usize,
    pub controllers: usize,
    pub horizon: usize,
    pub mode: InfoMode,
    pub seed: u64,
    pub n_samples: usize,
    pub spec_hash: String,
    pub gains: Vec<Vec<Mat>>,
}

impl GainSchedule {
    pub fn layout(&self, k: usize) -> AugmentedLayout {
        AugmentedLayout::new(self.state_dim, self.input_dim, self.controllers, k)
    }

    pub fn gain(&self, i: usize, k: usize) -> &Mat {
        &self.gains[i][k]
    }

    /// `A_i^k`.
    pub fn state_block(&self, i: usize, k: usize) -> Mat {
        -self.gains[i][k]
            .view((0, 0), (self.input_dim, self.state_dim))
            .into_owned()
    }

    /// `α_{i,k}^{m,lag}`.
    pub fn history_block(&self, i: usize, k: usize, m: usize, lag: usize) -> Mat {
        let off = self.layout(k).history_offset(m, lag);
        -self.gains[i][k]
            .view((0, off), (self.input_dim, self.input_dim))
            .into_owned()
    }

    /// Rebuilds `L_{i,k}` from its blocks.
    pub fn reassemble(&self, i: usize, k: usize) -> Mat {
        let lay = self.layout(k);
        let mut out = Mat::zeros(self.input_dim, lay.dim());
        out.view_mut((0, 0), (self.input_dim, self.state_dim))
            .copy_from(&-self.state_block(i, k));
        for lag in 1..=k {
            for m in 0..self.controllers {
                out.view_mut((0, lay.history_offset(m, lag)), (self.input_dim, self.input_dim))
                    .copy_from(&-self.history_block(i, k, m, lag));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains.len() != self.controllers {
            return Err(Error::dim("schedule controllers", self.controllers, self.gains.len()));
        }
        for (i, per) in self.gains.iter().enumerate() {
            if per.len() != self.horizon {
                return Err(Error::dim(&format!("schedule horizon of controller {i}"), self.horizon, per.len()));
            }
            for (k, l) in per.iter().enumerate() {
                let want = self.layout(k).dim();
                if l.nrows() != self.input_dim || l.ncols() != want {
                    return Err(Error::dim(&format!("L[{i}][{k}]"), format!("{}x{want}", self.input_dim), format!("{}x{}", l.nrows(), l.ncols())));
                }
            }
        }
        Ok(())
    }
}

/// Result of a full backward pass.
#[derive(Debug, Clone)]
pub struct GameSolution {
    pub schedule: GainSchedule,
    /// `S_{i,0}` for each controller.
    pub initial_values: Vec<Mat>,
    /// `values[i][k] = S_{i,k}` for `k = 0..=N` when kept.
    pub values: Option<Vec<Vec<Mat>>>,
    /// Solved coefficients per step (index `k`).
    pub coefficients: Vec<Coefficients>,
}

impl GameSolution {
    /// Predicted cost `x0ᵀ S_{i,0} x0` of each controller.
    pub fn predicted_costs(&self, x0: &[f64]) -> Vec<f64> {
        let x = linalg::Vector::from_column_slice(x0);
        self.initial_values
            .iter()
            .map(|s| linalg::quad_form(s, &x))
            .collect()
    }
}

/// Full backward pass from `S_{i,N} = Q̄_N` down to `k = 0`.
pub fn solve_game(plant: &PlantSpec, network: &NetworkSpec, settings: &SolverSettings) -> Result<GameSolution> {
    plant.validate()?;
    network.validate_against(plant)?;
    let engine = MomentEngine::new(plant, network, settings.n_samples, settings.seed)?;
    let n = plant.horizon;
    let p = plant.controllers();
    let terminal = embed_state_weight(&plant.q_terminal, &engine.layout(n));
    let mut current = vec![terminal; p];
    let mut kept: Option<Vec<Vec<Mat>>> = settings.keep_values.then(|| vec![Vec::with_capacity(n + 1); p]);
    if let Some(store) = kept.as_mut() {
        for (i, s) in current.iter().enumerate() {
            store[i].push(s.clone());
        }
    }
    let mut gains: Vec<Vec<Mat>> = vec![Vec::with_capacity(n); p];
    let mut coefficients = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let moments = engine.estimate(k, &current)?;
        let step = riccati_step(plant, network, &moments)?;
        for (i, l) in step.gains.into_iter().enumerate() {
            gains[i].push(l);
        }
        if let Some(store) = kept.as_mut() {
            for (i, s) in step.values.iter().enumerate() {
                store[i].push(s.clone());
            }
        }
        coefficients.push(step.coefficients);
        current = step.values;
    }
    for g in &mut gains {
        g.reverse();
    }
    coefficients.reverse();
    if let Some(store) = kept.as_mut() {
        for s in store.iter_mut() {
            s.reverse();
        }
    }
    let schedule = GainSchedule {
        state_dim: plant.state_dim(),
        input_dim: plant.input_dim(),
        controllers: p,
        horizon: n,
        mode: network.info_mode,
        seed: settings.seed,
        n_samples: settings.n_samples,
        spec_hash: crate::container::spec_hash(plant, network),
        gains,
    };
    Ok(GameSolution {
        schedule,
        initial_values: current,
        values: kept,
        coefficients,
    })
}

/// Baseline with controller 1 alone.
pub fn single_controller_gains(plant: &PlantSpec, network: &NetworkSpec, settings: &SolverSettings) -> Result<GameSolution> {
    solve_game(&plant.restrict(1), &network.restrict(1), settings)
}

/// Stationary feedback blocks read off a long backward pass.
#[derive(Debug, Clone)]
pub struct ConvergedGains {
    pub step: usize,
    pub lag_cap: usize,
    pub state_blocks: Vec<Mat>,
    /// `history_blocks[i][m][lag-1]` for `lag <= lag_cap`.
    pub history_blocks: Vec<Vec<Vec<Mat>>>,
    pub residual: f64,
    /// Residual at each `k`, index `k`.
    pub residuals: Vec<f64>,
    pub mode: InfoMode,
    pub spec_hash: String,
}

impl ConvergedGains {
    /// Constant-gain schedule over `horizon` steps (lags beyond the cap or
    /// beyond `k` are dropped).
    pub fn to_schedule(&self, horizon: usize, seed: u64, n_samples: usize) -> GainSchedule {
        let p = self.state_blocks.len();
        let kk = self.state_blocks[0].nrows();
        let m = self.state_blocks[0].ncols();
        let gains = (0..p)
            .map(|i| {
                (0..horizon)
                    .map(|k| {
                        let lay = AugmentedLayout::new(m, kk, p, k);
                        let mut l = Mat::zeros(kk, lay.dim());
                        l.view_mut((0, 0), (kk, m)).copy_from(&-&self.state_blocks[i]);
                        for lag in 1..=k.min(self.lag_cap) {
                            for c in 0..p {
                                l.view_mut((0, lay.history_offset(c, lag)), (kk, kk))
                                    .copy_from(&-&self.history_blocks[i][c][lag - 1]);
                            }
                        }
                        l
                    })
                    .collect()
            })
            .collect();
        GainSchedule {
            state_dim: m,
            input_dim: kk,
            controllers: p,
            horizon,
            mode: self.mode,
            seed,
            n_samples,
            spec_hash: self.spec_hash.clone(),
            gains,
        }
    }
}

fn block_residual(schedule: &GainSchedule, k: usize, lag_cap: usize) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..schedule.controllers {
        let d = schedule.state_block(i, k) - schedule.state_block(i, k + 1);
        worst = worst.max(linalg::inf_norm(&d));
        for lag in 1..=k.min(lag_cap) {
            for m in 0..schedule.controllers {
                let d = schedule.history_block(i, k, m, lag) - schedule.history_block(i, k + 1, m, lag);
                worst = worst.max(linalg::inf_norm(&d));
            }
        }
    }
    worst
}

/// Runs a horizon-`n_large` pass and returns the blocks at the first step,
/// scanning down from the end, whose change to the next step is within `tol`.
pub fn converged_gains(
    plant: &PlantSpec,
    network: &NetworkSpec,
    settings: &SolverSettings,
    n_large: usize,
    tol: f64,
    lag_cap: usize,
) -> Result<ConvergedGains> {
    let long = plant.with_horizon(n_large);
    let settings = SolverSettings {
        keep_values: false,
        ..settings.clone()
    };
    let sol = solve_game(&long, network, &settings)?;
    let schedule = &sol.schedule;
    // The last step has no successor; its residual is infinite.
    let residuals: Vec<f64> = (0..n_large)
        .map(|k| if k + 1 < n_large { block_residual(schedule, k, lag_cap) } else { f64::INFINITY })
        .collect();
    let found = (0..n_large).rev().find(|&k| residuals[k] <= tol);
    let Some(k) = found else {
        let best = residuals.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(Error::NoConvergence {
            horizon: n_large,
            best,
            residuals,
        });
    };
    let p = schedule.controllers;
    let history_blocks = (0..p)
        .map(|i| {
            (0..p)
                .map(|m| {
                    (1..=lag_cap)
                        .map(|lag| {
                            if lag <= k {
                                schedule.history_block(i, k, m, lag)
                            } else {
                                Mat::zeros(schedule.input_dim, schedule.input_dim)
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(ConvergedGains {
        step: k,
        lag_cap,
        state_blocks: (0..p).map(|i| schedule.state_block(i, k)).collect(),
        history_blocks,
        residual: residuals[k],
        residuals,
        mode: schedule.mode,
        spec_hash: schedule.spec_hash.clone(),
    })
}
