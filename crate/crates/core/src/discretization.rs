//! Plant description and its exact sampled-data form under a fractional
//! input delay, plus the loss-dependent lag maps that fold the actuator
//! hold into the state update.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Continuous-time plant, quadratic weights and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    #[serde(with = "crate::serde_matrix")]
    pub a: Mat,
    /// One input map per controller, each `M x K`.
    #[serde(with = "crate::serde_matrix::list")]
    pub b: Vec<Mat>,
    /// Sampling period in seconds.
    pub period: f64,
    pub horizon: usize,
    #[serde(with = "crate::serde_matrix")]
    pub q_terminal: Mat,
    #[serde(with = "crate::serde_matrix")]
    pub q_stage: Mat,
    #[serde(with = "crate::serde_matrix::list")]
    pub r: Vec<Mat>,
    pub x0: Vec<f64>,
}

const WEIGHT_TOL: f64 = 1e-10;

impl PlantSpec {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.first().map_or(0, |b| b.ncols())
    }

    pub fn controllers(&self) -> usize {
        self.b.len()
    }

    pub fn x0_vector(&self) -> linalg::Vector {
        linalg::Vector::from_column_slice(&self.x0)
    }

    /// Keeps the first `p` controllers.
    pub fn restrict(&self, p: usize) -> PlantSpec {
        let mut out = self.clone();
        out.b.truncate(p);
        out.r.truncate(p);
        out
    }

    pub fn with_horizon(&self, horizon: usize) -> PlantSpec {
        PlantSpec {
            horizon,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.a.nrows();
        if self.a.ncols() != m || m == 0 {
            return Err(Error::dim("plant A", "square non-empty", format!("{}x{}", m, self.a.ncols())));
        }
        if self.b.is_empty() {
            return Err(Error::InvalidArgument("at least one controller is required".into()));
        }
        let k = self.input_dim();
        if k == 0 {
            return Err(Error::InvalidArgument("input dimension must be positive".into()));
        }
        for (i, b) in self.b.iter().enumerate() {
            if b.nrows() != m || b.ncols() != k {
                return Err(Error::dim(
                    &format!("plant B[{i}]"),
                    format!("{m}x{k}"),
                    format!("{}x{}", b.nrows(), b.ncols()),
                ));
            }
        }
        if self.r.len() != self.b.len() {
            return Err(Error::dim("plant R list", self.b.len(), self.r.len()));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::InvalidArgument(format!("sampling period must be positive, got {}", self.period)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if self.x0.len() != m {
            return Err(Error::dim("plant x0", m, self.x0.len()));
        }
        for (name, q) in [("Q_N", &self.q_terminal), ("Q_1", &self.q_stage)] {
            if q.nrows() != m || q.ncols() != m {
                return Err(Error::dim(&format!("plant {name}"), format!("{m}x{m}"), format!("{}x{}", q.nrows(), q.ncols())));
            }
            check_weight(name, q, false)?;
        }
        for (i, r) in self.r.iter().enumerate() {
            if r.nrows() != k || r.ncols() != k {
                return Err(Error::dim(&format!("plant R[{i}]"), format!("{k}x{k}"), format!("{}x{}", r.nrows(), r.ncols())));
            }
            check_weight(&format!("R[{i}]"), r, true)?;
        }
        let finite = linalg::all_finite(&self.a)
            && self.b.iter().all(linalg::all_finite)
            && self.x0.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("plant".into()));
        }
        Ok(())
    }
}

fn check_weight(name: &str, q: &Mat, definite: bool) -> Result<()> {
    if !linalg::all_finite(q) {
        return Err(Error::NonFinite(name.to_string()));
    }
    let scale = linalg::max_abs(q).max(1.0);
    if linalg::asymmetry(q) > WEIGHT_TOL * scale {
        return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
    }
    let min = linalg::min_eigenvalue(q);
    if definite && min <= WEIGHT_TOL * scale {
        return Err(Error::InvalidArgument(format!("{name} must be positive definite (min eigenvalue {min:.3e})")));
    }
    if !definite && min < -WEIGHT_TOL * scale {
        return Err(Error::InvalidArgument(format!("{name} must be positive semi-definite (min eigenvalue {min:.3e})")));
    }
    Ok(())
}

/// Transition and input maps for one sampling interval with a realized delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStep {
    pub phi: Mat,
    /// Input map for the control applied after the delay elapses.
    pub gamma0: Mat,
    /// Input map for the control still held during the delay.
    pub gamma1: Mat,
    pub tau: f64,
}

/// Lag-indexed effective input maps for one controller at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSet {
    pub beta: Vec<Mat>,
}

impl BetaSet {
    pub fn lags(&self) -> usize {
        self.beta.len()
    }

    /// Lags carrying a nonzero map.
    pub fn active_lags(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, b)| b.iter().any(|v| *v != 0.0))
            .map(|(j, _)| j)
            .collect()
    }
}

/// `e^X` by scaling and squaring with a Padé approximant.
pub fn matrix_exponential(x: &Mat) -> Result<Mat> {
    if x.nrows() != x.ncols() {
        return Err(Error::dim("matrix_exponential", "square", format!("{}x{}", x.nrows(), x.ncols())));
    }
    if !linalg::all_finite(x) {
        return Err(Error::NonFinite("matrix_exponential input".into()));
    }
    if x.nrows() == 0 {
        return Ok(x.clone());
    }
    Ok(x.exp())
}

/// Blocks of `exp([[A, I], [0, 0]] t)`: returns `(e^{At}, ∫_0^t e^{As} ds)`.
fn augmented_exp(a: &Mat, t: f64) -> Result<(Mat, Mat)> {
    let m = a.nrows();
    let mut aug = DMatrix::zeros(2 * m, 2 * m);
    aug.view_mut((0, 0), (m, m)).copy_from(&(a * t));
    for d in 0..m {
        aug[(d, m + d)] = t;
    }
    let e = matrix_exponential(&aug)?;
    Ok((
        e.view((0, 0), (m, m)).into_owned(),
        e.view((0, m), (m, m)).into_owned(),
    ))
}

/// `∫_a^b e^{As} ds · B` without quadrature.
pub fn exp_integral(a: &Mat, lo: f64, hi: f64, b: &Mat) -> Result<Mat> {
    if a.nrows() != a.ncols() || b.nrows() != a.nrows() {
        return Err(Error::dim("exp_integral", format!("A square, B with {} rows", a.nrows()), format!("A {}x{}, B {}x{}", a.nrows(), a.ncols(), b.nrows(), b.ncols())));
    }
    if !(lo >= 0.0 && lo <= hi) {
        return Err(Error::InvalidArgument(format!("integration bounds must satisfy 0 <= a <= b, got [{lo}, {hi}]")));
    }
    if lo == hi {
        return Ok(DMatrix::zeros(b.nrows(), b.ncols()));
    }
    let (_, upper) = augmented_exp(a, hi)?;
    let (_, lower) = augmented_exp(a, lo)?;
    Ok((upper - lower) * b)
}

/// Exact discretization of controller `i`'s channel for a realized delay.
pub fn discretize(plant: &PlantSpec, controller: usize, tau: f64) -> Result<DiscreteStep> {
    Discretizer::new(plant)?.step(controller, tau)
}

/// Caches `Φ` and the full-period input integrals so per-delay work is one
/// augmented exponential.
#[derive(Debug, Clone)]
pub struct Discretizer {
    a: Mat,
    b: Vec<Mat>,
    period: f64,
    phi: Mat,
    full: Vec<Mat>,
}

impl Discretizer {
    pub fn new(plant: &PlantSpec) -> Result<Self> {
        let (phi, psi) = augmented_exp(&plant.a, plant.period)?;
        let full = plant.b.iter().map(|b| &psi * b).collect();
        Ok(Self {
            a: plant.a.clone(),
            b: plant.b.clone(),
            period: plant.period,
            phi,
            full,
        })
    }

    pub fn phi(&self) -> &Mat {
        &self.phi
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn controllers(&self) -> usize {
        self.b.len()
    }

    /// `∫_0^T e^{As} ds · B_i`, the delay-free input map.
    pub fn full_input_map(&self, controller: usize) -> &Mat {
        &self.full[controller]
    }

    pub fn gammas(&self, controller: usize, tau: f64) -> Result<(Mat, Mat)> {
        let b = self
            .b
            .get(controller)
            .ok_or_else(|| Error::InvalidArgument(format!("controller index {controller} out of range")))?;
        if !(0.0..=self.period).contains(&tau) {
            return Err(Error::InvalidArgument(format!("delay {tau} outside [0, {}]", self.period)));
        }
        let gamma0 = if tau == 0.0 {
            self.full[controller].clone()
        } else {
            let (_, psi) = augmented_exp(&self.a, self.period - tau)?;
            psi * b
        };
        let gamma1 = &self.full[controller] - &gamma0;
        Ok((gamma0, gamma1))
    }

    pub fn step(&self, controller: usize, tau: f64) -> Result<DiscreteStep> {
        let (gamma0, gamma1) = self.gammas(controller, tau)?;
        Ok(DiscreteStep {
            phi: self.phi.clone(),
            gamma0,
            gamma1,
            tau,
        })
    }
}

/// Lag maps `β^j` for `j = 0..=k` given the chronological loss history
/// `θ_0..θ_k` of one controller (true = delivered).
pub fn build_beta(step: &DiscreteStep, loss_history: &[bool], k: usize) -> Result<BetaSet> {
    if loss_history.len() != k + 1 {
        return Err(Error::dim("loss history", k + 1, loss_history.len()));
    }
    let theta = |l: usize| if loss_history[l] { 1.0 } else { 0.0 };
    let mut beta = Vec::with_capacity(k + 1);
    beta.push(&step.gamma0 * theta(k));
    // Running products of (1 - θ_l) over l = k-j+1..=k and l = k-j+1..=k-1.
    let mut lost_through_k = 1.0;
    let mut lost_before_k = 1.0;
    for j in 1..=k {
        lost_through_k *= 1.0 - theta(k + 1 - j);
        if j >= 2 {
            lost_before_k *= 1.0 - theta(k + 1 - j);
        }
        let weight = theta(k - j);
        beta.push((&step.gamma0 * lost_through_k + &step.gamma1 * lost_before_k) * weight);
    }
    Ok(BetaSet { beta })
}
