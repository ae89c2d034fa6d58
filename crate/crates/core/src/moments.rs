//! Monte-Carlo estimates of the expectations needed by the backward pass.
//!
//! With `w = [z_k; u_{1,k}; …; u_{p,k}]`, the next augmented state is
//! `z_{k+1} = T(ω) w` where only the top `M` rows of `T` are random. Every
//! moment the solver needs is a sub-block of `Ω_i = E[Tᵀ S_{i,k+1} T]`, so
//! that matrix (one per controller) is what gets estimated.
//!
//! Per sample the random top row factors as `U·V`, where
//! `U = [Φ, Γ⁰_1, Γ¹_1, …, Γ⁰_p, Γ¹_p]` depends only on the delays and `V`
//! only selects which column block each map lands on (it encodes the last
//! delivered control). That keeps per-sample work independent of `k`.

use rand::Rng;
use rayon::prelude::*;

use crate::discretization::{build_beta, BetaSet, DiscreteStep, Discretizer, PlantSpec};
use crate::error::{Error, Result};
use crate::layout::AugmentedLayout;
use crate::linalg::{self, Mat};
use crate::network::{KeyedRng, NetworkSpec, Stream};

const MIN_CHUNK: usize = 256;
const MAX_CHUNKS: usize = 64;

/// One controller's delay and loss draw for one Monte-Carlo sample.
#[derive(Debug, Clone)]
pub struct ControllerDraw {
    pub tau: f64,
    pub gamma0: Mat,
    pub gamma1: Mat,
    /// `θ_k`: the control issued at the current step is delivered.
    pub delivered_now: bool,
    /// Smallest lag `j >= 1` with `θ_{k-j} = 1`, if within the drawn depth.
    pub last_delivery_lag: Option<usize>,
}

impl ControllerDraw {
    /// Target lag for `Γ⁰` and `Γ¹` at step `k` (`Some(0)` = current control).
    fn targets(&self, k: usize) -> (Option<usize>, Option<usize>) {
        let prev = self.last_delivery_lag.filter(|&j| j <= k);
        let g0 = if self.delivered_now { Some(0) } else { prev };
        (g0, prev)
    }
}

fn loss_draw(rng: &mut impl Rng, network: &NetworkSpec, m: usize) -> bool {
    let sc = rng.random::<f64>() < network.p_sc[m];
    let ca = rng.random::<f64>() < network.p_ca[m];
    sc && ca
}

fn draw_delay(keys: &KeyedRng, network: &NetworkSpec, period: f64, s: usize, m: usize) -> f64 {
    network.delay[m].sample(keys.uniform(Stream::MomentDelay, s as u64, m as u64), period)
}

/// Pre-drawn samples shared by every step of a backward pass.
///
/// Draws are keyed by `(seed, sample, controller)` and indexed by lag, not by
/// absolute step, so the same sample stream serves every `k`.
#[derive(Debug, Clone)]
pub struct SampleBank {
    seed: u64,
    max_lag: usize,
    draws: Vec<Vec<ControllerDraw>>,
}

impl SampleBank {
    pub fn new(plant: &PlantSpec, network: &NetworkSpec, n_samples: usize, seed: u64, max_lag: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be positive".into()));
        }
        network.validate_against(plant)?;
        let disc = Discretizer::new(plant)?;
        let keys = KeyedRng::new(seed);
        let p = plant.controllers();
        let draws = (0..n_samples)
            .into_par_iter()
            .map(|s| {
                (0..p)
                    .map(|m| {
                        let tau = draw_delay(&keys, network, plant.period, s, m);
                        let (gamma0, gamma1) = disc.gammas(m, tau)?;
                        let mut rng = keys.stream(Stream::MomentLoss, s as u64, m as u64);
                        let delivered_now = loss_draw(&mut rng, network, m);
                        let mut last_delivery_lag = None;
                        for j in 1..=max_lag {
                            if loss_draw(&mut rng, network, m) {
                                last_delivery_lag = Some(j);
                                break;
                            }
                        }
                        Ok(ControllerDraw {
                            tau,
                            gamma0,
                            gamma1,
                            delivered_now,
                            last_delivery_lag,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { seed, max_lag, draws })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn draw(&self, sample: usize, controller: usize) -> &ControllerDraw {
        &self.draws[sample][controller]
    }
}

/// All controllers' lag maps for one joint draw at step `k`.
#[derive(Debug, Clone)]
pub struct BetaSample {
    pub step: usize,
    pub controllers: Vec<ControllerBetas>,
}

#[derive(Debug, Clone)]
pub struct ControllerBetas {
    pub tau: f64,
    /// Chronological `θ_0..=θ_k`.
    pub history: Vec<bool>,
    pub betas: BetaSet,
}

/// Draws the delay and full loss history of every controller for sample
/// `sample_index` at step `k`, using the same keys as [`SampleBank`].
pub fn sample_beta_joint(plant: &PlantSpec, network: &NetworkSpec, k: usize, seed: u64, sample_index: usize) -> Result<BetaSample> {
    if k >= plant.horizon {
        return Err(Error::InvalidArgument(format!("step {k} beyond horizon {}", plant.horizon)));
    }
    network.validate_against(plant)?;
    let disc = Discretizer::new(plant)?;
    let keys = KeyedRng::new(seed);
    let controllers = (0..plant.controllers())
        .map(|m| {
            let tau = draw_delay(&keys, network, plant.period, sample_index, m);
            let (gamma0, gamma1) = disc.gammas(m, tau)?;
            let mut rng = keys.stream(Stream::MomentLoss, sample_index as u64, m as u64);
            // Draw j is θ_{k-j}.
            let mut by_lag: Vec<bool> = (0..=k).map(|_| loss_draw(&mut rng, network, m)).collect();
            by_lag.reverse();
            let step = DiscreteStep {
                phi: disc.phi().clone(),
                gamma0,
                gamma1,
                tau,
            };
            let betas = build_beta(&step, &by_lag, k)?;
            Ok(ControllerBetas {
                tau,
                history: by_lag,
                betas,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BetaSample { step: k, controllers })
}

/// Estimated second moments for one step of the backward pass.
#[derive(Debug, Clone)]
pub struct MomentSet {
    pub layout: AugmentedLayout,
    /// `Ω_i = E[Tᵀ S_{i,k+1} T]`, size `extended_dim` square, per controller.
    pub omega: Vec<Mat>,
    /// `E[top row of T]`: `Φ` on the state block, `E[β⁰_m]` on the current
    /// controls, `E[β^n_m]` on history blocks.
    pub mean_top: Mat,
    /// `G_i = R_i + E[D_iᵀ S D_i]`.
    pub g: Vec<Mat>,
    pub sample_count: usize,
    pub seed: u64,
}

impl MomentSet {
    fn k_block(&self, i: usize, row: usize, col: usize, rows: usize, cols: usize) -> Mat {
        self.omega[i].view((row, col), (rows, cols)).into_owned()
    }

    /// `Y^l_i = E[D_iᵀ S D_l]`.
    pub fn y(&self, i: usize, l: usize) -> Mat {
        let kk = self.layout.input_dim;
        self.k_block(i, self.layout.current_offset(i), self.layout.current_offset(l), kk, kk)
    }

    /// `E[D_iᵀ S C⁰]`, the controller-`i` row against every column of `z_k`.
    pub fn cross(&self, i: usize) -> Mat {
        let kk = self.layout.input_dim;
        self.k_block(i, self.layout.current_offset(i), 0, kk, self.layout.dim())
    }

    /// `E[β⁰_m]`.
    pub fn mean_beta0(&self, m: usize) -> Mat {
        let off = self.layout.current_offset(m);
        self.mean_top
            .view((0, off), (self.layout.state_dim, self.layout.input_dim))
            .into_owned()
    }

    /// `E[β^lag_m]` for `lag >= 1`.
    pub fn mean_beta(&self, m: usize, lag: usize) -> Mat {
        let off = self.layout.history_offset(m, lag);
        self.mean_top
            .view((0, off), (self.layout.state_dim, self.layout.input_dim))
            .into_owned()
    }

    /// `E[C̄_iᵀ S C̄_i]` for controller `i` given every controller's feedback.
    ///
    /// `feedback[l]` is `F_l = [A_l, α_l…]` and `weights[l]` the per-column
    /// probability that controller `l` sees that entry of `z_k` (all ones
    /// under perfect information). Masks are independent across controllers
    /// and of the plant randomness; columns in the same block share a switch.
    pub fn expected_csc(&self, i: usize, feedback: &[Mat], weights: &[Vec<f64>]) -> Result<Mat> {
        let lay = &self.layout;
        let n = lay.dim();
        let kk = lay.input_dim;
        let p = lay.controllers;
        if feedback.len() != p || weights.len() != p {
            return Err(Error::dim("expected_csc controller count", p, feedback.len().min(weights.len())));
        }
        for (l, f) in feedback.iter().enumerate() {
            if f.nrows() != kk || f.ncols() != n || weights[l].len() != n {
                return Err(Error::dim("expected_csc feedback", format!("{kk}x{n}"), format!("{}x{}", f.nrows(), f.ncols())));
            }
        }
        let omega = &self.omega[i];
        let effective: Vec<Mat> = feedback
            .iter()
            .zip(weights)
            .map(|(f, q)| scale_columns(f, q))
            .collect();
        let mut out = omega.view((0, 0), (n, n)).into_owned();
        for l in (0..p).filter(|&l| l != i) {
            let ul = lay.current_offset(l);
            let zu = omega.view((0, ul), (n, kk));
            let term = zu * &effective[l];
            out += &term;
            out += term.transpose();
            for l2 in (0..p).filter(|&l2| l2 != i) {
                let ul2 = lay.current_offset(l2);
                let mid = omega.view((ul, ul2), (kk, kk));
                if l2 == l {
                    let mut own = feedback[l].transpose() * mid * &feedback[l];
                    mask_second_moment(&mut own, &weights[l], lay);
                    out += own;
                } else {
                    out += effective[l].transpose() * mid * &effective[l2];
                }
            }
        }
        linalg::symmetrize_in_place(&mut out);
        Ok(out)
    }
}

pub(crate) fn scale_columns(m: &Mat, q: &[f64]) -> Mat {
    let mut out = m.clone();
    for (c, w) in q.iter().enumerate() {
        out.column_mut(c).scale_mut(*w);
    }
    out
}

/// Multiplies by `E[θ_a θ_b]`: `q_a` within a block, `q_a q_b` across blocks.
fn mask_second_moment(x: &mut Mat, q: &[f64], lay: &AugmentedLayout) {
    let n = x.nrows();
    for b in 0..n {
        let bb = lay.column_block(b);
        for a in 0..n {
            let factor = if lay.column_block(a) == bb { q[a] } else { q[a] * q[b] };
            x[(a, b)] *= factor;
        }
    }
}

struct Partial {
    quad: Vec<Mat>,
    top: Mat,
}

/// Moment estimator bound to one plant, network and sample bank.
#[derive(Debug, Clone)]
pub struct MomentEngine {
    plant: PlantSpec,
    phi: Mat,
    bank: SampleBank,
}

impl MomentEngine {
    pub fn new(plant: &PlantSpec, network: &NetworkSpec, n_samples: usize, seed: u64) -> Result<Self> {
        let bank = SampleBank::new(plant, network, n_samples, seed, plant.horizon)?;
        let phi = Discretizer::new(plant)?.phi().clone();
        Ok(Self {
            plant: plant.clone(),
            phi,
            bank,
        })
    }

    pub fn bank(&self) -> &SampleBank {
        &self.bank
    }

    pub fn layout(&self, k: usize) -> AugmentedLayout {
        AugmentedLayout::new(
            self.plant.state_dim(),
            self.plant.input_dim(),
            self.plant.controllers(),
            k,
        )
    }

    fn check_values(&self, lay: &AugmentedLayout, s_next: &[Mat]) -> Result<()> {
        let want = lay.next().dim();
        if s_next.len() != lay.controllers {
            return Err(Error::dim("value matrices", lay.controllers, s_next.len()));
        }
        for s in s_next {
            if s.nrows() != want || s.ncols() != want {
                return Err(Error::dim("next-step value matrix", format!("{want}x{want}"), format!("{}x{}", s.nrows(), s.ncols())));
            }
        }
        Ok(())
    }

    /// `U` and the extended-vector offset of each of its column blocks.
    fn factor(&self, lay: &AugmentedLayout, sample: usize) -> (Mat, Vec<(usize, usize, usize)>) {
        let m = lay.state_dim;
        let kk = lay.input_dim;
        let p = lay.controllers;
        let mut u = Mat::zeros(m, m + 2 * p * kk);
        u.view_mut((0, 0), (m, m)).copy_from(&self.phi);
        // (column in U, width, target offset in w)
        let mut blocks = vec![(0, m, 0)];
        for c in 0..p {
            let d = self.bank.draw(sample, c);
            let c0 = m + 2 * c * kk;
            let c1 = c0 + kk;
            u.view_mut((0, c0), (m, kk)).copy_from(&d.gamma0);
            u.view_mut((0, c1), (m, kk)).copy_from(&d.gamma1);
            let target = |lag: usize| {
                if lag == 0 {
                    lay.current_offset(c)
                } else {
                    lay.history_offset(c, lag)
                }
            };
            let (t0, t1) = d.targets(lay.step);
            if let Some(l) = t0 {
                blocks.push((c0, kk, target(l)));
            }
            if let Some(l) = t1 {
                blocks.push((c1, kk, target(l)));
            }
        }
        (u, blocks)
    }

    fn accumulate(&self, lay: &AugmentedLayout, s11: &[Mat], range: std::ops::Range<usize>) -> Partial {
        let w = lay.extended_dim();
        let m = lay.state_dim;
        let mut quad = vec![Mat::zeros(w, w); lay.controllers];
        let mut top = Mat::zeros(m, w);
        for s in range {
            let (u, blocks) = self.factor(lay, s);
            for &(col, width, target) in &blocks {
                let mut dst = top.view_mut((0, target), (m, width));
                dst += u.view((0, col), (m, width));
            }
            for (i, s11_i) in s11.iter().enumerate() {
                let mid = u.transpose() * s11_i * &u;
                let acc = &mut quad[i];
                for &(ca, wa, ta) in &blocks {
                    for &(cb, wb, tb) in &blocks {
                        let mut dst = acc.view_mut((ta, tb), (wa, wb));
                        dst += mid.view((ca, cb), (wa, wb));
                    }
                }
            }
        }
        Partial { quad, top }
    }

    /// Contribution of `E[UV]` and the deterministic rows of `T`.
    fn deterministic_part(&self, lay: &AugmentedLayout, s_next: &Mat, mean_top: &Mat) -> Mat {
        let w = lay.extended_dim();
        let m = lay.state_dim;
        let tail = lay.next().dim() - m;
        let mut s1r = Mat::zeros(m, w);
        let mut out = Mat::zeros(w, w);
        for t in 0..tail {
            let src = lay.shifted_source(t);
            s1r.column_mut(src).copy_from(&s_next.view((0, m + t), (m, 1)));
            for t2 in 0..tail {
                out[(src, lay.shifted_source(t2))] = s_next[(m + t, m + t2)];
            }
        }
        let cross = mean_top.transpose() * s1r;
        out += &cross;
        out += cross.transpose();
        out
    }

    fn chunk_size(&self) -> usize {
        let n = self.bank.len();
        MIN_CHUNK.max(n.div_ceil(MAX_CHUNKS))
    }

    /// Sample averages at step `k` against next-step values `s_next`.
    ///
    /// Chunk boundaries depend only on the sample count and partial sums are
    /// combined in chunk order, so the result is independent of thread count.
    pub fn estimate(&self, k: usize, s_next: &[Mat]) -> Result<MomentSet> {
        let lay = self.layout(k);
        self.check_values(&lay, s_next)?;
        let m = lay.state_dim;
        let s11: Vec<Mat> = s_next.iter().map(|s| s.view((0, 0), (m, m)).into_owned()).collect();
        let n = self.bank.len();
        let chunk = self.chunk_size();
        let ranges: Vec<_> = (0..n).step_by(chunk).map(|a| a..(a + chunk).min(n)).collect();
        let partials: Vec<Partial> = ranges
            .into_par_iter()
            .map(|r| self.accumulate(&lay, &s11, r))
            .collect();
        let mut iter = partials.into_iter();
        let mut total = iter.next().expect("at least one chunk");
        for part in iter {
            for (acc, q) in total.quad.iter_mut().zip(part.quad) {
                *acc += q;
            }
            total.top += part.top;
        }
        let inv = 1.0 / n as f64;
        let mean_top = total.top * inv;
        let mut omega = Vec::with_capacity(lay.controllers);
        let mut g = Vec::with_capacity(lay.controllers);
        for (i, quad) in total.quad.into_iter().enumerate() {
            let mut o = quad * inv + self.deterministic_part(&lay, &s_next[i], &mean_top);
            linalg::symmetrize_in_place(&mut o);
            let off = lay.current_offset(i);
            let kk = lay.input_dim;
            g.push(&self.plant.r[i] + o.view((off, off), (kk, kk)));
            omega.push(o);
        }
        Ok(MomentSet {
            layout: lay,
            omega,
            mean_top,
            g,
            sample_count: n,
            seed: self.bank.seed(),
        })
    }

    /// `Tᵀ S_i T` for a single sample; its average over the bank is `Ω_i`.
    /// Exposed for variance diagnostics.
    pub fn sample_omega(&self, k: usize, sample: usize, s_next: &[Mat]) -> Result<Vec<Mat>> {
        let lay = self.layout(k);
        self.check_values(&lay, s_next)?;
        if sample >= self.bank.len() {
            return Err(Error::InvalidArgument(format!("sample {sample} outside bank of {}", self.bank.len())));
        }
        let m = lay.state_dim;
        let s11: Vec<Mat> = s_next.iter().map(|s| s.view((0, 0), (m, m)).into_owned()).collect();
        let part = self.accumulate(&lay, &s11, sample..sample + 1);
        Ok(part
            .quad
            .into_iter()
            .enumerate()
            .map(|(i, q)| {
                let mut o = q + self.deterministic_part(&lay, &s_next[i], &part.top);
                linalg::symmetrize_in_place(&mut o);
                o
            })
            .collect())
    }
}

/// One-shot estimate at step `k` with a fresh sample bank.
pub fn estimate_moments(
    plant: &PlantSpec,
    network: &NetworkSpec,
    k: usize,
    s_next: &[Mat],
    n_samples: usize,
    seed: u64,
) -> Result<MomentSet> {
    plant.validate()?;
    if k >= plant.horizon {
        return Err(Error::InvalidArgument(format!("step {k} beyond horizon {}", plant.horizon)));
    }
    MomentEngine::new(plant, network, n_samples, seed)?.estimate(k, s_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DelayModel, InfoMode};
    use nalgebra::dmatrix;

    fn plant(horizon: usize) -> PlantSpec {
        PlantSpec {
            a: dmatrix![0.0, 1.0; -3.0, -4.0],
            b: vec![dmatrix![0.0; 1.0], dmatrix![0.0; 1.0]],
            period: 0.05,
            horizon,
            q_terminal: Mat::identity(2, 2),
            q_stage: Mat::identity(2, 2),
            r: vec![dmatrix![10.0], dmatrix![10.0]],
            x0: vec![0.2, 0.1],
        }
    }

    fn random_psd(n: usize, seed: u64) -> Mat {
        let keys = KeyedRng::new(seed);
        let mut rng = keys.stream(Stream::EpisodeSeed, 0, 0);
        let a = Mat::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose()
    }

    #[test]
    fn degenerate_network_gives_deterministic_betas() {
        let net = NetworkSpec::homogeneous(2, DelayModel::uniform(0.0), 1.0, InfoMode::Perfect);
        let pl = plant(5);
        let s = sample_beta_joint(&pl, &net, 3, 1, 17).unwrap();
        let free = Discretizer::new(&pl).unwrap().gammas(0, 0.0).unwrap().0;
        for c in &s.controllers {
            assert_eq!(c.betas.beta[0], free);
            assert!(c.betas.beta[1..].iter().all(|b| b.iter().all(|v| *v == 0.0)));
        }
    }

    #[test]
    fn fixed_delay_without_loss_splits_into_lag_zero_and_one() {
        let net = NetworkSpec::homogeneous(2, DelayModel::PointMass { fraction: 0.4 }, 1.0, InfoMode::Perfect);
        let pl = plant(5);
        let s = sample_beta_joint(&pl, &net, 2, 1, 0).unwrap();
        let tau = s.controllers[1].tau;
        assert!((tau - 0.02).abs() < 1e-15);
        let (g0, g1) = Discretizer::new(&pl).unwrap().gammas(1, tau).unwrap();
        assert_eq!(s.controllers[1].betas.beta[0], g0);
        assert_eq!(s.controllers[1].betas.beta[1], g1);
    }

    #[test]
    fn bank_and_joint_sampler_agree() {
        let net = NetworkSpec::homogeneous(2, DelayModel::uniform(1.0), 0.6, InfoMode::Perfect);
        let pl = plant(8);
        let bank = SampleBank::new(&pl, &net, 40, 4, pl.horizon).unwrap();
        let k = 5;
        for s in 0..40 {
            let joint = sample_beta_joint(&pl, &net, k, 4, s).unwrap();
            for c in 0..2 {
                let d = bank.draw(s, c);
                let h = &joint.controllers[c].history;
                assert_eq!(d.delivered_now, h[k]);
                let last = (1..=k).find(|&j| h[k - j]);
                assert_eq!(d.targets(k).1, last);
                assert_eq!(d.tau, joint.controllers[c].tau);
            }
        }
    }

    #[test]
    fn zero_values_leave_only_control_weight() {
        let net = NetworkSpec::homogeneous(2, DelayModel::uniform(1.0), 0.9, InfoMode::Perfect);
        let pl = plant(4);
        let lay = AugmentedLayout::new(2, 1, 2, 2);
        let zero = vec![Mat::zeros(lay.next().dim(), lay.next().dim()); 2];
        let set = estimate_moments(&pl, &net, 2, &zero, 100, 3).unwrap();
        for i in 0..2 {
            assert!(set.omega[i].iter().all(|v| *v == 0.0));
            assert_eq!(set.g[i], pl.r[i]);
        }
    }

    #[test]
    fn repeated_estimates_are_bit_identical() {
        let net = NetworkSpec::homogeneous(2, DelayModel::uniform(1.0), 0.9, InfoMode::Perfect);
        let pl = plant(6);
        let lay = AugmentedLayout::new(2, 1, 2, 3);
        let s = vec![random_psd(lay.next().dim(), 1), random_psd(lay.next().dim(), 2)];
        let a = estimate_moments(&pl, &net, 3, &s, 700, 9).unwrap();
        let b = estimate_moments(&pl, &net, 3, &s, 700, 9).unwrap();
        assert_eq!(a.omega, b.omega);
        assert_eq!(a.mean_top, b.mean_top);
    }

    #[test]
    fn estimate_is_mean_of_sample_contributions() {
        let net = NetworkSpec::homogeneous(2, DelayModel::uniform(1.0), 0.7, InfoMode::Perfect);
        let pl = plant(6);
        let lay = AugmentedLayout::new(2, 1, 2, 2);
        let s = vec![random_psd(lay.next().dim(), 5), random_psd(lay.next().dim(), 6)];
        let engine = MomentEngine::new(&pl, &net, 300, 2).unwrap();
        let set = engine.estimate(2, &s).unwrap();
        let mut sum = vec![Mat::zeros(lay.extended_dim(), lay.extended_dim()); 2];
        for smp in 0..300 {
            for (acc, o) in sum.iter_mut().zip(engine.sample_omega(2, smp, &s).unwrap()) {
                *acc += o;
            }
        }
        for (acc, omega) in sum.iter().zip(&set.omega) {
            let mean = acc / 300.0;
            assert!((&mean - omega).norm() <= 1e-10 * mean.norm());
        }
    }

    #[test]
    fn sample_omega_matches_explicit_transition() {
        // Build T for one sample from the full lag maps and compare.
        let net = NetworkSpec::homogeneous(2, DelayModel::uniform(1.0), 0.5, InfoMode::Perfect);
        let pl = plant(6);
        let k = 3;
        let lay = AugmentedLayout::new(2, 1, 2, k);
        let s = vec![random_psd(lay.next().dim(), 7), random_psd(lay.next().dim(), 8)];
        let engine = MomentEngine::new(&pl, &net, 20, 5).unwrap();
        for smp in 0..20 {
            let joint = sample_beta_joint(&pl, &net, k, 5, smp).unwrap();
            let w = lay.extended_dim();
            let nd = lay.next().dim();
            let mut t = Mat::zeros(nd, w);
            t.view_mut((0, 0), (2, 2)).copy_from(&engine.phi.view((0, 0), (2, 2)));
            for (c, cb) in joint.controllers.iter().enumerate() {
                let mut d = t.view_mut((0, lay.current_offset(c)), (2, 1));
                d += &cb.betas.beta[0];
                for lag in 1..=k {
                    let mut d = t.view_mut((0, lay.history_offset(c, lag)), (2, 1));
                    d += &cb.betas.beta[lag];
                }
            }
            for r in 0..(nd - 2) {
                t[(2 + r, lay.shifted_source(r))] = 1.0;
            }
            let got = engine.sample_omega(k, smp, &s).unwrap();
            for i in 0..2 {
                let want = t.transpose() * &s[i] * &t;
                assert!((&got[i] - &want).norm() <= 1e-12 * want.norm().max(1.0), "sample {smp}");
            }
        }
    }

    #[test]
    fn rejects_wrong_value_dimension() {
        let net = NetworkSpec::ideal(2);
        let pl = plant(4);
        let bad = vec![Mat::zeros(3, 3); 2];
        assert!(estimate_moments(&pl, &net, 1, &bad, 10, 0).is_err());
    }

    #[test]
    fn g_is_symmetric_positive_definite() {
        let net = NetworkSpec::homogeneous(2, DelayModel::uniform(1.0), 0.9, InfoMode::Perfect);
        let pl = plant(6);
        let lay = AugmentedLayout::new(2, 1, 2, 1);
        let s = vec![random_psd(lay.next().dim(), 3), random_psd(lay.next().dim(), 4)];
        let set = estimate_moments(&pl, &net, 1, &s, 500, 1).unwrap();
        for g in &set.g {
            assert!(linalg::asymmetry(g) < 1e-14);
            assert!(linalg::min_eigenvalue(g) > 0.0);
        }
    }
}
