//! Reference computations that share no code with the library.
#![allow(dead_code)]

use nalgebra::DMatrix;

pub type M = DMatrix<f64>;

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let pj = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = pj;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `∫_lo^hi f` with an `n`-node rule.
pub fn integrate<F: Fn(f64) -> M>(f: F, lo: f64, hi: f64, n: usize) -> M {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc: Option<M> = None;
    for (xi, wi) in x.iter().zip(&w) {
        let v = f(mid + half * xi) * (wi * half);
        acc = Some(match acc {
            None => v,
            Some(a) => a + v,
        });
    }
    acc.expect("at least one node")
}

/// `e^{At}` and `∫_0^t e^{As} ds` by power series.
pub fn series_exp_and_integral(a: &M, t: f64) -> (M, M) {
    let n = a.nrows();
    let mut exp = M::identity(n, n);
    let mut int = M::identity(n, n) * t;
    let mut term = M::identity(n, n);
    for j in 1..60 {
        term = &term * a * (t / j as f64);
        exp += &term;
        int += &term * (t / (j + 1) as f64);
    }
    (exp, int)
}

/// Delay-free discretization `(Φ, Γ)` from the power series.
pub fn zoh(a: &M, b: &M, t: f64) -> (M, M) {
    let (phi, int) = series_exp_and_integral(a, t);
    (phi, int * b)
}

/// Finite-horizon discrete LQR: returns `(K_k, P_k)` for `k = 0..n`, with
/// `u = -K x`.
pub fn lqr_backward(phi: &M, gamma: &M, q: &M, r: &M, q_n: &M, n: usize) -> (Vec<M>, Vec<M>) {
    let mut p = q_n.clone();
    let mut gains = Vec::with_capacity(n);
    let mut values = vec![p.clone()];
    for _ in 0..n {
        let lhs = r + gamma.transpose() * &p * gamma;
        let k = lhs.try_inverse().expect("invertible") * gamma.transpose() * &p * phi;
        p = q + phi.transpose() * &p * phi - phi.transpose() * &p * gamma * &k;
        p = (&p + p.transpose()) * 0.5;
        gains.push(k);
        values.push(p.clone());
    }
    gains.reverse();
    values.reverse();
    (gains, values)
}

/// Infinite-horizon gain by fixed-point iteration of the Riccati map.
pub fn dare_gain(phi: &M, gamma: &M, q: &M, r: &M) -> M {
    let mut p = q.clone();
    let mut k = M::zeros(gamma.ncols(), phi.ncols());
    for _ in 0..200_000 {
        let lhs = r + gamma.transpose() * &p * gamma;
        let k_new = lhs.try_inverse().expect("invertible") * gamma.transpose() * &p * phi;
        let p_new = q + phi.transpose() * &p * phi - phi.transpose() * &p * gamma * &k_new;
        let done = (&k_new - &k).amax() < 1e-15 * (1.0 + k_new.amax());
        p = (&p_new + p_new.transpose()) * 0.5;
        k = k_new;
        if done {
            break;
        }
    }
    k
}

pub fn rel_err(a: &M, b: &M) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

/// One controller of a scalar-state, scalar-input instance.
pub struct ScalarChannel {
    pub b: f64,
    /// Delay is uniform on `[0, alpha·T]`.
    pub alpha: f64,
    /// End-to-end delivery probability.
    pub q: f64,
}

/// Exact `E[top row of T]` and `E[Tᵀ S T]` for `M = K = 1` at step `k`,
/// enumerating loss outcomes and integrating the delay with 64 nodes.
/// Extended vector order: `[x, û_{k-1}, …, û_0, u_{1,k}, …, u_{p,k}]`.
pub fn exact_scalar_moments(a: f64, period: f64, channels: &[ScalarChannel], k: usize, s_next: &[M]) -> (M, Vec<M>) {
    let p = channels.len();
    let n = 1 + p * k;
    let w = n + p;
    let am = M::from_element(1, 1, a);
    let (phi, _) = series_exp_and_integral(&am, period);
    let full_int = series_exp_and_integral(&am, period).1[(0, 0)];
    // Index in w of controller c's control issued `lag` steps ago.
    let slot = |c: usize, lag: usize| if lag == 0 { n + c } else { 1 + (lag - 1) * p + c };
    let mut mean = M::zeros(1, w);
    mean[(0, 0)] = phi[(0, 0)];
    let mut second = M::zeros(w, w);
    let mut means = Vec::new();
    for (c, ch) in channels.iter().enumerate() {
        let mut m1 = M::zeros(1, w);
        let mut m2 = M::zeros(w, w);
        let hi = ch.alpha * period;
        // Outcomes: (delivered now, last earlier delivery lag) with probabilities.
        let mut outcomes = Vec::new();
        for now in [true, false] {
            let pn = if now { ch.q } else { 1.0 - ch.q };
            for j in 1..=k {
                outcomes.push((now, Some(j), pn * (1.0 - ch.q).powi(j as i32 - 1) * ch.q));
            }
            outcomes.push((now, None, pn * (1.0 - ch.q).powi(k as i32)));
        }
        let vec_at = |tau: f64, now: bool, prev: Option<usize>| {
            let g0 = series_exp_and_integral(&am, period - tau).1[(0, 0)] * ch.b;
            let g1 = full_int * ch.b - g0;
            let mut v = M::zeros(1, w);
            let t0 = if now { Some(0) } else { prev };
            if let Some(l) = t0 {
                v[(0, slot(c, l))] += g0;
            }
            if let Some(l) = prev {
                v[(0, slot(c, l))] += g1;
            }
            v
        };
        for &(now, prev, prob) in &outcomes {
            let (e1, e2) = if hi == 0.0 {
                let v = vec_at(0.0, now, prev);
                (v.clone(), v.transpose() * v)
            } else {
                let e1 = integrate(|t| vec_at(t, now, prev), 0.0, hi, 64) / hi;
                let e2 = integrate(
                    |t| {
                        let v = vec_at(t, now, prev);
                        v.transpose() * v
                    },
                    0.0,
                    hi,
                    64,
                ) / hi;
                (e1, e2)
            };
            m1 += e1 * prob;
            m2 += e2 * prob;
        }
        mean += &m1;
        means.push(m1);
        second += m2;
    }
    // E[top topᵀ] = a aᵀ + cross terms between independent parts.
    let mut a_part = M::zeros(1, w);
    a_part[(0, 0)] = phi[(0, 0)];
    let mut parts = vec![a_part];
    parts.extend(means.iter().cloned());
    let mut top2 = second;
    for (x, px) in parts.iter().enumerate() {
        for (y, py) in parts.iter().enumerate() {
            if x != y || x == 0 {
                top2 += px.transpose() * py;
            }
        }
    }
    // Deterministic rows of T: z_{k+1} = [x'; u_{·,k}; û_{k-1}; …; û_0].
    let next = 1 + p * (k + 1);
    let mut bottom = M::zeros(next - 1, w);
    for c in 0..p {
        bottom[(c, n + c)] = 1.0;
    }
    for t in 0..p * k {
        bottom[(p + t, 1 + t)] = 1.0;
    }
    let omegas = s_next
        .iter()
        .map(|s| {
            let s11 = s[(0, 0)];
            let s1r = s.view((0, 1), (1, next - 1)).into_owned();
            let srr = s.view((1, 1), (next - 1, next - 1)).into_owned();
            let cross = mean.transpose() * &s1r * &bottom;
            &top2 * s11 + &cross + cross.transpose() + bottom.transpose() * srr * &bottom
        })
        .collect();
    (mean, omegas)
}

/// Deterministic symmetric positive definite test matrix.
pub fn spd(n: usize, salt: f64) -> M {
    let a = M::from_fn(n, n, |r, c| ((r * 7 + c * 3) as f64 * 0.37 + salt).sin());
    &a * a.transpose() + M::identity(n, n) * 0.5
}
