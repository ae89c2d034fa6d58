use nalgebra::{DMatrix, DVector};
use netlq_core::simulator::{hold, step_plant, step_plant_beta};
use netlq_core::*;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v) * scale)
}

fn plant_strategy() -> impl Strategy<Value = PlantSpec> {
    (1usize..=3, 1usize..=2, 1usize..=3).prop_flat_map(|(m, k, p)| {
        (matrix(m, m, 3.0), prop::collection::vec(matrix(m, k, 1.0), p), 0.01..0.2f64).prop_map(move |(a, b, period)| PlantSpec {
            a,
            b,
            period,
            horizon: 6,
            q_terminal: DMatrix::identity(m, m),
            q_stage: DMatrix::identity(m, m),
            r: vec![DMatrix::identity(k, k); p],
            x0: vec![0.1; m],
        })
    })
}

fn realization(p: usize, n: usize, taus: &[f64], theta: &[bool]) -> ScenarioRealization {
    let t = |k: usize, i: usize| theta[(k * p + i) % theta.len()];
    ScenarioRealization {
        seed: 0,
        tau: (0..n).map(|k| (0..p).map(|i| taus[(k * p + i) % taus.len()]).collect()).collect(),
        theta_sc: (0..n).map(|k| (0..p).map(|i| t(k, i)).collect()).collect(),
        theta_ca: vec![vec![true; p]; n],
        theta: (0..n).map(|k| (0..p).map(|i| t(k, i)).collect()).collect(),
        theta_link: vec![vec![vec![true; p]; p]; n],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delay_split_sums_to_full_map(plant in plant_strategy(), frac in 0.0..=1.0f64) {
        let disc = Discretizer::new(&plant).unwrap();
        for i in 0..plant.controllers() {
            let step = discretize(&plant, i, frac * plant.period).unwrap();
            let full = disc.full_input_map(i);
            let gap = (&step.gamma0 + &step.gamma1 - full).amax();
            prop_assert!(gap <= 1e-12 * (1.0 + full.amax()));
        }
    }

    #[test]
    fn at_most_two_active_lags(history in prop::collection::vec(any::<bool>(), 1..12), frac in 0.0..=1.0f64) {
        let plant = builtin_generic().plant;
        let step = discretize(&plant, 0, frac * plant.period).unwrap();
        let k = history.len() - 1;
        let betas = build_beta(&step, &history, k).unwrap();
        prop_assert!(betas.active_lags().len() <= 2);
    }

    #[test]
    fn lag_expansion_equals_hold_logic(
        plant in plant_strategy(),
        taus in prop::collection::vec(0.0..=1.0f64, 1..8),
        theta in prop::collection::vec(any::<bool>(), 1..24),
        seed in any::<u64>(),
    ) {
        let n = 6;
        let p = plant.controllers();
        let kk = plant.input_dim();
        let taus: Vec<f64> = taus.iter().map(|f| f * plant.period).collect();
        let real = realization(p, n, &taus, &theta);
        let disc = Discretizer::new(&plant).unwrap();
        let rng = KeyedRng::new(seed);
        let issued: Vec<Vec<DVector<f64>>> = (0..p)
            .map(|i| (0..n).map(|k| DVector::from_fn(kk, |r, _| rng.uniform(Stream::Delay, (i * 100 + k) as u64, r as u64) - 0.5)).collect())
            .collect();
        let mut x_direct = plant.x0_vector();
        let mut x_beta = x_direct.clone();
        let mut applied: Vec<DVector<f64>> = vec![DVector::zeros(kk); p];
        for k in 0..n {
            let prev = applied.clone();
            for i in 0..p {
                applied[i] = hold(&issued[i][k], &prev[i], real.theta[k][i]);
            }
            x_direct = step_plant(&disc, &x_direct, &applied, &prev, &real.tau[k]).unwrap();
            x_beta = step_plant_beta(&disc, &x_beta, &issued, &real, k).unwrap();
            let scale = 1.0 + x_direct.amax();
            prop_assert!((&x_direct - &x_beta).amax() <= 1e-12 * scale);
        }
    }

    #[test]
    fn realized_delivery_is_sensor_and_actuator(seed in any::<u64>(), q in 0.0..=1.0f64) {
        let cfg = builtin_generic();
        let net = NetworkSpec::homogeneous(2, DelayModel::uniform(1.0), q, InfoMode::Imperfect);
        let real = sample_scenario(&net, &cfg.plant, seed);
        for k in 0..cfg.plant.horizon {
            for i in 0..2 {
                prop_assert_eq!(real.theta[k][i], real.theta_sc[k][i] && real.theta_ca[k][i]);
                prop_assert!(real.tau[k][i] >= 0.0 && real.tau[k][i] <= cfg.plant.period);
                prop_assert!(real.theta_link[k][i][i]);
            }
        }
    }

    #[test]
    fn config_round_trip(alpha in 0.0..=1.0f64, q in 0.0..=1.0f64, n_samples in 1usize..100_000, seed in any::<u64>(), lfc in any::<bool>()) {
        let mut cfg = if lfc { builtin_lfc() } else { builtin_generic() }.with_alpha(alpha).unwrap();
        cfg.network.p_ca = vec![q; 2];
        cfg.solver.n_samples = n_samples;
        cfg.solver.seed = seed;
        let back = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn restricted_network_keeps_shared_draws(seed in any::<u64>()) {
        let cfg = builtin_lfc();
        let full = sample_scenario(&cfg.network, &cfg.plant, seed);
        let one = sample_scenario(&cfg.network.restrict(1), &cfg.plant.restrict(1), seed);
        for k in 0..cfg.plant.horizon {
            prop_assert_eq!(full.tau[k][0], one.tau[k][0]);
            prop_assert_eq!(full.theta[k][0], one.theta[k][0]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn value_matrices_psd_and_dimensions(
        q in 0.3..=1.0f64,
        alpha in 0.0..=1.0f64,
        imperfect in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let mode = if imperfect { InfoMode::Imperfect } else { InfoMode::Perfect };
        let plant = builtin_generic().plant.with_horizon(6);
        let net = NetworkSpec::homogeneous(2, DelayModel::uniform(alpha), q, mode);
        let settings = SolverSettings { n_samples: 300, seed, keep_values: true };
        let sol = solve_game(&plant, &net, &settings).unwrap();
        for (i, per) in sol.values.unwrap().iter().enumerate() {
            for (k, s) in per.iter().enumerate() {
                prop_assert_eq!(s.nrows(), 2 + 2 * k);
                let norm = linalg::sym_norm(s);
                prop_assert!(linalg::asymmetry(s) <= 1e-10 * (1.0 + norm));
                prop_assert!(linalg::min_eigenvalue(s) >= -1e-8 * norm);
                if k < 6 {
                    prop_assert_eq!(sol.schedule.gain(i, k).ncols(), 2 + 2 * k);
                }
            }
        }
    }

    #[test]
    fn imperfect_reduces_to_perfect(q_ca in 0.2..=1.0f64, alpha in 0.0..=1.0f64, seed in 0u64..1000) {
        let plant = builtin_lfc().plant.with_horizon(5);
        let mut net = NetworkSpec::homogeneous(2, DelayModel::uniform(alpha), 1.0, InfoMode::Perfect);
        net.p_ca = vec![q_ca; 2];
        let settings = SolverSettings { n_samples: 200, seed, keep_values: false };
        let a = solve_game(&plant, &net, &settings).unwrap();
        let b = solve_game(&plant, &net.with_mode(InfoMode::Imperfect), &settings).unwrap();
        prop_assert_eq!(a.schedule.gains, b.schedule.gains);
    }

    #[test]
    fn estimates_replay_bit_for_bit(seed in any::<u64>(), k in 0usize..5) {
        let plant = builtin_generic().plant.with_horizon(6);
        let net = builtin_generic().network;
        let dim = 2 + 2 * (k + 1);
        let s: Vec<DMatrix<f64>> = (0..2).map(|i| DMatrix::from_fn(dim, dim, |r, c| if r == c { 1.0 + i as f64 } else { 0.0 })).collect();
        let a = estimate_moments(&plant, &net, k, &s, 500, seed).unwrap();
        let b = estimate_moments(&plant, &net, k, &s, 500, seed).unwrap();
        prop_assert_eq!(a.omega, b.omega);
        prop_assert_eq!(a.g, b.g);
    }
}
