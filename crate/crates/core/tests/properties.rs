use aggdiff::runner::{preset, preset_names, RunConfig};
use aggdiff::{
    entropy, solve_detailed_balance, ssp_rk3_step, stable_dt, tophat, CellField, ConvolutionMethod, ConvolutionPlan,
    Grid1D, Kernel, KernelMatrix, SchemeParams, SystemState, TimeControls,
};
use proptest::prelude::*;

fn field(grid: Grid1D, values: &[f64]) -> CellField {
    CellField::from_values(grid, values.to_vec()).unwrap()
}

fn methods() -> impl Strategy<Value = ConvolutionMethod> {
    prop_oneof![
        Just(ConvolutionMethod::TopHatExact),
        Just(ConvolutionMethod::Direct),
        Just(ConvolutionMethod::Spectral),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convolution_is_linear(
        u in prop::collection::vec(-1.0f64..1.0, 64),
        v in prop::collection::vec(-1.0f64..1.0, 64),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        alpha in -20.0f64..20.0,
        r in 0.1f64..2.0,
        method in methods(),
    ) {
        let grid = Grid1D::new(3.0, 64).unwrap();
        let plan = ConvolutionPlan::with_method(&tophat(alpha, r).unwrap(), &grid, method).unwrap();
        let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let ku = plan.convolve(&field(grid, &u)).unwrap();
        let kv = plan.convolve(&field(grid, &v)).unwrap();
        let kw = plan.convolve(&field(grid, &w)).unwrap();
        let scale = alpha.abs() * (1.0 + a.abs() + b.abs());
        for j in 0..64 {
            let lin = a * ku.values()[j] + b * kv.values()[j];
            prop_assert!((kw.values()[j] - lin).abs() <= 1e-12 * scale);
        }
    }

    /// `||K * u||_inf <= ||K||_1 ||u||_inf` and `||K * u||_1 <= ||K||_1 ||u||_1`.
    #[test]
    fn young_bounds(
        u in prop::collection::vec(-1.0f64..1.0, 80),
        samples in prop::collection::vec(-2.0f64..2.0, 1..40),
        method in prop_oneof![Just(ConvolutionMethod::Direct), Just(ConvolutionMethod::Spectral)],
    ) {
        let grid = Grid1D::new(2.0, 80).unwrap();
        let dx = grid.dx();
        let x0 = -0.5 * samples.len() as f64 * dx;
        let kernel = Kernel::sampled(samples.clone(), dx, x0).unwrap();
        let k1: f64 = samples.iter().map(|k| k.abs()).sum::<f64>() * dx;
        let plan = ConvolutionPlan::with_method(&kernel, &grid, method).unwrap();
        let ku = plan.convolve(&field(grid, &u)).unwrap();
        let u_inf = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let u_1: f64 = u.iter().map(|x| x.abs()).sum::<f64>() * dx;
        let ku_inf = ku.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let ku_1: f64 = ku.values().iter().map(|x| x.abs()).sum::<f64>() * dx;
        prop_assert!(ku_inf <= k1 * u_inf * (1.0 + 1e-12) + 1e-14);
        prop_assert!(ku_1 <= k1 * u_1 * (1.0 + 1e-12) + 1e-14);
    }

    /// `a_ij = s_ij / pi_i` with `s` symmetric is balanced by `pi`, normalized to `pi_1 = 1`.
    #[test]
    fn balance_recovers_planted_weights(
        pi in prop::collection::vec(0.1f64..10.0, 2..6),
        upper in prop::collection::vec(prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], 15),
        diag in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let n = pi.len();
        let mut s = vec![vec![0.0; n]; n];
        let mut next = upper.iter();
        for i in 0..n {
            s[i][i] = diag[i];
            for j in i + 1..n {
                let v = *next.next().unwrap();
                s[i][j] = v;
                s[j][i] = v;
            }
        }
        let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| s[i][j] / pi[i]).collect()).collect();
        let result = solve_detailed_balance(&a).unwrap();
        let w = result.weights().expect("balanced by construction");
        prop_assert!((w[0] - 1.0).abs() < 1e-12);
        for i in 0..n {
            for j in 0..n {
                let lhs = w[i] * a[i][j];
                let rhs = w[j] * a[j][i];
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (lhs.abs() + rhs.abs() + 1e-300));
            }
            let expected = pi[i] / pi[0];
            prop_assert!((w[i] - expected).abs() <= 1e-10 * expected);
        }
    }

    #[test]
    fn symmetric_matrices_balance_with_unit_weights(
        n in 1usize..7,
        entries in prop::collection::vec(-10.0f64..10.0, 28),
    ) {
        let mut a = vec![vec![0.0; n]; n];
        let mut next = entries.iter();
        for i in 0..n {
            for j in i..n {
                let v = *next.next().unwrap();
                a[i][j] = v;
                a[j][i] = v;
            }
        }
        let result = solve_detailed_balance(&a).unwrap();
        prop_assert_eq!(result.weights().map(<[f64]>::to_vec), Some(vec![1.0; n]));
    }

    /// One SSP-RK3 step at the CFL-limited step keeps every cell nonnegative
    /// and conserves mass.
    #[test]
    fn forward_step_stays_nonnegative(
        u in prop::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..2.0], 60),
        alpha in -30.0f64..30.0,
        d in 0.05f64..1.0,
        theta in 1.0f64..2.0,
    ) {
        prop_assume!(u.iter().any(|&v| v > 0.0));
        let grid = Grid1D::new(3.0, 60).unwrap();
        let f = field(grid, &u);
        let m0 = f.mass();
        let params = SchemeParams::new(vec![d], theta, SchemeParams::default_floor(m0, &grid)).unwrap();
        let mut state = SystemState::new(vec![f], params, KernelMatrix::scalar(tophat(alpha, 1.0).unwrap())).unwrap();
        let controls = TimeControls::new(1.0, grid.dx(), d);
        let dt = stable_dt(&state, &controls).unwrap();
        let out = ssp_rk3_step(&mut state, dt).unwrap();
        prop_assert!(out.min_ratio >= -1e-14, "min ratio {}", out.min_ratio);
        prop_assert!(state.field(0).values().iter().all(|&v| v >= 0.0));
        prop_assert!((state.field(0).mass() - m0).abs() <= 1e-13 * m0);
    }

    /// Jensen: `int u log u >= m log(m / 2L)` for mass `m` on `[-L, L]`.
    #[test]
    fn entropy_lower_bound(u in prop::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..5.0], 4..100), l in 0.5f64..10.0) {
        let grid = Grid1D::new(l, u.len()).unwrap();
        let f = field(grid, &u);
        let m = f.mass();
        prop_assume!(m > 0.0);
        let h = entropy(&f).unwrap();
        prop_assert!(h >= m * (m / (2.0 * l)).ln() - 1e-12 * (1.0 + h.abs()));
    }

    #[test]
    fn config_round_trips_through_toml(
        name_idx in 0usize..8,
        t_end in 0.1f64..50.0,
        cfl in 0.05f64..0.5,
        theta in 1.0f64..2.0,
    ) {
        let names: Vec<&str> = preset_names().collect();
        let mut config = preset(names[name_idx % names.len()]).unwrap();
        config.time.t_end = t_end;
        config.time.snapshot_times = vec![0.0, t_end];
        config.scheme.cfl = cfl;
        config.scheme.theta = theta;
        let text = config.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text, None).unwrap();
        prop_assert_eq!(back, config);
    }
}
