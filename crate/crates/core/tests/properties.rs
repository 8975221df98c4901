use hydrocascade::approx::{fit_pwl_1d_optimal, fit_slack, max_error, mccormick_envelope, CutSense, FitSpec};
use hydrocascade::simulate::simulate;
use hydrocascade::synthetic::{generate_synthetic_cascade, random_dag};
use proptest::prelude::*;

fn samples_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.05f64..2.0, -5.0f64..5.0), 2..40).prop_map(|steps| {
        let mut x = 0.0;
        steps
            .into_iter()
            .map(|(dx, y)| {
                x += dx;
                (x, y)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn optimal_fit_stays_within_epsilon(samples in samples_strategy(), eps in 0.0f64..3.0) {
        let fit = fit_pwl_1d_optimal(&samples, &FitSpec::new(eps)).unwrap();
        let err = max_error(&fit, &samples).unwrap().value;
        prop_assert!(err <= eps + fit_slack(&samples), "{} > {}", err, eps);
        let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
        for (bx, _) in fit.breakpoints() {
            prop_assert!(xs.contains(bx));
        }
        prop_assert_eq!(fit.breakpoints().first().unwrap().0, xs[0]);
        prop_assert_eq!(fit.breakpoints().last().unwrap().0, *xs.last().unwrap());
    }

    #[test]
    fn looser_tolerance_never_needs_more_pieces(samples in samples_strategy(), eps in 0.01f64..2.0, extra in 0.0f64..2.0) {
        let tight = fit_pwl_1d_optimal(&samples, &FitSpec::new(eps)).unwrap();
        let loose = fit_pwl_1d_optimal(&samples, &FitSpec::new(eps + extra)).unwrap();
        prop_assert!(loose.n_pieces() <= tight.n_pieces());
    }

    #[test]
    fn zero_tolerance_interpolates(samples in samples_strategy()) {
        let fit = fit_pwl_1d_optimal(&samples, &FitSpec::new(0.0)).unwrap();
        prop_assert!(fit.n_pieces() < samples.len());
        for (x, y) in &samples {
            prop_assert!((fit.evaluate(*x) - y).abs() <= fit_slack(&samples));
        }
    }

    #[test]
    fn mccormick_cuts_hold_on_the_box(
        q0 in 0.0f64..50.0, qw in 0.1f64..50.0,
        h0 in 1.0f64..200.0, hw in 0.1f64..100.0,
        s in 0.0f64..=1.0, r in 0.0f64..=1.0,
    ) {
        let env = mccormick_envelope((q0, q0 + qw), (h0, h0 + hw)).unwrap();
        let (q, h) = (q0 + s * qw, h0 + r * hw);
        let w = q * h;
        let tol = 1e-9 * (1.0 + w.abs());
        for c in env.cuts() {
            let ok = match c.sense {
                CutSense::Under => c.value(q, h) <= w + tol,
                CutSense::Over => c.value(q, h) >= w - tol,
            };
            prop_assert!(ok);
        }
        let (lo, hi) = env.bounds_at(q, h);
        prop_assert!(lo <= w + tol && w <= hi + tol);
    }

    #[test]
    fn simulated_mass_balance_closes(n in 2usize..6, periods in 1usize..12, seed in 0u64..10_000) {
        let (system, inflows, schedule) = random_dag(n, periods, seed);
        prop_assert!(system.validate_topology().errors().next().is_none());
        let report = simulate(&system, &schedule, &inflows).unwrap();
        prop_assert!(report.mass_balance.relative_residual() < 1e-6);
    }

    #[test]
    fn synthetic_generation_is_reproducible(n in 1usize..5, u in 1usize..3, seed in 0u64..1000) {
        let a = generate_synthetic_cascade(n, u, seed);
        let b = generate_synthetic_cascade(n, u, seed);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.0.arcs.len(), n - 1);
        prop_assert!(a.0.validate_topology().errors().next().is_none());
    }
}

#[cfg(feature = "highs")]
mod solver {
    use hydrocascade::compare::Tier;
    use hydrocascade::formulation::{build_model, Discretization, ObjectiveSpec};
    use hydrocascade::oracle::{brute_force_oracle, OracleError};
    use hydrocascade::solve::{HighsBackend, SolveOptions, SolveStatus, SolverBackend};
    use hydrocascade::synthetic::{generate, SyntheticOptions};
    use proptest::prelude::*;

    fn tier_strategy() -> impl Strategy<Value = Tier> {
        prop::sample::select(vec![Tier::LpFixed, Tier::MilpPwl1d, Tier::MilpPwl, Tier::MilpHuc, Tier::MilpPoz])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn grid_restricted_milp_matches_enumeration(
            n in 1usize..=2, u in 1usize..=2, periods in 2usize..=3,
            seed in 0u64..10_000, scale in 0.2f64..1.0, tier in tier_strategy(),
        ) {
            let (system, mut inflows) = generate(&SyntheticOptions::new(n, u, seed).periods(periods));
            inflows.iter_mut().flatten().for_each(|w| *w *= scale);
            let q_top = system.units.iter().map(|x| x.q_max).fold(f64::INFINITY, f64::min);
            let grid = Discretization { unit_levels: vec![0.0, (0.5 * q_top).round(), q_top.floor()], spill_levels: vec![0.0] };
            let cfg = tier.config(ObjectiveSpec::energy()).with_discretization(grid.clone());
            let built = build_model(&system, &inflows, &cfg).unwrap();
            let sol = HighsBackend.solve(&built.model, &SolveOptions { mip_gap: 1e-9, ..SolveOptions::default() });
            match brute_force_oracle(&system, &inflows, &cfg, &grid) {
                Ok(o) => {
                    prop_assert_eq!(sol.status, SolveStatus::Optimal);
                    prop_assert!((o.objective - sol.objective).abs() <= 1e-6 * o.objective.abs().max(1.0),
                        "oracle {} milp {}", o.objective, sol.objective);
                }
                Err(OracleError::Infeasible) => prop_assert_eq!(sol.status, SolveStatus::Infeasible),
                Err(e) => prop_assert!(false, "oracle failed: {}", e),
            }
        }

        #[test]
        fn relaxation_bounds_the_milp(n in 1usize..=2, seed in 0u64..10_000, scale in 0.2f64..1.0) {
            let (system, mut inflows) = generate(&SyntheticOptions::new(n, 1, seed).periods(4));
            inflows.iter_mut().flatten().for_each(|w| *w *= scale);
            let built = build_model(&system, &inflows, &Tier::MilpPoz.config(ObjectiveSpec::energy())).unwrap();
            let opts = SolveOptions { mip_gap: 1e-4, ..SolveOptions::default() };
            let milp = HighsBackend.solve(&built.model, &opts);
            let relax = HighsBackend.solve(&built.model.relax_integrality(), &opts);
            prop_assume!(milp.status.has_solution());
            prop_assert_eq!(relax.status, SolveStatus::Optimal);
            prop_assert!(relax.objective >= milp.objective - 1e-7 * milp.objective.abs().max(1.0));
        }
    }
}
