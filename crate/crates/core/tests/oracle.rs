use marc_core::casealgo::{optimal_df_sum_rate, optimal_df_weighted_region_2user};
use marc_core::fading::{sample_unit_ensemble, Budget, FadingEnsemble, Receiver, Transmitter};
use marc_core::oracle::{grid_best_sum_rate, grid_best_weighted, grid_gap_bound, GridSpec, OracleError, GRID_GUARD};
use marc_core::wfsolve::SolverConfig;
use num_complex::Complex64;

fn budget(p: [f64; 3]) -> Budget {
    Budget::new(p.to_vec(), 0.5).unwrap()
}

#[test]
fn single_state_without_relay_link() {
    // ½ log2(1 + 1.5 P / ½) = 1 at P = 1, with the relay far from limiting.
    let ens = FadingEnsemble::from_power_gains(vec![vec![100.0]], vec![vec![1.5]], vec![0.0]).unwrap();
    let b = Budget::new(vec![1.0, 1.0], 0.5).unwrap();
    let best = grid_best_sum_rate(&ens, &b, GridSpec { steps_per_axis: 3 }).unwrap();
    assert!((best.value - 1.0).abs() < 1e-15);
    assert_eq!(best.policy.power(0, 0), 1.0);
}

#[test]
fn dead_relay_grid_value_is_zero() {
    let base = sample_unit_ensemble(2, 2, 1).unwrap();
    let ens = FadingEnsemble::from_gains(
        vec![vec![Complex64::new(0.0, 0.0); 2]; 2],
        (0..2)
            .map(|u| base.link(Receiver::Destination, Transmitter::Source(u)).to_vec())
            .collect(),
        base.link(Receiver::Destination, Transmitter::Relay).to_vec(),
        1,
        None,
    )
    .unwrap();
    let best = grid_best_sum_rate(&ens, &budget([1.0; 3]), GridSpec { steps_per_axis: 9 }).unwrap();
    assert_eq!(best.value, 0.0);
}

#[test]
fn two_users_two_states_bracket_the_solver() {
    let cfg = SolverConfig::default();
    for seed in 0..6 {
        let ens = sample_unit_ensemble(2, 2, 40 + seed).unwrap();
        let b = budget([1.0, 0.7, 1.4]);
        let grid = GridSpec::with_step_fraction(2, 0.05);
        let best = grid_best_sum_rate(&ens, &b, grid).unwrap();
        let bound = grid_gap_bound(&ens, &b, grid).unwrap();
        let df = optimal_df_sum_rate(&ens, &b, &cfg).unwrap();
        let gap = df.sum_rate - best.value;
        assert!(
            (-1e-9..=bound).contains(&gap),
            "seed {seed}: gap {gap:e}, bound {bound:e}"
        );
    }
}

#[test]
fn refined_grids_never_lose_value() {
    let ens = sample_unit_ensemble(2, 2, 9).unwrap();
    let b = budget([1.2, 0.8, 1.0]);
    let mut last = f64::NEG_INFINITY;
    for steps in [3, 5, 9, 17, 33] {
        let v = grid_best_sum_rate(&ens, &b, GridSpec { steps_per_axis: steps })
            .unwrap()
            .value;
        assert!(v >= last, "{steps}: {v} < {last}");
        last = v;
    }
}

#[test]
fn guard_rejects_oversized_grids() {
    let ens = sample_unit_ensemble(2, 4, 2).unwrap();
    let grid = GridSpec::with_step_fraction(4, 0.05);
    assert!(grid.joint_points(2, 4) > GRID_GUARD);
    assert!(matches!(
        grid_best_sum_rate(&ens, &budget([1.0; 3]), grid),
        Err(OracleError::GuardExceeded { .. })
    ));
    assert!(matches!(
        grid_best_sum_rate(&ens, &budget([1.0; 3]), GridSpec { steps_per_axis: 1 }),
        Err(OracleError::BadGrid(1))
    ));
}

/// Four samples on the finest grid that fits in the guard.
#[test]
fn four_samples_on_the_finest_admissible_grid() {
    let n = 4;
    let steps = (2..)
        .take_while(|&s| GridSpec { steps_per_axis: s }.joint_points(2, n) <= GRID_GUARD)
        .last()
        .unwrap();
    let grid = GridSpec { steps_per_axis: steps };
    let ens = sample_unit_ensemble(2, n, 314).unwrap();
    let b = budget([1.0, 1.0, 1.0]);
    let best = grid_best_sum_rate(&ens, &b, grid).unwrap();
    let bound = grid_gap_bound(&ens, &b, grid).unwrap();
    let df = optimal_df_sum_rate(&ens, &b, &SolverConfig::default()).unwrap();
    let gap = df.sum_rate - best.value;
    assert!((-1e-9..=bound).contains(&gap), "gap {gap:e}, bound {bound:e}");
}

#[test]
fn unit_weights_match_the_sum_rate_grid() {
    let ens = sample_unit_ensemble(2, 2, 77).unwrap();
    let b = budget([1.0, 1.5, 0.6]);
    let grid = GridSpec::with_step_fraction(2, 0.1);
    let s = grid_best_sum_rate(&ens, &b, grid).unwrap();
    let w = grid_best_weighted(&ens, &b, grid, &[1.0, 1.0]).unwrap();
    assert!((s.value - w.value).abs() < 1e-12);
}

#[test]
fn vanishing_first_weight_gives_second_user_solo_optimum() {
    let ens = sample_unit_ensemble(2, 2, 78).unwrap();
    let grid = GridSpec::with_step_fraction(2, 0.1);
    let w = grid_best_weighted(&ens, &budget([1.0, 1.0, 1.0]), grid, &[1e-6, 1.0]).unwrap();
    let solo = grid_best_sum_rate(&ens, &budget([0.0, 1.0, 1.0]), grid).unwrap();
    assert!(w.value >= solo.value - 1e-12);
    assert!(w.value - solo.value < 1e-5, "{} vs {}", w.value, solo.value);
}

#[test]
fn weighted_grid_brackets_the_region_solver() {
    let cfg = SolverConfig::default();
    for (seed, mu) in [(5u64, [1.0, 2.0]), (6, [3.0, 1.0]), (7, [1.0, 1.2])] {
        let ens = sample_unit_ensemble(2, 2, seed).unwrap();
        let b = budget([1.0, 1.3, 0.9]);
        let grid = GridSpec::with_step_fraction(2, 0.05);
        let best = grid_best_weighted(&ens, &b, grid, &mu).unwrap();
        // Every split value moves by at most the sum-rate bound, and the
        // weighted value is a nonnegative combination of those.
        let bound = grid_gap_bound(&ens, &b, grid).unwrap() * (mu[0] + mu[1]);
        let w = optimal_df_weighted_region_2user(&ens, &b, mu[0], mu[1], &cfg).unwrap();
        let gap = w.value - best.value;
        assert!(
            (-1e-9..=bound).contains(&gap),
            "seed {seed}: gap {gap:e}, bound {bound:e}"
        );
    }
}
