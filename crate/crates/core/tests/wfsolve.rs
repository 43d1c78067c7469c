use marc_core::fading::{
    sample_ensemble, sample_unit_ensemble, Budget, FadingEnsemble, Geometry, Receiver, Transmitter,
};
use marc_core::ratebounds::{df_bounds, PowerPolicy};
use marc_core::setfn::{ActiveCase, CaseKind};
use marc_core::wfsolve::{
    central_difference_gradient, iterative_nonwf, projected_gradient_concave, solve_boundary_weights,
    waterfill_mac_opportunistic, waterfill_single, SolverConfig, WfError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn power_gains(ens: &FadingEnsemble, rx: Receiver) -> Vec<Vec<f64>> {
    (0..ens.num_users())
        .map(|s| {
            ens.link(rx, Transmitter::Source(s))
                .iter()
                .map(|h| h.norm_sqr())
                .collect()
        })
        .collect()
}

fn mac_rate(gains: &[Vec<f64>], powers: &[Vec<f64>], theta: f64) -> f64 {
    let n = gains[0].len();
    (0..n)
        .map(|i| {
            let snr: f64 = gains.iter().zip(powers).map(|(g, p)| g[i] * p[i]).sum();
            theta * (1.0 + snr / theta).log2()
        })
        .sum::<f64>()
        / n as f64
}

/// Exact optimum of the two-user multiaccess sum-rate when every per-sample
/// power is a multiple of `n p_bar / units`: a knapsack over samples whose
/// state is the number of units each user has spent.
fn mac_grid_oracle(gains: &[Vec<f64>], theta: f64, p_bar: f64, units: usize) -> f64 {
    let n = gains[0].len();
    let step = n as f64 * p_bar / units as f64;
    let width = units + 1;
    let mut best = vec![f64::NEG_INFINITY; width * width];
    best[0] = 0.0;
    for i in 0..n {
        let mut next = vec![f64::NEG_INFINITY; width * width];
        for used1 in 0..width {
            for used2 in 0..width {
                let base = best[used1 * width + used2];
                if base == f64::NEG_INFINITY {
                    continue;
                }
                for a in 0..width - used1 {
                    for b in 0..width - used2 {
                        let snr = gains[0][i] * a as f64 * step + gains[1][i] * b as f64 * step;
                        let v = base + theta * (1.0 + snr / theta).log2();
                        let slot = &mut next[(used1 + a) * width + used2 + b];
                        if v > *slot {
                            *slot = v;
                        }
                    }
                }
            }
        }
        best = next;
    }
    best.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / n as f64
}

#[test]
fn water_level_grows_with_budget() {
    let gains = [0.3, 1.2, 2.5, 0.05, 4.0];
    let mut last = 0.0;
    for p in [0.1, 0.5, 1.0, 2.0, 8.0] {
        let wf = waterfill_single(&gains, 0.5, p).unwrap();
        assert!(wf.water_level > last);
        last = wf.water_level;
        let avg = wf.powers.iter().sum::<f64>() / gains.len() as f64;
        assert!((avg - p).abs() <= 1e-8 * p);
    }
    let wf = waterfill_single(&[0.0, 0.0], 0.5, 1.0).unwrap();
    assert!(wf.zero_channel);
    assert!(wf.powers.iter().all(|p| *p == 0.0));
}

#[test]
fn single_user_mac_is_water_filling() {
    let ens = sample_unit_ensemble(1, 50, 4).unwrap();
    let g = power_gains(&ens, Receiver::Destination);
    let mac = waterfill_mac_opportunistic(&g, 0.5, &[1.3], &SolverConfig::default()).unwrap();
    let wf = waterfill_single(&g[0], 0.5, 1.3).unwrap();
    for (a, b) in mac.powers[0].iter().zip(&wf.powers) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn silent_second_user_leaves_first_alone() {
    let ens = sample_unit_ensemble(1, 40, 8).unwrap();
    let g1 = power_gains(&ens, Receiver::Destination).remove(0);
    let g = vec![g1.clone(), vec![0.0; 40]];
    let mac = waterfill_mac_opportunistic(&g, 0.5, &[1.0, 1.0], &SolverConfig::default()).unwrap();
    let wf = waterfill_single(&g1, 0.5, 1.0).unwrap();
    assert!(mac.zero_channel[1]);
    assert!(mac.powers[1].iter().all(|p| *p == 0.0));
    for (a, b) in mac.powers[0].iter().zip(&wf.powers) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn two_user_mac_matches_knapsack_grid() {
    let ens = sample_unit_ensemble(2, 8, 21).unwrap();
    let g = power_gains(&ens, Receiver::Relay);
    let theta = 0.5;
    let mac = waterfill_mac_opportunistic(&g, theta, &[1.0, 1.0], &SolverConfig::default()).unwrap();
    for i in 0..8 {
        assert!(mac.powers[0][i] == 0.0 || mac.powers[1][i] == 0.0);
    }
    let value = mac_rate(&g, &mac.powers, theta);
    let grid = mac_grid_oracle(&g, theta, 1.0, 80);
    assert!(value >= grid - 1e-12, "{value} < {grid}");
    assert!(value - grid < 1e-3, "{value} vs {grid}");
}

#[test]
fn gradient_ascent_agrees_with_water_filling() {
    let ens = sample_unit_ensemble(2, 12, 5).unwrap();
    let g = power_gains(&ens, Receiver::Destination);
    let theta = 0.5;
    let cfg = SolverConfig::default();
    let mac = waterfill_mac_opportunistic(&g, theta, &[1.0, 2.0], &cfg).unwrap();
    let target = mac_rate(&g, &mac.powers, theta);
    let mut objective = |x: &[Vec<f64>]| {
        let mut f = |y: &[Vec<f64>]| mac_rate(&g, y, theta);
        let grad = central_difference_gradient(&mut f, x, 1e-7);
        (f(x), grad)
    };
    let ascent = projected_gradient_concave(&mut objective, &[1.0, 2.0], 12, None, &cfg).unwrap();
    assert!(ascent.trace.windows(2).all(|w| w[1] >= w[0]));
    assert!(
        (ascent.objective - target).abs() < 1e-4,
        "{} vs {target}",
        ascent.objective
    );
}

#[test]
fn gradient_ascent_edge_cases() {
    let cfg = SolverConfig::default();
    let mut zero_budget = |x: &[Vec<f64>]| (x[0].iter().map(|p| (1.0 + p).log2()).sum::<f64>(), vec![vec![1.0; 3]]);
    let r = projected_gradient_concave(&mut zero_budget, &[0.0], 3, None, &cfg).unwrap();
    assert!(r.columns[0].iter().all(|p| *p == 0.0));
    // One user, one constant state, joint two-antenna receiver.
    let gsum = 1.7;
    let mut simo = |x: &[Vec<f64>]| {
        let p = x[0][0];
        (
            0.5 * (1.0 + gsum * p / 0.5).log2(),
            vec![vec![gsum / ((0.5 + gsum * p) * std::f64::consts::LN_2)]],
        )
    };
    let r = projected_gradient_concave(&mut simo, &[1.25], 1, Some(vec![vec![0.0]]), &cfg).unwrap();
    assert!((r.columns[0][0] - 1.25).abs() < 1e-12);
}

fn boundary_instance(seed: u64, n: usize) -> (FadingEnsemble, Budget) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = vec![[rng.random_range(-0.6..0.0), 0.3], [rng.random_range(-0.6..0.0), -0.3]];
    let relay = [rng.random_range(0.1..1.4), rng.random_range(-0.3..0.3)];
    let g = Geometry::new(sources, relay, [1.5, 0.0], 3.0).unwrap();
    let p = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
    (sample_ensemble(&g, n, seed).unwrap(), Budget::new(p, 0.5).unwrap())
}

#[test]
fn full_relay_weight_is_relay_water_filling() {
    let (ens, budget) = boundary_instance(3, 60);
    let cfg = SolverConfig::default();
    for (alpha, rx) in [(1.0, Receiver::Relay), (0.0, Receiver::Destination)] {
        let r = iterative_nonwf(&ens, &budget, &[alpha], CaseKind::Active(ActiveCase::C), &cfg).unwrap();
        let mac = waterfill_mac_opportunistic(&power_gains(&ens, rx), budget.theta, budget.sources(), &cfg).unwrap();
        for u in 0..2 {
            for (a, b) in r.policy.column(u).iter().zip(&mac.powers[u]) {
                assert!((a - b).abs() < 1e-6, "alpha {alpha}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn identical_streams_share_one_multiplier() {
    let base = sample_unit_ensemble(1, 4, 12).unwrap();
    let r = base.link(Receiver::Relay, Transmitter::Source(0)).to_vec();
    let d = base.link(Receiver::Destination, Transmitter::Source(0)).to_vec();
    let rd = base.link(Receiver::Destination, Transmitter::Relay).to_vec();
    let ens = FadingEnsemble::from_gains(vec![r.clone(), r], vec![d.clone(), d], rd, 0, None).unwrap();
    let budget = Budget::new(vec![1.0, 1.0, 1.0], 0.5).unwrap();
    let cfg = SolverConfig::default();
    let res = iterative_nonwf(&ens, &budget, &[0.5], CaseKind::Active(ActiveCase::C), &cfg).unwrap();
    let nu = &res.duals.nu;
    assert!((nu[0] - nu[1]).abs() <= cfg.power_tol * nu[0].max(1.0) * 10.0, "{nu:?}");
    // Permuting the users leaves the objective unchanged, so splitting the
    // schedule between them changes nothing either.
    let pair = df_bounds(&ens, &res.policy, &budget).unwrap();
    let swapped = PowerPolicy::from_columns(vec![
        res.policy.column(1).to_vec(),
        res.policy.column(0).to_vec(),
        res.policy.relay().to_vec(),
    ])
    .unwrap();
    let pair2 = df_bounds(&ens, &swapped, &budget).unwrap();
    assert!((pair.f_relay.value(3) - pair2.f_relay.value(3)).abs() < 1e-12);
}

#[test]
fn boundary_weights_need_an_equality_case() {
    let (ens, budget) = boundary_instance(1, 8);
    let cfg = SolverConfig::default();
    for case in [
        CaseKind::Active(ActiveCase::A),
        CaseKind::Active(ActiveCase::B),
        CaseKind::Inactive(1),
    ] {
        assert!(matches!(
            solve_boundary_weights(&ens, &budget, case, &cfg),
            Err(WfError::NotApplicable(_))
        ));
    }
}

/// Relay gains scaled so that relay and destination sum bounds cross as the
/// weight moves from the destination side to the relay side.
#[test]
fn engineered_crossing_meets_equal_sums() {
    let base = sample_unit_ensemble(2, 30, 99).unwrap();
    let scale = |h: &[num_complex::Complex64], s: f64| h.iter().map(|x| x * s).collect::<Vec<_>>();
    let cfg = SolverConfig::default();
    let budget = Budget::new(vec![1.0, 1.0, 1.0], 0.5).unwrap();
    let mut crossed = 0;
    for s in [0.8, 1.0, 1.3, 1.7, 2.2] {
        let ens = FadingEnsemble::from_gains(
            (0..2)
                .map(|u| scale(base.link(Receiver::Relay, Transmitter::Source(u)), s))
                .collect(),
            (0..2)
                .map(|u| base.link(Receiver::Destination, Transmitter::Source(u)).to_vec())
                .collect(),
            base.link(Receiver::Destination, Transmitter::Relay).to_vec(),
            0,
            None,
        )
        .unwrap();
        let gap = |alpha: f64| {
            let r = iterative_nonwf(&ens, &budget, &[alpha], CaseKind::Active(ActiveCase::C), &cfg).unwrap();
            let pair = df_bounds(&ens, &r.policy, &budget).unwrap();
            pair.f_relay.value(3) - pair.f_dest.value(3)
        };
        if !(gap(0.0) < 0.0 && gap(1.0) > 0.0) {
            continue;
        }
        crossed += 1;
        let w = solve_boundary_weights(&ens, &budget, CaseKind::Active(ActiveCase::C), &cfg).unwrap();
        let pair = df_bounds(&ens, &w.policy, &budget).unwrap();
        let (fr, fd) = (pair.f_relay.value(3), pair.f_dest.value(3));
        assert!((fr - fd).abs() <= cfg.alpha_tol * fr.max(fd), "scale {s}: {fr} vs {fd}");
        assert!((0.0..=1.0).contains(&w.alpha[0]));
    }
    assert!(crossed > 0);
}

fn kkt_residuals(ens: &FadingEnsemble, budget: &Budget, alpha: f64, case: CaseKind) -> (f64, f64, Vec<f64>) {
    let r = iterative_nonwf(ens, budget, &[alpha], case, &SolverConfig::default()).unwrap();
    (r.kkt_residual, r.power_residual, r.trace)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mixture_traces_rise_and_certify(seed in any::<u64>(), alpha in 0.0f64..=1.0, pick in 0usize..4) {
        let (ens, budget) = boundary_instance(seed, 6);
        let case = [
            CaseKind::Active(ActiveCase::C),
            CaseKind::Boundary(1, ActiveCase::A),
            CaseKind::Boundary(2, ActiveCase::B),
            CaseKind::Boundary(1, ActiveCase::B),
        ][pick];
        let (kkt, power, trace) = kkt_residuals(&ens, &budget, alpha, case);
        for w in trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0), "{:?}", trace);
        }
        prop_assert!(kkt <= 1e-7, "kkt {}", kkt);
        prop_assert!(power <= 1e-8, "power {}", power);
    }

    #[test]
    fn opportunistic_schedule_is_sparse(seed in any::<u64>(), k in 2usize..=3) {
        let ens = sample_unit_ensemble(k, 64, seed).unwrap();
        let g = power_gains(&ens, Receiver::Relay);
        let mac = waterfill_mac_opportunistic(&g, 0.5, &vec![1.0; k], &SolverConfig::default()).unwrap();
        // A finite ensemble may share a sample between users whose scaled
        // gains g/ν tie; any other sample serves at most one user.
        for i in 0..64 {
            let on: Vec<usize> = (0..k).filter(|&u| mac.powers[u][i] > 0.0).collect();
            if on.len() > 1 {
                let scaled: Vec<f64> = on.iter().map(|&u| g[u][i] / mac.nu[u]).collect();
                let hi = scaled.iter().cloned().fold(0.0, f64::max);
                let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert!(hi - lo <= 1e-6 * hi, "sample {} scaled gains {:?}", i, scaled);
            }
        }
        for u in 0..k {
            let avg = mac.powers[u].iter().sum::<f64>() / 64.0;
            prop_assert!((avg - 1.0).abs() <= 1e-8);
        }
    }
}
