//! Power allocation solvers: single-link water-filling, multiuser water-filling,
//! the mixture solver behind cases 3c and the boundary cases, the search for
//! boundary weights, and a projected-gradient ascent used as a cross-check.

pub mod minimax;
pub mod mixture;

use std::f64::consts::LN_2;

use thiserror::Error;

use crate::fading::{Budget, FadingEnsemble};
use crate::ratebounds::{relay_link_rate, BoundFamily, GainTable, PowerPolicy, RateError};
use crate::setfn::{full_set, ActiveCase, CaseKind, Subset};

pub use minimax::{Candidate, CandidateGroup, MinimaxSolver, SupportSolution};
pub use mixture::{MixtureProblem, MixtureSolution, RateTerm, TermKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WfError {
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("no convergence after {sweeps} sweeps (KKT residual {kkt_residual:e}, power residual {power_residual:e})")]
    NonConvergence {
        sweeps: usize,
        kkt_residual: f64,
        power_residual: f64,
    },
    #[error("operation does not apply to case {0}")]
    NotApplicable(String),
    #[error("case {case} infeasible for this instance (split residuals {residuals:?})")]
    CaseInfeasible { case: String, residuals: Vec<f64> },
    #[error(transparent)]
    Rate(#[from] RateError),
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative tolerance on meeting the average power budget.
    pub power_tol: f64,
    /// Largest accepted KKT residual.
    pub kkt_tol: f64,
    /// Relative objective change that ends the block iterations.
    pub iter_tol: f64,
    /// Cap on block sweeps per inner solve.
    pub max_iters: usize,
    /// Relative tolerance on the equalities of 3c and the boundary cases.
    pub alpha_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            power_tol: 1e-8,
            kkt_tol: 1e-7,
            iter_tol: 1e-10,
            max_iters: 10_000,
            alpha_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), WfError> {
        let ok = [self.power_tol, self.kkt_tol, self.iter_tol, self.alpha_tol]
            .iter()
            .all(|t| *t > 0.0 && t.is_finite());
        if !ok || self.max_iters == 0 {
            return Err(WfError::BadInput("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Multipliers of the average power constraints (sources, then relay) and the
/// weights of the equality conditions of the case.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DualVariables {
    pub nu: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waterfill {
    pub powers: Vec<f64>,
    pub nu: f64,
    /// `fraction / (ν ln 2)`.
    pub water_level: f64,
    /// Every gain is zero while the budget is positive; the rate is zero.
    pub zero_channel: bool,
}

/// Maximizes `avg fraction · C(g P / fraction)` subject to `avg P ≤ p_bar`:
/// `P = (fraction/(ν ln2) - fraction/g)⁺`, with the level found exactly by
/// sorting the gains.
pub fn waterfill_single(gains: &[f64], fraction: f64, p_bar: f64) -> Result<Waterfill, WfError> {
    if gains.is_empty() {
        return Err(WfError::BadInput("no samples".into()));
    }
    if gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(WfError::BadInput("gains must be finite and nonnegative".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(WfError::BadInput(format!(
            "bandwidth fraction {fraction} outside (0,1]"
        )));
    }
    if !(p_bar >= 0.0) || !p_bar.is_finite() {
        return Err(WfError::BadInput(format!("power limit {p_bar} must be >= 0")));
    }
    let n = gains.len();
    if p_bar == 0.0 {
        return Ok(Waterfill {
            powers: vec![0.0; n],
            nu: f64::INFINITY,
            water_level: 0.0,
            zero_channel: false,
        });
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| gains[i] > 0.0).collect();
    if order.is_empty() {
        return Ok(Waterfill {
            powers: vec![0.0; n],
            nu: 0.0,
            water_level: 0.0,
            zero_channel: true,
        });
    }
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let budget = n as f64 * p_bar;
    let mut floor_sum = 0.0;
    let mut level = 0.0;
    for (m, &i) in order.iter().enumerate() {
        floor_sum += fraction / gains[i];
        let candidate = (budget + floor_sum) / (m + 1) as f64;
        level = candidate;
        match order.get(m + 1) {
            Some(&next) if candidate > fraction / gains[next] => continue,
            _ => break,
        }
    }
    let powers = gains
        .iter()
        .map(|&g| if g > 0.0 { (level - fraction / g).max(0.0) } else { 0.0 })
        .collect();
    Ok(Waterfill {
        powers,
        nu: fraction / (level * LN_2),
        water_level: level,
        zero_channel: false,
    })
}

/// Water-filling of the relay on its link to the destination, with the
/// fraction `θ̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayPolicy {
    pub powers: Vec<f64>,
    /// Level `λ_r = ν ln 2` of the unit-weight relay problem.
    pub lambda: f64,
    pub rate: f64,
    pub zero_channel: bool,
}

pub fn relay_policy(gains: &GainTable, budget: &Budget) -> Result<RelayPolicy, WfError> {
    let wf = waterfill_single(&gains.relay_to_dest, budget.theta_bar(), budget.relay())?;
    let rate = relay_link_rate(gains, &wf.powers, budget.theta_bar());
    Ok(RelayPolicy {
        lambda: wf.nu * LN_2,
        rate,
        zero_channel: wf.zero_channel,
        powers: wf.powers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacWaterfill {
    /// `[user][sample]`.
    pub powers: Vec<Vec<f64>>,
    pub nu: Vec<f64>,
    pub sweeps: usize,
    pub zero_channel: Vec<bool>,
}

/// Ergodic multiaccess sum-rate water-filling: maximizes
/// `avg θ C(Σ_k g_k P_k / θ)` under per-user average power limits.
///
/// Users are updated in turn, each water-filling against the current powers
/// of the others, until the KKT conditions hold. On continuous fading the
/// result schedules at most one user per sample, the one with the largest
/// `g_k / ν_k`.
pub fn waterfill_mac_opportunistic(
    gains: &[Vec<f64>],
    theta: f64,
    p_bars: &[f64],
    cfg: &SolverConfig,
) -> Result<MacWaterfill, WfError> {
    cfg.validate()?;
    let k = gains.len();
    if k == 0 || k > crate::setfn::MAX_USERS || p_bars.len() != k {
        return Err(WfError::BadInput(format!(
            "{k} users with {} power limits",
            p_bars.len()
        )));
    }
    let n = gains[0].len();
    if n == 0 || gains.iter().any(|g| g.len() != n) {
        return Err(WfError::BadInput("ragged or empty gains".into()));
    }
    if gains.iter().flatten().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(WfError::BadInput("gains must be finite and nonnegative".into()));
    }
    if p_bars.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(WfError::BadInput("power limits must be >= 0".into()));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(WfError::BadInput(format!("bandwidth fraction {theta} outside (0,1]")));
    }
    let table = GainTable {
        k,
        n,
        relay: gains.to_vec(),
        dest: vec![vec![0.0; n]; k],
        cross: vec![vec![num_complex::Complex64::new(0.0, 0.0); n]; k],
        relay_link: gains
            .iter()
            .map(|c| c.iter().map(|g| num_complex::Complex64::new(g.sqrt(), 0.0)).collect())
            .collect(),
        dest_link: vec![vec![num_complex::Complex64::new(0.0, 0.0); n]; k],
        relay_to_dest: vec![0.0; n],
    };
    let problem = MixtureProblem {
        gains: &table,
        theta,
        p_bar: p_bars,
        relay_rate: 0.0,
        terms: vec![RateTerm {
            kind: TermKind::Relay,
            users: full_set(k),
            weight: 1.0,
        }],
    };
    let sol = problem.solve(None, None, cfg);
    if !sol.converged {
        return Err(WfError::NonConvergence {
            sweeps: sol.sweeps,
            kkt_residual: sol.kkt_residual,
            power_residual: sol.power_residual,
        });
    }
    Ok(MacWaterfill {
        nu: sol.lambda.iter().map(|l| l / LN_2).collect(),
        powers: sol.powers,
        sweeps: sol.sweeps,
        zero_channel: sol.zero_channel,
    })
}

/// The candidate `f_first(S) + f_dest(K\S)` for split `S`.
pub fn split_candidate(family: BoundFamily, k: usize, s: Subset) -> Candidate {
    let first = match family {
        BoundFamily::Df => TermKind::Relay,
        BoundFamily::Cutset => TermKind::Simo,
    };
    let rest = full_set(k) & !s;
    let mut terms = Vec::with_capacity(2);
    if s != 0 {
        terms.push(RateTerm {
            kind: first,
            users: s,
            weight: 1.0,
        });
    }
    if rest != 0 {
        terms.push(RateTerm {
            kind: TermKind::Dest,
            users: rest,
            weight: 1.0,
        });
    }
    Candidate { terms }
}

/// All `2^K` split candidates; member `S` is the split with bitmask `S`.
pub fn split_group(family: BoundFamily, k: usize) -> CandidateGroup {
    CandidateGroup {
        scale: 1.0,
        members: (0..=full_set(k)).map(|s| split_candidate(family, k, s)).collect(),
    }
}

/// Maps the case weights to split weights.
///
/// * 3c: `α` on `K` (relay-side sum), `1-α` on `∅`.
/// * (S,3a): `α` on `K`, `1-α` on `S`.
/// * (S,3b): `α` on `∅`, `1-α` on `S`.
/// * (S,3c): `α₁` on `K`, `α₂` on `∅`, `1-α₁-α₂` on `S`.
pub fn case_split_weights(k: usize, case: CaseKind, alpha: &[f64]) -> Result<Vec<(Subset, f64)>, WfError> {
    let full = full_set(k);
    let bad = |msg: &str| WfError::BadInput(format!("{msg} for case {case}"));
    if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(bad("weights must lie in [0,1]"));
    }
    let need = |m: usize| {
        if alpha.len() == m {
            Ok(())
        } else {
            Err(bad(&format!("expected {m} weights")))
        }
    };
    match case {
        CaseKind::Active(ActiveCase::C) => {
            need(1)?;
            Ok(vec![(full, alpha[0]), (0, 1.0 - alpha[0])])
        }
        CaseKind::Boundary(s, ActiveCase::A) => {
            need(1)?;
            Ok(vec![(s, 1.0 - alpha[0]), (full, alpha[0])])
        }
        CaseKind::Boundary(s, ActiveCase::B) => {
            need(1)?;
            Ok(vec![(s, 1.0 - alpha[0]), (0, alpha[0])])
        }
        CaseKind::Boundary(s, ActiveCase::C) => {
            need(2)?;
            if alpha[0] + alpha[1] > 1.0 + 1e-15 {
                return Err(bad("weights must sum to at most one"));
            }
            Ok(vec![
                (s, (1.0 - alpha[0] - alpha[1]).max(0.0)),
                (full, alpha[0]),
                (0, alpha[1]),
            ])
        }
        _ => Err(WfError::NotApplicable(case.to_string())),
    }
}

/// Inverse of [`case_split_weights`]: case weights from split weights.
pub fn case_alpha(k: usize, case: CaseKind, split_weights: &[f64]) -> Vec<f64> {
    let full = full_set(k) as usize;
    match case {
        CaseKind::Active(ActiveCase::C) | CaseKind::Boundary(_, ActiveCase::A) => vec![split_weights[full]],
        CaseKind::Boundary(_, ActiveCase::B) => vec![split_weights[0]],
        CaseKind::Boundary(_, ActiveCase::C) => vec![split_weights[full], split_weights[0]],
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonWfResult {
    pub policy: PowerPolicy,
    pub duals: DualVariables,
    /// Objective before the first sweep and after each sweep.
    pub trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub power_residual: f64,
}

fn check_inputs(ens: &FadingEnsemble, budget: &Budget, cfg: &SolverConfig) -> Result<(), WfError> {
    cfg.validate()?;
    budget.validate().map_err(|e| WfError::BadInput(e.to_string()))?;
    if budget.num_users() != ens.num_users() {
        return Err(WfError::BadInput(format!(
            "budget has {} sources, ensemble {}",
            budget.num_users(),
            ens.num_users()
        )));
    }
    Ok(())
}

/// Assembles the full policy and multipliers from a mixture solution.
pub fn assemble_policy(
    sol: &MixtureSolution,
    relay: &RelayPolicy,
    dest_weight: f64,
) -> Result<(PowerPolicy, Vec<f64>), WfError> {
    let mut columns = sol.powers.clone();
    columns.push(relay.powers.clone());
    let mut nu: Vec<f64> = sol.lambda.iter().map(|l| l / LN_2).collect();
    nu.push(dest_weight * relay.lambda / LN_2);
    Ok((PowerPolicy::from_columns(columns)?, nu))
}

/// Total weight of destination terms, which is the weight the relay rate
/// carries in the objective.
pub fn dest_weight(terms: &[RateTerm]) -> f64 {
    terms
        .iter()
        .filter(|t| t.kind == TermKind::Dest)
        .map(|t| t.weight)
        .sum()
}

/// Maximizes the weighted split mixture of case 3c or a boundary case for
/// fixed weights (see [`case_split_weights`]) by alternating per-user updates.
/// The relay water-fills on its link to the destination.
pub fn iterative_nonwf(
    ens: &FadingEnsemble,
    budget: &Budget,
    alpha: &[f64],
    case: CaseKind,
    cfg: &SolverConfig,
) -> Result<NonWfResult, WfError> {
    check_inputs(ens, budget, cfg)?;
    let k = ens.num_users();
    let splits = case_split_weights(k, case, alpha)?;
    let gains = GainTable::new(ens);
    let relay = relay_policy(&gains, budget)?;
    let terms = mixture::merge_terms(splits.iter().flat_map(|&(s, w)| {
        split_candidate(BoundFamily::Df, k, s)
            .terms
            .into_iter()
            .map(move |t| RateTerm {
                weight: t.weight * w,
                ..t
            })
    }));
    let dw = dest_weight(&terms);
    let problem = MixtureProblem {
        gains: &gains,
        theta: budget.theta,
        p_bar: budget.sources(),
        relay_rate: relay.rate,
        terms,
    };
    let sol = problem.solve(None, None, cfg);
    let (policy, nu) = assemble_policy(&sol, &relay, dw)?;
    Ok(NonWfResult {
        policy,
        duals: DualVariables {
            nu,
            alpha: alpha.to_vec(),
        },
        trace: sol.trace,
        sweeps: sol.sweeps,
        converged: sol.converged,
        kkt_residual: sol.kkt_residual,
        power_residual: sol.power_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryWeights {
    pub alpha: Vec<f64>,
    pub policy: PowerPolicy,
    /// Split values minus their minimum at the returned policy, by bitmask.
    pub residuals: Vec<f64>,
    pub settled: bool,
}

/// Finds the weights of 3c or a boundary case at which its tied splits are
/// equal at the optimal policy of the weighted mixture.
pub fn solve_boundary_weights(
    ens: &FadingEnsemble,
    budget: &Budget,
    case: CaseKind,
    cfg: &SolverConfig,
) -> Result<BoundaryWeights, WfError> {
    if matches!(
        case,
        CaseKind::Inactive(_) | CaseKind::Active(ActiveCase::A | ActiveCase::B)
    ) {
        return Err(WfError::NotApplicable(case.to_string()));
    }
    check_inputs(ens, budget, cfg)?;
    let k = ens.num_users();
    let gains = GainTable::new(ens);
    let relay = relay_policy(&gains, budget)?;
    let mut solver = MinimaxSolver::new(
        &gains,
        budget.theta,
        budget.sources().to_vec(),
        relay.rate,
        vec![split_group(BoundFamily::Df, k)],
        *cfg,
    );
    let mask = case.support(k).iter().fold(0u64, |m, &s| m | 1u64 << s);
    let sol = solver.solve_support(&[mask]);
    let min = sol.values[0].iter().cloned().fold(f64::INFINITY, f64::min);
    let residuals: Vec<f64> = sol.values[0].iter().map(|v| v - min).collect();
    if !sol.interior {
        return Err(WfError::CaseInfeasible {
            case: case.to_string(),
            residuals,
        });
    }
    let (policy, _) = assemble_policy(&sol.solution, &relay, 0.0)?;
    Ok(BoundaryWeights {
        alpha: case_alpha(k, case, &sol.weights[0]),
        policy,
        residuals,
        settled: sol.settled,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientAscent {
    /// `[column][sample]`.
    pub columns: Vec<Vec<f64>>,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Euclidean projection of one column onto `{x ≥ 0, avg x ≤ p_bar}`: clip,
/// then shift the water level down if the budget is exceeded.
pub fn project_column(x: &mut [f64], p_bar: f64) {
    let n = x.len();
    let budget = p_bar * n as f64;
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    if x.iter().sum::<f64>() <= budget {
        return;
    }
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (m, v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - budget) / (m + 1) as f64;
        if sorted.get(m + 1).map_or(true, |next| *next <= t) {
            tau = t;
            break;
        }
    }
    x.iter_mut().for_each(|v| *v = (*v - tau).max(0.0));
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference_gradient(f: &mut dyn FnMut(&[Vec<f64>]) -> f64, x: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = vec![Vec::new(); x.len()];
    for (c, col) in x.iter().enumerate() {
        for i in 0..col.len() {
            let base = probe[c][i];
            let step = h * base.abs().max(1.0);
            probe[c][i] = base + step;
            let up = f(&probe);
            probe[c][i] = (base - step).max(0.0);
            let down = f(&probe);
            probe[c][i] = base;
            grad[c].push((up - down) / (base + step - (base - step).max(0.0)));
        }
    }
    grad
}

/// Projected gradient ascent with Armijo backtracking over
/// `{P ≥ 0, avg P_c ≤ p_bar[c]}`. Steps that do not raise the objective are
/// rejected, so the trace is nondecreasing.
pub fn projected_gradient_concave(
    objective: &mut dyn FnMut(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
    p_bar: &[f64],
    n: usize,
    init: Option<Vec<Vec<f64>>>,
    cfg: &SolverConfig,
) -> Result<GradientAscent, WfError> {
    cfg.validate()?;
    if n == 0 || p_bar.iter().any(|p| !(*p >= 0.0)) {
        return Err(WfError::BadInput("need samples and nonnegative limits".into()));
    }
    let mut x = init.unwrap_or_else(|| p_bar.iter().map(|p| vec![*p; n]).collect());
    if x.len() != p_bar.len() || x.iter().any(|c| c.len() != n) {
        return Err(WfError::BadInput("initial point has the wrong shape".into()));
    }
    for (c, col) in x.iter_mut().enumerate() {
        project_column(col, p_bar[c]);
    }
    let (mut fx, mut gx) = objective(&x);
    let mut trace = vec![fx];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand: Vec<Vec<f64>> = x
                .iter()
                .zip(&gx)
                .map(|(col, g)| col.iter().zip(g).map(|(v, d)| v + step * d).collect())
                .collect();
            for (c, col) in cand.iter_mut().enumerate() {
                project_column(col, p_bar[c]);
            }
            let ascent: f64 = cand
                .iter()
                .zip(&x)
                .zip(&gx)
                .map(|((a, b), g)| a.iter().zip(b).zip(g).map(|((p, q), d)| (p - q) * d).sum::<f64>())
                .sum();
            let (fc, gc) = objective(&cand);
            if fc >= fx + 1e-4 * ascent && fc >= fx {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, fc, gc)) => {
                let change = fc - fx;
                x = cand;
                fx = fc;
                gx = gc;
                trace.push(fx);
                step *= 2.0;
                if change <= cfg.iter_tol * fx.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    Ok(GradientAscent {
        columns: x,
        objective: fx,
        trace,
        iterations,
        converged,
    })
}
