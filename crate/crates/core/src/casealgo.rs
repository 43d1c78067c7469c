//! Case taxonomy, the sequential optimal-policy search over cases, the
//! two-user weighted-sum solver, clustered corner points and the
//! sum-capacity certificate.
//!
//! A case fixes which subset splits `g_S = f1(S) + f2(K\S)` are tied at the
//! minimum. The optimal policy of a case maximizes the weighted split mixture
//! whose weights make the tied splits equal (see [`MinimaxSolver`]). A case is
//! accepted when the splits tied at its own optimum are exactly its support;
//! then `min_S g_S(P) = Σ w_S g_S(P) = max_P' Σ w_S g_S(P')`, which bounds the
//! max-min from above, so the accepted policy is globally optimal.

use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::fading::{Budget, FadingEnsemble};
use crate::ratebounds::{bounds_with, BoundFamily, GainTable, PowerPolicy, RateError, RateRegionPair};
use crate::setfn::{
    classify_splits, full_set, intersect_max_sum, max_weighted_sum_on_intersection, split_values, ActiveCase, CaseKind,
    SetFnError, SplitClassification, Subset, MAX_USERS,
};
use crate::wfsolve::{
    assemble_policy, case_alpha, relay_policy, split_group, Candidate, CandidateGroup, DualVariables, MinimaxSolver,
    RateTerm, SolverConfig, SupportSolution, TermKind, WfError,
};

/// Largest source count accepted by [`optimal_cutset_sum_rate`].
pub const MAX_USERS_CUTSET: usize = 4;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("{users} sources exceed the limit of {limit}")]
    TooManyUsers { users: usize, limit: usize },
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("reports describe different instances: {0}")]
    Mismatch(String),
    #[error("no case accepted: {0}")]
    NoCase(String),
    #[error(transparent)]
    Solver(#[from] WfError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    SetFn(#[from] SetFnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseLabel {
    pub kind: CaseKind,
    pub family: BoundFamily,
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)
    }
}

/// Outcome of testing one case's conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub case: CaseKind,
    pub satisfied: bool,
    /// `g_S - min_T g_T` by split bitmask, at the case's own optimum.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IterationCounts {
    pub cases_tried: usize,
    /// Cases skipped because bounds show they cannot be accepted.
    pub cases_pruned: usize,
    pub inner_solves: usize,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub k: usize,
    pub n: usize,
    pub family: BoundFamily,
    pub policy: PowerPolicy,
    pub label: CaseLabel,
    pub sum_rate: f64,
    pub duals: DualVariables,
    pub conditions_checked: Vec<ConditionCheck>,
    pub iterations: IterationCounts,
    /// More than one proper split is tied at the optimum.
    pub degenerate: bool,
    pub kkt_residual: f64,
    pub power_residual: f64,
    /// Problems met on the way that do not invalidate the result.
    pub diagnostics: Vec<String>,
}

impl SolverReport {
    /// Flat `key: value` text, one entry per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(": ");
            out.push_str(&v);
            out.push('\n');
        };
        put("family", self.family.tag().to_string());
        put("label", self.label.kind.to_string());
        put("sum_rate", format!("{:.12e}", self.sum_rate));
        put("k", self.k.to_string());
        put("n", self.n.to_string());
        put("degenerate", self.degenerate.to_string());
        for (i, nu) in self.duals.nu.iter().enumerate() {
            let key = if i == self.k {
                "nu.relay".to_string()
            } else {
                format!("nu.{}", i + 1)
            };
            put(&key, format!("{nu:.12e}"));
        }
        for (i, a) in self.duals.alpha.iter().enumerate() {
            put(&format!("alpha.{}", i + 1), format!("{a:.12e}"));
        }
        for c in 0..=self.k {
            let key = if c == self.k {
                "power.relay".to_string()
            } else {
                format!("power.{}", c + 1)
            };
            put(&key, format!("{:.12e}", self.policy.average(c)));
        }
        put("kkt_residual", format!("{:.3e}", self.kkt_residual));
        put("power_residual", format!("{:.3e}", self.power_residual));
        put("iterations.cases", self.iterations.cases_tried.to_string());
        put("iterations.pruned", self.iterations.cases_pruned.to_string());
        put("iterations.inner_solves", self.iterations.inner_solves.to_string());
        put("iterations.sweeps", self.iterations.sweeps.to_string());
        for (i, c) in self.conditions_checked.iter().enumerate() {
            let res: Vec<String> = c.residuals.iter().map(|r| format!("{r:.3e}")).collect();
            put(
                &format!("check.{i}"),
                format!(
                    "{} {} [{}]",
                    c.case,
                    if c.satisfied { "accepted" } else { "rejected" },
                    res.join(",")
                ),
            );
        }
        for (i, d) in self.diagnostics.iter().enumerate() {
            put(&format!("diagnostic.{i}"), d.clone());
        }
        out
    }
}

/// Result of [`check_case_conditions`].
#[derive(Debug, Clone, PartialEq)]
pub struct CaseConditions {
    pub satisfied: bool,
    pub residuals: Vec<f64>,
    pub classification: SplitClassification,
}

/// Tests the conditions of `case` on the bounds of one policy: the splits of
/// the case's support must be tied at the minimum within `tol·|min|` and every
/// other split must exceed it by more than that band.
pub fn check_case_conditions(pair: &RateRegionPair, case: CaseKind, tol: f64) -> Result<CaseConditions, CaseError> {
    let values = split_values(&pair.f_relay, &pair.f_dest)?;
    let classification = classify_splits(pair.k(), &values, tol);
    let residuals = values.iter().map(|v| v - classification.min_value).collect();
    Ok(CaseConditions {
        satisfied: classification.kind == case,
        residuals,
        classification,
    })
}

fn tie_mask(values: &[f64], tol: f64) -> u64 {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let band = tol * min.abs() + 1e-15;
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v <= min + band)
        .fold(0u64, |m, (i, _)| m | 1u64 << i)
}

fn weight_mask(weights: &[f64]) -> u64 {
    weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .fold(0u64, |m, (i, _)| m | 1u64 << i)
}

/// Every member carrying weight is tied at its group's minimum, so the
/// solution attains the max-min.
fn certified(sol: &SupportSolution, tol: f64) -> bool {
    sol.weights
        .iter()
        .zip(&sol.values)
        .all(|(w, v)| weight_mask(w) & !tie_mask(v, tol) == 0)
}

fn mask_of(subsets: &[Subset]) -> u64 {
    subsets.iter().fold(0u64, |m, &s| m | 1u64 << s)
}

/// Total weight of destination terms in the solved mixture.
fn dest_weight(groups: &[CandidateGroup], weights: &[Vec<f64>]) -> f64 {
    groups
        .iter()
        .zip(weights)
        .map(|(g, w)| {
            g.members
                .iter()
                .zip(w)
                .map(|(m, wm)| {
                    wm * g.scale
                        * m.terms
                            .iter()
                            .filter(|t| t.kind == TermKind::Dest)
                            .map(|t| t.weight)
                            .sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum()
}

fn check_instance(ens: &FadingEnsemble, budget: &Budget, cfg: &SolverConfig, limit: usize) -> Result<(), CaseError> {
    cfg.validate()?;
    budget.validate().map_err(|e| CaseError::BadInput(e.to_string()))?;
    let k = ens.num_users();
    if k > limit {
        return Err(CaseError::TooManyUsers { users: k, limit });
    }
    if budget.num_users() != k {
        return Err(CaseError::BadInput(format!(
            "budget has {} sources, ensemble {k}",
            budget.num_users()
        )));
    }
    Ok(())
}

/// One entry of a case search: the support per group and a predicate on the
/// tie masks at the solution.
struct Trial<L> {
    label: L,
    support: Vec<u64>,
}

struct SearchOutcome<L> {
    accepted: Option<(L, Rc<SupportSolution>)>,
    checks: Vec<(L, Rc<SupportSolution>, bool)>,
    pruned: usize,
}

/// `Σ_g c_g Σ_m w_gm F_gm` at the solution: the dual value of its weights,
/// which bounds the max-min from above when the inner solve converged.
fn dual_value(groups: &[CandidateGroup], sol: &SupportSolution) -> f64 {
    groups
        .iter()
        .enumerate()
        .map(|(g, grp)| grp.scale * sol.tied_value(g))
        .sum()
}

/// `Σ_g c_g min_{m ∈ support_g} F_gm` at a known solution: a lower bound on
/// the max-min restricted to `support`.
fn support_value(groups: &[CandidateGroup], sol: &SupportSolution, support: &[u64]) -> f64 {
    groups
        .iter()
        .enumerate()
        .map(|(g, grp)| {
            let v = sol.values[g]
                .iter()
                .enumerate()
                .filter(|(m, _)| support[g] >> m & 1 == 1)
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min);
            grp.scale * v
        })
        .sum()
}

/// Solves trials in order and stops at the first whose tie masks equal its
/// support in every group.
///
/// The `anchors` are solved first. Every converged solution bounds the
/// optimum `V*` from above by its dual value, and every known policy bounds a
/// support's max-min from below. A trial whose lower bound exceeds the upper
/// bound has an optimum at which some split outside its support is smaller,
/// so it cannot be accepted and is skipped.
fn sweep_trials<L: Copy>(
    solver: &mut MinimaxSolver<'_>,
    trials: &[Trial<L>],
    anchors: &[usize],
    tol: f64,
) -> SearchOutcome<L> {
    let groups = solver.groups().to_vec();
    let mut known: Vec<Rc<SupportSolution>> = Vec::new();
    let mut upper = f64::INFINITY;
    let note = |sol: &Rc<SupportSolution>, known: &mut Vec<Rc<SupportSolution>>, upper: &mut f64| {
        if sol.solution.converged {
            *upper = upper.min(dual_value(&groups, sol));
        }
        known.push(sol.clone());
    };
    for &a in anchors {
        let sol = solver.solve_support(&trials[a].support);
        note(&sol, &mut known, &mut upper);
    }
    let mut checks = Vec::new();
    let mut pruned = 0;
    for t in trials {
        let margin = tol * upper.abs() + 1e-12;
        let lower = known
            .iter()
            .map(|k| support_value(&groups, k, &t.support))
            .fold(f64::NEG_INFINITY, f64::max);
        if lower > upper + margin {
            pruned += 1;
            continue;
        }
        let sol = solver.solve_support(&t.support);
        note(&sol, &mut known, &mut upper);
        let ok = sol.values.iter().zip(&t.support).all(|(v, &m)| tie_mask(v, tol) == m);
        checks.push((t.label, sol.clone(), ok));
        if ok {
            return SearchOutcome {
                accepted: Some((t.label, sol)),
                checks,
                pruned,
            };
        }
    }
    SearchOutcome {
        accepted: None,
        checks,
        pruned,
    }
}

/// Used when no case matched exactly (several proper splits tied): the first
/// certified solution among the trials, else supports grown by their tie sets
/// until the certificate holds.
fn fallback<L: Copy>(
    solver: &mut MinimaxSolver<'_>,
    outcome: &SearchOutcome<L>,
    tol: f64,
) -> Option<Rc<SupportSolution>> {
    if let Some((_, sol, _)) = outcome.checks.iter().find(|(_, s, _)| certified(s, tol)) {
        return Some(sol.clone());
    }
    let (_, start, _) = outcome.checks.last()?;
    let mut sol = start.clone();
    for _ in 0..64 {
        if certified(&sol, tol) {
            return Some(sol);
        }
        let grown: Vec<u64> = sol
            .values
            .iter()
            .zip(&sol.support)
            .map(|(v, &m)| m | tie_mask(v, tol))
            .collect();
        if grown == sol.support {
            return Some(sol);
        }
        sol = solver.solve_support(&grown);
    }
    Some(sol)
}

struct Assembled {
    policy: PowerPolicy,
    pair: RateRegionPair,
    nu: Vec<f64>,
}

fn assemble(
    family: BoundFamily,
    gains: &GainTable,
    budget: &Budget,
    relay: &crate::wfsolve::RelayPolicy,
    groups: &[CandidateGroup],
    sol: &SupportSolution,
) -> Result<Assembled, CaseError> {
    let (policy, nu) = assemble_policy(&sol.solution, relay, dest_weight(groups, &sol.weights))?;
    let pair = bounds_with(family, gains, &policy, budget)?;
    Ok(Assembled { policy, pair, nu })
}

fn solution_diagnostics(sol: &SupportSolution, solver: &MinimaxSolver<'_>, cfg: &SolverConfig) -> Vec<String> {
    let mut d = Vec::new();
    if !sol.solution.converged {
        d.push(format!("inner solve stopped after {} sweeps", sol.solution.sweeps));
    }
    if sol.solution.kkt_residual > cfg.kkt_tol {
        d.push(format!(
            "KKT residual {:.3e} above tolerance",
            sol.solution.kkt_residual
        ));
    }
    if sol.solution.power_residual > cfg.power_tol {
        d.push(format!(
            "power residual {:.3e} above tolerance",
            sol.solution.power_residual
        ));
    }
    if !sol.settled {
        d.push("weight search did not meet its tolerance".to_string());
    }
    if solver.unconverged > 0 && sol.solution.converged {
        d.push(format!(
            "{} intermediate inner solves hit the sweep cap",
            solver.unconverged
        ));
    }
    d
}

fn optimal_sum_rate(
    family: BoundFamily,
    ens: &FadingEnsemble,
    budget: &Budget,
    cfg: &SolverConfig,
) -> Result<SolverReport, CaseError> {
    let limit = match family {
        BoundFamily::Df => MAX_USERS,
        BoundFamily::Cutset => MAX_USERS_CUTSET,
    };
    check_instance(ens, budget, cfg, limit)?;
    let k = ens.num_users();
    let gains = GainTable::new(ens);
    let relay = relay_policy(&gains, budget)?;
    let groups = vec![split_group(family, k)];
    let mut solver = MinimaxSolver::new(
        &gains,
        budget.theta,
        budget.sources().to_vec(),
        relay.rate,
        groups.clone(),
        *cfg,
    );
    let trials: Vec<Trial<CaseKind>> = CaseKind::sweep_order(k)
        .into_iter()
        .map(|c| Trial {
            label: c,
            support: vec![mask_of(&c.support(k))],
        })
        .collect();
    let tol = cfg.alpha_tol;
    let anchors: Vec<usize> = (trials.len() - 3..trials.len()).collect();
    let outcome = sweep_trials(&mut solver, &trials, &anchors, tol);
    let mut diagnostics = Vec::new();
    let sol = match &outcome.accepted {
        Some((_, s)) => s.clone(),
        None => {
            diagnostics.push("no case matched its tie set; using the certified tie-set solution".to_string());
            fallback(&mut solver, &outcome, tol).ok_or_else(|| CaseError::NoCase("empty case list".into()))?
        }
    };
    if !certified(&sol, tol) {
        diagnostics.push("accepted solution is not certified optimal".to_string());
    }
    let asm = assemble(family, &gains, budget, &relay, &groups, &sol)?;
    let verdict = intersect_max_sum(&asm.pair.f_relay, &asm.pair.f_dest)?;
    let cond = check_case_conditions(&asm.pair, CaseKind::Active(ActiveCase::A), tol)?;
    let kind = cond.classification.kind;
    diagnostics.extend(solution_diagnostics(&sol, &solver, cfg));
    let conditions_checked = outcome
        .checks
        .iter()
        .map(|(case, s, ok)| {
            let min = s.values[0].iter().cloned().fold(f64::INFINITY, f64::min);
            ConditionCheck {
                case: *case,
                satisfied: *ok,
                residuals: s.values[0].iter().map(|v| v - min).collect(),
            }
        })
        .collect();
    let alpha = match kind {
        CaseKind::Active(ActiveCase::C) | CaseKind::Boundary(..) => case_alpha(k, kind, &sol.weights[0]),
        _ => Vec::new(),
    };
    Ok(SolverReport {
        k,
        n: ens.num_samples(),
        family,
        policy: asm.policy,
        label: CaseLabel { kind, family },
        sum_rate: verdict.max_sum,
        duals: DualVariables { nu: asm.nu, alpha },
        conditions_checked,
        iterations: IterationCounts {
            cases_tried: outcome.checks.len(),
            cases_pruned: outcome.pruned,
            inner_solves: solver.leaf_solves,
            sweeps: solver.sweeps,
        },
        degenerate: cond.classification.degenerate,
        kkt_residual: sol.solution.kkt_residual,
        power_residual: sol.solution.power_residual,
        diagnostics,
    })
}

/// Sum-rate optimal DF policy by the sequential case search.
pub fn optimal_df_sum_rate(
    ens: &FadingEnsemble,
    budget: &Budget,
    cfg: &SolverConfig,
) -> Result<SolverReport, CaseError> {
    optimal_sum_rate(BoundFamily::Df, ens, budget, cfg)
}

/// Largest cutset sum-rate bound over policies, by the same case search with
/// the joint relay-and-destination bound in place of the relay bound.
pub fn optimal_cutset_sum_rate(
    ens: &FadingEnsemble,
    budget: &Budget,
    cfg: &SolverConfig,
) -> Result<SolverReport, CaseError> {
    optimal_sum_rate(BoundFamily::Cutset, ens, budget, cfg)
}

/// How the single-user bound of the higher-weight user is met in the
/// two-user weighted problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoloBound {
    /// The relay bound is the smaller one.
    Relay,
    /// The destination bound is the smaller one.
    Dest,
    /// Both bounds are equal.
    Equal,
}

impl SoloBound {
    pub fn tag(self) -> &'static str {
        match self {
            SoloBound::Relay => "relay",
            SoloBound::Dest => "dest",
            SoloBound::Equal => "equal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedReport {
    pub rates: [f64; 2],
    pub value: f64,
    /// `None` when the weights are equal.
    pub solo: Option<SoloBound>,
    pub report: SolverReport,
}

/// Maximizes `μ1 R1 + μ2 R2` over the two-user DF region.
///
/// With `u` the higher-weight user the optimum is
/// `max_P μ_lo min_S g_S(P) + (μ_hi - μ_lo) min(f_r({u}), f_d({u}))`, the
/// value of the vertex that decodes the lower-weight user first. Each sum-rate
/// case is combined with the three ways the single-user bound of `u` can bind;
/// the equal-bounds branch is solved by the same weighted mixture as the
/// boundary cases.
pub fn optimal_df_weighted_region_2user(
    ens: &FadingEnsemble,
    budget: &Budget,
    mu1: f64,
    mu2: f64,
    cfg: &SolverConfig,
) -> Result<WeightedReport, CaseError> {
    if !(mu1 > 0.0 && mu2 > 0.0 && mu1.is_finite() && mu2.is_finite()) {
        return Err(CaseError::BadInput("weights must be positive".into()));
    }
    check_instance(ens, budget, cfg, 2)?;
    if ens.num_users() != 2 {
        return Err(CaseError::BadInput(
            "the weighted solver needs exactly two sources".into(),
        ));
    }
    let mu = [mu1, mu2];
    if mu1 == mu2 {
        let report = optimal_df_sum_rate(ens, budget, cfg)?;
        let gains = GainTable::new(ens);
        let pair = bounds_with(BoundFamily::Df, &gains, &report.policy, budget)?;
        let opt = max_weighted_sum_on_intersection(&pair.f_relay, &pair.f_dest, &mu)?;
        return Ok(WeightedReport {
            rates: [opt.rates[0], opt.rates[1]],
            value: opt.value,
            solo: None,
            report,
        });
    }
    let k = 2;
    let u = if mu2 > mu1 { 1 } else { 0 };
    let (lo, hi) = (mu1.min(mu2), mu1.max(mu2));
    let solo_users: Subset = 1 << u;
    let gains = GainTable::new(ens);
    let relay = relay_policy(&gains, budget)?;
    let mut splits = split_group(BoundFamily::Df, k);
    splits.scale = lo;
    let solo = CandidateGroup {
        scale: hi - lo,
        members: [TermKind::Relay, TermKind::Dest]
            .into_iter()
            .map(|kind| Candidate {
                terms: vec![RateTerm {
                    kind,
                    users: solo_users,
                    weight: 1.0,
                }],
            })
            .collect(),
    };
    let groups = vec![splits, solo];
    let mut solver = MinimaxSolver::new(
        &gains,
        budget.theta,
        budget.sources().to_vec(),
        relay.rate,
        groups.clone(),
        *cfg,
    );
    let branches = [
        (SoloBound::Relay, 0b01u64),
        (SoloBound::Dest, 0b10),
        (SoloBound::Equal, 0b11),
    ];
    let trials: Vec<Trial<(CaseKind, SoloBound)>> = CaseKind::sweep_order(k)
        .into_iter()
        .flat_map(|c| {
            branches.iter().map(move |&(b, m)| Trial {
                label: (c, b),
                support: vec![mask_of(&c.support(k)), m],
            })
        })
        .collect();
    let tol = cfg.alpha_tol;
    let anchors: Vec<usize> = (trials.len() - 9..trials.len()).collect();
    let outcome = sweep_trials(&mut solver, &trials, &anchors, tol);
    let mut diagnostics = Vec::new();
    let sol = match &outcome.accepted {
        Some((_, s)) => s.clone(),
        None => {
            diagnostics.push("no case matched its tie set; using the certified tie-set solution".to_string());
            fallback(&mut solver, &outcome, tol).ok_or_else(|| CaseError::NoCase("empty case list".into()))?
        }
    };
    if !certified(&sol, tol) {
        diagnostics.push("accepted solution is not certified optimal".to_string());
    }
    let asm = assemble(BoundFamily::Df, &gains, budget, &relay, &groups, &sol)?;
    let opt = max_weighted_sum_on_intersection(&asm.pair.f_relay, &asm.pair.f_dest, &mu)?;
    let cond = check_case_conditions(&asm.pair, CaseKind::Active(ActiveCase::A), tol)?;
    let kind = cond.classification.kind;
    let solo_kind = match tie_mask(&sol.values[1], tol) {
        0b01 => SoloBound::Relay,
        0b10 => SoloBound::Dest,
        _ => SoloBound::Equal,
    };
    diagnostics.extend(solution_diagnostics(&sol, &solver, cfg));
    let conditions_checked = outcome
        .checks
        .iter()
        .map(|((case, _), s, ok)| {
            let min = s.values[0].iter().cloned().fold(f64::INFINITY, f64::min);
            ConditionCheck {
                case: *case,
                satisfied: *ok,
                residuals: s.values[0].iter().map(|v| v - min).collect(),
            }
        })
        .collect();
    let mut alpha = match kind {
        CaseKind::Active(ActiveCase::C) | CaseKind::Boundary(..) => case_alpha(k, kind, &sol.weights[0]),
        _ => Vec::new(),
    };
    if solo_kind == SoloBound::Equal {
        alpha.push(sol.weights[1][0]);
    }
    let report = SolverReport {
        k,
        n: ens.num_samples(),
        family: BoundFamily::Df,
        policy: asm.policy,
        label: CaseLabel {
            kind,
            family: BoundFamily::Df,
        },
        sum_rate: intersect_max_sum(&asm.pair.f_relay, &asm.pair.f_dest)?.max_sum,
        duals: DualVariables { nu: asm.nu, alpha },
        conditions_checked,
        iterations: IterationCounts {
            cases_tried: outcome.checks.len(),
            cases_pruned: outcome.pruned,
            inner_solves: solver.leaf_solves,
            sweeps: solver.sweeps,
        },
        degenerate: cond.classification.degenerate,
        kkt_residual: sol.solution.kkt_residual,
        power_residual: sol.solution.power_residual,
        diagnostics,
    };
    Ok(WeightedReport {
        rates: [opt.rates[0], opt.rates[1]],
        value: opt.value,
        solo: Some(solo_kind),
        report,
    })
}

/// Successive-decoding rates when the users of `s` are decoded at the relay in
/// the order `pi_s` and the others at the destination in the order `pi_comp`
/// (zero-based user indices). Each user gets the increment of its receiver's
/// bound over the users decoded before it.
pub fn kuser_clustered_corner_rates(
    pair: &RateRegionPair,
    s: Subset,
    pi_s: &[usize],
    pi_comp: &[usize],
) -> Result<Vec<f64>, CaseError> {
    let k = pair.k();
    let full = full_set(k);
    if s == 0 || s & !full != 0 || s == full {
        return Err(CaseError::BadInput(format!(
            "subset {s:#b} is not a proper nonempty subset"
        )));
    }
    let is_order = |perm: &[usize], set: Subset| {
        let mut seen: Subset = 0;
        for &u in perm {
            if u >= k || set >> u & 1 == 0 || seen >> u & 1 == 1 {
                return false;
            }
            seen |= 1 << u;
        }
        seen == set
    };
    if !is_order(pi_s, s) || !is_order(pi_comp, full & !s) {
        return Err(CaseError::BadInput("malformed decoding order".into()));
    }
    let mut rates = vec![0.0; k];
    for (perm, f) in [(pi_s, &pair.f_relay), (pi_comp, &pair.f_dest)] {
        let mut done: Subset = 0;
        for &u in perm {
            let next = done | 1 << u;
            rates[u] = f.value(next) - f.value(done);
            done = next;
        }
    }
    Ok(rates)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Certificate {
    /// The cutset optimum is in case 3b and DF meets it.
    Achieved,
    /// Cutset value minus DF value.
    Gap(f64),
}

/// DF achieves the sum capacity when the cutset optimum lies in case 3b and
/// the two values agree within `tol`.
pub fn sum_capacity_certificate(df: &SolverReport, ob: &SolverReport, tol: f64) -> Result<Certificate, CaseError> {
    if df.family != BoundFamily::Df || ob.family != BoundFamily::Cutset {
        return Err(CaseError::Mismatch("expected a DF report and a cutset report".into()));
    }
    if df.k != ob.k || df.n != ob.n {
        return Err(CaseError::Mismatch(format!(
            "K={} n={} against K={} n={}",
            df.k, df.n, ob.k, ob.n
        )));
    }
    let gap = ob.sum_rate - df.sum_rate;
    if ob.label.kind == CaseKind::Active(ActiveCase::B) && gap.abs() <= tol {
        Ok(Certificate::Achieved)
    } else {
        Ok(Certificate::Gap(gap))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setfn::SetFunction;

    fn pair(f1: Vec<f64>, f2: Vec<f64>) -> RateRegionPair {
        RateRegionPair {
            family: BoundFamily::Df,
            f_relay: SetFunction::new(2, f1).unwrap(),
            f_dest: SetFunction::new(2, f2).unwrap(),
        }
    }

    #[test]
    fn conditions_follow_tie_set() {
        // g_∅ = 3, g_{1} = 1+2, g_{2} = 1+2, g_K = 1.5
        let p = pair(vec![1.0, 1.0, 1.5], vec![2.0, 2.0, 3.0]);
        let c = check_case_conditions(&p, CaseKind::Active(ActiveCase::A), 1e-6).unwrap();
        assert!(c.satisfied);
        assert_eq!(c.residuals[3], 0.0);
        let c = check_case_conditions(&p, CaseKind::Active(ActiveCase::C), 1e-6).unwrap();
        assert!(!c.satisfied);
    }

    #[test]
    fn zero_policy_is_degenerate() {
        let p = pair(vec![0.0; 3], vec![0.0; 3]);
        let c = check_case_conditions(&p, CaseKind::Boundary(1, ActiveCase::C), 1e-6).unwrap();
        assert!(c.satisfied && c.classification.degenerate);
    }

    #[test]
    fn corner_rates_telescope() {
        let p = pair(vec![1.0, 2.0, 2.5], vec![1.5, 1.0, 2.2]);
        let r = kuser_clustered_corner_rates(&p, 0b10, &[1], &[0]).unwrap();
        assert_eq!(r, vec![1.5, 2.0]);
        assert!(kuser_clustered_corner_rates(&p, 0b10, &[0], &[1]).is_err());
        assert!(kuser_clustered_corner_rates(&p, 0b11, &[0, 1], &[]).is_err());
    }

    #[test]
    fn certificate_needs_case_3b() {
        let base = SolverReport {
            k: 1,
            n: 1,
            family: BoundFamily::Df,
            policy: PowerPolicy::zeros(1, 1),
            label: CaseLabel {
                kind: CaseKind::Active(ActiveCase::B),
                family: BoundFamily::Df,
            },
            sum_rate: 1.0,
            duals: DualVariables::default(),
            conditions_checked: Vec::new(),
            iterations: IterationCounts::default(),
            degenerate: false,
            kkt_residual: 0.0,
            power_residual: 0.0,
            diagnostics: Vec::new(),
        };
        let mut ob = base.clone();
        ob.family = BoundFamily::Cutset;
        ob.label.family = BoundFamily::Cutset;
        assert_eq!(
            sum_capacity_certificate(&base, &ob, 1e-9).unwrap(),
            Certificate::Achieved
        );
        ob.label.kind = CaseKind::Active(ActiveCase::A);
        ob.sum_rate = 1.5;
        assert_eq!(
            sum_capacity_certificate(&base, &ob, 1e-9).unwrap(),
            Certificate::Gap(0.5)
        );
        assert!(sum_capacity_certificate(&ob, &base, 1e-9).is_err());
    }
}
