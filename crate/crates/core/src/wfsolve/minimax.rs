//! Max-min over concave candidate functions through their weight duals.
//!
//! Each group holds concave functions `F_1..F_m` of the source powers; the goal
//! is `max_P Σ_g c_g min_j F_gj(P)`. For a support (a subset of each group)
//! this equals `min_w max_P Σ_g c_g Σ_j w_gj F_gj(P)` with `w_g` on the simplex
//! over the support. The dual `D(w)` is convex, so along each weight
//! coordinate the derivative `F_j - (weighted mean of the rest)` is
//! nondecreasing; the weights are found by nested one-dimensional root
//! searches around [`MixtureProblem::solve`].
//!
//! A support is solved only when its minimizer lies in the interior of the
//! weight simplex: if dropping one member gives a solution at which that
//! member's value is not below the group's tied value, the smaller support's
//! solution is already optimal for the larger one.

use std::collections::HashMap;
use std::rc::Rc;

use crate::ratebounds::GainTable;

use super::mixture::{merge_terms, MixtureProblem, MixtureSolution, RateTerm, TermKind, TermTables};
use super::SolverConfig;

/// A concave function given as a sum of rate terms; term weights are
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub terms: Vec<RateTerm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    pub scale: f64,
    pub members: Vec<Candidate>,
}

/// Optimum of the max-min restricted to one support.
#[derive(Debug, Clone)]
pub struct SupportSolution {
    pub support: Vec<u64>,
    /// Weights `[group][member]`; zero outside the support.
    pub weights: Vec<Vec<f64>>,
    pub solution: MixtureSolution,
    /// Candidate values `[group][member]` at the solution.
    pub values: Vec<Vec<f64>>,
    /// The weights lie strictly inside the simplex over the support.
    pub interior: bool,
    /// All weight searches met their tolerance.
    pub settled: bool,
}

impl SupportSolution {
    /// Weighted value of group `g` at the solution.
    pub fn tied_value(&self, g: usize) -> f64 {
        self.weights[g].iter().zip(&self.values[g]).map(|(w, v)| w * v).sum()
    }
}

struct Leaf {
    solution: MixtureSolution,
    values: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

fn support_members(mask: u64) -> Vec<usize> {
    (0..64).filter(|b| mask >> b & 1 == 1).collect()
}

fn tolerance(alpha_tol: f64, a: f64, b: f64) -> f64 {
    0.25 * alpha_tol * a.abs().max(b.abs()) + 1e-15
}

pub struct MinimaxSolver<'a> {
    gains: &'a GainTable,
    theta: f64,
    p_bar: Vec<f64>,
    relay_rate: f64,
    groups: Vec<CandidateGroup>,
    cfg: SolverConfig,
    with_simo: bool,
    memo: HashMap<Vec<u64>, Rc<SupportSolution>>,
    warm: Option<(Vec<Vec<f64>>, Vec<f64>)>,
    /// Number of inner mixture solves.
    pub leaf_solves: usize,
    /// Block-coordinate sweeps over all inner solves.
    pub sweeps: usize,
    /// Inner solves that hit the sweep cap.
    pub unconverged: usize,
}

impl<'a> MinimaxSolver<'a> {
    pub fn new(
        gains: &'a GainTable,
        theta: f64,
        p_bar: Vec<f64>,
        relay_rate: f64,
        groups: Vec<CandidateGroup>,
        cfg: SolverConfig,
    ) -> Self {
        let with_simo = groups
            .iter()
            .flat_map(|g| &g.members)
            .flat_map(|m| &m.terms)
            .any(|t| t.kind == TermKind::Simo);
        MinimaxSolver {
            gains,
            theta,
            p_bar,
            relay_rate,
            groups,
            cfg,
            with_simo,
            memo: HashMap::new(),
            warm: None,
            leaf_solves: 0,
            sweeps: 0,
            unconverged: 0,
        }
    }

    pub fn groups(&self) -> &[CandidateGroup] {
        &self.groups
    }

    fn leaf(&mut self, weights: Vec<Vec<f64>>) -> Leaf {
        let mut terms = Vec::new();
        for (g, group) in self.groups.iter().enumerate() {
            for (m, member) in group.members.iter().enumerate() {
                let w = weights[g][m] * group.scale;
                if w > 0.0 {
                    terms.extend(member.terms.iter().map(|t| RateTerm {
                        weight: t.weight * w,
                        ..*t
                    }));
                }
            }
        }
        let problem = MixtureProblem {
            gains: self.gains,
            theta: self.theta,
            p_bar: &self.p_bar,
            relay_rate: self.relay_rate,
            terms: merge_terms(terms),
        };
        let (wp, wl) = match &self.warm {
            Some((p, l)) => (Some(p.as_slice()), Some(l.as_slice())),
            None => (None, None),
        };
        let solution = problem.solve(wp, wl, &self.cfg);
        self.leaf_solves += 1;
        self.sweeps += solution.sweeps;
        if !solution.converged {
            self.unconverged += 1;
        }
        self.warm = Some((solution.powers.clone(), solution.lambda.clone()));
        let tables = TermTables::new(
            self.gains,
            &solution.powers,
            self.theta,
            self.relay_rate,
            self.with_simo,
        );
        let values = self
            .groups
            .iter()
            .map(|g| {
                g.members
                    .iter()
                    .map(|m| m.terms.iter().map(|t| t.weight * tables.value(t.kind, t.users)).sum())
                    .collect()
            })
            .collect();
        Leaf {
            solution,
            values,
            weights,
        }
    }

    fn weights_from(&self, lists: &[Vec<usize>], params: &[(usize, usize)], betas: &[f64]) -> Vec<Vec<f64>> {
        let mut w: Vec<Vec<f64>> = self.groups.iter().map(|g| vec![0.0; g.members.len()]).collect();
        for (g, list) in lists.iter().enumerate() {
            let mut mass = 1.0;
            for (pos, &m) in list.iter().enumerate() {
                if pos + 1 == list.len() {
                    w[g][m] = mass;
                } else {
                    let idx = params.iter().position(|&p| p == (g, pos)).expect("parameter exists");
                    w[g][m] = mass * betas[idx];
                    mass *= 1.0 - betas[idx];
                }
            }
        }
        w
    }

    /// `F_j` minus the normalized weighted mean of the later members of the
    /// group, or minus their minimum when `at_one` (member `j` holds all the
    /// group's remaining weight).
    fn residual(
        &self,
        lists: &[Vec<usize>],
        params: &[(usize, usize)],
        betas: &[f64],
        level: usize,
        values: &[Vec<f64>],
        at_one: bool,
    ) -> (f64, f64) {
        let (g, pos) = params[level];
        let list = &lists[g];
        let fj = values[g][list[pos]];
        if at_one {
            let rest = list[pos + 1..]
                .iter()
                .map(|&m| values[g][m])
                .fold(f64::INFINITY, f64::min);
            return (fj - rest, tolerance(self.cfg.alpha_tol, fj, rest));
        }
        let mut mass = 1.0;
        let mut mean = 0.0;
        for (off, &m) in list[pos + 1..].iter().enumerate() {
            let p = pos + 1 + off;
            if p + 1 == list.len() {
                mean += mass * values[g][m];
            } else {
                let idx = params.iter().position(|&q| q == (g, p)).expect("parameter exists");
                mean += mass * betas[idx] * values[g][m];
                mass *= 1.0 - betas[idx];
            }
        }
        (fj - mean, tolerance(self.cfg.alpha_tol, fj, mean))
    }

    /// Searches parameters `level..` with earlier ones fixed.
    fn nested(
        &mut self,
        lists: &[Vec<usize>],
        params: &[(usize, usize)],
        level: usize,
        betas: &mut Vec<f64>,
    ) -> (Leaf, bool) {
        if level == params.len() {
            let w = self.weights_from(lists, params, betas);
            return (self.leaf(w), true);
        }
        let (g, pos) = params[level];
        // An earlier parameter of this group already took all the weight.
        let prior_mass: f64 = (0..pos)
            .map(|p| 1.0 - betas[params.iter().position(|&q| q == (g, p)).unwrap()])
            .product();
        if prior_mass == 0.0 {
            betas[level] = 0.0;
            return self.nested(lists, params, level + 1, betas);
        }
        betas[level] = 0.0;
        let (leaf0, s0) = self.nested(lists, params, level + 1, betas);
        let (r0, t0) = self.residual(lists, params, betas, level, &leaf0.values, false);
        if r0 >= -t0 {
            return (leaf0, s0);
        }
        betas[level] = 1.0;
        let (leaf1, s1) = self.nested(lists, params, level + 1, betas);
        let (r1, t1) = self.residual(lists, params, betas, level, &leaf1.values, true);
        if r1 <= t1 {
            return (leaf1, s1);
        }
        self.search(lists, params, level, betas, (0.0, r0), (1.0, r1))
    }

    /// Illinois iteration on parameter `level` given a sign-changing bracket.
    fn search(
        &mut self,
        lists: &[Vec<usize>],
        params: &[(usize, usize)],
        level: usize,
        betas: &mut Vec<f64>,
        lo: (f64, f64),
        hi: (f64, f64),
    ) -> (Leaf, bool) {
        let (mut lo, mut rlo) = lo;
        let (mut hi, mut rhi) = hi;
        let mut side = 0i8;
        let mut last: Option<(Leaf, bool)> = None;
        for it in 0..80 {
            let mut b = (lo * rhi - hi * rlo) / (rhi - rlo);
            if !(b > lo && b < hi) || it % 6 == 5 {
                b = 0.5 * (lo + hi);
            }
            betas[level] = b;
            let (leaf, settled) = self.nested(lists, params, level + 1, betas);
            let (r, tol) = self.residual(lists, params, betas, level, &leaf.values, false);
            if r.abs() <= tol {
                return (leaf, settled);
            }
            last = Some((leaf, false));
            if hi - lo <= 1e-13 {
                break;
            }
            if r < 0.0 {
                lo = b;
                rlo = r;
                if side == -1 {
                    rhi *= 0.5;
                }
                side = -1;
            } else {
                hi = b;
                rhi = r;
                if side == 1 {
                    rlo *= 0.5;
                }
                side = 1;
            }
        }
        last.expect("at least one iteration")
    }

    /// Solves the max-min restricted to `support` (one bitmask per group).
    pub fn solve_support(&mut self, support: &[u64]) -> Rc<SupportSolution> {
        assert_eq!(support.len(), self.groups.len(), "one support mask per group");
        if let Some(s) = self.memo.get(support) {
            return s.clone();
        }
        let lists: Vec<Vec<usize>> = support.iter().map(|&m| support_members(m)).collect();
        assert!(lists.iter().all(|l| !l.is_empty()), "empty support");
        let params: Vec<(usize, usize)> = lists
            .iter()
            .enumerate()
            .flat_map(|(g, l)| (0..l.len().saturating_sub(1)).map(move |p| (g, p)))
            .collect();

        let result = if params.is_empty() {
            let w = self.weights_from(&lists, &params, &[]);
            let leaf = self.leaf(w);
            SupportSolution {
                support: support.to_vec(),
                weights: leaf.weights,
                solution: leaf.solution,
                values: leaf.values,
                interior: true,
                settled: true,
            }
        } else {
            match self.optimal_facet(support, &lists) {
                Some(f) => f,
                None => self.interior(support, &lists, &params),
            }
        };
        let rc = Rc::new(result);
        self.memo.insert(support.to_vec(), rc.clone());
        rc
    }

    /// A facet whose solution is optimal for the whole support, if any.
    fn optimal_facet(&mut self, support: &[u64], lists: &[Vec<usize>]) -> Option<SupportSolution> {
        for (g, list) in lists.iter().enumerate() {
            if list.len() < 2 {
                continue;
            }
            for &m in list {
                let mut sub = support.to_vec();
                sub[g] &= !(1u64 << m);
                let facet = self.solve_support(&sub);
                let tied = facet.tied_value(g);
                let fm = facet.values[g][m];
                if fm >= tied - tolerance(self.cfg.alpha_tol, fm, tied) {
                    let mut s = (*facet).clone();
                    s.support = support.to_vec();
                    s.interior = false;
                    return Some(s);
                }
            }
        }
        None
    }

    fn interior(&mut self, support: &[u64], lists: &[Vec<usize>], params: &[(usize, usize)]) -> SupportSolution {
        let (g0, _) = params[0];
        let m0 = lists[g0][0];
        let mut betas = vec![0.5; params.len()];

        // β = 0 drops m0; β = 1 keeps only m0 in its group.
        let mut without = support.to_vec();
        without[g0] &= !(1u64 << m0);
        let f0 = self.solve_support(&without);
        let r0 = f0.values[g0][m0] - f0.tied_value(g0);
        let mut only = support.to_vec();
        only[g0] = 1u64 << m0;
        let f1 = self.solve_support(&only);
        let rest = lists[g0][1..]
            .iter()
            .map(|&m| f1.values[g0][m])
            .fold(f64::INFINITY, f64::min);
        let r1 = f1.values[g0][m0] - rest;
        if r1 <= tolerance(self.cfg.alpha_tol, f1.values[g0][m0], rest) {
            let mut s = (*f1).clone();
            s.support = support.to_vec();
            s.interior = false;
            return s;
        }
        self.warm = Some((f0.solution.powers.clone(), f0.solution.lambda.clone()));
        let (leaf, settled) = self.search(lists, params, 0, &mut betas, (0.0, r0), (1.0, r1));
        SupportSolution {
            support: support.to_vec(),
            weights: leaf.weights,
            solution: leaf.solution,
            values: leaf.values,
            interior: true,
            settled,
        }
    }
}
