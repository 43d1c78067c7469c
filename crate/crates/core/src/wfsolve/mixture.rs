//! Block coordinate ascent for weighted sums of multiaccess rate terms.
//!
//! The objective is `Σ_t w_t · T_t(P)` where every term is a sample-averaged
//! multiaccess rate of a subset of users at the relay, at the destination, or
//! at both jointly (SIMO). With the other users' powers fixed, each term is
//! `const + θ log2(1 + γ_t x)` in the power `x` of one user (a rank-one update
//! for the SIMO term), so a block update is a per-sample scalar KKT equation
//!
//! ```text
//! Σ_t w_t γ_t / (1 + γ_t y) = λ,   y = x / θ,
//! ```
//!
//! solved in closed form for one or two terms and by Newton's method otherwise,
//! with the level `λ = ν ln 2` set so that the average power meets the budget.
//! A block update is kept only if it does not lower the objective beyond
//! rounding, which makes the objective trace nondecreasing.
//!
//! When a term couples several users, the sweeps start from the solution of
//! the dual problem in the water levels (see `dual`), so that they only
//! polish an allocation that is already close to optimal.

use std::f64::consts::LN_2;

use crate::ratebounds::{mac_subset_rates, simo_subset_rates, GainTable};
use crate::setfn::{members, Subset};

use super::SolverConfig;

mod dual;

/// Relative objective loss tolerated when accepting a block update.
const GAIN_SLACK: f64 = 1e-13;

/// Receiver of a rate term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermKind {
    /// Multiaccess rate at the relay.
    Relay,
    /// Multiaccess rate at the destination plus the relay link rate.
    Dest,
    /// Joint relay-and-destination rate.
    Simo,
}

/// `weight ×` rate of `users` at the receiver of `kind`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTerm {
    pub kind: TermKind,
    pub users: Subset,
    pub weight: f64,
}

/// A weighted sum of rate terms to maximize over the source powers.
#[derive(Debug, Clone)]
pub struct MixtureProblem<'a> {
    pub gains: &'a GainTable,
    pub theta: f64,
    /// Average power limits of the sources.
    pub p_bar: &'a [f64],
    /// Rate of the relay link, added once per unit weight of every `Dest` term.
    pub relay_rate: f64,
    pub terms: Vec<RateTerm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSolution {
    /// Source powers, `[user][sample]`.
    pub powers: Vec<Vec<f64>>,
    /// Water levels `λ_k = ν_k ln 2` of the sources.
    pub lambda: Vec<f64>,
    pub objective: f64,
    /// Objective before the first sweep and after every sweep.
    pub trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub power_residual: f64,
    /// Users whose every term has zero gain on every sample.
    pub zero_channel: Vec<bool>,
}

/// Merges terms with the same receiver and user set and drops zero weights.
pub fn merge_terms(terms: impl IntoIterator<Item = RateTerm>) -> Vec<RateTerm> {
    let mut out: Vec<RateTerm> = Vec::new();
    for t in terms {
        if t.users == 0 || !(t.weight > 0.0) {
            continue;
        }
        match out.iter_mut().find(|o| o.kind == t.kind && o.users == t.users) {
            Some(o) => o.weight += t.weight,
            None => out.push(t),
        }
    }
    out.sort_by(|a, b| (a.kind, a.users).cmp(&(b.kind, b.users)));
    out
}

/// Rates of every subset for each receiver kind, indexed by bitmask.
#[derive(Debug, Clone)]
pub struct TermTables {
    pub relay: Vec<f64>,
    pub dest: Vec<f64>,
    pub simo: Option<Vec<f64>>,
    pub relay_rate: f64,
}

impl TermTables {
    pub fn new(gains: &GainTable, powers: &[Vec<f64>], theta: f64, relay_rate: f64, with_simo: bool) -> Self {
        TermTables {
            relay: mac_subset_rates(&gains.relay, powers, theta),
            dest: mac_subset_rates(&gains.dest, powers, theta),
            simo: with_simo.then(|| simo_subset_rates(gains, powers, theta)),
            relay_rate,
        }
    }

    /// Unweighted value of a term.
    pub fn value(&self, kind: TermKind, users: Subset) -> f64 {
        if users == 0 {
            return 0.0;
        }
        match kind {
            TermKind::Relay => self.relay[users as usize],
            TermKind::Dest => self.dest[users as usize] + self.relay_rate,
            TermKind::Simo => self.simo.as_ref().expect("SIMO table not computed")[users as usize],
        }
    }
}

/// Sample-major per-term effective gains of one user's block.
struct Block {
    t: usize,
    w: Vec<f64>,
    gam: Vec<f64>,
}

impl Block {
    fn gains(&self, i: usize) -> &[f64] {
        &self.gam[i * self.t..(i + 1) * self.t]
    }

    /// `φ_i(y) = Σ w γ / (1 + γ y)`.
    fn marginal(&self, i: usize, y: f64) -> f64 {
        self.gains(i)
            .iter()
            .zip(&self.w)
            .map(|(g, w)| w * g / (1.0 + g * y))
            .sum()
    }

    fn solve_sample(&self, i: usize, lam: f64) -> f64 {
        sample_root(self.gains(i), &self.w, lam)
    }

    #[cfg(test)]
    fn newton(&self, i: usize, lam: f64) -> f64 {
        newton_root(self.gains(i), &self.w, lam)
    }

    fn average(&self, n: usize, lam: f64, out: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = self.solve_sample(i, lam);
            total += *o;
        }
        total / n as f64
    }

    /// Change of the block's share `Σ_t w_t avg θ log2(1 + γ_t y)` of the
    /// objective from `old` to `new`, summed per sample so that unchanged
    /// samples contribute exactly zero.
    fn gain(&self, new: &[f64], old: &[f64], theta: f64) -> f64 {
        let mut total = 0.0;
        for (i, (a, b)) in new.iter().zip(old).enumerate() {
            if a != b {
                total += self
                    .gains(i)
                    .iter()
                    .zip(&self.w)
                    .map(|(g, w)| w * (g * (a - b) / (1.0 + g * b)).ln_1p())
                    .sum::<f64>();
            }
        }
        theta * total / new.len() as f64 / LN_2
    }

    fn lambda_max(&self, n: usize) -> f64 {
        (0..n).map(|i| self.marginal(i, 0.0)).fold(0.0, f64::max)
    }

    /// Largest normalized KKT violation of `ys` at level `lam`.
    fn kkt_residual(&self, ys: &[f64], lam: f64) -> f64 {
        let scale = lam.max(1.0);
        ys.iter()
            .enumerate()
            .map(|(i, y)| {
                let f = self.marginal(i, *y);
                if *y > 0.0 {
                    (f - lam).abs() / scale
                } else {
                    (f - lam).max(0.0) / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Root of `φ(y) = Σ w γ / (1 + γ y) = λ` on `y ≥ 0`, or 0 when `φ(0) ≤ λ`.
fn sample_root(g: &[f64], w: &[f64], lam: f64) -> f64 {
    let mut phi0 = 0.0;
    let mut nz = 0;
    let (mut a, mut b) = ((0.0, 0.0), (0.0, 0.0));
    for (gk, wk) in g.iter().zip(w) {
        if *gk > 0.0 {
            phi0 += wk * gk;
            if nz == 0 {
                a = (*wk, *gk);
            } else if nz == 1 {
                b = (*wk, *gk);
            }
            nz += 1;
        }
    }
    if phi0 <= lam {
        return 0.0;
    }
    match nz {
        1 => (a.0 / lam - 1.0 / a.1).max(0.0),
        2 => {
            let (w1, g1) = a;
            let (w2, g2) = b;
            let qa = lam * g1 * g2;
            let qb = lam * (g1 + g2) - g1 * g2 * (w1 + w2);
            let qc = lam - w1 * g1 - w2 * g2;
            let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
            let y = if qb > 0.0 {
                -2.0 * qc / (qb + disc)
            } else if qa > 0.0 {
                (disc - qb) / (2.0 * qa)
            } else {
                f64::NAN
            };
            if y.is_finite() && y >= 0.0 {
                y
            } else {
                newton_root(g, w, lam)
            }
        }
        _ => newton_root(g, w, lam),
    }
}

/// Newton's method on the convex decreasing `φ(y) - λ`, started from the
/// largest single-term root, which lies left of the root, so the iterates
/// increase monotonically.
fn newton_root(g: &[f64], w: &[f64], lam: f64) -> f64 {
    let mut y = g
        .iter()
        .zip(w)
        .filter(|(gk, _)| **gk > 0.0)
        .map(|(gk, wk)| (wk / lam - 1.0 / gk).max(0.0))
        .fold(0.0, f64::max);
    for _ in 0..200 {
        let (mut f, mut df) = (-lam, 0.0);
        for (gk, wk) in g.iter().zip(w) {
            let den = 1.0 + gk * y;
            f += wk * gk / den;
            df -= wk * gk * gk / (den * den);
        }
        if f <= 0.0 || df == 0.0 {
            break;
        }
        let step = -f / df;
        y += step;
        if step <= 1e-15 * y.max(1e-300) {
            break;
        }
    }
    y
}

/// Finds the level `λ` with `avg(λ) = target` for a nonincreasing continuous
/// `avg`, given `avg(lam_max) = 0`. Works on `ln λ` with the Illinois variant of
/// regula falsi, falling back to bisection.
pub(crate) fn level_search(
    mut avg: impl FnMut(f64) -> f64,
    target: f64,
    lam_max: f64,
    warm: Option<f64>,
    tol: f64,
) -> f64 {
    let u_max = lam_max.ln();
    let mut f = |u: f64| if u >= u_max { -target } else { avg(u.exp()) - target };
    let (u0, mut step) = match warm {
        Some(l) if l > 0.0 && l < lam_max && l.is_finite() => (l.ln(), 0.05),
        _ => (u_max - 1.0, 1.0),
    };
    let f0 = f(u0);
    if f0.abs() <= tol {
        return u0.exp();
    }
    let (mut lo, mut flo, mut hi, mut fhi);
    if f0 > 0.0 {
        lo = u0;
        flo = f0;
        loop {
            let u = (lo + step).min(u_max);
            let fu = f(u);
            if fu.abs() <= tol {
                return u.exp();
            }
            if fu < 0.0 {
                hi = u;
                fhi = fu;
                break;
            }
            lo = u;
            flo = fu;
            step *= 2.0;
        }
    } else {
        hi = u0;
        fhi = f0;
        loop {
            let u = hi - step;
            let fu = f(u);
            if fu.abs() <= tol {
                return u.exp();
            }
            if fu > 0.0 {
                lo = u;
                flo = fu;
                break;
            }
            hi = u;
            fhi = fu;
            step *= 2.0;
        }
    }
    let mut side = 0i8;
    for iter in 0..300 {
        let mut u = (lo * fhi - hi * flo) / (fhi - flo);
        if !(u > lo && u < hi) || iter % 8 == 7 {
            u = 0.5 * (lo + hi);
        }
        let fu = f(u);
        if fu.abs() <= tol || hi - lo <= 1e-15 * (1.0 + u.abs()) {
            return u.exp();
        }
        if fu > 0.0 {
            lo = u;
            flo = fu;
            if side == 1 {
                fhi *= 0.5;
            }
            side = 1;
        } else {
            hi = u;
            fhi = fu;
            if side == -1 {
                flo *= 0.5;
            }
            side = -1;
        }
    }
    lo.exp()
}

impl<'a> MixtureProblem<'a> {
    fn k(&self) -> usize {
        self.gains.k
    }

    fn needs_simo(&self) -> bool {
        self.terms.iter().any(|t| t.kind == TermKind::Simo)
    }

    /// Objective value of the given source powers.
    pub fn objective(&self, powers: &[Vec<f64>]) -> f64 {
        let tables = TermTables::new(self.gains, powers, self.theta, self.relay_rate, self.needs_simo());
        self.terms
            .iter()
            .map(|t| t.weight * tables.value(t.kind, t.users))
            .sum()
    }

    /// Effective gain of `user` in `term` at sample `i`, treating the other
    /// members' powers `power(u)` as interference.
    fn effective_gain(&self, term: &RateTerm, user: usize, i: usize, power: impl Fn(usize) -> f64) -> f64 {
        let g = self.gains;
        let theta = self.theta;
        let others = members(term.users).filter(|&u| u != user);
        match term.kind {
            TermKind::Relay | TermKind::Dest => {
                let table = if term.kind == TermKind::Relay {
                    &g.relay
                } else {
                    &g.dest
                };
                let interference: f64 = others.map(|u| table[u][i] * power(u)).sum::<f64>() / theta;
                table[user][i] / (1.0 + interference)
            }
            TermKind::Simo => {
                let (mut a, mut d) = (0.0, 0.0);
                let mut b = num_complex::Complex64::new(0.0, 0.0);
                for u in others {
                    let p = power(u) / theta;
                    a += g.relay[u][i] * p;
                    d += g.dest[u][i] * p;
                    b += g.cross[u][i] * p;
                }
                let det = (1.0 + a) * (1.0 + d) - b.norm_sqr();
                let c = g.cross[user][i];
                let num = g.relay[user][i] * (1.0 + d) + g.dest[user][i] * (1.0 + a) - 2.0 * (c.conj() * b).re;
                (num / det).max(0.0)
            }
        }
    }

    fn block(&self, user: usize, powers: &[Vec<f64>]) -> Block {
        let n = self.gains.n;
        let mine: Vec<&RateTerm> = self.terms.iter().filter(|t| t.users >> user & 1 == 1).collect();
        let t = mine.len();
        let mut gam = vec![0.0; n * t];
        for (j, term) in mine.iter().enumerate() {
            for i in 0..n {
                gam[i * t + j] = self.effective_gain(term, user, i, |u| powers[u][i]);
            }
        }
        Block {
            t,
            w: mine.iter().map(|t| t.weight).collect(),
            gam,
        }
    }

    /// Maximizes the objective by cyclic exact block updates.
    pub fn solve(
        &self,
        warm_powers: Option<&[Vec<f64>]>,
        warm_lambda: Option<&[f64]>,
        cfg: &SolverConfig,
    ) -> MixtureSolution {
        let k = self.k();
        let n = self.gains.n;
        let theta = self.theta;
        let dual = self.dual_start(warm_lambda);
        let warm_lambda = dual.as_ref().map(|d| d.1.as_slice()).or(warm_lambda);
        let mut powers: Vec<Vec<f64>> = match (&dual, warm_powers) {
            (Some((p, _)), _) => p.clone(),
            (None, Some(p)) if p.len() == k && p.iter().all(|c| c.len() == n) => p.to_vec(),
            _ => vec![vec![0.0; n]; k],
        };
        // Warm starts may exceed a changed budget; rescale into the feasible set.
        for (u, col) in powers.iter_mut().enumerate() {
            let avg = col.iter().sum::<f64>() / n as f64;
            let cap = self.p_bar[u];
            if avg > cap * (1.0 + cfg.power_tol) {
                let s = if avg > 0.0 { cap / avg } else { 0.0 };
                col.iter_mut().for_each(|p| *p *= s);
            }
        }
        let mut lambda: Vec<f64> = match warm_lambda {
            Some(l) if l.len() == k => l.to_vec(),
            _ => vec![f64::NAN; k],
        };
        let mut zero_channel = vec![false; k];
        let mut objective = self.objective(&powers);
        let mut trace = vec![objective];
        let mut converged = false;
        let mut sweeps = 0;
        let mut ys = vec![0.0; n];
        let mut old_ys = vec![0.0; n];
        let mut start = powers.clone();

        while sweeps < cfg.max_iters {
            sweeps += 1;
            start.clone_from(&powers);
            let mut pre_residual: f64 = 0.0;
            for u in 0..k {
                let block = self.block(u, &powers);
                let lam_max = block.lambda_max(n);
                if block.t == 0 || lam_max <= 0.0 {
                    zero_channel[u] = block.t > 0 && self.p_bar[u] > 0.0;
                    powers[u].iter_mut().for_each(|p| *p = 0.0);
                    lambda[u] = 0.0;
                    continue;
                }
                zero_channel[u] = false;
                if self.p_bar[u] <= 0.0 {
                    powers[u].iter_mut().for_each(|p| *p = 0.0);
                    lambda[u] = lam_max;
                    continue;
                }
                for (o, p) in old_ys.iter_mut().zip(&powers[u]) {
                    *o = p / theta;
                }
                if lambda[u].is_finite() {
                    pre_residual = pre_residual.max(block.kkt_residual(&old_ys, lambda[u]));
                }
                let target = self.p_bar[u] / theta;
                let tol = 0.1 * cfg.power_tol * self.p_bar[u].max(1.0) / theta;
                let warm = lambda[u].is_finite().then_some(lambda[u]);
                let lam = level_search(|l| block.average(n, l, &mut ys), target, lam_max, warm, tol);
                let avg = block.average(n, lam, &mut ys);
                // Spend the budget exactly so the old and new allocations are
                // compared at equal power. The scaling is within the level
                // tolerance and moves every marginal by a relative amount of
                // the same order, far below kkt_tol.
                if avg > 0.0 {
                    let f = target / avg;
                    ys.iter_mut().for_each(|y| *y *= f);
                }
                let gain = block.gain(&ys, &old_ys, theta);
                // Near a fixed point the true gain is below the rounding of
                // the kept powers' budget, so rounding-level losses are
                // accepted. A rejected update differs from the kept powers
                // only within the level tolerance, so its level still prices
                // them.
                if gain >= -GAIN_SLACK * objective.abs().max(1.0) {
                    for (p, y) in powers[u].iter_mut().zip(&ys) {
                        *p = theta * y;
                    }
                }
                lambda[u] = lam;
            }
            let mut next = self.objective(&powers);
            if sweeps > 1 {
                if let Some((p, v)) = self.extrapolate(&start, &powers, next) {
                    powers = p;
                    next = v;
                }
            }
            trace.push(next);
            let change = next - objective;
            objective = next;
            if change.abs() <= cfg.iter_tol * objective.abs().max(1.0) && pre_residual <= cfg.kkt_tol {
                let (kkt, _) = self.residuals(&powers, &lambda, cfg);
                if kkt <= cfg.kkt_tol {
                    converged = true;
                    break;
                }
            }
        }
        let (kkt_residual, power_residual) = self.residuals(&powers, &lambda, cfg);
        MixtureSolution {
            powers,
            lambda,
            objective,
            trace,
            sweeps,
            converged,
            kkt_residual,
            power_residual,
            zero_channel,
        }
    }

    /// Steps further along the change made by the last sweep, doubling the
    /// step while the objective keeps rising. Cyclic updates advance slowly
    /// along directions that trade power between users sharing a sample;
    /// this covers many sweeps' worth of such progress at once.
    fn extrapolate(&self, start: &[Vec<f64>], powers: &[Vec<f64>], value: f64) -> Option<(Vec<Vec<f64>>, f64)> {
        let n = self.gains.n as f64;
        let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
        let mut beta = 1.0;
        for _ in 0..20 {
            let cand: Vec<Vec<f64>> = powers
                .iter()
                .zip(start)
                .zip(self.p_bar)
                .map(|((p, s), cap)| {
                    let mut col: Vec<f64> = p.iter().zip(s).map(|(a, b)| (a + beta * (a - b)).max(0.0)).collect();
                    let sum: f64 = col.iter().sum();
                    let want = cap * n;
                    let used: f64 = p.iter().sum();
                    // Keep each user's spend; rescale only after clipping.
                    let goal = used.min(want);
                    if sum > 0.0 && sum != goal {
                        let f = goal / sum;
                        col.iter_mut().for_each(|v| *v *= f);
                    }
                    col
                })
                .collect();
            let v = self.objective(&cand);
            let floor = best.as_ref().map_or(value, |b| b.1);
            if v > floor {
                best = Some((cand, v));
                beta *= 2.0;
            } else {
                break;
            }
        }
        best
    }

    /// Largest normalized KKT residual over users and samples, and largest
    /// relative budget mismatch among users with a positive level.
    pub fn residuals(&self, powers: &[Vec<f64>], lambda: &[f64], _cfg: &SolverConfig) -> (f64, f64) {
        let n = self.gains.n;
        let mut kkt: f64 = 0.0;
        let mut pow: f64 = 0.0;
        for u in 0..self.k() {
            let block = self.block(u, powers);
            if block.t == 0 || self.p_bar[u] <= 0.0 {
                continue;
            }
            let ys: Vec<f64> = powers[u].iter().map(|p| p / self.theta).collect();
            if lambda[u] > 0.0 {
                kkt = kkt.max(block.kkt_residual(&ys, lambda[u]));
                let avg = powers[u].iter().sum::<f64>() / n as f64;
                pow = pow.max((avg - self.p_bar[u]).abs() / self.p_bar[u].max(1.0));
            }
        }
        (kkt, pow)
    }
}
