//! Dual Newton starting point for [`MixtureProblem::solve`].
//!
//! With the water levels fixed, the Lagrangian separates over samples into
//! small concave problems in the users' powers, solved here by projected
//! Newton steps with a cyclic exact-update fallback. The levels are then set
//! by Newton's method on the dual function, whose Hessian is the sample
//! average of the inverse per-sample Hessians restricted to the users with
//! positive power. The number of level iterations does not grow with the
//! ensemble size, while cyclic block updates slow down as more samples are
//! shared by competing users.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{level_search, sample_root, MixtureProblem, TermKind};
use crate::setfn::members;

const SAMPLE_ITERS: usize = 60;
const DUAL_ITERS: usize = 60;

/// Scratch buffers for one sample's solve. Matrices are row-major.
struct Work {
    k: usize,
    grad: Vec<f64>,
    hess: Vec<f64>,
    solved: Vec<[Complex64; 2]>,
    cand: Vec<f64>,
    free: Vec<usize>,
    neg: Vec<f64>,
    rhs: Vec<f64>,
    dir: Vec<f64>,
    gam: Vec<f64>,
    w: Vec<f64>,
}

impl Work {
    fn new(k: usize) -> Self {
        Work {
            k,
            grad: vec![0.0; k],
            hess: vec![0.0; k * k],
            solved: vec![[Complex64::new(0.0, 0.0); 2]; k],
            cand: vec![0.0; k],
            free: Vec::with_capacity(k),
            neg: Vec::with_capacity(k * k),
            rhs: Vec::with_capacity(k),
            dir: vec![0.0; k],
            gam: Vec::new(),
            w: Vec::new(),
        }
    }

    /// Fills `neg` with minus the Hessian restricted to the free users, with
    /// a small ridge on the diagonal.
    fn restrict(&mut self) {
        let m = self.free.len();
        self.neg.clear();
        for &u in &self.free {
            for &v in &self.free {
                self.neg.push(-self.hess[u * self.k + v]);
            }
        }
        let scale = (0..m).map(|j| self.neg[j * m + j]).fold(0.0, f64::max);
        for j in 0..m {
            self.neg[j * m + j] += 1e-12 * scale + 1e-300;
        }
    }
}

/// Dual value, average powers and dual Hessian at one set of levels.
struct DualPoint {
    value: f64,
    avg: Vec<f64>,
    hess: DMatrix<f64>,
}

/// Solves `a x = b` for a symmetric positive definite `a` of size `m`, in
/// closed form for one or two unknowns, which covers most samples.
fn spd_solve(a: &[f64], m: usize, b: &[f64], x: &mut [f64]) -> bool {
    match m {
        1 => {
            x[0] = b[0] / a[0];
            a[0] > 0.0
        }
        2 => {
            let det = a[0] * a[3] - a[1] * a[2];
            x[0] = (a[3] * b[0] - a[1] * b[1]) / det;
            x[1] = (a[0] * b[1] - a[2] * b[0]) / det;
            det > 0.0 && a[0] > 0.0
        }
        _ => match DMatrix::from_row_slice(m, m, a).cholesky() {
            Some(c) => {
                let sol = c.solve(&nalgebra::DVector::from_column_slice(b));
                x[..m].copy_from_slice(sol.as_slice());
                true
            }
            None => false,
        },
    }
}

/// BFGS update of the curvature model `b` with step `s` and gradient
/// change `g`, skipped when the pair carries no positive curvature.
fn bfgs_update(b: &mut DMatrix<f64>, s: &[f64], g: &[f64]) {
    let s = nalgebra::DVector::from_column_slice(s);
    let g = nalgebra::DVector::from_column_slice(g);
    let sg = s.dot(&g);
    if !(sg > 1e-12 * s.norm() * g.norm()) {
        return;
    }
    let bs = &*b * &s;
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return;
    }
    *b += &g * g.transpose() / sg - &bs * bs.transpose() / sbs;
}

/// Inverse of a symmetric positive definite `a` of size `m`, row-major.
fn spd_inverse(a: &[f64], m: usize, inv: &mut [f64]) -> bool {
    match m {
        1 => {
            inv[0] = 1.0 / a[0];
            a[0] > 0.0
        }
        2 => {
            let det = a[0] * a[3] - a[1] * a[2];
            inv[0] = a[3] / det;
            inv[1] = -a[1] / det;
            inv[2] = -a[2] / det;
            inv[3] = a[0] / det;
            det > 0.0 && a[0] > 0.0
        }
        _ => match DMatrix::from_row_slice(m, m, a).cholesky() {
            Some(c) => {
                // The inverse is symmetric, so column-major equals row-major.
                inv[..m * m].copy_from_slice(c.inverse().as_slice());
                true
            }
            None => false,
        },
    }
}

impl<'a> MixtureProblem<'a> {
    fn table(&self, kind: TermKind) -> &[Vec<f64>] {
        if kind == TermKind::Relay {
            &self.gains.relay
        } else {
            &self.gains.dest
        }
    }

    fn sample_lagrangian(&self, i: usize, lam: &[f64], y: &[f64]) -> f64 {
        let g = self.gains;
        let mut total = 0.0;
        for term in &self.terms {
            let arg = match term.kind {
                TermKind::Relay | TermKind::Dest => {
                    let table = self.table(term.kind);
                    members(term.users).map(|u| table[u][i] * y[u]).sum::<f64>()
                }
                TermKind::Simo => {
                    let (mut a, mut d) = (0.0, 0.0);
                    let mut b = num_complex::Complex64::new(0.0, 0.0);
                    for u in members(term.users) {
                        a += g.relay[u][i] * y[u];
                        d += g.dest[u][i] * y[u];
                        b += g.cross[u][i] * y[u];
                    }
                    a + d + (a * d - b.norm_sqr()).max(0.0)
                }
            };
            total += term.weight * arg.ln_1p();
        }
        total - lam.iter().zip(y).map(|(l, v)| l * v).sum::<f64>()
    }

    /// Gradient and Hessian of the weighted log terms of sample `i` in `y`.
    fn sample_derivatives(&self, i: usize, y: &[f64], work: &mut Work) {
        let k = work.k;
        let (grad, hess) = (&mut work.grad, &mut work.hess);
        grad.fill(0.0);
        hess.fill(0.0);
        for term in &self.terms {
            let w = term.weight;
            match term.kind {
                TermKind::Relay | TermKind::Dest => {
                    let table = self.table(term.kind);
                    let s = 1.0 + members(term.users).map(|u| table[u][i] * y[u]).sum::<f64>();
                    for u in members(term.users) {
                        let au = table[u][i] / s;
                        grad[u] += w * au;
                        for v in members(term.users) {
                            hess[u * k + v] -= w * au * table[v][i] / s;
                        }
                    }
                }
                TermKind::Simo => {
                    // With M = I + Σ y_u h_u h_uᴴ the derivatives are
                    // q_uu and -|q_uv|², q_uv = h_uᴴ M⁻¹ h_v.
                    let g = self.gains;
                    let (mut a, mut d) = (0.0, 0.0);
                    let mut b = Complex64::new(0.0, 0.0);
                    for u in members(term.users) {
                        a += g.relay[u][i] * y[u];
                        d += g.dest[u][i] * y[u];
                        b += g.cross[u][i] * y[u];
                    }
                    let det = (1.0 + a) * (1.0 + d) - b.norm_sqr();
                    let solved = &mut work.solved;
                    for v in members(term.users) {
                        let (r, s) = (g.relay_link[v][i], g.dest_link[v][i]);
                        solved[v] = [((1.0 + d) * r - b * s) / det, ((1.0 + a) * s - b.conj() * r) / det];
                    }
                    for u in members(term.users) {
                        let (r, s) = (g.relay_link[u][i].conj(), g.dest_link[u][i].conj());
                        for v in members(term.users) {
                            let q = r * solved[v][0] + s * solved[v][1];
                            if u == v {
                                grad[u] += w * q.re;
                            }
                            hess[u * k + v] -= w * q.norm_sqr();
                        }
                    }
                }
            }
        }
        for u in 0..k {
            for v in 0..u {
                let m = 0.5 * (hess[u * k + v] + hess[v * k + u]);
                hess[u * k + v] = m;
                hess[v * k + u] = m;
            }
        }
    }

    /// Exact update of user `u` on sample `i` with the others fixed.
    fn cyclic_user(&self, i: usize, lam: &[f64], u: usize, y: &mut [f64], gam: &mut Vec<f64>, w: &mut Vec<f64>) {
        gam.clear();
        w.clear();
        for term in self.terms.iter().filter(|t| t.users >> u & 1 == 1) {
            gam.push(self.effective_gain(term, u, i, |v| self.theta * y[v]));
            w.push(term.weight);
        }
        y[u] = sample_root(gam, w, lam[u]);
    }

    /// Maximizes the Lagrangian of sample `i` over `y ≥ 0` at levels `lam`,
    /// starting from `y`, and returns the maximum.
    fn solve_sample_joint(&self, i: usize, lam: &[f64], active: &[bool], y: &mut [f64], work: &mut Work) -> f64 {
        let mut value = self.sample_lagrangian(i, lam, y);
        for _ in 0..SAMPLE_ITERS {
            self.sample_derivatives(i, y, work);
            work.free.clear();
            work.rhs.clear();
            let mut resid: f64 = 0.0;
            for u in (0..y.len()).filter(|&u| active[u]) {
                let r = work.grad[u] - lam[u];
                let viol = if y[u] > 0.0 { r.abs() } else { r.max(0.0) };
                resid = resid.max(viol / lam[u].max(1.0));
                if y[u] > 0.0 || r > 0.0 {
                    work.free.push(u);
                    work.rhs.push(r);
                }
            }
            if resid <= 1e-13 || work.free.is_empty() {
                break;
            }
            let mut moved = false;
            if work.free.len() == 1 {
                // The exact single-user root.
                let u = work.free[0];
                work.cand.copy_from_slice(y);
                self.cyclic_user(i, lam, u, &mut work.cand, &mut work.gam, &mut work.w);
                let v = self.sample_lagrangian(i, lam, &work.cand);
                if v >= value - 1e-14 * (1.0 + value.abs()) {
                    y.copy_from_slice(&work.cand);
                    value = v;
                    moved = true;
                }
            } else {
                work.restrict();
                let m = work.free.len();
                if spd_solve(&work.neg, m, &work.rhs, &mut work.dir) {
                    // Near the maximizer the gain of a full step is below the
                    // resolution of the value, so allow rounding-level losses.
                    let slack = 1e-14 * (1.0 + value.abs());
                    let mut t = 1.0;
                    for _ in 0..40 {
                        work.cand.copy_from_slice(y);
                        for (a, &u) in work.free.iter().enumerate() {
                            work.cand[u] = (y[u] + t * work.dir[a]).max(0.0);
                        }
                        let v = self.sample_lagrangian(i, lam, &work.cand);
                        if v >= value - slack {
                            y.copy_from_slice(&work.cand);
                            value = v;
                            moved = true;
                            break;
                        }
                        t *= 0.5;
                    }
                }
            }
            if !moved {
                let before = value;
                for u in (0..y.len()).filter(|&u| active[u]) {
                    self.cyclic_user(i, lam, u, y, &mut work.gam, &mut work.w);
                }
                value = self.sample_lagrangian(i, lam, y);
                if value <= before {
                    break;
                }
            }
        }
        value
    }

    /// Solves every sample at levels `lam`, warm-started from `y`
    /// (sample-major), and collects the dual value, average powers and the
    /// dual Hessian.
    fn dual_point(&self, lam: &[f64], target: &[f64], active: &[bool], y: &mut [f64], work: &mut Work) -> DualPoint {
        let k = lam.len();
        let n = self.gains.n;
        let mut value = 0.0;
        let mut avg = vec![0.0; k];
        let mut hess = DMatrix::zeros(k, k);
        let mut inv = vec![0.0; k * k];
        for (i, yi) in y.chunks_mut(k).enumerate() {
            value += self.solve_sample_joint(i, lam, active, yi, work);
            for (a, v) in avg.iter_mut().zip(yi.iter()) {
                *a += v;
            }
            work.free.clear();
            work.free.extend((0..k).filter(|&u| active[u] && yi[u] > 0.0));
            if work.free.is_empty() {
                continue;
            }
            self.sample_derivatives(i, yi, work);
            work.restrict();
            let m = work.free.len();
            if spd_inverse(&work.neg, m, &mut inv) {
                for (a, &u) in work.free.iter().enumerate() {
                    for (b, &v) in work.free.iter().enumerate() {
                        hess[(u, v)] += inv[a * m + b];
                    }
                }
            }
        }
        let n = n as f64;
        avg.iter_mut().for_each(|a| *a /= n);
        hess /= n;
        value = value / n + lam.iter().zip(target).map(|(l, t)| l * t).sum::<f64>();
        DualPoint { value, avg, hess }
    }

    /// Starting powers and levels from Newton's method on the dual, or `None`
    /// when no term couples two active users, in which case block updates
    /// are already exact.
    pub(super) fn dual_start(&self, warm_lambda: Option<&[f64]>) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        let k = self.k();
        let n = self.gains.n;
        let zeros = vec![vec![0.0; n]; k];
        let mut active = vec![false; k];
        let mut lambda = vec![0.0; k];
        let target: Vec<f64> = self.p_bar.iter().map(|p| p / self.theta).collect();
        let mut ys = vec![0.0; n];
        for u in 0..k {
            let block = self.block(u, &zeros);
            let lam_max = block.lambda_max(n);
            active[u] = block.t > 0 && lam_max > 0.0 && self.p_bar[u] > 0.0;
            if !active[u] {
                continue;
            }
            lambda[u] = match warm_lambda {
                Some(l) if l.len() == k && l[u] > 0.0 && l[u] < lam_max => l[u],
                _ => level_search(
                    |l| block.average(n, l, &mut ys),
                    target[u],
                    lam_max,
                    None,
                    1e-6 * target[u].max(1.0),
                ),
            };
        }
        let coupled = self
            .terms
            .iter()
            .any(|t| members(t.users).filter(|&u| active[u]).count() >= 2);
        if !coupled {
            return None;
        }
        let idx: Vec<usize> = (0..k).filter(|&u| active[u]).collect();
        let mismatch = |avg: &[f64]| {
            idx.iter()
                .map(|&u| (avg[u] - target[u]).abs() / target[u].max(1.0))
                .fold(0.0, f64::max)
        };
        let mut work = Work::new(k);
        let mut y = vec![0.0; n * k];
        let mut point = self.dual_point(&lambda, &target, &active, &mut y, &mut work);
        let mut trial_y = y.clone();
        let m = idx.len();
        // Curvature model: the analytic dual Hessian while Newton steps are
        // taken in full, then BFGS updates from it. The analytic Hessian
        // misses the curvature of samples switching between users, which
        // dominates when one rate term couples everyone.
        let mut model: Option<DMatrix<f64>> = None;
        let mut prev_gap = f64::INFINITY;
        let mut stalls = 0;
        for _ in 0..DUAL_ITERS {
            let gap = mismatch(&point.avg);
            // Block updates finish from here in a sweep or two; near this
            // level the mismatch is dominated by the per-sample solves.
            if gap <= 1e-9 {
                break;
            }
            stalls = if gap > 0.5 * prev_gap { stalls + 1 } else { 0 };
            if stalls >= 4 {
                break;
            }
            prev_gap = gap;
            let mut h = match &model {
                Some(b) => b.clone(),
                None => DMatrix::from_fn(m, m, |a, b| point.hess[(idx[a], idx[b])]),
            };
            let scale = (0..m).map(|j| h[(j, j)]).fold(0.0, f64::max);
            for j in 0..m {
                h[(j, j)] += 1e-12 * scale + 1e-300;
            }
            let rhs: Vec<f64> = idx.iter().map(|&u| point.avg[u] - target[u]).collect();
            let mut step = vec![0.0; m];
            if !spd_solve(h.as_slice(), m, &rhs, &mut step) {
                break;
            }
            // Keep every level within a factor of ten of the current one.
            let mut t: f64 = 1.0;
            for (a, &u) in idx.iter().enumerate() {
                let ratio = (lambda[u] + step[a]) / lambda[u];
                if ratio < 0.1 {
                    t = t.min(0.9 * lambda[u] / -step[a]);
                } else if ratio > 10.0 {
                    t = t.min(9.0 * lambda[u] / step[a]);
                }
            }
            // Armijo decrease of the convex dual, whose gradient is
            // `target - avg`.
            let slope: f64 = idx
                .iter()
                .enumerate()
                .map(|(a, &u)| (target[u] - point.avg[u]) * step[a])
                .sum();
            let slack = 1e-15 * (1.0 + point.value.abs());
            let mut accepted = false;
            let mut halvings = 0;
            for _ in 0..12 {
                let mut trial = lambda.clone();
                for (a, &u) in idx.iter().enumerate() {
                    trial[u] += t * step[a];
                }
                trial_y.copy_from_slice(&y);
                let next = self.dual_point(&trial, &target, &active, &mut trial_y, &mut work);
                if next.value <= point.value + 1e-4 * t * slope + slack {
                    let s: Vec<f64> = step.iter().map(|d| t * d).collect();
                    let dg: Vec<f64> = idx.iter().map(|&u| point.avg[u] - next.avg[u]).collect();
                    if model.is_none() && (halvings > 0 || mismatch(&next.avg) > 0.25 * gap) {
                        model = Some(DMatrix::from_fn(m, m, |a, b| point.hess[(idx[a], idx[b])]));
                    }
                    if let Some(b) = model.as_mut() {
                        bfgs_update(b, &s, &dg);
                    }
                    lambda = trial;
                    std::mem::swap(&mut y, &mut trial_y);
                    point = next;
                    accepted = true;
                    break;
                }
                t *= 0.5;
                halvings += 1;
            }
            if !accepted {
                break;
            }
        }
        let powers = (0..k)
            .map(|u| (0..n).map(|i| self.theta * y[i * k + u]).collect())
            .collect();
        Some((powers, lambda))
    }
}
