//! Brute-force references for tiny instances: exhaustive power grids for the
//! DF optimum and exhaustive split enumeration for the intersection sum-rate.
//!
//! Each source axis holds per-sample powers on multiples of
//! `Δ_k = n P̄_k / (steps - 1)` with the average constraint enforced by
//! rejection, so every source has `C(steps - 1 + n, n)` feasible columns. The
//! relay only enters the destination bound through its own link rate, which is
//! increasing in that rate, so its best grid column is found separately by an
//! exact dynamic program over the same grid.

use thiserror::Error;

use crate::fading::{Budget, FadingEnsemble};
use crate::ratebounds::{GainTable, PowerPolicy, RateError};
use crate::setfn::{full_set, SetFnError, SetFunction, Subset};

/// Largest number of joint source grid points an oracle call may visit.
pub const GRID_GUARD: f64 = 1e8;

/// Largest source count and sample count handled by the grid oracles.
pub const ORACLE_MAX_USERS: usize = 2;
pub const ORACLE_MAX_SAMPLES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid of {points:.3e} points exceeds the guard of {GRID_GUARD:e}")]
    GuardExceeded { points: f64 },
    #[error("grid needs at least 2 steps per axis, got {0}")]
    BadGrid(usize),
    #[error("oracle handles at most {ORACLE_MAX_USERS} sources and {ORACLE_MAX_SAMPLES} samples, got K={k}, n={n}")]
    TooLarge { k: usize, n: usize },
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    SetFn(#[from] SetFnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    /// Grid values per per-sample axis, from 0 to `n P̄` inclusive.
    pub steps_per_axis: usize,
}

impl GridSpec {
    /// The grid whose step is `fraction · P̄` on an `n`-sample ensemble.
    pub fn with_step_fraction(n: usize, fraction: f64) -> Self {
        GridSpec {
            steps_per_axis: (n as f64 / fraction).round() as usize + 1,
        }
    }

    fn units(&self) -> usize {
        self.steps_per_axis - 1
    }

    /// Number of per-sample columns with mean within the budget.
    pub fn columns_per_user(&self, n: usize) -> f64 {
        binomial(self.units() + n, n)
    }

    /// Joint source grid points for `k` sources.
    pub fn joint_points(&self, k: usize, n: usize) -> f64 {
        self.columns_per_user(n).powi(k as i32)
    }
}

fn binomial(a: usize, b: usize) -> f64 {
    (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub value: f64,
    pub policy: PowerPolicy,
    /// Joint source grid points visited.
    pub points: u64,
}

/// All `c ∈ ℕ^n` with `Σ c ≤ units`.
fn compositions(n: usize, units: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(n, left - c, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, units, &mut Vec::with_capacity(n), &mut out);
    out
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}

/// Best relay link rate over grid columns, by a knapsack recursion over
/// samples. Returns the rate and the column.
fn best_relay_column(gains: &[f64], theta_bar: f64, delta: f64, units: usize) -> (f64, Vec<f64>) {
    let n = gains.len();
    // best[i][u]: largest Σ_{j<i} rate using at most u units on samples < i.
    let mut best = vec![vec![0.0f64; units + 1]; n + 1];
    let mut pick = vec![vec![0usize; units + 1]; n + 1];
    for i in 0..n {
        for u in 0..=units {
            let mut top = f64::NEG_INFINITY;
            for c in 0..=u {
                let v = best[i][u - c] + theta_bar * log2_1p(gains[i] * c as f64 * delta / theta_bar);
                if v > top {
                    top = v;
                    pick[i + 1][u] = c;
                }
            }
            best[i + 1][u] = top;
        }
    }
    let mut column = vec![0.0; n];
    let mut u = units;
    for i in (0..n).rev() {
        let c = pick[i + 1][u];
        column[i] = c as f64 * delta;
        u -= c;
    }
    (best[n][units] / n as f64, column)
}

struct Prepared {
    k: usize,
    n: usize,
    theta: f64,
    gains: GainTable,
    /// `[user][column][sample]` powers.
    columns: Vec<Vec<Vec<f64>>>,
    relay_rate: f64,
    relay_column: Vec<f64>,
}

fn prepare(ens: &FadingEnsemble, budget: &Budget, grid: GridSpec) -> Result<Prepared, OracleError> {
    let k = ens.num_users();
    let n = ens.num_samples();
    if k == 0 || k > ORACLE_MAX_USERS || n > ORACLE_MAX_SAMPLES {
        return Err(OracleError::TooLarge { k, n });
    }
    if grid.steps_per_axis < 2 {
        return Err(OracleError::BadGrid(grid.steps_per_axis));
    }
    budget.validate().map_err(|e| OracleError::BadInput(e.to_string()))?;
    if budget.num_users() != k {
        return Err(OracleError::BadInput(format!(
            "budget has {} sources, ensemble {k}",
            budget.num_users()
        )));
    }
    let points = grid.joint_points(k, n);
    if points > GRID_GUARD {
        return Err(OracleError::GuardExceeded { points });
    }
    let units = grid.units();
    let comps = compositions(n, units);
    let columns = budget
        .sources()
        .iter()
        .map(|p| {
            let delta = n as f64 * p / units as f64;
            comps
                .iter()
                .map(|c| c.iter().map(|&u| u as f64 * delta).collect())
                .collect()
        })
        .collect();
    let gains = GainTable::new(ens);
    let delta_r = n as f64 * budget.relay() / units as f64;
    let (relay_rate, relay_column) = best_relay_column(&gains.relay_to_dest, budget.theta_bar(), delta_r, units);
    Ok(Prepared {
        k,
        n,
        theta: budget.theta,
        gains,
        columns,
        relay_rate,
        relay_column,
    })
}

/// Rate of a user set at one receiver, for the given per-user columns.
fn mac_rate(table: &[Vec<f64>], cols: &[&[f64]], users: Subset, theta: f64, n: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let mut rx = 0.0;
        for (u, col) in cols.iter().enumerate() {
            if users >> u & 1 == 1 {
                rx += table[u][i] * col[i];
            }
        }
        total += theta * log2_1p(rx / theta);
    }
    total / n as f64
}

/// Single-user rates at the relay and destination for every grid column,
/// `[user][column]`.
fn solo_rates(p: &Prepared) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut relay = Vec::with_capacity(p.k);
    let mut dest = Vec::with_capacity(p.k);
    for u in 0..p.k {
        let (r, d) = p.columns[u]
            .iter()
            .map(|col| {
                (
                    solo_rate(&p.gains.relay[u], col, p.theta, p.n),
                    solo_rate(&p.gains.dest[u], col, p.theta, p.n),
                )
            })
            .unzip();
        relay.push(r);
        dest.push(d);
    }
    (relay, dest)
}

fn solo_rate(gains: &[f64], col: &[f64], theta: f64, n: usize) -> f64 {
    let total: f64 = (0..n).map(|i| theta * log2_1p(gains[i] * col[i] / theta)).sum();
    total / n as f64
}

fn search(p: &Prepared, mut score: impl FnMut(&[f64], &[f64]) -> f64) -> GridOptimum {
    let counts: Vec<usize> = p.columns.iter().map(|c| c.len()).collect();
    let full = full_set(p.k);
    let (solo_relay, solo_dest) = solo_rates(p);
    let mut f1 = vec![0.0; full as usize + 1];
    let mut f2 = vec![0.0; full as usize + 1];
    let mut cols: Vec<&[f64]> = vec![&[]; p.k];
    let mut idx = vec![0usize; p.k];
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = idx.clone();
    let mut points = 0u64;
    loop {
        for (u, &c) in idx.iter().enumerate() {
            cols[u] = p.columns[u][c].as_slice();
        }
        for s in 1..=full {
            if s.count_ones() == 1 {
                let u = s.trailing_zeros() as usize;
                f1[s as usize] = solo_relay[u][idx[u]];
                f2[s as usize] = solo_dest[u][idx[u]] + p.relay_rate;
            } else {
                f1[s as usize] = mac_rate(&p.gains.relay, &cols, s, p.theta, p.n);
                f2[s as usize] = mac_rate(&p.gains.dest, &cols, s, p.theta, p.n) + p.relay_rate;
            }
        }
        let v = score(&f1, &f2);
        points += 1;
        if v > best {
            best = v;
            best_idx.copy_from_slice(&idx);
        }
        let mut u = 0;
        loop {
            if u == p.k {
                let mut columns: Vec<Vec<f64>> = best_idx
                    .iter()
                    .enumerate()
                    .map(|(u, &c)| p.columns[u][c].clone())
                    .collect();
                columns.push(p.relay_column.clone());
                return GridOptimum {
                    value: best,
                    policy: PowerPolicy::from_columns(columns).expect("grid columns are valid"),
                    points,
                };
            }
            idx[u] += 1;
            if idx[u] < counts[u] {
                break;
            }
            idx[u] = 0;
            u += 1;
        }
    }
}

/// Largest DF sum-rate `min_S f1(S) + f2(K\S)` over the power grid.
pub fn grid_best_sum_rate(ens: &FadingEnsemble, budget: &Budget, grid: GridSpec) -> Result<GridOptimum, OracleError> {
    let p = prepare(ens, budget, grid)?;
    let full = full_set(p.k) as usize;
    Ok(search(&p, |f1, f2| {
        (0..=full).map(|s| f1[s] + f2[full & !s]).fold(f64::INFINITY, f64::min)
    }))
}

/// Largest `Σ μ_k R_k` over the DF region on the power grid. At each point
/// the intersection `{R : R_S ≤ min(f1(S), f2(S))}` is a polymatroid with rank
/// `h(S) = min_{T⊆S} f1(T) + f2(S\T)`, and the optimum is its best greedy
/// vertex.
pub fn grid_best_weighted(
    ens: &FadingEnsemble,
    budget: &Budget,
    grid: GridSpec,
    mu: &[f64],
) -> Result<GridOptimum, OracleError> {
    let p = prepare(ens, budget, grid)?;
    if mu.len() != p.k || mu.iter().any(|m| !(*m >= 0.0)) {
        return Err(OracleError::BadInput("need one nonnegative weight per source".into()));
    }
    let k = p.k;
    let full = full_set(k);
    let perms = crate::setfn::permutations(k);
    Ok(search(&p, |f1, f2| {
        let h: Vec<f64> = (0..=full)
            .map(|s| {
                let mut best = f64::INFINITY;
                let mut t = s;
                loop {
                    best = best.min(f1[t as usize] + f2[(s & !t) as usize]);
                    if t == 0 {
                        break;
                    }
                    t = (t - 1) & s;
                }
                best
            })
            .collect();
        perms
            .iter()
            .map(|perm| {
                let mut done: Subset = 0;
                let mut v = 0.0;
                for &u in perm {
                    let next = done | 1 << u;
                    v += mu[u] * (h[next as usize] - h[done as usize]);
                    done = next;
                }
                v
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }))
}

/// Upper bound `L·Δ` on how far the grid optimum can fall below the
/// continuous optimum.
///
/// Flooring an optimal policy onto the grid keeps it feasible and lowers each
/// per-sample power by less than `Δ_k`. The derivative of `θ log2(1 + x/θ)` in
/// `x` is at most `1/ln 2`, so every split value drops by at most
/// `Σ_i (1/(n ln 2)) [Σ_{k∈S} g_rk Δ_k + Σ_{k∉S} g_dk Δ_k + g_rd Δ_r]`, and so
/// does their minimum.
pub fn grid_gap_bound(ens: &FadingEnsemble, budget: &Budget, grid: GridSpec) -> Result<f64, OracleError> {
    if grid.steps_per_axis < 2 {
        return Err(OracleError::BadGrid(grid.steps_per_axis));
    }
    let k = ens.num_users();
    let n = ens.num_samples();
    if budget.num_users() != k {
        return Err(OracleError::BadInput(format!(
            "budget has {} sources, ensemble {k}",
            budget.num_users()
        )));
    }
    let gains = GainTable::new(ens);
    let units = grid.units() as f64;
    let delta: Vec<f64> = budget.p_bar.iter().map(|p| n as f64 * p / units).collect();
    let scale = 1.0 / (n as f64 * std::f64::consts::LN_2);
    let relay: f64 = gains.relay_to_dest.iter().map(|g| g * delta[k]).sum::<f64>() * scale;
    let full = full_set(k);
    let worst = (0..=full)
        .map(|s| {
            (0..k)
                .map(|u| {
                    let table = if s >> u & 1 == 1 { &gains.relay } else { &gains.dest };
                    table[u].iter().sum::<f64>() * delta[u]
                })
                .sum::<f64>()
                * scale
        })
        .fold(0.0, f64::max);
    Ok(worst + relay)
}

/// `min_S f1(S) + f2(K\S)` by direct enumeration, with the first minimizing
/// bitmask.
pub fn exhaustive_split_min(f1: &SetFunction, f2: &SetFunction) -> Result<(f64, Subset), OracleError> {
    if f1.k() != f2.k() {
        return Err(OracleError::BadInput("set functions over different ground sets".into()));
    }
    let full = f1.full();
    let mut best = (f64::INFINITY, 0);
    for s in 0..=full {
        let v = f1.value(s) + f2.value(full & !s);
        if v < best.0 {
            best = (v, s);
        }
    }
    Ok(best)
}

/// Largest violation `Σ_{k∈S} r_k - f(S)` over all subsets, and of `-r_k`.
pub fn max_constraint_violation(f: &SetFunction, rates: &[f64]) -> f64 {
    let mut worst = rates.iter().map(|r| -r).fold(f64::NEG_INFINITY, f64::max);
    for s in 1..=f.full() {
        let sum: f64 = (0..f.k()).filter(|u| s >> u & 1 == 1).map(|u| rates[u]).sum();
        worst = worst.max(sum - f.value(s));
    }
    worst
}
