//! Set functions on subsets of the user set `{1..K}`.
//!
//! Subsets are bitmasks: bit `k-1` stands for user `k`. A [`SetFunction`]
//! stores one value per subset with `f(∅) = 0` fixed. The module provides the
//! polymatroid check, vertex enumeration, the two-polymatroid sum-rate
//! intersection and the classification of which subset splits attain it.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

/// Largest supported number of users.
pub const MAX_USERS: usize = 6;

/// Largest number of users accepted by [`max_weighted_sum_on_intersection`].
pub const MAX_USERS_WEIGHTED: usize = 4;

/// A subset of `{1..K}` encoded as a bitmask.
pub type Subset = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetFnError {
    #[error("user count {0} outside 1..={max}", max = MAX_USERS)]
    BadUserCount(usize),
    #[error("expected {expected} subset values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("value for subset {subset} is {value}; values must be finite and nonnegative")]
    BadValue { subset: String, value: f64 },
    #[error("dimension mismatch: K={left} vs K={right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("K={k} too large for this operation (max {max})")]
    TooLarge { k: usize, max: usize },
    #[error("weight {index} is {value}; weights must be positive")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("weight vector has length {got}, expected {expected}")]
    WeightLength { expected: usize, got: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Bitmask of the full user set.
pub fn full_set(k: usize) -> Subset {
    ((1u64 << k) - 1) as Subset
}

/// Zero-based indices of the users in `s`, increasing.
pub fn members(s: Subset) -> impl Iterator<Item = usize> {
    (0..32).filter(move |&b| s >> b & 1 == 1)
}

/// Number of users in `s`.
pub fn cardinality(s: Subset) -> u32 {
    s.count_ones()
}

/// Human-readable form with one-based user labels, e.g. `{1,3}`.
pub fn format_subset(s: Subset) -> String {
    let inner: Vec<String> = members(s).map(|b| (b + 1).to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

/// Order used for deterministic tie-breaking: smaller cardinality first, then
/// lexicographic on the sorted member lists.
pub fn subset_order(a: Subset, b: Subset) -> Ordering {
    cardinality(a)
        .cmp(&cardinality(b))
        .then_with(|| members(a).cmp(members(b)))
}

/// A real-valued function on the subsets of `{1..K}` with `f(∅) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetFunction {
    k: usize,
    values: Vec<f64>,
}

impl SetFunction {
    /// Builds a set function from the values of the nonempty subsets, listed in
    /// bitmask order `1..2^K`.
    pub fn new(k: usize, nonempty_values: Vec<f64>) -> Result<Self, SetFnError> {
        if k == 0 || k > MAX_USERS {
            return Err(SetFnError::BadUserCount(k));
        }
        let expected = (1usize << k) - 1;
        if nonempty_values.len() != expected {
            return Err(SetFnError::LengthMismatch {
                expected,
                got: nonempty_values.len(),
            });
        }
        let mut values = Vec::with_capacity(expected + 1);
        values.push(0.0);
        values.extend(nonempty_values);
        let f = SetFunction { k, values };
        f.validate()?;
        Ok(f)
    }

    /// Builds a set function by evaluating `g` on every nonempty subset.
    pub fn from_fn(k: usize, mut g: impl FnMut(Subset) -> f64) -> Result<Self, SetFnError> {
        if k == 0 || k > MAX_USERS {
            return Err(SetFnError::BadUserCount(k));
        }
        let vals = (1..=full_set(k)).map(&mut g).collect();
        Self::new(k, vals)
    }

    fn validate(&self) -> Result<(), SetFnError> {
        for (s, &v) in self.values.iter().enumerate().skip(1) {
            if !v.is_finite() || v < 0.0 {
                return Err(SetFnError::BadValue {
                    subset: format_subset(s as Subset),
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn full(&self) -> Subset {
        full_set(self.k)
    }

    /// Value on `s`; `f(∅) = 0`.
    pub fn value(&self, s: Subset) -> f64 {
        self.values[s as usize]
    }

    /// All values indexed by bitmask, including the empty set at index 0.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Serializes as one `bitmask: value` line per nonempty subset.
    pub fn to_text(&self) -> String {
        let mut out = format!("k: {}\n", self.k);
        for s in 1..self.values.len() {
            out.push_str(&format!("{}: {}\n", s, self.values[s]));
        }
        out
    }

    /// Parses the format written by [`SetFunction::to_text`]. A leading `k:`
    /// line is optional when every subset is listed.
    pub fn from_text(text: &str) -> Result<Self, SetFnError> {
        let mut k: Option<usize> = None;
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: &str| SetFnError::Parse {
                line: idx + 1,
                msg: msg.to_string(),
            };
            let (key, val) = line.split_once(':').ok_or_else(|| parse_err("expected `key: value`"))?;
            let key = key.trim();
            let val = val.trim();
            if key == "k" {
                k = Some(val.parse().map_err(|_| parse_err("bad user count"))?);
                continue;
            }
            let mask: usize = key.parse().map_err(|_| parse_err("bad subset bitmask"))?;
            let v: f64 = val.parse().map_err(|_| parse_err("bad value"))?;
            entries.push((mask, v));
        }
        let k = match k {
            Some(k) => k,
            None => {
                let n = entries.len() + 1;
                if !n.is_power_of_two() {
                    return Err(SetFnError::Parse {
                        line: 0,
                        msg: "cannot infer K from the number of entries".into(),
                    });
                }
                n.trailing_zeros() as usize
            }
        };
        if k == 0 || k > MAX_USERS {
            return Err(SetFnError::BadUserCount(k));
        }
        let size = 1usize << k;
        let mut vals = vec![f64::NAN; size - 1];
        for (mask, v) in entries {
            if mask == 0 || mask >= size {
                return Err(SetFnError::Parse {
                    line: 0,
                    msg: format!("bitmask {mask} outside 1..{}", size - 1),
                });
            }
            vals[mask - 1] = v;
        }
        SetFunction::new(k, vals)
    }
}

/// One failed polymatroid inequality together with its witnessing sets.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `f(subset) > f(superset) + tol` with `subset ⊂ superset`.
    Monotonicity {
        subset: Subset,
        superset: Subset,
        excess: f64,
    },
    /// `f(S∪{k1}) + f(S∪{k2}) < f(S) + f(S∪{k1,k2}) - tol` (users zero-based).
    Submodularity {
        base: Subset,
        k1: usize,
        k2: usize,
        excess: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolymatroidCheck {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

/// Checks monotonicity over all nested pairs and submodularity over all
/// `(S, k1, k2)` triples.
pub fn check_polymatroid(f: &SetFunction, tol: f64) -> PolymatroidCheck {
    let full = f.full();
    let mut violations = Vec::new();
    for p in 0..=full {
        // proper subsets of p
        let mut s = p;
        loop {
            s = s.wrapping_sub(1) & p;
            if s == p {
                break;
            }
            let excess = f.value(s) - f.value(p);
            if excess > tol {
                violations.push(Violation::Monotonicity {
                    subset: s,
                    superset: p,
                    excess,
                });
            }
            if s == 0 {
                break;
            }
        }
    }
    for s in 0..=full {
        for k1 in 0..f.k() {
            for k2 in (k1 + 1)..f.k() {
                let (b1, b2) = (1 << k1, 1 << k2);
                if s & (b1 | b2) != 0 {
                    continue;
                }
                let lhs = f.value(s | b1) + f.value(s | b2);
                let rhs = f.value(s) + f.value(s | b1 | b2);
                if rhs - lhs > tol {
                    violations.push(Violation::Submodularity {
                        base: s,
                        k1,
                        k2,
                        excess: rhs - lhs,
                    });
                }
            }
        }
    }
    PolymatroidCheck {
        ok: violations.is_empty(),
        violations,
    }
}

/// The active sum-rate case met at the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActiveCase {
    /// Relay-side sum-rate `f1(K)` binds.
    A,
    /// Destination-side sum-rate `f2(K)` binds.
    B,
    /// Both sum-rates bind and are equal.
    C,
}

impl ActiveCase {
    pub fn tag(self) -> &'static str {
        match self {
            ActiveCase::A => "3a",
            ActiveCase::B => "3b",
            ActiveCase::C => "3c",
        }
    }
}

/// Which subset splits attain the minimum in the sum-rate intersection.
///
/// A split `S` stands for `f1(S) + f2(K\S)`. `Inactive(S)` means users in `S`
/// are limited at the first receiver and `K\S` at the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseKind {
    Inactive(Subset),
    Active(ActiveCase),
    Boundary(Subset, ActiveCase),
}

impl CaseKind {
    /// Subset splits whose values are tied at the minimum in this case.
    pub fn support(self, k: usize) -> Vec<Subset> {
        let full = full_set(k);
        match self {
            CaseKind::Inactive(s) => vec![s],
            CaseKind::Active(ActiveCase::A) => vec![full],
            CaseKind::Active(ActiveCase::B) => vec![0],
            CaseKind::Active(ActiveCase::C) => vec![full, 0],
            CaseKind::Boundary(s, ActiveCase::A) => vec![s, full],
            CaseKind::Boundary(s, ActiveCase::B) => vec![s, 0],
            CaseKind::Boundary(s, ActiveCase::C) => vec![s, full, 0],
        }
    }

    /// Case order used by the sequential search: inactive cases, then the
    /// boundary cases, then 3a, 3b, 3c.
    pub fn sweep_order(k: usize) -> Vec<CaseKind> {
        let full = full_set(k);
        let mut proper: Vec<Subset> = (1..full).collect();
        proper.sort_by(|a, b| subset_order(*a, *b));
        let mut out: Vec<CaseKind> = proper.iter().map(|&s| CaseKind::Inactive(s)).collect();
        for &s in &proper {
            for a in [ActiveCase::A, ActiveCase::B, ActiveCase::C] {
                out.push(CaseKind::Boundary(s, a));
            }
        }
        out.extend([
            CaseKind::Active(ActiveCase::A),
            CaseKind::Active(ActiveCase::B),
            CaseKind::Active(ActiveCase::C),
        ]);
        out
    }
}

impl fmt::Display for CaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseKind::Inactive(s) => write!(f, "inactive{}", format_subset(*s)),
            CaseKind::Active(a) => write!(f, "{}", a.tag()),
            CaseKind::Boundary(s, a) => write!(f, "boundary({};{})", format_subset(*s), a.tag()),
        }
    }
}

/// Result of classifying the split values `f1(S) + f2(K\S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitClassification {
    pub kind: CaseKind,
    /// Splits within the equality band of the minimum, in tie-break order.
    pub tied: Vec<Subset>,
    /// More than one proper split is tied, which the case taxonomy does not
    /// separate (e.g. the all-zero policy).
    pub degenerate: bool,
    pub min_value: f64,
    pub band: f64,
}

/// Values `f1(S) + f2(K\S)` indexed by the bitmask of `S`.
pub fn split_values(f1: &SetFunction, f2: &SetFunction) -> Result<Vec<f64>, SetFnError> {
    if f1.k() != f2.k() {
        return Err(SetFnError::DimensionMismatch {
            left: f1.k(),
            right: f2.k(),
        });
    }
    let full = f1.full();
    Ok((0..=full).map(|s| f1.value(s) + f2.value(full & !s)).collect())
}

/// Classifies split values. A split is tied when it lies within
/// `rel_tol * min + 1e-15` of the minimum; all other splits must exceed the
/// minimum by more than that band.
pub fn classify_splits(k: usize, values: &[f64], rel_tol: f64) -> SplitClassification {
    let full = full_set(k);
    let min_value = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let band = rel_tol * min_value.abs() + 1e-15;
    let mut tied: Vec<Subset> = (0..=full).filter(|&s| values[s as usize] <= min_value + band).collect();
    tied.sort_by(|a, b| subset_order(*a, *b));
    let inactive: Vec<Subset> = tied.iter().cloned().filter(|&s| s != 0 && s != full).collect();
    let relay_side = tied.contains(&full);
    let dest_side = tied.contains(&0);
    let active = match (relay_side, dest_side) {
        (true, true) => Some(ActiveCase::C),
        (true, false) => Some(ActiveCase::A),
        (false, true) => Some(ActiveCase::B),
        (false, false) => None,
    };
    let kind = match (inactive.first(), active) {
        (None, Some(a)) => CaseKind::Active(a),
        (Some(&s), None) => CaseKind::Inactive(s),
        (Some(&s), Some(a)) => CaseKind::Boundary(s, a),
        // The minimum is attained by some split, so `tied` is never empty.
        (None, None) => unreachable!("empty tie set"),
    };
    let degenerate = inactive.len() > 1 || (k == 1 && relay_side && dest_side && min_value == 0.0);
    SplitClassification {
        kind,
        tied,
        degenerate,
        min_value,
        band,
    }
}

/// Which K-user sum bounds equal the intersection value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveSides {
    pub first: bool,
    pub second: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionVerdict {
    pub max_sum: f64,
    pub argmin_subset: Subset,
    pub label: CaseKind,
    pub degenerate: bool,
    pub active_sum_sides: ActiveSides,
}

/// Relative band used by [`intersect_max_sum`] when labelling ties.
pub const INTERSECTION_TIE_TOL: f64 = 1e-9;

/// Maximum sum-rate over the intersection of the two polymatroids:
/// `min_S f1(S) + f2(K\S)` over all `S ⊆ K`.
pub fn intersect_max_sum(f1: &SetFunction, f2: &SetFunction) -> Result<IntersectionVerdict, SetFnError> {
    let values = split_values(f1, f2)?;
    let mut best = 0 as Subset;
    for s in 1..values.len() as Subset {
        let (v, b) = (values[s as usize], values[best as usize]);
        if v < b || (v == b && subset_order(s, best) == Ordering::Less) {
            best = s;
        }
    }
    let class = classify_splits(f1.k(), &values, INTERSECTION_TIE_TOL);
    let full = f1.full();
    Ok(IntersectionVerdict {
        max_sum: values[best as usize],
        argmin_subset: best,
        label: class.kind,
        degenerate: class.degenerate,
        active_sum_sides: ActiveSides {
            first: class.tied.contains(&full),
            second: class.tied.contains(&0),
        },
    })
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for u in 0..used.len() {
            if !used[u] {
                used[u] = true;
                prefix.push(u);
                rec(prefix, used, out);
                prefix.pop();
                used[u] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// Rates of the corner point for the order `perm` (zero-based users):
/// `R_{π(j)} = f(π(1..j)) - f(π(1..j-1))`.
pub fn vertex_for_permutation(f: &SetFunction, perm: &[usize]) -> Vec<f64> {
    let mut rates = vec![0.0; f.k()];
    let mut prefix: Subset = 0;
    for &u in perm {
        let next = prefix | (1 << u);
        rates[u] = f.value(next) - f.value(prefix);
        prefix = next;
    }
    rates
}

/// The `K!` corner points of the polymatroid, one per permutation in
/// lexicographic order.
pub fn enumerate_vertices(f: &SetFunction) -> Result<Vec<Vec<f64>>, SetFnError> {
    if f.k() > MAX_USERS {
        return Err(SetFnError::TooLarge {
            k: f.k(),
            max: MAX_USERS,
        });
    }
    Ok(permutations(f.k())
        .iter()
        .map(|p| vertex_for_permutation(f, p))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedOptimum {
    pub rates: Vec<f64>,
    pub value: f64,
}

/// Solves `A x = b` for a small dense square system; `None` when singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for c in col..n {
                    a[row][c] -= factor * a[col][c];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = ((row + 1)..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Maximizes `Σ μ_k R_k` over `{R ≥ 0 : R_S ≤ min(f1(S), f2(S)) ∀S}` by
/// enumerating the vertices of the polytope.
///
/// Among optimal vertices the one giving the most rate to the highest-weight
/// users is returned, i.e. users are decoded in increasing order of weight.
pub fn max_weighted_sum_on_intersection(
    f1: &SetFunction,
    f2: &SetFunction,
    mu: &[f64],
) -> Result<WeightedOptimum, SetFnError> {
    let k = f1.k();
    if f2.k() != k {
        return Err(SetFnError::DimensionMismatch { left: k, right: f2.k() });
    }
    if k > MAX_USERS_WEIGHTED {
        return Err(SetFnError::TooLarge {
            k,
            max: MAX_USERS_WEIGHTED,
        });
    }
    if mu.len() != k {
        return Err(SetFnError::WeightLength {
            expected: k,
            got: mu.len(),
        });
    }
    if let Some((index, &value)) = mu.iter().enumerate().find(|(_, &m)| !(m > 0.0) || !m.is_finite()) {
        return Err(SetFnError::NonPositiveWeight { index, value });
    }
    let full = f1.full();
    // Halfspaces a·R ≤ b: subset caps, then nonnegativity.
    let mut rows: Vec<(Vec<f64>, f64)> = (1..=full)
        .map(|s| {
            let a = (0..k).map(|u| if s >> u & 1 == 1 { 1.0 } else { 0.0 }).collect();
            (a, f1.value(s).min(f2.value(s)))
        })
        .collect();
    for u in 0..k {
        let mut a = vec![0.0; k];
        a[u] = -1.0;
        rows.push((a, 0.0));
    }
    let scale = rows.iter().map(|r| r.1.abs()).fold(1.0, f64::max);
    let feas_tol = 1e-12 * scale;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mu[b].total_cmp(&mu[a]).then(a.cmp(&b)));
    let better = |cand: &[f64], cv: f64, best: &[f64], bv: f64| -> bool {
        if cv > bv + feas_tol {
            return true;
        }
        if cv < bv - feas_tol {
            return false;
        }
        for &u in &order {
            if cand[u] > best[u] + feas_tol {
                return true;
            }
            if cand[u] < best[u] - feas_tol {
                return false;
            }
        }
        false
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let m = rows.len();
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        let a: Vec<Vec<f64>> = pick.iter().map(|&i| rows[i].0.clone()).collect();
        let b: Vec<f64> = pick.iter().map(|&i| rows[i].1).collect();
        if let Some(x) = solve_dense(a, b) {
            let feasible = rows.iter().all(|(a, b)| {
                let lhs: f64 = a.iter().zip(&x).map(|(p, q)| p * q).sum();
                lhs <= b + feas_tol
            });
            if feasible {
                let value: f64 = x.iter().zip(mu).map(|(r, w)| r * w).sum();
                let replace = match &best {
                    None => true,
                    Some((bx, bv)) => better(&x, value, bx, *bv),
                };
                if replace {
                    best = Some((x, value));
                }
            }
        }
        // next k-combination of 0..m
        let mut i = k;
        loop {
            if i == 0 {
                let (rates, value) = best.expect("the origin is always a vertex");
                let rates = rates
                    .into_iter()
                    .map(|r| if r.abs() < feas_tol { 0.0 } else { r })
                    .collect();
                return Ok(WeightedOptimum { rates, value });
            }
            i -= 1;
            if pick[i] < m - k + i {
                pick[i] += 1;
                for j in (i + 1)..k {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}
