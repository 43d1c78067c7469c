//! Rate bounds for a fixed power policy: the decode-and-forward polymatroids
//! at the relay and the destination, and the cutset outer-bound polymatroids.
//!
//! With `C(x) = log2(1+x)` and sample averages over the ensemble:
//!
//! * `f_relay(S) = avg θ C(Σ_{k∈S} |H_rk|² P_k / θ)`
//! * `f_dest(S)  = avg [θ C(Σ_{k∈S} |H_dk|² P_k / θ) + θ̄ C(|H_dr|² P_r / θ̄)]` for `S ≠ ∅`
//! * `f_simo(S)  = avg θ log2 det(I + Σ_{k∈S} g_k g_kᴴ P_k / θ)`, `g_k = (H_rk, H_dk)`
//!
//! The cutset pair is `(f_simo, f_dest)`.

use std::f64::consts::LN_2;

use num_complex::Complex64;
use thiserror::Error;

use crate::fading::{Budget, FadingEnsemble, Receiver, Transmitter};
use crate::setfn::{full_set, SetFnError, SetFunction, Subset};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative or non-finite power {value} at sample {sample}, column {column}")]
    BadPower { sample: usize, column: usize, value: f64 },
    #[error("subset must be nonempty")]
    EmptySubset,
    #[error(transparent)]
    SetFn(#[from] SetFnError),
}

/// Per-sample powers of the `K` sources (columns `0..K`) and the relay
/// (column `K`).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPolicy {
    n: usize,
    columns: Vec<Vec<f64>>,
}

impl PowerPolicy {
    pub fn zeros(n: usize, k: usize) -> Self {
        PowerPolicy {
            n,
            columns: vec![vec![0.0; n]; k + 1],
        }
    }

    /// Builds a policy from `K+1` equal-length columns, relay last.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self, RateError> {
        if columns.len() < 2 {
            return Err(RateError::DimensionMismatch(
                "a policy needs at least one source column and the relay column".into(),
            ));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(RateError::DimensionMismatch("ragged policy columns".into()));
        }
        for (column, c) in columns.iter().enumerate() {
            if let Some((sample, &value)) = c.iter().enumerate().find(|(_, p)| !(**p >= 0.0) || !p.is_finite()) {
                return Err(RateError::BadPower { sample, column, value });
            }
        }
        Ok(PowerPolicy { n, columns })
    }

    pub fn num_samples(&self) -> usize {
        self.n
    }

    pub fn num_users(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.columns[c]
    }

    pub fn relay(&self) -> &[f64] {
        &self.columns[self.columns.len() - 1]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn power(&self, sample: usize, column: usize) -> f64 {
        self.columns[column][sample]
    }

    pub fn average(&self, column: usize) -> f64 {
        self.columns[column].iter().sum::<f64>() / self.n as f64
    }

    /// Column averages within `P̄_k + tol·max(1, P̄_k)`.
    pub fn feasible(&self, budget: &Budget, tol: f64) -> bool {
        self.columns.len() == budget.p_bar.len()
            && self.columns.iter().enumerate().all(|(c, col)| {
                col.iter().all(|p| *p >= 0.0) && self.average(c) <= budget.p_bar[c] + tol * budget.p_bar[c].max(1.0)
            })
    }

    /// `λ·a + (1-λ)·b`.
    pub fn convex_combination(a: &PowerPolicy, b: &PowerPolicy, lambda: f64) -> Result<Self, RateError> {
        if a.columns.len() != b.columns.len() || a.n != b.n {
            return Err(RateError::DimensionMismatch("policies differ in shape".into()));
        }
        let columns = a
            .columns
            .iter()
            .zip(&b.columns)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect())
            .collect();
        PowerPolicy::from_columns(columns)
    }
}

/// Which pair of polymatroids a computation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundFamily {
    /// Decode-and-forward inner bound.
    Df,
    /// Cutset outer bound.
    Cutset,
}

impl BoundFamily {
    pub fn tag(self) -> &'static str {
        match self {
            BoundFamily::Df => "df",
            BoundFamily::Cutset => "cutset",
        }
    }
}

/// The two rate polymatroids of one policy. For the cutset family `f_relay`
/// holds the joint relay-and-destination (SIMO) bound.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRegionPair {
    pub family: BoundFamily,
    pub f_relay: SetFunction,
    pub f_dest: SetFunction,
}

impl RateRegionPair {
    pub fn k(&self) -> usize {
        self.f_relay.k()
    }

    pub fn receiver(&self, rx: Receiver) -> &SetFunction {
        match rx {
            Receiver::Relay => &self.f_relay,
            Receiver::Destination => &self.f_dest,
        }
    }
}

/// Squared link magnitudes and cross terms, precomputed once per ensemble.
#[derive(Debug, Clone)]
pub struct GainTable {
    pub k: usize,
    pub n: usize,
    /// `|H_rk|²`, indexed `[source][sample]`.
    pub relay: Vec<Vec<f64>>,
    /// `|H_dk|²`, indexed `[source][sample]`.
    pub dest: Vec<Vec<f64>>,
    /// `H_rk · conj(H_dk)`, indexed `[source][sample]`.
    pub cross: Vec<Vec<Complex64>>,
    /// `H_rk`, indexed `[source][sample]`.
    pub relay_link: Vec<Vec<Complex64>>,
    /// `H_dk`, indexed `[source][sample]`.
    pub dest_link: Vec<Vec<Complex64>>,
    /// `|H_dr|²`, indexed by sample.
    pub relay_to_dest: Vec<f64>,
}

impl GainTable {
    pub fn new(ens: &FadingEnsemble) -> Self {
        let k = ens.num_users();
        let sq = |rx, tx| -> Vec<f64> { ens.link(rx, tx).iter().map(|h| h.norm_sqr()).collect() };
        GainTable {
            k,
            n: ens.num_samples(),
            relay: (0..k).map(|s| sq(Receiver::Relay, Transmitter::Source(s))).collect(),
            dest: (0..k)
                .map(|s| sq(Receiver::Destination, Transmitter::Source(s)))
                .collect(),
            cross: (0..k)
                .map(|s| {
                    let r = ens.link(Receiver::Relay, Transmitter::Source(s));
                    let d = ens.link(Receiver::Destination, Transmitter::Source(s));
                    r.iter().zip(d).map(|(a, b)| a * b.conj()).collect()
                })
                .collect(),
            relay_link: (0..k)
                .map(|s| ens.link(Receiver::Relay, Transmitter::Source(s)).to_vec())
                .collect(),
            dest_link: (0..k)
                .map(|s| ens.link(Receiver::Destination, Transmitter::Source(s)).to_vec())
                .collect(),
            relay_to_dest: sq(Receiver::Destination, Transmitter::Relay),
        }
    }
}

fn check_shapes(ens: &FadingEnsemble, policy: &PowerPolicy, budget: &Budget) -> Result<(), RateError> {
    if policy.num_users() != ens.num_users() || budget.num_users() != ens.num_users() {
        return Err(RateError::DimensionMismatch(format!(
            "ensemble K={}, policy K={}, budget K={}",
            ens.num_users(),
            policy.num_users(),
            budget.num_users()
        )));
    }
    if policy.num_samples() != ens.num_samples() {
        return Err(RateError::DimensionMismatch(format!(
            "ensemble n={}, policy n={}",
            ens.num_samples(),
            policy.num_samples()
        )));
    }
    for (column, c) in policy.columns().iter().enumerate() {
        if let Some((sample, &value)) = c.iter().enumerate().find(|(_, p)| !(**p >= 0.0) || !p.is_finite()) {
            return Err(RateError::BadPower { sample, column, value });
        }
    }
    Ok(())
}

/// Average rate `θ̄ C(|H_dr|² P_r / θ̄)` of the relay-to-destination link.
pub fn relay_link_rate(gains: &GainTable, relay_powers: &[f64], theta_bar: f64) -> f64 {
    let total: f64 = gains
        .relay_to_dest
        .iter()
        .zip(relay_powers)
        .map(|(g, p)| theta_bar * (g * p / theta_bar).ln_1p())
        .sum();
    total / gains.n as f64 / LN_2
}

/// Per-subset sample average of `θ C(Σ_{k∈S} g_k P_k / θ)`, indexed by bitmask.
pub(crate) fn mac_subset_rates(per_user: &[Vec<f64>], policy: &[Vec<f64>], theta: f64) -> Vec<f64> {
    let k = per_user.len();
    let n = policy[0].len();
    let size = 1usize << k;
    let mut totals = vec![0.0; size];
    let mut snr = vec![0.0; size];
    for i in 0..n {
        for s in 1..size {
            let low = s.trailing_zeros() as usize;
            snr[s] = snr[s & (s - 1)] + per_user[low][i] * policy[low][i] / theta;
            totals[s] += snr[s].ln_1p();
        }
    }
    totals.iter().map(|t| theta * t / n as f64 / LN_2).collect()
}

/// Per-subset sample average of `θ log2 det(I + Σ_{k∈S} g_k g_kᴴ P_k / θ)`.
pub(crate) fn simo_subset_rates(gains: &GainTable, policy: &[Vec<f64>], theta: f64) -> Vec<f64> {
    let k = gains.k;
    let size = 1usize << k;
    let mut totals = vec![0.0; size];
    let (mut a, mut d) = (vec![0.0; size], vec![0.0; size]);
    let mut b = vec![Complex64::new(0.0, 0.0); size];
    for i in 0..gains.n {
        for s in 1..size {
            let low = s.trailing_zeros() as usize;
            let prev = s & (s - 1);
            let p = policy[low][i] / theta;
            a[s] = a[prev] + gains.relay[low][i] * p;
            d[s] = d[prev] + gains.dest[low][i] * p;
            b[s] = b[prev] + gains.cross[low][i] * p;
            // det(I + M) - 1 for the 2x2 Hermitian M = [[a, b], [b*, d]]
            let excess = (a[s] + d[s] + (a[s] * d[s] - b[s].norm_sqr()).max(0.0)).max(0.0);
            totals[s] += excess.ln_1p();
        }
    }
    totals.iter().map(|t| theta * t / gains.n as f64 / LN_2).collect()
}

fn to_setfn(k: usize, values: Vec<f64>) -> Result<SetFunction, RateError> {
    Ok(SetFunction::new(
        k,
        values.into_iter().skip(1).map(|v| v.max(0.0)).collect(),
    )?)
}

fn dest_function(gains: &GainTable, policy: &PowerPolicy, budget: &Budget) -> Result<SetFunction, RateError> {
    let relay = relay_link_rate(gains, policy.relay(), budget.theta_bar());
    let src = mac_subset_rates(&gains.dest, &policy.columns()[..gains.k], budget.theta);
    to_setfn(
        gains.k,
        src.into_iter()
            .enumerate()
            .map(|(s, v)| if s == 0 { 0.0 } else { v + relay })
            .collect(),
    )
}

/// Decode-and-forward bounds at the relay and the destination.
pub fn df_bounds(ens: &FadingEnsemble, policy: &PowerPolicy, budget: &Budget) -> Result<RateRegionPair, RateError> {
    check_shapes(ens, policy, budget)?;
    df_bounds_with(&GainTable::new(ens), policy, budget)
}

/// [`df_bounds`] on a precomputed gain table.
pub fn df_bounds_with(gains: &GainTable, policy: &PowerPolicy, budget: &Budget) -> Result<RateRegionPair, RateError> {
    let k = gains.k;
    let relay = mac_subset_rates(&gains.relay, &policy.columns()[..k], budget.theta);
    Ok(RateRegionPair {
        family: BoundFamily::Df,
        f_relay: to_setfn(k, relay)?,
        f_dest: dest_function(gains, policy, budget)?,
    })
}

/// Cutset bounds: joint relay-and-destination bound and destination bound.
pub fn cutset_bounds(ens: &FadingEnsemble, policy: &PowerPolicy, budget: &Budget) -> Result<RateRegionPair, RateError> {
    check_shapes(ens, policy, budget)?;
    cutset_bounds_with(&GainTable::new(ens), policy, budget)
}

/// [`cutset_bounds`] on a precomputed gain table.
pub fn cutset_bounds_with(
    gains: &GainTable,
    policy: &PowerPolicy,
    budget: &Budget,
) -> Result<RateRegionPair, RateError> {
    let simo = simo_subset_rates(gains, &policy.columns()[..gains.k], budget.theta);
    Ok(RateRegionPair {
        family: BoundFamily::Cutset,
        f_relay: to_setfn(gains.k, simo)?,
        f_dest: dest_function(gains, policy, budget)?,
    })
}

/// Bounds of either family.
pub fn bounds_with(
    family: BoundFamily,
    gains: &GainTable,
    policy: &PowerPolicy,
    budget: &Budget,
) -> Result<RateRegionPair, RateError> {
    match family {
        BoundFamily::Df => df_bounds_with(gains, policy, budget),
        BoundFamily::Cutset => cutset_bounds_with(gains, policy, budget),
    }
}

/// Rate of `S` at receiver `rx` when `K\S` is decoded first:
/// `f(K) - f(K\S)`.
pub fn successive_min_rate(pair: &RateRegionPair, subset: Subset, rx: Receiver) -> Result<f64, RateError> {
    if subset == 0 {
        return Err(RateError::EmptySubset);
    }
    let f = pair.receiver(rx);
    let full = full_set(f.k());
    if subset & !full != 0 {
        return Err(RateError::DimensionMismatch(format!(
            "subset {subset:#b} outside K={}",
            f.k()
        )));
    }
    Ok(f.value(full) - f.value(full & !subset))
}
