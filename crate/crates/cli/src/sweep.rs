//! Relay-position sweep: DF and cutset sum rates at each relay position,
//! written as CSV.

use std::io::Write;

use marc_core::fading::mac_baseline_sum_capacity;
use marc_core::{
    optimal_cutset_sum_rate, optimal_df_sum_rate, sample_ensemble, sum_capacity_certificate, Certificate, FadingError,
    SolverReport,
};
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("channel: {0}")]
    Fading(#[from] FadingError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub const CSV_HEADER: [&str; 9] = [
    "relay_x",
    "df_sum_rate",
    "df_case",
    "cutset_sum_rate",
    "cutset_case",
    "mac_baseline",
    "capacity_achieved",
    "solver_iterations",
    "diagnostics",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub relay_x: f64,
    pub df_sum_rate: f64,
    pub df_case: String,
    pub cutset_sum_rate: f64,
    pub cutset_case: String,
    pub mac_baseline: f64,
    pub capacity_achieved: bool,
    /// Coordinate sweeps of both solvers together.
    pub solver_iterations: usize,
    pub diagnostics: Vec<String>,
}

impl SweepRow {
    pub fn flagged(&self) -> bool {
        !self.diagnostics.is_empty()
    }
}

/// Formats like C's `%.12g`.
pub fn fmt_g12(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.11e}")
    };
    trim_zeros(&s)
}

fn trim_zeros(s: &str) -> String {
    let (mantissa, exp) = match s.find('e') {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    };
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    format!("{mantissa}{exp}")
}

fn solve<F>(name: &str, f: F, diagnostics: &mut Vec<String>) -> Option<SolverReport>
where
    F: FnOnce() -> Result<SolverReport, marc_core::CaseError>,
{
    match f() {
        Ok(r) => {
            diagnostics.extend(r.diagnostics.iter().map(|d| format!("{name}: {d}")));
            Some(r)
        }
        Err(e) => {
            diagnostics.push(format!("{name}: {e}"));
            None
        }
    }
}

/// Runs every sweep point in order. Solver failures are recorded in the
/// row's diagnostics instead of stopping the sweep; `progress` sees each row
/// as it completes.
pub fn run_sweep(cfg: &ExperimentConfig, mut progress: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>, SweepError> {
    let budget = cfg.budget()?;
    let xs = cfg.relay_x.values();
    let mut rows = Vec::with_capacity(xs.len());
    // Source-to-destination links do not depend on the relay position.
    let ens = sample_ensemble(&cfg.geometry_at(xs[0])?, cfg.samples, cfg.seed)?;
    let (mac, mac_note) = match mac_baseline_sum_capacity(&ens, &budget, &cfg.solver) {
        Ok(v) => (v, None),
        Err(e) => (f64::NAN, Some(format!("mac: {e}"))),
    };
    for x in xs {
        let ens = sample_ensemble(&cfg.geometry_at(x)?, cfg.samples, cfg.seed)?;
        let mut diagnostics: Vec<String> = mac_note.iter().cloned().collect();
        let df = solve(
            "df",
            || optimal_df_sum_rate(&ens, &budget, &cfg.solver),
            &mut diagnostics,
        );
        let ob = solve(
            "cutset",
            || optimal_cutset_sum_rate(&ens, &budget, &cfg.solver),
            &mut diagnostics,
        );
        let achieved = match (&df, &ob) {
            (Some(d), Some(o)) => match sum_capacity_certificate(d, o, cfg.capacity_tol) {
                Ok(c) => c == Certificate::Achieved,
                Err(e) => {
                    diagnostics.push(format!("certificate: {e}"));
                    false
                }
            },
            _ => false,
        };
        let rate = |r: &Option<SolverReport>| r.as_ref().map_or(f64::NAN, |r| r.sum_rate);
        let case = |r: &Option<SolverReport>| r.as_ref().map_or_else(|| "failed".to_string(), |r| r.label.to_string());
        let sweeps = |r: &Option<SolverReport>| r.as_ref().map_or(0, |r| r.iterations.sweeps);
        let row = SweepRow {
            relay_x: x,
            df_sum_rate: rate(&df),
            df_case: case(&df),
            cutset_sum_rate: rate(&ob),
            cutset_case: case(&ob),
            mac_baseline: mac,
            capacity_achieved: achieved,
            solver_iterations: sweeps(&df) + sweeps(&ob),
            diagnostics,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_g12(r.relay_x),
            fmt_g12(r.df_sum_rate),
            r.df_case.clone(),
            fmt_g12(r.cutset_sum_rate),
            r.cutset_case.clone(),
            fmt_g12(r.mac_baseline),
            r.capacity_achieved.to_string(),
            r.solver_iterations.to_string(),
            r.diagnostics.join("; "),
        ])?;
    }
    w.flush()?;
    Ok(())
}
