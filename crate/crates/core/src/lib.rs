//! Decode-and-forward achievable rates, sum-rate optimal power policies and
//! cutset outer bounds for ergodic orthogonal multiaccess relay channels.
//!
//! Channels are represented by a finite ensemble of equiprobable fading
//! states ([`fading`]); rate bounds for a power policy are polymatroid set
//! functions ([`ratebounds`], [`setfn`]); optimal policies come from
//! water-filling style solvers ([`wfsolve`]) driven by the case search in
//! [`casealgo`]. [`oracle`] holds brute-force references for tiny instances.

pub mod casealgo;
pub mod fading;
pub mod oracle;
pub mod ratebounds;
pub mod setfn;
pub mod wfsolve;

pub use casealgo::{
    check_case_conditions, kuser_clustered_corner_rates, optimal_cutset_sum_rate, optimal_df_sum_rate,
    optimal_df_weighted_region_2user, sum_capacity_certificate, CaseError, CaseLabel, Certificate, SolverReport,
    WeightedReport,
};
pub use fading::{sample_ensemble, Budget, FadingEnsemble, FadingError, Geometry, Receiver, Transmitter};
pub use ratebounds::{cutset_bounds, df_bounds, BoundFamily, PowerPolicy, RateRegionPair};
pub use setfn::{ActiveCase, CaseKind, SetFunction, Subset};
pub use wfsolve::{DualVariables, SolverConfig, WfError};
