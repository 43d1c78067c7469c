//! Fixed instances shared by the criterion benches in `benches/`.

use marc_core::{sample_ensemble, Budget, FadingEnsemble, Geometry, Receiver, Transmitter};

/// Two sources near the origin, relay halfway to a destination at `(2, 0)`.
pub fn sweep_midpoint(n: usize) -> (FadingEnsemble, Budget) {
    let g = Geometry::new(vec![[0.0, 0.25], [0.0, -0.25]], [1.0, 0.0], [2.0, 0.0], 3.0).expect("fixed geometry");
    let ens = sample_ensemble(&g, n, 2024).expect("n > 0");
    (ens, Budget::new(vec![10.0; 3], 0.5).expect("fixed budget"))
}

pub fn power_gains(ens: &FadingEnsemble, rx: Receiver, tx: Transmitter) -> Vec<f64> {
    ens.link(rx, tx).iter().map(|h| h.norm_sqr()).collect()
}
