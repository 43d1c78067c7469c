//! Network geometry, Rayleigh fading with path loss, and seeded sample
//! ensembles standing in for the ergodic expectation.
//!
//! Every link draws its samples from its own ChaCha stream keyed by
//! `(seed, receiver, transmitter)`, so a link's samples do not depend on which
//! other links exist or on the geometry. Moving the relay only rescales the
//! relay links.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::setfn::MAX_USERS;
use crate::wfsolve::{self, SolverConfig};

#[derive(Debug, Error)]
pub enum FadingError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("invalid ensemble: {0}")]
    Ensemble(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("solver: {0}")]
    Solver(#[from] wfsolve::WfError),
}

/// Receiving node of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Receiver {
    Relay,
    Destination,
}

/// Transmitting node of a link; sources are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transmitter {
    Source(usize),
    Relay,
}

impl Receiver {
    fn id(self) -> u64 {
        match self {
            Receiver::Relay => 0,
            Receiver::Destination => 1,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Receiver::Relay => "r",
            Receiver::Destination => "d",
        }
    }
}

impl Transmitter {
    fn id(self) -> u64 {
        match self {
            Transmitter::Source(k) => k as u64 + 1,
            Transmitter::Relay => 0xff,
        }
    }

    fn tag(self) -> String {
        match self {
            Transmitter::Source(k) => (k + 1).to_string(),
            Transmitter::Relay => "r".to_string(),
        }
    }
}

/// Node positions in the plane and the path-loss exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub sources: Vec<[f64; 2]>,
    pub relay: [f64; 2],
    pub destination: [f64; 2],
    pub gamma: f64,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Geometry {
    pub fn new(
        sources: Vec<[f64; 2]>,
        relay: [f64; 2],
        destination: [f64; 2],
        gamma: f64,
    ) -> Result<Self, FadingError> {
        let g = Geometry {
            sources,
            relay,
            destination,
            gamma,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), FadingError> {
        let k = self.sources.len();
        if k == 0 || k > MAX_USERS {
            return Err(FadingError::Geometry(format!("{k} sources; expected 1..={MAX_USERS}")));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(FadingError::Geometry(format!(
                "path-loss exponent {} must be positive",
                self.gamma
            )));
        }
        let coords = self.sources.iter().chain([&self.relay, &self.destination]);
        if coords.flatten().any(|c| !c.is_finite()) {
            return Err(FadingError::Geometry("non-finite coordinate".into()));
        }
        for (rx, tx) in links(k) {
            if !(self.distance(rx, tx) > 0.0) {
                return Err(FadingError::Geometry(format!(
                    "transmitter {} colocated with receiver {}",
                    tx.tag(),
                    rx.tag()
                )));
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.sources.len()
    }

    fn position_rx(&self, rx: Receiver) -> [f64; 2] {
        match rx {
            Receiver::Relay => self.relay,
            Receiver::Destination => self.destination,
        }
    }

    fn position_tx(&self, tx: Transmitter) -> [f64; 2] {
        match tx {
            Transmitter::Source(k) => self.sources[k],
            Transmitter::Relay => self.relay,
        }
    }

    pub fn distance(&self, rx: Receiver, tx: Transmitter) -> f64 {
        dist(self.position_rx(rx), self.position_tx(tx))
    }

    /// Mean of `|H|²` on the link: `1 / d^γ`.
    pub fn mean_gain(&self, rx: Receiver, tx: Transmitter) -> f64 {
        self.distance(rx, tx).powf(-self.gamma)
    }
}

/// All links in lexicographic (receiver, transmitter) order, excluding the
/// relay's link to itself.
pub fn links(k: usize) -> Vec<(Receiver, Transmitter)> {
    let mut out: Vec<_> = (0..k).map(|s| (Receiver::Relay, Transmitter::Source(s))).collect();
    out.extend((0..k).map(|s| (Receiver::Destination, Transmitter::Source(s))));
    out.push((Receiver::Destination, Transmitter::Relay));
    out
}

/// Average power limits (sources first, relay last) and the source bandwidth
/// fraction `θ`. Noise variances are one.
#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    pub p_bar: Vec<f64>,
    pub theta: f64,
}

impl Budget {
    pub fn new(p_bar: Vec<f64>, theta: f64) -> Result<Self, FadingError> {
        let b = Budget { p_bar, theta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), FadingError> {
        if self.p_bar.len() < 2 {
            return Err(FadingError::Budget("need one limit per source plus the relay".into()));
        }
        if let Some(p) = self.p_bar.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(FadingError::Budget(format!("power limit {p} must be >= 0")));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(FadingError::Budget(format!("theta {} out of (0,1)", self.theta)));
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.p_bar.len() - 1
    }

    pub fn sources(&self) -> &[f64] {
        &self.p_bar[..self.p_bar.len() - 1]
    }

    pub fn relay(&self) -> f64 {
        self.p_bar[self.p_bar.len() - 1]
    }

    pub fn theta_bar(&self) -> f64 {
        1.0 - self.theta
    }
}

/// `n` equiprobable channel states for every link.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingEnsemble {
    k: usize,
    n: usize,
    seed: u64,
    geometry: Option<Geometry>,
    /// `[source][sample]` gains into the relay.
    to_relay: Vec<Vec<Complex64>>,
    /// `[source][sample]` gains into the destination.
    to_dest: Vec<Vec<Complex64>>,
    /// `[sample]` relay-to-destination gains.
    relay_to_dest: Vec<Complex64>,
}

impl FadingEnsemble {
    /// Builds an ensemble from explicit gains, indexed `[source][sample]`.
    pub fn from_gains(
        to_relay: Vec<Vec<Complex64>>,
        to_dest: Vec<Vec<Complex64>>,
        relay_to_dest: Vec<Complex64>,
        seed: u64,
        geometry: Option<Geometry>,
    ) -> Result<Self, FadingError> {
        let k = to_relay.len();
        let n = relay_to_dest.len();
        if k == 0 || k > MAX_USERS {
            return Err(FadingError::Ensemble(format!("{k} sources")));
        }
        if n == 0 {
            return Err(FadingError::Ensemble("no samples".into()));
        }
        if to_dest.len() != k || to_relay.iter().chain(to_dest.iter()).any(|l| l.len() != n) {
            return Err(FadingError::Ensemble("ragged gain arrays".into()));
        }
        let all = to_relay
            .iter()
            .chain(to_dest.iter())
            .flatten()
            .chain(relay_to_dest.iter());
        if all.clone().any(|h| !h.re.is_finite() || !h.im.is_finite()) {
            return Err(FadingError::Ensemble("non-finite gain".into()));
        }
        Ok(FadingEnsemble {
            k,
            n,
            seed,
            geometry,
            to_relay,
            to_dest,
            relay_to_dest,
        })
    }

    /// Builds an ensemble from real nonnegative power gains `|H|²`, using real
    /// amplitudes. Convenient for hand-made instances.
    pub fn from_power_gains(
        to_relay: Vec<Vec<f64>>,
        to_dest: Vec<Vec<f64>>,
        relay_to_dest: Vec<f64>,
    ) -> Result<Self, FadingError> {
        let amp =
            |v: Vec<f64>| -> Vec<Complex64> { v.into_iter().map(|g| Complex64::new(g.max(0.0).sqrt(), 0.0)).collect() };
        FadingEnsemble::from_gains(
            to_relay.into_iter().map(amp).collect(),
            to_dest.into_iter().map(amp).collect(),
            amp(relay_to_dest),
            0,
            None,
        )
    }

    pub fn num_users(&self) -> usize {
        self.k
    }

    pub fn num_samples(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn geometry(&self) -> Option<&Geometry> {
        self.geometry.as_ref()
    }

    /// Samples of one link.
    ///
    /// # Panics
    /// Panics for the absent relay-to-relay link or an out-of-range source.
    pub fn link(&self, rx: Receiver, tx: Transmitter) -> &[Complex64] {
        match (rx, tx) {
            (Receiver::Relay, Transmitter::Source(k)) => &self.to_relay[k],
            (Receiver::Destination, Transmitter::Source(k)) => &self.to_dest[k],
            (Receiver::Destination, Transmitter::Relay) => &self.relay_to_dest,
            (Receiver::Relay, Transmitter::Relay) => panic!("relay-to-relay link does not exist"),
        }
    }

    pub fn gain(&self, rx: Receiver, tx: Transmitter, sample: usize) -> Complex64 {
        self.link(rx, tx)[sample]
    }

    /// Writes `sample,receiver,transmitter,re,im` rows in link order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), FadingError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["sample", "receiver", "transmitter", "re", "im"])?;
        for i in 0..self.n {
            for (rx, tx) in links(self.k) {
                let h = self.gain(rx, tx, i);
                wtr.write_record([
                    i.to_string(),
                    rx.tag().to_string(),
                    tx.tag(),
                    h.re.to_string(),
                    h.im.to_string(),
                ])?;
            }
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads the format of [`FadingEnsemble::write_csv`]. The seed and
    /// geometry are not part of the file and come back as `0` and `None`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, FadingError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows: Vec<(usize, Receiver, Transmitter, Complex64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let bad = |what: &str| FadingError::Ensemble(format!("bad {what} in row {:?}", rec));
            let sample: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("sample"))?;
            let rx = match rec.get(1) {
                Some("r") => Receiver::Relay,
                Some("d") => Receiver::Destination,
                _ => return Err(bad("receiver")),
            };
            let tx = match rec.get(2) {
                Some("r") => Transmitter::Relay,
                Some(s) => {
                    let k: usize = s.parse().map_err(|_| bad("transmitter"))?;
                    if k == 0 {
                        return Err(bad("transmitter"));
                    }
                    Transmitter::Source(k - 1)
                }
                None => return Err(bad("transmitter")),
            };
            let re: f64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("re"))?;
            let im: f64 = rec.get(4).and_then(|s| s.parse().ok()).ok_or_else(|| bad("im"))?;
            rows.push((sample, rx, tx, Complex64::new(re, im)));
        }
        let n = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let k = rows
            .iter()
            .filter_map(|r| match r.2 {
                Transmitter::Source(s) => Some(s + 1),
                Transmitter::Relay => None,
            })
            .max()
            .unwrap_or(0);
        if k == 0 || k > MAX_USERS || n == 0 {
            return Err(FadingError::Ensemble("empty or oversized ensemble".into()));
        }
        let nan = Complex64::new(f64::NAN, f64::NAN);
        let mut to_relay = vec![vec![nan; n]; k];
        let mut to_dest = vec![vec![nan; n]; k];
        let mut relay_to_dest = vec![nan; n];
        for (i, rx, tx, h) in rows {
            match (rx, tx) {
                (Receiver::Relay, Transmitter::Source(s)) => to_relay[s][i] = h,
                (Receiver::Destination, Transmitter::Source(s)) => to_dest[s][i] = h,
                (Receiver::Destination, Transmitter::Relay) => relay_to_dest[i] = h,
                (Receiver::Relay, Transmitter::Relay) => {
                    return Err(FadingError::Ensemble("relay-to-relay link present".into()))
                }
            }
        }
        // Missing rows leave NaN entries, which `from_gains` rejects.
        FadingEnsemble::from_gains(to_relay, to_dest, relay_to_dest, 0, None)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed of one link's sample stream.
pub fn link_seed(seed: u64, rx: Receiver, tx: Transmitter) -> u64 {
    splitmix64(seed ^ splitmix64((rx.id() << 32) | tx.id()))
}

/// `n` unit-variance circular complex Gaussian draws from the link's stream.
pub fn unit_rayleigh_stream(seed: u64, rx: Receiver, tx: Transmitter, n: usize) -> Vec<Complex64> {
    let mut rng = ChaCha12Rng::seed_from_u64(link_seed(seed, rx, tx));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

/// Draws `H = A / sqrt(d^γ)` with `A ~ CN(0,1)` independently per link.
pub fn sample_ensemble(geom: &Geometry, n: usize, seed: u64) -> Result<FadingEnsemble, FadingError> {
    geom.validate()?;
    if n == 0 {
        return Err(FadingError::Ensemble("n must be at least 1".into()));
    }
    let k = geom.num_users();
    let draw = |rx, tx| -> Vec<Complex64> {
        let scale = geom.mean_gain(rx, tx).sqrt();
        unit_rayleigh_stream(seed, rx, tx, n)
            .into_iter()
            .map(|a| a * scale)
            .collect()
    };
    let to_relay = (0..k).map(|s| draw(Receiver::Relay, Transmitter::Source(s))).collect();
    let to_dest = (0..k)
        .map(|s| draw(Receiver::Destination, Transmitter::Source(s)))
        .collect();
    let relay_to_dest = draw(Receiver::Destination, Transmitter::Relay);
    FadingEnsemble::from_gains(to_relay, to_dest, relay_to_dest, seed, Some(geom.clone()))
}

/// Unit-mean Rayleigh fading on every link with no path loss, from the same
/// per-link streams as [`sample_ensemble`].
pub fn sample_unit_ensemble(k: usize, n: usize, seed: u64) -> Result<FadingEnsemble, FadingError> {
    if n == 0 {
        return Err(FadingError::Ensemble("n must be at least 1".into()));
    }
    let to_relay = (0..k)
        .map(|s| unit_rayleigh_stream(seed, Receiver::Relay, Transmitter::Source(s), n))
        .collect();
    let to_dest = (0..k)
        .map(|s| unit_rayleigh_stream(seed, Receiver::Destination, Transmitter::Source(s), n))
        .collect();
    let relay_to_dest = unit_rayleigh_stream(seed, Receiver::Destination, Transmitter::Relay, n);
    FadingEnsemble::from_gains(to_relay, to_dest, relay_to_dest, seed, None)
}

/// Ergodic sum-capacity of the sources' multiaccess channel to the destination
/// with no relay and the full band (`θ = 1`).
pub fn mac_baseline_sum_capacity(
    ens: &FadingEnsemble,
    budget: &Budget,
    cfg: &SolverConfig,
) -> Result<f64, FadingError> {
    budget.validate()?;
    let k = ens.num_users();
    if budget.num_users() != k {
        return Err(FadingError::Budget(format!(
            "{} source limits for {k} sources",
            budget.num_users()
        )));
    }
    let gains: Vec<Vec<f64>> = (0..k)
        .map(|s| {
            ens.link(Receiver::Destination, Transmitter::Source(s))
                .iter()
                .map(|h| h.norm_sqr())
                .collect()
        })
        .collect();
    let sol = wfsolve::waterfill_mac_opportunistic(&gains, 1.0, budget.sources(), cfg)?;
    let n = ens.num_samples();
    let total: f64 = (0..n)
        .map(|i| {
            let snr: f64 = (0..k).map(|s| gains[s][i] * sol.powers[s][i]).sum();
            snr.ln_1p()
        })
        .sum();
    Ok(total / n as f64 / std::f64::consts::LN_2)
}
