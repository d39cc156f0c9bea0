//! Event-driven simulation of the exclusion process with generator `N² L_N`.
//!
//! Every bond carries an exponential clock of rate `N² ξ`; a ring exchanges
//! the two endpoint occupancies, which is the identity when they agree. The
//! superposition is simulated with a single clock of rate `N² Σ ξ` and a
//! static alias table over bonds.

mod alias;

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::DensityField;
use crate::lattice::{Direction, RateField, TorusLattice};
use crate::linalg::splitmix64;

pub use alias::AliasTable;

/// Smallest replica count accepted by [`mc_density`].
pub const MIN_REPLICAS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("field has {got} entries, lattice has {expected} sites")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("profile leaves [0, 1]: {0}")]
    BadProfile(String),
    #[error("time horizon must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("sample times must be strictly increasing within [0, {horizon}]")]
    BadSampleTimes { horizon: f64 },
    #[error("{got} replicas requested, at least {min} are required")]
    TooFewReplicas { got: usize, min: usize },
    #[error("bond {0} is out of range")]
    BadBond(usize),
}

/// Occupation variables, one bit per site, with a cached particle count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    words: Vec<u64>,
    sites: usize,
    count: usize,
}

impl Configuration {
    pub fn empty(sites: usize) -> Self {
        Configuration { words: vec![0; sites.div_ceil(64)], sites, count: 0 }
    }

    pub fn full(sites: usize) -> Self {
        let mut c = Self::empty(sites);
        for x in 0..sites {
            c.set(x, true);
        }
        c
    }

    pub fn from_occupancy(occ: &[bool]) -> Self {
        let mut c = Self::empty(occ.len());
        for (x, &b) in occ.iter().enumerate() {
            c.set(x, b);
        }
        c
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn particle_count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn get(&self, x: usize) -> bool {
        self.words[x >> 6] >> (x & 63) & 1 == 1
    }

    pub fn set(&mut self, x: usize, occupied: bool) {
        if self.get(x) != occupied {
            self.words[x >> 6] ^= 1 << (x & 63);
            if occupied {
                self.count += 1;
            } else {
                self.count -= 1;
            }
        }
    }

    /// `η ↦ η^{x,y}`; returns whether anything changed.
    #[inline]
    pub fn exchange(&mut self, x: usize, y: usize) -> bool {
        if self.get(x) == self.get(y) {
            return false;
        }
        self.words[x >> 6] ^= 1 << (x & 63);
        self.words[y >> 6] ^= 1 << (y & 63);
        true
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn occupancy(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.sites).map(|x| self.get(x))
    }
}

/// Initial density profiles `γ: T^d → [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { density: f64 },
    /// `high` on `start ≤ u[axis] < end`, `low` elsewhere.
    Step { axis: usize, start: f64, end: f64, high: f64, low: f64 },
    /// `mean + amplitude · cos(2π k·u)`.
    Cosine { mean: f64, amplitude: f64, wave: Vec<i64> },
}

impl Profile {
    pub fn value(&self, u: &[f64]) -> f64 {
        match self {
            Profile::Constant { density } => *density,
            Profile::Step { axis, start, end, high, low } => {
                if (*start..*end).contains(&u[*axis]) {
                    *high
                } else {
                    *low
                }
            }
            Profile::Cosine { mean, amplitude, wave } => {
                let phase: f64 = wave.iter().zip(u).map(|(k, x)| *k as f64 * x).sum();
                mean + amplitude * (2.0 * PI * phase).cos()
            }
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), EngineError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = match self {
            Profile::Constant { density } => in_unit(*density),
            Profile::Step { axis, high, low, .. } => *axis < dim && in_unit(*high) && in_unit(*low),
            Profile::Cosine { mean, amplitude, wave } => {
                wave.len() == dim && in_unit(mean - amplitude.abs()) && in_unit(mean + amplitude.abs())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(EngineError::BadProfile(format!("{self:?} in dimension {dim}")))
        }
    }

    /// `γ(x/N)` at every site.
    pub fn sample(&self, lattice: &TorusLattice) -> Result<Vec<f64>, EngineError> {
        self.validate(lattice.dim())?;
        Ok((0..lattice.sites()).map(|x| self.value(&lattice.position(x))).collect())
    }
}

/// Replica `i` draws from ChaCha8 keyed by `base_seed`, on stream `i`,
/// starting at word 0; the word position is the draw counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaPlan {
    pub replica_count: usize,
    pub base_seed: u64,
}

impl ReplicaPlan {
    pub fn new(replica_count: usize, base_seed: u64) -> Self {
        ReplicaPlan { replica_count, base_seed }
    }

    /// `(key, stream)` for one replica.
    pub fn replica_key(&self, replica: usize) -> ([u8; 32], u64) {
        let mut state = self.base_seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        (key, replica as u64)
    }

    pub fn rng(&self, replica: usize) -> ChaCha8Rng {
        let (key, stream) = self.replica_key(replica);
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        rng
    }

    /// Runs `f` for every replica concurrently, results in replica order.
    pub fn map<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
    {
        (0..self.replica_count)
            .into_par_iter()
            .map(|i| {
                let mut rng = self.rng(i);
                f(i, &mut rng)
            })
            .collect()
    }
}

/// Independent Bernoulli(`γ(x/N)`) occupations.
pub fn sample_initial<R: Rng + ?Sized>(
    gamma: &Profile,
    lattice: &TorusLattice,
    rng: &mut R,
) -> Result<Configuration, EngineError> {
    let p = gamma.sample(lattice)?;
    Ok(sample_from_densities(&p, rng))
}

pub fn sample_from_densities<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> Configuration {
    let mut c = Configuration::empty(p.len());
    for (x, &px) in p.iter().enumerate() {
        // one draw per site regardless of the value, so streams stay aligned
        let u: f64 = rng.random();
        c.set(x, u < px);
    }
    c
}

/// `⟨π, H⟩ = N^{−d} Σ_x H(x/N) η(x)`.
pub fn pair(config: &Configuration, h: &[f64]) -> Result<f64, EngineError> {
    if h.len() != config.sites() {
        return Err(EngineError::DimensionMismatch { expected: config.sites(), got: h.len() });
    }
    Ok(pair_unchecked(config, h))
}

fn pair_unchecked(config: &Configuration, h: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (w, word) in config.words.iter().enumerate() {
        let mut bits = *word;
        while bits != 0 {
            let b = bits.trailing_zeros() as usize;
            acc += h[(w << 6) + b];
            bits &= bits - 1;
        }
    }
    acc / config.sites() as f64
}

/// Pairings sampled at fixed macroscopic times.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    /// `values[k][f]` is the pairing with field `f` at `times[k]`
    pub values: Vec<Vec<f64>>,
}

impl ObservableSeries {
    pub fn field(&self, f: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[f]).collect()
    }
}

/// Real exchanges in time order, with the starting configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub initial: Configuration,
    pub events: Vec<(f64, u32)>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// macroscopic time horizon `T`
    pub horizon: f64,
    /// strictly increasing, within `[0, T]`
    pub sample_times: Vec<f64>,
    pub pairing_fields: Vec<Vec<f64>>,
    /// fields `F` for which `∫_0^T ⟨π_s, F⟩ ds` is accumulated
    pub integral_fields: Vec<Vec<f64>>,
    /// bonds whose net particle current (forward minus backward) is counted
    pub flux_bonds: Vec<usize>,
    pub log_events: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: Configuration,
    pub series: ObservableSeries,
    pub integrals: Vec<f64>,
    pub fluxes: Vec<i64>,
    /// clock rings, identity events included
    pub events: u64,
    pub exchanges: u64,
    pub log: Option<EventLog>,
}

/// Shared read-only data for repeated runs on one rate field.
#[derive(Debug, Clone)]
pub struct Dynamics {
    lattice: TorusLattice,
    endpoints: Vec<(u32, u32)>,
    alias: AliasTable,
    /// `N² Σ ξ`
    total_rate: f64,
}

impl Dynamics {
    pub fn new(rates: &RateField) -> Self {
        let lattice = *rates.lattice();
        let endpoints = (0..lattice.bonds())
            .map(|b| {
                let (x, y) = lattice.bond_endpoints(b);
                (x as u32, y as u32)
            })
            .collect();
        let n = lattice.side() as f64;
        Dynamics {
            lattice,
            endpoints,
            alias: AliasTable::new(rates.rates()),
            total_rate: n * n * rates.total_rate(),
        }
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    pub fn run<R: RngCore + ?Sized>(
        &self,
        mut config: Configuration,
        opts: &RunOptions,
        rng: &mut R,
    ) -> Result<RunOutput, EngineError> {
        let sites = self.lattice.sites();
        let horizon = opts.horizon;
        if !(horizon >= 0.0) {
            return Err(EngineError::NegativeTime(horizon));
        }
        let times_ok = opts.sample_times.windows(2).all(|w| w[0] < w[1])
            && opts.sample_times.iter().all(|&s| (0.0..=horizon).contains(&s));
        if !times_ok {
            return Err(EngineError::BadSampleTimes { horizon });
        }
        for f in opts.pairing_fields.iter().chain(&opts.integral_fields) {
            if f.len() != sites {
                return Err(EngineError::DimensionMismatch { expected: sites, got: f.len() });
            }
        }
        if config.sites() != sites {
            return Err(EngineError::DimensionMismatch { expected: sites, got: config.sites() });
        }
        let mut flux_slot = vec![usize::MAX; if opts.flux_bonds.is_empty() { 0 } else { self.lattice.bonds() }];
        for (k, &b) in opts.flux_bonds.iter().enumerate() {
            *flux_slot.get_mut(b).ok_or(EngineError::BadBond(b))? = k;
        }

        let log_initial = opts.log_events.then(|| config.clone());
        let mut events_log = Vec::new();
        let mut running: Vec<f64> = opts.integral_fields.iter().map(|f| pair_unchecked(&config, f)).collect();
        let mut integrals = vec![0.0; running.len()];
        let mut fluxes = vec![0i64; opts.flux_bonds.len()];
        let mut series = ObservableSeries { times: Vec::new(), values: Vec::new() };
        let inv_sites = 1.0 / sites as f64;

        let mut next_sample = 0;
        let mut t = 0.0;
        let mut events = 0u64;
        let mut exchanges = 0u64;
        let rate = self.total_rate;
        loop {
            let e: f64 = Exp1.sample(rng);
            let t_new = t + e / rate;
            while next_sample < opts.sample_times.len() && opts.sample_times[next_sample] < t_new {
                series.times.push(opts.sample_times[next_sample]);
                series.values.push(opts.pairing_fields.iter().map(|f| pair_unchecked(&config, f)).collect());
                next_sample += 1;
            }
            let t_end = t_new.min(horizon);
            for (acc, g) in integrals.iter_mut().zip(&running) {
                *acc += g * (t_end - t);
            }
            if t_new > horizon {
                break;
            }
            t = t_new;
            events += 1;
            let b = self.alias.sample(rng);
            let (x, y) = self.endpoints[b];
            let (x, y) = (x as usize, y as usize);
            let forward = config.get(x);
            if !config.exchange(x, y) {
                continue;
            }
            exchanges += 1;
            // the particle moved x → y when `forward`, else y → x
            let (from, to) = if forward { (x, y) } else { (y, x) };
            for (g, f) in running.iter_mut().zip(&opts.integral_fields) {
                *g += (f[to] - f[from]) * inv_sites;
            }
            if !flux_slot.is_empty() && flux_slot[b] != usize::MAX {
                fluxes[flux_slot[b]] += if forward { 1 } else { -1 };
            }
            if opts.log_events {
                events_log.push((t, b as u32));
            }
        }
        Ok(RunOutput {
            config,
            series,
            integrals,
            fluxes,
            events,
            exchanges,
            log: log_initial.map(|initial| EventLog { initial, events: events_log }),
        })
    }
}

/// Simulates `[0, T]` from `config`; see [`Dynamics::run`] for repeated use.
pub fn run<R: RngCore + ?Sized>(
    config: Configuration,
    rates: &RateField,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunOutput, EngineError> {
    Dynamics::new(rates).run(config, opts, rng)
}

/// Per-site mean occupation at `T` with standard errors.
#[derive(Debug, Clone)]
pub struct McDensity {
    pub mean: DensityField,
    pub std_err: Vec<f64>,
    pub replicas: usize,
}

/// Per-site occupation counts are integers, so the merge is exact and
/// independent of scheduling.
pub fn mc_density(
    gamma: &Profile,
    rates: &RateField,
    horizon: f64,
    plan: &ReplicaPlan,
) -> Result<McDensity, EngineError> {
    if plan.replica_count < MIN_REPLICAS {
        return Err(EngineError::TooFewReplicas { got: plan.replica_count, min: MIN_REPLICAS });
    }
    let lattice = *rates.lattice();
    let p0 = gamma.sample(&lattice)?;
    let dynamics = Dynamics::new(rates);
    let opts = RunOptions { horizon, ..RunOptions::default() };
    let finals = plan.map(|_, rng| {
        let c0 = sample_from_densities(&p0, rng);
        dynamics.run(c0, &opts, rng).map(|out| out.config)
    });
    let mut counts = vec![0u64; lattice.sites()];
    for c in finals {
        for (x, occ) in c?.occupancy().enumerate() {
            counts[x] += occ as u64;
        }
    }
    let r = plan.replica_count as f64;
    let mean: Vec<f64> = counts.iter().map(|&c| c as f64 / r).collect();
    let std_err = mean.iter().map(|&m| (m * (1.0 - m) / (r - 1.0)).sqrt()).collect();
    Ok(McDensity { mean: DensityField::new(mean), std_err, replicas: plan.replica_count })
}

/// `∫_0^T N^{2−2d} Σ_b ξ_b [(η(x) − η(y))(H(y) − H(x))]² ds` along a logged
/// trajectory.
pub fn qv_estimate(log: &EventLog, h: &[f64], rates: &RateField, horizon: f64) -> Result<f64, EngineError> {
    let lattice = rates.lattice();
    if h.len() != lattice.sites() || log.initial.sites() != lattice.sites() {
        return Err(EngineError::DimensionMismatch {
            expected: lattice.sites(),
            got: if h.len() != lattice.sites() { h.len() } else { log.initial.sites() },
        });
    }
    if !(horizon >= 0.0) {
        return Err(EngineError::NegativeTime(horizon));
    }
    let term = |c: &Configuration, b: usize| -> f64 {
        let (x, y) = lattice.bond_endpoints(b);
        if c.get(x) == c.get(y) {
            0.0
        } else {
            rates.rate(b) * (h[y] - h[x]).powi(2)
        }
    };
    let touching = |x: usize, y: usize| -> Vec<usize> {
        let mut bonds = Vec::with_capacity(4 * lattice.dim());
        for site in [x, y] {
            for axis in 0..lattice.dim() {
                for dir in [Direction::Forward, Direction::Backward] {
                    let b = lattice.incident_bond(site, axis, dir);
                    if !bonds.contains(&b) {
                        bonds.push(b);
                    }
                }
            }
        }
        bonds
    };
    let mut config = log.initial.clone();
    let mut q: f64 = (0..lattice.bonds()).map(|b| term(&config, b)).sum();
    let mut integral = 0.0;
    let mut t = 0.0;
    for &(te, b) in &log.events {
        if te > horizon {
            break;
        }
        integral += q * (te - t);
        t = te;
        let (x, y) = lattice.bond_endpoints(b as usize);
        let nearby = touching(x, y);
        let before: f64 = nearby.iter().map(|&c| term(&config, c)).sum();
        config.exchange(x, y);
        let after: f64 = nearby.iter().map(|&c| term(&config, c)).sum();
        q += after - before;
    }
    integral += q * (horizon - t);
    let n = lattice.side() as f64;
    let d = lattice.dim() as i32;
    Ok(integral * n.powi(2 - 2 * d))
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample standard deviation.
pub fn sample_sd(values: &[f64]) -> f64 {
    let (_, se) = mean_and_se(values);
    se * (values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{evolve_density, SparseGenerator};
    use crate::geometry::Membrane;
    use proptest::prelude::*;
    use rand::RngCore;

    fn ring(n: usize) -> RateField {
        RateField::homogeneous(TorusLattice::new(1, n).unwrap())
    }

    fn arc(n: usize) -> RateField {
        RateField::build(TorusLattice::new(1, n).unwrap(), &Membrane::interval(0.3, 0.7).unwrap()).unwrap()
    }

    #[test]
    fn constant_profiles_fill_or_empty() {
        let lattice = TorusLattice::new(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let full = sample_initial(&Profile::Constant { density: 1.0 }, &lattice, &mut rng).unwrap();
        assert_eq!(full.particle_count(), 64);
        let empty = sample_initial(&Profile::Constant { density: 0.0 }, &lattice, &mut rng).unwrap();
        assert_eq!(empty.particle_count(), 0);
    }

    #[test]
    fn half_filling_binomial_tail() {
        let lattice = TorusLattice::new(1, 1024).unwrap();
        let plan = ReplicaPlan::new(1000, 99);
        let hits = plan
            .map(|_, rng| {
                let c = sample_initial(&Profile::Constant { density: 0.5 }, &lattice, rng).unwrap();
                ((c.particle_count() as f64 - 512.0).abs() <= 4.0 * (1024.0f64 * 0.25).sqrt()) as usize
            })
            .iter()
            .sum::<usize>();
        assert!(hits >= 990);
    }

    #[test]
    fn rejects_profiles_outside_unit_interval() {
        let lattice = TorusLattice::new(1, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for bad in [
            Profile::Constant { density: 1.2 },
            Profile::Cosine { mean: 0.5, amplitude: 0.6, wave: vec![1] },
            Profile::Step { axis: 1, start: 0.0, end: 0.5, high: 1.0, low: 0.0 },
        ] {
            assert!(matches!(sample_initial(&bad, &lattice, &mut rng), Err(EngineError::BadProfile(_))));
        }
    }

    #[test]
    fn full_lattice_is_frozen() {
        let rates = arc(16);
        let h: Vec<f64> = (0..16).map(|x| (x as f64).sin()).collect();
        let opts = RunOptions {
            horizon: 0.5,
            sample_times: vec![0.0, 0.1, 0.2, 0.5],
            pairing_fields: vec![h.clone()],
            log_events: true,
            ..RunOptions::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = run(Configuration::full(16), &rates, &opts, &mut rng).unwrap();
        assert_eq!(out.config, Configuration::full(16));
        assert_eq!(out.exchanges, 0);
        let avg = h.iter().sum::<f64>() / 16.0;
        assert!(out.series.field(0).iter().all(|&v| v == out.series.values[0][0]));
        assert!((out.series.values[0][0] - avg).abs() < 1e-15);
        assert_eq!(qv_estimate(out.log.as_ref().unwrap(), &h, &rates, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn pair_examples() {
        let c = Configuration::from_occupancy(&[true, false, true, true]);
        assert_eq!(pair(&c, &[1.0; 4]).unwrap(), 0.75);
        assert_eq!(pair(&Configuration::empty(4), &[3.0, -1.0, 2.0, 5.0]).unwrap(), 0.0);
        assert_eq!(pair(&Configuration::full(4), &[3.0, -1.0, 2.0, 5.0]).unwrap(), 2.25);
        assert!(matches!(pair(&c, &[1.0; 3]), Err(EngineError::DimensionMismatch { .. })));
    }

    #[test]
    fn particles_are_conserved_over_a_million_events() {
        let lattice = TorusLattice::new(2, 16).unwrap();
        let rates = RateField::build(lattice, &Membrane::ball(vec![0.5, 0.5], 0.25).unwrap()).unwrap();
        let dynamics = Dynamics::new(&rates);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c0 = sample_initial(&Profile::Constant { density: 0.4 }, &lattice, &mut rng).unwrap();
        let horizon = 1.0e6 / dynamics.total_rate();
        let out = dynamics.run(c0.clone(), &RunOptions { horizon, ..Default::default() }, &mut rng).unwrap();
        assert!(out.events > 900_000);
        assert_eq!(out.config.particle_count(), c0.particle_count());
        assert_eq!(out.config.popcount(), c0.particle_count());
    }

    #[test]
    fn single_particle_follows_the_semigroup() {
        let rates = ring(8);
        let gen = SparseGenerator::assemble(&rates);
        let mut point = vec![0.0; 8];
        point[2] = 1.0;
        let expected = evolve_density(&gen, &DensityField::new(point.clone()), 0.1).unwrap();
        let dynamics = Dynamics::new(&rates);
        let opts = RunOptions { horizon: 0.1, ..Default::default() };
        let plan = ReplicaPlan::new(20_000, 17);
        let finals = plan.map(|_, rng| {
            dynamics.run(Configuration::from_occupancy(&point.iter().map(|&p| p == 1.0).collect::<Vec<_>>()), &opts, rng)
                .unwrap()
                .config
        });
        for x in 0..8 {
            let occ: Vec<f64> = finals.iter().map(|c| c.get(x) as u8 as f64).collect();
            let (m, se) = mean_and_se(&occ);
            assert!((m - expected.values[x]).abs() <= 4.0 * se.max(1e-3), "site {x}: {m} vs {}", expected.values[x]);
        }
    }

    #[test]
    fn mc_density_step_profile_matches_evolution() {
        let rates = arc(8);
        let gen = SparseGenerator::assemble(&rates);
        let gamma = Profile::Step { axis: 0, start: 0.0, end: 0.5, high: 0.8, low: 0.2 };
        let lattice = *rates.lattice();
        let e0 = DensityField::new(gamma.sample(&lattice).unwrap());
        let expected = evolve_density(&gen, &e0, 0.05).unwrap();
        let mc = mc_density(&gamma, &rates, 0.05, &ReplicaPlan::new(10_000, 4)).unwrap();
        for x in 0..8 {
            assert!((mc.mean.values[x] - expected.values[x]).abs() <= 4.0 * mc.std_err[x]);
        }
        let at_zero = mc_density(&gamma, &rates, 0.0, &ReplicaPlan::new(2_000, 4)).unwrap();
        for x in 0..8 {
            assert!((at_zero.mean.values[x] - e0.values[x]).abs() <= 4.0 * at_zero.std_err[x]);
        }
        assert!(matches!(
            mc_density(&gamma, &rates, 0.05, &ReplicaPlan::new(50, 4)),
            Err(EngineError::TooFewReplicas { .. })
        ));
    }

    #[test]
    fn stationary_density_and_zero_flux() {
        let rates = arc(16);
        let alpha = 0.35;
        let lattice = *rates.lattice();
        let dynamics = Dynamics::new(&rates);
        let slow = rates.slow_bonds()[0].bond;
        let site = 5;
        let mut indicator = vec![0.0; 16];
        indicator[site] = 16.0;
        let horizon = 0.5;
        let opts = RunOptions {
            horizon,
            integral_fields: vec![indicator],
            flux_bonds: vec![slow, 0],
            ..Default::default()
        };
        let plan = ReplicaPlan::new(400, 23);
        let outs = plan.map(|_, rng| {
            let c0 = sample_initial(&Profile::Constant { density: alpha }, &lattice, rng).unwrap();
            dynamics.run(c0, &opts, rng).unwrap()
        });
        let avg_density: Vec<f64> = outs.iter().map(|o| o.integrals[0] / horizon).collect();
        let (m, se) = mean_and_se(&avg_density);
        assert!((m - alpha).abs() <= 3.0 * se, "{m} ± {se}");
        for k in 0..2 {
            let flux: Vec<f64> = outs.iter().map(|o| o.fluxes[k] as f64 / horizon).collect();
            let (m, se) = mean_and_se(&flux);
            assert!(m.abs() <= 3.0 * se, "bond slot {k}: {m} ± {se}");
        }
    }

    #[test]
    fn martingale_has_mean_zero() {
        let rates = arc(16);
        let lattice = *rates.lattice();
        let gen = SparseGenerator::assemble(&rates);
        let h: Vec<f64> = (0..16).map(|x| (2.0 * PI * x as f64 / 16.0).cos()).collect();
        let lh: Vec<f64> = gen.apply(&h).unwrap().iter().map(|v| 256.0 * v).collect();
        let horizon = 0.1;
        let opts = RunOptions {
            horizon,
            sample_times: vec![0.0, horizon],
            pairing_fields: vec![h],
            integral_fields: vec![lh],
            ..Default::default()
        };
        let dynamics = Dynamics::new(&rates);
        let gamma = Profile::Step { axis: 0, start: 0.0, end: 0.5, high: 0.9, low: 0.1 };
        let m: Vec<f64> = ReplicaPlan::new(2000, 31).map(|_, rng| {
            let c0 = sample_initial(&gamma, &lattice, rng).unwrap();
            let out = dynamics.run(c0, &opts, rng).unwrap();
            out.series.values[1][0] - out.series.values[0][0] - out.integrals[0]
        });
        let (mean, se) = mean_and_se(&m);
        assert!(mean.abs() <= 4.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn quadratic_variation_bound_holds() {
        let rates = arc(16);
        let lattice = *rates.lattice();
        let h: Vec<f64> = (0..16).map(|x| (2.0 * PI * x as f64 / 16.0).cos()).collect();
        let horizon = 0.1;
        let bound = horizon * 1.0 / 16.0 * (2.0 * PI).powi(2);
        let dynamics = Dynamics::new(&rates);
        let opts = RunOptions { horizon, log_events: true, ..Default::default() };
        let gamma = Profile::Constant { density: 0.5 };
        let qv = ReplicaPlan::new(50, 2).map(|_, rng| {
            let c0 = sample_initial(&gamma, &lattice, rng).unwrap();
            let out = dynamics.run(c0, &opts, rng).unwrap();
            qv_estimate(out.log.as_ref().unwrap(), &h, &rates, horizon).unwrap()
        });
        assert!(qv.iter().all(|&q| q > 0.0 && q <= bound));
        let flat = vec![2.0; 16];
        let out = dynamics.run(Configuration::from_occupancy(&[true; 8].iter().chain(&[false; 8]).copied().collect::<Vec<_>>()), &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(qv_estimate(out.log.as_ref().unwrap(), &flat, &rates, horizon).unwrap(), 0.0);
    }

    #[test]
    fn same_seed_same_series() {
        let rates = arc(16);
        let lattice = *rates.lattice();
        let h: Vec<f64> = (0..16).map(|x| x as f64).collect();
        let opts = RunOptions {
            horizon: 0.2,
            sample_times: vec![0.0, 0.05, 0.1, 0.2],
            pairing_fields: vec![h],
            ..Default::default()
        };
        let plan = ReplicaPlan::new(8, 77);
        let go = || {
            plan.map(|_, rng| {
                let c0 = sample_initial(&Profile::Constant { density: 0.5 }, &lattice, rng).unwrap();
                run(c0, &rates, &opts, rng).unwrap().series
            })
        };
        assert_eq!(go(), go());
        let other = ReplicaPlan::new(8, 78);
        assert_ne!(plan.rng(0).next_u64(), other.rng(0).next_u64());
        assert_ne!(plan.rng(0).next_u64(), plan.rng(1).next_u64());
    }

    #[test]
    fn variance_scales_like_inverse_volume() {
        let gamma = Profile::Step { axis: 0, start: 0.0, end: 0.5, high: 0.8, low: 0.2 };
        let horizon = 0.05;
        let mut prev: Option<(f64, f64)> = None;
        for n in [8, 16, 32] {
            let rates = arc(n);
            let lattice = *rates.lattice();
            let h: Vec<f64> = (0..n).map(|x| (2.0 * PI * x as f64 / n as f64).cos()).collect();
            let dynamics = Dynamics::new(&rates);
            let opts = RunOptions { horizon, sample_times: vec![horizon], pairing_fields: vec![h], ..Default::default() };
            let replicas = 4000;
            let vals = ReplicaPlan::new(replicas, n as u64).map(|_, rng| {
                let c0 = sample_initial(&gamma, &lattice, rng).unwrap();
                dynamics.run(c0, &opts, rng).unwrap().series.values[0][0]
            });
            let sd = sample_sd(&vals);
            let var = sd * sd;
            // relative standard error of a sample variance, Gaussian approximation
            let rel_se = (2.0 / (replicas as f64 - 1.0)).sqrt();
            if let Some((pv, prel)) = prev {
                let ratio = var / pv;
                let slack = 4.0 * (rel_se * rel_se + prel * prel).sqrt();
                assert!(ratio <= 0.5 * (1.0 + slack), "N={n}: ratio {ratio}");
            }
            prev = Some((var, rel_se));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn count_is_cached_popcount(occ in prop::collection::vec(any::<bool>(), 1..200), seed in any::<u64>()) {
            let n = occ.len().max(4);
            let mut occ = occ;
            occ.resize(n, false);
            let c0 = Configuration::from_occupancy(&occ);
            prop_assert_eq!(c0.particle_count(), c0.popcount());
            let rates = ring(n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = run(c0.clone(), &rates, &RunOptions { horizon: 0.05, ..Default::default() }, &mut rng).unwrap();
            prop_assert_eq!(out.config.particle_count(), c0.particle_count());
            prop_assert_eq!(out.config.popcount(), c0.particle_count());
        }
    }
}
