//! Measures simulated events per second on a d = 2 circle lattice.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slowbond_core::engine::{sample_initial, Dynamics, Profile, RunOptions};
use slowbond_core::geometry::Membrane;
use slowbond_core::lattice::{RateField, TorusLattice};

fn main() {
    let side: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let lattice = TorusLattice::new(2, side).unwrap();
    let rates = RateField::build(lattice, &Membrane::ball(vec![0.5, 0.5], 0.25).unwrap()).unwrap();
    let dynamics = Dynamics::new(&rates);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gamma = Profile::Step { axis: 0, start: 0.0, end: 0.5, high: 0.8, low: 0.2 };
    let c0 = sample_initial(&gamma, &lattice, &mut rng).unwrap();
    let opts = RunOptions { horizon: 0.1, sample_times: vec![0.1], pairing_fields: vec![vec![1.0; lattice.sites()]], ..Default::default() };
    let start = Instant::now();
    let out = dynamics.run(c0, &opts, &mut rng).unwrap();
    let secs = start.elapsed().as_secs_f64();
    println!("N={side}: {} events in {secs:.3} s, {:.1} ns/event", out.events, secs * 1e9 / out.events as f64);
}
