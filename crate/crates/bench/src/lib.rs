//! Models shared by the criterion benches in `benches/`.

use orbe_core::benchmarks::{gen_gridworld, GridworldConfig};
use orbe_core::Rmdp;

/// The square s-rectangular gridworld used by the experiment matrix.
pub fn gridworld(states: usize, nu: f64, seed: u64) -> Rmdp {
    let cfg = GridworldConfig { nu, seed, ..GridworldConfig::square(states).expect("square size") };
    gen_gridworld(&cfg).expect("gridworld generates")
}
