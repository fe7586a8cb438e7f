use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netmodel::{BusRecord, LineRecord, NetworkDocument, NetworkError, NetworkTree, FORMAT_VERSION};

/// Ranges for a random radial feeder with a wide-bounded substation at bus 1
/// and net-consumer loads elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeederSpec {
    pub buses: usize,
    pub g: (f64, f64),
    pub b_over_g: (f64, f64),
    /// Magnitude of the smallest demand, `-p_max`.
    pub demand: (f64, f64),
    /// Width of the active-power interval.
    pub demand_width: (f64, f64),
    pub q_max: (f64, f64),
    pub root_bound: f64,
}

impl FeederSpec {
    pub fn new(buses: usize) -> Self {
        Self {
            buses,
            g: (0.5, 1.5),
            b_over_g: (2.0, 3.0),
            demand: (0.02, 0.1),
            demand_width: (0.02, 0.4),
            q_max: (0.2, 0.6),
            root_bound: 5.0,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Each bus `k > 1` attaches to a uniformly chosen earlier bus.
pub fn random_feeder(spec: &FeederSpec, seed: u64) -> Result<NetworkTree, NetworkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = spec.root_bound;
    let mut buses = vec![BusRecord { id: 1, p_min: -r, p_max: r, q_min: -r, q_max: r, v_ref: None, shunt_b: None, v_max: None }];
    let mut lines = Vec::new();
    for k in 2..=spec.buses as u64 {
        let hi = -draw(&mut rng, spec.demand);
        let lo = hi - draw(&mut rng, spec.demand_width);
        let q_max = draw(&mut rng, spec.q_max);
        buses.push(BusRecord { id: k, p_min: lo, p_max: hi, q_min: 0.0, q_max, v_ref: None, shunt_b: None, v_max: None });
        let parent = rng.random_range(1..k);
        let g = draw(&mut rng, spec.g);
        let b = g * draw(&mut rng, spec.b_over_g);
        lines.push(LineRecord { from: parent, to: k, g, b, p_flow_max: None, loss_max: None });
    }
    NetworkTree::from_document(NetworkDocument {
        version: FORMAT_VERSION,
        name: Some(format!("random feeder, {} buses, seed {seed}", spec.buses)),
        buses,
        lines,
    })
}
