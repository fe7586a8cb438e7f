#![allow(dead_code)]

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltreg::central::{evaluate_solution, voltages_from_angles};
use voltreg::flowgeom::{line_angle_bounds, line_flow};
use voltreg::netmodel::{load_network_file, BusRecord, LineRecord, NetworkDocument, NetworkTree, FORMAT_VERSION};
use voltreg::sdpcore::{HermitianMatrix, SdpProblem};

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn fixture(name: &str) -> NetworkTree {
    load_network_file(data(name)).unwrap()
}

fn bus(id: u64, p: (f64, f64), q: (f64, f64)) -> BusRecord {
    BusRecord { id, p_min: p.0, p_max: p.1, q_min: q.0, q_max: q.1, v_ref: None, shunt_b: None, v_max: None }
}

pub fn tree(buses: Vec<BusRecord>, lines: Vec<LineRecord>) -> NetworkTree {
    NetworkTree::from_document(NetworkDocument { version: FORMAT_VERSION, name: None, buses, lines }).unwrap()
}

/// Random tree with wide bounds; bus `k` hangs off a uniform earlier bus.
pub fn random_open_tree(rng: &mut ChaCha8Rng, n: usize) -> NetworkTree {
    let buses = (1..=n as u64).map(|id| bus(id, (-50.0, 50.0), (-50.0, 50.0))).collect();
    let lines = (2..=n as u64)
        .map(|k| {
            let g = rng.random_range(0.5..1.5);
            let b = g * rng.random_range(1.5..4.0);
            LineRecord { from: rng.random_range(1..k), to: k, g, b, p_flow_max: None, loss_max: None }
        })
        .collect();
    tree(buses, lines)
}

/// Random 2-4 bus tree that satisfies the exactness conditions and is feasible by
/// construction: bounds are drawn around a random operating point inside the angle limits.
pub fn exact_feasible_tree(rng: &mut ChaCha8Rng, n: usize) -> NetworkTree {
    let mut lines = Vec::new();
    for k in 2..=n as u64 {
        let g = rng.random_range(0.5..1.5);
        let b = g * rng.random_range(2.0..3.0);
        let theta_bar: f64 = rng.random_range(0.15..0.6);
        let p_flow_max = Some(line_flow(g, b, theta_bar).p_ik);
        lines.push(LineRecord { from: rng.random_range(1..k), to: k, g, b, p_flow_max, loss_max: None });
    }
    let open: Vec<BusRecord> = (1..=n as u64).map(|id| bus(id, (-50.0, 50.0), (-50.0, 50.0))).collect();
    let shape = tree(open, lines.clone());
    let bounds = line_angle_bounds(&shape);
    let angles: Vec<f64> = bounds.iter().map(|b| rng.random_range(-0.8..0.8) * b.theta_bar).collect();
    let eval = evaluate_solution(&shape, &voltages_from_angles(&shape, &angles));

    let mut buses = Vec::new();
    for (i, e) in eval.buses.iter().enumerate() {
        let beta = voltreg::flowgeom::beta(&shape, i, &bounds);
        let width = |rng: &mut ChaCha8Rng| rng.random_range(0.02..0.5);
        let p = (e.p - width(rng), e.p + width(rng));
        let q = (e.q.min(beta) - width(rng), e.q + width(rng));
        buses.push(bus(shape.bus(i).label, p, q));
    }
    tree(buses, lines)
}

/// Non-root active bounds of the 5-bus fixture scaled by independent factors in `[0.99, 1.01]`.
/// Seed 0 returns the fixture unchanged.
pub fn perturbed_feeder5(seed: u64) -> NetworkTree {
    let mut net = fixture("feeder5.json");
    if seed == 0 {
        return net;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 1..net.n() {
        let f = rng.random_range(0.99..=1.01);
        let b = net.bus_mut(i);
        b.p_min *= f;
        b.p_max *= f;
    }
    net
}

pub struct DiskInstance {
    pub problem: SdpProblem,
    pub objective: HermitianMatrix,
    pub constraint: Option<(HermitianMatrix, f64, f64)>,
}

fn random_hermitian2(rng: &mut ChaCha8Rng) -> HermitianMatrix {
    let mut m = HermitianMatrix::zeros(2);
    m.set(0, 0, Complex64::new(rng.random_range(-1.0..1.0), 0.0));
    m.set(1, 1, Complex64::new(rng.random_range(-1.0..1.0), 0.0));
    m.set(0, 1, Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    m
}

fn w_matrix(w: Complex64) -> HermitianMatrix {
    HermitianMatrix::from_upper_fn(2, |i, k| if i == k { Complex64::new(1.0, 0.0) } else { w })
}

/// Dim-2 problem with unit diagonal; every other instance carries one extra interval
/// row that is feasible around a random interior point of the disk.
pub fn disk_instance(rng: &mut ChaCha8Rng, k: usize) -> DiskInstance {
    let objective = random_hermitian2(rng);
    let mut problem = SdpProblem::new(objective.clone());
    problem.fix_diagonal(0, 1.0).fix_diagonal(1, 1.0);
    let mut constraint = None;
    if k % 2 == 1 {
        let b = random_hermitian2(rng);
        let w0 = Complex64::from_polar(rng.random_range(0.0..0.9), rng.random_range(0.0..std::f64::consts::TAU));
        let v = b.trace_product(&w_matrix(w0));
        let lo = v - rng.random_range(0.05..0.5);
        let hi = if k % 4 == 1 { f64::INFINITY } else { v + rng.random_range(0.05..0.5) };
        problem.interval(b.clone(), lo, hi);
        constraint = Some((b, lo, hi));
    }
    DiskInstance { problem, objective, constraint }
}

/// Minimum of `Tr(C W)` over `W = [[1, w], [w*, 1]]`, `|w| <= 1`, in closed form.
/// Both traces are affine in `w`, so the feasible set is the disk cut by a strip and
/// the minimum sits at the disk's own minimiser or at an end of a boundary chord.
pub fn disk_oracle(inst: &DiskInstance) -> f64 {
    let affine = |m: &HermitianMatrix| {
        let at = |w: Complex64| m.trace_product(&w_matrix(w));
        let base = at(Complex64::new(0.0, 0.0));
        (base, Complex64::new(at(Complex64::new(1.0, 0.0)) - base, at(Complex64::new(0.0, 1.0)) - base))
    };
    // Re(conj(u) w) is the directional part of an affine trace.
    let lin = |u: Complex64, w: Complex64| (u.conj() * w).re;
    let (c0, cu) = affine(&inst.objective);
    let mut candidates = vec![-cu / cu.norm().max(1e-300)];
    let mut cut = None;
    if let Some((b, lo, hi)) = &inst.constraint {
        let (b0, bu) = affine(b);
        for level in [*lo, *hi].into_iter().filter(|t| t.is_finite()) {
            // Points with Re(conj(bu) w) = level - b0 on the unit circle.
            let d = (level - b0) / bu.norm();
            if d.abs() <= 1.0 {
                let dir = bu / bu.norm();
                let h = (1.0 - d * d).sqrt();
                let perp = dir * Complex64::new(0.0, 1.0);
                candidates.push(dir * d + perp * h);
                candidates.push(dir * d - perp * h);
            }
        }
        cut = Some((b0, bu, *lo, *hi));
    }
    let slack = 1e-12;
    candidates
        .into_iter()
        .filter(|w| w.norm() <= 1.0 + slack)
        .filter(|w| cut.is_none_or(|(b0, bu, lo, hi)| {
            let v = b0 + lin(bu, *w);
            v >= lo - slack && v <= hi + slack
        }))
        .map(|w| c0 + lin(cu, w))
        .fold(f64::INFINITY, f64::min)
}
