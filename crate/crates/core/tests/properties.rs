mod common;

use common::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltreg::flowgeom::{active_ellipse_residual, angle_bounds, apply_map, beta, ellipse_map, line_angle_bounds, line_flow};
use voltreg::netmodel::{admittance_matrix, incidence_matrix, injection_operators, line_flow_operator, line_loss_operator, NetworkTree};
use voltreg::sdpcore::{solve_sdp, HermitianMatrix, SdpStatus, SdpTolerances};

fn voltages(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::from_polar(rng.random_range(0.9..1.1), rng.random_range(-0.5..0.5))).collect()
}

fn net_and_v(seed: u64, n: usize) -> (NetworkTree, Vec<Complex64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_open_tree(&mut rng, n);
    let v = voltages(&mut rng, n);
    (net, v)
}

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn injections_sum_to_line_losses(seed in any::<u64>(), n in 2usize..9) {
        let (net, v) = net_and_v(seed, n);
        let w = HermitianMatrix::outer(&v);
        let y = admittance_matrix(&net);
        let injected: f64 = (0..n).map(|i| injection_operators(&y, i).0.trace_product(&w)).sum();
        let lost: f64 = net.lines().iter().map(|l| line_loss_operator(&net, l.from, l.to).unwrap().trace_product(&w)).sum();
        prop_assert!((injected - lost).abs() <= 1e-12 * (1.0 + lost.abs()));
        prop_assert!(lost >= -1e-14);
    }

    #[test]
    fn operators_reproduce_complex_power(seed in any::<u64>(), n in 2usize..9) {
        let (net, v) = net_and_v(seed, n);
        let w = HermitianMatrix::outer(&v);
        let y = admittance_matrix(&net);
        for i in 0..n {
            let yv: Complex64 = (0..n).map(|k| y[(i, k)] * v[k]).sum();
            let s = v[i] * yv.conj();
            let (a, b) = injection_operators(&y, i);
            prop_assert!((a.trace_product(&w) - s.re).abs() <= 1e-12);
            prop_assert!((b.trace_product(&w) - s.im).abs() <= 1e-12);
        }
    }

    #[test]
    fn injection_formula_is_hermitian(seed in any::<u64>(), n in 2usize..9) {
        let (net, _) = net_and_v(seed, n);
        let y = admittance_matrix(&net);
        for i in 0..n {
            let mut e = DMatrix::<Complex64>::zeros(n, n);
            e[(i, i)] = Complex64::new(1.0, 0.0);
            let a = (y.adjoint() * &e + &e * &y) * Complex64::new(0.5, 0.0);
            let b = (y.adjoint() * &e - &e * &y) * Complex64::new(0.0, -0.5);
            prop_assert!(HermitianMatrix::hermitian_defect(&a) <= 1e-14);
            prop_assert!(HermitianMatrix::hermitian_defect(&b) <= 1e-14);
        }
    }

    #[test]
    fn incidence_maps_flows_to_injections(seed in any::<u64>(), n in 2usize..9) {
        let (net, v) = net_and_v(seed, n);
        let w = HermitianMatrix::outer(&v);
        let y = admittance_matrix(&net);
        let mut f = nalgebra::DVector::zeros(2 * (n - 1));
        for (l, line) in net.lines().iter().enumerate() {
            f[2 * l] = line_flow_operator(&net, line.from, line.to).unwrap().trace_product(&w);
            f[2 * l + 1] = line_flow_operator(&net, line.to, line.from).unwrap().trace_product(&w);
        }
        let p = incidence_matrix(&net) * f;
        for i in 0..n {
            prop_assert!((p[i] - injection_operators(&y, i).0.trace_product(&w)).abs() <= 1e-12);
        }
    }

    #[test]
    fn flows_lie_on_the_ellipse(g in 0.1f64..2.0, ratio in 1.01f64..5.0, theta in -3.1f64..3.1) {
        let b = g * ratio;
        let f = line_flow(g, b, theta);
        let q = apply_map(&ellipse_map(g, b), (f.p_ik, f.p_ki));
        prop_assert!((q.0 - f.q_ik).abs() <= 1e-9 && (q.1 - f.q_ki).abs() <= 1e-9);
        prop_assert!(active_ellipse_residual(g, b, (f.p_ik, f.p_ki)).abs() <= 1e-9);
    }

    #[test]
    fn flow_angle_limit_inverts_the_flow(g in 0.1f64..2.0, ratio in 1.01f64..5.0, frac in 1e-3f64..0.999) {
        let b = g * ratio;
        let p_flow_max = frac * (g + g.hypot(b));
        let ab = angle_bounds(g, b, p_flow_max, f64::INFINITY).unwrap();
        prop_assert!((line_flow(g, b, ab.theta_p).p_ik - p_flow_max).abs() <= 1e-9);
    }

    #[test]
    fn beta_bounds_reactive_injection(seed in any::<u64>(), n in 3usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_open_tree(&mut rng, n);
        let bounds = line_angle_bounds(&net);
        for i in 1..n {
            let pl = net.parent_line(i).unwrap();
            let line = &net.lines()[pl];
            let mut q = line_flow(line.g, line.b, rng.random_range(0.0..=bounds[pl].theta_tilde)).q_ki;
            for &c in net.children(i) {
                let cl = net.parent_line(c).unwrap();
                let t = bounds[cl].theta_tilde;
                let line = &net.lines()[cl];
                q += line_flow(line.g, line.b, rng.random_range(-t..=t)).q_ik;
            }
            prop_assert!(q >= beta(&net, i, &bounds) - 1e-12);
        }
    }

    #[test]
    fn disk_problems_match_the_closed_form(seed in any::<u64>(), k in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = disk_instance(&mut rng, k);
        let sol = solve_sdp(&inst.problem, &SdpTolerances::default()).unwrap();
        prop_assert_eq!(sol.status, SdpStatus::Optimal);
        let exact = disk_oracle(&inst);
        prop_assert!((sol.objective - exact).abs() <= 1e-4, "sdp {} closed form {}", sol.objective, exact);
        for h in &sol.history {
            prop_assert!(h.dual_bound.is_some_and(|d| d <= exact + 1e-9));
        }
    }
}

#[test]
fn feeder5_admittance_is_symmetric_and_sparse() {
    let net = fixture("feeder5.json");
    let y = admittance_matrix(&net);
    for i in 0..net.n() {
        for k in 0..net.n() {
            assert_eq!(y[(i, k)], y[(k, i)]);
            if i != k && net.line_between(i, k).is_none() {
                assert_eq!(y[(i, k)], Complex64::new(0.0, 0.0));
            }
        }
    }
}
