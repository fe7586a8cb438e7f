use super::*;
use crate::central::{solve_and_classify, CentralSettings};
use crate::netmodel::load_network;

fn two_bus(p2: (f64, f64), p_flow_max: f64) -> NetworkTree {
    load_network(&format!(
        r#"{{"version":1,"buses":[
            {{"id":1,"p_min":-10,"p_max":10,"q_min":-10,"q_max":10}},
            {{"id":2,"p_min":{},"p_max":{},"q_min":-10,"q_max":10}}],
          "lines":[{{"from":1,"to":2,"g":1,"b":2,"p_flow_max":{p_flow_max}}}]}}"#,
        p2.0, p2.1
    ))
    .unwrap()
}

fn chain3() -> NetworkTree {
    load_network(
        r#"{"version":1,"buses":[
            {"id":1,"p_min":-10,"p_max":10,"q_min":-10,"q_max":10},
            {"id":2,"p_min":-0.3,"p_max":-0.1,"q_min":0,"q_max":0.5},
            {"id":3,"p_min":-0.3,"p_max":-0.1,"q_min":0,"q_max":0.5}],
          "lines":[{"from":1,"to":2,"g":1,"b":2.5},{"from":2,"to":3,"g":1,"b":2.5}]}"#,
    )
    .unwrap()
}

fn feeder5() -> NetworkTree {
    crate::netmodel::load_network_file(concat!(env!("CARGO_MANIFEST_DIR"), "/data/feeder5.json")).unwrap()
}

fn central(net: &NetworkTree) -> f64 {
    solve_and_classify(net, &CentralSettings::default()).unwrap().classification.relaxed_objective().unwrap()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn zero_multipliers_leave_objective_unchanged() {
    let net = chain3();
    let mult = MultiplierState::zeros(&net);
    for bus in 0..net.n() {
        let a = BusAgent::new(&net, bus);
        assert_eq!(augmented_objective(&a, &mult), a.a_local);
    }
}

#[test]
fn one_multiplier_changes_two_conjugate_entries() {
    let net = chain3();
    let mut mult = MultiplierState::zeros(&net);
    mult.lambda[0] = c(0.05, 0.0);
    let a = BusAgent::new(&net, 1);
    let diff = augmented_objective(&a, &mult).as_matrix() - a.a_local.as_matrix();
    let changed: Vec<(usize, usize)> =
        (0..3).flat_map(|i| (0..3).map(move |k| (i, k))).filter(|&(i, k)| diff[(i, k)].norm() > 0.0).collect();
    assert_eq!(changed, vec![(0, 1), (1, 0)]);
    assert!((diff[(0, 1)].norm() - 0.05).abs() < 1e-15);
    assert_eq!(diff[(0, 1)], diff[(1, 0)].conj());
}

#[test]
fn separability_identity_and_hermitian_objectives() {
    let net = feeder5();
    let mut mult = MultiplierState::zeros(&net);
    for (l, lam) in mult.lambda.iter_mut().enumerate() {
        *lam = c(0.1 * l as f64 - 0.13, 0.07 + 0.02 * l as f64);
    }
    let angles = [0.0, -0.05, -0.09, -0.12, -0.07];
    let v: Vec<Complex64> = angles.iter().map(|&t| Complex64::from_polar(1.0, t)).collect();
    let global = HermitianMatrix::outer(&v);
    let (mut plain, mut augmented) = (0.0, 0.0);
    for bus in 0..net.n() {
        let a = BusAgent::new(&net, bus);
        let w = global.submatrix(&a.clique);
        let m = augmented_objective(&a, &mult);
        assert!(HermitianMatrix::hermitian_defect(m.as_matrix()) <= 1e-12);
        plain += a.a_local.trace_product(&w);
        augmented += m.trace_product(&w);
    }
    assert!((plain - augmented).abs() <= 1e-10, "{plain} vs {augmented}");
}

#[test]
fn multiplier_update_examples() {
    assert_eq!(update_multiplier(c(0.0, 0.0), c(0.1, 0.0), c(0.0, 0.0), 0.5), c(0.05, 0.0));
    let lam = c(0.3, -0.2);
    assert_eq!(update_multiplier(lam, c(0.4, 0.1), c(0.4, 0.1), 0.7), lam);

    let net = two_bus((-1.0, -0.5), 5.0);
    let mut mult = MultiplierState::zeros(&net);
    mult.lambda[0] = update_multiplier(mult.lambda[0], c(0.0, 0.1), c(0.0, 0.0), 0.5);
    assert!((mult.get(&net, 0, 1).unwrap() - c(0.0, 0.05)).norm() < 1e-15);
    assert!((mult.get(&net, 1, 0).unwrap() - c(0.0, -0.05)).norm() < 1e-15);
}

#[test]
fn square_root_schedule() {
    let cfg = RunConfig { alpha0: 1.0, decay: 0.5, ..RunConfig::default() };
    assert_eq!(step_size(0, &cfg), 1.0);
    assert_eq!(step_size(3, &cfg), 0.5);
    assert!(step_size(10_000, &cfg) < 0.011);
    let constant = RunConfig { schedule: StepSchedule::Constant, ..cfg };
    assert_eq!(step_size(99, &constant), 1.0);
}

#[test]
fn config_validation() {
    assert!(RunConfig::default().validate().is_ok());
    assert_eq!(RunConfig { delta: 0.0, ..RunConfig::default() }.validate(), Err(ConfigError::NonPositive("delta")));
    assert_eq!(RunConfig { max_iters: 0, ..RunConfig::default() }.validate(), Err(ConfigError::NoIterations));
    assert!(RunConfig { decay: 1.5, ..RunConfig::default() }.validate().is_err());
}

#[test]
fn enhancement_intervals() {
    let net = load_network(
        r#"{"version":1,"buses":[
            {"id":1,"p_min":-10,"p_max":10,"q_min":-10,"q_max":10},
            {"id":2,"p_min":-1,"p_max":-0.5,"q_min":-10,"q_max":10}],
          "lines":[{"from":1,"to":2,"g":1,"b":2,"p_flow_max":1}]}"#,
    )
    .unwrap();
    let mult = MultiplierState::zeros(&net);
    for (bus, lo, hi) in [(0, 0.0, 1.0), (1, -1.0, 0.0)] {
        let agent = BusAgent::new(&net, bus);
        let mut sub = build_subproblem(&agent, &mult);
        let row = sub.flow_rows[0].1.unwrap();
        assert_eq!((sub.problem.intervals[row].lo, sub.problem.intervals[row].hi), (-1.0, 1.0));
        apply_direction_enhancement(&mut sub, &agent, 0).unwrap();
        let r = &sub.problem.intervals[row];
        assert_eq!((r.lo, r.hi), (lo, hi));
    }
}

#[test]
fn enhancement_refused_with_a_producer() {
    let net = two_bus((-1.0, 0.2), 5.0);
    let cfg = RunConfig { enhance_direction: true, ..RunConfig::default() };
    let err = run_distributed(&net, &cfg, &mut PerfectChannel).unwrap_err();
    assert_eq!(err, DualError::Enhancement(EnhancementError::NotConsumer { bus: 2, p_max: 0.2 }));
}

#[test]
fn window_test_thresholds() {
    let constant: VecDeque<f64> = std::iter::repeat_n(-0.3, 11).collect();
    assert!(window_converged(&constant, 10, 1e-4));
    assert!(!window_converged(&constant.iter().copied().take(10).collect(), 10, 1e-4));
    let oscillating: VecDeque<f64> = (0..11).map(|t| if t % 2 == 0 { 1.0 } else { 1.01 }).collect();
    assert!(!window_converged(&oscillating, 10, 1e-4));
}

#[test]
fn chain_fixes_from_the_far_leaf() {
    let net = chain3();
    let cfg = RunConfig::default();
    let mut agents = build_agents(&net, &cfg);
    let mult = MultiplierState::zeros(&net);
    for a in agents.iter_mut() {
        let sub = build_subproblem(a, &mult);
        a.w = solve_sdp(&sub.problem, &cfg.sdp).unwrap().w;
        for _ in 0..=cfg.window {
            a.record_history(cfg.window);
        }
    }
    assert_eq!(leaf_fixing_step(&net, &mut agents, &cfg), vec![2]);
    assert_eq!(agents[1].fixed_edges.len(), 1);
    assert!(agents[1].p_history.is_empty());
    for _ in 0..=cfg.window {
        agents[1].record_history(cfg.window);
    }
    assert_eq!(leaf_fixing_step(&net, &mut agents, &cfg), vec![1]);
    assert_eq!(agents[0].status, AgentStatus::Active);
}

#[test]
fn infeasibility_detector_rules() {
    let cfg = RunConfig::default();
    let alphas = vec![0.1; 60];
    let decreasing: Vec<Vec<f64>> = (0..60).map(|t| vec![0.9f64.powi(t)]).collect();
    assert!(!detect_global_infeasibility(&decreasing, &alphas, &cfg).suspected);
    let pinned: Vec<Vec<f64>> = vec![vec![1e-6, 0.3]; 50];
    let v = detect_global_infeasibility(&pinned, &alphas[..50], &cfg);
    assert!(v.suspected);
    assert_eq!(v.line, Some(1));
    assert!(!detect_global_infeasibility(&pinned[..49], &alphas[..49], &cfg).suspected);
    let tiny = vec![1e-9; 50];
    assert!(!detect_global_infeasibility(&pinned, &tiny, &cfg).suspected);
}

#[test]
fn two_bus_matches_central() {
    let net = two_bus((-1.0, -0.5), 5.0);
    let reference = central(&net);
    let r = run_distributed(&net, &RunConfig::default(), &mut PerfectChannel).unwrap();
    assert!(r.converged, "{:?}", r.status);
    assert!((r.objective - reference).abs() <= 5e-3 * reference);
    assert!(r.mismatch.iter().all(|&m| m <= 1e-4));
}

#[test]
fn dual_sum_never_exceeds_central() {
    let net = feeder5();
    let reference = central(&net);
    let r = run_distributed(&net, &RunConfig::default(), &mut PerfectChannel).unwrap();
    assert!(r.converged);
    for row in &r.trace {
        assert!(row.objective <= reference + 1e-6, "round {}: {}", row.iteration, row.objective);
    }
    let mut csv = Vec::new();
    r.write_trace(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), r.trace.len() + 1);
}

#[test]
fn isolated_contradiction_is_caught_locally() {
    let net = two_bus((10.0, 12.0), 50.0);
    let r = run_distributed(&net, &RunConfig::default(), &mut PerfectChannel).unwrap();
    assert_eq!(r.status, RunStatus::Infeasible { bus: 2 });
    assert_eq!(r.iterations, 1);
    assert!(!r.converged);
}

#[test]
fn hot_start_on_identical_problem() {
    let net = two_bus((-1.0, -0.5), 5.0);
    let cfg = RunConfig::default();
    let first = run_distributed(&net, &cfg, &mut PerfectChannel).unwrap();
    assert!(first.converged);
    let init = hot_start(&first, &net).unwrap();
    let again = run_distributed_from(&net, &cfg, &mut PerfectChannel, Some(init)).unwrap();
    assert!(again.converged);
    assert!(again.iterations <= 2, "{}", again.iterations);
}

#[test]
fn hot_start_rejects_other_topology() {
    let net = two_bus((-1.0, -0.5), 5.0);
    let first = run_distributed(&net, &RunConfig::default(), &mut PerfectChannel).unwrap();
    assert_eq!(hot_start(&first, &chain3()).unwrap_err(), DualError::TopologyMismatch);
}

#[test]
fn stitched_voltages_reproduce_the_loss() {
    let net = two_bus((-1.0, -0.5), 5.0);
    let r = run_distributed(&net, &RunConfig::default(), &mut PerfectChannel).unwrap();
    let v = r.voltages.as_ref().unwrap();
    assert_eq!(v[0].im, 0.0);
    assert!((r.recovered_loss.unwrap() - central(&net)).abs() < 1e-3);
}

#[test]
fn rank_two_instance_is_flagged() {
    let net = load_network(
        r#"{"version":1,"buses":[
            {"id":1,"p_min":0.05,"p_max":10,"q_min":-10,"q_max":10},
            {"id":2,"p_min":0.05,"p_max":10,"q_min":-10,"q_max":10}],
          "lines":[{"from":1,"to":2,"g":1,"b":2,"p_flow_max":5}]}"#,
    )
    .unwrap();
    let r = run_distributed(&net, &RunConfig::default(), &mut PerfectChannel).unwrap();
    assert!(r.infeasibility_suspected.is_some_and(|v| v.suspected));
    assert!(!r.converged);
}
