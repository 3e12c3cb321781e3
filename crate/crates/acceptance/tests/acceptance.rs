//! Release acceptance: one test per criterion, each named after what it
//! checks, so the harness output reads as the pass/fail checklist.

use acceptance::{
    lp_oracle_objective, peaked_pmc, qp_oracle_objective, random_lp, random_mdp, random_pmc,
    random_qp, reach_spec, sample_in_box,
};
use pmdp::encode::{
    build_qcqp, convexify_ccp, linearize_scp, update_ccp_anchor, update_scp_anchor, Anchor,
    SCP_TAU,
};
use pmdp::gen::gridworld;
use pmdp::mc::{check_spec, reach_prob, McMethod, Opt};
use pmdp::model::{Direction, ParametricMdp, SpecKind, Specification};
use pmdp::synth::{
    run_ccp, run_pso, run_scp, run_scp_regularized, CcpConfig, NotFoundReason, PsoConfig,
    RegConfig, ScpConfig, SynthesisOutcome, SynthesisStatus, DELTA_MAX, PENALTY_EXIT,
};
use qpsolver::{kkt_residuals, solve, ConvexProblem, Settings, Status};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn chain_model() -> ParametricMdp {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../examples/fig2.pmdp");
    let text = std::fs::read_to_string(path).expect("example model ships with the repo");
    pmdp_cli::fmt::parse_model(&text).expect("example model parses")
}

fn chain_spec(model: &ParametricMdp, text: &str) -> Specification {
    pmdp_cli::fmt::parse_spec(text, model).expect("spec parses")
}

#[test]
fn criterion_01_value_iteration_and_lp_reachability_agree() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..200 {
        let (mdp, targets) = random_mdp(&mut rng);
        let opt = if case % 2 == 0 { Opt::Maximize } else { Opt::Minimize };
        let vi = reach_prob(&mdp, &targets, opt, McMethod::ValueIteration).unwrap();
        let lp = reach_prob(&mdp, &targets, opt, McMethod::Lp).unwrap();
        for (s, (a, b)) in vi.per_state.iter().zip(&lp.per_state).enumerate() {
            assert!(
                (a - b).abs() <= 1e-7,
                "case {case} state {s}: value iteration {a} vs lp {b}"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "200 dual checks took {elapsed:?}");
}

#[test]
fn criterion_02_chain_reachability_matches_the_closed_form() {
    let model = chain_model();
    let spec = chain_spec(&model, "P >= 0.14 [F target]");
    for i in 1..=9 {
        let v = f64::from(i) / 10.0;
        let inst = model.instantiate(&[v]).unwrap();
        let res = check_spec(&inst, &spec).unwrap();
        assert!(
            (res.at_initial - v * v * (1.0 - v)).abs() <= 1e-9,
            "v = {v}: checker {} vs closed form {}",
            res.at_initial,
            v * v * (1.0 - v)
        );
    }
}

#[test]
fn criterion_03_ccp_rows_are_exact_at_the_anchor_and_overestimate_elsewhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..50 {
        let model = random_pmc(&mut rng);
        let dirn = if case % 2 == 0 { Direction::AtMost } else { Direction::AtLeast };
        let spec = reach_spec(&model, dirn, 0.5);
        let enc = build_qcqp(&model, &spec, 1e-6).unwrap();
        let bounds = model.param_intervals(1e-6).unwrap();
        let dir = match dirn {
            Direction::AtMost => 1.0,
            Direction::AtLeast => -1.0,
        };
        let base = enc.wd_rows.len() + 1;
        let nx = enc.num_vars();
        for _ in 0..20 {
            // A consistent point: parameters inside the box, probability
            // variables at the checker's values for the instantiated chain.
            let params = sample_in_box(&mut rng, &bounds, 0.05);
            let inst = model.instantiate(&params).unwrap();
            let res =
                reach_prob(&inst, &spec.target_set, Opt::Maximize, McMethod::ValueIteration)
                    .unwrap();
            let probs: Vec<f64> =
                enc.indexing.prob_states.iter().map(|&s| res.per_state[s]).collect();
            let anchor = Anchor { params: params.clone(), probs: probs.clone() };
            let problem = convexify_ccp(&enc, &anchor, 1.0);
            let mut x = vec![0.0; problem.num_vars];
            x[..enc.num_params].copy_from_slice(&params);
            x[enc.num_params..nx].copy_from_slice(&probs);
            for (k, row) in enc.bellman.iter().enumerate() {
                let prow = &problem.rows[base + k];
                let own = enc.indexing.index_of_state[row.state].unwrap();
                let f = dir * (enc.row_rhs(row, &params, &probs) - probs[own]);
                let g = prow.value(&x) - prow.hi;
                assert!((g - f).abs() <= 1e-9, "case {case} row {k}: not exact at the anchor");
                assert!(
                    prow.hi - prow.value(&x) >= -1e-9,
                    "case {case} row {k}: consistent point infeasible with zero penalty"
                );
            }
            // Over-estimation against the original bilinear row anywhere else.
            let params2 = sample_in_box(&mut rng, &bounds, 0.0);
            let probs2: Vec<f64> =
                (0..enc.num_prob_vars()).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let mut x2 = vec![0.0; problem.num_vars];
            x2[..enc.num_params].copy_from_slice(&params2);
            x2[enc.num_params..nx].copy_from_slice(&probs2);
            for (k, row) in enc.bellman.iter().enumerate() {
                let prow = &problem.rows[base + k];
                let own = enc.indexing.index_of_state[row.state].unwrap();
                let f = dir * (enc.row_rhs(row, &params2, &probs2) - probs2[own]);
                let g = prow.value(&x2) - prow.hi;
                assert!(g >= f - 1e-9, "case {case} row {k}: surrogate fell below the row");
            }
        }
    }
}

/// Counts the penalty-free iterates in a trace, asserting that every one of
/// them carries an accepting model-check result.
fn audit_penalty_free(out: &SynthesisOutcome, label: &str) -> usize {
    let mut penalty_free = 0usize;
    for rec in &out.trace {
        let Some(ps) = rec.penalty_sum else { continue };
        if ps <= PENALTY_EXIT {
            penalty_free += 1;
            assert!(
                rec.mc_value.is_some() && rec.accepted,
                "{label} iteration {}: penalty-free iterate failed its re-check",
                rec.index
            );
        }
    }
    penalty_free
}

#[test]
fn criterion_04_penalty_free_ccp_exits_survive_independent_rechecks() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut runs = 0usize;
    let mut penalty_free = 0usize;
    for case in 0..40 {
        let model = random_pmc(&mut rng);
        let bounds = model.param_intervals(1e-6).unwrap();
        let v0 = sample_in_box(&mut rng, &bounds, 0.1);
        let inst = model.instantiate(&v0).unwrap();
        let goal = model.label_states("goal").unwrap();
        let reach = reach_prob(&inst, goal, Opt::Maximize, McMethod::ValueIteration)
            .unwrap()
            .at_initial;
        let spec = if case % 2 == 0 {
            reach_spec(&model, Direction::AtMost, (reach + 0.4 * (1.0 - reach)).min(0.999))
        } else {
            reach_spec(&model, Direction::AtLeast, (reach * 0.9).max(1e-4))
        };
        let cfg = CcpConfig { seed: case as u64, ..CcpConfig::default() };
        let out = run_ccp(&model, &spec, &cfg).unwrap();
        runs += 1;
        penalty_free += audit_penalty_free(&out, &format!("case {case}"));
    }
    // Interior-peak models with thresholds a hair under the peak keep the
    // model checker unsatisfied until the penalty weight has pinned the
    // slack, so a healthy share of these runs terminate through the
    // penalty-free gate and keep the audit material rather than incidental.
    for case in 0..30 {
        let dir = if case % 2 == 0 { Direction::AtLeast } else { Direction::AtMost };
        let model = peaked_pmc(&mut rng, dir);
        let goal = model.label_states("goal").unwrap();
        let bounds = model.param_intervals(1e-6).unwrap();
        let at = |v: f64| {
            let inst = model.instantiate(&[v]).unwrap();
            reach_prob(&inst, goal, Opt::Maximize, McMethod::ValueIteration)
                .unwrap()
                .at_initial
        };
        let best = at(2.0 / 3.0);
        let edge = 0.5 * (at(bounds[0].0) + at(bounds[0].1));
        let frac: f64 = rng.gen_range(0.9985..0.9995);
        let spec = reach_spec(&model, dir, edge + frac * (best - edge));
        let cfg = CcpConfig { seed: 100 + case as u64, ..CcpConfig::default() };
        let out = run_ccp(&model, &spec, &cfg).unwrap();
        runs += 1;
        assert!(out.status.is_feasible(), "peaked case {case} missed a feasible threshold");
        penalty_free += audit_penalty_free(&out, &format!("peaked case {case}"));
    }
    assert!(runs >= 65, "suite shrank to {runs} runs");
    assert!(penalty_free >= 6, "audit is vacuous: {penalty_free} penalty-free iterates");
}

#[test]
fn criterion_05_every_method_certifies_both_chain_thresholds() {
    let model = chain_model();
    for text in ["P <= 0.1 [F target]", "P >= 0.14 [F target]"] {
        let spec = chain_spec(&model, text);
        for method in ["ccp", "scp", "pso"] {
            let started = Instant::now();
            let out = match method {
                "ccp" => run_ccp(&model, &spec, &CcpConfig { max_iters: 100, ..CcpConfig::default() }),
                "scp" => run_scp(&model, &spec, &ScpConfig { max_iters: 100, ..ScpConfig::default() }),
                _ => run_pso(&model, &spec, &PsoConfig { max_iters: 100, ..PsoConfig::default() }),
            }
            .unwrap();
            let elapsed = started.elapsed();
            assert!(elapsed.as_secs_f64() < 5.0, "{method} on {text} took {elapsed:?}");
            assert!(out.iterations <= 100);
            let SynthesisStatus::Feasible(v, res) = &out.status else {
                panic!("{method} found nothing for {text}");
            };
            assert!(res.satisfied);
            if spec.direction == Direction::AtLeast {
                assert!(
                    (0.546 - 1e-3..=0.782 + 1e-3).contains(&v[0]),
                    "{method} certified v = {} outside the root interval",
                    v[0]
                );
            }
        }
    }
}

#[test]
fn criterion_06_unattainable_threshold_never_certifies() {
    let model = chain_model();
    let spec = chain_spec(&model, "P >= 0.2 [F target]");
    for seed in 0..20u64 {
        let ccp = run_ccp(&model, &spec, &CcpConfig { seed, ..CcpConfig::default() }).unwrap();
        assert!(!ccp.status.is_feasible(), "ccp certified the impossible at seed {seed}");
        let pso = run_pso(&model, &spec, &PsoConfig { seed, ..PsoConfig::default() }).unwrap();
        assert!(!pso.status.is_feasible(), "pso certified the impossible at seed {seed}");
        let scp = run_scp(&model, &spec, &ScpConfig::default()).unwrap();
        assert!(!scp.status.is_feasible(), "scp certified the impossible");
        let reg = run_scp_regularized(&model, &spec, &RegConfig::default()).unwrap();
        assert!(!reg.status.is_feasible(), "regularized scp certified the impossible");
    }
}

fn audit_scp_trace(out: &SynthesisOutcome, spec: &Specification, cfg: &ScpConfig, label: &str) {
    assert_eq!(out.trace.len(), out.iterations, "{label}: trace rows");
    if out.iterations == 0 {
        return;
    }
    let mut last_accepted: Option<f64> = None;
    for rec in &out.trace {
        let delta = rec.delta.unwrap_or_else(|| panic!("{label}: record without delta"));
        assert!(delta >= cfg.omega, "{label}: iterate ran below the trust floor");
        assert!(rec.penalty_sum.is_none() && rec.tau.is_none(), "{label}: foreign fields set");
        if rec.accepted {
            let mc = rec.mc_value.unwrap_or_else(|| panic!("{label}: accepted without a check"));
            if let Some(prev) = last_accepted {
                match spec.direction {
                    Direction::AtMost => {
                        assert!(mc < prev, "{label}: accepted value moved away ({prev} -> {mc})")
                    }
                    Direction::AtLeast => {
                        assert!(mc > prev, "{label}: accepted value moved away ({prev} -> {mc})")
                    }
                }
            }
            last_accepted = Some(mc);
        }
    }
    for pair in out.trace.windows(2) {
        let d0 = pair[0].delta.unwrap();
        let d1 = pair[1].delta.unwrap();
        if pair[0].accepted {
            let grown = d0 * cfg.gamma;
            let expected = if grown > DELTA_MAX { DELTA_MAX } else { grown };
            assert!(d1 == expected, "{label}: growth step {d0} -> {d1}");
        } else {
            assert!(d1 == d0 / cfg.gamma, "{label}: shrink step {d0} -> {d1}");
        }
    }
    let last = out.trace.last().unwrap();
    match &out.status {
        SynthesisStatus::Feasible(_, res) => {
            assert!(last.accepted && res.satisfied, "{label}: feasible exit without a satisfied step");
        }
        SynthesisStatus::NotFound(NotFoundReason::TrustRegionCollapsed) => {
            assert!(
                !last.accepted && last.delta.unwrap() / cfg.gamma < cfg.omega,
                "{label}: collapse exit without a collapsing shrink"
            );
        }
        SynthesisStatus::NotFound(NotFoundReason::IterationCap) => {
            assert_eq!(out.iterations, cfg.max_iters, "{label}: cap exit before the cap");
        }
        other => panic!("{label}: unexpected termination {other:?}"),
    }
}

#[test]
fn criterion_07_scp_traces_follow_the_update_discipline() {
    let cfg = ScpConfig::default();
    let model = chain_model();
    for text in ["P <= 0.1 [F target]", "P >= 0.14 [F target]", "P >= 0.2 [F target]"] {
        let spec = chain_spec(&model, text);
        let out = run_scp(&model, &spec, &cfg).unwrap();
        audit_scp_trace(&out, &spec, &cfg, text);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for case in 0..30 {
        let pmc = random_pmc(&mut rng);
        let bounds = pmc.param_intervals(1e-6).unwrap();
        let v0 = sample_in_box(&mut rng, &bounds, 0.1);
        let inst = pmc.instantiate(&v0).unwrap();
        let goal = pmc.label_states("goal").unwrap();
        let reach = reach_prob(&inst, goal, Opt::Maximize, McMethod::ValueIteration)
            .unwrap()
            .at_initial;
        let spec = if case % 2 == 0 {
            reach_spec(&pmc, Direction::AtMost, (reach + 0.1).min(0.999))
        } else {
            reach_spec(&pmc, Direction::AtLeast, (reach * 0.8).max(1e-4))
        };
        let out = run_scp(&pmc, &spec, &cfg).unwrap();
        audit_scp_trace(&out, &spec, &cfg, &format!("random chain {case}"));
    }
}

#[test]
fn criterion_08_solver_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let settings = Settings::default();
    for case in 0..100 {
        let quadratic = case % 5 < 3;
        let problem = if quadratic { random_qp(&mut rng) } else { random_lp(&mut rng) };
        let oracle = if quadratic {
            qp_oracle_objective(&problem).expect("qp oracle finds a minimum")
        } else {
            lp_oracle_objective(&problem).expect("lp oracle finds a minimum")
        };
        let report = solve(&problem, &settings, None).unwrap();
        assert_eq!(report.status, Status::Optimal, "case {case}");
        assert!(
            (report.objective - oracle).abs() <= 1e-6,
            "case {case}: solver {} vs oracle {}",
            report.objective,
            oracle
        );
        let kkt = kkt_residuals(&problem, &report);
        assert!(
            kkt.primal <= 1e-8 && kkt.dual <= 1e-8 && kkt.complementarity <= 1e-8,
            "case {case}: residuals {kkt:?}"
        );
    }
}

fn count_scalar_differences(a: &ConvexProblem, b: &ConvexProblem) -> usize {
    assert_eq!(a.num_vars, b.num_vars);
    assert_eq!(a.rows.len(), b.rows.len());
    let mut diff = 0;
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.cols, rb.cols);
        assert_eq!(ra.quad, rb.quad);
        diff += ra.vals.iter().zip(&rb.vals).filter(|(x, y)| x != y).count();
        diff += usize::from(ra.lo != rb.lo);
        diff += usize::from(ra.hi != rb.hi);
    }
    diff += a.linear.iter().zip(&b.linear).filter(|(x, y)| x != y).count();
    for ((l0, h0), (l1, h1)) in a.bounds.iter().zip(&b.bounds) {
        diff += usize::from(l0 != l1);
        diff += usize::from(h0 != h1);
    }
    diff + usize::from(a.offset != b.offset)
}

#[test]
fn criterion_09_anchor_updates_equal_rebuilds() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let settings = Settings::default();
    for case in 0..50 {
        let model = random_pmc(&mut rng);
        let (dirn, threshold) = if case % 2 == 0 {
            (Direction::AtMost, 0.8)
        } else {
            (Direction::AtLeast, 0.2)
        };
        let spec = reach_spec(&model, dirn, threshold);
        let enc = build_qcqp(&model, &spec, 1e-6).unwrap();
        let bounds = model.param_intervals(1e-6).unwrap();
        let nv = enc.num_prob_vars();
        let mut draw = |rng: &mut ChaCha8Rng| Anchor {
            params: sample_in_box(rng, &bounds, 0.02),
            probs: (0..nv).map(|_| rng.gen_range(0.3..=0.9)).collect(),
        };

        let a0 = draw(&mut rng);
        let a1 = draw(&mut rng);
        let t0 = rng.gen_range(0.05..5.0);
        let t1 = rng.gen_range(0.05..5.0);
        let mut updated = convexify_ccp(&enc, &a0, t0);
        update_ccp_anchor(&mut updated, &enc, &a1, t1).unwrap();
        let rebuilt = convexify_ccp(&enc, &a1, t1);
        assert!(updated == rebuilt, "case {case}: ccp update differs from rebuild");
        let ru = solve(&updated, &settings, None).unwrap();
        let rr = solve(&rebuilt, &settings, None).unwrap();
        assert_eq!(ru.status, Status::Optimal, "case {case}");
        for (x, y) in ru.x.iter().zip(&rr.x) {
            assert!((x - y).abs() <= 1e-9, "case {case}: ccp solutions diverge");
        }

        let b0 = draw(&mut rng);
        let b1 = draw(&mut rng);
        let d0 = rng.gen_range(0.5..4.0);
        let d1 = rng.gen_range(0.5..4.0);
        let mut supdated = linearize_scp(&enc, &b0, d0, SCP_TAU);
        update_scp_anchor(&mut supdated, &enc, &b1, d1, SCP_TAU).unwrap();
        let srebuilt = linearize_scp(&enc, &b1, d1, SCP_TAU);
        assert!(supdated == srebuilt, "case {case}: scp update differs from rebuild");
        let su = solve(&supdated, &settings, None).unwrap();
        let sr = solve(&srebuilt, &settings, None).unwrap();
        assert_eq!(su.status, Status::Optimal, "case {case}");
        for (x, y) in su.x.iter().zip(&sr.x) {
            assert!((x - y).abs() <= 1e-9, "case {case}: scp solutions diverge");
        }

        // Refreshing only the trust radius rewrites exactly the two bound
        // entries of every trust row and nothing else.
        let mut shifted = srebuilt.clone();
        update_scp_anchor(&mut shifted, &enc, &b1, d1 * 1.5, SCP_TAU).unwrap();
        let refreshed = linearize_scp(&enc, &b1, d1 * 1.5, SCP_TAU);
        assert!(shifted == refreshed, "case {case}: delta refresh differs from rebuild");
        let touched = count_scalar_differences(&srebuilt, &refreshed);
        assert_eq!(
            touched,
            2 * (nv + enc.trust_transitions.len()),
            "case {case}: delta refresh footprint"
        );
    }
}

#[test]
fn criterion_10_scp_certifies_the_benchmark_grid_within_budget() {
    let model = gridworld(25, 20);
    assert_eq!(model.num_states, 500);
    assert_eq!(model.num_params(), 50);
    let bounds = model.rectangular_region(1e-6).unwrap();
    let goal = model.label_states("goal").unwrap().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut best = 0.0f64;
    for _ in 0..100 {
        let v = sample_in_box(&mut rng, &bounds, 0.0);
        let inst = model.instantiate(&v).unwrap();
        let r = reach_prob(&inst, &goal, Opt::Maximize, McMethod::ValueIteration)
            .unwrap()
            .at_initial;
        best = best.max(r);
    }
    assert!(best > 0.0);
    let lambda = 0.95 * best;
    let spec = Specification {
        kind: SpecKind::ReachProbability,
        direction: Direction::AtLeast,
        threshold: lambda,
        target_set: goal,
    };

    let cfg = ScpConfig::default();
    let started = Instant::now();
    let out = run_scp(&model, &spec, &cfg).unwrap();
    let scp_elapsed = started.elapsed();
    audit_scp_trace(&out, &spec, &cfg, "grid");
    assert!(scp_elapsed.as_secs_f64() < 120.0, "scp took {scp_elapsed:?}");
    let SynthesisStatus::Feasible(v, res) = &out.status else {
        panic!("scp missed threshold {lambda}");
    };
    assert!(res.satisfied && res.at_initial >= lambda - 1e-9);
    assert!(model.check_graph_preserving(v, 1e-6));

    // Swarm search under the same wall-clock budget; tracked, not asserted.
    let pso_cfg = PsoConfig {
        max_iters: 10_000,
        time_budget: Some(scp_elapsed),
        ..PsoConfig::default()
    };
    let pso_started = Instant::now();
    let pout = run_pso(&model, &spec, &pso_cfg).unwrap();
    let pso_elapsed = pso_started.elapsed();
    let pso_result = match &pout.status {
        SynthesisStatus::Feasible(_, r) => format!("feasible at {:.6}", r.at_initial),
        SynthesisStatus::NotFound(reason) => format!("nothing found ({reason:?})"),
    };
    println!(
        "grid 25x20: sampled best {best:.6}, threshold {lambda:.6}; \
         scp certified {:.6} in {scp_elapsed:.2?} ({} iterations); \
         pso with the same budget: {pso_result} in {pso_elapsed:.2?} ({} iterations)",
        res.at_initial, out.iterations, pout.iterations
    );
}
