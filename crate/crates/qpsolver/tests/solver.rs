//! End-to-end checks of the public solver API on hand-computed problems.

use qpsolver::{
    kkt_residuals, solve, ConvexProblem, ProblemError, QuadAtom, Row, Settings, Sign, Status,
    WarmStart,
};

fn settings() -> Settings {
    Settings::default()
}

fn assert_optimal(report: &qpsolver::SolveReport) {
    assert_eq!(report.status, Status::Optimal, "status: {:?}", report.status);
}

#[test]
fn unconstrained_shifted_square() {
    // minimize (x - 1)^2 = x^2 - 2x + 1
    let mut p = ConvexProblem::new(1);
    p.atoms.push(QuadAtom::square(1.0, 0));
    p.linear[0] = -2.0;
    p.offset = 1.0;
    let r = solve(&p, &settings(), None).unwrap();
    assert_optimal(&r);
    assert!((r.x[0] - 1.0).abs() < 1e-7, "x = {}", r.x[0]);
    assert!(r.objective.abs() < 1e-9, "obj = {}", r.objective);
}

#[test]
fn equality_constrained_qp() {
    // minimize x0^2 + x1^2 subject to x0 + x1 = 1; optimum (0.5, 0.5), y = -1.
    let mut p = ConvexProblem::new(2);
    p.atoms.push(QuadAtom::square(1.0, 0));
    p.atoms.push(QuadAtom::square(1.0, 1));
    p.rows.push(Row::new(vec![0, 1], vec![1.0, 1.0], 1.0, 1.0));
    let r = solve(&p, &settings(), None).unwrap();
    assert_optimal(&r);
    assert!((r.x[0] - 0.5).abs() < 1e-8);
    assert!((r.x[1] - 0.5).abs() < 1e-8);
    assert!((r.objective - 0.5).abs() < 1e-8);
    assert!((r.y[0] + 1.0).abs() < 1e-7, "dual = {}", r.y[0]);
    let kkt = kkt_residuals(&p, &r);
    assert!(kkt.primal < 1e-8 && kkt.dual < 1e-8, "kkt: {:?}", kkt);
}

#[test]
fn active_upper_bound() {
    // minimize (x - 2)^2 subject to x <= 1; optimum x = 1 with bound dual 2.
    let mut p = ConvexProblem::new(1);
    p.atoms.push(QuadAtom::square(1.0, 0));
    p.linear[0] = -4.0;
    p.offset = 4.0;
    p.bounds[0] = (f64::NEG_INFINITY, 1.0);
    let r = solve(&p, &settings(), None).unwrap();
    assert_optimal(&r);
    assert!((r.x[0] - 1.0).abs() < 1e-8);
    assert!((r.ybound[0] - 2.0).abs() < 1e-7, "ybound = {}", r.ybound[0]);
}

#[test]
fn small_lp_vertex() {
    // minimize -x0 - 2 x1 subject to x0 + x1 <= 1, x >= 0; optimum (0, 1).
    let mut p = ConvexProblem::new(2);
    p.linear = vec![-1.0, -2.0];
    p.rows.push(Row::new(vec![0, 1], vec![1.0, 1.0], f64::NEG_INFINITY, 1.0));
    p.bounds = vec![(0.0, f64::INFINITY), (0.0, f64::INFINITY)];
    let r = solve(&p, &settings(), None).unwrap();
    assert_optimal(&r);
    assert!(r.x[0].abs() < 1e-8, "x0 = {}", r.x[0]);
    assert!((r.x[1] - 1.0).abs() < 1e-8, "x1 = {}", r.x[1]);
    assert!((r.objective + 2.0).abs() < 1e-8);
}

#[test]
fn coupled_atom_objective() {
    // minimize (x0 - x1)^2 + (x0 - 3)^2; optimum x0 = x1 = 3.
    let mut p = ConvexProblem::new(2);
    p.atoms.push(QuadAtom { w: 1.0, i: 0, j: 1, sign: Sign::Minus });
    p.atoms.push(QuadAtom::square(1.0, 0));
    p.linear[0] = -6.0;
    p.offset = 9.0;
    let r = solve(&p, &settings(), None).unwrap();
    assert_optimal(&r);
    assert!((r.x[0] - 3.0).abs() < 1e-6, "x0 = {}", r.x[0]);
    assert!((r.x[1] - 3.0).abs() < 1e-6, "x1 = {}", r.x[1]);
    assert!(r.objective.abs() < 1e-8);
}

#[test]
fn primal_infeasible_lp() {
    // x >= 1 and x <= 0 cannot hold together.
    let mut p = ConvexProblem::new(1);
    p.linear[0] = 1.0;
    p.rows.push(Row::new(vec![0], vec![1.0], 1.0, f64::INFINITY));
    p.rows.push(Row::new(vec![0], vec![1.0], f64::NEG_INFINITY, 0.0));
    let r = solve(&p, &settings(), None).unwrap();
    assert_eq!(r.status, Status::PrimalInfeasible);
}

#[test]
fn dual_infeasible_lp() {
    // minimize -x with x >= 0 is unbounded below.
    let mut p = ConvexProblem::new(1);
    p.linear[0] = -1.0;
    p.bounds[0] = (0.0, f64::INFINITY);
    let r = solve(&p, &settings(), None).unwrap();
    assert_eq!(r.status, Status::DualInfeasible);
}

#[test]
fn quadratic_row_epigraph() {
    // minimize x1 subject to x0^2 - x1 <= 0 and x0 >= 0.5;
    // optimum (0.5, 0.25), row dual 1, lower-bound dual -1.
    let mut p = ConvexProblem::new(2);
    p.linear[1] = 1.0;
    let mut row = Row::new(vec![1], vec![-1.0], f64::NEG_INFINITY, 0.0);
    row.quad.push(QuadAtom::square(1.0, 0));
    p.rows.push(row);
    p.bounds[0] = (0.5, f64::INFINITY);
    let r = solve(&p, &settings(), None).unwrap();
    assert_optimal(&r);
    assert!((r.x[0] - 0.5).abs() < 1e-6, "x0 = {}", r.x[0]);
    assert!((r.x[1] - 0.25).abs() < 1e-6, "x1 = {}", r.x[1]);
    assert!((r.y[0] - 1.0).abs() < 1e-5, "row dual = {}", r.y[0]);
    assert!((r.ybound[0] + 1.0).abs() < 1e-5, "bound dual = {}", r.ybound[0]);
    let kkt = kkt_residuals(&p, &r);
    assert!(kkt.primal < 1e-7 && kkt.dual < 1e-7, "kkt: {:?}", kkt);
}

#[test]
fn quadratic_row_ball_constraint() {
    // minimize (x0 - 2)^2 + (x1 - 2)^2 subject to x0^2 + x1^2 <= 1;
    // optimum at (1, 1) / sqrt(2).
    let mut p = ConvexProblem::new(2);
    p.atoms.push(QuadAtom::square(1.0, 0));
    p.atoms.push(QuadAtom::square(1.0, 1));
    p.linear = vec![-4.0, -4.0];
    p.offset = 8.0;
    let mut row = Row::new(vec![], vec![], f64::NEG_INFINITY, 1.0);
    row.quad.push(QuadAtom::square(1.0, 0));
    row.quad.push(QuadAtom::square(1.0, 1));
    p.rows.push(row);
    let r = solve(&p, &settings(), None).unwrap();
    assert_optimal(&r);
    let root = 1.0 / 2.0_f64.sqrt();
    assert!((r.x[0] - root).abs() < 1e-6, "x0 = {}", r.x[0]);
    assert!((r.x[1] - root).abs() < 1e-6, "x1 = {}", r.x[1]);
    // Multiplier from stationarity: 2(x - 2) + 2 lambda x = 0.
    let expect = (2.0 - root) / root;
    assert!((r.y[0] - expect).abs() < 1e-5, "dual = {}", r.y[0]);
}

#[test]
fn redundant_duplicate_rows_still_solve() {
    let mut p = ConvexProblem::new(2);
    p.atoms.push(QuadAtom::square(1.0, 0));
    p.atoms.push(QuadAtom::square(1.0, 1));
    p.linear = vec![-2.0, -2.0];
    for _ in 0..3 {
        p.rows.push(Row::new(vec![0, 1], vec![1.0, 1.0], f64::NEG_INFINITY, 1.0));
    }
    let r = solve(&p, &settings(), None).unwrap();
    assert_optimal(&r);
    assert!((r.x[0] - 0.5).abs() < 1e-7);
    assert!((r.x[1] - 0.5).abs() < 1e-7);
}

#[test]
fn warm_start_is_deterministic_and_fast() {
    let mut p = ConvexProblem::new(2);
    p.atoms.push(QuadAtom::square(1.0, 0));
    p.atoms.push(QuadAtom::square(1.0, 1));
    p.linear = vec![-4.0, -4.0];
    p.offset = 8.0;
    let mut row = Row::new(vec![], vec![], f64::NEG_INFINITY, 1.0);
    row.quad.push(QuadAtom::square(1.0, 0));
    row.quad.push(QuadAtom::square(1.0, 1));
    p.rows.push(row);
    let cold = solve(&p, &settings(), None).unwrap();
    let warm = WarmStart::from_report(&cold);
    let hot1 = solve(&p, &settings(), Some(&warm)).unwrap();
    let hot2 = solve(&p, &settings(), Some(&warm)).unwrap();
    assert_eq!(hot1.x, hot2.x);
    assert_eq!(hot1.iterations, hot2.iterations);
    assert!(hot1.iterations <= cold.iterations);
    for (a, b) in cold.x.iter().zip(&hot1.x) {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn repeated_cold_solves_are_bitwise_identical() {
    let mut p = ConvexProblem::new(3);
    p.atoms.push(QuadAtom::square(2.0, 0));
    p.atoms.push(QuadAtom { w: 0.5, i: 1, j: 2, sign: Sign::Plus });
    p.linear = vec![1.0, -2.0, 0.25];
    p.rows.push(Row::new(vec![0, 1, 2], vec![1.0, 1.0, 1.0], 1.0, 1.0));
    p.bounds = vec![(0.0, 1.0); 3];
    let a = solve(&p, &settings(), None).unwrap();
    let b = solve(&p, &settings(), None).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.objective, b.objective);
}

#[test]
fn validation_rejects_malformed_input() {
    let mut p = ConvexProblem::new(2);
    p.rows.push(Row::new(vec![5], vec![1.0], 0.0, 1.0));
    assert_eq!(solve(&p, &settings(), None).unwrap_err(), ProblemError::VarIndex(5, 2));

    let mut p = ConvexProblem::new(1);
    p.atoms.push(QuadAtom { w: -1.0, i: 0, j: 0, sign: Sign::Plus });
    assert!(matches!(solve(&p, &settings(), None), Err(ProblemError::AtomWeight(_))));

    let mut p = ConvexProblem::new(1);
    let mut row = Row::new(vec![0], vec![1.0], 0.0, 1.0);
    row.quad.push(QuadAtom::square(1.0, 0));
    p.rows.push(row);
    assert!(matches!(solve(&p, &settings(), None), Err(ProblemError::QuadRowBounds(0))));
}

#[test]
fn textfmt_round_trip_is_exact() {
    let mut p = ConvexProblem::new(3);
    p.atoms.push(QuadAtom::square(1.25, 0));
    p.atoms.push(QuadAtom { w: 0.1, i: 0, j: 2, sign: Sign::Minus });
    p.linear = vec![0.1 + 0.2, -1.0 / 3.0, 0.0];
    p.offset = -2.5e-3;
    p.bounds[0] = (0.0, 1.0);
    p.bounds[2] = (f64::NEG_INFINITY, 7.0);
    let mut row = Row::new(vec![0, 1], vec![1.0 / 7.0, -2.0], f64::NEG_INFINITY, 0.5);
    row.quad.push(QuadAtom { w: 3.0, i: 1, j: 2, sign: Sign::Plus });
    p.rows.push(row);
    p.rows.push(Row::new(vec![2], vec![1.0], -1.0, 1.0));
    let text = qpsolver::textfmt::dump(&p);
    let back = qpsolver::textfmt::parse(&text).unwrap();
    assert_eq!(p, back);
    assert_eq!(text, qpsolver::textfmt::dump(&back));
}

#[test]
fn textfmt_reports_errors_with_line_numbers() {
    assert!(qpsolver::textfmt::parse("").is_err());
    assert!(qpsolver::textfmt::parse("qp 1\n").is_err());
    let bad = "qp 1\nvars 2\nq 9 1.0\n";
    let err = qpsolver::textfmt::parse(bad).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{}", err);
}
