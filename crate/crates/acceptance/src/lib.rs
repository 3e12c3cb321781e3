//! Oracles and generators backing the acceptance suite.
//!
//! Everything here stays independent of the code paths it checks: linear
//! systems go through a dense LU, optima come from exhaustive active-set or
//! vertex enumeration, and models are assembled directly from their public
//! constructors.

use pmdp::model::{
    ActionDef, AffineExpr, Direction, Mdp, MdpAction, ParametricMdp, Rational, SpecKind,
    Specification, StateId,
};
use num_traits::{One, Zero};
use qpsolver::{ConvexProblem, QuadAtom, Row, Sign};
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Solves `a x = b` by LU with partial pivoting; `None` when singular.
pub fn lu_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x: Vec<f64> = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| {
            m[r][col].abs().partial_cmp(&m[s][col].abs()).expect("finite")
        })?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= m[col][col];
        for r in 0..col {
            x[r] -= m[r][col] * x[col];
        }
    }
    Some(x)
}

fn dense_hessian(p: &ConvexProblem) -> Vec<Vec<f64>> {
    let n = p.num_vars;
    let mut h = vec![vec![0.0; n]; n];
    for a in &p.atoms {
        if a.i == a.j {
            h[a.i][a.i] += 2.0 * a.w;
        } else {
            let s = a.sign.factor();
            h[a.i][a.i] += 2.0 * a.w;
            h[a.j][a.j] += 2.0 * a.w;
            h[a.i][a.j] += 2.0 * s * a.w;
            h[a.j][a.i] += 2.0 * s * a.w;
        }
    }
    h
}

fn feasible_point(p: &ConvexProblem, x: &[f64], tol: f64) -> bool {
    if x.iter().any(|v| !v.is_finite()) {
        return false;
    }
    for (i, &(lo, hi)) in p.bounds.iter().enumerate() {
        if x[i] < lo - tol || x[i] > hi + tol {
            return false;
        }
    }
    p.rows.iter().all(|r| {
        let v = r.linear_value(x);
        v >= r.lo - tol && v <= r.hi + tol
    })
}

/// Minimum objective of a strictly convex QP with one-sided linear rows and
/// free variables, by enumerating every active set and filtering on
/// multiplier signs and primal feasibility. Exponential in the row count:
/// oracle use only.
pub fn qp_oracle_objective(p: &ConvexProblem) -> Option<f64> {
    let n = p.num_vars;
    let m = p.rows.len();
    assert!(m <= 16, "active-set enumeration needs few rows");
    for r in &p.rows {
        assert!(r.quad.is_empty() && r.lo == f64::NEG_INFINITY);
    }
    for &(lo, hi) in &p.bounds {
        assert!(lo == f64::NEG_INFINITY && hi == f64::INFINITY);
    }
    let h = dense_hessian(p);
    let mut best: Option<f64> = None;
    for mask in 0u32..1 << m {
        let active: Vec<usize> = (0..m).filter(|&r| mask >> r & 1 == 1).collect();
        let dim = n + active.len();
        let mut a = vec![vec![0.0; dim]; dim];
        let mut b = vec![0.0; dim];
        for i in 0..n {
            a[i][..n].copy_from_slice(&h[i]);
            b[i] = -p.linear[i];
        }
        for (t, &r) in active.iter().enumerate() {
            let row = &p.rows[r];
            for (&c, &v) in row.cols.iter().zip(&row.vals) {
                a[c][n + t] = v;
                a[n + t][c] = v;
            }
            b[n + t] = row.hi;
        }
        let Some(sol) = lu_solve(&a, &b) else { continue };
        if sol[n..].iter().any(|&lambda| lambda < -1e-9) {
            continue;
        }
        let x = &sol[..n];
        if !feasible_point(p, x, 1e-9) {
            continue;
        }
        let obj = p.objective_value(x);
        if best.map_or(true, |cur| obj < cur) {
            best = Some(obj);
        }
    }
    best
}

/// Minimum objective of a box-bounded LP by enumerating candidate vertices:
/// every full-rank n-subset of tight constraints drawn from the rows at
/// their upper bounds plus the variable bounds.
pub fn lp_oracle_objective(p: &ConvexProblem) -> Option<f64> {
    let n = p.num_vars;
    assert!(p.atoms.is_empty());
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in &p.rows {
        assert!(r.quad.is_empty() && r.lo == f64::NEG_INFINITY);
        let mut c = vec![0.0; n];
        for (&j, &v) in r.cols.iter().zip(&r.vals) {
            c[j] = v;
        }
        planes.push((c, r.hi));
    }
    for (i, &(lo, hi)) in p.bounds.iter().enumerate() {
        assert!(lo.is_finite() && hi.is_finite(), "vertex search needs a box");
        let mut c = vec![0.0; n];
        c[i] = 1.0;
        planes.push((c.clone(), lo));
        planes.push((c, hi));
    }
    let mut best: Option<f64> = None;
    for_each_combination(planes.len(), n, &mut |subset| {
        let a: Vec<Vec<f64>> = subset.iter().map(|&i| planes[i].0.clone()).collect();
        let b: Vec<f64> = subset.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = lu_solve(&a, &b) {
            if feasible_point(p, &x, 1e-9) {
                let obj = p.objective_value(&x);
                if best.map_or(true, |cur| obj < cur) {
                    best = Some(obj);
                }
            }
        }
    });
    best
}

fn for_each_combination(total: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, total: usize, left: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if left == 0 {
            f(cur);
            return;
        }
        for i in start..=total - left {
            cur.push(i);
            rec(i + 1, total, left - 1, cur, f);
            cur.pop();
        }
    }
    if k <= total {
        rec(0, total, k, &mut Vec::new(), f);
    }
}

/// Strictly convex QP with free variables and 1 to 8 one-sided rows, all
/// strictly satisfiable at a hidden interior point.
pub fn random_qp(rng: &mut impl Rng) -> ConvexProblem {
    let n = rng.gen_range(2..=10);
    let mut p = ConvexProblem::new(n);
    for i in 0..n {
        p.atoms.push(QuadAtom::square(rng.gen_range(0.5..2.0), i));
        p.linear[i] = rng.gen_range(-2.0..2.0);
    }
    for _ in 0..rng.gen_range(0..=n / 2) {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n);
        while j == i {
            j = rng.gen_range(0..n);
        }
        let sign = if rng.gen_bool(0.5) { Sign::Plus } else { Sign::Minus };
        p.atoms.push(QuadAtom { w: rng.gen_range(0.1..1.0), i, j, sign });
    }
    p.offset = rng.gen_range(-1.0..1.0);
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for _ in 0..rng.gen_range(1..=8) {
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hi = vals.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>() + rng.gen_range(0.1..1.0);
        p.rows.push(Row::new((0..n).collect(), vals, f64::NEG_INFINITY, hi));
    }
    p
}

/// Box-bounded LP with 1 to 6 one-sided rows, strictly satisfiable at a
/// hidden interior point; small enough for exact vertex enumeration.
pub fn random_lp(rng: &mut impl Rng) -> ConvexProblem {
    let n = rng.gen_range(2..=5);
    let mut p = ConvexProblem::new(n);
    let mut x0 = Vec::with_capacity(n);
    for i in 0..n {
        p.linear[i] = rng.gen_range(-2.0..2.0);
        let lo = rng.gen_range(-2.0..-0.5);
        let hi = rng.gen_range(0.5..2.0);
        p.bounds[i] = (lo, hi);
        x0.push(rng.gen_range(lo * 0.9..hi * 0.9));
    }
    p.offset = rng.gen_range(-1.0..1.0);
    for _ in 0..rng.gen_range(1..=6) {
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hi = vals.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>() + rng.gen_range(0.1..1.0);
        p.rows.push(Row::new((0..n).collect(), vals, f64::NEG_INFINITY, hi));
    }
    p
}

/// Random concrete MDP with up to 50 states and 3 actions per state, plus a
/// nonempty random target set.
pub fn random_mdp(rng: &mut impl Rng) -> (Mdp, BTreeSet<StateId>) {
    let n = rng.gen_range(2..=50);
    let mut actions = Vec::with_capacity(n);
    for _ in 0..n {
        let mut acts = Vec::with_capacity(3);
        for _ in 0..rng.gen_range(1..=3) {
            let k = rng.gen_range(2..=n.min(4));
            let mut succ: BTreeSet<StateId> = BTreeSet::new();
            while succ.len() < k {
                succ.insert(rng.gen_range(0..n));
            }
            let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let transitions: Vec<(StateId, f64)> = succ
                .iter()
                .copied()
                .zip(weights.iter().map(|w| w / total))
                .collect();
            acts.push(MdpAction { cost: 0.0, transitions });
        }
        actions.push(acts);
    }
    let mut targets: BTreeSet<StateId> = BTreeSet::new();
    targets.insert(rng.gen_range(0..n));
    for s in 0..n {
        if rng.gen_bool(0.1) {
            targets.insert(s);
        }
    }
    (Mdp { initial: 0, actions, labels: BTreeMap::new() }, targets)
}

/// Random small pMC: forward-only transitions into an absorbing target
/// (labelled `goal`) and an absorbing sink, rows that sum to one exactly
/// because every parametric term appears as a cancelling pair, and one
/// parameter per row entry so the well-defined region stays a box.
pub fn random_pmc(rng: &mut impl Rng) -> ParametricMdp {
    let n = rng.gen_range(4..=10);
    let np = rng.gen_range(1..=2);
    let target = n - 1;
    let sink = n - 2;
    let mut actions = Vec::with_capacity(n);
    for s in 0..n {
        if s == sink || s == target {
            actions.push(vec![ActionDef {
                name: "stay".to_string(),
                cost: Rational::zero(),
                transitions: vec![(s, AffineExpr::constant(Rational::one()))],
            }]);
            continue;
        }
        let mut succs: BTreeSet<StateId> = BTreeSet::from([target]);
        let extra = rng.gen_range(1..=2).min(n - s - 2);
        while succs.len() < 1 + extra {
            succs.insert(rng.gen_range(s + 1..target));
        }
        let succs: Vec<StateId> = succs.into_iter().collect();
        let k = succs.len();
        let weights: Vec<i64> = (0..k).map(|_| rng.gen_range(3..=9)).collect();
        let total: i64 = weights.iter().sum();
        let mut exprs: Vec<AffineExpr> = weights
            .iter()
            .map(|&w| AffineExpr::constant(Rational::new(w.into(), total.into())))
            .collect();
        // One cancelling pair of parametric terms per state; base masses of
        // at least 3/27 dominate the 1/16 swing, so the box has volume.
        let i = rng.gen_range(0..k);
        let mut j = rng.gen_range(0..k);
        while j == i {
            j = rng.gen_range(0..k);
        }
        let t = Rational::new(1.into(), rng.gen_range(16i64..=32).into());
        exprs[i].add_term(t.clone(), s % np);
        exprs[j].add_term(-t, s % np);
        let transitions = succs.into_iter().zip(exprs).collect();
        actions.push(vec![ActionDef {
            name: "go".to_string(),
            cost: Rational::zero(),
            transitions,
        }]);
    }
    let mut labels = BTreeMap::new();
    labels.insert("goal".to_string(), BTreeSet::from([target]));
    ParametricMdp {
        param_names: (0..np).map(|i| format!("p{i}")).collect(),
        num_states: n,
        initial: 0,
        actions,
        labels,
        has_costs: false,
    }
}

/// Three-hop pMC whose reach probability attains its best value for
/// `direction` strictly inside the parameter box: `q v^2 (1 - v)` peaking at
/// `v = 2/3` for lower bounds, its complement bottoming out there for upper
/// bounds. Both box edges are maximally unfavorable, so one-step relaxations
/// get misled and iterative schemes must walk the anchor in and tighten
/// consistency before they can certify thresholds near the interior optimum.
pub fn peaked_pmc(rng: &mut impl Rng, direction: Direction) -> ParametricMdp {
    let q = Rational::new(rng.gen_range(2i64..=4).into(), 4.into());
    let qv = AffineExpr::term(q, 0);
    let mut not_qv = AffineExpr::constant(Rational::one());
    not_qv.sub_assign(&qv);
    let v = AffineExpr::term(Rational::one(), 0);
    let mut not_v = AffineExpr::constant(Rational::one());
    not_v.sub_assign(&v);
    // States: 0 forks on q v, 1 and 2 take the later hops, 3 sinks, 4 is the
    // goal.
    let rows: [Vec<(StateId, AffineExpr)>; 3] = match direction {
        Direction::AtLeast => [
            vec![(1, qv), (3, not_qv)],
            vec![(2, v.clone()), (3, not_v.clone())],
            vec![(3, v), (4, not_v)],
        ],
        Direction::AtMost => [
            vec![(1, qv), (4, not_qv)],
            vec![(2, v.clone()), (4, not_v.clone())],
            vec![(3, not_v), (4, v)],
        ],
    };
    let step = |transitions| {
        vec![ActionDef { name: "step".to_string(), cost: Rational::zero(), transitions }]
    };
    let stay = |s: StateId| {
        vec![ActionDef {
            name: "stay".to_string(),
            cost: Rational::zero(),
            transitions: vec![(s, AffineExpr::constant(Rational::one()))],
        }]
    };
    let [fork, mid, last] = rows;
    let mut labels = BTreeMap::new();
    labels.insert("goal".to_string(), BTreeSet::from([4]));
    ParametricMdp {
        param_names: vec!["v".to_string()],
        num_states: 5,
        initial: 0,
        actions: vec![step(fork), step(mid), step(last), stay(3), stay(4)],
        labels,
        has_costs: false,
    }
}

/// Reachability query against the generator's `goal` label.
pub fn reach_spec(model: &ParametricMdp, direction: Direction, threshold: f64) -> Specification {
    Specification {
        kind: SpecKind::ReachProbability,
        direction,
        threshold,
        target_set: model.label_states("goal").expect("generator labels its target").clone(),
    }
}

/// Uniform sample from a box, pulled inward by `inset` of each side length.
pub fn sample_in_box(rng: &mut impl Rng, bounds: &[(f64, f64)], inset: f64) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| {
            let pad = (hi - lo) * inset;
            rng.gen_range(lo + pad..=hi - pad)
        })
        .collect()
}
