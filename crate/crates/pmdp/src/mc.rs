//! Probabilistic model checking for instantiated MDPs: reachability
//! probabilities and expected total costs, by value iteration with a
//! two-phase lower/upper stopping rule or by a linear-programming route
//! through the convex solver. The two methods are independent on purpose;
//! cross-checking them is part of the verification story.

use crate::graph::{classify_mdp, Quantifier, StateClassification};
use crate::model::{Direction, Mdp, SpecKind, Specification, StateId};
use qpsolver::{ConvexProblem, Row, Settings, Status};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Scheduler optimum to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opt {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McMethod {
    ValueIteration,
    Lp,
}

/// Stopping tolerance of the value-iteration phases.
pub const VI_STOP: f64 = 1e-10;
/// Hard cap on Bellman applications before giving up.
pub const VI_CAP: usize = 1_000_000;
/// Residual bound the returned values must satisfy.
pub const BELLMAN_RESIDUAL: f64 = 1e-8;
/// Boundary tolerance of `satisfied`, granted in the spec's favor.
pub const SAT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("value iteration did not converge within {0} Bellman applications")]
    NonConvergence(usize),
    /// States whose expected cost is infinite because the goal is reached
    /// with probability strictly between 0 and 1 under the optimizing
    /// scheduler.
    #[error("expected cost diverges at states {0:?}")]
    InfiniteCost(Vec<StateId>),
    #[error("inner solve failed: {0}")]
    Solver(String),
}

/// Values of one check. `satisfied` is meaningful when produced by
/// [`check_spec`]; the raw value routines set it vacuously true.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub per_state: Vec<f64>,
    pub at_initial: f64,
    pub satisfied: bool,
}

/// Classification quantifier whose substitutions are exact for `opt`.
fn reach_quantifier(opt: Opt) -> Quantifier {
    match opt {
        Opt::Maximize => Quantifier::Forall,
        Opt::Minimize => Quantifier::Exists,
    }
}

/// For costs the finiteness precondition flips: a finite maximum needs every
/// scheduler to reach the goals, a finite minimum needs some scheduler to.
fn cost_quantifier(opt: Opt) -> Quantifier {
    match opt {
        Opt::Maximize => Quantifier::Exists,
        Opt::Minimize => Quantifier::Forall,
    }
}

/// Optimal reachability probability of `targets` per state.
pub fn reach_prob(
    mdp: &Mdp,
    targets: &BTreeSet<StateId>,
    opt: Opt,
    method: McMethod,
) -> Result<CheckResult, McError> {
    let class = classify_mdp(mdp, targets, reach_quantifier(opt));
    let base = reach_base(mdp.num_states(), &class);
    let per_state = match method {
        McMethod::ValueIteration => {
            vi_solve(mdp, &class.remaining, base, opt, false, 1.0)?
        }
        McMethod::Lp => lp_solve(mdp, &class.remaining, base, opt, false)?,
    };
    Ok(finish(mdp, per_state))
}

/// Optimal expected total cost to reach `goals` per state. Goal states cost
/// zero; states that cannot reach the goals at all carry an infinity flag;
/// states that reach them with probability in (0, 1) under the optimizing
/// scheduler make the cost diverge and are reported as an error.
pub fn expected_cost(
    mdp: &Mdp,
    goals: &BTreeSet<StateId>,
    opt: Opt,
    method: McMethod,
) -> Result<CheckResult, McError> {
    let class = classify_mdp(mdp, goals, cost_quantifier(opt));
    if !class.remaining.is_empty() {
        return Err(McError::InfiniteCost(
            class.remaining.iter().copied().collect(),
        ));
    }
    let n = mdp.num_states();
    let mut base = vec![None; n];
    for &s in &class.prob0 {
        base[s] = Some(f64::INFINITY);
    }
    for &s in goals {
        base[s] = Some(0.0);
    }
    let vars: BTreeSet<StateId> = (0..n).filter(|s| base[*s].is_none()).collect();
    let scale = 1.0 + max_cost(mdp) * n as f64;
    let per_state = match method {
        McMethod::ValueIteration => vi_solve(mdp, &vars, base, opt, true, scale)?,
        McMethod::Lp => lp_solve(mdp, &vars, base, opt, true)?,
    };
    Ok(finish(mdp, per_state))
}

/// Decides `spec` on `mdp` by value iteration, with the boundary tolerance
/// granted in the spec's favor.
pub fn check_spec(mdp: &Mdp, spec: &Specification) -> Result<CheckResult, McError> {
    check_spec_with(mdp, spec, McMethod::ValueIteration)
}

pub fn check_spec_with(
    mdp: &Mdp,
    spec: &Specification,
    method: McMethod,
) -> Result<CheckResult, McError> {
    let opt = match spec.direction {
        Direction::AtMost => Opt::Maximize,
        Direction::AtLeast => Opt::Minimize,
    };
    let mut res = match spec.kind {
        SpecKind::ReachProbability => reach_prob(mdp, &spec.target_set, opt, method)?,
        SpecKind::ExpectedCost => expected_cost(mdp, &spec.target_set, opt, method)?,
    };
    res.satisfied = satisfied(spec.direction, res.at_initial, spec.threshold);
    Ok(res)
}

pub fn satisfied(direction: Direction, value: f64, threshold: f64) -> bool {
    match direction {
        Direction::AtMost => value <= threshold + SAT_TOL,
        Direction::AtLeast => value >= threshold - SAT_TOL,
    }
}

/// Memoryless scheduler that is greedy for `values`; ties pick the lowest
/// action index, so extraction is deterministic.
pub fn extract_scheduler(mdp: &Mdp, values: &[f64], opt: Opt, with_costs: bool) -> Vec<usize> {
    let mut out = Vec::with_capacity(mdp.num_states());
    for acts in &mdp.actions {
        let mut best = 0usize;
        let mut best_val = backup(&acts[0], values, with_costs);
        for (ai, act) in acts.iter().enumerate().skip(1) {
            let v = backup(act, values, with_costs);
            let better = match opt {
                Opt::Maximize => v > best_val,
                Opt::Minimize => v < best_val,
            };
            if better {
                best = ai;
                best_val = v;
            }
        }
        out.push(best);
    }
    out
}

fn backup(act: &crate::model::MdpAction, values: &[f64], with_costs: bool) -> f64 {
    let mut acc = if with_costs { act.cost } else { 0.0 };
    for &(t, p) in &act.transitions {
        if p > 0.0 {
            acc += p * values[t];
        }
    }
    acc
}

fn reach_base(n: usize, class: &StateClassification) -> Vec<Option<f64>> {
    let mut base = vec![None; n];
    for &s in &class.prob0 {
        base[s] = Some(0.0);
    }
    for &s in &class.prob1 {
        base[s] = Some(1.0);
    }
    base
}

fn max_cost(mdp: &Mdp) -> f64 {
    let mut m: f64 = 0.0;
    for acts in &mdp.actions {
        for act in acts {
            m = m.max(act.cost);
        }
    }
    m
}

fn finish(mdp: &Mdp, per_state: Vec<f64>) -> CheckResult {
    let at_initial = per_state[mdp.initial];
    CheckResult {
        per_state,
        at_initial,
        satisfied: true,
    }
}

struct Bellman<'a> {
    mdp: &'a Mdp,
    vars: Vec<StateId>,
    opt: Opt,
    with_costs: bool,
}

impl Bellman<'_> {
    /// One backup per variable state, reading the full-length vector.
    fn apply(&self, full: &[f64], out: &mut [f64]) {
        for (i, &s) in self.vars.iter().enumerate() {
            let acts = &self.mdp.actions[s];
            let mut best = backup(&acts[0], full, self.with_costs);
            for act in &acts[1..] {
                let v = backup(act, full, self.with_costs);
                best = match self.opt {
                    Opt::Maximize => best.max(v),
                    Opt::Minimize => best.min(v),
                };
            }
            out[i] = best;
        }
    }
}

/// Two-phase value iteration. Phase one iterates a lower chain from zero to
/// the least fixed point. Phase two certifies an upper bound: any vector `u`
/// with `T(u) <= u` pointwise is a prefixed point and hence bounds the least
/// fixed point from above, so the guess-and-shrink loop below is sound no
/// matter how the guess was made. The returned value is the midpoint once the
/// bracket closes below the stopping tolerance.
fn vi_solve(
    mdp: &Mdp,
    var_set: &BTreeSet<StateId>,
    base: Vec<Option<f64>>,
    opt: Opt,
    with_costs: bool,
    scale: f64,
) -> Result<Vec<f64>, McError> {
    
    let vars: Vec<StateId> = var_set.iter().copied().collect();
    let mut full: Vec<f64> = base.iter().map(|b| b.unwrap_or(0.0)).collect();
    if vars.is_empty() {
        return Ok(full);
    }
    let bell = Bellman {
        mdp,
        vars: vars.clone(),
        opt,
        with_costs,
    };
    let mut iters = 0usize;
    let mut fresh = vec![0.0; vars.len()];
    let width_tol = VI_STOP * scale;

    // Phase 1: lower chain until the step is far below the bracket target.
    let mut stop = width_tol * 0.01;
    lower_chain(&bell, &mut full, &mut fresh, stop, &mut iters)?;

    // Phase 2: certify and shrink an upper bound.
    let mut eta = width_tol * 0.1;
    for _attempt in 0..60 {
        let mut upper = full.clone();
        for &s in &vars {
            let inflated = full[s] + eta * (1.0 + full[s].abs());
            upper[s] = if with_costs { inflated } else { inflated.min(1.0) };
        }
        if let Some(mid) =
            certify_and_shrink(&bell, &mut full, &mut upper, &mut fresh, width_tol, &mut iters)?
        {
            let values = assemble(&base, &mid, &vars, with_costs);
            check_residual(&bell, &values, scale, iters)?;
            return Ok(values);
        }
        // Tighten the lower chain and retry with a looser inflation.
        stop *= 0.1;
        eta *= 10.0;
        lower_chain(&bell, &mut full, &mut fresh, stop, &mut iters)?;
    }
    Err(McError::NonConvergence(iters))
}

fn lower_chain(
    bell: &Bellman,
    full: &mut [f64],
    fresh: &mut [f64],
    stop: f64,
    iters: &mut usize,
) -> Result<(), McError> {
    loop {
        bell.apply(full, fresh);
        *iters += 1;
        if *iters > VI_CAP {
            return Err(McError::NonConvergence(*iters));
        }
        let mut diff: f64 = 0.0;
        for (i, &s) in bell.vars.iter().enumerate() {
            diff = diff.max((fresh[i] - full[s]).abs());
            full[s] = fresh[i];
        }
        if diff < stop {
            return Ok(());
        }
    }
}

/// Tries to certify `upper` as a prefixed point, then alternates backups on
/// both chains until the bracket is narrow. Returns the midpoints on success,
/// `None` when the guess could not be certified within its budget.
fn certify_and_shrink(
    bell: &Bellman,
    lower: &mut [f64],
    upper: &mut [f64],
    fresh: &mut [f64],
    width_tol: f64,
    iters: &mut usize,
) -> Result<Option<Vec<f64>>, McError> {
    let verify_budget = 2 * bell.vars.len() + 200;
    let mut certified = false;
    for _ in 0..verify_budget {
        bell.apply(upper, fresh);
        *iters += 1;
        if *iters > VI_CAP {
            return Err(McError::NonConvergence(*iters));
        }
        let mut ok = true;
        for (i, &s) in bell.vars.iter().enumerate() {
            if fresh[i] > upper[s] {
                ok = false;
            }
            upper[s] = upper[s].min(fresh[i]);
        }
        if ok {
            certified = true;
            break;
        }
    }
    if !certified {
        return Ok(None);
    }
    // Both chains now move monotonically; close the bracket.
    for _ in 0..200_000 {
        let width = bell
            .vars
            .iter()
            .map(|&s| upper[s] - lower[s])
            .fold(0.0f64, f64::max);
        if width <= width_tol {
            let mid = bell
                .vars
                .iter()
                .map(|&s| 0.5 * (upper[s] + lower[s]))
                .collect();
            return Ok(Some(mid));
        }
        bell.apply(upper, fresh);
        for (i, &s) in bell.vars.iter().enumerate() {
            upper[s] = upper[s].min(fresh[i]);
        }
        bell.apply(lower, fresh);
        for (i, &s) in bell.vars.iter().enumerate() {
            lower[s] = lower[s].max(fresh[i]);
        }
        *iters += 2;
        if *iters > VI_CAP {
            return Err(McError::NonConvergence(*iters));
        }
    }
    Ok(None)
}

fn assemble(base: &[Option<f64>], mid: &[f64], vars: &[StateId], with_costs: bool) -> Vec<f64> {
    let mut values: Vec<f64> = base.iter().map(|b| b.unwrap_or(0.0)).collect();
    for (i, &s) in vars.iter().enumerate() {
        values[s] = if with_costs {
            mid[i].max(0.0)
        } else {
            mid[i].clamp(0.0, 1.0)
        };
    }
    values
}

fn check_residual(
    bell: &Bellman,
    values: &[f64],
    scale: f64,
    iters: usize,
) -> Result<(), McError> {
    let mut fresh = vec![0.0; bell.vars.len()];
    bell.apply(values, &mut fresh);
    for (i, &s) in bell.vars.iter().enumerate() {
        if (fresh[i] - values[s]).abs() > BELLMAN_RESIDUAL * scale {
            return Err(McError::NonConvergence(iters));
        }
    }
    Ok(())
}

/// Linear-programming route. The maximizing system min-imizes the sum of
/// values subject to `x_s >= backup` per action (the least super-solution);
/// the minimizing system maximizes subject to `x_s <= backup`. Rows whose
/// backup is infinite are omitted; they cannot constrain a minimum.
fn lp_solve(
    mdp: &Mdp,
    var_set: &BTreeSet<StateId>,
    base: Vec<Option<f64>>,
    opt: Opt,
    with_costs: bool,
) -> Result<Vec<f64>, McError> {
    let vars: Vec<StateId> = var_set.iter().copied().collect();
    let mut full: Vec<f64> = base.iter().map(|b| b.unwrap_or(0.0)).collect();
    if vars.is_empty() {
        return Ok(full);
    }
    let pos: Vec<Option<usize>> = {
        let mut p = vec![None; mdp.num_states()];
        for (i, &s) in vars.iter().enumerate() {
            p[s] = Some(i);
        }
        p
    };
    let nv = vars.len();
    let sign = match opt {
        Opt::Maximize => 1.0,
        Opt::Minimize => -1.0,
    };
    let mut problem = ConvexProblem::new(nv);
    problem.linear = vec![sign; nv];
    for v in &mut problem.bounds {
        *v = if with_costs {
            (0.0, f64::INFINITY)
        } else {
            (0.0, 1.0)
        };
    }
    for (i, &s) in vars.iter().enumerate() {
        for act in &mdp.actions[s] {
            let mut coeff: BTreeMap<usize, f64> = BTreeMap::new();
            let mut constant = if with_costs { act.cost } else { 0.0 };
            let mut infinite = false;
            for &(t, p) in &act.transitions {
                if p <= 0.0 {
                    continue;
                }
                match pos[t] {
                    Some(j) => *coeff.entry(j).or_insert(0.0) += p,
                    None => {
                        let b = base[t].unwrap_or(0.0);
                        if b.is_infinite() {
                            infinite = true;
                        } else {
                            constant += p * b;
                        }
                    }
                }
            }
            if infinite {
                // Only reachable when minimizing costs, where an action with
                // an infinite backup never binds.
                debug_assert_eq!(opt, Opt::Minimize);
                continue;
            }
            *coeff.entry(i).or_insert(0.0) -= 1.0;
            // Row is sign * (backup - x_s) <= 0 with the constant moved right.
            let cols: Vec<usize> = coeff.keys().copied().collect();
            let vals: Vec<f64> = coeff.values().map(|&v| sign * v).collect();
            problem
                .rows
                .push(Row::new(cols, vals, f64::NEG_INFINITY, -sign * constant));
        }
    }
    let report = qpsolver::solve(&problem, &Settings::default(), None)
        .map_err(|e| McError::Solver(e.to_string()))?;
    if report.status != Status::Optimal {
        return Err(McError::Solver(format!(
            "linear route ended with status {:?}",
            report.status
        )));
    }
    for (i, &s) in vars.iter().enumerate() {
        full[s] = if with_costs {
            report.x[i].max(0.0)
        } else {
            report.x[i].clamp(0.0, 1.0)
        };
    }
    Ok(full)
}
