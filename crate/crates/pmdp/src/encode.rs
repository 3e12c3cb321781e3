//! Encoding of the synthesis query as a bilinear program and its convex
//! approximations.
//!
//! The exact program minimizes (or maximizes) the value variable of the
//! initial state subject to per-action backup rows that are bilinear in
//! parameters and value variables, well-definedness rows keeping every
//! transition probability at or above the graph-preservation bound, and a
//! hard threshold row. Two convex surrogates are produced from it: the
//! convex-concave form (difference-of-convex split per bilinear term, concave
//! halves linearized at an anchor, per-state penalty variables) and the full
//! linearization with trust-region rows used by sequential convex iteration.

use crate::graph::{classify_states, simplify_for_encoding, Quantifier, ReducedIndexing};
use crate::model::{
    Direction, ParamId, ParametricMdp, SpecKind, Specification, StateId,
};
use qpsolver::{ConvexProblem, QuadAtom, Row, Sign};
use std::collections::BTreeMap;
use thiserror::Error;

/// Penalty weight of the sequential-convex subproblems.
pub const SCP_TAU: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("parameter {0} has an empty admissible interval")]
    EmptyParamBox(ParamId),
    #[error("expected cost diverges at states {0:?}; the goal must be reached almost surely")]
    InfiniteCostStates(Vec<StateId>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("problem shape does not match the encoding; rebuild instead of updating")]
pub struct ShapeMismatch;

/// One product `coeff * v_param * p_state` inside a backup row, together with
/// the constant part of its transition function (contributing `c * p_state`,
/// attached to the first term of the transition only).
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearTerm {
    pub state: StateId,
    pub action: usize,
    /// Position of the successor's probability variable.
    pub prob_var: usize,
    pub param_var: ParamId,
    pub coeff: f64,
    pub affine_part: f64,
}

/// Backup row for one state-action pair, in "value of state vs. sum over
/// successors" form before any orientation is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct BellmanRow {
    pub state: StateId,
    pub action: usize,
    pub terms: Vec<BilinearTerm>,
    /// Constant transition functions to variable successors: `(prob var, c)`.
    pub affine_z: Vec<(usize, f64)>,
    /// Parametric transitions to substituted successors, scaled by the
    /// substituted constant: `(param, coeff)`.
    pub affine_v: Vec<(ParamId, f64)>,
    /// Action cost plus substituted-successor constants.
    pub constant: f64,
}

/// Multi-parameter well-definedness row `sum coeffs . v >= lo`.
#[derive(Debug, Clone, PartialEq)]
pub struct WdRow {
    pub coeffs: Vec<(ParamId, f64)>,
    pub lo: f64,
}

/// Parametric transition kept under a trust region by the sequential method.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustTransition {
    pub state: StateId,
    pub action: usize,
    pub succ: StateId,
    pub coeffs: Vec<(ParamId, f64)>,
    pub constant: f64,
}

/// The exact bilinear program, structure only; anchors and penalty weights
/// are supplied when building a convex surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct QcqpEncoding {
    pub kind: SpecKind,
    pub direction: Direction,
    pub threshold: f64,
    pub eps: f64,
    pub num_params: usize,
    pub indexing: ReducedIndexing,
    /// Per-parameter box, single-parameter well-definedness folded in.
    pub param_bounds: Vec<(f64, f64)>,
    pub wd_rows: Vec<WdRow>,
    pub bellman: Vec<BellmanRow>,
    /// Solver variable of the initial state's value, when it has one.
    pub initial_var: Option<usize>,
    pub trust_transitions: Vec<TrustTransition>,
}

impl QcqpEncoding {
    /// Parameters plus probability variables (penalties are surrogate-local).
    pub fn num_vars(&self) -> usize {
        self.num_params + self.indexing.num_vars()
    }

    pub fn num_prob_vars(&self) -> usize {
        self.indexing.num_vars()
    }

    /// +1 when smaller values help the spec, -1 when larger do.
    fn orientation(&self) -> f64 {
        match self.direction {
            Direction::AtMost => 1.0,
            Direction::AtLeast => -1.0,
        }
    }

    /// Right-hand side of a backup row at a full `(params, probs)` point,
    /// evaluated with the original bilinear products.
    pub fn row_rhs(&self, row: &BellmanRow, params: &[f64], probs: &[f64]) -> f64 {
        let mut acc = row.constant;
        for t in &row.terms {
            acc += t.coeff * params[t.param_var] * probs[t.prob_var]
                + t.affine_part * probs[t.prob_var];
        }
        for &(j, c) in &row.affine_z {
            acc += c * probs[j];
        }
        for &(p, a) in &row.affine_v {
            acc += a * params[p];
        }
        acc
    }
}

/// Quantifier under which the classification substitutions are exact for the
/// check the spec requires.
pub fn spec_quantifier(spec: &Specification) -> Quantifier {
    match (spec.kind, spec.direction) {
        (SpecKind::ReachProbability, Direction::AtMost) => Quantifier::Forall,
        (SpecKind::ReachProbability, Direction::AtLeast) => Quantifier::Exists,
        // Cost finiteness flips: a finite maximum needs all schedulers to
        // reach the goals, a finite minimum needs one.
        (SpecKind::ExpectedCost, Direction::AtMost) => Quantifier::Exists,
        (SpecKind::ExpectedCost, Direction::AtLeast) => Quantifier::Forall,
    }
}

/// Builds the exact bilinear encoding of `spec` on `model`.
pub fn build_qcqp(
    model: &ParametricMdp,
    spec: &Specification,
    eps: f64,
) -> Result<QcqpEncoding, EncodeError> {
    let classification = classify_states(model, &spec.target_set, spec_quantifier(spec));
    if spec.kind == SpecKind::ExpectedCost {
        let divergent: Vec<StateId> = classification
            .prob0
            .iter()
            .chain(classification.remaining.iter())
            .copied()
            .collect();
        if !divergent.is_empty() {
            return Err(EncodeError::InfiniteCostStates(divergent));
        }
    }
    let indexing = simplify_for_encoding(model, spec, &classification);
    let param_bounds = model
        .param_intervals(eps)
        .map_err(|e| match e {
            crate::model::RegionError::EmptyInterval { param } => {
                EncodeError::EmptyParamBox(param)
            }
            crate::model::RegionError::NonRectangular { .. } => unreachable!(),
        })?;

    let mut wd_rows = Vec::new();
    for acts in &model.actions {
        for act in acts {
            for (_, expr) in &act.transitions {
                if expr.num_params() >= 2 {
                    let (c, coeffs) = expr.to_f64_parts();
                    wd_rows.push(WdRow {
                        coeffs,
                        lo: eps - c,
                    });
                }
            }
        }
    }

    let mut bellman = Vec::new();
    let mut trust_transitions = Vec::new();
    for &s in &indexing.prob_states {
        for (ai, act) in model.actions[s].iter().enumerate() {
            let mut terms = Vec::new();
            let mut affine_z: BTreeMap<usize, f64> = BTreeMap::new();
            let mut affine_v: BTreeMap<ParamId, f64> = BTreeMap::new();
            let mut constant = if spec.kind == SpecKind::ExpectedCost {
                crate::model::rational_to_f64(&act.cost)
            } else {
                0.0
            };
            for (succ, expr) in &act.transitions {
                let (c, coeffs) = expr.to_f64_parts();
                if !coeffs.is_empty() {
                    trust_transitions.push(TrustTransition {
                        state: s,
                        action: ai,
                        succ: *succ,
                        coeffs: coeffs.clone(),
                        constant: c,
                    });
                }
                match indexing.index_of_state[*succ] {
                    Some(j) => {
                        if coeffs.is_empty() {
                            *affine_z.entry(j).or_insert(0.0) += c;
                        } else {
                            for (k, &(p, a)) in coeffs.iter().enumerate() {
                                terms.push(BilinearTerm {
                                    state: s,
                                    action: ai,
                                    prob_var: j,
                                    param_var: p,
                                    coeff: a,
                                    affine_part: if k == 0 { c } else { 0.0 },
                                });
                            }
                        }
                    }
                    None => {
                        let w = indexing.substituted[*succ].expect("state classified");
                        if w != 0.0 {
                            for &(p, a) in &coeffs {
                                *affine_v.entry(p).or_insert(0.0) += a * w;
                            }
                            constant += c * w;
                        }
                    }
                }
            }
            bellman.push(BellmanRow {
                state: s,
                action: ai,
                terms,
                affine_z: affine_z.into_iter().collect(),
                affine_v: affine_v.into_iter().collect(),
                constant,
            });
        }
    }

    let initial_var = indexing.index_of_state[model.initial].map(|j| model.num_params() + j);
    Ok(QcqpEncoding {
        kind: spec.kind,
        direction: spec.direction,
        threshold: spec.threshold,
        eps,
        num_params: model.num_params(),
        indexing,
        param_bounds,
        wd_rows,
        bellman,
        initial_var,
        trust_transitions,
    })
}

/// Difference-of-convex split of one bilinear product `coeff * y * z`:
/// `h_cvx(y, z) + h_ccv(y, z) = coeff * y * z` with `h_cvx` convex and
/// `h_ccv` concave. `h_aff` is the linearization of `h_ccv` at an anchor; it
/// matches `h_ccv` there exactly and over-estimates it everywhere else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcParts {
    /// Half the bilinear coefficient; the split's quadratic weight is `|d|`.
    pub d: f64,
}

pub fn dc_decompose(term: &BilinearTerm) -> DcParts {
    DcParts { d: term.coeff / 2.0 }
}

impl DcParts {
    pub fn h_cvx(&self, y: f64, z: f64) -> f64 {
        let u = if self.d > 0.0 { y + z } else { y - z };
        self.d.abs() * u * u
    }

    pub fn h_ccv(&self, y: f64, z: f64) -> f64 {
        -self.d.abs() * (y * y + z * z)
    }

    pub fn h_aff(&self, y: f64, z: f64, y_hat: f64, z_hat: f64) -> f64 {
        let ad = self.d.abs();
        ad * (y_hat * y_hat + z_hat * z_hat) - 2.0 * ad * (y_hat * y + z_hat * z)
    }
}

/// Anchor point of a convexification: parameter values plus one value per
/// probability variable (by position).
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub params: Vec<f64>,
    pub probs: Vec<f64>,
}

fn prob_bound(kind: SpecKind) -> (f64, f64) {
    match kind {
        SpecKind::ReachProbability => (0.0, 1.0),
        SpecKind::ExpectedCost => (0.0, f64::INFINITY),
    }
}

fn base_bounds(enc: &QcqpEncoding, num_penalties: usize) -> Vec<(f64, f64)> {
    let mut bounds = Vec::with_capacity(enc.num_vars() + num_penalties);
    bounds.extend(enc.param_bounds.iter().copied());
    bounds.extend(std::iter::repeat(prob_bound(enc.kind)).take(enc.num_prob_vars()));
    bounds.extend(std::iter::repeat((0.0, f64::INFINITY)).take(num_penalties));
    bounds
}

fn wd_solver_row(wd: &WdRow) -> Row {
    let cols = wd.coeffs.iter().map(|&(p, _)| p).collect();
    let vals = wd.coeffs.iter().map(|&(_, a)| a).collect();
    Row::new(cols, vals, wd.lo, f64::INFINITY)
}

fn threshold_row(enc: &QcqpEncoding) -> Row {
    let iv = enc.initial_var.expect("threshold row needs an initial variable");
    match enc.direction {
        Direction::AtMost => Row::new(vec![iv], vec![1.0], f64::NEG_INFINITY, enc.threshold),
        Direction::AtLeast => Row::new(vec![iv], vec![1.0], enc.threshold, f64::INFINITY),
    }
}

/// Assembles one convexified backup row at `anchor`. The row reads
/// `convex-part(x) <= hi` and uses the state's penalty variable at
/// `penalty_col` (one slack shared by all rows of the state).
fn fill_ccp_row(enc: &QcqpEncoding, row: &BellmanRow, anchor: &Anchor, penalty_col: usize) -> Row {
    let dir = enc.orientation();
    let np = enc.num_params;
    let mut lin: BTreeMap<usize, f64> = BTreeMap::new();
    let mut atoms: Vec<QuadAtom> = Vec::new();
    let mut constant = dir * row.constant;
    for t in &row.terms {
        let y = t.param_var;
        let z = np + t.prob_var;
        let d = dir * t.coeff / 2.0;
        let ad = d.abs();
        let y_hat = anchor.params[t.param_var];
        let z_hat = anchor.probs[t.prob_var];
        atoms.push(QuadAtom {
            w: ad,
            i: y,
            j: z,
            sign: if d > 0.0 { Sign::Plus } else { Sign::Minus },
        });
        *lin.entry(y).or_insert(0.0) += -2.0 * ad * y_hat;
        *lin.entry(z).or_insert(0.0) += -2.0 * ad * z_hat + dir * t.affine_part;
        constant += ad * (y_hat * y_hat + z_hat * z_hat);
    }
    for &(j, c) in &row.affine_z {
        *lin.entry(np + j).or_insert(0.0) += dir * c;
    }
    for &(p, a) in &row.affine_v {
        *lin.entry(p).or_insert(0.0) += dir * a;
    }
    let own = np + enc.indexing.index_of_state[row.state].expect("row state has a variable");
    *lin.entry(own).or_insert(0.0) += -dir;
    *lin.entry(penalty_col).or_insert(0.0) += -1.0;
    let cols: Vec<usize> = lin.keys().copied().collect();
    let vals: Vec<f64> = lin.values().copied().collect();
    Row {
        cols,
        vals,
        lo: f64::NEG_INFINITY,
        hi: -constant,
        quad: atoms,
    }
}

/// Linearized backup row at `anchor` (no quadratic part): every bilinear
/// product is replaced by its first-order expansion.
fn fill_scp_row(enc: &QcqpEncoding, row: &BellmanRow, anchor: &Anchor, penalty_col: usize) -> Row {
    let dir = enc.orientation();
    let np = enc.num_params;
    let mut lin: BTreeMap<usize, f64> = BTreeMap::new();
    let mut constant = dir * row.constant;
    for t in &row.terms {
        let eff = dir * t.coeff;
        let y_hat = anchor.params[t.param_var];
        let z_hat = anchor.probs[t.prob_var];
        *lin.entry(t.param_var).or_insert(0.0) += eff * z_hat;
        *lin.entry(np + t.prob_var).or_insert(0.0) += eff * y_hat + dir * t.affine_part;
        constant += -eff * y_hat * z_hat;
    }
    for &(j, c) in &row.affine_z {
        *lin.entry(np + j).or_insert(0.0) += dir * c;
    }
    for &(p, a) in &row.affine_v {
        *lin.entry(p).or_insert(0.0) += dir * a;
    }
    let own = np + enc.indexing.index_of_state[row.state].expect("row state has a variable");
    *lin.entry(own).or_insert(0.0) += -dir;
    *lin.entry(penalty_col).or_insert(0.0) += -1.0;
    let cols: Vec<usize> = lin.keys().copied().collect();
    let vals: Vec<f64> = lin.values().copied().collect();
    Row::new(cols, vals, f64::NEG_INFINITY, -constant)
}

fn penalty_col_of(enc: &QcqpEncoding, state: StateId) -> usize {
    enc.num_vars() + enc.indexing.index_of_state[state].expect("penalized state has a variable")
}

fn objective_into(enc: &QcqpEncoding, tau: f64, problem: &mut ConvexProblem) {
    let iv = enc.initial_var.expect("objective needs the initial variable");
    problem.linear = vec![0.0; problem.num_vars];
    problem.linear[iv] = enc.orientation();
    for j in 0..enc.num_prob_vars() {
        problem.linear[enc.num_vars() + j] = tau;
    }
}

/// Convex-concave surrogate at `anchor` with penalty weight `tau`: convex
/// halves kept, concave halves linearized, one nonnegative penalty variable
/// per state softening its backup rows, threshold row hard.
pub fn convexify_ccp(enc: &QcqpEncoding, anchor: &Anchor, tau: f64) -> ConvexProblem {
    let mut problem = ConvexProblem::new(enc.num_vars() + enc.num_prob_vars());
    problem.bounds = base_bounds(enc, enc.num_prob_vars());
    objective_into(enc, tau, &mut problem);
    for wd in &enc.wd_rows {
        problem.rows.push(wd_solver_row(wd));
    }
    problem.rows.push(threshold_row(enc));
    for row in &enc.bellman {
        problem
            .rows
            .push(fill_ccp_row(enc, row, anchor, penalty_col_of(enc, row.state)));
    }
    problem
}

/// Rewrites the anchor-dependent parts of a problem built by
/// [`convexify_ccp`] in place, bit-for-bit identical to rebuilding.
pub fn update_ccp_anchor(
    problem: &mut ConvexProblem,
    enc: &QcqpEncoding,
    anchor: &Anchor,
    tau: f64,
) -> Result<(), ShapeMismatch> {
    let expected_rows = enc.wd_rows.len() + 1 + enc.bellman.len();
    if problem.num_vars != enc.num_vars() + enc.num_prob_vars()
        || problem.rows.len() != expected_rows
    {
        return Err(ShapeMismatch);
    }
    objective_into(enc, tau, problem);
    let base = enc.wd_rows.len() + 1;
    for (k, row) in enc.bellman.iter().enumerate() {
        problem.rows[base + k] = fill_ccp_row(enc, row, anchor, penalty_col_of(enc, row.state));
    }
    Ok(())
}

/// Full linearization at `anchor` with trust-region rows of half-width factor
/// `delta' = delta + 1`: anchors are clamped to the graph-preservation bound,
/// then every probability variable and every parametric transition is kept
/// inside `[anchor / delta', anchor * delta']`. Separate rows, so refreshing
/// `delta` alone touches exactly two bound entries per trust row.
pub fn linearize_scp(
    enc: &QcqpEncoding,
    anchor: &Anchor,
    delta: f64,
    tau: f64,
) -> ConvexProblem {
    let mut problem = ConvexProblem::new(enc.num_vars() + enc.num_prob_vars());
    problem.bounds = base_bounds(enc, enc.num_prob_vars());
    objective_into(enc, tau, &mut problem);
    for wd in &enc.wd_rows {
        problem.rows.push(wd_solver_row(wd));
    }
    problem.rows.push(threshold_row(enc));
    for row in &enc.bellman {
        problem
            .rows
            .push(fill_scp_row(enc, row, anchor, penalty_col_of(enc, row.state)));
    }
    push_trust_rows(enc, anchor, delta, &mut problem);
    problem
}

fn push_trust_rows(enc: &QcqpEncoding, anchor: &Anchor, delta: f64, problem: &mut ConvexProblem) {
    let dp = delta + 1.0;
    let np = enc.num_params;
    for j in 0..enc.num_prob_vars() {
        let p_hat = anchor.probs[j].max(enc.eps);
        problem
            .rows
            .push(Row::new(vec![np + j], vec![1.0], p_hat / dp, p_hat * dp));
    }
    for t in &enc.trust_transitions {
        let mut v_hat = t.constant;
        for &(p, a) in &t.coeffs {
            v_hat += a * anchor.params[p];
        }
        let v_hat = v_hat.max(enc.eps);
        let cols = t.coeffs.iter().map(|&(p, _)| p).collect();
        let vals = t.coeffs.iter().map(|&(_, a)| a).collect();
        problem.rows.push(Row::new(
            cols,
            vals,
            v_hat / dp - t.constant,
            v_hat * dp - t.constant,
        ));
    }
}

/// Rewrites the anchor- and delta-dependent parts of a problem built by
/// [`linearize_scp`] in place, bit-for-bit identical to rebuilding.
pub fn update_scp_anchor(
    problem: &mut ConvexProblem,
    enc: &QcqpEncoding,
    anchor: &Anchor,
    delta: f64,
    tau: f64,
) -> Result<(), ShapeMismatch> {
    let expected_rows = enc.wd_rows.len()
        + 1
        + enc.bellman.len()
        + enc.num_prob_vars()
        + enc.trust_transitions.len();
    if problem.num_vars != enc.num_vars() + enc.num_prob_vars()
        || problem.rows.len() != expected_rows
    {
        return Err(ShapeMismatch);
    }
    objective_into(enc, tau, problem);
    let base = enc.wd_rows.len() + 1;
    for (k, row) in enc.bellman.iter().enumerate() {
        problem.rows[base + k] = fill_scp_row(enc, row, anchor, penalty_col_of(enc, row.state));
    }
    problem.rows.truncate(base + enc.bellman.len());
    push_trust_rows(enc, anchor, delta, problem);
    Ok(())
}

/// Regularized sequential subproblem: one shared slack `k`, no threshold row,
/// proximal objective `(mu + beta * mu')/2 * ||x - x_anchor||^2`.
pub fn build_scp_regularized(
    enc: &QcqpEncoding,
    anchor: &Anchor,
    beta: f64,
    mu: f64,
    mu_prime: f64,
) -> ConvexProblem {
    let nx = enc.num_vars();
    let k_col = nx;
    let mut problem = ConvexProblem::new(nx + 1);
    problem.bounds = base_bounds(enc, 0);
    problem.bounds.push((0.0, f64::INFINITY));
    scp_reg_objective(enc, anchor, beta, mu, mu_prime, &mut problem);
    for wd in &enc.wd_rows {
        problem.rows.push(wd_solver_row(wd));
    }
    for row in &enc.bellman {
        problem.rows.push(fill_scp_row(enc, row, anchor, k_col));
    }
    problem
}

fn scp_reg_objective(
    enc: &QcqpEncoding,
    anchor: &Anchor,
    beta: f64,
    mu: f64,
    mu_prime: f64,
    problem: &mut ConvexProblem,
) {
    let nx = enc.num_vars();
    let iv = enc.initial_var.expect("objective needs the initial variable");
    let w = 0.5 * (mu + beta * mu_prime);
    problem.linear = vec![0.0; problem.num_vars];
    problem.linear[iv] = enc.orientation();
    problem.linear[nx] = beta;
    problem.atoms.clear();
    problem.offset = 0.0;
    for i in 0..nx {
        let x_hat = if i < enc.num_params {
            anchor.params[i]
        } else {
            anchor.probs[i - enc.num_params]
        };
        problem.atoms.push(QuadAtom::square(w, i));
        problem.linear[i] += -2.0 * w * x_hat;
        problem.offset += w * x_hat * x_hat;
    }
}

/// In-place refresh of a problem built by [`build_scp_regularized`].
pub fn update_scp_regularized(
    problem: &mut ConvexProblem,
    enc: &QcqpEncoding,
    anchor: &Anchor,
    beta: f64,
    mu: f64,
    mu_prime: f64,
) -> Result<(), ShapeMismatch> {
    let nx = enc.num_vars();
    let expected_rows = enc.wd_rows.len() + enc.bellman.len();
    if problem.num_vars != nx + 1 || problem.rows.len() != expected_rows {
        return Err(ShapeMismatch);
    }
    scp_reg_objective(enc, anchor, beta, mu, mu_prime, problem);
    let base = enc.wd_rows.len();
    for (k, row) in enc.bellman.iter().enumerate() {
        problem.rows[base + k] = fill_scp_row(enc, row, anchor, nx);
    }
    Ok(())
}

/// Curvature estimate used by the regularized method's proximal weight: twice
/// the largest bilinear coefficient magnitude bounds the Hessian norm of
/// every backup row.
pub fn curvature_estimate(enc: &QcqpEncoding) -> f64 {
    let m = enc
        .bellman
        .iter()
        .flat_map(|r| r.terms.iter())
        .map(|t| t.coeff.abs())
        .fold(0.0f64, f64::max);
    2.0 * m
}
