//! Parametric MDP core: exact-rational affine transition functions, model
//! validation, instantiation to concrete MDPs, and parameter boxes.

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub type StateId = usize;
pub type ParamId = usize;
pub type Rational = BigRational;

/// Parameter valuation, dense by parameter id.
pub type Valuation = Vec<f64>;

/// Default minimum transition probability for graph preservation.
pub const DEFAULT_EPS_GRAPH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("expression references parameter {0} missing from the valuation")]
pub struct MissingParameter(pub ParamId);

/// Affine function of the parameters with exact rational coefficients.
///
/// Canonical form: zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineExpr {
    constant: Rational,
    coeffs: BTreeMap<ParamId, Rational>,
}

impl AffineExpr {
    pub fn zero() -> Self {
        AffineExpr {
            constant: Rational::zero(),
            coeffs: BTreeMap::new(),
        }
    }

    pub fn constant(c: Rational) -> Self {
        AffineExpr {
            constant: c,
            coeffs: BTreeMap::new(),
        }
    }

    /// Single term `coeff * v_param`.
    pub fn term(coeff: Rational, param: ParamId) -> Self {
        let mut e = AffineExpr::zero();
        e.add_term(coeff, param);
        e
    }

    pub fn add_constant(&mut self, c: &Rational) {
        self.constant += c;
    }

    pub fn add_term(&mut self, coeff: Rational, param: ParamId) {
        if coeff.is_zero() {
            return;
        }
        let slot = self.coeffs.entry(param).or_insert_with(Rational::zero);
        *slot += coeff;
        if slot.is_zero() {
            self.coeffs.remove(&param);
        }
    }

    pub fn add_assign(&mut self, other: &AffineExpr) {
        self.constant += &other.constant;
        for (&p, c) in &other.coeffs {
            self.add_term(c.clone(), p);
        }
    }

    pub fn sub_assign(&mut self, other: &AffineExpr) {
        self.constant -= &other.constant;
        for (&p, c) in &other.coeffs {
            self.add_term(-c.clone(), p);
        }
    }

    pub fn constant_part(&self) -> &Rational {
        &self.constant
    }

    pub fn coefficients(&self) -> impl Iterator<Item = (ParamId, &Rational)> {
        self.coeffs.iter().map(|(&p, c)| (p, c))
    }

    pub fn coefficient(&self, param: ParamId) -> Option<&Rational> {
        self.coeffs.get(&param)
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty() && self.constant.is_zero()
    }

    /// Number of parameters with nonzero coefficient.
    pub fn num_params(&self) -> usize {
        self.coeffs.len()
    }

    pub fn max_param(&self) -> Option<ParamId> {
        self.coeffs.keys().next_back().copied()
    }

    pub fn eval_rational(&self, vals: &[Rational]) -> Rational {
        let mut acc = self.constant.clone();
        for (&p, c) in &self.coeffs {
            acc += c * &vals[p];
        }
        acc
    }

    /// Evaluates at a floating-point valuation.
    pub fn eval(&self, val: &[f64]) -> Result<f64, MissingParameter> {
        let mut acc = rational_to_f64(&self.constant);
        for (&p, c) in &self.coeffs {
            let v = *val.get(p).ok_or(MissingParameter(p))?;
            acc += rational_to_f64(c) * v;
        }
        Ok(acc)
    }

    /// Floating-point view `(constant, [(param, coeff)])`, rounded once.
    pub fn to_f64_parts(&self) -> (f64, Vec<(ParamId, f64)>) {
        let c = rational_to_f64(&self.constant);
        let terms = self
            .coeffs
            .iter()
            .map(|(&p, r)| (p, rational_to_f64(r)))
            .collect();
        (c, terms)
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().expect("rational out of f64 range")
}

/// One enabled action: optional cost and the successor distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionDef {
    pub name: String,
    pub cost: Rational,
    /// Sorted by successor id, one entry per successor, exprs not identically zero.
    pub transitions: Vec<(StateId, AffineExpr)>,
}

/// Parametric MDP with affine transition functions over a parameter set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParametricMdp {
    pub param_names: Vec<String>,
    pub num_states: usize,
    pub initial: StateId,
    /// Indexed by state; each state has at least one action.
    pub actions: Vec<Vec<ActionDef>>,
    pub labels: BTreeMap<String, BTreeSet<StateId>>,
    /// Whether any cost was declared; expected-cost specs require it.
    pub has_costs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: String) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message,
        }
    }

    fn warning(message: String) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstantiationError {
    /// Transitions `(state, action index, successor)` whose value is negative.
    #[error("instantiation is not a distribution at {0:?}")]
    NotWellDefined(Vec<(StateId, usize, StateId)>),
    #[error("valuation has {got} entries, model has {expected} parameters")]
    WrongArity { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("transition ({state}, action {action}, {succ}) couples several parameters; the admissible region is not a box")]
    NonRectangular {
        state: StateId,
        action: usize,
        succ: StateId,
    },
    #[error("parameter {param} has an empty admissible interval")]
    EmptyInterval { param: ParamId },
}

impl ParametricMdp {
    pub fn num_params(&self) -> usize {
        self.param_names.len()
    }

    /// True iff every state has exactly one action (parametric Markov chain).
    pub fn is_pmc(&self) -> bool {
        self.actions.iter().all(|a| a.len() == 1)
    }

    pub fn label_states(&self, label: &str) -> Option<&BTreeSet<StateId>> {
        self.labels.get(label)
    }

    /// Structural well-formedness check. Errors make the model unusable;
    /// warnings flag suspicious but legal constructs.
    pub fn validate(&self, eps: f64) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.actions.len() != self.num_states {
            out.push(Diagnostic::error(format!(
                "state count {} does not match action table length {}",
                self.num_states,
                self.actions.len()
            )));
            return out;
        }
        if self.initial >= self.num_states {
            out.push(Diagnostic::error(format!(
                "initial state {} out of range",
                self.initial
            )));
        }
        let mut referenced = vec![false; self.num_params()];
        for (s, acts) in self.actions.iter().enumerate() {
            if acts.is_empty() {
                out.push(Diagnostic::error(format!("state {s} has no enabled action")));
                continue;
            }
            for act in acts.iter() {
                if act.cost < Rational::zero() {
                    out.push(Diagnostic::error(format!(
                        "cost of ({s}, {}) is negative",
                        act.name
                    )));
                }
                let mut sum = AffineExpr::zero();
                let mut prev: Option<StateId> = None;
                for (succ, expr) in &act.transitions {
                    if *succ >= self.num_states {
                        out.push(Diagnostic::error(format!(
                            "transition ({s}, {}, {succ}) targets a state out of range",
                            act.name
                        )));
                    }
                    if prev == Some(*succ) {
                        out.push(Diagnostic::error(format!(
                            "duplicate successor {succ} in ({s}, {})",
                            act.name
                        )));
                    }
                    if prev.map_or(false, |p| p > *succ) {
                        out.push(Diagnostic::error(format!(
                            "successors of ({s}, {}) are not sorted",
                            act.name
                        )));
                    }
                    prev = Some(*succ);
                    if expr.is_zero() {
                        out.push(Diagnostic::error(format!(
                            "transition ({s}, {}, {succ}) is identically zero; drop it",
                            act.name
                        )));
                    }
                    if expr.is_constant() {
                        let v = rational_to_f64(expr.constant_part());
                        if v > 0.0 && v < eps {
                            out.push(Diagnostic::warning(format!(
                                "transition ({s}, {}, {succ}) has constant probability {v:e} below the graph-preservation bound {eps:e}",
                                act.name
                            )));
                        }
                    }
                    for (p, _) in expr.coefficients() {
                        if p < referenced.len() {
                            referenced[p] = true;
                        } else {
                            out.push(Diagnostic::error(format!(
                                "transition ({s}, {}, {succ}) references undeclared parameter {p}",
                                act.name
                            )));
                        }
                    }
                    sum.add_assign(expr);
                }
                if !(sum.is_constant() && sum.constant_part() == &Rational::one()) {
                    out.push(Diagnostic::error(format!(
                        "outgoing probabilities of ({s}, {}) do not sum to one symbolically",
                        act.name
                    )));
                }
            }
        }
        for (name, states) in &self.labels {
            for s in states {
                if *s >= self.num_states {
                    out.push(Diagnostic::error(format!(
                        "label {name} marks state {s}, which is out of range"
                    )));
                }
            }
        }
        for (p, used) in referenced.iter().enumerate() {
            if !used {
                out.push(Diagnostic::warning(format!(
                    "parameter {} is never referenced",
                    self.param_names[p]
                )));
            }
        }
        out
    }

    /// Substitutes the valuation into every transition function.
    ///
    /// Fails only when the result is not an MDP (negative entries or a row sum
    /// off from one); graph preservation is a separate, epsilon-aware check.
    pub fn instantiate(&self, val: &[f64]) -> Result<Mdp, InstantiationError> {
        if val.len() != self.num_params() {
            return Err(InstantiationError::WrongArity {
                expected: self.num_params(),
                got: val.len(),
            });
        }
        let mut bad = Vec::new();
        let mut actions = Vec::with_capacity(self.num_states);
        for (s, acts) in self.actions.iter().enumerate() {
            let mut out_acts = Vec::with_capacity(acts.len());
            for (ai, act) in acts.iter().enumerate() {
                let mut transitions = Vec::with_capacity(act.transitions.len());
                let mut sum = 0.0;
                for (succ, expr) in &act.transitions {
                    let v = expr.eval(val).expect("validated model");
                    if v < 0.0 {
                        bad.push((s, ai, *succ));
                    }
                    sum += v;
                    transitions.push((*succ, v));
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    bad.push((s, ai, usize::MAX));
                }
                out_acts.push(MdpAction {
                    cost: rational_to_f64(&act.cost),
                    transitions,
                });
            }
            actions.push(out_acts);
        }
        if !bad.is_empty() {
            return Err(InstantiationError::NotWellDefined(bad));
        }
        Ok(Mdp {
            initial: self.initial,
            actions,
            labels: self.labels.clone(),
        })
    }

    /// True iff every structurally present transition stays at or above `eps`.
    pub fn check_graph_preserving(&self, val: &[f64], eps: f64) -> bool {
        self.graph_preservation_violations(val, eps).is_empty()
    }

    /// Transitions `(state, action index, successor, value)` below `eps`.
    pub fn graph_preservation_violations(
        &self,
        val: &[f64],
        eps: f64,
    ) -> Vec<(StateId, usize, StateId, f64)> {
        let mut out = Vec::new();
        for (s, acts) in self.actions.iter().enumerate() {
            for (ai, act) in acts.iter().enumerate() {
                for (succ, expr) in &act.transitions {
                    match expr.eval(val) {
                        Ok(v) if v >= eps => {}
                        Ok(v) => out.push((s, ai, *succ, v)),
                        Err(_) => out.push((s, ai, *succ, f64::NAN)),
                    }
                }
            }
        }
        out
    }

    /// Per-parameter interval such that every single-parameter transition stays
    /// in `[eps, 1 - eps]`-consistent range. Transitions coupling several
    /// parameters are ignored here; the encoder keeps explicit rows for them.
    pub fn param_intervals(&self, eps: f64) -> Result<Vec<(f64, f64)>, RegionError> {
        let mut box_ = vec![(eps, 1.0 - eps); self.num_params()];
        for acts in &self.actions {
            for act in acts {
                for (_, expr) in &act.transitions {
                    if expr.num_params() != 1 {
                        continue;
                    }
                    let (c, terms) = expr.to_f64_parts();
                    let (p, a) = terms[0];
                    // a * v + c >= eps
                    let bound = (eps - c) / a;
                    let slot = &mut box_[p];
                    if a > 0.0 {
                        slot.0 = slot.0.max(bound);
                    } else {
                        slot.1 = slot.1.min(bound);
                    }
                }
            }
        }
        for (p, (lo, hi)) in box_.iter().enumerate() {
            if lo > hi {
                return Err(RegionError::EmptyInterval { param: p });
            }
        }
        Ok(box_)
    }

    /// Parameter box for region-based search. Errors out when any transition
    /// couples two or more parameters, because the admissible set then has a
    /// non-rectangular facet.
    pub fn rectangular_region(&self, eps: f64) -> Result<Vec<(f64, f64)>, RegionError> {
        for (s, acts) in self.actions.iter().enumerate() {
            for (ai, act) in acts.iter().enumerate() {
                for (succ, expr) in &act.transitions {
                    if expr.num_params() >= 2 {
                        return Err(RegionError::NonRectangular {
                            state: s,
                            action: ai,
                            succ: *succ,
                        });
                    }
                }
            }
        }
        self.param_intervals(eps)
    }
}

const ROW_SUM_TOL: f64 = 1e-9;

/// Concrete MDP produced by instantiation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    pub initial: StateId,
    pub actions: Vec<Vec<MdpAction>>,
    pub labels: BTreeMap<String, BTreeSet<StateId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpAction {
    pub cost: f64,
    pub transitions: Vec<(StateId, f64)>,
}

impl Mdp {
    pub fn num_states(&self) -> usize {
        self.actions.len()
    }
}

/// What a reachability or cost query compares against its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecKind {
    ReachProbability,
    ExpectedCost,
}

/// Comparison direction of the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Value must stay at or below the threshold (checked against the
    /// scheduler maximum).
    AtMost,
    /// Value must reach the threshold (checked against the scheduler minimum).
    AtLeast,
}

/// Threshold query over a target set: `P <= 0.1 [F T]` and friends.
#[derive(Debug, Clone, PartialEq)]
pub struct Specification {
    pub kind: SpecKind,
    pub direction: Direction,
    pub threshold: f64,
    pub target_set: BTreeSet<StateId>,
}

impl Specification {
    /// Structural checks of the spec against a model.
    pub fn validate(&self, model: &ParametricMdp) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.target_set.is_empty() {
            out.push(Diagnostic::error("target set is empty".to_string()));
        }
        for s in &self.target_set {
            if *s >= model.num_states {
                out.push(Diagnostic::error(format!(
                    "target state {s} is out of range"
                )));
            }
        }
        match self.kind {
            SpecKind::ReachProbability => {
                if !(0.0..=1.0).contains(&self.threshold) {
                    out.push(Diagnostic::error(format!(
                        "probability threshold {} is outside [0, 1]",
                        self.threshold
                    )));
                }
            }
            SpecKind::ExpectedCost => {
                if !(self.threshold >= 0.0) {
                    out.push(Diagnostic::error(format!(
                        "cost threshold {} is negative",
                        self.threshold
                    )));
                }
                if !model.has_costs {
                    out.push(Diagnostic::error(
                        "expected-cost query on a model without costs".to_string(),
                    ));
                }
            }
        }
        out
    }
}

/// Precompiled instantiation: transition values are swapped into a reusable
/// MDP skeleton without rebuilding structure, costs, or labels.
#[derive(Debug, Clone)]
pub struct InstantiationTemplate {
    skeleton: Mdp,
    /// Per transition, iteration order: constant plus parameter terms.
    rows: Vec<(f64, Vec<(ParamId, f64)>)>,
}

impl InstantiationTemplate {
    pub fn new(model: &ParametricMdp) -> Self {
        let mut rows = Vec::new();
        let mut actions = Vec::with_capacity(model.num_states);
        for acts in &model.actions {
            let mut out_acts = Vec::with_capacity(acts.len());
            for act in acts {
                let mut transitions = Vec::with_capacity(act.transitions.len());
                for (succ, expr) in &act.transitions {
                    rows.push(expr.to_f64_parts());
                    transitions.push((*succ, 0.0));
                }
                out_acts.push(MdpAction {
                    cost: rational_to_f64(&act.cost),
                    transitions,
                });
            }
            actions.push(out_acts);
        }
        InstantiationTemplate {
            skeleton: Mdp {
                initial: model.initial,
                actions,
                labels: model.labels.clone(),
            },
            rows,
        }
    }

    /// Fresh MDP with the right shape for `instantiate_into`.
    pub fn fresh(&self) -> Mdp {
        self.skeleton.clone()
    }

    /// Writes transition values for `val` into `out`. Returns false (leaving
    /// `out` partially updated) when some transition falls below `eps`.
    pub fn instantiate_into(&self, val: &[f64], eps: f64, out: &mut Mdp) -> bool {
        let mut row = 0;
        for acts in &mut out.actions {
            for act in acts {
                for slot in &mut act.transitions {
                    let (c, terms) = &self.rows[row];
                    row += 1;
                    let mut v = *c;
                    for (p, a) in terms {
                        v += a * val[*p];
                    }
                    if v < eps {
                        return false;
                    }
                    slot.1 = v;
                }
            }
        }
        true
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    /// Three-step chain whose reachability value is v^2 * (1 - v).
    pub(crate) fn chain_model() -> ParametricMdp {
        let v = 0;
        let mut labels = BTreeMap::new();
        labels.insert("target".to_string(), BTreeSet::from([3]));
        let go = |transitions: Vec<(usize, AffineExpr)>| ActionDef {
            name: "a".to_string(),
            cost: Rational::zero(),
            transitions,
        };
        let pv = || AffineExpr::term(Rational::one(), v);
        let one_minus_v = || {
            let mut e = AffineExpr::constant(Rational::one());
            e.add_term(-Rational::one(), v);
            e
        };
        ParametricMdp {
            param_names: vec!["v".to_string()],
            num_states: 5,
            initial: 0,
            actions: vec![
                vec![go(vec![(1, pv()), (4, one_minus_v())])],
                vec![go(vec![(2, one_minus_v()), (4, pv())])],
                vec![go(vec![(3, pv()), (4, one_minus_v())])],
                vec![go(vec![(3, AffineExpr::constant(Rational::one()))])],
                vec![go(vec![(4, AffineExpr::constant(Rational::one()))])],
            ],
            labels,
            has_costs: false,
        }
    }

    #[test]
    fn affine_expr_is_canonical() {
        let mut e = AffineExpr::term(rat(1, 2), 0);
        e.add_term(rat(-1, 2), 0);
        assert!(e.is_constant());
        assert!(e.is_zero());
        e.add_constant(&rat(1, 4));
        assert!(!e.is_zero());
        assert_eq!(e.num_params(), 0);
    }

    #[test]
    fn eval_matches_rational_arithmetic() {
        let mut e = AffineExpr::constant(rat(1, 4));
        e.add_term(rat(3, 8), 0);
        e.add_term(rat(-1, 8), 2);
        let v = e.eval(&[0.5, 9.0, 0.25]).unwrap();
        let exact = e.eval_rational(&[rat(1, 2), rat(9, 1), rat(1, 4)]);
        assert!((v - rational_to_f64(&exact)).abs() < 1e-15);
    }

    #[test]
    fn eval_reports_missing_parameters() {
        let e = AffineExpr::term(Rational::one(), 3);
        assert_eq!(e.eval(&[0.1, 0.2]), Err(MissingParameter(3)));
    }

    #[test]
    fn validate_accepts_the_chain() {
        let m = chain_model();
        let diags = m.validate(DEFAULT_EPS_GRAPH);
        assert!(diags.is_empty(), "{diags:?}");
        assert!(m.is_pmc());
    }

    #[test]
    fn validate_flags_broken_row_sums_and_missing_actions() {
        let mut m = chain_model();
        m.actions[2][0].transitions.pop();
        m.actions[4].clear();
        let diags = m.validate(DEFAULT_EPS_GRAPH);
        let errors: Vec<_> = diags
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .collect();
        assert!(errors.iter().any(|d| d.message.contains("sum to one")));
        assert!(errors.iter().any(|d| d.message.contains("no enabled action")));
    }

    #[test]
    fn validate_warns_on_tiny_constants_and_unused_parameters() {
        let mut m = chain_model();
        m.param_names.push("w".to_string());
        m.actions[3][0].transitions = vec![
            (3, AffineExpr::constant(Rational::one() - rat(1, 100_000_000))),
            (4, AffineExpr::constant(rat(1, 100_000_000))),
        ];
        let diags = m.validate(DEFAULT_EPS_GRAPH);
        assert!(diags.iter().all(|d| d.severity == Severity::Warning));
        assert!(diags.iter().any(|d| d.message.contains("below the graph-preservation bound")));
        assert!(diags.iter().any(|d| d.message.contains("never referenced")));
    }

    #[test]
    fn instantiate_produces_the_expected_chain() {
        let m = chain_model();
        let mdp = m.instantiate(&[0.5]).unwrap();
        assert_eq!(mdp.actions[0][0].transitions, vec![(1, 0.5), (4, 0.5)]);
        assert_eq!(mdp.actions[1][0].transitions, vec![(2, 0.5), (4, 0.5)]);
        for acts in &mdp.actions {
            for act in acts {
                let sum: f64 = act.transitions.iter().map(|t| t.1).sum();
                assert!((sum - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn instantiate_rejects_values_outside_the_simplex() {
        let m = chain_model();
        let err = m.instantiate(&[1.2]).unwrap_err();
        match err {
            InstantiationError::NotWellDefined(list) => assert!(!list.is_empty()),
            other => panic!("unexpected error {other:?}"),
        }
        // Boundary-adjacent values stay legal even though they break the graph.
        assert!(m.instantiate(&[1e-6]).is_ok());
        assert!(m.check_graph_preserving(&[1e-6], DEFAULT_EPS_GRAPH));
        assert!(!m.check_graph_preserving(&[1e-7], DEFAULT_EPS_GRAPH));
    }

    #[test]
    fn param_intervals_fold_single_parameter_rows() {
        let m = chain_model();
        let eps = 1e-3;
        let box_ = m.param_intervals(eps).unwrap();
        assert_eq!(box_.len(), 1);
        assert!((box_[0].0 - eps).abs() < 1e-15);
        assert!((box_[0].1 - (1.0 - eps)).abs() < 1e-15);
        assert!(m.rectangular_region(eps).is_ok());
    }

    #[test]
    fn rectangular_region_rejects_coupled_parameters() {
        let mut m = chain_model();
        m.param_names.push("w".to_string());
        let mut coupled = AffineExpr::term(rat(1, 2), 0);
        coupled.add_term(rat(1, 2), 1);
        let mut rest = AffineExpr::constant(Rational::one());
        rest.sub_assign(&coupled);
        m.actions[0][0].transitions = vec![(1, coupled), (4, rest)];
        match m.rectangular_region(1e-6) {
            Err(RegionError::NonRectangular { state: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn template_matches_fresh_instantiation() {
        let m = chain_model();
        let template = InstantiationTemplate::new(&m);
        let mut mdp = template.fresh();
        for v in [0.1, 0.37, 0.62, 0.93] {
            assert!(template.instantiate_into(&[v], 1e-9, &mut mdp));
            let direct = m.instantiate(&[v]).unwrap();
            assert_eq!(mdp, direct);
        }
        assert!(!template.instantiate_into(&[1e-12], 1e-6, &mut mdp));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_expr() -> impl Strategy<Value = AffineExpr> {
            (
                (-8i64..=8, 1i64..=8),
                prop::collection::vec((0usize..4, -8i64..=8, 1i64..=8), 0..4),
            )
                .prop_map(|((cn, cd), terms)| {
                    let mut e = AffineExpr::constant(rat(cn, cd));
                    for (p, n, d) in terms {
                        e.add_term(rat(n, d), p);
                    }
                    e
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn eval_is_affine_in_the_valuation(
                e in arb_expr(),
                u in prop::array::uniform4(0.0f64..=1.0),
                w in prop::array::uniform4(0.0f64..=1.0),
                a in 0.0f64..=1.0,
            ) {
                let blend: Vec<f64> =
                    u.iter().zip(&w).map(|(x, y)| a * x + (1.0 - a) * y).collect();
                let lhs = e.eval(&blend).unwrap();
                let rhs = a * e.eval(&u).unwrap() + (1.0 - a) * e.eval(&w).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12, "{} vs {}", lhs, rhs);
            }

            #[test]
            fn graph_preserving_instantiations_keep_rows_stochastic(
                v in 1e-6..=(1.0 - 1e-6),
            ) {
                let mdp = chain_model().instantiate(&[v]).unwrap();
                for acts in &mdp.actions {
                    for act in acts {
                        let sum: f64 = act.transitions.iter().map(|&(_, p)| p).sum();
                        prop_assert!((sum - 1.0).abs() <= 1e-9, "row sums to {}", sum);
                    }
                }
            }
        }
    }
}
