//! Synthesis loops on top of the convex encodings.
//!
//! Every loop returns a parameter valuation only after an independent model
//! checking run on the instantiated model confirms the specification; the
//! convex subproblems merely steer the search. Iteration traces record, per
//! iteration, the subproblem objective, the checked value at the initial
//! state, the true penalty mass, and the step-control state, so trace
//! consumers can audit the update discipline after the fact.

use crate::encode::{
    build_qcqp, build_scp_regularized, convexify_ccp, curvature_estimate, linearize_scp,
    update_ccp_anchor, update_scp_anchor, update_scp_regularized, Anchor, EncodeError,
    QcqpEncoding, SCP_TAU,
};
use crate::graph::TrivialStatus;
use crate::mc::{check_spec, CheckResult, McError};
use crate::model::{
    Direction, InstantiationTemplate, ParametricMdp, RegionError, SpecKind, Specification,
    Valuation,
};
use qpsolver::{Settings, SolveReport, Status, WarmStart};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Penalty mass below which a convex-concave iterate counts as feasible for
/// the exact program and is handed to the model checker for certification.
pub const PENALTY_EXIT: f64 = 1e-9;
/// Anchor movement below which an iteration counts as converged.
pub const ANCHOR_TOL: f64 = 1e-8;
/// Trust-region growth cap.
pub const DELTA_MAX: f64 = 1e6;
/// Minimum improvement of the checked value for a sequential step to count.
pub const IMPROVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error("convex solver failed: {0}")]
    Solver(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotFoundReason {
    /// The structure of the model already rules the specification out, or
    /// every restart budget was exhausted on infeasible subproblems.
    Infeasible,
    /// The iteration converged without producing a certified point.
    Converged,
    /// The iteration budget ran out.
    IterationCap,
    /// The trust region collapsed below its floor.
    TrustRegionCollapsed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisStatus {
    /// Certified instantiation: the model checker confirmed the specification
    /// on the instantiated model at this valuation.
    Feasible(Valuation, CheckResult),
    NotFound(NotFoundReason),
}

impl SynthesisStatus {
    pub fn is_feasible(&self) -> bool {
        matches!(self, SynthesisStatus::Feasible(..))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub index: usize,
    /// Objective value of the convex subproblem (or the swarm's best).
    pub objective: f64,
    /// Value at the initial state from the model check of this iterate.
    pub mc_value: Option<f64>,
    /// True constraint violation mass of the original bilinear rows.
    pub penalty_sum: Option<f64>,
    pub delta: Option<f64>,
    pub tau: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOutcome {
    pub status: SynthesisStatus,
    pub trace: Vec<IterationRecord>,
    pub iterations: usize,
    /// Set when the trust-region growth rule hit [`DELTA_MAX`].
    pub delta_capped: bool,
}

impl SynthesisOutcome {
    fn bare(status: SynthesisStatus) -> Self {
        SynthesisOutcome {
            status,
            trace: Vec::new(),
            iterations: 0,
            delta_capped: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CcpConfig {
    pub max_iters: usize,
    /// Initial penalty weight; `None` picks 0.05 for reachability and 5 for
    /// expected cost.
    pub tau0: Option<f64>,
    pub tau_max: f64,
    pub restart_limit: usize,
    pub seed: u64,
    pub eps: f64,
}

impl Default for CcpConfig {
    fn default() -> Self {
        CcpConfig {
            max_iters: 500,
            tau0: None,
            tau_max: 1e4,
            restart_limit: 5,
            seed: 0,
            eps: crate::model::DEFAULT_EPS_GRAPH,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScpConfig {
    pub max_iters: usize,
    pub delta0: f64,
    pub gamma: f64,
    pub omega: f64,
    pub eps: f64,
}

impl Default for ScpConfig {
    fn default() -> Self {
        ScpConfig {
            max_iters: 500,
            delta0: 2.0,
            gamma: 1.5,
            omega: 1e-4,
            eps: crate::model::DEFAULT_EPS_GRAPH,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegConfig {
    pub max_iters: usize,
    pub beta0: f64,
    pub beta_step: f64,
    pub mu: f64,
    pub eps: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            max_iters: 500,
            beta0: 1.0,
            beta_step: 1.0,
            mu: 1.0,
            eps: crate::model::DEFAULT_EPS_GRAPH,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsoConfig {
    pub max_iters: usize,
    pub particles: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
    pub eps: f64,
    /// Optional wall-clock stop, checked between iterations. Runs with a
    /// budget are not deterministic across machines; leave `None` for the
    /// reproducibility contract.
    pub time_budget: Option<std::time::Duration>,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            max_iters: 1000,
            particles: 40,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            seed: 0,
            eps: crate::model::DEFAULT_EPS_GRAPH,
            time_budget: None,
        }
    }
}

fn default_tau0(kind: SpecKind) -> f64 {
    match kind {
        SpecKind::ReachProbability => 0.05,
        SpecKind::ExpectedCost => 5.0,
    }
}

fn box_center(bounds: &[(f64, f64)]) -> Valuation {
    bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()
}

fn clamp_to_box(v: &mut [f64], bounds: &[(f64, f64)]) {
    for (x, &(lo, hi)) in v.iter_mut().zip(bounds) {
        *x = x.clamp(lo, hi);
    }
}

/// Certifies a single valuation by instantiation plus model checking.
fn certify(
    model: &ParametricMdp,
    spec: &Specification,
    eps: f64,
    valuation: &[f64],
) -> Result<Option<CheckResult>, SynthError> {
    let mdp = match model.instantiate(valuation) {
        Ok(m) => m,
        Err(_) => return Ok(None),
    };
    let _ = eps;
    match check_spec(&mdp, spec) {
        Ok(res) if res.satisfied => Ok(Some(res)),
        Ok(_) => Ok(None),
        Err(McError::InfiniteCost(_)) => Ok(None),
        Err(e) => Err(SynthError::Mc(e)),
    }
}

/// Handles the no-search cases shared by all methods: a trivially decided
/// initial state, or a model without parameters.
fn short_circuit(
    model: &ParametricMdp,
    spec: &Specification,
    enc: &QcqpEncoding,
) -> Result<Option<SynthesisOutcome>, SynthError> {
    match enc.indexing.trivial {
        Some(TrivialStatus::Infeasible) => Ok(Some(SynthesisOutcome::bare(
            SynthesisStatus::NotFound(NotFoundReason::Infeasible),
        ))),
        Some(TrivialStatus::Feasible) => {
            let center = box_center(&enc.param_bounds);
            let status = match certify(model, spec, enc.eps, &center)? {
                Some(res) => SynthesisStatus::Feasible(center, res),
                None => SynthesisStatus::NotFound(NotFoundReason::Infeasible),
            };
            Ok(Some(SynthesisOutcome::bare(status)))
        }
        None if model.num_params() == 0 => {
            let status = match certify(model, spec, enc.eps, &[])? {
                Some(res) => SynthesisStatus::Feasible(Vec::new(), res),
                None => SynthesisStatus::NotFound(NotFoundReason::Infeasible),
            };
            Ok(Some(SynthesisOutcome::bare(status)))
        }
        None => Ok(None),
    }
}

fn solve_or_status(
    problem: &qpsolver::ConvexProblem,
    settings: &Settings,
    warm: Option<&WarmStart>,
) -> Result<SolveReport, SynthError> {
    qpsolver::solve(problem, settings, warm).map_err(|e| SynthError::Solver(e.to_string()))
}

/// Model check at a valuation; instantiation failures and diverging costs are
/// reported as `None` so the caller can treat the iterate as rejected.
fn try_check(
    template: &mut InstantiationTemplate,
    scratch: &mut crate::model::Mdp,
    model: &ParametricMdp,
    spec: &Specification,
    eps: f64,
    valuation: &[f64],
) -> Result<Option<CheckResult>, SynthError> {
    let _ = model;
    if !template.instantiate_into(valuation, eps, scratch) {
        return Ok(None);
    }
    match check_spec(scratch, spec) {
        Ok(res) => Ok(Some(res)),
        Err(McError::InfiniteCost(_)) => Ok(None),
        Err(e) => Err(SynthError::Mc(e)),
    }
}

/// True violation mass of the original bilinear rows at `(params, probs)`.
fn true_penalty(enc: &QcqpEncoding, params: &[f64], probs: &[f64]) -> f64 {
    let dir = match enc.direction {
        Direction::AtMost => 1.0,
        Direction::AtLeast => -1.0,
    };
    let mut total = 0.0;
    for row in &enc.bellman {
        let own = enc.indexing.index_of_state[row.state].expect("row state has a variable");
        let residual = dir * (enc.row_rhs(row, params, probs) - probs[own]);
        total += residual.max(0.0);
    }
    total
}

fn anchor_probs_from(enc: &QcqpEncoding, res: &CheckResult) -> Vec<f64> {
    enc.indexing
        .prob_states
        .iter()
        .map(|&s| res.per_state[s])
        .collect()
}

/// Convex-concave iteration: convexify at the anchor, solve, certify the
/// parameter point, move the anchor to the checked values, grow the penalty
/// weight, and restart from a random point when the iteration stalls.
pub fn run_ccp(
    model: &ParametricMdp,
    spec: &Specification,
    cfg: &CcpConfig,
) -> Result<SynthesisOutcome, SynthError> {
    let enc = build_qcqp(model, spec, cfg.eps)?;
    if let Some(out) = short_circuit(model, spec, &enc)? {
        return Ok(out);
    }
    let tau0 = cfg.tau0.unwrap_or_else(|| default_tau0(spec.kind));
    let np = enc.num_params;
    let nv = enc.num_prob_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut anchor = Anchor {
        params: box_center(&enc.param_bounds),
        probs: vec![spec.threshold; nv],
    };
    let mut tau = tau0;
    let mut problem = convexify_ccp(&enc, &anchor, tau);
    let settings = Settings::default();
    let mut template = InstantiationTemplate::new(model);
    let mut scratch = template.fresh();
    let mut warm: Option<WarmStart> = None;
    let mut trace = Vec::new();
    let mut restarts = 0usize;
    let mut last_stall = NotFoundReason::Converged;

    let resample = |rng: &mut ChaCha8Rng| Anchor {
        params: enc
            .param_bounds
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..=hi))
            .collect(),
        probs: vec![spec.threshold; nv],
    };

    let mut iter = 0usize;
    while iter < cfg.max_iters {
        update_ccp_anchor(&mut problem, &enc, &anchor, tau).expect("shape is stable");
        let report = solve_or_status(&problem, &settings, warm.as_ref())?;
        iter += 1;
        let solved = matches!(report.status, Status::Optimal);
        if !solved {
            trace.push(IterationRecord {
                index: iter,
                objective: f64::NAN,
                mc_value: None,
                penalty_sum: None,
                delta: None,
                tau: Some(tau),
                accepted: false,
            });
            last_stall = NotFoundReason::Infeasible;
            if restarts >= cfg.restart_limit {
                return Ok(SynthesisOutcome {
                    status: SynthesisStatus::NotFound(NotFoundReason::Infeasible),
                    trace,
                    iterations: iter,
                    delta_capped: false,
                });
            }
            restarts += 1;
            anchor = resample(&mut rng);
            tau = tau0;
            continue;
        }
        warm = Some(WarmStart::from_report(&report));
        let mut params = report.x[..np].to_vec();
        clamp_to_box(&mut params, &enc.param_bounds);
        let probs = report.x[np..np + nv].to_vec();
        let penalty = true_penalty(&enc, &params, &probs);
        let checked = try_check(&mut template, &mut scratch, model, spec, cfg.eps, &params)?;
        let mc_value = checked.as_ref().map(|r| r.at_initial);
        let satisfied_now = checked.as_ref().map(|r| r.satisfied).unwrap_or(false);
        trace.push(IterationRecord {
            index: iter,
            objective: report.objective,
            mc_value,
            penalty_sum: Some(penalty),
            delta: None,
            tau: Some(tau),
            accepted: satisfied_now,
        });
        if satisfied_now {
            let res = checked.expect("checked above");
            return Ok(SynthesisOutcome {
                status: SynthesisStatus::Feasible(params, res),
                trace,
                iterations: iter,
                delta_capped: false,
            });
        }
        // Penalty-free iterates are certified feasible for the surrogate; the
        // check above is the independent confirmation, and a disagreement
        // means the surrogate's point is numerically borderline: restart.
        let stalled = if penalty <= PENALTY_EXIT {
            last_stall = NotFoundReason::Converged;
            true
        } else {
            match &checked {
                Some(res) => {
                    let new_probs = anchor_probs_from(&enc, res);
                    let moved = params
                        .iter()
                        .zip(&anchor.params)
                        .chain(new_probs.iter().zip(&anchor.probs))
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max);
                    if moved < ANCHOR_TOL {
                        last_stall = NotFoundReason::Converged;
                        true
                    } else {
                        let mu = new_probs.iter().fold(0.0f64, |m, &p| m.max(p));
                        anchor.params = params;
                        anchor.probs = new_probs;
                        tau = (tau + mu).min(cfg.tau_max);
                        false
                    }
                }
                // Not instantiable or diverging at this point: restart.
                None => {
                    last_stall = NotFoundReason::Converged;
                    true
                }
            }
        };
        if stalled {
            if restarts >= cfg.restart_limit {
                return Ok(SynthesisOutcome {
                    status: SynthesisStatus::NotFound(last_stall),
                    trace,
                    iterations: iter,
                    delta_capped: false,
                });
            }
            restarts += 1;
            anchor = resample(&mut rng);
            tau = tau0;
            warm = None;
        }
    }
    Ok(SynthesisOutcome {
        status: SynthesisStatus::NotFound(NotFoundReason::IterationCap),
        trace,
        iterations: iter,
        delta_capped: false,
    })
}

/// Sequential convex iteration: linearize at the anchor inside a trust
/// region, accept steps whose checked value strictly improves, and shrink the
/// region on rejection until it collapses.
pub fn run_scp(
    model: &ParametricMdp,
    spec: &Specification,
    cfg: &ScpConfig,
) -> Result<SynthesisOutcome, SynthError> {
    let enc = build_qcqp(model, spec, cfg.eps)?;
    if let Some(out) = short_circuit(model, spec, &enc)? {
        return Ok(out);
    }
    let np = enc.num_params;
    let nv = enc.num_prob_vars();
    let mut anchor = Anchor {
        params: box_center(&enc.param_bounds),
        probs: vec![spec.threshold; nv],
    };
    let mut best = match spec.direction {
        Direction::AtMost => 1e30,
        Direction::AtLeast => 0.0,
    };
    let mut delta = cfg.delta0;
    let mut delta_capped = false;
    let mut problem = linearize_scp(&enc, &anchor, delta, SCP_TAU);
    let settings = Settings::default();
    let mut template = InstantiationTemplate::new(model);
    let mut scratch = template.fresh();
    let mut warm: Option<WarmStart> = None;
    let mut trace = Vec::new();

    let mut iter = 0usize;
    while iter < cfg.max_iters {
        update_scp_anchor(&mut problem, &enc, &anchor, delta, SCP_TAU).expect("shape is stable");
        let report = solve_or_status(&problem, &settings, warm.as_ref())?;
        iter += 1;
        let delta_used = delta;
        let solved = matches!(report.status, Status::Optimal);
        let mut objective = f64::NAN;
        let mut mc_value = None;
        let mut accepted = false;
        let mut feasible: Option<(Valuation, CheckResult)> = None;
        if solved {
            warm = Some(WarmStart::from_report(&report));
            objective = report.objective;
            let mut params = report.x[..np].to_vec();
            clamp_to_box(&mut params, &enc.param_bounds);
            let checked = try_check(&mut template, &mut scratch, model, spec, cfg.eps, &params)?;
            if let Some(res) = checked {
                mc_value = Some(res.at_initial);
                if res.satisfied {
                    accepted = true;
                    feasible = Some((params, res));
                } else {
                    let improved = match spec.direction {
                        Direction::AtMost => res.at_initial < best - IMPROVE_TOL,
                        Direction::AtLeast => res.at_initial > best + IMPROVE_TOL,
                    };
                    if improved {
                        accepted = true;
                        best = res.at_initial;
                        anchor.params = params;
                        anchor.probs = anchor_probs_from(&enc, &res);
                    }
                }
            }
        }
        trace.push(IterationRecord {
            index: iter,
            objective,
            mc_value,
            penalty_sum: None,
            delta: Some(delta_used),
            tau: None,
            accepted,
        });
        if let Some((params, res)) = feasible {
            return Ok(SynthesisOutcome {
                status: SynthesisStatus::Feasible(params, res),
                trace,
                iterations: iter,
                delta_capped,
            });
        }
        if accepted {
            let grown = delta * cfg.gamma;
            if grown > DELTA_MAX {
                delta = DELTA_MAX;
                delta_capped = true;
            } else {
                delta = grown;
            }
        } else {
            delta /= cfg.gamma;
            if delta < cfg.omega {
                return Ok(SynthesisOutcome {
                    status: SynthesisStatus::NotFound(NotFoundReason::TrustRegionCollapsed),
                    trace,
                    iterations: iter,
                    delta_capped,
                });
            }
        }
    }
    Ok(SynthesisOutcome {
        status: SynthesisStatus::NotFound(NotFoundReason::IterationCap),
        trace,
        iterations: iter,
        delta_capped,
    })
}

/// Penalty-regularized sequential iteration: a single slack, no threshold
/// row, and a proximal term around the previous iterate; the penalty weight
/// grows while linearized feasibility fails.
pub fn run_scp_regularized(
    model: &ParametricMdp,
    spec: &Specification,
    cfg: &RegConfig,
) -> Result<SynthesisOutcome, SynthError> {
    let enc = build_qcqp(model, spec, cfg.eps)?;
    if let Some(out) = short_circuit(model, spec, &enc)? {
        return Ok(out);
    }
    let np = enc.num_params;
    let nv = enc.num_prob_vars();
    let mu_prime = curvature_estimate(&enc);
    let mut anchor = Anchor {
        params: box_center(&enc.param_bounds),
        probs: vec![spec.threshold; nv],
    };
    let mut beta = cfg.beta0;
    let mut problem = build_scp_regularized(&enc, &anchor, beta, cfg.mu, mu_prime);
    let settings = Settings::default();
    let mut template = InstantiationTemplate::new(model);
    let mut scratch = template.fresh();
    let mut warm: Option<WarmStart> = None;
    let mut trace = Vec::new();

    let mut iter = 0usize;
    while iter < cfg.max_iters {
        update_scp_regularized(&mut problem, &enc, &anchor, beta, cfg.mu, mu_prime)
            .expect("shape is stable");
        let report = solve_or_status(&problem, &settings, warm.as_ref())?;
        iter += 1;
        if !matches!(report.status, Status::Optimal) {
            trace.push(IterationRecord {
                index: iter,
                objective: f64::NAN,
                mc_value: None,
                penalty_sum: None,
                delta: None,
                tau: Some(beta),
                accepted: false,
            });
            beta += cfg.beta_step;
            continue;
        }
        warm = Some(WarmStart::from_report(&report));
        let mut params = report.x[..np].to_vec();
        clamp_to_box(&mut params, &enc.param_bounds);
        let probs = report.x[np..np + nv].to_vec();
        // Linearized feasibility of the step, measured on the solved rows.
        let base = enc.wd_rows.len();
        let mut worst = 0.0f64;
        let mut x = params.clone();
        x.extend(&probs);
        x.push(0.0);
        for row in &problem.rows[base..] {
            worst = worst.max(row.value(&x) - row.hi);
        }
        let step_ok = worst <= PENALTY_EXIT;
        let moved = params
            .iter()
            .zip(&anchor.params)
            .chain(probs.iter().zip(&anchor.probs))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let mut mc_value = None;
        let mut feasible: Option<(Valuation, CheckResult)> = None;
        if step_ok {
            let checked = try_check(&mut template, &mut scratch, model, spec, cfg.eps, &params)?;
            if let Some(res) = checked {
                mc_value = Some(res.at_initial);
                if res.satisfied {
                    feasible = Some((params.clone(), res));
                }
            }
            anchor.params = params;
            anchor.probs = probs;
        } else {
            beta += cfg.beta_step;
        }
        trace.push(IterationRecord {
            index: iter,
            objective: report.objective,
            mc_value,
            penalty_sum: Some(worst.max(0.0)),
            delta: None,
            tau: Some(beta),
            accepted: step_ok,
        });
        if let Some((params, res)) = feasible {
            return Ok(SynthesisOutcome {
                status: SynthesisStatus::Feasible(params, res),
                trace,
                iterations: iter,
                delta_capped: false,
            });
        }
        if step_ok && moved < ANCHOR_TOL {
            return Ok(SynthesisOutcome {
                status: SynthesisStatus::NotFound(NotFoundReason::Converged),
                trace,
                iterations: iter,
                delta_capped: false,
            });
        }
    }
    Ok(SynthesisOutcome {
        status: SynthesisStatus::NotFound(NotFoundReason::IterationCap),
        trace,
        iterations: iter,
        delta_capped: false,
    })
}

/// Particle-swarm search over the rectangular admissible region. Purely
/// sampling based; every evaluation is a full model check, and the first
/// satisfying sample is returned with its certificate.
pub fn run_pso(
    model: &ParametricMdp,
    spec: &Specification,
    cfg: &PsoConfig,
) -> Result<SynthesisOutcome, SynthError> {
    let bounds = model.rectangular_region(cfg.eps)?;
    if model.num_params() == 0 {
        let status = match certify(model, spec, cfg.eps, &[])? {
            Some(res) => SynthesisStatus::Feasible(Vec::new(), res),
            None => SynthesisStatus::NotFound(NotFoundReason::Infeasible),
        };
        return Ok(SynthesisOutcome::bare(status));
    }
    let np = model.num_params();
    let dir = match spec.direction {
        Direction::AtMost => 1.0,
        Direction::AtLeast => -1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut template = InstantiationTemplate::new(model);
    let mut scratch = template.fresh();
    let evaluate = |v: &[f64],
                        template: &mut InstantiationTemplate,
                        scratch: &mut crate::model::Mdp|
     -> Result<(f64, Option<CheckResult>), SynthError> {
        if !template.instantiate_into(v, cfg.eps, scratch) {
            return Ok((f64::INFINITY, None));
        }
        match check_spec(scratch, spec) {
            Ok(res) => Ok((dir * res.at_initial, Some(res))),
            Err(e) => Err(SynthError::Mc(e)),
        }
    };

    let mut positions: Vec<Valuation> = (0..cfg.particles)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| rng.gen_range(lo..=hi))
                .collect()
        })
        .collect();
    let mut velocities: Vec<Valuation> = vec![vec![0.0; np]; cfg.particles];
    let mut pbest_pos = positions.clone();
    let mut pbest_fit = vec![f64::INFINITY; cfg.particles];
    let mut gbest_pos = positions[0].clone();
    let mut gbest_fit = f64::INFINITY;
    let mut trace = Vec::new();
    let started = std::time::Instant::now();

    let mut iter = 0usize;
    while iter < cfg.max_iters {
        if let Some(budget) = cfg.time_budget {
            if started.elapsed() >= budget {
                break;
            }
        }
        iter += 1;
        let mut improved = false;
        for i in 0..cfg.particles {
            let (fit, res) = evaluate(&positions[i], &mut template, &mut scratch)?;
            if let Some(res) = res {
                if res.satisfied {
                    trace.push(IterationRecord {
                        index: iter,
                        objective: fit,
                        mc_value: Some(res.at_initial),
                        penalty_sum: None,
                        delta: None,
                        tau: None,
                        accepted: true,
                    });
                    return Ok(SynthesisOutcome {
                        status: SynthesisStatus::Feasible(positions[i].clone(), res),
                        trace,
                        iterations: iter,
                        delta_capped: false,
                    });
                }
            }
            if fit < pbest_fit[i] {
                pbest_fit[i] = fit;
                pbest_pos[i] = positions[i].clone();
            }
            // Strict comparison keeps the earliest-indexed particle on ties.
            if fit < gbest_fit {
                gbest_fit = fit;
                gbest_pos = positions[i].clone();
                improved = true;
            }
        }
        trace.push(IterationRecord {
            index: iter,
            objective: gbest_fit,
            mc_value: Some(dir * gbest_fit),
            penalty_sum: None,
            delta: None,
            tau: None,
            accepted: improved,
        });
        for i in 0..cfg.particles {
            for d in 0..np {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                velocities[i][d] = cfg.inertia * velocities[i][d]
                    + cfg.cognitive * r1 * (pbest_pos[i][d] - positions[i][d])
                    + cfg.social * r2 * (gbest_pos[d] - positions[i][d]);
                positions[i][d] =
                    (positions[i][d] + velocities[i][d]).clamp(bounds[d].0, bounds[d].1);
            }
        }
    }
    Ok(SynthesisOutcome {
        status: SynthesisStatus::NotFound(NotFoundReason::IterationCap),
        trace,
        iterations: iter,
        delta_capped: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::chain_model;
    use std::collections::BTreeSet;

    fn spec(direction: Direction, threshold: f64) -> Specification {
        Specification {
            kind: SpecKind::ReachProbability,
            direction,
            threshold,
            target_set: BTreeSet::from([3]),
        }
    }

    fn assert_certified(outcome: &SynthesisOutcome, spec: &Specification) {
        match &outcome.status {
            SynthesisStatus::Feasible(v, res) => {
                assert!(res.satisfied);
                let mdp = chain_model().instantiate(v).unwrap();
                let fresh = crate::mc::check_spec(&mdp, spec).unwrap();
                assert!(fresh.satisfied, "certificate must reproduce");
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn ccp_certifies_the_upper_threshold() {
        let s = spec(Direction::AtMost, 0.1);
        let out = run_ccp(&chain_model(), &s, &CcpConfig::default()).unwrap();
        assert_certified(&out, &s);
        assert!(out.iterations <= 100);
    }

    #[test]
    fn ccp_certifies_the_lower_threshold() {
        let s = spec(Direction::AtLeast, 0.14);
        let out = run_ccp(&chain_model(), &s, &CcpConfig::default()).unwrap();
        assert_certified(&out, &s);
        if let SynthesisStatus::Feasible(v, _) = &out.status {
            assert!(v[0] > 0.54 && v[0] < 0.79, "v = {}", v[0]);
        }
    }

    #[test]
    fn scp_certifies_both_thresholds() {
        for s in [spec(Direction::AtMost, 0.1), spec(Direction::AtLeast, 0.14)] {
            let out = run_scp(&chain_model(), &s, &ScpConfig::default()).unwrap();
            assert_certified(&out, &s);
        }
    }

    #[test]
    fn scp_regularized_certifies_both_thresholds() {
        for s in [spec(Direction::AtMost, 0.1), spec(Direction::AtLeast, 0.14)] {
            let out = run_scp_regularized(&chain_model(), &s, &RegConfig::default()).unwrap();
            assert_certified(&out, &s);
        }
    }

    #[test]
    fn pso_certifies_both_thresholds() {
        for s in [spec(Direction::AtMost, 0.1), spec(Direction::AtLeast, 0.14)] {
            let out = run_pso(&chain_model(), &s, &PsoConfig::default()).unwrap();
            assert_certified(&out, &s);
        }
    }

    #[test]
    fn unattainable_threshold_is_never_feasible() {
        // Maximum reachability in the chain is 4/27, far below 0.2.
        let s = spec(Direction::AtLeast, 0.2);
        for seed in 0..3 {
            let ccp = run_ccp(
                &chain_model(),
                &s,
                &CcpConfig {
                    seed,
                    ..CcpConfig::default()
                },
            )
            .unwrap();
            assert!(!ccp.status.is_feasible());
            let pso = run_pso(
                &chain_model(),
                &s,
                &PsoConfig {
                    seed,
                    max_iters: 50,
                    ..PsoConfig::default()
                },
            )
            .unwrap();
            assert!(!pso.status.is_feasible());
        }
        let scp = run_scp(&chain_model(), &s, &ScpConfig::default()).unwrap();
        assert!(!scp.status.is_feasible());
    }

    #[test]
    fn scp_trace_follows_the_update_discipline() {
        let s = spec(Direction::AtLeast, 0.14);
        let out = run_scp(&chain_model(), &s, &ScpConfig::default()).unwrap();
        let cfg = ScpConfig::default();
        let mut expected = cfg.delta0;
        let mut last_best: Option<f64> = None;
        for rec in &out.trace {
            assert_eq!(rec.delta, Some(expected));
            if rec.accepted {
                if let Some(v) = rec.mc_value {
                    if let Some(prev) = last_best {
                        assert!(v > prev, "accepted values must improve");
                    }
                    last_best = Some(v);
                }
                expected = (expected * cfg.gamma).min(DELTA_MAX);
            } else {
                expected /= cfg.gamma;
            }
        }
    }

    #[test]
    fn trivial_goal_short_circuits() {
        let mut m = chain_model();
        m.initial = 3; // already in the target set
        let s = spec(Direction::AtLeast, 0.9);
        let out = run_ccp(&m, &s, &CcpConfig::default()).unwrap();
        assert!(out.status.is_feasible());
        assert_eq!(out.iterations, 0);
        let s_bad = spec(Direction::AtMost, 0.5);
        let mut m2 = chain_model();
        m2.initial = 3;
        let out2 = run_scp(&m2, &s_bad, &ScpConfig::default()).unwrap();
        assert!(!out2.status.is_feasible());
    }
}
