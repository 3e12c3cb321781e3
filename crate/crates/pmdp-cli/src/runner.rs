//! Run orchestration: builds method configurations from flags, fans out over
//! seeds, certifies results, and renders the result document and trace files.
//!
//! Result documents are deterministic for fixed inputs and seed except for
//! the `wall_time_ms` fields. Keys are emitted in sorted order and non-finite
//! numbers are rendered as the strings `"Infinity"`, `"-Infinity"`, `"NaN"`.

use crate::fmt::{parse_model, parse_spec, ParseError};
use pmdp::mc::{check_spec_with, McMethod, BELLMAN_RESIDUAL, SAT_TOL, VI_STOP};
use pmdp::model::{ParametricMdp, Severity, Specification};
use pmdp::synth::{
    run_ccp, run_pso, run_scp, run_scp_regularized, CcpConfig, IterationRecord, NotFoundReason,
    PsoConfig, RegConfig, ScpConfig, SynthError, SynthesisOutcome, SynthesisStatus, ANCHOR_TOL,
    IMPROVE_TOL, PENALTY_EXIT,
};
use serde_json::{json, Map, Value};
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ccp,
    Scp,
    ScpReg,
    Pso,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ccp => "ccp",
            Method::Scp => "scp",
            Method::ScpReg => "scp-reg",
            Method::Pso => "pso",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model_path: PathBuf,
    pub spec_text: String,
    pub method: Method,
    pub eps_graph: f64,
    pub seed: u64,
    /// Number of independent seeded runs; above 1 they run concurrently and
    /// the document gains a merged summary.
    pub seeds: usize,
    pub max_iters: Option<usize>,
    pub tau0: Option<f64>,
    pub tau_max: Option<f64>,
    pub delta0: Option<f64>,
    pub gamma: Option<f64>,
    pub omega: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub trace: bool,
    pub oracle_check: bool,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model: {0}")]
    ModelSyntax(ParseError),
    #[error("model validation failed:\n{0}")]
    ModelInvalid(String),
    #[error("specification: {0}")]
    SpecSyntax(ParseError),
    #[error("specification invalid:\n{0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("oracle cross-validation failed: value iteration {vi} vs linear program {lp}")]
    OracleMismatch { vi: f64, lp: f64 },
}

pub struct RunArtifacts {
    pub result: Value,
    pub exit_code: i32,
    /// Trace CSVs by file stem (`trace` or `trace-<seed>`), when requested.
    pub traces: Vec<(String, String)>,
}

fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(format!(
            "{}",
            if x.is_nan() {
                "NaN"
            } else if x > 0.0 {
                "Infinity"
            } else {
                "-Infinity"
            }
        ))
    }
}

fn opt_f64(x: Option<f64>) -> Value {
    x.map(json_f64).unwrap_or(Value::Null)
}

fn reason_name(r: NotFoundReason) -> &'static str {
    match r {
        NotFoundReason::Infeasible => "infeasible",
        NotFoundReason::Converged => "converged",
        NotFoundReason::IterationCap => "iteration-cap",
        NotFoundReason::TrustRegionCollapsed => "trust-region-collapsed",
    }
}

fn trace_csv(trace: &[IterationRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iter", "objective", "mc_value", "penalty_sum", "delta", "tau", "accepted"])
        .expect("csv header");
    let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in trace {
        w.write_record([
            r.index.to_string(),
            r.objective.to_string(),
            cell(r.mc_value),
            cell(r.penalty_sum),
            cell(r.delta),
            cell(r.tau),
            r.accepted.to_string(),
        ])
        .expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}

fn execute(
    model: &ParametricMdp,
    spec: &Specification,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(SynthesisOutcome, u128), SynthError> {
    let started = Instant::now();
    let outcome = match cfg.method {
        Method::Ccp => {
            let mut c = CcpConfig {
                seed,
                eps: cfg.eps_graph,
                ..CcpConfig::default()
            };
            if let Some(n) = cfg.max_iters {
                c.max_iters = n;
            }
            c.tau0 = cfg.tau0.or(c.tau0);
            if let Some(t) = cfg.tau_max {
                c.tau_max = t;
            }
            run_ccp(model, spec, &c)?
        }
        Method::Scp => {
            let mut c = ScpConfig {
                eps: cfg.eps_graph,
                ..ScpConfig::default()
            };
            if let Some(n) = cfg.max_iters {
                c.max_iters = n;
            }
            if let Some(d) = cfg.delta0 {
                c.delta0 = d;
            }
            if let Some(g) = cfg.gamma {
                c.gamma = g;
            }
            if let Some(o) = cfg.omega {
                c.omega = o;
            }
            run_scp(model, spec, &c)?
        }
        Method::ScpReg => {
            let mut c = RegConfig {
                eps: cfg.eps_graph,
                ..RegConfig::default()
            };
            if let Some(n) = cfg.max_iters {
                c.max_iters = n;
            }
            run_scp_regularized(model, spec, &c)?
        }
        Method::Pso => {
            let mut c = PsoConfig {
                seed,
                eps: cfg.eps_graph,
                ..PsoConfig::default()
            };
            if let Some(n) = cfg.max_iters {
                c.max_iters = n;
            }
            run_pso(model, spec, &c)?
        }
    };
    Ok((outcome, started.elapsed().as_millis()))
}

fn oracle_check_value(
    model: &ParametricMdp,
    spec: &Specification,
    valuation: &[f64],
) -> Result<Value, RunError> {
    let mdp = model
        .instantiate(valuation)
        .expect("certified valuations instantiate");
    let vi = check_spec_with(&mdp, spec, McMethod::ValueIteration)
        .map_err(SynthError::Mc)?
        .at_initial;
    let lp = check_spec_with(&mdp, spec, McMethod::Lp)
        .map_err(SynthError::Mc)?
        .at_initial;
    let scale = 1.0 + vi.abs();
    let agree = (vi - lp).abs() <= 1e-7 * scale;
    if !agree {
        return Err(RunError::OracleMismatch { vi, lp });
    }
    Ok(json!({
        "agree": agree,
        "lp": json_f64(lp),
        "max_diff": json_f64((vi - lp).abs()),
        "vi": json_f64(vi),
    }))
}

fn config_echo(cfg: &RunConfig, seed: u64) -> Value {
    json!({
        "delta0": opt_f64(cfg.delta0),
        "eps_graph": json_f64(cfg.eps_graph),
        "gamma": opt_f64(cfg.gamma),
        "max_iters": cfg.max_iters.map(|n| json!(n)).unwrap_or(Value::Null),
        "method": cfg.method.name(),
        "model": cfg.model_path.display().to_string(),
        "omega": opt_f64(cfg.omega),
        "seed": seed,
        "spec": cfg.spec_text,
        "tau0": opt_f64(cfg.tau0),
        "tau_max": opt_f64(cfg.tau_max),
    })
}

fn tolerances() -> Value {
    json!({
        "anchor_tol": json_f64(ANCHOR_TOL),
        "bellman_residual": json_f64(BELLMAN_RESIDUAL),
        "improve_tol": json_f64(IMPROVE_TOL),
        "penalty_exit": json_f64(PENALTY_EXIT),
        "sat_tol": json_f64(SAT_TOL),
        "vi_stop": json_f64(VI_STOP),
    })
}

fn result_document(
    model: &ParametricMdp,
    spec: &Specification,
    cfg: &RunConfig,
    seed: u64,
    outcome: &SynthesisOutcome,
    wall_ms: u128,
) -> Result<Value, RunError> {
    let mut doc = Map::new();
    doc.insert("config".into(), config_echo(cfg, seed));
    doc.insert("delta_capped".into(), json!(outcome.delta_capped));
    doc.insert("iterations".into(), json!(outcome.iterations));
    doc.insert(
        "tool".into(),
        json!({ "name": "pmdp-cli", "version": env!("CARGO_PKG_VERSION") }),
    );
    doc.insert("tolerances".into(), tolerances());
    doc.insert("wall_time_ms".into(), json!(wall_ms as u64));
    match &outcome.status {
        SynthesisStatus::Feasible(valuation, res) => {
            let mut vals = Map::new();
            for (name, &x) in model.param_names.iter().zip(valuation) {
                vals.insert(name.clone(), json_f64(x));
            }
            doc.insert("status".into(), json!("feasible"));
            doc.insert("reason".into(), Value::Null);
            doc.insert("valuation".into(), Value::Object(vals));
            doc.insert("certified_value".into(), json_f64(res.at_initial));
            let oracle = if cfg.oracle_check {
                oracle_check_value(model, spec, valuation)?
            } else {
                Value::Null
            };
            doc.insert("oracle_check".into(), oracle);
        }
        SynthesisStatus::NotFound(reason) => {
            doc.insert("status".into(), json!("not-found"));
            doc.insert("reason".into(), json!(reason_name(*reason)));
            doc.insert("valuation".into(), Value::Null);
            doc.insert("certified_value".into(), Value::Null);
            doc.insert("oracle_check".into(), Value::Null);
        }
    }
    Ok(Value::Object(doc))
}

/// Parses, validates, runs the chosen method over one or more seeds, and
/// renders the artifacts. Does not touch the file system or the process exit
/// code; the binary wrapper owns those.
pub fn run(cfg: &RunConfig) -> Result<RunArtifacts, RunError> {
    let text =
        std::fs::read_to_string(&cfg.model_path).map_err(|source| RunError::Io {
            path: cfg.model_path.display().to_string(),
            source,
        })?;
    let model = parse_model(&text).map_err(RunError::ModelSyntax)?;
    let diags = model.validate(cfg.eps_graph);
    let errors: Vec<String> = diags
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.message.clone())
        .collect();
    if !errors.is_empty() {
        return Err(RunError::ModelInvalid(errors.join("\n")));
    }
    let spec = parse_spec(&cfg.spec_text, &model).map_err(RunError::SpecSyntax)?;
    let spec_errors: Vec<String> = spec
        .validate(&model)
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.message.clone())
        .collect();
    if !spec_errors.is_empty() {
        return Err(RunError::SpecInvalid(spec_errors.join("\n")));
    }

    if cfg.seeds <= 1 {
        let (outcome, wall_ms) = execute(&model, &spec, cfg, cfg.seed)?;
        let result = result_document(&model, &spec, cfg, cfg.seed, &outcome, wall_ms)?;
        let mut traces = Vec::new();
        if cfg.trace {
            traces.push(("trace".to_string(), trace_csv(&outcome.trace)));
        }
        let exit_code = if outcome.status.is_feasible() { 0 } else { 2 };
        return Ok(RunArtifacts {
            result,
            exit_code,
            traces,
        });
    }

    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|k| cfg.seed + k).collect();
    let mut runs: Vec<(u64, Result<(SynthesisOutcome, u128), SynthError>)> =
        Vec::with_capacity(seeds.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let (model, spec) = (&model, &spec);
                scope.spawn(move || (seed, execute(model, spec, cfg, seed)))
            })
            .collect();
        for h in handles {
            runs.push(h.join().expect("seed worker panicked"));
        }
    });
    runs.sort_by_key(|(seed, _)| *seed);

    let mut results = Vec::new();
    let mut traces = Vec::new();
    let mut feasible_seeds = Vec::new();
    let mut best: Option<f64> = None;
    let mut total_ms = 0u64;
    for (seed, run) in runs {
        let (outcome, wall_ms) = run?;
        total_ms += wall_ms as u64;
        if let SynthesisStatus::Feasible(_, res) = &outcome.status {
            feasible_seeds.push(seed);
            let better = match spec.direction {
                pmdp::model::Direction::AtMost => {
                    best.map(|b| res.at_initial < b).unwrap_or(true)
                }
                pmdp::model::Direction::AtLeast => {
                    best.map(|b| res.at_initial > b).unwrap_or(true)
                }
            };
            if better {
                best = Some(res.at_initial);
            }
        }
        if cfg.trace {
            traces.push((format!("trace-{seed}"), trace_csv(&outcome.trace)));
        }
        results.push(result_document(&model, &spec, cfg, seed, &outcome, wall_ms)?);
    }
    let exit_code = if feasible_seeds.is_empty() { 2 } else { 0 };
    let num_feasible = feasible_seeds.len();
    let result = json!({
        "results": results,
        "summary": {
            "best_certified_value": opt_f64(best),
            "feasible_seeds": feasible_seeds,
            "num_feasible": num_feasible,
            "num_runs": cfg.seeds,
            "total_wall_time_ms": total_ms,
        },
    });
    Ok(RunArtifacts {
        result,
        exit_code,
        traces,
    })
}
