//! Plain-text model format and the specification grammar.
//!
//! Model files are line oriented:
//!
//! ```text
//! pmdp
//! parameters: v w
//! states: 5
//! initial: 0
//! label target: 3
//! cost 0 a: 1/2
//! state 0
//!   action a
//!     1 : v
//!     4 : 1 - v
//! ```
//!
//! Comments run from `#` to the end of the line. Rationals are `a/b` or
//! decimal and are kept exact. Specifications follow
//! `("P" | "E") ("<=" | ">=") number "[" "F" label-or-state-list "]"`.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use pmdp::model::{
    ActionDef, AffineExpr, Direction, ParamId, ParametricMdp, Rational, SpecKind, Specification,
    StateId,
};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        msg: msg.into(),
    })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Exact rational from `a/b`, decimal, or integer text.
fn parse_rational(s: &str, line: usize) -> Result<Rational, ParseError> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n = num
            .trim()
            .parse::<BigInt>()
            .or_else(|_| err(line, format!("bad numerator '{num}'")))?;
        let d = den
            .trim()
            .parse::<BigInt>()
            .or_else(|_| err(line, format!("bad denominator '{den}'")))?;
        if d.is_zero() {
            return err(line, "zero denominator");
        }
        return Ok(Rational::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let digits: String = if int.is_empty() || int == "-" {
            format!("{int}0{frac}")
        } else {
            format!("{int}{frac}")
        };
        if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) {
            return err(line, format!("bad decimal '{s}'"));
        }
        let n = digits
            .parse::<BigInt>()
            .or_else(|_| err(line, format!("bad decimal '{s}'")))?;
        let d = BigInt::from(10u32).pow(frac.len() as u32);
        return Ok(Rational::new(n, d));
    }
    s.parse::<BigInt>()
        .map(Rational::from_integer)
        .or_else(|_| err(line, format!("bad rational '{s}'")))
}

/// Affine expression: terms joined by `+`/`-`; each term is a rational, a
/// parameter, or `rational*param`.
fn parse_expr(
    s: &str,
    params: &BTreeMap<String, ParamId>,
    line: usize,
) -> Result<AffineExpr, ParseError> {
    let mut expr = AffineExpr::zero();
    let mut term = String::new();
    let mut pending: Vec<(String, bool)> = Vec::new();
    let mut negative = false;
    let mut seen_term = false;
    for c in s.chars() {
        match c {
            '+' | '-' => {
                if term.trim().is_empty() {
                    if seen_term || !term.trim().is_empty() {
                        return err(line, format!("dangling sign in '{s}'"));
                    }
                    // Leading sign of the first term.
                    if c == '-' {
                        negative = !negative;
                    }
                } else {
                    pending.push((term.trim().to_string(), negative));
                    term.clear();
                    negative = c == '-';
                }
                seen_term = true;
            }
            _ => term.push(c),
        }
    }
    if term.trim().is_empty() {
        return err(line, format!("empty expression '{s}'"));
    }
    pending.push((term.trim().to_string(), negative));
    for (text, neg) in pending {
        let (mut coeff, param) = match text.split_once('*') {
            Some((c, p)) => {
                let p = p.trim();
                if !is_identifier(p) {
                    return err(line, format!("expected parameter after '*' in '{text}'"));
                }
                (parse_rational(c, line)?, Some(p.to_string()))
            }
            None => {
                if is_identifier(&text) {
                    (Rational::one(), Some(text.clone()))
                } else {
                    (parse_rational(&text, line)?, None)
                }
            }
        };
        if neg {
            coeff = -coeff;
        }
        match param {
            Some(name) => match params.get(&name) {
                Some(&id) => expr.add_term(coeff, id),
                None => return err(line, format!("unknown parameter '{name}'")),
            },
            None => expr.add_constant(&coeff),
        }
    }
    Ok(expr)
}

fn parse_state_id(s: &str, num_states: usize, line: usize) -> Result<StateId, ParseError> {
    match s.trim().parse::<usize>() {
        Ok(id) if id < num_states => Ok(id),
        Ok(id) => err(line, format!("state {id} out of range (states: {num_states})")),
        Err(_) => err(line, format!("bad state id '{s}'")),
    }
}

/// Parses the plain-text model format. Syntax only; semantic checks live in
/// [`ParametricMdp::validate`].
pub fn parse_model(text: &str) -> Result<ParametricMdp, ParseError> {
    let lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let body = match l.split_once('#') {
                Some((before, _)) => before,
                None => l,
            };
            (i + 1, body.trim().to_string())
        })
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let mut pos = 0usize;
    let take = |pos: &mut usize| -> Option<&(usize, String)> {
        let item = lines.get(*pos);
        if item.is_some() {
            *pos += 1;
        }
        item
    };

    match take(&mut pos) {
        Some((_, l)) if l == "pmdp" => {}
        Some((n, l)) => return err(*n, format!("expected 'pmdp' header, found '{l}'")),
        None => return err(1, "empty file"),
    }
    let (mut param_names, mut name_to_id) = (Vec::new(), BTreeMap::new());
    match take(&mut pos) {
        Some((n, l)) if l.starts_with("parameters:") => {
            for name in l["parameters:".len()..].split_whitespace() {
                if !is_identifier(name) {
                    return err(*n, format!("bad parameter name '{name}'"));
                }
                if name_to_id.insert(name.to_string(), param_names.len()).is_some() {
                    return err(*n, format!("duplicate parameter '{name}'"));
                }
                param_names.push(name.to_string());
            }
        }
        Some((n, _)) => return err(*n, "expected 'parameters:'"),
        None => return err(1, "missing 'parameters:'"),
    }
    let num_states = match take(&mut pos) {
        Some((n, l)) if l.starts_with("states:") => l["states:".len()..]
            .trim()
            .parse::<usize>()
            .or_else(|_| err(*n, "bad state count"))?,
        Some((n, _)) => return err(*n, "expected 'states:'"),
        None => return err(1, "missing 'states:'"),
    };
    let initial = match take(&mut pos) {
        Some((n, l)) if l.starts_with("initial:") => {
            parse_state_id(&l["initial:".len()..], num_states, *n)?
        }
        Some((n, _)) => return err(*n, "expected 'initial:'"),
        None => return err(1, "missing 'initial:'"),
    };

    let mut labels: BTreeMap<String, BTreeSet<StateId>> = BTreeMap::new();
    let mut costs: Vec<(usize, StateId, String, Rational)> = Vec::new();
    let mut actions: Vec<Vec<ActionDef>> = vec![Vec::new(); num_states];
    let mut seen_state: Vec<bool> = vec![false; num_states];
    let mut current: Option<StateId> = None;

    while let Some((n, l)) = take(&mut pos) {
        let (n, l) = (*n, l.as_str());
        if let Some(rest) = l.strip_prefix("label ") {
            let (name, ids) = match rest.split_once(':') {
                Some(x) => x,
                None => return err(n, "label line needs ':'"),
            };
            let name = name.trim();
            if !is_identifier(name) {
                return err(n, format!("bad label name '{name}'"));
            }
            let set = labels.entry(name.to_string()).or_default();
            for tok in ids.split_whitespace() {
                set.insert(parse_state_id(tok, num_states, n)?);
            }
            current = None;
        } else if let Some(rest) = l.strip_prefix("cost ") {
            let (head, value) = match rest.split_once(':') {
                Some(x) => x,
                None => return err(n, "cost line needs ':'"),
            };
            let mut it = head.split_whitespace();
            let (s, a) = match (it.next(), it.next(), it.next()) {
                (Some(s), Some(a), None) => (s, a),
                _ => return err(n, "cost line needs '<state> <action>'"),
            };
            let state = parse_state_id(s, num_states, n)?;
            let q = parse_rational(value, n)?;
            if q.is_negative() {
                return err(n, "costs must be nonnegative");
            }
            costs.push((n, state, a.to_string(), q));
            current = None;
        } else if let Some(rest) = l.strip_prefix("state ") {
            let id = parse_state_id(rest, num_states, n)?;
            if seen_state[id] {
                return err(n, format!("state {id} defined twice"));
            }
            seen_state[id] = true;
            current = Some(id);
        } else if let Some(rest) = l.strip_prefix("action ") {
            let state = match current {
                Some(s) => s,
                None => return err(n, "'action' outside a state block"),
            };
            let name = rest.trim();
            if !is_identifier(name) {
                return err(n, format!("bad action name '{name}'"));
            }
            if actions[state].iter().any(|a| a.name == name) {
                return err(n, format!("duplicate action '{name}' in state {state}"));
            }
            actions[state].push(ActionDef {
                name: name.to_string(),
                cost: Rational::zero(),
                transitions: Vec::new(),
            });
        } else if l.starts_with(|c: char| c.is_ascii_digit()) {
            let state = match current {
                Some(s) => s,
                None => return err(n, "transition outside a state block"),
            };
            let act = match actions[state].last_mut() {
                Some(a) => a,
                None => return err(n, "transition before any 'action'"),
            };
            let (succ, expr) = match l.split_once(':') {
                Some(x) => x,
                None => return err(n, "transition line needs ':'"),
            };
            let succ = parse_state_id(succ, num_states, n)?;
            if act.transitions.iter().any(|(t, _)| *t == succ) {
                return err(n, format!("duplicate successor {succ}"));
            }
            let expr = parse_expr(expr, &name_to_id, n)?;
            let at = act.transitions.partition_point(|(t, _)| *t < succ);
            act.transitions.insert(at, (succ, expr));
        } else {
            return err(n, format!("unrecognized line '{l}'"));
        }
    }

    let mut has_costs = false;
    for (n, state, name, q) in costs {
        match actions[state].iter_mut().find(|a| a.name == name) {
            Some(a) => a.cost = q,
            None => return err(n, format!("state {state} has no action '{name}'")),
        }
        has_costs = true;
    }
    Ok(ParametricMdp {
        param_names,
        num_states,
        initial,
        actions,
        labels,
        has_costs,
    })
}

fn write_rational(out: &mut String, q: &Rational) {
    if q.denom().is_one() {
        let _ = write!(out, "{}", q.numer());
    } else {
        let _ = write!(out, "{}/{}", q.numer(), q.denom());
    }
}

fn write_expr(out: &mut String, expr: &AffineExpr, names: &[String]) {
    let mut first = true;
    if !expr.constant_part().is_zero() || expr.is_constant() {
        write_rational(out, expr.constant_part());
        first = false;
    }
    for (p, coeff) in expr.coefficients() {
        let negative = coeff.is_negative();
        if first {
            if negative {
                out.push('-');
            }
        } else {
            out.push_str(if negative { " - " } else { " + " });
        }
        let mag = coeff.abs();
        if !mag.is_one() {
            write_rational(out, &mag);
            out.push('*');
        }
        out.push_str(&names[p]);
        first = false;
    }
}

/// Serializes a model to the plain-text format; `parse_model` of the output
/// reproduces the model exactly.
pub fn serialize_model(model: &ParametricMdp) -> String {
    let mut out = String::new();
    out.push_str("pmdp\n");
    out.push_str("parameters:");
    for name in &model.param_names {
        let _ = write!(out, " {name}");
    }
    out.push('\n');
    let _ = writeln!(out, "states: {}", model.num_states);
    let _ = writeln!(out, "initial: {}", model.initial);
    for (name, set) in &model.labels {
        let _ = write!(out, "label {name}:");
        for s in set {
            let _ = write!(out, " {s}");
        }
        out.push('\n');
    }
    if model.has_costs {
        for (s, acts) in model.actions.iter().enumerate() {
            for act in acts {
                let _ = write!(out, "cost {s} {}: ", act.name);
                write_rational(&mut out, &act.cost);
                out.push('\n');
            }
        }
    }
    for (s, acts) in model.actions.iter().enumerate() {
        if acts.is_empty() {
            continue;
        }
        let _ = writeln!(out, "state {s}");
        for act in acts {
            let _ = writeln!(out, "  action {}", act.name);
            for (succ, expr) in &act.transitions {
                let _ = write!(out, "    {succ} : ");
                write_expr(&mut out, expr, &model.param_names);
                out.push('\n');
            }
        }
    }
    out
}

/// Parses `("P" | "E") ("<=" | ">=") number "[" "F" targets "]"` where
/// `targets` is a space-separated list of labels and state ids, resolved
/// against `model`.
pub fn parse_spec(text: &str, model: &ParametricMdp) -> Result<Specification, ParseError> {
    let s = text.trim();
    let (kind, rest) = match s.split_at_checked(1) {
        Some(("P", rest)) => (SpecKind::ReachProbability, rest),
        Some(("E", rest)) => (SpecKind::ExpectedCost, rest),
        _ => return err(1, format!("specification must start with 'P' or 'E': '{s}'")),
    };
    let rest = rest.trim_start();
    let (direction, rest) = match rest.split_at_checked(2) {
        Some(("<=", rest)) => (Direction::AtMost, rest),
        Some((">=", rest)) => (Direction::AtLeast, rest),
        _ => return err(1, format!("expected '<=' or '>=' in '{s}'")),
    };
    let (number, bracket) = match rest.split_once('[') {
        Some(x) => x,
        None => return err(1, format!("expected '[ F ... ]' in '{s}'")),
    };
    let threshold = number
        .trim()
        .parse::<f64>()
        .or_else(|_| err(1, format!("bad threshold '{}'", number.trim())))?;
    let body = match bracket.trim_end().strip_suffix(']') {
        Some(b) => b.trim(),
        None => return err(1, format!("missing ']' in '{s}'")),
    };
    let targets_text = match body.strip_prefix('F') {
        Some(t) if t.is_empty() || t.starts_with(char::is_whitespace) => t,
        _ => return err(1, format!("expected 'F' after '[' in '{s}'")),
    };
    let mut target_set = BTreeSet::new();
    for tok in targets_text.split_whitespace() {
        if let Ok(id) = tok.parse::<usize>() {
            if id >= model.num_states {
                return err(1, format!("state {id} out of range"));
            }
            target_set.insert(id);
        } else if let Some(set) = model.label_states(tok) {
            target_set.extend(set.iter().copied());
        } else {
            return err(1, format!("unknown label '{tok}'"));
        }
    }
    if target_set.is_empty() {
        return err(1, "empty target set");
    }
    Ok(Specification {
        kind,
        direction,
        threshold,
        target_set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = "\
# Single-parameter chain; the target is reached with probability v^2 (1 - v).
pmdp
parameters: v
states: 5
initial: 0
label target: 3
state 0
  action a
    1 : v
    4 : 1 - v
state 1
  action a
    2 : 1 - v
    4 : v
state 2
  action a
    3 : v
    4 : 1 - v
state 3
  action a
    3 : 1
state 4
  action a
    4 : 1
";

    #[test]
    fn chain_file_parses_to_the_expected_model() {
        let m = parse_model(CHAIN).unwrap();
        assert_eq!(m.num_states, 5);
        assert_eq!(m.num_params(), 1);
        assert!(m.is_pmc());
        assert_eq!(m.initial, 0);
        assert_eq!(m.label_states("target"), Some(&BTreeSet::from([3])));
        assert!(m
            .validate(1e-6)
            .iter()
            .all(|d| d.severity != pmdp::model::Severity::Error));
        let mdp = m.instantiate(&[0.5]).unwrap();
        let spec = parse_spec("P<=0.2 [F target]", &m).unwrap();
        let res = pmdp::mc::check_spec(&mdp, &spec).unwrap();
        assert!((res.at_initial - 0.125).abs() < 1e-9);
    }

    #[test]
    fn round_trip_is_exact() {
        let m = parse_model(CHAIN).unwrap();
        let text = serialize_model(&m);
        let again = parse_model(&text).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn costs_and_multi_action_states_round_trip() {
        let text = "\
pmdp
parameters: p q
states: 3
initial: 0
label goal: 2
cost 0 go: 3/2
cost 0 wait: 0
state 0
  action go
    1 : 1/2*p + 1/4
    2 : 3/4 - 1/2*p
  action wait
    0 : 1 - q
    2 : q
state 1
  action go
    2 : 1
state 2
  action go
    2 : 1
";
        let m = parse_model(text).unwrap();
        assert!(m.has_costs);
        assert!(!m.is_pmc());
        let again = parse_model(&serialize_model(&m)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn parser_reports_positioned_errors() {
        let bad = "pmdp\nparameters: v\nstates: 2\ninitial: 0\nstate 0\n  action a\n    1 : w\n";
        let e = parse_model(bad).unwrap_err();
        assert_eq!(e.line, 7);
        assert!(e.msg.contains("unknown parameter 'w'"));
        let dup = "pmdp\nparameters: v v\nstates: 1\ninitial: 0\n";
        assert!(parse_model(dup).unwrap_err().msg.contains("duplicate"));
        let range = "pmdp\nparameters:\nstates: 2\ninitial: 7\n";
        assert!(parse_model(range).unwrap_err().msg.contains("out of range"));
    }

    #[test]
    fn decimals_parse_exactly() {
        let q = parse_rational("0.125", 1).unwrap();
        assert_eq!(q, Rational::new(1.into(), 8.into()));
        let q = parse_rational("2.50", 1).unwrap();
        assert_eq!(q, Rational::new(5.into(), 2.into()));
        assert!(parse_rational("1/0", 1).is_err());
        assert!(parse_rational("x", 1).is_err());
    }

    #[test]
    fn spec_grammar_accepts_the_documented_forms() {
        let m = parse_model(CHAIN).unwrap();
        let p = parse_spec("P<=0.1 [F target]", &m).unwrap();
        assert_eq!(p.kind, SpecKind::ReachProbability);
        assert_eq!(p.direction, Direction::AtMost);
        assert!((p.threshold - 0.1).abs() < 1e-15);
        assert_eq!(p.target_set, BTreeSet::from([3]));
        let q = parse_spec("P>=0.95 [F 3 4]", &m).unwrap();
        assert_eq!(q.direction, Direction::AtLeast);
        assert_eq!(q.target_set, BTreeSet::from([3, 4]));
        let e = parse_spec("E<=14 [F target]", &m).unwrap();
        assert_eq!(e.kind, SpecKind::ExpectedCost);
        assert!((e.threshold - 14.0).abs() < 1e-15);
        assert!(parse_spec("P<0.1 [F target]", &m).is_err());
        assert!(parse_spec("P<=0.1 [G target]", &m).is_err());
        assert!(parse_spec("P<=0.1 [F nothere]", &m).is_err());
    }
}
