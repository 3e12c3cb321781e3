//! Line-oriented text serialization of problems. Used for debugging dumps
//! and test fixtures; floats are written in shortest round-trip form so
//! `parse(dump(p)) == p` exactly.
//!
//! ```text
//! qp 1
//! vars 3
//! offset 0
//! q 0 -1.5            # nonzero linear coefficients
//! objatom 2 0 1 -     # w i j sign
//! bound 0 0 1         # var lo hi (free variables omitted)
//! row -inf 2.5        # opens a row
//! rowcol 0 1.5        # entry of the open row
//! rowatom 0.5 1 2 +   # quadratic atom of the open row
//! ```

use crate::{ConvexProblem, QuadAtom, Row, Sign};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {0}: {1}")]
    Line(usize, String),
    #[error("missing header line 'qp 1'")]
    Header,
    #[error("missing 'vars' line")]
    Vars,
}

fn fmt_f(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{:?}", x)
    }
}

pub fn dump(p: &ConvexProblem) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "qp 1");
    let _ = writeln!(s, "vars {}", p.num_vars);
    let _ = writeln!(s, "offset {}", fmt_f(p.offset));
    for (i, &q) in p.linear.iter().enumerate() {
        if q != 0.0 {
            let _ = writeln!(s, "q {} {}", i, fmt_f(q));
        }
    }
    for a in &p.atoms {
        let sign = if a.sign == Sign::Plus { "+" } else { "-" };
        let _ = writeln!(s, "objatom {} {} {} {}", fmt_f(a.w), a.i, a.j, sign);
    }
    for (v, &(lo, hi)) in p.bounds.iter().enumerate() {
        if lo.is_finite() || hi.is_finite() {
            let _ = writeln!(s, "bound {} {} {}", v, fmt_f(lo), fmt_f(hi));
        }
    }
    for row in &p.rows {
        let _ = writeln!(s, "row {} {}", fmt_f(row.lo), fmt_f(row.hi));
        for (&c, &v) in row.cols.iter().zip(&row.vals) {
            let _ = writeln!(s, "rowcol {} {}", c, fmt_f(v));
        }
        for a in &row.quad {
            let sign = if a.sign == Sign::Plus { "+" } else { "-" };
            let _ = writeln!(s, "rowatom {} {} {} {}", fmt_f(a.w), a.i, a.j, sign);
        }
    }
    s
}

fn parse_f(tok: &str, ln: usize) -> Result<f64, ParseError> {
    match tok {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .map_err(|e| ParseError::Line(ln, format!("bad float '{}': {}", tok, e))),
    }
}

fn parse_usize(tok: &str, ln: usize) -> Result<usize, ParseError> {
    tok.parse::<usize>()
        .map_err(|e| ParseError::Line(ln, format!("bad index '{}': {}", tok, e)))
}

fn parse_atom(toks: &[&str], ln: usize) -> Result<QuadAtom, ParseError> {
    if toks.len() != 4 {
        return Err(ParseError::Line(ln, "atom needs: w i j sign".into()));
    }
    let sign = match toks[3] {
        "+" => Sign::Plus,
        "-" => Sign::Minus,
        other => return Err(ParseError::Line(ln, format!("bad sign '{}'", other))),
    };
    Ok(QuadAtom {
        w: parse_f(toks[0], ln)?,
        i: parse_usize(toks[1], ln)?,
        j: parse_usize(toks[2], ln)?,
        sign,
    })
}

pub fn parse(text: &str) -> Result<ConvexProblem, ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| {
        let body = l.split('#').next().unwrap_or("").trim();
        (i + 1, body)
    });
    let mut header_seen = false;
    let mut p: Option<ConvexProblem> = None;
    for (ln, body) in &mut lines {
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if !header_seen {
            if toks.as_slice() != ["qp", "1"] {
                return Err(ParseError::Header);
            }
            header_seen = true;
            continue;
        }
        if p.is_none() {
            if toks.len() == 2 && toks[0] == "vars" {
                p = Some(ConvexProblem::new(parse_usize(toks[1], ln)?));
                continue;
            }
            return Err(ParseError::Vars);
        }
        let prob = p.as_mut().unwrap();
        match toks[0] {
            "offset" if toks.len() == 2 => {
                prob.offset = parse_f(toks[1], ln)?;
            }
            "q" if toks.len() == 3 => {
                let i = parse_usize(toks[1], ln)?;
                if i >= prob.num_vars {
                    return Err(ParseError::Line(ln, format!("variable {} out of range", i)));
                }
                prob.linear[i] = parse_f(toks[2], ln)?;
            }
            "objatom" => {
                prob.atoms.push(parse_atom(&toks[1..], ln)?);
            }
            "bound" if toks.len() == 4 => {
                let v = parse_usize(toks[1], ln)?;
                if v >= prob.num_vars {
                    return Err(ParseError::Line(ln, format!("variable {} out of range", v)));
                }
                prob.bounds[v] = (parse_f(toks[2], ln)?, parse_f(toks[3], ln)?);
            }
            "row" if toks.len() == 3 => {
                let lo = parse_f(toks[1], ln)?;
                let hi = parse_f(toks[2], ln)?;
                prob.rows.push(Row::new(Vec::new(), Vec::new(), lo, hi));
            }
            "rowcol" if toks.len() == 3 => {
                let row = prob
                    .rows
                    .last_mut()
                    .ok_or_else(|| ParseError::Line(ln, "rowcol before any row".into()))?;
                row.cols.push(parse_usize(toks[1], ln)?);
                row.vals.push(parse_f(toks[2], ln)?);
            }
            "rowatom" => {
                let atom = parse_atom(&toks[1..], ln)?;
                let row = prob
                    .rows
                    .last_mut()
                    .ok_or_else(|| ParseError::Line(ln, "rowatom before any row".into()))?;
                row.quad.push(atom);
            }
            other => {
                return Err(ParseError::Line(ln, format!("unknown record '{}'", other)));
            }
        }
    }
    if !header_seen {
        return Err(ParseError::Header);
    }
    p.ok_or(ParseError::Vars)
}
