//! Plain-text tensor format for transition tensors and cost models.
//!
//! ```text
//! nhop-eql-tensor v1
//! dims <num_states> <num_actions>
//! meta <key> <value>            # zero or more
//! section ptt
//! <s> <s'> <a> <p>              # one record per nonzero entry
//! section expected-costs
//! <s> <a> <c>                   # one record per nonzero entry
//! section transition-costs      # optional
//! <s> <s'> <a> <c>
//! ```
//!
//! Indices are 0-based. Values are printed in shortest round-trip form, so a
//! written file reads back bit-identical. `#` starts a comment.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mdp::{CostModel, Ptt, POWER_TOL};

pub const MAGIC: &str = "nhop-eql-tensor v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub ptt: Ptt,
    pub costs: CostModel,
    pub meta: Vec<(String, String)>,
}

impl TensorFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn to_string(ptt: &Ptt, costs: &CostModel, meta: &[(String, String)]) -> String {
    let (n, k) = (ptt.num_states(), ptt.num_actions());
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "dims {n} {k}");
    for (key, value) in meta {
        let _ = writeln!(out, "meta {key} {value}");
    }
    out.push_str("section ptt\n");
    write_triples(&mut out, ptt.matrices());
    out.push_str("section expected-costs\n");
    for s in 0..n {
        for a in 0..k {
            let c = costs.cost(s, a);
            if c != 0.0 {
                let _ = writeln!(out, "{s} {a} {c:?}");
            }
        }
    }
    if let Some(t) = costs.transition() {
        out.push_str("section transition-costs\n");
        write_triples(&mut out, t);
    }
    out
}

fn write_triples(out: &mut String, matrices: &[DMatrix<f64>]) {
    let n = matrices[0].nrows();
    for s in 0..n {
        for (a, m) in matrices.iter().enumerate() {
            for next in 0..n {
                let x = m[(s, next)];
                if x != 0.0 {
                    let _ = writeln!(out, "{s} {next} {a} {x:?}");
                }
            }
        }
    }
}

pub fn write(mut w: impl Write, ptt: &Ptt, costs: &CostModel, meta: &[(String, String)]) -> Result<()> {
    w.write_all(to_string(ptt, costs, meta).as_bytes())?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Header,
    Ptt,
    Expected,
    Transition,
}

pub fn read(r: impl BufRead) -> Result<TensorFile> {
    let fail = |line: usize, message: String| Error::Format { line, message };
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut dims: Option<(usize, usize)> = None;
    let mut meta = Vec::new();
    let mut section = Section::Header;
    let mut ptt: Vec<DMatrix<f64>> = Vec::new();
    let mut expected = DMatrix::zeros(0, 0);
    let mut transition: Option<Vec<DMatrix<f64>>> = None;
    let mut saw_magic = false;

    while let Some((no, line)) = lines.next() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if !saw_magic {
            if content != MAGIC {
                return Err(fail(no, format!("expected `{MAGIC}`")));
            }
            saw_magic = true;
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        match fields[0] {
            "dims" => {
                if dims.is_some() || fields.len() != 3 {
                    return Err(fail(no, "expected a single `dims <S> <A>` line".into()));
                }
                let n: usize = parse(no, fields[1])?;
                let k: usize = parse(no, fields[2])?;
                if n == 0 || k == 0 {
                    return Err(fail(no, "dimensions must be positive".into()));
                }
                dims = Some((n, k));
                ptt = vec![DMatrix::zeros(n, n); k];
                expected = DMatrix::zeros(n, k);
                continue;
            }
            "meta" => {
                if fields.len() < 3 {
                    return Err(fail(no, "expected `meta <key> <value>`".into()));
                }
                meta.push((fields[1].to_string(), fields[2..].join(" ")));
                continue;
            }
            "section" => {
                if dims.is_none() {
                    return Err(fail(no, "`dims` must precede sections".into()));
                }
                section = match fields.get(1).copied() {
                    Some("ptt") => Section::Ptt,
                    Some("expected-costs") => Section::Expected,
                    Some("transition-costs") => {
                        let (n, k) = dims.unwrap();
                        transition = Some(vec![DMatrix::zeros(n, n); k]);
                        Section::Transition
                    }
                    other => return Err(fail(no, format!("unknown section {other:?}"))),
                };
                continue;
            }
            _ => {}
        }
        let (n, k) = dims.ok_or_else(|| fail(no, "record before `dims`".into()))?;
        match section {
            Section::Header => return Err(fail(no, "record outside a section".into())),
            Section::Ptt | Section::Transition => {
                if fields.len() != 4 {
                    return Err(fail(no, "expected `s s' a value`".into()));
                }
                let s: usize = parse(no, fields[0])?;
                let next: usize = parse(no, fields[1])?;
                let a: usize = parse(no, fields[2])?;
                let x: f64 = parse(no, fields[3])?;
                if s >= n || next >= n || a >= k {
                    return Err(fail(no, "index out of range".into()));
                }
                let target = if section == Section::Ptt {
                    &mut ptt[a]
                } else {
                    &mut transition.as_mut().expect("section opened")[a]
                };
                target[(s, next)] = x;
            }
            Section::Expected => {
                if fields.len() != 3 {
                    return Err(fail(no, "expected `s a value`".into()));
                }
                let s: usize = parse(no, fields[0])?;
                let a: usize = parse(no, fields[1])?;
                let c: f64 = parse(no, fields[2])?;
                if s >= n || a >= k {
                    return Err(fail(no, "index out of range".into()));
                }
                expected[(s, a)] = c;
            }
        }
    }
    if dims.is_none() {
        return Err(fail(0, "missing `dims` line".into()));
    }
    let ptt = Ptt::with_tolerance(ptt, POWER_TOL)?;
    let costs = match transition {
        Some(t) => {
            let built = CostModel::from_transition_costs(&ptt, t)?;
            // the file's expected section is authoritative for (s, a) costs
            if (built.expected() - &expected).amax() > 1e-9 {
                return Err(fail(0, "expected costs disagree with transition costs".into()));
            }
            built
        }
        None => CostModel::from_expected(expected)?,
    };
    Ok(TensorFile { ptt, costs, meta })
}

fn parse<T: std::str::FromStr>(line: usize, field: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Format {
        line,
        message: format!("cannot parse `{field}`"),
    })
}
