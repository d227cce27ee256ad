//! Reading and writing grid case files.
//!
//! The text format is a list of `[section]` blocks with whitespace-separated
//! columns. `#` starts a comment. Column order:
//!
//! ```text
//! [case]      key value      (name, base_mva, copper_plate)
//! [bus]       id is_ref [theta_min theta_max]      angles in radians
//! [branch]    from to b f_min f_max                b per-unit, limits MW
//! [gen]       bus a b c g_min g_max                cost a g² + b g + c
//! [load]      bus d [s_max]                        d in MW
//! [fairness]  gamma <v> | delta <v> | delta <i> <j> <v> | epsilon <v> | lambda <v>
//! [features]  one row per feature vector, one column per load
//! ```
//!
//! Omitted values default to θ bounds ±π/2, `s_max = 1`, `base_mva = 100`,
//! `copper_plate = false`, `gamma = N` (number of loads) and `lambda = 10⁴`.
//! Files ending in `.json` hold the same fields as [`GridCase`] in JSON.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CaseError;
use crate::grid::{
    Bus, Delta, FairnessParams, Generator, GridCase, Line, LoadPoint, PairBound, DEFAULT_LAMBDA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Case,
    Bus,
    Branch,
    Gen,
    Load,
    Fairness,
    Features,
}

fn syntax(line: usize, message: impl Into<String>) -> CaseError {
    CaseError::Syntax {
        line,
        message: message.into(),
    }
}

fn num(tok: &str, line: usize) -> Result<f64, CaseError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| syntax(line, format!("expected a number, found `{tok}`")))?;
    if !v.is_finite() {
        return Err(syntax(line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

fn int(tok: &str, line: usize) -> Result<i64, CaseError> {
    tok.parse()
        .map_err(|_| syntax(line, format!("expected an integer, found `{tok}`")))
}

fn boolean(tok: &str, line: usize) -> Result<bool, CaseError> {
    match tok {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => Err(syntax(line, format!("expected a boolean, found `{tok}`"))),
    }
}

fn columns(toks: &[&str], allowed: &[usize], line: usize, table: &str) -> Result<(), CaseError> {
    if allowed.contains(&toks.len()) {
        Ok(())
    } else {
        Err(syntax(
            line,
            format!(
                "{table} row has {} columns, expected {}",
                toks.len(),
                allowed
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(" or ")
            ),
        ))
    }
}

/// Parses the text case format and validates the result.
pub fn parse_case(text: &str) -> Result<GridCase, CaseError> {
    let mut section = Section::None;
    let mut name = String::new();
    let mut base_mva = 100.0;
    let mut copper_plate = false;
    let mut buses = Vec::new();
    let mut lines = Vec::new();
    let mut generators = Vec::new();
    let mut loads = Vec::new();
    let mut features = Vec::new();
    let mut gamma = None;
    let mut uniform_delta = None;
    let mut pairs = Vec::new();
    let mut epsilon = 0.0;
    let mut lambda = DEFAULT_LAMBDA;

    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(header) = content.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| syntax(ln, "unterminated section header"))?
                .trim();
            section = match header {
                "case" => Section::Case,
                "bus" => Section::Bus,
                "branch" => Section::Branch,
                "gen" => Section::Gen,
                "load" => Section::Load,
                "fairness" => Section::Fairness,
                "features" => Section::Features,
                other => return Err(syntax(ln, format!("unknown section `{other}`"))),
            };
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match section {
            Section::None => return Err(syntax(ln, "data outside of any section")),
            Section::Case => {
                columns(&toks, &[2], ln, "case")?;
                match toks[0] {
                    "name" => name = toks[1].to_string(),
                    "base_mva" => base_mva = num(toks[1], ln)?,
                    "copper_plate" => copper_plate = boolean(toks[1], ln)?,
                    other => return Err(syntax(ln, format!("unknown case key `{other}`"))),
                }
            }
            Section::Bus => {
                columns(&toks, &[2, 4], ln, "bus")?;
                let (theta_min, theta_max) = if toks.len() == 4 {
                    (num(toks[2], ln)?, num(toks[3], ln)?)
                } else {
                    (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2)
                };
                buses.push(Bus {
                    id: int(toks[0], ln)?,
                    is_reference: boolean(toks[1], ln)?,
                    theta_min,
                    theta_max,
                });
            }
            Section::Branch => {
                columns(&toks, &[5], ln, "branch")?;
                lines.push(Line {
                    from: int(toks[0], ln)?,
                    to: int(toks[1], ln)?,
                    b: num(toks[2], ln)?,
                    f_min: num(toks[3], ln)?,
                    f_max: num(toks[4], ln)?,
                });
            }
            Section::Gen => {
                columns(&toks, &[6], ln, "gen")?;
                generators.push(Generator {
                    bus: int(toks[0], ln)?,
                    a: num(toks[1], ln)?,
                    b_lin: num(toks[2], ln)?,
                    c: num(toks[3], ln)?,
                    g_min: num(toks[4], ln)?,
                    g_max: num(toks[5], ln)?,
                });
            }
            Section::Load => {
                columns(&toks, &[2, 3], ln, "load")?;
                loads.push(LoadPoint {
                    bus: int(toks[0], ln)?,
                    d: num(toks[1], ln)?,
                    s_max: if toks.len() == 3 { num(toks[2], ln)? } else { 1.0 },
                });
            }
            Section::Fairness => match (toks[0], toks.len()) {
                ("gamma", 2) => gamma = Some(num(toks[1], ln)?),
                ("epsilon", 2) => epsilon = num(toks[1], ln)?,
                ("lambda", 2) => lambda = num(toks[1], ln)?,
                ("delta", 2) => uniform_delta = Some(num(toks[1], ln)?),
                ("delta", 4) => {
                    let i = int(toks[1], ln)?;
                    let j = int(toks[2], ln)?;
                    if i < 1 || j < 1 {
                        return Err(syntax(ln, "load numbers start at 1"));
                    }
                    pairs.push(PairBound {
                        i: i as usize,
                        j: j as usize,
                        delta: num(toks[3], ln)?,
                    });
                }
                (key, _) => {
                    return Err(syntax(ln, format!("malformed fairness entry `{key}`")));
                }
            },
            Section::Features => {
                let row = toks
                    .iter()
                    .map(|t| num(t, ln))
                    .collect::<Result<Vec<_>, _>>()?;
                features.push(row);
            }
        }
    }

    let delta = match (uniform_delta, pairs.is_empty()) {
        (Some(_), false) => {
            return Err(CaseError::Invariant(
                "delta is given both as a scalar and per pair".into(),
            ))
        }
        (Some(d), true) => Some(Delta::Uniform(d)),
        (None, false) => Some(Delta::Pairs(pairs)),
        (None, true) => None,
    };
    let case = GridCase {
        name,
        base_mva,
        buses,
        lines,
        generators,
        fairness: FairnessParams {
            gamma: gamma.unwrap_or(loads.len().max(1) as f64),
            delta,
            epsilon,
        },
        loads,
        features,
        lambda,
        copper_plate,
    };
    case.validate()?;
    Ok(case)
}

/// Parses the JSON form of a case and validates it.
pub fn parse_case_json(text: &str) -> Result<GridCase, CaseError> {
    let case: GridCase = serde_json::from_str(text)?;
    case.validate()?;
    Ok(case)
}

/// Reads a case file, choosing the format from the extension.
pub fn load_case(path: &Path) -> Result<GridCase, CaseError> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        parse_case_json(&text)
    } else {
        parse_case(&text)
    }
}

/// Writes a case in the text format. Parsing the output yields an equal case.
pub fn write_case(case: &GridCase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[case]");
    if !case.name.is_empty() {
        let _ = writeln!(out, "name {}", case.name);
    }
    let _ = writeln!(out, "base_mva {}", case.base_mva);
    let _ = writeln!(out, "copper_plate {}", case.copper_plate);

    let _ = writeln!(out, "\n[bus]\n# id is_ref theta_min theta_max");
    for b in &case.buses {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            b.id,
            u8::from(b.is_reference),
            b.theta_min,
            b.theta_max
        );
    }
    if !case.lines.is_empty() {
        let _ = writeln!(out, "\n[branch]\n# from to b f_min f_max");
        for l in &case.lines {
            let _ = writeln!(out, "{} {} {} {} {}", l.from, l.to, l.b, l.f_min, l.f_max);
        }
    }
    let _ = writeln!(out, "\n[gen]\n# bus a b c g_min g_max");
    for g in &case.generators {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            g.bus, g.a, g.b_lin, g.c, g.g_min, g.g_max
        );
    }
    let _ = writeln!(out, "\n[load]\n# bus d s_max");
    for l in &case.loads {
        let _ = writeln!(out, "{} {} {}", l.bus, l.d, l.s_max);
    }
    let _ = writeln!(out, "\n[fairness]");
    let _ = writeln!(out, "gamma {}", case.fairness.gamma);
    match &case.fairness.delta {
        None => {}
        Some(Delta::Uniform(d)) => {
            let _ = writeln!(out, "delta {d}");
        }
        Some(Delta::Pairs(pairs)) => {
            for p in pairs {
                let _ = writeln!(out, "delta {} {} {}", p.i, p.j, p.delta);
            }
        }
    }
    let _ = writeln!(out, "epsilon {}", case.fairness.epsilon);
    let _ = writeln!(out, "lambda {}", case.lambda);
    if !case.features.is_empty() {
        let _ = writeln!(out, "\n[features]");
        for v in &case.features {
            let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}
