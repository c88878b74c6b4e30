//! Writer for the CPLEX LP text format, for cross-checking models with external solvers.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::model::{Model, Relation, Sense, VarId, VarKind};

fn sanitize(name: &str, fallback: &str) -> String {
    let s: String =
        name.chars().map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' }).collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        format!("{fallback}_{s}")
    } else {
        s
    }
}

fn write_expr(out: &mut String, names: &[String], terms: &[(VarId, f64)]) {
    if terms.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names[0]);
        return;
    }
    for &(v, c) in terms {
        let sign = if c < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", c.abs(), names[v.index()]);
    }
}

/// Renders `model` as LP-format text. Variable names are made unique and format-safe.
pub fn to_lp_string(model: &Model) -> String {
    let mut names: Vec<String> = Vec::with_capacity(model.num_vars());
    let mut seen = std::collections::HashSet::new();
    for (i, v) in model.vars().iter().enumerate() {
        let mut n = sanitize(&v.name, "x");
        if !seen.insert(n.clone()) {
            n = format!("{n}_{i}");
            seen.insert(n.clone());
        }
        names.push(n);
    }
    if names.is_empty() {
        names.push("dummy".into());
    }

    let mut out = String::new();
    let obj = model.objective();
    out.push_str(match obj.sense {
        Sense::Minimize => "Minimize\n",
        Sense::Maximize => "Maximize\n",
    });
    out.push_str(" obj:");
    write_expr(&mut out, &names, &obj.terms);
    if obj.constant != 0.0 {
        let _ = write!(out, " + {}", obj.constant);
    }
    out.push_str("\nSubject To\n");
    for (i, c) in model.constraints().iter().enumerate() {
        let _ = write!(out, " {}:", sanitize(&format!("{}_{i}", c.name), "c"));
        write_expr(&mut out, &names, &c.terms);
        let rel = match c.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        let _ = writeln!(out, " {rel} {}", c.rhs);
    }
    out.push_str("Bounds\n");
    for (v, name) in model.vars().iter().zip(&names) {
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " {name} free");
            }
            (true, true) if v.lower == v.upper => {
                let _ = writeln!(out, " {name} = {}", v.lower);
            }
            (true, true) => {
                let _ = writeln!(out, " {} <= {name} <= {}", v.lower, v.upper);
            }
            (true, false) => {
                let _ = writeln!(out, " {name} >= {}", v.lower);
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {name} <= {}", v.upper);
            }
        }
    }
    let bins: Vec<&str> =
        model.vars().iter().zip(&names).filter(|(v, _)| v.kind == VarKind::Binary).map(|(_, n)| n.as_str()).collect();
    if !bins.is_empty() {
        out.push_str("Binaries\n");
        for b in bins {
            let _ = writeln!(out, " {b}");
        }
    }
    if !model.sos2_groups().is_empty() {
        out.push_str("SOS\n");
        for (gi, g) in model.sos2_groups().iter().enumerate() {
            let _ = write!(out, " s{gi}: S2::");
            for (w, v) in g.iter().enumerate() {
                let _ = write!(out, " {}:{}", names[v.index()], w + 1);
            }
            out.push('\n');
        }
    }
    out.push_str("End\n");
    out
}

pub fn write_lp(model: &Model, path: &Path) -> io::Result<()> {
    std::fs::write(path, to_lp_string(model))
}
