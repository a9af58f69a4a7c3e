//! CPLEX-style `.lp` text export, readable by HiGHS, CBC, GLPK and Gurobi.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::model::{Model, Sense};

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect()
}

fn term(out: &mut String, coef: f64, name: &str, first: bool) {
    if coef < 0.0 {
        let _ = write!(out, " - {:e} {}", -coef, name);
    } else if first {
        let _ = write!(out, " {:e} {}", coef, name);
    } else {
        let _ = write!(out, " + {:e} {}", coef, name);
    }
}

fn wrap(line: &str, out: &mut impl Write) -> io::Result<()> {
    // the format caps line length; break between terms
    let mut width = 0;
    for tok in line.split_inclusive(' ') {
        if width + tok.len() > 240 {
            writeln!(out)?;
            write!(out, "  ")?;
            width = 2;
        }
        write!(out, "{tok}")?;
        width += tok.len();
    }
    writeln!(out)
}

/// Write `model` in LP format. Floats use `{:e}` so values round-trip exactly.
pub fn write_lp(model: &Model, out: &mut impl Write) -> io::Result<()> {
    let names: Vec<String> = model.vars.iter().map(|v| sanitize(&v.name)).collect();
    writeln!(out, "\\ {} variables, {} rows", model.num_vars(), model.num_rows())?;
    writeln!(out, "Minimize")?;
    let mut obj = String::from(" obj:");
    let mut first = true;
    for (v, name) in model.vars.iter().zip(&names) {
        if v.objective != 0.0 {
            term(&mut obj, v.objective, name, first);
            first = false;
        }
    }
    if model.objective_offset != 0.0 || first {
        let c = model.objective_offset;
        if first {
            let _ = write!(obj, " {:e}", c);
        } else if c < 0.0 {
            let _ = write!(obj, " - {:e}", -c);
        } else {
            let _ = write!(obj, " + {:e}", c);
        }
    }
    wrap(&obj, out)?;
    writeln!(out, "Subject To")?;
    for row in &model.rows {
        let mut line = format!(" {}:", sanitize(&row.name));
        let mut first = true;
        for &(v, a) in &row.coefficients {
            term(&mut line, a, &names[v.0], first);
            first = false;
        }
        if first {
            let _ = write!(line, " 0 {}", names.first().map(String::as_str).unwrap_or("x"));
        }
        let op = match row.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = write!(line, " {op} {:e}", row.rhs);
        wrap(&line, out)?;
    }
    writeln!(out, "Bounds")?;
    for (v, name) in model.vars.iter().zip(&names) {
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (true, true) if v.lower == v.upper => writeln!(out, " {name} = {:e}", v.lower)?,
            (true, true) => writeln!(out, " {:e} <= {name} <= {:e}", v.lower, v.upper)?,
            (true, false) => writeln!(out, " {name} >= {:e}", v.lower)?,
            (false, true) => writeln!(out, " -inf <= {name} <= {:e}", v.upper)?,
            (false, false) => writeln!(out, " {name} free")?,
        }
    }
    let ints: Vec<&String> = model.vars.iter().zip(&names).filter(|(v, _)| v.integer).map(|(_, n)| n).collect();
    if !ints.is_empty() {
        writeln!(out, "General")?;
        for n in ints {
            writeln!(out, " {n}")?;
        }
    }
    writeln!(out, "End")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_present() {
        let mut m = Model::new();
        let x = m.add_var("e[0,1]", 0.0, 3.0, 0.102);
        let b = m.add_binary("b 0", 14.31);
        m.add_row("thr", vec![(x, 1.0), (b, -5.0)], Sense::Le, 2.5);
        m.objective_offset = 4.0;
        let mut buf = Vec::new();
        write_lp(&m, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        for section in ["Minimize", "Subject To", "Bounds", "General", "End"] {
            assert!(s.contains(section), "{section} missing:\n{s}");
        }
        assert!(s.contains("b_0"));
        assert!(s.contains("<= 2.5e0"));
        assert!(s.contains("+ 4e0"));
    }
}
