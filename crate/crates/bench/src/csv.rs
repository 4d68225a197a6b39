//! Minimal CSV output with fixed column order and six significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::Result;

/// Formats like C's `%g` with six significant digits.
pub fn fmt_g(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_fraction(&format!("{v:.decimals$}")).to_string()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Header line plus one line per row; fields are written verbatim.
pub fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.join(","));
    }
    out
}

pub fn write(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    fs::write(path, render(header, rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_c_percent_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (48.130803608679, "48.1308"),
            (0.177, "0.177"),
            (-2.5, "-2.5"),
            (123456.7, "123457"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234567, "1.23457e-05"),
            (999999.5, "1e+06"),
            (0.000099999996, "0.0001"),
            (100.0, "100"),
        ];
        for (v, want) in cases {
            assert_eq!(fmt_g(v), want, "{v}");
        }
        assert_eq!(fmt_g(f64::NAN), "nan");
    }

    #[test]
    fn render_layout() {
        let s = render(&["a", "b"], &[vec!["1".into(), "2".into()]]);
        assert_eq!(s, "a,b\n1,2\n");
    }
}
