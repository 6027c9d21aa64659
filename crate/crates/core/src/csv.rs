//! Minimal CSV emission with fixed float formatting.

use crate::error::{io_err, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Formats a float with 9 significant digits; `nan` and `inf` for the
/// non-finite sentinels.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}

/// A CSV table built row by row.
#[derive(Debug, Clone, Default)]
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut t = Self::default();
        t.push_raw(header.iter().map(|s| s.to_string()));
        t
    }

    pub fn push_raw(&mut self, cells: impl IntoIterator<Item = String>) {
        let line: Vec<String> = cells.into_iter().collect();
        writeln!(self.text, "{}", line.join(",")).unwrap();
    }

    pub fn push(&mut self, values: &[f64]) {
        self.push_raw(values.iter().map(|&v| fmt_num(v)));
    }

    pub fn rows(&self) -> usize {
        self.text.lines().count().saturating_sub(1)
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.text).map_err(io_err(path.display().to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_num(1.5), "1.5");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_num(123456.789012), "123456.789");
        assert_eq!(fmt_num(-2.0e-7), "-2.00000000e-7");
        assert_eq!(fmt_num(6.02214076e23), "6.02214076e23");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(f64::NAN), "nan");
        assert_eq!(fmt_num(0.0), "0");
    }

    #[test]
    fn table_counts_rows() {
        let mut t = Table::new(&["a", "b"]);
        t.push(&[1.0, 2.0]);
        t.push_raw(["x".to_string(), "y".to_string()]);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.as_str(), "a,b\n1,2\nx,y\n");
    }
}
