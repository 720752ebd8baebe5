use std::fmt::Write as _;

use crate::{Error, Result};

/// One (actual, measured) distance pair, cm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub actual: f64,
    pub measured: f64,
    pub difference: f64,
    /// `|measured - actual| / actual * 100`.
    pub error_pct: f64,
    /// `error_pct` cut to two decimals.
    pub rounded_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
    pub mean_rounded: f64,
    pub mean_unrounded: f64,
}

/// Cuts to two decimals, toward zero. The small bias absorbs values like
/// `3.7` that land a hair under their decimal in binary.
pub fn truncate_2dp(v: f64) -> f64 {
    (v * 100.0 + 1e-9).floor() / 100.0
}

pub fn evaluate_error_table(rows: &[(f64, f64)]) -> Result<ErrorReport> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rows = rows
        .iter()
        .enumerate()
        .map(|(i, &(actual, measured))| {
            if !(actual > 0.0) {
                return Err(Error::NonPositiveActual { row: i + 1 });
            }
            let difference = (measured - actual).abs();
            let error_pct = difference / actual * 100.0;
            Ok(ErrorRow {
                actual,
                measured,
                difference,
                error_pct,
                rounded_pct: truncate_2dp(error_pct),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok(ErrorReport {
        mean_rounded: rows.iter().map(|r| r.rounded_pct).sum::<f64>() / n,
        mean_unrounded: rows.iter().map(|r| r.error_pct).sum::<f64>() / n,
        rows,
    })
}

/// Reads whitespace- or comma-separated `actual measured` rows; blank lines,
/// `#` comments and a non-numeric header line are skipped.
pub fn parse_error_table(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        let nums: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match nums {
            Some(v) if v.len() >= 2 => rows.push((v[0], v[1])),
            None if rows.is_empty() && fields.iter().all(|f| f.parse::<f64>().is_err()) => {}
            _ => {
                return Err(Error::InvalidInput(format!(
                    "line {}: expected `actual measured`, got {content:?}",
                    i + 1
                )))
            }
        }
    }
    Ok(rows)
}

impl ErrorReport {
    /// Table layout: actual, measured, difference, error percent, then the
    /// two means.
    pub fn to_text(&self) -> String {
        let mut s = String::from("actual_cm\tmeasured_cm\tdifference_cm\terror_pct\n");
        for r in &self.rows {
            writeln!(
                s,
                "{}\t{}\t{}\t{:.2}",
                r.actual, r.measured, r.difference, r.rounded_pct
            )
            .unwrap();
        }
        writeln!(s, "mean_error_pct\t{:.3}", self.mean_rounded).unwrap();
        writeln!(s, "mean_unrounded_error_pct\t{:.4}", self.mean_unrounded).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows() {
        let r = evaluate_error_table(&[(34.0, 36.0), (40.0, 40.0), (55.0, 53.0)]).unwrap();
        assert_eq!(r.rows[0].rounded_pct, 5.88);
        assert_eq!(r.rows[1].rounded_pct, 0.0);
        assert_eq!(r.rows[2].difference, 2.0);
        assert_eq!(r.rows[2].rounded_pct, 3.63);
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_2dp(2.0 / 54.0 * 100.0), 3.7);
        assert_eq!(truncate_2dp(3.0 / 45.0 * 100.0), 6.66);
        assert_eq!(truncate_2dp(0.29), 0.29);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            evaluate_error_table(&[(10.0, 11.0), (0.0, 1.0)]),
            Err(Error::NonPositiveActual { row: 2 })
        ));
        assert!(matches!(evaluate_error_table(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn table_text() {
        let rows = parse_error_table("actual,measured\n34, 36\n\n# note\n40 40\n").unwrap();
        assert_eq!(rows, [(34.0, 36.0), (40.0, 40.0)]);
        assert!(parse_error_table("34 36\nfoo bar\n").is_err());
        assert!(parse_error_table("34\n").is_err());
        let text = evaluate_error_table(&rows).unwrap().to_text();
        assert!(text.contains("34\t36\t2\t5.88\n"));
        assert!(text.contains("40\t40\t0\t0.00\n"));
        assert!(text.contains("mean_error_pct\t2.940\n"));
    }
}
