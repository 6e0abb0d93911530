use std::fmt::Write as _;
use std::io::Write;

use crate::error::{MufiError, Result};

/// One method's per-facet accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub accuracies: Vec<f64>,
    pub average: f64,
    /// Validation samples summed over facets.
    pub n_val: usize,
}

impl EvalReport {
    pub fn new(method: impl Into<String>, accuracies: Vec<f64>, n_val: usize) -> Result<Self> {
        let method = method.into();
        if accuracies.is_empty() {
            return Err(MufiError::Data(format!("report row {method:?} has no facets")));
        }
        if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(MufiError::Data(format!("accuracy {a} of {method:?} outside [0, 1]")));
        }
        let average = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        Ok(Self {
            method,
            accuracies,
            average,
            n_val,
        })
    }
}

/// Rows of method reports over a common facet set.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetMatrix {
    pub rows: Vec<EvalReport>,
}

impl FacetMatrix {
    pub fn new(rows: Vec<EvalReport>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| MufiError::Data("incomplete report: no methods".into()))?;
        let n = first.accuracies.len();
        if let Some(r) = rows.iter().find(|r| r.accuracies.len() != n) {
            return Err(MufiError::Data(format!(
                "incomplete report: {:?} has {} facets, expected {n}",
                r.method,
                r.accuracies.len()
            )));
        }
        Ok(Self { rows })
    }

    pub fn n_facets(&self) -> usize {
        self.rows[0].accuracies.len()
    }

    pub fn row(&self, method: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// `method,facet_0..facet_{N-1},avg,n_val` with four decimals.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let cols: Vec<String> = (0..self.n_facets()).map(|f| format!("facet_{f}")).collect();
        writeln!(w, "method,{},avg,n_val", cols.join(","))?;
        for r in &self.rows {
            let accs: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.4}")).collect();
            writeln!(w, "{},{},{:.4},{}", r.method, accs.join(","), r.average, r.n_val)?;
        }
        Ok(())
    }

    /// Parses the CSV written by [`FacetMatrix::write_csv`]. Values carry
    /// the CSV's four-decimal rounding; the average is recomputed.
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| MufiError::Format("empty report".into()))?;
        let n = header.split(',').count().saturating_sub(3);
        if !header.starts_with("method,") || n == 0 {
            return Err(MufiError::Format(format!("bad report header {header:?}")));
        }
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let cells: Vec<&str> = l.split(',').collect();
                if cells.len() != n + 3 {
                    return Err(MufiError::Format(format!("report row {l:?} has {} cells", cells.len())));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| MufiError::Format(format!("bad number {s:?}")))
                };
                let accs = cells[1..=n].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
                let n_val = cells[n + 2]
                    .parse()
                    .map_err(|_| MufiError::Format(format!("bad count {:?}", cells[n + 2])))?;
                EvalReport::new(cells[0], accs, n_val)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    /// Fixed-width ASCII table, accuracies in percent.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "method");
        for f in 0..self.n_facets() {
            let _ = write!(out, " {:>8}", format!("facet_{f}"));
        }
        let _ = writeln!(out, " {:>8}", "avg");
        for r in &self.rows {
            let _ = write!(out, "{:<width$}", r.method);
            for a in &r.accuracies {
                let _ = write!(out, " {:>8.2}", a * 100.0);
            }
            let _ = writeln!(out, " {:>8.2}", r.average * 100.0);
        }
        out
    }

    /// Grouped bar chart: one group per facet, one bar per method.
    pub fn to_svg(&self) -> String {
        let palette = [
            "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f",
            "#bab0ac",
        ];
        let (n_f, n_m) = (self.n_facets(), self.rows.len());
        let bar = 10.0;
        let group = bar * n_m as f64 + 20.0;
        let (left, top, height) = (40.0, 20.0, 200.0);
        let legend_h = 14.0 * n_m as f64;
        let width = left + group * n_f as f64 + 20.0;
        let total_h = top + height + 30.0 + legend_h;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{total_h:.0}" font-family="sans-serif" font-size="10">"#
        );
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.0}" stroke="black"/>"#,
            top + height
        );
        for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let y = top + height * (1.0 - tick);
            let _ = writeln!(
                s,
                r#"<text x="{:.0}" y="{y:.1}" text-anchor="end">{:.0}</text>"#,
                left - 4.0,
                tick * 100.0
            );
        }
        for f in 0..n_f {
            let gx = left + 10.0 + group * f as f64;
            for (m, r) in self.rows.iter().enumerate() {
                let h = height * r.accuracies[f];
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.2}" width="{bar}" height="{h:.2}" fill="{}"/>"#,
                    gx + bar * m as f64,
                    top + height - h,
                    palette[m % palette.len()]
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.0}" text-anchor="middle">facet_{f}</text>"#,
                gx + bar * n_m as f64 / 2.0,
                top + height + 14.0
            );
        }
        for (m, r) in self.rows.iter().enumerate() {
            let y = top + height + 30.0 + 14.0 * m as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{left}" y="{:.0}" width="10" height="10" fill="{}"/><text x="{:.0}" y="{:.0}">{}</text>"#,
                y - 9.0,
                palette[m % palette.len()],
                left + 14.0,
                y,
                r.method
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> FacetMatrix {
        FacetMatrix::new(vec![
            EvalReport::new("mufi", vec![0.9, 0.8, 0.7], 300).unwrap(),
            EvalReport::new("intra-nce", vec![0.5, 0.25, 0.125], 300).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn single_cell_table() {
        let m = FacetMatrix::new(vec![EvalReport::new("x", vec![0.5], 10).unwrap()]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,facet_0,avg,n_val\nx,0.5000,0.5000,10\n"
        );
    }

    #[test]
    fn average_is_row_mean() {
        for r in &matrix().rows {
            let mean = r.accuracies.iter().sum::<f64>() / r.accuracies.len() as f64;
            assert!((r.average - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn incomplete_rows_are_rejected() {
        let err = FacetMatrix::new(vec![
            EvalReport::new("a", vec![0.5, 0.5], 1).unwrap(),
            EvalReport::new("b", vec![0.5], 1).unwrap(),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("incomplete report"));
        assert!(EvalReport::new("c", vec![1.5], 1).is_err());
    }

    #[test]
    fn csv_roundtrip_and_text() {
        let m = matrix();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(FacetMatrix::read_csv(&text).unwrap(), m);
        let table = m.to_text();
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("90.00"));
        assert!(m.to_svg().starts_with("<svg"));
    }
}
