//! Static SVG line charts from tab-separated tables.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A header row and numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> =
            lines.next().context("empty table")?.split('\t').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = line
                .split('\t')
                .map(|s| if s.trim().is_empty() { Ok(f64::NAN) } else { s.trim().parse::<f64>() })
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("line {}: non-numeric cell", i + 2))?;
            if row.len() != header.len() {
                bail!("line {}: {} cells, header has {}", i + 2, row.len(), header.len());
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("no column {name:?}; have {}", self.header.join(", ")))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `ys` against `x` as one polyline per series.
pub fn line_chart(table: &Table, x: &str, ys: &[String], title: &str) -> Result<String> {
    if ys.is_empty() {
        bail!("no y columns given");
    }
    let xs = table.column(x)?;
    let series: Vec<(String, Vec<f64>)> =
        ys.iter().map(|y| Ok((y.clone(), table.column(y)?))).collect::<Result<_>>()?;
    let (x0, x1) = extent(xs.iter().copied());
    let (y0, y1) = extent(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let px = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title))?;
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(s, r#"<path d="M{left},{top} L{left},{bottom} L{right},{bottom}" stroke="black" fill="none"/>"#)?;
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(xv), bottom + 16.0, tick(xv))?;
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, py(yv) + 4.0, tick(yv))?;
        writeln!(s, r##"<path d="M{left},{y:.1} L{right},{y:.1}" stroke="#ddd"/>"##, y = py(yv))?;
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x))?;
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| format!("{:.1},{:.1}", px(a), py(b)))
            .collect();
        writeln!(s, r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, points.join(" "))?;
        for p in &points {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#)?;
        }
        let ly = top + 16.0 * i as f64;
        writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, right - 110.0, ly - 9.0)?;
        writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, right - 95.0, escape(name))?;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_plots() {
        let t = Table::parse("T_prime\tHR@5\tseconds\n5\t0.9\t1.0\n50\t0.91\t8.5\n").unwrap();
        assert_eq!(t.column("HR@5").unwrap(), vec![0.9, 0.91]);
        let svg = line_chart(&t, "T_prime", &["HR@5".into()], "a < b").unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Table::parse("a\tb\n1\n").is_err());
        assert!(Table::parse("a\tb\n1\tx\n").is_err());
        let t = Table::parse("a\tb\n1\t2\n").unwrap();
        assert!(line_chart(&t, "a", &["c".into()], "").is_err());
    }

    #[test]
    fn blank_cells_are_skipped() {
        let t = Table::parse("epoch\tval\n0\t\n1\t0.5\n").unwrap();
        let svg = line_chart(&t, "epoch", &["val".into()], "").unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
    }
}
