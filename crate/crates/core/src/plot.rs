//! Self-contained SVG charts for learning curves, trade-offs and queue traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    pub label: String,
    /// Drawn as a polyline.
    pub line: Vec<(f64, f64)>,
    /// Drawn as circles.
    pub markers: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Chart {
    fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let pts = self.series.iter().flat_map(|s| s.line.iter().chain(&s.markers)).filter(|(x, y)| x.is_finite() && y.is_finite());
        let mut xb = (f64::INFINITY, f64::NEG_INFINITY);
        let mut yb = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            xb = (xb.0.min(x), xb.1.max(x));
            yb = (yb.0.min(y), yb.1.max(y));
        }
        let fix = |(lo, hi): (f64, f64)| {
            if lo > hi {
                (0.0, 1.0)
            } else if lo == hi {
                let pad = if lo == 0.0 { 0.5 } else { 0.05 * lo.abs() };
                (lo - pad, hi + pad)
            } else {
                (lo, hi)
            }
        };
        (fix(xb), fix(yb))
    }

    pub fn render(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.bounds();
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, MARGIN_L + pw / 2.0, escape(&self.title));
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(xv),
                MARGIN_T + ph + 18.0,
                fmt_tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                MARGIN_L - 6.0,
                sy(yv) + 4.0,
                fmt_tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let line: Vec<String> = series
                .line
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if !line.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    line.join(" ")
                );
            }
            for &(x, y) in series.markers.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.6"/>"#, sx(x), sy(y));
            }
            if !series.label.is_empty() {
                let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
                let lx = WIDTH - MARGIN_R + 10.0;
                let _ = writeln!(s, r#"<rect x="{lx}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
                let _ = writeln!(s, r#"<text x="{}" y="{ly:.2}">{}</text>"#, lx + 14.0, escape(&series.label));
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

/// CSV contents with the 1-based file line of every data row.
struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
            rows.push((line, rec.iter().map(String::from).collect()));
        }
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column {name:?}") })
    }

    fn num(line: usize, row: &[String], idx: usize) -> Result<f64> {
        row[idx].trim().parse().map_err(|_| Error::Parse { line, msg: format!("not a number: {:?}", row[idx]) })
    }
}

/// Evaluation reward sum against training steps.
pub fn learning_curve_svg<R: Read>(csv: R) -> Result<String> {
    let t = Table::read(csv)?;
    let (xs, ys) = (t.col("step")?, t.col("reward_sum")?);
    let line = t.rows.iter().map(|(l, r)| Ok((Table::num(*l, r, xs)?, Table::num(*l, r, ys)?))).collect::<Result<_>>()?;
    Ok(Chart {
        title: "Learning curve".into(),
        x_label: "training steps".into(),
        y_label: "evaluation reward sum".into(),
        series: vec![Series { label: "reward".into(), line, markers: vec![] }],
    }
    .render())
}

/// Average penalty against average queue: one marker per run, one line
/// through the per-weight means of each series.
pub fn tradeoff_svg<R: Read>(csv: R) -> Result<String> {
    let t = Table::read(csv)?;
    let (sc, wc, qc, pc) = (t.col("series")?, t.col("weight")?, t.col("avg_queue")?, t.col("avg_penalty")?);
    let status = t.col("status").ok();
    let mut groups: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for (l, r) in &t.rows {
        if status.is_some_and(|c| r[c] != "ok") {
            continue;
        }
        let w = Table::num(*l, r, wc)?;
        let q = Table::num(*l, r, qc)?;
        let p = Table::num(*l, r, pc)?;
        groups.entry(r[sc].clone()).or_default().push((w, q, p));
    }
    let series = groups
        .into_iter()
        .map(|(label, pts)| {
            let mut by_w: BTreeMap<u64, (f64, f64, f64, usize)> = BTreeMap::new();
            for &(w, q, p) in &pts {
                let e = by_w.entry(w.to_bits()).or_insert((w, 0.0, 0.0, 0));
                e.1 += q;
                e.2 += p;
                e.3 += 1;
            }
            let mut means: Vec<(f64, f64, f64)> =
                by_w.into_values().map(|(w, q, p, n)| (w, q / n as f64, p / n as f64)).collect();
            means.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label,
                line: means.iter().map(|&(_, q, p)| (q, p)).collect(),
                markers: pts.iter().map(|&(_, q, p)| (q, p)).collect(),
            }
        })
        .collect();
    Ok(Chart {
        title: "Penalty versus queue length".into(),
        x_label: "average queue (bits)".into(),
        y_label: "average penalty".into(),
        series,
    }
    .render())
}

/// Every `q_*` column of a trace against `t`.
pub fn queue_svg<R: Read>(csv: R) -> Result<String> {
    let t = Table::read(csv)?;
    let tc = t.col("t")?;
    let qcols: Vec<(usize, String)> =
        t.header.iter().enumerate().filter(|(_, h)| h.starts_with("q_")).map(|(i, h)| (i, h.clone())).collect();
    let mut series: Vec<Series> = qcols.iter().map(|(_, h)| Series { label: h.clone(), ..Default::default() }).collect();
    for (l, r) in &t.rows {
        let x = Table::num(*l, r, tc)?;
        for (k, (c, _)) in qcols.iter().enumerate() {
            series[k].line.push((x, Table::num(*l, r, *c)?));
        }
    }
    Ok(Chart { title: "Queue length".into(), x_label: "slot".into(), y_label: "bits".into(), series }.render())
}
