use std::fmt::Write as _;

use crate::error::{BoomError, Result};
use crate::trainer::{read_metrics, METRICS_HEADER};

pub const PLOTTED_COLUMNS: [&str; 4] = ["eval_return", "episode_return", "model_loss", "policy_loss"];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// Per-step mean and sample std across runs, for every metrics column.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub num_runs: usize,
    pub steps: Vec<usize>,
    /// (column name, means, stds), in metrics header order.
    pub columns: Vec<(String, Vec<f64>, Vec<f64>)>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates metrics CSV texts over the env steps present in every run.
pub fn aggregate(texts: &[String]) -> Result<Aggregate> {
    if texts.is_empty() {
        return Err(BoomError::InsufficientData("no metrics files given".into()));
    }
    let runs = texts
        .iter()
        .map(|t| read_metrics(t))
        .collect::<Result<Vec<_>>>()?;
    let mut steps: Vec<usize> = runs[0].iter().map(|r| r.env_step).collect();
    steps.retain(|s| runs.iter().all(|run| run.iter().any(|r| r.env_step == *s)));
    steps.dedup();
    if steps.is_empty() {
        return Err(BoomError::InsufficientData(
            "metrics files share no env_step rows".into(),
        ));
    }
    let names: Vec<&str> = METRICS_HEADER.split(',').skip(1).collect();
    let mut columns = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let mut means = Vec::with_capacity(steps.len());
        let mut stds = Vec::with_capacity(steps.len());
        for s in &steps {
            let vals: Vec<f64> = runs
                .iter()
                .map(|run| {
                    let row = run.iter().find(|r| r.env_step == *s).expect("step present in every run");
                    row.values()[i]
                })
                .collect();
            let (m, sd) = mean_std(&vals);
            means.push(m);
            stds.push(sd);
        }
        columns.push((name.to_string(), means, stds));
    }
    Ok(Aggregate {
        num_runs: runs.len(),
        steps,
        columns,
    })
}

impl Aggregate {
    pub fn column(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.columns
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, m, s)| (m.as_slice(), s.as_slice()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("env_step");
        for (name, _, _) in &self.columns {
            let _ = write!(s, ",{name}_mean,{name}_std");
        }
        s.push('\n');
        for (k, step) in self.steps.iter().enumerate() {
            s.push_str(&step.to_string());
            for (_, m, sd) in &self.columns {
                let _ = write!(s, ",{},{}", m[k], sd[k]);
            }
            s.push('\n');
        }
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Static line chart of one column's mean with a shaded +-1 std band.
/// Non-finite points are skipped.
pub fn render_svg(agg: &Aggregate, column: &str, title: &str) -> Result<String> {
    let (means, stds) = agg
        .column(column)
        .ok_or_else(|| BoomError::Config(format!("unknown metrics column '{column}'")))?;
    let pts: Vec<(f64, f64, f64)> = agg
        .steps
        .iter()
        .zip(means.iter().zip(stds))
        .filter(|(_, (m, s))| m.is_finite() && s.is_finite())
        .map(|(x, (m, s))| (*x as f64, *m, *s))
        .collect();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN / 2.0, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );

    if !pts.is_empty() {
        let xmin = pts.first().map(|p| p.0).unwrap_or(0.0);
        let xmax = pts.last().map(|p| p.0).unwrap_or(1.0);
        let lo = pts.iter().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
        let sx = |x: f64| x0 + (x - xmin) / xspan * (x1 - x0);
        let sy = |y: f64| y0 - (y - lo) / (hi - lo) * (y0 - y1);

        let mut band = String::new();
        for p in &pts {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.0), sy(p.1 + p.2));
        }
        for p in pts.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.0), sy(p.1 - p.2));
        }
        let _ = writeln!(
            svg,
            r##"<polygon points="{}" fill="#4c72b0" fill-opacity="0.25" stroke="none"/>"##,
            band.trim_end()
        );
        let line: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#4c72b0" stroke-width="2"/>"##,
            line.join(" ")
        );
        for (label, x, y, anchor) in [
            (format!("{xmin}"), x0, y0 + 18.0, "start"),
            (format!("{xmax}"), x1, y0 + 18.0, "end"),
            (format!("{lo:.3}"), x0 - 6.0, y0, "end"),
            (format!("{hi:.3}"), x0 - 6.0, y1 + 4.0, "end"),
        ] {
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
                escape(&label)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">env_step (mean +- std over {} runs)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        agg.num_runs
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
