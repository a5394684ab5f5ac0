//! Self-contained SVG figures for a pipeline report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::abc::{Histogram, PosteriorSummary};
use crate::geometry::SimilarityMatrix;
use crate::pipeline::{AbcRun, PipelineReport};

const W: f64 = 480.0;
const H: f64 = 360.0;
const M: f64 = 48.0;

/// Linear map of a data range onto a pixel range.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, p0: f64, p1: f64) -> Self {
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        };
        Axis { lo, hi, p0, p1 }
    }

    fn at(&self, v: f64) -> f64 {
        self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let pad = 0.05 * (hi - lo).abs().max(1e-9);
    (lo - pad, hi + pad)
}

fn min_max(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    xs.into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open(title: &str, w: f64, h: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    s
}

fn frame(s: &mut String, x: Axis, y: Axis, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        s,
        r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
        x.p0,
        y.p1,
        x.p1 - x.p0,
        y.p0 - y.p1
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x.lo + f * (x.hi - x.lo);
        let yv = y.lo + f * (y.hi - y.lo);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x.at(xv),
            y.p0 + 14.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x.p0 - 4.0,
            y.at(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x.p0 + x.p1) / 2.0,
        y.p0 + 30.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(12 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y.p0 + y.p1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn polyline(s: &mut String, pts: &[(f64, f64)], color: &str) {
    let mut d = String::new();
    for (x, y) in pts {
        let _ = write!(d, "{x:.2},{y:.2} ");
    }
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
        d.trim_end()
    );
}

/// Out-of-fold predictions against actual values with the identity line.
pub fn parity_svg(actual: &[f64], predicted: &[f64], caption: &str) -> String {
    let (lo, hi) = min_max(actual.iter().chain(predicted).copied());
    let (lo, hi) = padded(lo, hi);
    let x = Axis::new(lo, hi, M, W - 16.0);
    let y = Axis::new(lo, hi, H - M, 28.0);
    let mut s = open(&format!("Parity ({caption})"), W, H);
    frame(&mut s, x, y, "actual", "predicted");
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#c33" stroke-dasharray="4 3"/>"##,
        x.at(lo),
        y.at(lo),
        x.at(hi),
        y.at(hi)
    );
    for (a, p) in actual.iter().zip(predicted) {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.1}" cy="{:.1}" r="1.6" fill="#2563eb" fill-opacity="0.45"/>"##,
            x.at(*a),
            y.at(*p)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Horizontal bars of total split gain, highest first.
pub fn importance_svg(importance: &[(String, f64)]) -> String {
    let n = importance.len().max(1);
    let h = 60.0 + 22.0 * n as f64;
    let max = importance
        .iter()
        .map(|(_, g)| *g)
        .fold(0.0, f64::max)
        .max(1e-300);
    let left = 130.0;
    let mut s = open("Feature importance (total gain)", W, h);
    for (i, (name, g)) in importance.iter().enumerate() {
        let yy = 34.0 + 22.0 * i as f64;
        let len = (W - left - 60.0) * g / max;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            yy + 12.0,
            escape(name)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{left}" y="{yy:.1}" width="{len:.1}" height="16" fill="#0f766e"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            left + len + 4.0,
            yy + 12.0,
            tick(*g)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bandwidth by the Silverman rule on weighted moments.
pub fn silverman_bandwidth(values: &[f64], weights: &[f64]) -> f64 {
    let wsum: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let var = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mean).powi(2))
        .sum::<f64>()
        / wsum;
    let q1 = crate::abc::weighted_quantile(values, weights, 0.25);
    let q3 = crate::abc::weighted_quantile(values, weights, 0.75);
    let iqr = (q3 - q1) / 1.34;
    let spread = if iqr > 0.0 {
        var.sqrt().min(iqr)
    } else {
        var.sqrt()
    };
    let ess = wsum * wsum / weights.iter().map(|w| w * w).sum::<f64>();
    let h = 0.9 * spread * ess.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3 * (mean.abs() + 1.0)
    }
}

/// Weighted Gaussian kernel density estimate evaluated on `grid`.
pub fn weighted_kde(values: &[f64], weights: &[f64], grid: &[f64]) -> Vec<f64> {
    let h = silverman_bandwidth(values, weights);
    let wsum: f64 = weights.iter().sum();
    let c = 1.0 / (wsum * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            c * values
                .iter()
                .zip(weights)
                .map(|(v, w)| w * (-0.5 * ((g - v) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect()
}

/// Posterior density with credible-interval bands and an optional reference line.
pub fn posterior_svg(
    feature: &str,
    values: &[f64],
    weights: &[f64],
    summary: Option<&PosteriorSummary>,
    reference: Option<f64>,
) -> String {
    let h = silverman_bandwidth(values, weights);
    let (lo, hi) = min_max(values.iter().copied().chain(reference));
    let (lo, hi) = (lo - 3.0 * h, hi + 3.0 * h);
    let grid: Vec<f64> = (0..200)
        .map(|i| lo + (hi - lo) * i as f64 / 199.0)
        .collect();
    let dens = weighted_kde(values, weights, &grid);
    let top = dens.iter().copied().fold(0.0, f64::max) * 1.1;
    let x = Axis::new(lo, hi, M, W - 16.0);
    let y = Axis::new(0.0, top, H - M, 28.0);
    let mut s = open(&format!("Posterior of {feature}"), W, H);
    if let Some(ps) = summary {
        for (ci, color) in ps.intervals.iter().zip(["#dbeafe", "#93c5fd"]) {
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
                x.at(ci.lower),
                y.p1,
                (x.at(ci.upper) - x.at(ci.lower)).max(0.5),
                y.p0 - y.p1
            );
        }
    }
    frame(&mut s, x, y, feature, "density");
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(&dens)
        .map(|(g, d)| (x.at(*g), y.at(*d)))
        .collect();
    polyline(&mut s, &pts, "#1d4ed8");
    if let Some(r) = reference {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#c33" stroke-dasharray="4 3"/>"##,
            x.at(r),
            y.p0,
            y.p1
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Observed and predicted histograms on shared bins.
pub fn validation_svg(hist: &Histogram, title: &str) -> String {
    let (lo, hi) = (hist.edges[0], *hist.edges.last().unwrap_or(&1.0));
    let top = hist
        .observed
        .iter()
        .chain(&hist.predicted)
        .copied()
        .fold(0.0, f64::max)
        * 1.1;
    let x = Axis::new(lo, hi, M, W - 16.0);
    let y = Axis::new(0.0, top.max(1e-12), H - M, 28.0);
    let mut s = open(title, W, H);
    frame(&mut s, x, y, "target", "density");
    for (series, color) in [(&hist.observed, "#64748b"), (&hist.predicted, "#f97316")] {
        for (i, d) in series.iter().enumerate() {
            let (a, b) = (x.at(hist.edges[i]), x.at(hist.edges[i + 1]));
            let _ = writeln!(
                s,
                r#"<rect x="{a:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.45"/>"#,
                y.at(*d),
                (b - a).max(0.0),
                y.p0 - y.at(*d)
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="40" fill="#64748b">observed</text><text x="{:.1}" y="54" fill="#f97316">predicted</text>"##,
        W - 90.0,
        W - 90.0
    );
    s.push_str("</svg>\n");
    s
}

/// Blue-white-red color for a value in [-1, 1].
pub fn diverging_color(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        let a = -t;
        (
            255.0 * (1.0 - a) + 33.0 * a,
            255.0 * (1.0 - a) + 102.0 * a,
            255.0 * (1.0 - a) + 172.0 * a,
        )
    } else {
        (
            255.0 * (1.0 - t) + 178.0 * t,
            255.0 * (1.0 - t) + 24.0 * t,
            255.0 * (1.0 - t) + 43.0 * t,
        )
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        r.round() as u8,
        g.round() as u8,
        b.round() as u8
    )
}

/// Cosine-similarity heatmap, rows ordered by cluster when `order` is given.
pub fn heatmap_svg(sim: &SimilarityMatrix, order: Option<&[usize]>) -> String {
    let n = sim.labels.len();
    let idx: Vec<usize> = match order {
        Some(o) => o.to_vec(),
        None => (0..n).collect(),
    };
    let cell = (360.0 / n.max(1) as f64).clamp(6.0, 28.0);
    let left = 90.0;
    let w = left + cell * n as f64 + 20.0;
    let h = 40.0 + cell * n as f64 + 90.0;
    let mut s = open("Geometry similarity", w, h);
    for (r, &i) in idx.iter().enumerate() {
        let yy = 30.0 + cell * r as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 4.0,
            yy + cell * 0.7,
            escape(&sim.labels[i])
        );
        for (c, &j) in idx.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{yy:.1}" width="{cell:.1}" height="{cell:.1}" fill="{}"/>"#,
                left + cell * c as f64,
                diverging_color(sim.values[i][j])
            );
        }
    }
    let base = 30.0 + cell * n as f64;
    for (c, &j) in idx.iter().enumerate() {
        let xx = left + cell * c as f64 + cell * 0.6;
        let _ = writeln!(
            s,
            r#"<text transform="translate({xx:.1} {:.1}) rotate(-60)" text-anchor="end">{}</text>"#,
            base + 6.0,
            escape(&sim.labels[j])
        );
    }
    s.push_str("</svg>\n");
    s
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn posterior_plots(
    run: &AbcRun,
    prefix: &str,
    dir: &Path,
    out: &mut Vec<PathBuf>,
) -> std::io::Result<()> {
    for (k, f) in run.draws.features.iter().enumerate() {
        let values: Vec<f64> = run.draws.values.iter().map(|d| d[k]).collect();
        let summary = run.posteriors.iter().find(|p| &p.feature == f);
        let svg = posterior_svg(f, &values, &run.draws.weights, summary, None);
        let p = dir.join(format!("{prefix}posterior_{}.svg", sanitize(f)));
        std::fs::write(&p, svg)?;
        out.push(p);
    }
    Ok(())
}

/// Write every figure for `report` into `dir` and return the paths.
pub fn emit_plots(report: &PipelineReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let put = |name: String, svg: String, out: &mut Vec<PathBuf>| -> std::io::Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, svg)?;
        out.push(p);
        Ok(())
    };
    let sur = &report.surrogate;
    put(
        "parity.svg".into(),
        parity_svg(&sur.actual, &sur.cv.predictions, &sur.cv_summary),
        &mut out,
    )?;
    put(
        "importance.svg".into(),
        importance_svg(&sur.importance),
        &mut out,
    )?;
    posterior_plots(&report.abc.global, "", dir, &mut out)?;
    put(
        "forward_validation.svg".into(),
        validation_svg(&report.validation.global.histogram, "Forward validation"),
        &mut out,
    )?;
    if let Some(st) = &report.abc.stratification {
        let mut order: Vec<usize> = (0..st.similarity.labels.len()).collect();
        order.sort_by_key(|&i| (st.model.assignment[i], i));
        put(
            "similarity_heatmap.svg".into(),
            heatmap_svg(&st.similarity, Some(&order)),
            &mut out,
        )?;
        for run in &report.abc.clusters {
            posterior_plots(run, &format!("{}_", sanitize(&run.label)), dir, &mut out)?;
        }
        for (label, v) in &report.validation.clusters {
            put(
                format!("{}_forward_validation.svg", sanitize(label)),
                validation_svg(&v.histogram, &format!("Forward validation: {label}")),
                &mut out,
            )?;
        }
    }
    Ok(out)
}

/// Location of the highest point of the weighted KDE on a fine grid.
pub fn kde_mode(values: &[f64], weights: &[f64]) -> f64 {
    let (lo, hi) = min_max(values.iter().copied());
    let grid: Vec<f64> = (0..1001)
        .map(|i| lo + (hi - lo) * i as f64 / 1000.0)
        .collect();
    let d = weighted_kde(values, weights, &grid);
    let i = (0..d.len())
        .max_by(|&a, &b| d[a].total_cmp(&d[b]))
        .unwrap_or(0);
    grid[i]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn kde_mode_of_standard_normal() {
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| stats::normal_quantile((i as f64 + 0.5) / n as f64))
            .collect();
        let w = vec![1.0; xs.len()];
        let m = kde_mode(&xs, &w);
        assert!(m.abs() < 0.02, "mode {m}");
        let h = silverman_bandwidth(&xs, &w);
        let expect =
            0.9 * stats::population_variance(&xs).sqrt().min(1.349 / 1.34) * 10_000f64.powf(-0.2);
        assert!((h - expect).abs() < 0.01, "{h} vs {expect}");
    }

    #[test]
    fn kde_integrates_to_one() {
        let xs = [0.0, 1.0, 1.5, 4.0];
        let w = [0.1, 0.2, 0.3, 0.4];
        let grid: Vec<f64> = (0..4001).map(|i| -10.0 + i as f64 * 0.005).collect();
        let d = weighted_kde(&xs, &w, &grid);
        let area: f64 = d.iter().sum::<f64>() * 0.005;
        assert!((area - 1.0).abs() < 1e-3, "{area}");
    }

    #[test]
    fn diverging_endpoints() {
        assert_eq!(diverging_color(0.0), "#ffffff");
        assert_eq!(diverging_color(-1.0), "#2166ac");
        assert_eq!(diverging_color(1.0), "#b2182b");
        assert_eq!(diverging_color(7.0), diverging_color(1.0));
    }

    #[test]
    fn svgs_are_well_formed() {
        let svg = parity_svg(&[1.0, 2.0], &[1.1, 1.9], "R² = 1");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let svg = importance_svg(&[("a<b".into(), 2.0), ("c".into(), 1.0)]);
        assert!(svg.contains("a&lt;b"));
        let sim = SimilarityMatrix {
            labels: vec!["x".into(), "y".into()],
            values: vec![vec![1.0, -0.5], vec![-0.5, 1.0]],
        };
        assert_eq!(heatmap_svg(&sim, None).matches("<rect").count(), 1 + 4);
    }
}
