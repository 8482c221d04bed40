//! Minimal deterministic SVG line plots: stacked panels sharing a time axis.

use std::fmt::Write as _;

const WIDTH: f64 = 800.0;
const PANEL_HEIGHT: f64 = 220.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const GAP: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub struct Series<'a> {
    pub label: String,
    pub values: &'a [f64],
}

pub struct Panel<'a> {
    pub ylabel: String,
    pub series: Vec<Series<'a>>,
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-2..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        let pad = lo.abs().max(1.0) * 0.5;
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Renders panels stacked vertically against `times`.
pub fn render(title: &str, times: &[f64], panels: &[Panel<'_>]) -> String {
    let height = TOP + panels.len() as f64 * (PANEL_HEIGHT + GAP) + 10.0;
    let plot_w = WIDTH - LEFT - RIGHT;
    let (t0, t1) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => (0.0, 1.0),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (p, panel) in panels.iter().enumerate() {
        let y_top = TOP + p as f64 * (PANEL_HEIGHT + GAP);
        let (lo, hi) = range(panel.series.iter().flat_map(|s| s.values.iter().copied()));
        let sx = |t: f64| LEFT + (t - t0) / (t1 - t0) * plot_w;
        let sy = |v: f64| y_top + (hi - v) / (hi - lo) * PANEL_HEIGHT;
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT}" y="{y_top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let t = t0 + (t1 - t0) * k as f64 / 4.0;
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let (x, y) = (sx(t), sy(v));
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                y_top,
                y_top + PANEL_HEIGHT,
                y_top + PANEL_HEIGHT + 15.0,
                fmt_tick(t)
            );
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + plot_w,
                LEFT - 5.0,
                y + 4.0,
                fmt_tick(v)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time [s]</text>"#,
            LEFT + plot_w / 2.0,
            y_top + PANEL_HEIGHT + 32.0
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{0:.2}" text-anchor="middle" transform="rotate(-90 18 {0:.2})">{1}</text>"#,
            y_top + PANEL_HEIGHT / 2.0,
            escape(&panel.ylabel)
        );
        for (s, series) in panel.series.iter().enumerate() {
            let color = COLORS[s % COLORS.len()];
            let mut points = String::new();
            for (t, v) in times.iter().zip(series.values) {
                if v.is_finite() {
                    let _ = write!(points, "{:.2},{:.2} ", sx(*t), sy(*v));
                }
            }
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                points.trim_end()
            );
            let ly = y_top + 15.0 + 18.0 * s as f64;
            let lx = LEFT + plot_w + 12.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_legend_and_axes() {
        let t = [0.0, 1.0, 2.0];
        let y = [1.0, 0.5, 0.25];
        let svg = render("decay", &t, &[Panel { ylabel: "y".into(), series: vec![Series { label: "y<1>".into(), values: &y }] }]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("time [s]"));
        assert!(svg.contains("y&lt;1&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn flat_series_gets_padded_range() {
        assert_eq!(range([2.0, 2.0].into_iter()), (1.0, 3.0));
        assert_eq!(range(std::iter::empty()), (-1.0, 1.0));
    }

    #[test]
    fn tick_format() {
        assert_eq!(fmt_tick(0.0), "0");
        assert_eq!(fmt_tick(2.5), "2.5");
        assert_eq!(fmt_tick(1e-5), "1.00e-5");
    }
}
