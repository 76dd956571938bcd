//! Minimal SVG line and scatter plots with linear axes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Line,
    Dashed,
    Dots,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Symmetric vertical error bars, one per point.
    pub errors: Option<Vec<f64>>,
    pub mark: Mark,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, mark: Mark) -> Self {
        Series { label: label.into(), points, errors: None, mark }
    }

    pub fn with_errors(mut self, errors: Vec<f64>) -> Self {
        self.errors = Some(errors);
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Points drawn as a ring on top of everything else.
    pub highlight: Option<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Tick positions at a 1-2-5 spacing covering [lo, hi].
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-300_f64.max(1e-12 * lo.abs()) {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Plot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Plot { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Plot::default() }
    }

    pub fn push(&mut self, s: Series) -> &mut Self {
        self.series.push(s);
        self
    }

    pub fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self.series.iter().flat_map(|s| {
            s.points.iter().enumerate().flat_map(move |(i, p)| {
                let e = s.errors.as_ref().and_then(|e| e.get(i)).copied().unwrap_or(0.0);
                [p.1 - e, p.1 + e]
            })
        });
        let (x0, x1) = range(xs.chain(self.highlight.map(|h| h.0)));
        let (y0, y1) = range(ys.chain(self.highlight.map(|h| h.1)));
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, MARGIN_L + pw / 2.0, escape(&self.title));
        let _ = writeln!(out, r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, MARGIN_T + ph, MARGIN_T + ph + 5.0);
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, MARGIN_T + ph + 18.0, fmt_tick(t));
        }
        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{MARGIN_L}" y2="{y:.2}" stroke="black"/>"#, MARGIN_L - 5.0);
            let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN_L - 8.0, y + 4.0, fmt_tick(t));
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, MARGIN_L + pw / 2.0, HEIGHT - 14.0, escape(&self.x_label));
        let _ = writeln!(
            out,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
            match s.mark {
                Mark::Line | Mark::Dashed => {
                    let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                    let dash = if s.mark == Mark::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
                    let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#, path.join(" "));
                }
                Mark::Dots => {
                    for &(x, y) in &pts {
                        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
                    }
                }
            }
            if let Some(errors) = &s.errors {
                for (&(x, y), &e) in s.points.iter().zip(errors) {
                    if x.is_finite() && y.is_finite() && e.is_finite() {
                        let _ = writeln!(
                            out,
                            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}"/>"#,
                            sx(x),
                            sy(y - e),
                            sy(y + e)
                        );
                    }
                }
            }
            let ly = MARGIN_T + 12.0 + 18.0 * k as f64;
            let lx = WIDTH - MARGIN_R + 10.0;
            let _ = writeln!(out, r#"<rect x="{lx}" y="{}" width="12" height="4" fill="{color}"/>"#, ly - 4.0);
            let _ = writeln!(out, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 18.0, escape(&s.label));
        }
        if let Some((x, y)) = self.highlight {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="6" fill="none" stroke="black" stroke-width="1.5"/>"#, sx(x), sy(y));
        }
        out.push_str("</svg>\n");
        out
    }
}

fn fmt_tick(t: f64) -> String {
    if t == 0.0 {
        return "0".into();
    }
    if t.abs() >= 1e4 || t.abs() < 1e-3 {
        format!("{t:.1e}")
    } else {
        let s = format!("{t:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range() {
        let t = ticks(0.0, 1.0);
        assert_eq!(t.first(), Some(&0.0));
        assert!(t.len() >= 4 && t.len() <= 11);
        assert!(ticks(-3.2, 7.9).iter().all(|x| (-3.2..=7.9).contains(x)));
    }

    #[test]
    fn render_is_deterministic_and_well_formed() {
        let mut p = Plot::new("a < b", "x", "y");
        p.push(Series::new("s", vec![(0.0, 1.0), (1.0, 2.0)], Mark::Line).with_errors(vec![0.1, 0.2]));
        p.push(Series::new("d", vec![(0.5, f64::NAN)], Mark::Dots));
        p.highlight = Some((1.0, 2.0));
        let a = p.render();
        assert_eq!(a, p.render());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a &lt; b"));
        assert!(!a.contains("NaN"));
    }
}
