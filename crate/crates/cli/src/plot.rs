//! Log-log convergence plot as a standalone SVG document.

use std::fmt::Write;

/// One curve: `(iteration, value)` points with positive coordinates.
pub type Curve = Vec<(f64, f64)>;

pub struct Series {
    pub label: String,
    pub runs: Vec<Curve>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const GRID_POINTS: usize = 200;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Geometric grid of `count` points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 || hi <= lo {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp()).collect()
}

/// Value of `curve` at `x`, interpolated linearly in `ln x` and held
/// constant outside the sampled range.
pub fn sample(curve: &[(f64, f64)], x: f64) -> f64 {
    let first = curve[0];
    if x <= first.0 {
        return first.1;
    }
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            let t = (x.ln() - x0.ln()) / (x1.ln() - x0.ln());
            return y0 + (y1 - y0) * t;
        }
    }
    curve[curve.len() - 1].1
}

/// Arithmetic mean of the runs resampled on `grid`.
pub fn mean_curve(runs: &[Curve], grid: &[f64]) -> Vec<f64> {
    let runs: Vec<&Curve> = runs.iter().filter(|c| !c.is_empty()).collect();
    grid.iter()
        .map(|&x| runs.iter().map(|c| sample(c, x)).sum::<f64>() / runs.len() as f64)
        .collect()
}

struct Axes {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x.log10() - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y.log10() - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - TOP - BOTTOM)
    }
}

/// Decade-aligned bounds of `values`, at least one decade wide.
fn decades(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn polyline(out: &mut String, axes: &Axes, xs: impl Iterator<Item = (f64, f64)>, style: &str) {
    let mut points = String::new();
    for (x, y) in xs {
        let _ = write!(points, "{:.2},{:.2} ", axes.px(x), axes.py(y));
    }
    let _ = writeln!(out, r#"<polyline fill="none" {style} points="{}"/>"#, points.trim_end());
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders every run thinly and each series mean boldly. Points with a
/// nonpositive coordinate cannot appear on log axes and are dropped.
pub fn render(series: &[Series], title: &str, y_label: &str) -> String {
    let clean: Vec<Vec<Curve>> = series
        .iter()
        .map(|s| {
            s.runs
                .iter()
                .map(|c| c.iter().copied().filter(|&(x, y)| x > 0.0 && y > 0.0 && y.is_finite()).collect())
                .collect()
        })
        .collect();
    let all = || clean.iter().flatten().flatten();
    let (x_lo, x_hi) = decades(all().map(|p| p.0));
    let (y_lo, y_hi) = decades(all().map(|p| p.1));
    let axes = Axes { x_lo: x_lo.max(0.0), x_hi, y_lo, y_hi };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    for d in axes.x_lo as i32..=axes.x_hi as i32 {
        let x = axes.px(10f64.powi(d));
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{y1}" stroke="#ddd"/>"##);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">1e{d}</text>"#, y1 + 18.0);
    }
    for d in axes.y_lo as i32..=axes.y_hi as i32 {
        let y = axes.py(10f64.powi(d));
        let _ = writeln!(out, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/>"##);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(out, r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#333"/>"##, x1 - x0, y1 - y0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, (x0 + x1) / 2.0, HEIGHT - 18.0);
    let _ = writeln!(
        out,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );

    for (k, (s, runs)) in series.iter().zip(&clean).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let thin = format!(r#"stroke="{color}" stroke-width="0.8" stroke-opacity="0.35""#);
        for run in runs.iter().filter(|c| !c.is_empty()) {
            polyline(&mut out, &axes, run.iter().copied(), &thin);
        }
        let longest = runs.iter().filter_map(|c| c.last()).map(|p| p.0).fold(0.0, f64::max);
        let shortest = runs.iter().filter_map(|c| c.first()).map(|p| p.0).fold(f64::INFINITY, f64::min);
        if longest > 0.0 {
            let grid = log_grid(shortest, longest, GRID_POINTS);
            let mean = mean_curve(runs, &grid);
            let bold = format!(r#"stroke="{color}" stroke-width="2.5""#);
            polyline(&mut out, &axes, grid.iter().copied().zip(mean), &bold);
        }
        let ly = y0 + 20.0 + 20.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2.5"/><text x="{2}" y="{3}">{4} (n={5})</text>"#,
            x1 + 12.0,
            x1 + 36.0,
            x1 + 42.0,
            ly + 4.0,
            escape(&s.label),
            runs.iter().filter(|c| !c.is_empty()).count()
        );
    }
    out.push_str("</svg>\n");
    out
}
