//! Self-contained SVG line plots and heatmaps.
//!
//! Every plot area is a `<g class="plot">` carrying `data-domain`, `data-range`
//! and `data-log-x` so the pixel coordinates can be mapped back to data.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 620.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 420.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Maps data coordinates into the plot rectangle and back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub log_x: bool,
}

impl Axes {
    fn tx(&self, x: f64) -> f64 {
        if self.log_x { x.log10() } else { x }
    }

    fn tx_inv(&self, t: f64) -> f64 {
        if self.log_x { 10f64.powf(t) } else { t }
    }

    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let (a, b) = (self.tx(self.x_min), self.tx(self.x_max));
        let px = LEFT + (self.tx(x) - a) / (b - a) * (RIGHT - LEFT);
        let py = BOTTOM - (y - self.y_min) / (self.y_max - self.y_min) * (BOTTOM - TOP);
        (px, py)
    }

    pub fn to_data(&self, px: f64, py: f64) -> (f64, f64) {
        let (a, b) = (self.tx(self.x_min), self.tx(self.x_max));
        let x = self.tx_inv(a + (px - LEFT) / (RIGHT - LEFT) * (b - a));
        let y = self.y_min + (BOTTOM - py) / (BOTTOM - TOP) * (self.y_max - self.y_min);
        (x, y)
    }

    /// Recovers the axes from a plot emitted by this module.
    pub fn parse(svg: &str) -> Option<Self> {
        let g = &svg[svg.find("<g class=\"plot\"")?..];
        let attr = |name: &str| -> Option<&str> {
            let start = g.find(&format!("{name}=\""))? + name.len() + 2;
            Some(&g[start..start + g[start..].find('"')?])
        };
        let dom: Vec<f64> = attr("data-domain")?.split(' ').map(|s| s.parse().ok()).collect::<Option<_>>()?;
        if dom.len() != 4 {
            return None;
        }
        Some(Self { x_min: dom[0], x_max: dom[1], y_min: dom[2], y_max: dom[3], log_x: attr("data-log-x")? == "true" })
    }

    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64>, log_x: bool) -> Self {
        let (x_min, x_max) = bounds(xs.filter(|x| !log_x || *x > 0.0));
        let (y_min, y_max) = bounds(ys);
        let pad = 0.05 * (y_max - y_min);
        Self { x_min, x_max, y_min: y_min - pad, y_max: y_max + pad, log_x }
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
}

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// `(x, low, high)` for a shaded band.
    pub band: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        (LEFT + RIGHT) / 2.0,
        escape(title)
    );
}

fn frame(out: &mut String, axes: &Axes, x_label: &str, y_label: &str) {
    let _ = writeln!(out, "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>", RIGHT - LEFT, BOTTOM - TOP);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let tx = axes.tx(axes.x_min) + f * (axes.tx(axes.x_max) - axes.tx(axes.x_min));
        let x = axes.tx_inv(tx);
        let (px, _) = axes.to_pixel(x, axes.y_min);
        let _ = writeln!(out, "<text x=\"{px:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>", BOTTOM + 16.0, fmt_tick(x));
        let y = axes.y_min + f * (axes.y_max - axes.y_min);
        let (_, py) = axes.to_pixel(axes.x_min, y);
        let _ = writeln!(out, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>", LEFT - 6.0, py + 4.0, fmt_tick(y));
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", (LEFT + RIGHT) / 2.0, BOTTOM + 36.0, escape(x_label));
    let _ = writeln!(
        out,
        "<text transform=\"translate(20 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        (TOP + BOTTOM) / 2.0,
        escape(y_label)
    );
}

fn open_plot(out: &mut String, axes: &Axes) {
    let _ = writeln!(
        out,
        "<g class=\"plot\" data-domain=\"{} {} {} {}\" data-range=\"{LEFT} {RIGHT} {BOTTOM} {TOP}\" data-log-x=\"{}\">",
        axes.x_min, axes.x_max, axes.y_min, axes.y_max, axes.log_x
    );
}

impl LinePlot {
    pub fn render(&self) -> String {
        let keep = |x: f64, y: f64| x.is_finite() && y.is_finite() && (!self.log_x || x > 0.0);
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0).chain(s.band.iter().map(|b| b.0)));
        let ys = self.series.iter().flat_map(|s| {
            s.points.iter().filter(|p| keep(p.0, p.1)).map(|p| p.1).chain(s.band.iter().filter(|b| keep(b.0, b.1) && b.2.is_finite()).flat_map(|b| [b.1, b.2]))
        });
        let axes = Axes::fit(xs, ys, self.log_x);
        let mut out = String::new();
        header(&mut out, &self.title);
        frame(&mut out, &axes, &self.x_label, &self.y_label);
        open_plot(&mut out, &axes);
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let band: Vec<_> = s.band.iter().filter(|b| keep(b.0, b.1) && b.2.is_finite()).collect();
            if !band.is_empty() {
                let mut pts = String::new();
                for b in &band {
                    let (px, py) = axes.to_pixel(b.0, b.2);
                    let _ = write!(pts, "{px:.3},{py:.3} ");
                }
                for b in band.iter().rev() {
                    let (px, py) = axes.to_pixel(b.0, b.1);
                    let _ = write!(pts, "{px:.3},{py:.3} ");
                }
                let _ = writeln!(out, "<polygon class=\"band\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\" points=\"{}\"/>", pts.trim_end());
            }
            let mut pts = String::new();
            for &(x, y) in s.points.iter().filter(|p| keep(p.0, p.1)) {
                let (px, py) = axes.to_pixel(x, y);
                let _ = write!(pts, "{px:.3},{py:.3} ");
            }
            let _ = writeln!(
                out,
                "<polyline class=\"series\" data-name=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                escape(&s.name),
                pts.trim_end()
            );
        }
        out.push_str("</g>\n");
        for (i, s) in self.series.iter().enumerate() {
            let y = TOP + 14.0 + 18.0 * i as f64;
            let _ = writeln!(
                out,
                "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{}\" stroke-width=\"2\"/><text x=\"{}\" y=\"{}\">{}</text>",
                RIGHT + 8.0,
                RIGHT + 28.0,
                PALETTE[i % PALETTE.len()],
                RIGHT + 32.0,
                y + 4.0,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Reads back the `points` of every series polyline, in pixels.
pub fn parse_polylines(svg: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut found = Vec::new();
    for chunk in svg.split("<polyline class=\"series\"").skip(1) {
        let name = chunk.split("data-name=\"").nth(1).and_then(|s| s.split('"').next()).unwrap_or("").to_string();
        let pts = chunk.split("points=\"").nth(1).and_then(|s| s.split('"').next()).unwrap_or("");
        let coords = pts
            .split_whitespace()
            .filter_map(|p| {
                let (a, b) = p.split_once(',')?;
                Some((a.parse().ok()?, b.parse().ok()?))
            })
            .collect();
        found.push((name, coords));
    }
    found
}

fn color_ramp(t: f64) -> String {
    // dark blue -> teal -> yellow
    let t = t.clamp(0.0, 1.0);
    let stops = [(68.0, 1.0, 84.0), (33.0, 145.0, 140.0), (253.0, 231.0, 37.0)];
    let (a, b, f) = if t < 0.5 { (stops[0], stops[1], t * 2.0) } else { (stops[1], stops[2], t * 2.0 - 1.0) };
    let mix = |u: f64, v: f64| (u + (v - u) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// `values[i][j]` is drawn at `(xs[i], ys[j])`; cells are centred on the grid points.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>]) -> String {
    let half = |g: &[f64]| if g.len() > 1 { (g[g.len() - 1] - g[0]) / (g.len() - 1) as f64 / 2.0 } else { 0.5 };
    let (hx, hy) = (half(xs), half(ys));
    let axes = Axes {
        x_min: xs[0] - hx,
        x_max: xs[xs.len() - 1] + hx,
        y_min: ys[0] - hy,
        y_max: ys[ys.len() - 1] + hy,
        log_x: false,
    };
    let (lo, hi) = bounds(values.iter().flatten().copied());
    let mut out = String::new();
    header(&mut out, title);
    frame(&mut out, &axes, x_label, y_label);
    open_plot(&mut out, &axes);
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            let v = values[i][j];
            let (x0, y0) = axes.to_pixel(x - hx, y + hy);
            let (x1, y1) = axes.to_pixel(x + hx, y - hy);
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{x0:.3}\" y=\"{y0:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{}\" data-value=\"{v}\"/>",
                x1 - x0,
                y1 - y0,
                color_ramp((v - lo) / (hi - lo))
            );
        }
    }
    out.push_str("</g>\n");
    for k in 0..=10 {
        let f = k as f64 / 10.0;
        let py = BOTTOM - f * (BOTTOM - TOP);
        let _ = writeln!(out, "<rect x=\"{}\" y=\"{:.2}\" width=\"16\" height=\"{:.2}\" fill=\"{}\"/>", RIGHT + 12.0, py - (BOTTOM - TOP) / 10.0, (BOTTOM - TOP) / 10.0 + 0.5, color_ramp(f));
        if k % 5 == 0 {
            let _ = writeln!(out, "<text x=\"{}\" y=\"{:.2}\">{}</text>", RIGHT + 32.0, py + 4.0, fmt_tick(lo + f * (hi - lo)));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Reads back `(centre_x, centre_y, value)` for every heatmap cell, in data units.
pub fn parse_cells(svg: &str) -> Vec<(f64, f64, f64)> {
    let Some(axes) = Axes::parse(svg) else { return Vec::new() };
    let attr = |s: &str, name: &str| -> Option<f64> { s.split(&format!(" {name}=\"")).nth(1)?.split('"').next()?.parse().ok() };
    svg.split("<rect class=\"cell\"")
        .skip(1)
        .filter_map(|c| {
            let (x, y, w, h) = (attr(c, "x")?, attr(c, "y")?, attr(c, "width")?, attr(c, "height")?);
            let (dx, dy) = axes.to_data(x + w / 2.0, y + h / 2.0);
            Some((dx, dy, attr(c, "data-value")?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_round_trip_linear_and_log() {
        for log_x in [false, true] {
            let axes = Axes { x_min: 1.0, x_max: 1000.0, y_min: -2.0, y_max: 3.0, log_x };
            for (x, y) in [(1.0, -2.0), (31.0, 0.7), (1000.0, 3.0)] {
                let (px, py) = axes.to_pixel(x, y);
                let (bx, by) = axes.to_data(px, py);
                assert!((bx - x).abs() < 1e-9 * x && (by - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn line_plot_re_parses() {
        let pts: Vec<(f64, f64)> = (1..=50).map(|k| (k as f64, 1.0 / k as f64)).collect();
        let band = pts.iter().map(|&(x, y)| (x, y - 0.01, y + 0.01)).collect();
        let plot = LinePlot {
            title: "a < b".into(),
            log_x: true,
            series: vec![Series { name: "loss".into(), points: pts.clone(), band }],
            ..Default::default()
        };
        let svg = plot.render();
        assert!(svg.contains("a &lt; b") && svg.contains("class=\"band\"") && !svg.contains("href"));
        let axes = Axes::parse(&svg).unwrap();
        assert!(axes.log_x);
        let lines = parse_polylines(&svg);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].1.len(), pts.len());
        for (&(px, py), &(x, y)) in lines[0].1.iter().zip(&pts) {
            let (bx, by) = axes.to_data(px, py);
            assert!((bx - x).abs() < 1e-2 * x && (by - y).abs() < 1e-3);
        }
    }

    #[test]
    fn non_finite_points_are_skipped() {
        let plot = LinePlot { series: vec![Series { name: "s".into(), points: vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 0.5)], band: vec![] }], ..Default::default() };
        assert_eq!(parse_polylines(&plot.render())[0].1.len(), 2);
    }

    #[test]
    fn heatmap_cells_re_parse() {
        let xs = [-1.0, 0.0, 1.0];
        let ys = [0.0, 2.0];
        let values: Vec<Vec<f64>> = xs.iter().map(|x| ys.iter().map(|y| x + 10.0 * y).collect()).collect();
        let svg = heatmap("h", "x", "y", &xs, &ys, &values);
        let cells = parse_cells(&svg);
        assert_eq!(cells.len(), 6);
        for (x, y, v) in cells {
            assert!((v - (x + 10.0 * y)).abs() < 1e-6, "{x} {y} {v}");
        }
    }
}
