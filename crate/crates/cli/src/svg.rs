//! Minimal deterministic SVG line plots. No external renderer: the reports
//! are static artifacts meant for after-the-fact inspection, and a small
//! hand-rolled writer keeps the output byte-stable across runs.

use std::fmt::Write;

/// One polyline. Non-finite or (on log axes) non-positive points are
/// dropped rather than distorting the scale.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Dashed lines mark reference curves (bounds) as opposed to data.
    pub dashed: bool,
}

#[derive(Debug, Clone)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 52.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Renders the series to a complete SVG document.
pub fn line_plot(series: &[Series], opts: &PlotOptions) -> String {
    let usable: Vec<(usize, Vec<(f64, f64)>)> = series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let pts = s
                .points
                .iter()
                .copied()
                .filter(|&(x, y)| {
                    x.is_finite() && y.is_finite() && (!opts.log_y || y > 0.0)
                })
                .collect();
            (i, pts)
        })
        .collect();

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (_, pts) in &usable {
        for &(x, y) in pts {
            xs.push(x);
            ys.push(if opts.log_y { y.log10() } else { y });
        }
    }
    let (x_min, x_max) = padded_range(&xs, false);
    let (y_min, y_max) = padded_range(&ys, opts.log_y);

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let to_px = |x: f64, y_t: f64| -> (f64, f64) {
        let px = MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
        let py = MARGIN_T + (y_max - y_t) / (y_max - y_min) * plot_h;
        (px, py)
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        MARGIN_L + plot_w / 2.0,
        escape(&opts.title)
    );

    // Axes frame.
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
         fill=\"none\" stroke=\"black\"/>"
    );

    // Ticks: 6 on each axis; log axes label the raw value.
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let x = x_min + t * (x_max - x_min);
        let (px, _) = to_px(x, y_min);
        let _ = writeln!(
            out,
            "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#ccc\"/>",
            MARGIN_T,
            MARGIN_T + plot_h
        );
        let _ = writeln!(
            out,
            "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            MARGIN_T + plot_h + 18.0,
            tick_label(x)
        );
        let y_t = y_min + t * (y_max - y_min);
        let (_, py) = to_px(x_min, y_t);
        let _ = writeln!(
            out,
            "<line x1=\"{MARGIN_L}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"#ccc\"/>",
            MARGIN_L + plot_w
        );
        let raw = if opts.log_y { 10f64.powf(y_t) } else { y_t };
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 6.0,
            py + 4.0,
            tick_label(raw)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(&opts.x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(&opts.y_label)
    );

    // Series and legend.
    for (slot, (idx, pts)) in usable.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[idx % PALETTE.len()];
        let dash = if series[*idx].dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let mut path = String::new();
        for (j, &(x, y)) in pts.iter().enumerate() {
            let y_t = if opts.log_y { y.log10() } else { y };
            let (px, py) = to_px(x, y_t);
            let _ = write!(path, "{}{px:.2},{py:.2}", if j == 0 { "" } else { " " });
        }
        let _ = writeln!(
            out,
            "<polyline points=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"{dash}/>"
        );
        let ly = MARGIN_T + 14.0 + slot as f64 * 18.0;
        let lx = MARGIN_L + plot_w + 12.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" \
             stroke-width=\"1.6\"{dash}/>",
            ly - 4.0,
            lx + 22.0,
            ly - 4.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{ly:.1}\">{}</text>",
            lx + 28.0,
            escape(&series[*idx].name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Range with 5% padding; degenerate or empty input falls back to a unit
/// interval so the layout never divides by zero.
fn padded_range(values: &[f64], log_axis: bool) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return if log_axis { (-1.0, 1.0) } else { (0.0, 1.0) };
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && (a >= 1e4 || a < 1e-3) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_series() -> Vec<Series> {
        vec![
            Series {
                name: "run".into(),
                points: (0..10).map(|k| (k as f64, 0.5f64.powi(k))).collect(),
                dashed: false,
            },
            Series {
                name: "bound".into(),
                points: (0..10).map(|k| (k as f64, 0.6f64.powi(k) * 2.0)).collect(),
                dashed: true,
            },
        ]
    }

    #[test]
    fn output_is_wellformed_and_deterministic() {
        let opts = PlotOptions {
            title: "gap vs iteration".into(),
            x_label: "iteration".into(),
            y_label: "gap".into(),
            log_y: true,
        };
        let a = line_plot(&demo_series(), &opts);
        let b = line_plot(&demo_series(), &opts);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains("stroke-dasharray"));
        assert!(a.contains("gap vs iteration"));
    }

    #[test]
    fn log_axis_drops_nonpositive_points_only() {
        let series = vec![Series {
            name: "mixed".into(),
            points: vec![(0.0, 1.0), (1.0, 0.0), (2.0, -3.0), (3.0, 0.25), (4.0, f64::NAN)],
            dashed: false,
        }];
        let opts = PlotOptions {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_y: true,
        };
        let svg = line_plot(&series, &opts);
        // Two surviving points → a polyline with exactly two coordinates.
        let poly = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let coords = poly.split('"').nth(1).unwrap();
        assert_eq!(coords.split(' ').count(), 2);
    }

    #[test]
    fn empty_input_still_renders_a_frame() {
        let opts = PlotOptions {
            title: "empty".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_y: false,
        };
        let svg = line_plot(&[], &opts);
        assert!(svg.contains("<rect"));
        assert!(!svg.contains("<polyline"));
    }
}
