//! Minimal SVG log-log plots: mean lines with shaded ±1 std bands.
//!
//! The CSV files are the source of truth; these plots are derived views,
//! so the writer is deliberately small and dependency-free.

use anyhow::{Context, Result};
use std::io::Write;
use std::path::Path;

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#e377c2",
];

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 560.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 56.0;

/// One plotted series: mean points plus an optional ±1 std band.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    /// `(x, mean)` pairs; non-finite or non-positive values are skipped.
    pub points: Vec<(f64, f64)>,
    /// `(x, lo, hi)` band edges.
    pub band: Vec<(f64, f64, f64)>,
}

struct LogAxes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl LogAxes {
    fn x(&self, v: f64) -> f64 {
        let t = (v.log10() - self.x_min) / (self.x_max - self.x_min);
        MARGIN_L + t * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        let t = (v.log10() - self.y_min) / (self.y_max - self.y_min);
        HEIGHT - MARGIN_B - t * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn finite_positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// Writes a log-log plot of the series to `path`.
pub fn write_log_log_svg(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<()> {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if finite_positive(x) && finite_positive(y) {
                xs.push(x);
                ys.push(y);
            }
        }
        for &(x, lo, hi) in &s.band {
            if finite_positive(x) && finite_positive(lo) && finite_positive(hi) {
                ys.push(lo);
                ys.push(hi);
            }
        }
    }
    // degenerate (all-diverged) figures still produce a frame
    let (x_lo, x_hi) = min_max(&xs).unwrap_or((1.0, 10.0));
    let (y_lo, y_hi) = min_max(&ys).unwrap_or((1e-3, 1.0));
    let pad = 0.04;
    let axes = LogAxes {
        x_min: x_lo.log10() - pad,
        x_max: x_hi.log10() + pad,
        y_min: y_lo.log10() - pad,
        y_max: y_hi.log10() + pad,
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"Helvetica, Arial, sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"28\" font-size=\"17\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    // gridlines and ticks at integer powers of ten
    for k in axes.x_min.ceil() as i64..=axes.x_max.floor() as i64 {
        let px = axes.x(10f64.powi(k as i32));
        svg.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{MARGIN_T}\" x2=\"{px:.1}\" y2=\"{}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            HEIGHT - MARGIN_B
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">1e{k}</text>\n",
            HEIGHT - MARGIN_B + 18.0
        ));
    }
    for k in axes.y_min.ceil() as i64..=axes.y_max.floor() as i64 {
        let py = axes.y(10f64.powi(k as i32));
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{py:.1}\" x2=\"{}\" y2=\"{py:.1}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            WIDTH - MARGIN_R
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"end\">1e{k}</text>\n",
            MARGIN_L - 6.0,
            py + 4.0
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{:.1}\" height=\"{:.1}\" \
         fill=\"none\" stroke=\"#333333\"/>\n",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" \
         transform=\"rotate(-90 20 {})\">{}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        escape(y_label)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let band: Vec<(f64, f64, f64)> = s
            .band
            .iter()
            .copied()
            .filter(|&(x, lo, hi)| finite_positive(x) && finite_positive(lo) && finite_positive(hi))
            .collect();
        if band.len() >= 2 {
            let mut d = String::from("M");
            for &(x, _, hi) in &band {
                d.push_str(&format!(" {:.1},{:.1}", axes.x(x), axes.y(hi)));
            }
            for &(x, lo, _) in band.iter().rev() {
                d.push_str(&format!(" {:.1},{:.1}", axes.x(x), axes.y(lo)));
            }
            d.push_str(" Z");
            svg.push_str(&format!(
                "<path d=\"{d}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n"
            ));
        }

        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|&(x, y)| finite_positive(x) && finite_positive(y))
            .collect();
        if !pts.is_empty() {
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.1},{:.1}", axes.x(x), axes.y(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                path.join(" ")
            ));
            for &(x, y) in &pts {
                svg.push_str(&format!(
                    "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                    axes.x(x),
                    axes.y(y)
                ));
            }
        }

        // legend entry
        let ly = MARGIN_T + 16.0 + 18.0 * i as f64;
        let label = if pts.is_empty() {
            format!("{} (diverged)", s.label)
        } else {
            s.label.clone()
        };
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly:.1}\" x2=\"{}\" y2=\"{ly:.1}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n",
            WIDTH - MARGIN_R - 180.0,
            WIDTH - MARGIN_R - 150.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"12\">{}</text>\n",
            WIDTH - MARGIN_R - 142.0,
            ly + 4.0,
            escape(&label)
        ));
    }
    svg.push_str("</svg>\n");

    let mut f =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(svg.as_bytes())?;
    Ok(())
}

fn min_max(values: &[f64]) -> Option<(f64, f64)> {
    let mut it = values.iter().copied().filter(|v| finite_positive(*v));
    let first = it.next()?;
    let mut lo = first;
    let mut hi = first;
    for v in it {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Some((lo, hi))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_expected_series_count() {
        let dir = std::env::temp_dir().join("ktd_plot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("plot.svg");
        let series = vec![
            Series {
                label: "a".into(),
                points: vec![(64.0, 0.1), (128.0, 0.05)],
                band: vec![(64.0, 0.08, 0.12), (128.0, 0.04, 0.06)],
            },
            Series {
                label: "b".into(),
                points: vec![(64.0, f64::NAN), (128.0, f64::NAN)],
                band: vec![],
            },
        ];
        write_log_log_svg(&path, "t", "n", "err", &series).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("<polyline").count(), 1); // diverged series has no line
        assert_eq!(text.matches("(diverged)").count(), 1);
        assert!(text.contains("</svg>"));
    }
}
