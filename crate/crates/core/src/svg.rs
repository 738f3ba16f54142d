//! Minimal self-contained SVG writer for log-log scaling plots.

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
    pub draw_markers: bool,
}

fn nice_log_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v > 0.0 && v.is_finite() {
            lo = lo.min(v.log10());
            hi = hi.max(v.log10());
        }
    }
    if !lo.is_finite() {
        return None;
    }
    let lo = lo.floor();
    let mut hi = hi.ceil();
    if hi <= lo {
        hi = lo + 1.0;
    }
    Some((lo, hi))
}

/// Render a log-log plot of the series. Points with nonpositive
/// coordinates are skipped (they have no logarithm to draw).
pub fn log_log_plot(title: &str, x_label: &str, y_label: &str, series: &[PlotSeries]) -> String {
    let xr = nice_log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = nice_log_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));
    let (Some((x0, x1)), Some((y0, y1))) = (xr, yr) else {
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">no positive data</text>\n</svg>\n",
            WIDTH / 2.0,
            HEIGHT / 2.0
        ));
        return out;
    };
    let px = |lx: f64| MARGIN_L + (lx - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |ly: f64| HEIGHT - MARGIN_B - (ly - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B);

    // Decade grid.
    let mut dec = x0;
    while dec <= x1 + 1e-9 {
        let x = px(dec);
        out.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            py(y1),
            py(y0)
        ));
        out.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">1e{}</text>\n",
            HEIGHT - MARGIN_B + 16.0,
            dec as i64
        ));
        dec += 1.0;
    }
    let mut dec = y0;
    while dec <= y1 + 1e-9 {
        let y = py(dec);
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n",
            px(x0),
            px(x1)
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">1e{}</text>\n",
            MARGIN_L - 6.0,
            dec as i64
        ));
        dec += 1.0;
    }
    // Axes.
    out.push_str(&format!(
        "<rect x=\"{MARGIN_L:.1}\" y=\"{MARGIN_T:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>\n",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        xml_escape(y_label)
    ));

    for s in series {
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|p| p.0 > 0.0 && p.1 > 0.0)
            .map(|p| (px(p.0.log10()), py(p.1.log10())))
            .collect();
        if pts.len() >= 2 {
            let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", p.0, p.1)).collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.6\"/>\n",
                path.join(" "),
                s.color
            ));
        }
        if s.draw_markers {
            for p in &pts {
                out.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                    p.0, p.1, s.color
                ));
            }
        }
    }
    // Legend.
    for (i, s) in series.iter().enumerate() {
        let y = MARGIN_T + 14.0 + 16.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            WIDTH - 190.0,
            WIDTH - 160.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            WIDTH - 152.0,
            y + 4.0,
            xml_escape(&s.label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_contains_series_and_axes() {
        let series = vec![
            PlotSeries {
                label: "empirical".into(),
                color: "#1f77b4".into(),
                points: vec![(0.001, 0.02), (0.01, 0.07), (0.1, 0.2)],
                draw_markers: true,
            },
            PlotSeries {
                label: "bound".into(),
                color: "#d62728".into(),
                points: vec![(0.001, 0.08), (0.01, 0.3), (0.1, 1.0)],
                draw_markers: false,
            },
        ];
        let svg = log_log_plot("rms vs a", "a", "rms", &series);
        assert!(svg.contains("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("empirical"));
        assert!(svg.contains("bound"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn plot_is_deterministic() {
        let series = vec![PlotSeries {
            label: "s".into(),
            color: "#000000".into(),
            points: vec![(1.0, 2.0), (10.0, 20.0)],
            draw_markers: true,
        }];
        assert_eq!(
            log_log_plot("t", "x", "y", &series),
            log_log_plot("t", "x", "y", &series)
        );
    }

    #[test]
    fn plot_without_positive_data_degrades() {
        let series = vec![PlotSeries {
            label: "s".into(),
            color: "#000000".into(),
            points: vec![(0.0, 0.0)],
            draw_markers: false,
        }];
        let svg = log_log_plot("t", "x", "y", &series);
        assert!(svg.contains("no positive data"));
    }
}
