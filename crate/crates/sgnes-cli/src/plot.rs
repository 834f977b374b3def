//! Minimal SVG line plots for the experiment panels. The CSV files are the
//! canonical artifacts; these are quick-look renderings of them.

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
    /// Render semi-transparent (raw series behind a moving average).
    pub faded: bool,
    pub color_index: usize,
}

pub fn line_plot_svg(title: &str, y_label: &str, series: &[Series<'_>], log_y: bool) -> String {
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut x_max = 1usize;
    for s in series {
        x_max = x_max.max(s.values.len());
        for &v in s.values {
            if !v.is_finite() {
                continue;
            }
            if log_y && v <= 0.0 {
                continue;
            }
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-300 {
        y_max = y_min + 1.0;
    }
    let (t_min, t_max) = if log_y {
        (y_min.log10(), y_max.log10())
    } else {
        (y_min, y_max)
    };
    let span = (t_max - t_min).max(1e-12);

    let px = |k: usize| MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) * k as f64 / (x_max.max(2) - 1) as f64;
    let py = |v: f64| {
        let t = if log_y { v.log10() } else { v };
        HEIGHT - MARGIN_B - (HEIGHT - MARGIN_T - MARGIN_B) * (t - t_min) / span
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));

    // Axes and ticks.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    for i in 0..=4 {
        let t = t_min + span * i as f64 / 4.0;
        let v = if log_y { 10f64.powf(t) } else { t };
        let y = py(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{MARGIN_L}\" y2=\"{y}\" stroke=\"black\"/>\n",
            MARGIN_L - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.2e}</text>\n",
            MARGIN_L - 8.0,
            y + 4.0,
            v
        ));
        let k = ((x_max.max(2) - 1) * i) / 4;
        let x = px(k);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 18.0,
            k + 1
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">iteration</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        xml_escape(y_label)
    ));

    // Series.
    for s in series {
        let color = PALETTE[s.color_index % PALETTE.len()];
        let opacity = if s.faded { 0.25 } else { 1.0 };
        let mut path = String::new();
        let mut pen_down = false;
        for (k, &v) in s.values.iter().enumerate() {
            if !v.is_finite() || (log_y && v <= 0.0) {
                pen_down = false;
                continue;
            }
            let cmd = if pen_down { 'L' } else { 'M' };
            path.push_str(&format!("{}{:.2},{:.2} ", cmd, px(k), py(v)));
            pen_down = true;
        }
        svg.push_str(&format!(
            "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-opacity=\"{opacity}\" stroke-width=\"1.3\"/>\n"
        ));
    }

    // Legend for non-faded series.
    let mut ly = MARGIN_T + 6.0;
    for s in series.iter().filter(|s| !s.faded) {
        let color = PALETTE[s.color_index % PALETTE.len()];
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - 220.0,
            WIDTH - 196.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            WIDTH - 190.0,
            ly + 4.0,
            xml_escape(s.label)
        ));
        ly += 16.0;
    }

    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
