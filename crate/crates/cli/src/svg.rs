//! Static SVG scatter plots: memory on x, accuracy on y, frontier points
//! starred, baseline accuracy drawn as a horizontal line.

pub struct PlotPoint {
    pub mem_bytes: u64,
    pub accuracy: f64,
    pub on_frontier: bool,
    pub name: String,
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

fn fmt_bytes(b: f64) -> String {
    if b >= 1e9 {
        format!("{:.2} GB", b / 1e9)
    } else if b >= 1e6 {
        format!("{:.1} MB", b / 1e6)
    } else if b >= 1e3 {
        format!("{:.0} kB", b / 1e3)
    } else {
        format!("{b:.0} B")
    }
}

fn star_path(cx: f64, cy: f64, r: f64) -> String {
    let mut d = String::new();
    for i in 0..10 {
        let angle = std::f64::consts::PI * (i as f64 / 5.0) - std::f64::consts::FRAC_PI_2;
        let radius = if i % 2 == 0 { r } else { r * 0.45 };
        let (x, y) = (cx + radius * angle.cos(), cy + radius * angle.sin());
        d.push(if i == 0 { 'M' } else { 'L' });
        d.push_str(&format!("{x:.2} {y:.2} "));
    }
    d.push('Z');
    d
}

/// Render a memory/accuracy scatter. Every point gets one circle marker;
/// frontier members get a star overlay.
pub fn scatter_svg(points: &[PlotPoint], baseline_accuracy: Option<f64>, log_x: bool) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;

    let mems: Vec<f64> = points.iter().map(|p| p.mem_bytes.max(1) as f64).collect();
    let (mut lo, mut hi) = mems.iter().fold((f64::MAX, f64::MIN), |(a, b), &m| {
        (a.min(m), b.max(m))
    });
    if points.is_empty() {
        lo = 1.0;
        hi = 10.0;
    }
    if lo == hi {
        lo *= 0.9;
        hi *= 1.1;
    }
    let (tlo, thi) = if log_x {
        (lo.ln(), hi.ln())
    } else {
        (lo, hi)
    };
    let span = (thi - tlo).max(f64::MIN_POSITIVE);
    let x_of = |mem: f64| {
        let t = if log_x { mem.ln() } else { mem };
        MARGIN_LEFT + (t - tlo) / span * plot_w
    };
    let y_of = |acc: f64| MARGIN_TOP + (1.05 - acc) / 1.05 * plot_h;

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">Total memory vs task accuracy</text>\n",
        WIDTH / 2.0
    ));

    // Axes
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    s.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    s.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=5 {
        let f = f64::from(i) / 5.0;
        let t = tlo + f * span;
        let mem = if log_x { t.exp() } else { t };
        let x = x_of(mem);
        s.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{y0}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            y0 + 20.0,
            fmt_bytes(mem)
        ));
        let acc = f * 1.05;
        let y = y_of(acc);
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{x0}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{acc:.2}</text>\n",
            x0 - 9.0,
            y + 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">total memory{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 18.0,
        if log_x { " (log scale)" } else { "" }
    ));
    s.push_str(&format!(
        "<text x=\"20\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.1})\">accuracy</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));

    if let Some(acc) = baseline_accuracy {
        let y = y_of(acc);
        s.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y:.1}\" x2=\"{x1}\" y2=\"{y:.1}\" stroke=\"#888888\" stroke-dasharray=\"6 4\"/>\n"
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#555555\">baseline {acc:.3}</text>\n",
            x0 + 6.0,
            y - 5.0
        ));
    }

    for p in points {
        let x = x_of(p.mem_bytes.max(1) as f64);
        let y = y_of(p.accuracy);
        s.push_str(&format!(
            "<circle class=\"pt\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"#3465a4\" fill-opacity=\"0.7\"><title>{}</title></circle>\n",
            p.name
        ));
        if p.on_frontier {
            s.push_str(&format!(
                "<path class=\"star\" d=\"{}\" fill=\"#cc8800\" stroke=\"#7a5200\"/>\n",
                star_path(x, y, 9.0)
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}
