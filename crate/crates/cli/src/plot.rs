//! Privacy-utility curves as self-contained SVG and CSV.

use std::fmt::Write;

use alphami::experiments::{SweepResults, TradeoffPoint};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Successful points of one order, sorted by normalized error.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub alpha: f64,
    /// `(lambda, ne, attacker accuracy)`
    pub points: Vec<(f64, f64, f64)>,
}

/// Groups successful points by α (ascending) and sorts each group by NE.
/// Failed points are dropped.
pub fn curves(points: &[TradeoffPoint]) -> Vec<Curve> {
    let mut alphas: Vec<f64> = points
        .iter()
        .filter(|p| p.is_ok())
        .map(|p| p.alpha)
        .collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    alphas
        .into_iter()
        .map(|alpha| {
            let mut pts: Vec<(f64, f64, f64)> = points
                .iter()
                .filter(|p| p.is_ok() && p.alpha == alpha)
                .filter_map(|p| Some((p.lambda, p.ne?, p.attacker_balanced_accuracy?)))
                .collect();
            pts.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
            Curve { alpha, points: pts }
        })
        .collect()
}

pub fn curves_csv(curves: &[Curve]) -> String {
    let mut out = String::from("alpha,lambda,ne,attacker_balanced_accuracy\n");
    for c in curves {
        for (lambda, ne, acc) in &c.points {
            let _ = writeln!(out, "{},{},{},{}", c.alpha, lambda, ne, acc);
        }
    }
    out
}

/// Upper end of the NE axis: the largest NE rounded up to a tick-friendly value.
fn ne_extent(curves: &[Curve]) -> f64 {
    let max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1))
        .fold(0.0, f64::max);
    if max <= 0.0 {
        return 1.0;
    }
    let step = 10f64.powf((max / 5.0).log10().floor());
    let mut upper = step;
    for mult in [1.0, 2.0, 2.5, 5.0, 10.0] {
        upper = 5.0 * mult * step;
        if upper >= max {
            break;
        }
    }
    upper
}

/// Renders the curves: attacker accuracy against NE, one colour per order,
/// with a dashed reference line at accuracy 0.5. Curves holding a single
/// point get a marker only.
pub fn render_svg(curves: &[Curve]) -> String {
    let xmax = ne_extent(curves);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |ne: f64| LEFT + ne / xmax * plot_w;
    let sy = |acc: f64| TOP + (1.0 - acc.clamp(0.0, 1.0)) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let (x, y) = (sx(v * xmax), sy(v));
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{b2:.2}" stroke="black"/><text x="{x:.2}" y="{t:.2}" text-anchor="middle">{lab}</text>"#,
            b = TOP + plot_h,
            b2 = TOP + plot_h + 5.0,
            t = TOP + plot_h + 18.0,
            lab = trim(v * xmax)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{l1:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{t:.2}" y="{ty:.2}" text-anchor="end">{lab}</text>"#,
            l1 = LEFT - 5.0,
            t = LEFT - 8.0,
            ty = y + 4.0,
            lab = trim(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">normalized error</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y:.2}" text-anchor="middle" transform="rotate(-90 16 {y:.2})">attacker balanced accuracy</text>"#,
        y = TOP + plot_h / 2.0
    );
    let half = sy(0.5);
    let _ = writeln!(
        s,
        r##"<line class="reference" x1="{LEFT}" y1="{half:.2}" x2="{:.2}" y2="{half:.2}" stroke="#555555" stroke-dasharray="6 4"/>"##,
        LEFT + plot_w
    );

    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        if c.points.len() > 1 {
            let coords: Vec<String> = c
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.1), sy(p.2)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="curve" fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        for p in &c.points {
            let _ = writeln!(
                s,
                r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3.5" fill="{colour}"/>"#,
                sx(p.1),
                sy(p.2)
            );
        }
        let ly = TOP + 16.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            s,
            r#"<circle cx="{lx:.2}" cy="{:.2}" r="3.5" fill="{colour}"/><text x="{:.2}" y="{ly:.2}">alpha = {}</text>"#,
            ly - 4.0,
            lx + 10.0,
            c.alpha
        );
    }
    let ly = TOP + 16.0 + 18.0 * curves.len() as f64;
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#555555" stroke-dasharray="6 4"/><text x="{:.2}" y="{ly:.2}">full privacy</text>"##,
        WIDTH - RIGHT + 6.0,
        WIDTH - RIGHT + 22.0,
        WIDTH - RIGHT + 24.0,
        y = ly - 4.0
    );
    s.push_str("</svg>\n");
    s
}

fn trim(v: f64) -> String {
    let t = format!("{v:.3}");
    t.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Both plot artifacts for a results file. Errors when no point succeeded.
pub fn plot(results: &SweepResults) -> Result<(String, String), String> {
    let cs = curves(&results.points);
    if cs.is_empty() {
        return Err("results contain no successful points to plot".into());
    }
    Ok((render_svg(&cs), curves_csv(&cs)))
}
