//! Static SVG plots: metric boxplots and a 2-D feature scatter.

use std::fmt::Write;

use ftseg::metrics::MetricReport;
use ndarray::Array2;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>\n",
        W / 2.0
    )
}

/// One box per metric on a shared `[0, 1]` axis, with Tukey whiskers,
/// outliers as dots and the mean with its 95% interval as a diamond and bar.
pub fn boxplot(report: &MetricReport) -> String {
    let mut s = header("Per-slice metrics");
    let y = |v: f64| H - PAD - v.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let _ = writeln!(
            s,
            "<line x1=\"{PAD}\" x2=\"{}\" y1=\"{y:.2}\" y2=\"{y:.2}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{v:.1}</text>",
            W - PAD / 2.0,
            PAD - 4.0,
            y(v) + 4.0,
            y = y(v)
        );
    }
    let n = report.boxplot.len().max(1) as f64;
    let slot = (W - 1.5 * PAD) / n;
    for (k, (name, b)) in report.boxplot.iter().enumerate() {
        let cx = PAD + slot * (k as f64 + 0.5);
        let half = slot * 0.2;
        let _ = writeln!(
            s,
            "<line x1=\"{cx:.2}\" x2=\"{cx:.2}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            y(b.whisker_lo),
            y(b.whisker_hi)
        );
        for wv in [b.whisker_lo, b.whisker_hi] {
            let _ = writeln!(
                s,
                "<line x1=\"{:.2}\" x2=\"{:.2}\" y1=\"{yy:.2}\" y2=\"{yy:.2}\" stroke=\"black\"/>",
                cx - half / 2.0,
                cx + half / 2.0,
                yy = y(wv)
            );
        }
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#9ecae1\" stroke=\"black\"/>",
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" x2=\"{:.2}\" y1=\"{ym:.2}\" y2=\"{ym:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
            cx - half,
            cx + half,
            ym = y(b.median)
        );
        for o in &b.outliers {
            let _ = writeln!(s, "<circle cx=\"{cx:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"none\" stroke=\"black\"/>", y(*o));
        }
        if let Some(a) = report.aggregate.get(name) {
            let mx = cx + half + 10.0;
            let _ = writeln!(
                s,
                "<line x1=\"{mx:.2}\" x2=\"{mx:.2}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"#d62728\"/>\
                 <path d=\"M {mx:.2} {my:.2} m -4 0 l 4 -4 l 4 4 l -4 4 z\" fill=\"#d62728\"/>",
                y(a.mean - a.ci95_half_width),
                y(a.mean + a.ci95_half_width),
                my = y(a.mean)
            );
        }
        let _ = writeln!(s, "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{name}</text>", H - PAD / 2.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Source points in blue, target points in orange.
pub fn scatter(a: &Array2<f64>, b: &Array2<f64>, separation: f64) -> String {
    let mut s = header(&format!("Feature projection (separation {separation:.3})"));
    let all = a.rows().into_iter().chain(b.rows());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in all {
        x0 = x0.min(r[0]);
        x1 = x1.max(r[0]);
        y0 = y0.min(r[1]);
        y1 = y1.max(r[1]);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(x0, x1), span(y0, y1));
    let px = |v: f64| PAD + (v - x0) / sx * (W - 2.0 * PAD);
    let py = |v: f64| H - PAD - (v - y0) / sy * (H - 2.0 * PAD);
    let _ = writeln!(
        s,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (pts, color) in [(a, "#1f77b4"), (b, "#ff7f0e")] {
        for r in pts.rows() {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.7\"/>",
                px(r[0]),
                py(r[1])
            );
        }
    }
    let _ = writeln!(
        s,
        "<circle cx=\"{x}\" cy=\"{y}\" r=\"4\" fill=\"#1f77b4\"/><text x=\"{}\" y=\"{}\">source</text>\
         <circle cx=\"{}\" cy=\"{y}\" r=\"4\" fill=\"#ff7f0e\"/><text x=\"{}\" y=\"{}\">target</text>",
        PAD + 8.0,
        H - 10.0 + 4.0,
        PAD + 80.0,
        PAD + 88.0,
        H - 10.0 + 4.0,
        x = PAD,
        y = H - 10.0
    );
    s.push_str("</svg>\n");
    s
}
