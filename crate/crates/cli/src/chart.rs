//! Minimal deterministic SVG charts for the result files.
//!
//! Rendering is pure string assembly with fixed dimensions, a fixed palette,
//! and two-decimal coordinates: the same inputs always produce the same
//! bytes, so charts can be diffed across runs.

/// One scored method with its confidence interval.
pub struct F1Bar {
    pub method: String,
    pub macro_f1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Recall of one (method, generator) pair.
pub struct RecallBar {
    pub method: String,
    pub generator: String,
    pub recall: f64,
}

/// One (group, fraction) cell of the confidence-probe sweep.
pub struct IntervalPoint {
    pub group: String,
    pub fraction: f64,
    pub normalized_confidence: f64,
    pub macro_f1: f64,
}

const PALETTE: &[&str] = &["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"];
const FONT: &str = "font-family=\"monospace\" font-size=\"12\"";

fn esc(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn f(v: f64) -> String {
    format!("{v:.2}")
}

/// Horizontal Macro-F1 bars with CI whiskers, one row per method.
pub fn f1_chart(bars: &[F1Bar]) -> String {
    const LABEL_W: f64 = 180.0;
    const SCALE: f64 = 400.0;
    const ROW_H: f64 = 28.0;
    const TOP: f64 = 30.0;
    let height = TOP + bars.len() as f64 * ROW_H + 30.0;
    let width = LABEL_W + SCALE + 120.0;

    let mut svg = svg_open(width, height, "Macro F1 with bootstrap confidence intervals");
    svg.push_str(&axis_line(LABEL_W, TOP, SCALE, height - 25.0));
    for (i, bar) in bars.iter().enumerate() {
        let y = TOP + i as f64 * ROW_H;
        let mid = y + ROW_H / 2.0;
        let x0 = LABEL_W;
        let w = bar.macro_f1.clamp(0.0, 1.0) * SCALE;
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>\n",
            f(LABEL_W - 8.0),
            f(mid + 4.0),
            esc(&bar.method)
        ));
        svg.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
            f(x0),
            f(y + 5.0),
            f(w),
            f(ROW_H - 10.0),
            PALETTE[i % PALETTE.len()]
        ));
        let lo = x0 + bar.ci_low.clamp(0.0, 1.0) * SCALE;
        let hi = x0 + bar.ci_high.clamp(0.0, 1.0) * SCALE;
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#222222\" stroke-width=\"1.5\"/>\n",
            f(lo), f(mid), f(hi), f(mid)
        ));
        for x in [lo, hi] {
            svg.push_str(&format!(
                "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#222222\" stroke-width=\"1.5\"/>\n",
                f(x), f(mid - 5.0), f(x), f(mid + 5.0)
            ));
        }
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" {FONT}>{}</text>\n",
            f(x0 + SCALE + 10.0),
            f(mid + 4.0),
            f(bar.macro_f1)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Horizontal recall bars, one row per (method, generator) pair.
pub fn recall_chart(bars: &[RecallBar]) -> String {
    const LABEL_W: f64 = 260.0;
    const SCALE: f64 = 360.0;
    const ROW_H: f64 = 22.0;
    const TOP: f64 = 30.0;
    let height = TOP + bars.len() as f64 * ROW_H + 30.0;
    let width = LABEL_W + SCALE + 100.0;

    let mut svg = svg_open(width, height, "Recall per generator");
    svg.push_str(&axis_line(LABEL_W, TOP, SCALE, height - 25.0));
    let mut color_idx = 0usize;
    let mut last_method = "";
    for (i, bar) in bars.iter().enumerate() {
        if i > 0 && bar.method != last_method {
            color_idx += 1;
        }
        last_method = &bar.method;
        let y = TOP + i as f64 * ROW_H;
        let mid = y + ROW_H / 2.0;
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>\n",
            f(LABEL_W - 8.0),
            f(mid + 4.0),
            esc(&format!("{} / {}", bar.method, bar.generator))
        ));
        svg.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
            f(LABEL_W),
            f(y + 4.0),
            f(bar.recall.clamp(0.0, 1.0) * SCALE),
            f(ROW_H - 8.0),
            PALETTE[color_idx % PALETTE.len()]
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" {FONT}>{}</text>\n",
            f(LABEL_W + SCALE + 10.0),
            f(mid + 4.0),
            f(bar.recall)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Confidence and Macro F1 against reasoning fraction, one pair of lines
/// per group (confidence solid, F1 dashed). Points must arrive sorted by
/// group then fraction.
pub fn interval_chart(points: &[IntervalPoint]) -> String {
    const LEFT: f64 = 60.0;
    const TOP: f64 = 30.0;
    const PLOT_W: f64 = 440.0;
    const PLOT_H: f64 = 260.0;

    let groups: Vec<&str> = {
        let mut seen = Vec::new();
        for p in points {
            if !seen.contains(&p.group.as_str()) {
                seen.push(p.group.as_str());
            }
        }
        seen
    };
    let width = LEFT + PLOT_W + 220.0;
    let height = TOP + PLOT_H + 60.0;

    let mut svg = svg_open(width, height, "Confidence and Macro F1 by reasoning fraction");
    // frame and gridlines at 0, 0.5, 1.0
    for frac in [0.0f64, 0.5, 1.0] {
        let y = TOP + PLOT_H - frac * PLOT_H;
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            f(LEFT),
            f(y),
            f(LEFT + PLOT_W),
            f(y)
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>\n",
            f(LEFT - 6.0),
            f(y + 4.0),
            f(frac)
        ));
    }
    for frac in [0.0f64, 0.25, 0.5, 0.75, 1.0] {
        let x = LEFT + frac * PLOT_W;
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\">{}</text>\n",
            f(x),
            f(TOP + PLOT_H + 18.0),
            f(frac)
        ));
    }

    for (gi, group) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let series: Vec<&IntervalPoint> = points.iter().filter(|p| p.group == *group).collect();
        let path = |pick: &dyn Fn(&IntervalPoint) -> f64| {
            series
                .iter()
                .map(|p| {
                    let x = LEFT + p.fraction.clamp(0.0, 1.0) * PLOT_W;
                    let y = TOP + PLOT_H - pick(p).clamp(0.0, 1.0) * PLOT_H;
                    format!("{},{}", f(x), f(y))
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        svg.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            path(&|p| p.normalized_confidence)
        ));
        svg.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" stroke-dasharray=\"5,4\"/>\n",
            path(&|p| p.macro_f1)
        ));
        let ly = TOP + 16.0 * gi as f64;
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" {FONT} fill=\"{color}\">{} (solid: confidence, dashed: F1)</text>\n",
            f(LEFT + PLOT_W + 12.0),
            f(ly + 10.0),
            esc(group)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn svg_open(width: f64, height: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n  <title>{}</title>\n  <rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n  <text x=\"10\" y=\"18\" {FONT} font-weight=\"bold\">{}</text>\n",
        f(width),
        f(height),
        f(width),
        f(height),
        esc(title),
        esc(title)
    )
}

fn axis_line(x: f64, top: f64, scale: f64, bottom: f64) -> String {
    let mut out = String::new();
    for tick in [0.0f64, 0.25, 0.5, 0.75, 1.0] {
        let tx = x + tick * scale;
        out.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            f(tx),
            f(top - 5.0),
            f(tx),
            f(bottom)
        ));
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\">{}</text>\n",
            f(tx),
            f(top - 10.0),
            f(tick)
        ));
    }
    out
}
