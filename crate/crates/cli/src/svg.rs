//! Minimal deterministic SVG rendering for ROC curves.

use sacropipe_core::stats::RocPoint;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;

fn x(fpr: f64) -> f64 {
    MARGIN + fpr * (SIZE - 2.0 * MARGIN)
}

fn y(tpr: f64) -> f64 {
    SIZE - MARGIN - tpr * (SIZE - 2.0 * MARGIN)
}

/// Render a ROC curve with the chance diagonal and axis labels.
pub fn roc_svg(title: &str, points: &[RocPoint], auc: f64) -> String {
    let mut path = String::new();
    for (i, p) in points.iter().enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        path.push_str(&format!("{cmd}{:.2},{:.2} ", x(p.fpr), y(p.tpr)));
    }
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" ",
            "viewBox=\"0 0 {s} {s}\">\n",
            "<rect width=\"{s}\" height=\"{s}\" fill=\"white\"/>\n",
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y1}\" ",
            "stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n",
            "<rect x=\"{m}\" y=\"{m}\" width=\"{w}\" height=\"{w}\" ",
            "fill=\"none\" stroke=\"black\"/>\n",
            "<path d=\"{path}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\"/>\n",
            "<text x=\"{tx}\" y=\"{ty}\" font-family=\"monospace\" font-size=\"14\" ",
            "text-anchor=\"middle\">{title} (AUC {auc:.3})</text>\n",
            "<text x=\"{tx}\" y=\"{bx}\" font-family=\"monospace\" font-size=\"12\" ",
            "text-anchor=\"middle\">false positive rate</text>\n",
            "<text x=\"14\" y=\"{tx}\" font-family=\"monospace\" font-size=\"12\" ",
            "text-anchor=\"middle\" transform=\"rotate(-90 14 {tx})\">",
            "true positive rate</text>\n",
            "</svg>\n"
        ),
        s = SIZE,
        m = MARGIN,
        w = SIZE - 2.0 * MARGIN,
        x0 = x(0.0),
        y0 = y(0.0),
        x1 = x(1.0),
        y1 = y(1.0),
        path = path.trim_end(),
        tx = SIZE / 2.0,
        ty = MARGIN - 16.0,
        bx = SIZE - 12.0,
        title = title,
        auc = auc,
    )
}
