//! Minimal static SVG charts for rankings and ROC curves.

use std::fmt::Write;

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal bars in the given order, with an optional dashed threshold line.
pub fn bar_chart(title: &str, bars: &[(String, f64)], threshold: Option<f64>) -> String {
    let (label_w, plot_w, row_h, top) = (180.0, 420.0, 16.0, 40.0);
    let height = top + row_h * bars.len() as f64 + 20.0;
    let max = bars
        .iter()
        .map(|b| b.1)
        .chain(threshold)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="11">"#,
        label_w + plot_w + 60.0
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    for (i, (name, v)) in bars.iter().enumerate() {
        let y = top + row_h * i as f64;
        let w = plot_w * v.max(0.0) / max;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text><rect x="{label_w}" y="{}" width="{w:.2}" height="{}" fill="{}"/><text x="{}" y="{}">{v:.4}</text>"#,
            label_w - 6.0,
            y + row_h * 0.75,
            escape(name),
            y + 2.0,
            row_h - 4.0,
            PALETTE[0],
            label_w + w + 4.0,
            y + row_h * 0.75,
        );
    }
    if let Some(t) = threshold {
        let x = label_w + plot_w * t.max(0.0) / max;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="{}" stroke-dasharray="4 3"/>"#,
            top - 4.0,
            height - 16.0,
            PALETTE[3]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline per class on the unit square, with the chance diagonal.
pub fn roc_chart(title: &str, curves: &[(String, Vec<(f64, f64)>)]) -> String {
    let (left, top, size) = (50.0, 40.0, 400.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        left + size + 180.0,
        top + size + 50.0
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{size}" height="{size}" fill="none" stroke="black"/><line x1="{left}" y1="{}" x2="{}" y2="{top}" stroke="grey" stroke-dasharray="4 3"/>"#,
        top + size,
        left + size
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">true positive rate</text>"#,
        left + size / 2.0,
        top + size + 30.0,
        top + size / 2.0,
        top + size / 2.0
    );
    for (i, (name, points)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", left + x * size, top + (1.0 - y) * size))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/><text x="{}" y="{}" fill="{color}">{}</text>"#,
            pts.join(" "),
            left + size + 12.0,
            top + 14.0 * (i as f64 + 1.0),
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let svg = bar_chart("a<b", &[("x".into(), 0.5), ("y".into(), 0.1)], Some(0.25));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<rect").count(), 2);
        let roc = roc_chart("roc", &[("c".into(), vec![(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)])]);
        assert_eq!(roc.matches("<polyline").count(), 1);
    }
}
