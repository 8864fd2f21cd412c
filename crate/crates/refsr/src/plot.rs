//! Minimal deterministic SVG bar charts.

use std::fmt::Write;

/// One bar per `(label, value)`; non-finite values are drawn as empty bars
/// labelled with their value.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (w, h, left, bottom, top) = (120.0 + 90.0 * bars.len().max(1) as f64, 300.0, 70.0, 40.0, 40.0);
    let max = bars.iter().map(|b| b.1).filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let max = if max > 0.0 { max * 1.1 } else { 1.0 };
    let plot_h = h - top - bottom;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">{}</text>"#, top + plot_h / 2.0, top + plot_h / 2.0, escape(y_label));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, h - bottom);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - bottom, w - 20.0, h - bottom);
    for k in 0..=4 {
        let v = max * k as f64 / 4.0;
        let y = h - bottom - plot_h * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, left - 5.0, y + 4.0, v);
    }
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = left + 20.0 + 90.0 * i as f64;
        let bh = if v.is_finite() { plot_h * (v.max(0.0) / max) } else { 0.0 };
        let _ = writeln!(s, r##"<rect x="{x}" y="{:.2}" width="60" height="{bh:.2}" fill="#4a78b0"/>"##, h - bottom - bh);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="middle">{}</text>"#, x + 30.0, h - bottom - bh - 4.0, fmt_value(*v));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, x + 30.0, h - bottom + 16.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        format!("{v}")
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_bar_per_entry_and_deterministic() {
        let bars = vec![("small".to_string(), 0.3), ("medium".into(), 0.6), ("large".into(), f64::INFINITY)];
        let a = bar_chart("AEE <by group>", "px", &bars);
        assert_eq!(a, bar_chart("AEE <by group>", "px", &bars));
        assert_eq!(a.matches("fill=\"#4a78b0\"").count(), 3);
        assert!(a.contains("&lt;by group&gt;") && a.contains(">inf<"));
    }
}
