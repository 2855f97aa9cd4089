use std::fmt::Write;

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG bar chart with one cluster per group and one bar per series, each bar
/// labelled with its value. `values[s][g]` is series `s` in group `g`;
/// `None` leaves a gap. The y axis spans `[0, 1]`.
pub fn render_grouped_bar_chart(title: &str, groups: &[String], series: &[String], values: &[Vec<Option<f64>>]) -> String {
    let bar_w = 28.0;
    let gap = 24.0;
    let (left, right, top, bottom) = (56.0, 24.0, 48.0, 72.0);
    let plot_h = 260.0;
    let cluster_w = bar_w * series.len().max(1) as f64 + gap;
    let width = left + right + cluster_w * groups.len().max(1) as f64;
    let height = top + plot_h + bottom;
    let y_of = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            width - right,
            left - 6.0,
            y + 4.0
        );
    }
    for (g, group) in groups.iter().enumerate() {
        let x0 = left + gap / 2.0 + cluster_w * g as f64;
        for (s, row) in values.iter().enumerate() {
            let Some(v) = row.get(g).copied().flatten() else {
                continue;
            };
            let x = x0 + bar_w * s as f64;
            let y = y_of(v);
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"/><text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{v:.2}</text>"#,
                bar_w - 2.0,
                top + plot_h - y,
                PALETTE[s % PALETTE.len()],
                x + (bar_w - 2.0) / 2.0,
                y - 3.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + bar_w * series.len() as f64 / 2.0,
            top + plot_h + 16.0,
            escape(group)
        );
    }
    for (s, name) in series.iter().enumerate() {
        let x = left + 110.0 * s as f64;
        let y = height - 20.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
            y - 9.0,
            PALETTE[s % PALETTE.len()],
            x + 14.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
