//! Plain-text SVG charts.

use std::fmt::Write;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// White-to-blue ramp over `[lo, hi]`.
fn color(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(255.0, 8.0), mix(255.0, 48.0), mix(255.0, 107.0))
}

/// A labeled matrix. Cells carry their value as text so the picture can be
/// checked without rendering it.
pub fn heatmap(title: &str, rows: &[String], cols: &[String], values: &[Vec<f64>], range: (f64, f64)) -> String {
    const CELL: usize = 28;
    let left = 12 + 8 * rows.iter().map(String::len).max().unwrap_or(0);
    let top = 40 + 7 * cols.iter().map(String::len).max().unwrap_or(0);
    let width = left + CELL * cols.len() + 20;
    let height = top + CELL * rows.len() + 20;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="16" font-size="13">{}</text>"#, left, escape(title));
    for (c, label) in cols.iter().enumerate() {
        let x = left + c * CELL + CELL / 2;
        let y = top - 6;
        let _ = writeln!(
            s,
            r#"<text class="col-label" x="{x}" y="{y}" transform="rotate(-60 {x} {y})">{}</text>"#,
            escape(label)
        );
    }
    for (r, label) in rows.iter().enumerate() {
        let y = top + r * CELL;
        let _ = writeln!(
            s,
            r#"<text class="row-label" x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6,
            y + CELL / 2 + 4,
            escape(label)
        );
        for (c, &v) in values[r].iter().enumerate() {
            let x = left + c * CELL;
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" data-row="{r}" data-col="{c}" data-value="{v:.6}"><title>{} / {}: {v:.4}</title></rect>"#,
                color(v, range.0, range.1),
                escape(label),
                escape(&cols[c])
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Optional half-width of a shaded band around each point.
    pub band: Option<Vec<f64>>,
    pub color: &'static str,
    pub dashed: bool,
}

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Line chart with axes, ticks and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (60.0, 170.0, 34.0, 44.0);
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let xmin = pts().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = pts().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for (i, p) in s.points.iter().enumerate() {
            let b = s.band.as_ref().map_or(0.0, |b| b[i]);
            ymin = ymin.min(p.1 - b);
            ymax = ymax.max(p.1 + b);
        }
    }
    if !xmin.is_finite() {
        (ymin, ymax) = (0.0, 1.0);
    }
    let (xmin, xmax) = if xmin.is_finite() && xmax > xmin { (xmin, xmax) } else { (0.0, xmax.max(1.0)) };
    let (ymin, ymax) = if ymax > ymin { (ymin, ymax) } else { (ymin - 0.5, ymin + 0.5) };
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<text x="{ml}" y="20" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = xmin + f * (xmax - xmin);
        let yv = ymin + f * (ymax - ymin);
        let _ = writeln!(
            s,
            r#"<text class="x-tick" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            h - mb + 16.0,
            trim_num(xv)
        );
        let _ = writeln!(
            s,
            r#"<text class="y-tick" x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            ml - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        h - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        if let Some(band) = &ser.band {
            let upper = ser.points.iter().zip(band).map(|(p, b)| format!("{:.2},{:.2}", sx(p.0), sy(p.1 + b)));
            let lower = ser.points.iter().zip(band).rev().map(|(p, b)| format!("{:.2},{:.2}", sx(p.0), sy(p.1 - b)));
            let _ = writeln!(
                s,
                r#"<polygon class="band" points="{}" fill="{}" fill-opacity="0.18" stroke="none"/>"#,
                upper.chain(lower).collect::<Vec<_>>().join(" "),
                ser.color
            );
        }
        let path: Vec<String> = ser.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let dash = if ser.dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline class="series" points="{}" fill="none" stroke="{}" stroke-width="1.6"{dash}><title>{}</title></polyline>"#,
            path.join(" "),
            ser.color,
            escape(&ser.label)
        );
        let ly = mt + 12.0 + 16.0 * k as f64;
        let lx = w - mr + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/><text class="legend" x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            ser.color,
            lx + 24.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn trim_num(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_has_labels_and_cells() {
        let svg = heatmap(
            "t<1>",
            &["a".into(), "b".into()],
            &["x".into()],
            &[vec![0.0], vec![1.0]],
            (0.0, 1.0),
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("t&lt;1&gt;"));
        assert_eq!(svg.matches("class=\"cell\"").count(), 2);
        assert_eq!(svg.matches("class=\"row-label\"").count(), 2);
        assert!(svg.contains("data-value=\"1.000000\""));
        assert!(svg.contains("fill=\"#ffffff\""));
    }

    #[test]
    fn chart_is_deterministic() {
        let series = vec![Series {
            label: "s".into(),
            points: vec![(1.0, 0.5), (2.0, 0.7)],
            band: Some(vec![0.1, 0.0]),
            color: PALETTE[0],
            dashed: false,
        }];
        let a = line_chart("c", "step", "acc", &series);
        assert_eq!(a, line_chart("c", "step", "acc", &series));
        assert_eq!(a.matches("class=\"series\"").count(), 1);
        assert_eq!(a.matches("class=\"band\"").count(), 1);
    }

    #[test]
    fn chart_survives_empty_and_flat_input() {
        assert!(line_chart("e", "x", "y", &[]).ends_with("</svg>\n"));
        let flat = vec![Series {
            label: "f".into(),
            points: vec![(5.0, 0.3)],
            band: None,
            color: PALETTE[1],
            dashed: true,
        }];
        assert!(!line_chart("f", "x", "y", &flat).contains("NaN"));
    }
}
