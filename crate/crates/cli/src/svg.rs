//! Minimal grouped bar charts as standalone SVG documents.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 56.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 64.0;
const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

#[derive(Clone, Debug, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    /// One label per bar within a group; drawn as a legend when more than one.
    pub series: Vec<String>,
    /// `(group label, one value per series)`.
    pub groups: Vec<(String, Vec<f64>)>,
    /// Fixed axis maximum; the largest value when `None`.
    pub y_max: Option<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl BarChart {
    pub fn single(title: &str, y_label: &str, bars: Vec<(String, f64)>) -> Self {
        Self {
            title: title.to_string(),
            y_label: y_label.to_string(),
            series: vec![y_label.to_string()],
            groups: bars.into_iter().map(|(l, v)| (l, vec![v])).collect(),
            y_max: None,
        }
    }

    pub fn render(&self) -> String {
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let data_max = self
            .groups
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        let y_max = self.y_max.unwrap_or(data_max).max(f64::MIN_POSITIVE);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let base = MARGIN_TOP + plot_h;
        for tick in 0..=4 {
            let v = y_max * tick as f64 / 4.0;
            let y = base - plot_h * tick as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                MARGIN_LEFT + plot_w,
                MARGIN_LEFT - 6.0,
                y + 4.0,
                format_tick(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text transform="translate(14 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + plot_h / 2.0,
            escape(&self.y_label)
        );
        let n_groups = self.groups.len().max(1) as f64;
        let group_w = plot_w / n_groups;
        let n_series = self.series.len().max(1) as f64;
        let bar_w = group_w * 0.8 / n_series;
        for (g, (label, values)) in self.groups.iter().enumerate() {
            let x0 = MARGIN_LEFT + group_w * g as f64 + group_w * 0.1;
            for (i, v) in values.iter().enumerate() {
                let v = if v.is_finite() { v.max(0.0) } else { 0.0 };
                let h = plot_h * (v / y_max).min(1.0);
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"><title>{}: {v}</title></rect>"#,
                    x0 + bar_w * i as f64,
                    base - h,
                    bar_w,
                    PALETTE[i % PALETTE.len()],
                    escape(self.series.get(i).map_or("", String::as_str))
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x0 + group_w * 0.4,
                base + 18.0,
                escape(label)
            );
        }
        let _ = writeln!(
            s,
            r#"<line x1="{MARGIN_LEFT}" y1="{base}" x2="{:.1}" y2="{base}" stroke="black"/>"#,
            MARGIN_LEFT + plot_w
        );
        if self.series.len() > 1 {
            for (i, name) in self.series.iter().enumerate() {
                let x = MARGIN_LEFT + 110.0 * i as f64;
                let y = HEIGHT - 18.0;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
                    y - 9.0,
                    PALETTE[i % PALETTE.len()],
                    x + 14.0,
                    escape(name)
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn format_tick(v: f64) -> String {
    if v >= 10.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_rect_per_value_and_escapes_labels() {
        let chart = BarChart {
            title: "a <b>".into(),
            y_label: "w".into(),
            series: vec!["s1".into(), "s2".into()],
            groups: vec![("g&1".into(), vec![0.5, 0.25]), ("g2".into(), vec![1.0, 0.0])],
            y_max: Some(1.0),
        };
        let svg = chart.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<title>").count(), 4);
        assert!(svg.contains("a &lt;b&gt;") && svg.contains("g&amp;1"));
        assert!(svg.contains(r#"height="128.0""#), "a 0.5 bar is half the 256px plot height\n{svg}");
    }

    #[test]
    fn empty_and_zero_charts_render() {
        let svg = BarChart::single("t", "count", vec![]).render();
        assert!(svg.contains("</svg>"));
        let zero = BarChart::single("t", "count", vec![("a".into(), 0.0)]).render();
        assert!(zero.contains(r#"height="0.0""#));
    }
}
