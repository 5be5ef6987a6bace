//! Dependency-free SVG emission: multi-series line charts for distance and
//! velocity curves, and a scatter chart for the kernel-path embedding where
//! darker markers mean later iterations.

use entk::{Error, Result};
use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

struct Bounds {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Bounds {
    fn of(points: impl Iterator<Item = (f64, f64)>) -> Bounds {
        let mut b = Bounds {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for (x, y) in points {
            b.x0 = b.x0.min(x);
            b.x1 = b.x1.max(x);
            b.y0 = b.y0.min(y);
            b.y1 = b.y1.max(y);
        }
        if b.x0 == b.x1 {
            b.x0 -= 0.5;
            b.x1 += 0.5;
        }
        if b.y0 == b.y1 {
            b.y0 -= 0.5;
            b.y1 += 0.5;
        }
        b
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn header(hash: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <!-- config={hash} -->\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    )
}

fn axes(out: &mut String, b: &Bounds, title: &str, x_label: &str, y_label: &str) {
    let (left, right) = (MARGIN_L, WIDTH - MARGIN_R);
    let (top, bottom) = (MARGIN_T, HEIGHT - MARGIN_B);
    let _ = writeln!(
        out,
        "<line x1=\"{left}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{bottom}\" stroke=\"black\"/>\n\
         <line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{bottom}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{}</text>",
        (left + right) / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\">{}</text>",
        (left + right) / 2.0,
        HEIGHT - 16.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\" transform=\"rotate(-90 18 {:.1})\">{}</text>",
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        xml_escape(y_label)
    );
    // Five ticks per axis.
    for i in 0..=4 {
        let fx = b.x0 + (b.x1 - b.x0) * i as f64 / 4.0;
        let px = b.px(fx);
        let _ = writeln!(
            out,
            "<line x1=\"{px:.1}\" y1=\"{bottom}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"10\">{}</text>",
            bottom + 6.0,
            bottom + 20.0,
            tick_label(fx)
        );
        let fy = b.y0 + (b.y1 - b.y0) * i as f64 / 4.0;
        let py = b.py(fy);
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{left}\" y2=\"{py:.1}\" stroke=\"black\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"10\">{}</text>",
            left - 6.0,
            left - 9.0,
            py + 3.0,
            tick_label(fy)
        );
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Multi-series line chart with a legend. Empty input (or an empty series)
/// is a usage error.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    hash: &str,
) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::Usage("cannot plot empty series".into()));
    }
    let b = Bounds::of(series.iter().flat_map(|s| s.points.iter().copied()));
    let mut out = header(hash);
    axes(&mut out, &b, title, x_label, y_label);

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            let _ = writeln!(
                out,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"{color}\"/>",
                b.px(x),
                b.py(y)
            );
        } else {
            let path: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.1},{:.1}", b.px(x), b.py(y)))
                .collect();
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>",
                path.join(" ")
            );
        }
        // Legend entry.
        let ly = MARGIN_T + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            xml_escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Scatter chart of the kernel-path embedding; markers darken with the
/// iteration and iteration 0 is drawn as a distinct black dot.
pub fn embedding_chart(title: &str, points: &[(u64, f64, f64)], hash: &str) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Usage("cannot plot an empty embedding".into()));
    }
    let b = Bounds::of(points.iter().map(|&(_, x, y)| (x, y)));
    let mut out = header(hash);
    axes(&mut out, &b, title, "dim 1", "dim 2");
    let t_max = points.iter().map(|p| p.0).max().unwrap_or(0).max(1) as f64;
    for &(t, x, y) in points {
        let frac = t as f64 / t_max;
        let shade = (210.0 - 190.0 * frac) as u8;
        if t == 0 {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"5\" fill=\"black\"/>",
                b.px(x),
                b.py(y)
            );
        } else {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"rgb({shade},{shade},{shade})\"/>",
                b.px(x),
                b.py(y)
            );
        }
    }
    // Legend: early vs late shading.
    let lx = WIDTH - MARGIN_R + 12.0;
    let _ = writeln!(
        out,
        "<circle cx=\"{lx:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"black\"/>\
         <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">iteration 0</text>\n\
         <circle cx=\"{lx:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"rgb(210,210,210)\"/>\
         <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">early</text>\n\
         <circle cx=\"{lx:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"rgb(20,20,20)\"/>\
         <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">late</text>",
        MARGIN_T,
        lx + 12.0,
        MARGIN_T + 4.0,
        MARGIN_T + 18.0,
        lx + 12.0,
        MARGIN_T + 22.0,
        MARGIN_T + 36.0,
        lx + 12.0,
        MARGIN_T + 40.0,
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Minimal well-formedness check used by tests: every open tag is closed in
/// order and the document has one root.
#[cfg(test)]
pub fn xml_well_formed(doc: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0usize;
    let mut rest = doc;
    while let Some(start) = rest.find('<') {
        let Some(end_rel) = rest[start..].find('>') else {
            return false;
        };
        let tag = &rest[start + 1..start + end_rel];
        rest = &rest[start + end_rel + 1..];
        if tag.starts_with('?') || tag.starts_with("!--") {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name.trim() => {
                    if stack.is_empty() {
                        roots += 1;
                    }
                }
                _ => return false,
            }
        } else if tag.ends_with('/') {
            if stack.is_empty() {
                roots += 1;
            }
        } else {
            let name = tag.split_whitespace().next().unwrap_or("").to_string();
            if name.is_empty() {
                return false;
            }
            stack.push(name);
        }
    }
    stack.is_empty() && roots >= 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_series_renders_a_marker() {
        let s = [Series {
            label: "only".into(),
            points: vec![(3.0, 0.5)],
        }];
        let doc = line_chart("t", "x", "y", &s, "abcd").unwrap();
        assert!(doc.contains("<circle"));
        assert!(xml_well_formed(&doc));
    }

    #[test]
    fn two_series_get_two_legend_entries() {
        let s = [
            Series {
                label: "tau=10".into(),
                points: vec![(0.0, 0.1), (1.0, 0.2)],
            },
            Series {
                label: "tau=20".into(),
                points: vec![(0.0, 0.3), (1.0, 0.4)],
            },
        ];
        let doc = line_chart("t", "x", "y", &s, "abcd").unwrap();
        assert!(doc.contains("tau=10"));
        assert!(doc.contains("tau=20"));
        assert_eq!(doc.matches("<polyline").count(), 2);
        assert!(xml_well_formed(&doc));
    }

    #[test]
    fn empty_series_is_a_usage_error() {
        assert!(line_chart("t", "x", "y", &[], "h").is_err());
        let s = [Series {
            label: "e".into(),
            points: vec![],
        }];
        assert!(line_chart("t", "x", "y", &s, "h").is_err());
        assert!(embedding_chart("t", &[], "h").is_err());
    }

    #[test]
    fn embedding_chart_darkens_with_iteration_and_is_well_formed() {
        let pts = vec![(0u64, 0.0, 0.0), (50, 0.1, 0.05), (100, 0.2, 0.02)];
        let doc = embedding_chart("path", &pts, "ffff").unwrap();
        assert!(doc.contains("config=ffff"));
        assert!(xml_well_formed(&doc));
    }

    #[test]
    fn title_is_escaped() {
        let s = [Series {
            label: "a<b".into(),
            points: vec![(0.0, 1.0)],
        }];
        let doc = line_chart("x < y & z", "x", "y", &s, "h").unwrap();
        assert!(doc.contains("x &lt; y &amp; z"));
        assert!(doc.contains("a&lt;b"));
        assert!(xml_well_formed(&doc));
    }
}
