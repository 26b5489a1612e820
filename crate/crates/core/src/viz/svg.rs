use std::fmt::Write as _;

use super::{Axis, LineStyle, Marker, PlotData};

#[derive(Debug, Clone, PartialEq)]
pub struct SvgStyle {
    pub width: f64,
    pub height: f64,
    pub font_size: f64,
    pub point_radius: f64,
    /// Room on the right for the legend.
    pub legend_width: f64,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self {
            width: 760.0,
            height: 540.0,
            font_size: 12.0,
            point_radius: 3.5,
            legend_width: 150.0,
        }
    }
}

const LEFT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn px(&self, a: &Axis, x: f64) -> f64 {
        self.x0 + (x - a.min) / (a.max - a.min) * self.w
    }

    fn py(&self, a: &Axis, y: f64) -> f64 {
        self.y0 + self.h - (y - a.min) / (a.max - a.min) * self.h
    }
}

fn dash(style: LineStyle) -> &'static str {
    match style {
        LineStyle::Solid => "",
        LineStyle::Dashed => r#" stroke-dasharray="6 4""#,
        LineStyle::DashDot => r#" stroke-dasharray="8 3 2 3""#,
    }
}

/// Standalone SVG 1.1 document. Identical input gives identical bytes.
pub fn render_svg(pd: &PlotData, style: &SvgStyle) -> String {
    let f = Frame {
        x0: LEFT,
        y0: TOP,
        w: (style.width - LEFT - style.legend_width).max(10.0),
        h: (style.height - TOP - BOTTOM).max(10.0),
    };
    let (xa, ya) = (&pd.x_axis, &pd.y_axis);
    let fs = style.font_size;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="{fs}" data-kind="{kind}">"#,
        w = style.width,
        h = style.height,
        kind = pd.kind.as_str()
    );
    let _ = writeln!(s, "<title>{}</title>", esc(&pd.title));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-size="{}">{}</text>"#,
        f.x0 + f.w / 2.0,
        TOP - 14.0,
        fs + 2.0,
        esc(&pd.title)
    );
    let _ = writeln!(
        s,
        r#"<defs><clipPath id="plot-area"><rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}"/></clipPath></defs>"#,
        f.x0, f.y0, f.w, f.h
    );

    // axes
    let _ = writeln!(s, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(
        s,
        r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}"/>"#,
        f.x0, f.y0, f.w, f.h
    );
    for (v, _) in &xa.ticks {
        let x = f.px(xa, *v);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.3}" y1="{:.3}" x2="{x:.3}" y2="{:.3}"/>"#,
            f.y0 + f.h,
            f.y0 + f.h + 5.0
        );
    }
    for (v, _) in &ya.ticks {
        let y = f.py(ya, *v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.3}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}"/>"#,
            f.x0 - 5.0,
            f.x0
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="tick-labels" fill="black">"#);
    for (v, label) in &xa.ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
            f.px(xa, *v),
            f.y0 + f.h + 8.0 + fs,
            esc(label)
        );
    }
    for (v, label) in &ya.ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{}</text>"#,
            f.x0 - 8.0,
            f.py(ya, *v) + fs / 3.0,
            esc(label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
        f.x0 + f.w / 2.0,
        style.height - 12.0,
        esc(&xa.label)
    );
    let (lx, ly) = (18.0, f.y0 + f.h / 2.0);
    let _ = writeln!(
        s,
        r#"<text x="{lx:.3}" y="{ly:.3}" text-anchor="middle" transform="rotate(-90 {lx:.3} {ly:.3})">{}</text>"#,
        esc(&ya.label)
    );
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="data" clip-path="url(#plot-area)">"#);
    for r in &pd.rects {
        let (xa0, xa1) = (f.px(xa, r.x), f.px(xa, r.x + r.width));
        let (ya0, ya1) = (f.py(ya, r.y), f.py(ya, r.y + r.height));
        let label = r
            .label
            .as_deref()
            .map(|l| format!(r#" data-label="{}""#, esc(l)))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            r#"<rect class="cell" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}" stroke="white" stroke-width="0.5"{label}/>"#,
            xa0.min(xa1),
            ya0.min(ya1),
            (xa1 - xa0).abs(),
            (ya1 - ya0).abs(),
            r.color.hex()
        );
    }
    for c in &pd.curves {
        let mut d = String::new();
        for (k, &(x, y)) in c.points.iter().enumerate() {
            let cmd = if k == 0 || (c.segments && k % 2 == 0) { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{:.3} {:.3} ", f.px(xa, x), f.py(ya, y));
        }
        let _ = writeln!(
            s,
            r#"<path class="curve" d="{}" fill="none" stroke="{}" stroke-width="1.5"{}/>"#,
            d.trim_end(),
            c.color.hex(),
            dash(c.style)
        );
    }
    let r = style.point_radius;
    for p in &pd.points {
        let (x, y) = (f.px(xa, p.x), f.py(ya, p.y));
        let stroke = if p.border {
            r#" stroke="black" stroke-width="1.5""#
        } else {
            r#" stroke="none""#
        };
        let title = p
            .label
            .as_deref()
            .map(|l| format!("<title>{}</title>", esc(l)))
            .unwrap_or_default();
        let shape = match p.marker {
            Marker::Circle => format!(r#"<circle cx="{x:.3}" cy="{y:.3}" r="{r}""#),
            Marker::Diamond => format!(
                r#"<polygon points="{:.3},{y:.3} {x:.3},{:.3} {:.3},{y:.3} {x:.3},{:.3}""#,
                x - 1.3 * r,
                y - 1.3 * r,
                x + 1.3 * r,
                y + 1.3 * r
            ),
        };
        if title.is_empty() {
            let _ = writeln!(s, r#"{shape} class="point" fill="{}"{stroke}/>"#, p.color.hex());
        } else {
            let _ = writeln!(
                s,
                r#"{shape} class="point" fill="{}"{stroke}>{title}</{}>"#,
                p.color.hex(),
                if p.marker == Marker::Circle { "circle" } else { "polygon" }
            );
        }
    }
    let _ = writeln!(s, "</g>");

    if !pd.annotations.is_empty() {
        let _ = writeln!(s, r#"<g class="annotations" fill="black">"#);
        for a in &pd.annotations {
            let _ = writeln!(
                s,
                r#"<text x="{:.3}" y="{:.3}">{}</text>"#,
                f.px(xa, a.x),
                f.py(ya, a.y),
                esc(&a.text)
            );
        }
        let _ = writeln!(s, "</g>");
    }

    if !pd.legend.is_empty() {
        let _ = writeln!(s, r#"<g class="legend">"#);
        let lx = f.x0 + f.w + 16.0;
        for (k, e) in pd.legend.iter().enumerate() {
            let y = f.y0 + 10.0 + k as f64 * (fs + 8.0);
            let swatch = match e.marker {
                Marker::Circle => format!(r#"<circle cx="{:.3}" cy="{y:.3}" r="{r}""#, lx + 5.0),
                Marker::Diamond => format!(
                    r#"<polygon points="{:.3},{y:.3} {:.3},{:.3} {:.3},{y:.3} {:.3},{:.3}""#,
                    lx,
                    lx + 5.0,
                    y - 5.0,
                    lx + 10.0,
                    lx + 5.0,
                    y + 5.0
                ),
            };
            let _ = writeln!(s, r#"{swatch} fill="{}"/>"#, e.color.hex());
            let _ = writeln!(
                s,
                r#"<text x="{:.3}" y="{:.3}">{}</text>"#,
                lx + 16.0,
                y + fs / 3.0,
                esc(&e.label)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    if !pd.warnings.is_empty() {
        let _ = writeln!(s, "<desc>{}</desc>", esc(&pd.warnings.join("; ")));
    }
    s.push_str("</svg>\n");
    s
}
