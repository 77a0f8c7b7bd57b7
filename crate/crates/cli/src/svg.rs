//! Minimal hand-written SVG. Every coordinate is printed with two decimals
//! so the same inputs always give the same bytes.

use std::fmt::Write as _;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;

pub const REAL_COLOR: &str = "#1f77b4";
pub const SYNTH_COLOR: &str = "#ff7f0e";

/// Road classes: asphalt blue, cobblestone green, dirt red; anything else grey.
pub fn road_color(label: &str) -> &'static str {
    match label {
        "asphalt" => "#1f4fd8",
        "cobblestone" => "#2ca02c",
        "dirt" => "#d62728",
        _ => "#7f7f7f",
    }
}

pub fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn num(v: f64) -> String {
    format!("{v:.2}")
}

/// Tick label: up to 4 significant decimals, trailing zeros dropped.
pub fn tick(v: f64) -> String {
    let s = if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    };
    if s.contains('.') && !s.contains('e') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" {
            "0".into()
        } else {
            t.into()
        }
    } else {
        s
    }
}

/// Data rectangle `[x0, x1] x [y0, y1]` drawn into a pixel box.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Frame {
    /// Pads degenerate or non-finite ranges so the mapping stays finite.
    pub fn new(left: f64, top: f64, width: f64, height: f64, x: (f64, f64), y: (f64, f64)) -> Self {
        fn fix((a, b): (f64, f64)) -> (f64, f64) {
            if !a.is_finite() || !b.is_finite() {
                (0.0, 1.0)
            } else if b > a {
                (a, b)
            } else {
                let pad = a.abs().max(1.0) * 0.5;
                (a - pad, a + pad)
            }
        }
        Frame {
            left,
            top,
            width,
            height,
            x: fix(x),
            y: fix(y),
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) * self.width / (self.x.1 - self.x.0)
    }

    pub fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) * self.height / (self.y.1 - self.y.0)
    }

    fn describe(&self) -> String {
        format!(
            "px = {} + (x - {}) * {} / ({} - {}); py = {} - (y - {}) * {} / ({} - {})",
            num(self.left),
            self.x.0,
            num(self.width),
            self.x.1,
            self.x.0,
            num(self.top + self.height),
            self.y.0,
            num(self.height),
            self.y.1,
            self.y.0
        )
    }
}

pub fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub struct Svg {
    body: String,
}

impl Svg {
    pub fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 800 600" width="800" height="600" font-family="sans-serif">"#
        );
        let _ = writeln!(body, r#"<rect x="0" y="0" width="800" height="600" fill="white"/>"#);
        let mut s = Svg { body };
        s.text(WIDTH / 2.0, 28.0, title, "middle", 18.0);
        s
    }

    pub fn comment(&mut self, text: &str) {
        let _ = writeln!(self.body, "<!-- {} -->", text.replace("--", "- -"));
    }

    pub fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="{}">{}</text>"#,
            num(x),
            num(y),
            num(size),
            esc(s)
        );
    }

    fn vertical_text(&mut self, x: f64, y: f64, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{0}" y="{1}" text-anchor="middle" font-size="13.00" transform="rotate(-90 {0} {1})">{2}</text>"#,
            num(x),
            num(y),
            esc(s)
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: Option<&str>) {
        let stroke = stroke.map_or(String::new(), |c| format!(r#" stroke="{c}""#));
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}"{stroke}/>"#,
            num(x),
            num(y),
            num(w),
            num(h)
        );
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), color: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="{}"/>"#,
            num(a.0),
            num(a.1),
            num(b.0),
            num(b.1),
            num(width)
        );
    }

    /// Box, five ticks per axis and axis labels, plus the mapping comment.
    pub fn axes(&mut self, f: &Frame, x_label: &str, y_label: &str) {
        self.comment(&format!("data to viewport: {}", f.describe()));
        self.rect(f.left, f.top, f.width, f.height, "none", Some("#333333"));
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = f.x.0 + t * (f.x.1 - f.x.0);
            let yv = f.y.0 + t * (f.y.1 - f.y.0);
            let (px, py) = (f.px(xv), f.py(yv));
            let bottom = f.top + f.height;
            self.line((px, bottom), (px, bottom + 5.0), "#333333", 1.0);
            self.text(px, bottom + 18.0, &tick(xv), "middle", 11.0);
            self.line((f.left - 5.0, py), (f.left, py), "#333333", 1.0);
            self.text(f.left - 8.0, py + 4.0, &tick(yv), "end", 11.0);
        }
        self.text(f.left + f.width / 2.0, f.top + f.height + 40.0, x_label, "middle", 13.0);
        self.vertical_text(f.left - 55.0, f.top + f.height / 2.0, y_label);
    }

    pub fn polyline(&mut self, f: &Frame, xs: &[f64], ys: &[f64], color: &str, width: f64) {
        let mut pts = String::new();
        for (x, y) in xs.iter().zip(ys) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{},{} ", num(f.px(*x)), num(f.py(*y)));
            }
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{}"/>"#,
            pts.trim_end(),
            num(width)
        );
    }

    pub fn dot(&mut self, f: &Frame, x: f64, y: f64, r: f64, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="{}" fill="{color}" fill-opacity="0.6"/>"#,
            num(f.px(x)),
            num(f.py(y)),
            num(r)
        );
    }

    pub fn legend(&mut self, x: f64, y: f64, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let yy = y + i as f64 * 18.0;
            self.rect(x, yy - 10.0, 12.0, 12.0, color, None);
            self.text(x + 18.0, yy, label, "start", 12.0);
        }
    }

    pub fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Diverging fill for a value in [-1, 1]: blue for negative, red for positive.
pub fn diverging(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// White to dark blue for a share in [0, 1].
pub fn sequential(v: f64) -> String {
    let t = v.clamp(0.0, 1.0);
    let c = |from: f64, to: f64| (from + (to - from) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(255.0, 8.0), c(255.0, 48.0), c(255.0, 107.0))
}
