//! Minimal SVG plots. The matching CSV always carries the same numbers.

use std::fmt::Write as _;

use latentaudit::stats::Histogram;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Canvas {
    body: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Canvas {
    fn new(title: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo, lo + 1.0) };
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(body, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            body,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        Canvas {
            body,
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }

    fn axes(&mut self, x_label: &str, y_label: &str) {
        let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
        let _ = writeln!(
            self.body,
            r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let xv = self.x.0 + t * (self.x.1 - self.x.0);
            let yv = self.y.0 + t * (self.y.1 - self.y.0);
            let (px, py) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                self.body,
                r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                y0 + 14.0,
                tick(xv)
            );
            let _ = writeln!(
                self.body,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                py + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 16.0,
            escape(x_label)
        );
        let _ = writeln!(
            self.body,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(y_label)
        );
    }

    fn legend(&mut self, names: &[String]) {
        for (i, name) in names.iter().enumerate() {
            let y = MARGIN + 14.0 * i as f64;
            let _ = writeln!(
                self.body,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
                W - MARGIN - 110.0,
                y - 9.0,
                PALETTE[i % PALETTE.len()],
                W - MARGIN - 96.0,
                y,
                escape(name)
            );
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// Overlaid semi-transparent bars, one colour per label.
pub fn histogram(title: &str, x_label: &str, h: &Histogram) -> String {
    let max = h.counts.iter().flatten().copied().max().unwrap_or(0) as f64;
    let mut c = Canvas::new(title, (h.edges[0], h.edges[h.bins()]), (0.0, max.max(1.0)));
    c.axes(x_label, "count");
    for (i, counts) in h.counts.iter().enumerate() {
        for (b, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let (x0, x1) = (c.px(h.edges[b]), c.px(h.edges[b + 1]));
            let (y0, y1) = (c.py(n as f64), c.py(0.0));
            let _ = writeln!(
                c.body,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="0.5"/>"#,
                x1 - x0,
                y1 - y0,
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    c.legend(&h.labels);
    c.finish()
}

/// Polylines over shared axes.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let pts = || series.iter().flat_map(|(_, p)| p.iter());
    let mut c = Canvas::new(
        title,
        extent(pts().map(|p| p.0)),
        extent(pts().map(|p| p.1)),
    );
    c.axes(x_label, y_label);
    for (i, (_, points)) in series.iter().enumerate() {
        let mut d = String::new();
        for (k, &(x, y)) in points.iter().filter(|p| p.1.is_finite()).enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2} ",
                if k == 0 { 'M' } else { 'L' },
                c.px(x),
                c.py(y)
            );
        }
        let _ = writeln!(
            c.body,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            d.trim_end(),
            PALETTE[i % PALETTE.len()]
        );
    }
    let names: Vec<String> = series.iter().map(|s| s.0.clone()).collect();
    c.legend(&names);
    c.finish()
}

/// One bar per category.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (lo, hi) = extent(bars.iter().map(|b| b.1));
    let mut c = Canvas::new(
        title,
        (0.0, bars.len().max(1) as f64),
        (lo.min(0.0), hi.max(0.0)),
    );
    c.axes("", y_label);
    for (i, (name, v)) in bars.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let (x0, x1) = (c.px(i as f64 + 0.15), c.px(i as f64 + 0.85));
        let (ya, yb) = (c.py(*v), c.py(0.0));
        let _ = writeln!(
            c.body,
            r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            ya.min(yb),
            x1 - x0,
            (yb - ya).abs(),
            PALETTE[0]
        );
        let _ = writeln!(
            c.body,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - MARGIN + 28.0,
            escape(name)
        );
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_markup() {
        assert_eq!(escape(r#"a<b & "c">"#), "a&lt;b &amp; &quot;c&quot;&gt;");
    }

    #[test]
    fn charts_are_closed_documents() {
        let h = Histogram {
            edges: vec![0.0, 0.5, 1.0],
            labels: vec!["train".into(), "val<idation>".into()],
            counts: vec![vec![3, 1], vec![0, 4]],
        };
        let series = vec![("lbfgs".to_string(), vec![(1.0, 0.5), (2.0, 0.25)])];
        for doc in [
            histogram("errors", "mse", &h),
            line_chart("trace", "iteration", "mse", &series),
            bar_chart(
                "gap",
                "mre gap",
                &[("glo".into(), 0.9), ("gan".into(), -0.1)],
            ),
        ] {
            assert!(doc.starts_with("<svg ") && doc.ends_with("</svg>\n"));
            assert!(!doc.contains("val<"));
            assert_eq!(doc.matches("<svg").count(), 1);
        }
    }
}
