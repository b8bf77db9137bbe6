use std::fmt::Write;

use super::{CeaDraws, CeaSummary};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;

/// Standalone SVG documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Plots {
    pub plane: String,
    pub acceptability: String,
}

/// Linear map from a data range onto a pixel range.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Axis {
    /// Range covering `values`, padded by 5%, never degenerate.
    fn covering(values: impl Iterator<Item = f64>, from: f64, to: f64) -> Axis {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            lo = -1.0;
            hi = 1.0;
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { lo.abs().max(1.0) * 0.5 };
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            from,
            to,
        }
    }

    fn px(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }

    fn ticks(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-12 * span {
            out.push(if t.abs() < 1e-12 * span { 0.0 } else { t });
            t += step;
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn open(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, WIDTH / 2.0);
}

fn frame(svg: &mut String, x: &Axis, y: &Axis, x_label: &str, y_label: &str) {
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 2.0, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    for t in x.ticks() {
        let px = x.px(t);
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{bottom}" x2="{px:.2}" y2="{}" stroke="black"/>"#, bottom + 4.0);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, bottom + 16.0, fmt_num(t));
    }
    for t in y.ticks() {
        let py = y.px(t);
        let _ = writeln!(svg, r#"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/>"#, left - 4.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 6.0, py + 4.0, fmt_num(t));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, (left + right) / 2.0, HEIGHT - 20.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{y_label}</text>"#,
        (top + bottom) / 2.0
    );
}

fn clip_path(svg: &mut String) {
    let _ = writeln!(
        svg,
        r#"<clipPath id="plot-area"><rect x="{MARGIN}" y="{}" width="{}" height="{}"/></clipPath>"#,
        MARGIN / 2.0,
        WIDTH - 1.5 * MARGIN,
        HEIGHT - 1.5 * MARGIN
    );
}

/// Cost-effectiveness plane with the threshold line through the origin, and the
/// acceptability curve.
pub fn render_plots(draws: &CeaDraws, summary: &CeaSummary, k_highlight: f64) -> Plots {
    let point = draws.point;
    let xs = draws.draws.iter().map(|d| d.d_e).chain([point.d_e, 0.0]);
    let ys = draws.draws.iter().map(|d| d.d_c).chain([point.d_c, 0.0]);
    let x = Axis::covering(xs, MARGIN, WIDTH - MARGIN / 2.0);
    let y = Axis::covering(ys, HEIGHT - MARGIN, MARGIN / 2.0);

    let mut plane = String::new();
    open(&mut plane, "Cost-effectiveness plane");
    clip_path(&mut plane);
    frame(&mut plane, &x, &y, "Incremental QALYs", "Incremental cost");
    let _ = writeln!(plane, r#"<g clip-path="url(#plot-area)">"#);
    let (x0, y0) = (x.px(0.0), y.px(0.0));
    let _ = writeln!(plane, r##"<line x1="{:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="#888"/>"##, x.from, x.to);
    let _ = writeln!(plane, r##"<line x1="{x0:.2}" y1="{:.2}" x2="{x0:.2}" y2="{:.2}" stroke="#888"/>"##, y.from, y.to);
    let _ = writeln!(
        plane,
        r##"<line class="threshold" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#c33" stroke-dasharray="6 4"/>"##,
        x.px(x.lo),
        y.px(k_highlight * x.lo),
        x.px(x.hi),
        y.px(k_highlight * x.hi)
    );
    let _ = writeln!(plane, r##"<g class="draws" fill="#7aa6d6" fill-opacity="0.5">"##);
    for d in &draws.draws {
        let _ = writeln!(plane, r#"<circle cx="{:.2}" cy="{:.2}" r="1.8"/>"#, x.px(d.d_e), y.px(d.d_c));
    }
    let _ = writeln!(plane, "</g>");
    let _ = writeln!(
        plane,
        r##"<circle class="point-estimate" cx="{:.2}" cy="{:.2}" r="4.5" fill="#08306b" stroke="white"/>"##,
        x.px(point.d_e),
        y.px(point.d_c)
    );
    let _ = writeln!(plane, "</g>");
    let _ = writeln!(
        plane,
        r#"<text x="{}" y="{}" text-anchor="end">k = {}</text>"#,
        WIDTH - MARGIN / 2.0 - 6.0,
        MARGIN / 2.0 + 14.0,
        fmt_num(k_highlight)
    );
    plane.push_str("</svg>\n");

    let mut acceptability = String::new();
    open(&mut acceptability, "Cost-effectiveness acceptability curve");
    let ks = summary.ceac.iter().map(|p| p.k);
    let kx = Axis::covering(ks, MARGIN, WIDTH - MARGIN / 2.0);
    let py = Axis {
        lo: 0.0,
        hi: 1.0,
        from: HEIGHT - MARGIN,
        to: MARGIN / 2.0,
    };
    frame(&mut acceptability, &kx, &py, "Willingness to pay per QALY", "Probability cost-effective");
    let pts: Vec<String> = summary
        .ceac
        .iter()
        .map(|p| format!("{:.2},{:.2}", kx.px(p.k), py.px(p.probability)))
        .collect();
    let _ = writeln!(
        acceptability,
        r##"<polyline class="ceac" points="{}" fill="none" stroke="#08306b" stroke-width="2"/>"##,
        pts.join(" ")
    );
    let hx = kx.px(k_highlight);
    if (kx.lo..=kx.hi).contains(&k_highlight) {
        let _ = writeln!(
            acceptability,
            r##"<line x1="{hx:.2}" y1="{:.2}" x2="{hx:.2}" y2="{:.2}" stroke="#c33" stroke-dasharray="6 4"/>"##,
            py.from,
            py.to
        );
    }
    acceptability.push_str("</svg>\n");

    Plots { plane, acceptability }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cea::{summarize, Draw};

    fn draws(rows: Vec<(f64, f64)>) -> CeaDraws {
        let draws = rows
            .iter()
            .enumerate()
            .map(|(i, &(d_e, d_c))| Draw {
                replicate: i + 1,
                d_e,
                d_c,
                qaly: [0.0; 2],
                total_cost: [0.0; 2],
            })
            .collect();
        CeaDraws {
            seed: 1,
            n_replicates: rows.len(),
            n_failed: 0,
            point: Draw {
                replicate: 0,
                d_e: 0.02,
                d_c: 500.0,
                qaly: [0.0; 2],
                total_cost: [0.0; 2],
            },
            draws,
        }
    }

    #[test]
    fn cloud_and_curve_are_well_formed() {
        let rows: Vec<(f64, f64)> = (0..100).map(|i| (0.001 * i as f64 - 0.03, 40.0 * i as f64 - 1000.0)).collect();
        let d = draws(rows);
        let s = summarize(&d, &[0.0, 10_000.0, 20_000.0], 20_000.0, 0.95).unwrap();
        let p = render_plots(&d, &s, 20_000.0);
        assert!(p.plane.starts_with("<svg") && p.plane.trim_end().ends_with("</svg>"));
        assert_eq!(p.plane.matches("<circle").count(), 101);
        assert!(p.plane.contains("point-estimate"));
        assert!(p.acceptability.contains("<polyline"));
        assert!(!p.plane.contains("NaN") && !p.acceptability.contains("NaN"));
    }

    #[test]
    fn identical_draws() {
        let d = draws(vec![(0.01, 100.0); 5]);
        let s = summarize(&d, &[0.0, 20.0], 20.0, 0.95).unwrap();
        let p = render_plots(&d, &s, 20.0);
        assert!(!p.plane.contains("NaN") && !p.plane.contains("inf"));
    }

    #[test]
    fn two_draw_curve_steps_at_twenty() {
        let d = draws(vec![(1.0, 10.0), (1.0, 30.0)]);
        let s = summarize(&d, &[0.0, 20.0, 40.0], 20.0, 0.95).unwrap();
        assert_eq!(s.ceac.iter().map(|p| p.probability).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        let p = render_plots(&d, &s, 20.0);
        // the middle vertex sits at half height
        let mid = (HEIGHT - MARGIN + MARGIN / 2.0) / 2.0;
        assert!(p.acceptability.contains(&format!(",{mid:.2}")));
    }
}
