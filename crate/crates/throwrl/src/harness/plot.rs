//! Self-contained SVG emission for the standard result panels: hit/miss
//! scatters over the target domain and box plots of accuracy distributions.
//! Output is plain text with fixed-precision coordinates, so identical runs
//! produce identical bytes.

use std::fmt::Write as _;
use std::io::Write;

use crate::domain::TargetDomain;
use crate::harness::EvalReport;
use crate::Result;

fn f2(x: f64) -> String {
    format!("{x:.2}")
}

struct Frame {
    width: f64,
    height: f64,
    margin: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.margin
            + (v - self.x_range.0) / (self.x_range.1 - self.x_range.0)
                * (self.width - 2.0 * self.margin)
    }

    // SVG y grows downward.
    fn y(&self, v: f64) -> f64 {
        self.height
            - self.margin
            - (v - self.y_range.0) / (self.y_range.1 - self.y_range.0)
                * (self.height - 2.0 * self.margin)
    }
}

fn svg_header(buf: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        buf,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" font-family=\"sans-serif\" font-size=\"11\">",
        f2(width),
        f2(height)
    );
    let _ = writeln!(buf, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(buf, "<text x=\"{}\" y=\"16\" text-anchor=\"middle\" font-size=\"13\">{}</text>", f2(width / 2.0), title);
}

/// Hit/miss scatter over the annular target domain: targets are circles
/// (green hit, red miss), landings are crosses.
pub fn scatter_svg<W: Write>(
    report: &EvalReport,
    domain: &TargetDomain,
    title: &str,
    mut out: W,
) -> Result<()> {
    let pad = 0.3;
    let y_half = domain.l_max * domain.gamma_max.sin() + pad;
    let frame = Frame {
        width: 640.0,
        height: 480.0,
        margin: 45.0,
        x_range: (-pad, domain.l_max + pad),
        y_range: (-y_half, y_half),
    };
    let mut buf = String::new();
    svg_header(&mut buf, frame.width, frame.height, title);

    // Domain boundary: two arcs plus the two radial edges.
    let mut path = String::new();
    let steps = 48;
    for i in 0..=steps {
        let g = -domain.gamma_max + 2.0 * domain.gamma_max * i as f64 / steps as f64;
        let (x, y) = (domain.l_max * g.cos(), domain.l_max * g.sin());
        let _ = write!(path, "{}{},{} ", if i == 0 { "M" } else { "L" }, f2(frame.x(x)), f2(frame.y(y)));
    }
    for i in 0..=steps {
        let g = domain.gamma_max - 2.0 * domain.gamma_max * i as f64 / steps as f64;
        let (x, y) = (domain.l_min * g.cos(), domain.l_min * g.sin());
        let _ = write!(path, "L{},{} ", f2(frame.x(x)), f2(frame.y(y)));
    }
    let _ = writeln!(buf, "<path d=\"{path}Z\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\"/>");

    // Base origin marker.
    let _ = writeln!(
        buf,
        "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"#444\"/>",
        f2(frame.x(0.0)),
        f2(frame.y(0.0))
    );

    for row in &report.rows {
        let color = if row.hit { "#2a9d2a" } else { "#d43d3d" };
        let _ = writeln!(
            buf,
            "<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            f2(frame.x(row.target.x)),
            f2(frame.y(row.target.y)),
            color
        );
        let (cx, cy) = (frame.x(row.landing.x), frame.y(row.landing.y));
        let _ = writeln!(
            buf,
            "<path d=\"M{},{} L{},{} M{},{} L{},{}\" stroke=\"{}\" stroke-width=\"1.2\"/>",
            f2(cx - 3.0),
            f2(cy - 3.0),
            f2(cx + 3.0),
            f2(cy + 3.0),
            f2(cx - 3.0),
            f2(cy + 3.0),
            f2(cx + 3.0),
            f2(cy - 3.0),
            color
        );
    }

    let _ = writeln!(
        buf,
        "<text x=\"{}\" y=\"{}\">accuracy = {:.3} ({} targets, circles = targets, crosses = landings)</text>",
        f2(frame.margin),
        f2(frame.height - 10.0),
        report.accuracy,
        report.rows.len()
    );
    let _ = writeln!(buf, "</svg>");
    out.write_all(buf.as_bytes())?;
    Ok(())
}

/// Box plot (min, quartiles, max) of one sample set per labeled group.
pub fn box_plot_svg<W: Write>(
    groups: &[(String, Vec<f64>)],
    y_label: &str,
    title: &str,
    mut out: W,
) -> Result<()> {
    let width = 120.0 + 110.0 * groups.len() as f64;
    let frame = Frame {
        width,
        height: 420.0,
        margin: 50.0,
        x_range: (0.0, groups.len() as f64),
        y_range: (0.0, 1.0),
    };
    let mut buf = String::new();
    svg_header(&mut buf, frame.width, frame.height, title);

    // Axis with ticks at 0, 0.25, .., 1.
    let _ = writeln!(
        buf,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>",
        f2(frame.x(0.0)),
        f2(frame.y(0.0)),
        f2(frame.x(0.0)),
        f2(frame.y(1.0))
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            buf,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ccc\"/>",
            f2(frame.x(0.0)),
            f2(frame.y(v)),
            f2(frame.width - frame.margin),
            f2(frame.y(v))
        );
        let _ = writeln!(
            buf,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2}</text>",
            f2(frame.x(0.0) - 6.0),
            f2(frame.y(v) + 4.0),
            v
        );
    }
    let _ = writeln!(
        buf,
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>",
        f2(frame.height / 2.0),
        f2(frame.height / 2.0),
        y_label
    );

    for (i, (label, samples)) in groups.iter().enumerate() {
        let mut s = samples.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if s.is_empty() {
            continue;
        }
        let q = |frac: f64| s[((s.len() - 1) as f64 * frac).round() as usize];
        let (lo, q1, med, q3, hi) = (s[0], q(0.25), q(0.5), q(0.75), s[s.len() - 1]);
        let cx = frame.x(i as f64 + 0.5);
        let half = 28.0;
        // Whiskers, box, median.
        let _ = writeln!(
            buf,
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"#333\"/>",
            f2(frame.y(lo)),
            f2(frame.y(hi)),
            cx = f2(cx)
        );
        for v in [lo, hi] {
            let _ = writeln!(
                buf,
                "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#333\"/>",
                f2(cx - half / 2.0),
                f2(cx + half / 2.0),
                y = f2(frame.y(v))
            );
        }
        let _ = writeln!(
            buf,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#9ecbe8\" stroke=\"#333\"/>",
            f2(cx - half),
            f2(frame.y(q3)),
            f2(2.0 * half),
            f2((frame.y(q1) - frame.y(q3)).max(0.5))
        );
        let _ = writeln!(
            buf,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#b33\" stroke-width=\"2\"/>",
            f2(cx - half),
            f2(cx + half),
            y = f2(frame.y(med))
        );
        let _ = writeln!(
            buf,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            f2(cx),
            f2(frame.height - frame.margin + 18.0),
            label
        );
    }
    let _ = writeln!(buf, "</svg>");
    out.write_all(buf.as_bytes())?;
    Ok(())
}
