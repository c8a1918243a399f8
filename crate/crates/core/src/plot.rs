//! Standalone SVG 1.1 figures: balance love plots and sensitivity contours.

use std::fmt::Write as _;

use crate::balance::{BalanceRow, Phase, BALANCE_THRESHOLD};
use crate::sensitivity::{CellStatus, SensitivityGrid};

const GENERATOR: &str = concat!("modwt ", env!("CARGO_PKG_VERSION"));

fn header(s: &mut String, width: f64, height: f64) {
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(s, "<!-- generator: {GENERATOR} -->");
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
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

/// A "nice" tick step covering `span` in about `target` steps.
fn nice_step(span: f64, target: f64) -> f64 {
    if !(span > 0.0) {
        return 1.0;
    }
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let m = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 2.5 {
        2.5
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

/// Horizontal bars of pre- and post-weighting `|SMD|` per covariate level
/// of one stratum, with the 0.10 reference line.
pub fn love_plot(title: &str, rows: &[BalanceRow]) -> String {
    let pre: Vec<&BalanceRow> = rows.iter().filter(|r| r.phase == Phase::Pre).collect();
    let post = |r: &BalanceRow| {
        rows.iter()
            .find(|q| q.phase == Phase::Post && q.covariate == r.covariate && q.level == r.level)
            .map_or(f64::NAN, |q| q.smd.abs())
    };
    let (left, right, top, row_h) = (170.0, 30.0, 50.0, 22.0);
    let plot_w = 420.0;
    let width = left + plot_w + right;
    let height = top + row_h * pre.len() as f64 + 50.0;
    let max_v = pre
        .iter()
        .flat_map(|r| [r.smd.abs(), post(r)])
        .filter(|v| v.is_finite())
        .fold(BALANCE_THRESHOLD * 1.5, f64::max);
    let step = nice_step(max_v, 5.0);
    let x_max = (max_v / step).ceil() * step;
    let sx = |v: f64| left + plot_w * v / x_max;

    let mut s = String::new();
    header(&mut s, width, height);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" font-size="14" font-weight="bold">{}</text>"#, left, escape(title));
    let bottom = top + row_h * pre.len() as f64;
    let mut v = 0.0;
    while v <= x_max + 1e-12 {
        let x = sx(v);
        let _ = writeln!(
            s,
            r##"<line class="grid" x1="{x:.1}" y1="{top:.1}" x2="{x:.1}" y2="{bottom:.1}" stroke="#dddddd"/>"##
        );
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#, bottom + 14.0);
        v += step;
    }
    for (k, r) in pre.iter().enumerate() {
        let y = top + row_h * k as f64;
        let name = match &r.level {
            Some(l) => format!("{}: {}", r.covariate, l),
            None => r.covariate.clone(),
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + row_h * 0.6,
            escape(&name)
        );
        let bar_h = row_h * 0.35;
        for (class, val, dy, fill) in [("pre", r.smd.abs(), 2.0, "#c0504d"), ("post", post(r), 2.0 + bar_h, "#4f81bd")] {
            let w = if val.is_finite() { sx(val) - left } else { 0.0 };
            let _ = writeln!(
                s,
                r#"<rect class="bar {class}" x="{left:.1}" y="{:.1}" width="{w:.2}" height="{bar_h:.1}" fill="{fill}"><title>{class} |SMD| = {val:.3}</title></rect>"#,
                y + dy
            );
        }
    }
    let tx = sx(BALANCE_THRESHOLD);
    let _ = writeln!(
        s,
        r#"<line class="threshold" x1="{tx:.1}" y1="{:.1}" x2="{tx:.1}" y2="{bottom:.1}" stroke="black" stroke-dasharray="4,3"/>"#,
        top - 5.0
    );
    let ly = bottom + 34.0;
    let _ = writeln!(s, r##"<rect x="{left:.1}" y="{:.1}" width="12" height="8" fill="#c0504d"/>"##, ly - 8.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">before weighting</text>"#, left + 16.0);
    let _ = writeln!(s, r##"<rect x="{:.1}" y="{:.1}" width="12" height="8" fill="#4f81bd"/>"##, left + 140.0, ly - 8.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">after weighting (|SMD|, line at 0.10)</text>"#, left + 156.0);
    s.push_str("</svg>\n");
    s
}

pub type Segment = ((f64, f64), (f64, f64));

/// Marching-squares segments of the `level` set of `values[i][j]`, sampled
/// at `(xs[i], ys[j])`. Squares touching a NaN are skipped; saddles are
/// resolved by the mean of the four corners.
pub fn contour_segments(xs: &[f64], ys: &[f64], values: &[Vec<f64>], level: f64) -> Vec<Segment> {
    let mut out = Vec::new();
    if xs.len() < 2 || ys.len() < 2 {
        return out;
    }
    for i in 0..xs.len() - 1 {
        for j in 0..ys.len() - 1 {
            // Corners counter-clockwise from (i, j).
            let c = [
                (xs[i], ys[j], values[i][j]),
                (xs[i + 1], ys[j], values[i + 1][j]),
                (xs[i + 1], ys[j + 1], values[i + 1][j + 1]),
                (xs[i], ys[j + 1], values[i][j + 1]),
            ];
            if c.iter().any(|p| !p.2.is_finite()) {
                continue;
            }
            let above: Vec<bool> = c.iter().map(|p| p.2 >= level).collect();
            let cross = |a: usize, b: usize| {
                let (pa, pb) = (c[a], c[b]);
                let t = (level - pa.2) / (pb.2 - pa.2);
                (pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1))
            };
            // Edges k joins corners k and k+1.
            let edges: Vec<usize> = (0..4).filter(|&k| above[k] != above[(k + 1) % 4]).collect();
            match edges.len() {
                2 => out.push((cross(edges[0], (edges[0] + 1) % 4), cross(edges[1], (edges[1] + 1) % 4))),
                4 => {
                    let centre_above = c.iter().map(|p| p.2).sum::<f64>() / 4.0 >= level;
                    // Pair each edge with a neighbour so the centre's side stays connected.
                    let pairs = if centre_above == above[0] { [(0, 3), (1, 2)] } else { [(0, 1), (2, 3)] };
                    for (a, b) in pairs {
                        out.push((cross(a, (a + 1) % 4), cross(b, (b + 1) % 4)));
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// Contour levels at nice round values strictly inside the range of the
/// finite entries.
pub fn contour_levels(values: &[f64], target: f64) -> Vec<f64> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Vec::new();
    }
    let step = nice_step(hi - lo, target);
    let mut k = (lo / step).floor() as i64;
    let mut out = Vec::new();
    loop {
        let v = k as f64 * step;
        if v >= hi {
            break;
        }
        if v > lo {
            // Snap away floating noise such as 0.30000000000000004.
            out.push((v * 1e9).round() / 1e9);
        }
        k += 1;
    }
    out
}

/// Adjusted-estimate contours (solid), p-value contours (dashed),
/// infeasible or failed cells (grey) and benchmark points (dots) over the
/// `(es, rho)` grid.
pub fn sensitivity_plot(title: &str, grid: &SensitivityGrid) -> String {
    let (left, right, top, bottom_pad) = (60.0, 30.0, 40.0, 50.0);
    let (plot_w, plot_h) = (480.0, 320.0);
    let width = left + plot_w + right;
    let height = top + plot_h + bottom_pad;
    let xs = &grid.es_grid;
    let ys = &grid.rho_grid;
    let (x0, x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let sx = |x: f64| left + plot_w * (x - x0) / span(x0, x1);
    let sy = |y: f64| top + plot_h - plot_h * (y - y0) / span(y0, y1);

    let surface = |f: &dyn Fn(usize, usize) -> Option<f64>| -> Vec<Vec<f64>> {
        (0..xs.len())
            .map(|i| (0..ys.len()).map(|j| f(i, j).unwrap_or(f64::NAN)).collect())
            .collect()
    };
    let est = surface(&|i, j| grid.cell(i, j).mean_estimate);
    let pv = surface(&|i, j| grid.cell(i, j).mean_p);

    let mut s = String::new();
    header(&mut s, width, height);
    let _ = writeln!(s, r#"<text x="{left:.1}" y="20" font-size="14" font-weight="bold">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left:.1}" y="{top:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="black"/>"#
    );
    // Unusable cells.
    let half = |g: &[f64], k: usize| -> (f64, f64) {
        let lo = if k > 0 { (g[k - 1] + g[k]) / 2.0 } else { g[k] };
        let hi = if k + 1 < g.len() { (g[k] + g[k + 1]) / 2.0 } else { g[k] };
        (lo, hi)
    };
    for i in 0..xs.len() {
        for j in 0..ys.len() {
            let cell = grid.cell(i, j);
            if cell.status == CellStatus::Ok {
                continue;
            }
            let (xa, xb) = half(xs, i);
            let (ya, yb) = half(ys, j);
            let _ = writeln!(
                s,
                r##"<rect class="{}" x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#eeeeee"/>"##,
                match cell.status {
                    CellStatus::Infeasible => "infeasible",
                    _ => "failed",
                },
                sx(xa),
                sy(yb),
                sx(xb) - sx(xa),
                sy(ya) - sy(yb)
            );
        }
    }
    let path = |segs: &[Segment]| -> String {
        let mut d = String::new();
        for ((ax, ay), (bx, by)) in segs {
            let _ = write!(d, "M{:.2},{:.2}L{:.2},{:.2}", sx(*ax), sy(*ay), sx(*bx), sy(*by));
        }
        d
    };
    let flat: Vec<f64> = est.iter().flatten().copied().collect();
    for level in contour_levels(&flat, 8.0) {
        let segs = contour_segments(xs, ys, &est, level);
        if segs.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<path class="estimate-contour" d="{}" fill="none" stroke="black" stroke-width="1"><title>estimate {level}</title></path>"#,
            path(&segs)
        );
        let ((lx, ly), _) = segs[segs.len() / 2];
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="9">{level}</text>"#, sx(lx) + 2.0, sy(ly) - 2.0);
    }
    for &level in &grid.p_contours {
        let segs = contour_segments(xs, ys, &pv, level);
        if segs.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            r##"<path class="p-contour" d="{}" fill="none" stroke="#c0504d" stroke-width="1.5" stroke-dasharray="5,3"><title>p = {level}</title></path>"##,
            path(&segs)
        );
    }
    for b in &grid.benchmarks {
        let name = match &b.level {
            Some(l) => format!("{}: {}", b.covariate, l),
            None => b.covariate.clone(),
        };
        let _ = writeln!(
            s,
            r##"<circle class="benchmark" cx="{:.2}" cy="{:.2}" r="3" fill="#4f81bd"><title>{}</title></circle>"##,
            sx(b.es.clamp(x0, x1)),
            sy(b.rho.clamp(y0, y1)),
            escape(&name)
        );
    }
    // Axes.
    let base = top + plot_h;
    for &x in xs.iter().step_by(((xs.len() + 7) / 8).max(1)) {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x:.2}</text>"#, sx(x), base + 14.0);
    }
    for &y in ys {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"#, left - 4.0, sy(y) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">effect size of omitted variable on treatment (SMD)</text>"#,
        left + plot_w / 2.0,
        base + 34.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">correlation with outcome</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    s.push_str("</svg>\n");
    s
}
