//! Standalone SVG contour map of a response surface.
//!
//! Bands are nested sublevel sets `{s·v ≤ s·L}` (`s = −1` when maximizing),
//! painted from the worst level inward, so the last band drawn is the one
//! around the optimum. Each set is traced per grid cell: fully covered cells
//! merge into horizontal runs, cut cells become the polygon clipped along
//! linearly interpolated edge crossings. Isolines come from the same edge
//! crossings by marching squares.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::surface::{CiInterval as Interval, OptimumMode, SurfaceGrid};

pub const DEFAULT_BANDS: usize = 10;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 540.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;

/// Best band first.
const PALETTE: [(u8, u8, u8); 10] = [
    (253, 231, 37),
    (181, 222, 43),
    (110, 206, 88),
    (53, 183, 121),
    (31, 158, 137),
    (38, 130, 142),
    (49, 104, 142),
    (62, 73, 137),
    (72, 40, 120),
    (68, 1, 84),
];

#[derive(Debug, Error)]
pub enum FigureError {
    #[error("surface grid is empty or inconsistent: {0}")]
    Grid(String),
    #[error("figure needs at least 2 bands, got {0}")]
    Bands(usize),
}

pub type Point = (f64, f64);

/// Markers and labels drawn over the bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Annotations {
    pub title: String,
    pub value_label: String,
    pub mode: OptimumMode,
    /// Optimum of the fitted surface, (magnitude fraction, duration multiple).
    pub surface_optimum: Option<Point>,
    /// Best tested cell.
    pub experimental_best: Option<Point>,
    pub ci_box: Option<(Interval, Interval)>,
    /// Written into the document metadata.
    pub config_hash: String,
    pub seed: u64,
}

fn check(grid: &SurfaceGrid) -> Result<(), FigureError> {
    let (nm, nd) = (grid.magnitudes.len(), grid.durations.len());
    if nm < 2 || nd < 2 {
        return Err(FigureError::Grid(format!("{nm} x {nd} grid; need at least 2 x 2")));
    }
    if grid.values.len() != nm * nd {
        return Err(FigureError::Grid(format!("{} values for a {nm} x {nd} grid", grid.values.len())));
    }
    if grid.values.iter().any(|v| !v.is_finite()) {
        return Err(FigureError::Grid("non-finite value".into()));
    }
    Ok(())
}

fn lerp(a: Point, b: Point, fa: f64, fb: f64, level: f64) -> Point {
    let t = if fb != fa { ((level - fa) / (fb - fa)).clamp(0.0, 1.0) } else { 0.5 };
    (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
}

/// Corners of cell `(i, j)` counter-clockwise, with their signed values.
fn cell(grid: &SurfaceGrid, sign: f64, i: usize, j: usize) -> [(Point, f64); 4] {
    let (m, d) = (&grid.magnitudes, &grid.durations);
    [
        ((m[i], d[j]), sign * grid.value(i, j)),
        ((m[i + 1], d[j]), sign * grid.value(i + 1, j)),
        ((m[i + 1], d[j + 1]), sign * grid.value(i + 1, j + 1)),
        ((m[i], d[j + 1]), sign * grid.value(i, j + 1)),
    ]
}

/// Polygons covering `{sign·v ≤ level}` in data coordinates.
pub fn sublevel_polygons(grid: &SurfaceGrid, level: f64, mode: OptimumMode) -> Vec<Vec<Point>> {
    let sign = if mode == OptimumMode::Max { -1.0 } else { 1.0 };
    let level = sign * level;
    let (nm, nd) = (grid.magnitudes.len(), grid.durations.len());
    let mut out = Vec::new();
    for j in 0..nd.saturating_sub(1) {
        let mut run: Option<usize> = None;
        for i in 0..nm.saturating_sub(1) {
            let c = cell(grid, sign, i, j);
            let full = c.iter().all(|p| p.1 <= level);
            if full {
                run.get_or_insert(i);
                continue;
            }
            if let Some(start) = run.take() {
                out.push(rect(grid, start, i, j));
            }
            let mut poly = Vec::new();
            for k in 0..4 {
                let (a, b) = (c[k], c[(k + 1) % 4]);
                if a.1 <= level {
                    poly.push(a.0);
                }
                if (a.1 <= level) != (b.1 <= level) {
                    poly.push(lerp(a.0, b.0, a.1, b.1, level));
                }
            }
            if poly.len() >= 3 {
                out.push(poly);
            }
        }
        if let Some(start) = run {
            out.push(rect(grid, start, nm - 1, j));
        }
    }
    out
}

fn rect(grid: &SurfaceGrid, i0: usize, i1: usize, j: usize) -> Vec<Point> {
    let (m, d) = (&grid.magnitudes, &grid.durations);
    vec![(m[i0], d[j]), (m[i1], d[j]), (m[i1], d[j + 1]), (m[i0], d[j + 1])]
}

/// Isoline segments at `level` by marching squares; saddles are split by
/// the cell-center average.
pub fn isolines(grid: &SurfaceGrid, level: f64) -> Vec<(Point, Point)> {
    let (nm, nd) = (grid.magnitudes.len(), grid.durations.len());
    let mut out = Vec::new();
    for i in 0..nm.saturating_sub(1) {
        for j in 0..nd.saturating_sub(1) {
            let c = cell(grid, 1.0, i, j);
            let cross: Vec<(usize, Point)> = (0..4)
                .filter_map(|k| {
                    let (a, b) = (c[k], c[(k + 1) % 4]);
                    ((a.1 <= level) != (b.1 <= level)).then(|| (k, lerp(a.0, b.0, a.1, b.1, level)))
                })
                .collect();
            match cross.len() {
                2 => out.push((cross[0].1, cross[1].1)),
                4 => {
                    let center = c.iter().map(|p| p.1).sum::<f64>() / 4.0;
                    // corner 0 on the same side as the center joins edges 0 and 3
                    if (center <= level) == (c[0].1 <= level) {
                        out.push((cross[0].1, cross[1].1));
                        out.push((cross[2].1, cross[3].1));
                    } else {
                        out.push((cross[0].1, cross[3].1));
                        out.push((cross[1].1, cross[2].1));
                    }
                }
                _ => {}
            }
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn rgb((r, g, b): (u8, u8, u8)) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

struct Frame {
    m: (f64, f64),
    d: (f64, f64),
}

impl Frame {
    fn px(&self, (m, d): Point) -> Point {
        let w = WIDTH - LEFT - RIGHT;
        let h = HEIGHT - TOP - BOTTOM;
        (LEFT + (m - self.m.0) / (self.m.1 - self.m.0) * w, TOP + h - (d - self.d.0) / (self.d.1 - self.d.0) * h)
    }

    fn path(&self, polys: &[Vec<Point>]) -> String {
        let mut s = String::new();
        for poly in polys {
            for (k, p) in poly.iter().enumerate() {
                let (x, y) = self.px(*p);
                let _ = write!(s, "{}{x:.2},{y:.2}", if k == 0 { "M" } else { "L" });
            }
            s.push('Z');
        }
        s
    }
}

pub fn emit_contour_svg(grid: &SurfaceGrid, ann: &Annotations) -> Result<String, FigureError> {
    emit_contour_svg_with(grid, ann, DEFAULT_BANDS)
}

/// A constant grid yields a single band and a flat-surface note.
pub fn emit_contour_svg_with(grid: &SurfaceGrid, ann: &Annotations, bands: usize) -> Result<String, FigureError> {
    check(grid)?;
    if bands < 2 {
        return Err(FigureError::Bands(bands));
    }
    let frame = Frame {
        m: (grid.magnitudes[0], *grid.magnitudes.last().unwrap()),
        d: (grid.durations[0], *grid.durations.last().unwrap()),
    };
    let (lo, hi) = grid.range();
    let flat = hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1.0);
    let colour = |k: usize| rgb(PALETTE[(k * (PALETTE.len() - 1)) / (bands - 1).max(1)]);
    // band k spans the k-th step from the optimum side
    let levels: Vec<f64> = match ann.mode {
        OptimumMode::Min => (1..bands).map(|k| lo + (hi - lo) * k as f64 / bands as f64).collect(),
        OptimumMode::Max => (1..bands).map(|k| hi - (hi - lo) * k as f64 / bands as f64).collect(),
    };

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&ann.title));
    let _ = writeln!(s, "<metadata>config_hash={} seed={}</metadata>", escape(&ann.config_hash), ann.seed);
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    let (x0, y1) = frame.px((frame.m.0, frame.d.0));
    let (x1, y0) = frame.px((frame.m.1, frame.d.1));
    let _ = writeln!(s, r#"<g id="bands">"#);
    if flat {
        let _ = writeln!(
            s,
            r#"<rect class="band" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            x1 - x0,
            y1 - y0,
            colour(0)
        );
    } else {
        let _ = writeln!(
            s,
            r#"<rect class="band" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            x1 - x0,
            y1 - y0,
            colour(bands - 1)
        );
        for k in (0..bands - 1).rev() {
            let polys = sublevel_polygons(grid, levels[k], ann.mode);
            if polys.is_empty() {
                continue;
            }
            let c = colour(k);
            // a same-coloured hairline hides antialiasing seams between pieces
            let _ = writeln!(
                s,
                r#"<path class="band" data-level="{:.6}" d="{}" fill="{c}" stroke="{c}" stroke-width="0.6"/>"#,
                levels[k],
                frame.path(&polys)
            );
        }
    }
    let _ = writeln!(s, "</g>");

    if !flat {
        let _ = writeln!(s, r#"<g id="isolines" fill="none" stroke="black" stroke-opacity="0.35" stroke-width="0.7">"#);
        for level in &levels {
            let mut d = String::new();
            for (a, b) in isolines(grid, *level) {
                let ((ax, ay), (bx, by)) = (frame.px(a), frame.px(b));
                let _ = write!(d, "M{ax:.2},{ay:.2}L{bx:.2},{by:.2}");
            }
            if !d.is_empty() {
                let _ = writeln!(s, r#"<path d="{d}"/>"#);
            }
        }
        let _ = writeln!(s, "</g>");
    }

    // axes
    let _ = writeln!(
        s,
        r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    let ticks = |lo: f64, hi: f64| (0..=4).map(move |k| lo + (hi - lo) * k as f64 / 4.0);
    for m in ticks(frame.m.0, frame.m.1) {
        let (x, _) = frame.px((m, frame.d.0));
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y1:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{:.1}</text>"#, y1 + 19.0, 100.0 * m);
    }
    for d in ticks(frame.d.0, frame.d.1) {
        let (_, y) = frame.px((frame.m.0, d));
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{d:.2}</text>"#, x0 - 8.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Assistance magnitude (% peak biological moment)</text>"#,
        0.5 * (x0 + x1),
        HEIGHT - 25.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(22 {:.2}) rotate(-90)" text-anchor="middle">Assistance duration (× perturbation length)</text>"#,
        0.5 * (y0 + y1)
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="30" font-size="15">{}</text>"#, escape(&ann.title));

    // annotations
    if let Some((mci, dci)) = ann.ci_box {
        let clampm = |v: f64| v.clamp(frame.m.0, frame.m.1);
        let clampd = |v: f64| v.clamp(frame.d.0, frame.d.1);
        let (bx0, by1) = frame.px((clampm(mci.lower), clampd(dci.lower)));
        let (bx1, by0) = frame.px((clampm(mci.upper), clampd(dci.upper)));
        let _ = writeln!(
            s,
            r#"<rect id="ci-box" x="{bx0:.2}" y="{by0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
            bx1 - bx0,
            by1 - by0
        );
    }
    if let Some(p) = ann.experimental_best {
        let (x, y) = frame.px(p);
        let _ = writeln!(
            s,
            r##"<circle id="experimental-best" cx="{x:.2}" cy="{y:.2}" r="6" fill="#d62728" stroke="white" stroke-width="1.5"/>"##
        );
    }
    if let Some(p) = ann.surface_optimum {
        let (x, y) = frame.px(p);
        let _ = writeln!(
            s,
            r#"<circle id="surface-optimum" cx="{x:.2}" cy="{y:.2}" r="6" fill="white" stroke="black" stroke-width="1.5"/>"#
        );
    }

    // legend
    let lx = WIDTH - RIGHT + 20.0;
    let _ = writeln!(s, r#"<g id="legend">"#);
    let _ = writeln!(s, r#"<text x="{lx}" y="{TOP}">{}</text>"#, escape(&ann.value_label));
    if flat {
        let _ = writeln!(s, r#"<rect x="{lx}" y="{:.2}" width="14" height="14" fill="{}"/>"#, TOP + 10.0, colour(0));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{lo:.3}</text>"#, lx + 20.0, TOP + 22.0);
        let _ = writeln!(
            s,
            r#"<text id="flat-note" x="{:.2}" y="{:.2}" text-anchor="middle">flat surface: constant value {lo:.4}</text>"#,
            0.5 * (x0 + x1),
            0.5 * (y0 + y1)
        );
    } else {
        for k in 0..bands {
            let (a, b) = match ann.mode {
                OptimumMode::Min => {
                    (lo + (hi - lo) * k as f64 / bands as f64, lo + (hi - lo) * (k + 1) as f64 / bands as f64)
                }
                OptimumMode::Max => {
                    (hi - (hi - lo) * (k + 1) as f64 / bands as f64, hi - (hi - lo) * k as f64 / bands as f64)
                }
            };
            let y = TOP + 10.0 + 18.0 * k as f64;
            let _ = writeln!(s, r#"<rect x="{lx}" y="{y:.2}" width="14" height="14" fill="{}"/>"#, colour(k));
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{a:.2} – {b:.2}</text>"#, lx + 20.0, y + 12.0);
        }
    }
    let ly = TOP + 30.0 + 18.0 * bands as f64;
    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{ly:.2}" r="5" fill="white" stroke="black"/>"#, lx + 7.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">surface optimum</text>"#, lx + 20.0, ly + 4.0);
    let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="5" fill="#d62728"/>"##, lx + 7.0, ly + 20.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">best tested cell</text>"#, lx + 20.0, ly + 24.0);
    if ann.ci_box.is_some() {
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.2}" width="14" height="10" fill="none" stroke="black" stroke-dasharray="4 2"/>"#,
            ly + 37.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">bootstrap CI</text>"#, lx + 20.0, ly + 46.0);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::linspace;

    fn grid(n: usize, f: impl Fn(f64, f64) -> f64) -> SurfaceGrid {
        let (ms, ds) = (linspace((0.05, 0.25), n), linspace((0.5, 4.0), n));
        let values = ms.iter().flat_map(|m| ds.iter().map(|d| f(*m, *d)).collect::<Vec<_>>()).collect();
        SurfaceGrid { magnitudes: ms, durations: ds, values }
    }

    fn inside(poly: &[Point], p: Point) -> bool {
        let mut c = false;
        for k in 0..poly.len() {
            let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
            if (a.1 > p.1) != (b.1 > p.1) && p.0 < a.0 + (p.1 - a.1) / (b.1 - a.1) * (b.0 - a.0) {
                c = !c;
            }
        }
        c
    }

    fn area(poly: &[Point]) -> f64 {
        0.5 * (0..poly.len())
            .map(|k| {
                let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum::<f64>()
    }

    #[test]
    fn constant_grid_gives_one_band() {
        let g = grid(20, |_, _| 3.0);
        let svg = emit_contour_svg(&g, &Annotations { title: "flat & <odd>".into(), ..Default::default() }).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("band")).count(), 1);
        assert!(doc.descendants().any(|n| n.attribute("id") == Some("flat-note")));
    }

    #[test]
    fn innermost_band_encloses_bowl_minimum() {
        let opt = (0.159, 3.64);
        let g = grid(101, |m, d| 1500.0 * (m - opt.0).powi(2) + 20.0 * (d - opt.1).powi(2));
        let (lo, hi) = g.range();
        let inner = sublevel_polygons(&g, lo + (hi - lo) / DEFAULT_BANDS as f64, OptimumMode::Min);
        assert!(inner.iter().any(|p| inside(p, opt)));
        let svg = emit_contour_svg(
            &g,
            &Annotations {
                surface_optimum: Some(opt),
                experimental_best: Some((0.15, 4.0)),
                ci_box: Some((Interval { lower: 0.1, upper: 0.2 }, Interval { lower: 3.2, upper: 3.95 })),
                ..Default::default()
            },
        )
        .unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        for id in ["surface-optimum", "experimental-best", "ci-box"] {
            assert!(doc.descendants().any(|n| n.attribute("id") == Some(id)), "{id}");
        }
    }

    #[test]
    fn maximization_bands_surround_the_peak() {
        let g = grid(61, |m, d| -((m - 0.1).powi(2) * 100.0 + (d - 1.0).powi(2)));
        let (lo, hi) = g.range();
        let inner = sublevel_polygons(&g, hi - (hi - lo) / 10.0, OptimumMode::Max);
        assert!(inner.iter().any(|p| inside(p, (0.1, 1.0))));
        assert!(!inner.iter().any(|p| inside(p, (0.25, 4.0))));
    }

    #[test]
    fn sublevel_area_matches_linear_function() {
        // v = d on [0.5, 4]; the set v <= 2 covers (2 - 0.5) / 3.5 of the domain
        let g = grid(11, |_, d| d);
        let a: f64 = sublevel_polygons(&g, 2.0, OptimumMode::Min).iter().map(|p| area(p)).sum();
        assert!((a - 0.2 * 1.5).abs() < 1e-12, "{a}");
    }

    #[test]
    fn isolines_lie_on_level() {
        let g = grid(41, |m, d| m * 10.0 + d);
        for (a, b) in isolines(&g, 3.0) {
            for p in [a, b] {
                assert!((p.0 * 10.0 + p.1 - 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn large_grid_renders_quickly() {
        let g = grid(200, |m, d| (m * 30.0).sin() + (d * 2.0).cos());
        let t = std::time::Instant::now();
        let svg = emit_contour_svg(&g, &Annotations::default()).unwrap();
        assert!(t.elapsed().as_secs_f64() < 1.0);
        roxmltree::Document::parse(&svg).unwrap();
    }
}
