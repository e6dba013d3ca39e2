//! SVG rendering of maps, regions and trajectories.

use std::fmt::Write;

use super::{PlanningInstance, RunResult};
use crate::maze::{Cell, MazeMap};

const PX_PER_M: f64 = 6.0;
const CAPTION_H: f64 = 28.0;
const PALETTE: [&str; 6] = ["#4e79a7", "#59a14f", "#edc948", "#b07aa1", "#76b7b2", "#ff9da7"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(out: &mut String, pts: &[[f64; 2]], color: &str, width: f64, dash: &str) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> =
        pts.iter().map(|p| format!("{:.2},{:.2}", p[0] * PX_PER_M, p[1] * PX_PER_M)).collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}" stroke-dasharray="{dash}"/>"#,
        coords.join(" ")
    );
}

/// A layer to draw over the map.
pub struct Path<'a> {
    pub points: &'a [[f64; 2]],
    pub color: &'a str,
    pub dashed: bool,
}

/// Map with obstacles, labelled regions, start marker, paths and a caption.
pub fn render_svg(map: &MazeMap, x0: Option<[f64; 2]>, paths: &[Path<'_>], caption: &str) -> String {
    let cs = map.cell_size() * PX_PER_M;
    let w = map.width() as f64 * cs;
    let h = map.height() as f64 * cs;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}" viewBox="0 0 {w} {}" font-family="sans-serif">"#,
        h + CAPTION_H,
        h + CAPTION_H
    );
    let _ = writeln!(out, r##"<rect width="{w}" height="{h}" fill="#ffffff" stroke="#333"/>"##);
    for r in 0..map.height() {
        for c in 0..map.width() {
            if map.is_occupied(Cell::new(r, c)) {
                let _ = writeln!(
                    out,
                    r##"<rect x="{}" y="{}" width="{cs}" height="{cs}" fill="#3a3a3a"/>"##,
                    c as f64 * cs,
                    r as f64 * cs
                );
            }
        }
    }
    for (k, (name, region)) in map.regions().iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for cell in &region.cells {
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{cs}" height="{cs}" fill="{color}" fill-opacity="0.35"/>"#,
                cell.col as f64 * cs,
                cell.row as f64 * cs
            );
        }
        let c = region.cells[0];
        let _ = writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="12" fill="#222">{}</text>"##,
            c.col as f64 * cs + 3.0,
            c.row as f64 * cs + 14.0,
            esc(name)
        );
    }
    for p in paths {
        polyline(&mut out, p.points, p.color, 2.0, if p.dashed { "6,4" } else { "none" });
    }
    if let Some(p) = x0 {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="5" fill="#e15759"/>"##,
            p[0] * PX_PER_M,
            p[1] * PX_PER_M
        );
    }
    let _ = writeln!(out, r##"<text x="4" y="{}" font-size="13" fill="#222">{}</text>"##, h + 19.0, esc(caption));
    out.push_str("</svg>\n");
    out
}

/// Nominal (dashed) and executed (solid) trajectories with the formula and
/// outcome as caption.
pub fn render_run(inst: &PlanningInstance, r: &RunResult) -> String {
    let nominal: Vec<[f64; 2]> = r.nominal.iter().flat_map(|t| t.states().iter().map(|s| s.pos)).collect();
    let executed: Vec<[f64; 2]> = r.executed.as_ref().map(|e| e.fine_positions.clone()).unwrap_or_default();
    let caption = format!(
        "{}  [{} {}] {} rho={:.3}",
        inst.formula,
        r.dynamics,
        match r.selector {
            super::Selector::Heuristic => "heuristic",
            super::Selector::Random => "random",
        },
        if r.success { "success" } else { "fail" },
        r.rho
    );
    let paths = [
        Path { points: &nominal, color: "#f28e2b", dashed: true },
        Path { points: &executed, color: "#1f5fa8", dashed: false },
    ];
    render_svg(&inst.map, Some(inst.x0), &paths, &caption)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_obstacles_regions_and_paths() {
        let mut m = MazeMap::open(3, 3, 12.0, Cell::new(0, 0)).unwrap();
        m.set_occupied(Cell::new(1, 1), true);
        m.insert_region("A<1>", vec![Cell::new(2, 2)]).unwrap();
        let pts = [[6.0, 6.0], [30.0, 30.0]];
        let svg = render_svg(&m, Some([6.0, 6.0]), &[Path { points: &pts, color: "red", dashed: false }], "F[0,5] A");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("fill=\"#3a3a3a\"").count(), 1);
        assert!(svg.contains("A&lt;1&gt;") && svg.contains("<polyline") && svg.contains("36.00,36.00"));
    }
}
