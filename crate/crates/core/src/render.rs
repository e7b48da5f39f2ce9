//! SVG snapshot of a costmap with a planned path on top.

use std::fmt::Write as _;

use crate::costmap::{Costmap, INSCRIBED, LETHAL};
use crate::geometry::Pose2D;
use crate::planner::GlobalPath;

fn shade(cost: u8) -> Option<&'static str> {
    match cost {
        LETHAL => Some("#202020"),
        INSCRIBED => Some("#7a4fa0"),
        c if c >= 128 => Some("#c8a8e0"),
        c if c > 0 => Some("#ece0f4"),
        _ => None,
    }
}

/// World coordinates in metres, y up. Cells are merged into horizontal runs of equal shade.
pub fn plan_svg(costmap: &Costmap, path: Option<&GlobalPath>, start: &Pose2D, goal: &Pose2D) -> String {
    let g = &costmap.geometry;
    let (ox, oy, r) = (g.origin.x, g.origin.y, g.resolution);
    let (w, h) = (g.width_m(), g.height_m());
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{ox} {} {w} {h}" width="{}" height="{}">"#, -(oy + h), (w * 60.0).round(), (h * 60.0).round());
    let _ = writeln!(svg, r#"<g transform="scale(1,-1)"><rect x="{ox}" y="{oy}" width="{w}" height="{h}" fill="white"/>"#);
    for row in 0..g.height {
        let mut col = 0;
        while col < g.width {
            let i = row * g.width + col;
            let Some(fill) = shade(costmap.cost[i]) else {
                col += 1;
                continue;
            };
            let mut end = col + 1;
            while end < g.width && shade(costmap.cost[row * g.width + end]) == Some(fill) {
                end += 1;
            }
            let _ = writeln!(
                svg,
                r#"<rect x="{:.4}" y="{:.4}" width="{:.4}" height="{r}" fill="{fill}"/>"#,
                ox + col as f64 * r,
                oy + row as f64 * r,
                (end - col) as f64 * r
            );
            col = end;
        }
    }
    if let Some(p) = path {
        let pts: Vec<String> = p.waypoints.iter().map(|q| format!("{:.3},{:.3}", q.x, q.y)).collect();
        let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#e05020" stroke-width="0.05"/>"##, pts.join(" "));
    }
    for (pose, color) in [(start, "#2080e0"), (goal, "#20a040")] {
        let (tx, ty) = (pose.x + 0.3 * pose.theta.cos(), pose.y + 0.3 * pose.theta.sin());
        let _ = writeln!(svg, r#"<circle cx="{:.3}" cy="{:.3}" r="0.12" fill="{color}"/>"#, pose.x, pose.y);
        let _ = writeln!(svg, r#"<line x1="{:.3}" y1="{:.3}" x2="{tx:.3}" y2="{ty:.3}" stroke="{color}" stroke-width="0.04"/>"#, pose.x, pose.y);
    }
    svg.push_str("</g>\n</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::{build_global_costmap, CostmapConfig};
    use crate::planner::plan_global;
    use crate::sim::World;

    #[test]
    fn svg_has_path_and_obstacles() {
        let w = World::fig5();
        let map = w.known_map(w.map_geometry(0.05, 0.5), crate::geometry::Point2::new(1.5, 1.5));
        let cm = build_global_costmap(&map, &CostmapConfig::default());
        let (s, g) = (Pose2D::new(1.5, 1.5, 0.0), Pose2D::new(8.0, 8.0, 0.0));
        let path = plan_global(&cm, &s, &g).unwrap();
        let svg = plan_svg(&cm, Some(&path), &s, &g);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.matches("#202020").count() > 100);
    }
}
