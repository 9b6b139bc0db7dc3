//! Top-view (X-Y) plots of planned motions as SVG plus a CSV of the plotted
//! coordinates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::collision::{motion_in_collision, Scene};
use crate::kinematics::{JointState, KinematicChain};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    /// Final arm configuration of every motion.
    Endpoints,
    /// Hand path of every motion.
    Paths,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "endpoints" => Ok(PlotKind::Endpoints),
            "paths" => Ok(PlotKind::Paths),
            other => Err(Error::InvalidConfig(format!(
                "unknown plot kind {other:?}; expected endpoints or paths"
            ))),
        }
    }
}

pub struct Plot {
    pub svg: String,
    pub csv: String,
}

const SIZE: f64 = 600.0;
const MARGIN: f64 = 30.0;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders `motions` seen from above. Motions that hit the scene are drawn
/// with the `collision` class.
pub fn top_view(
    chain: &KinematicChain,
    motions: &[(String, Vec<JointState>)],
    scene: &Scene,
    resolution: f64,
    kind: PlotKind,
) -> Result<Plot> {
    // Each polyline: (id, collides, points).
    let mut lines: Vec<(String, bool, Vec<[f64; 2]>)> = Vec::new();
    for (id, m) in motions {
        let collides = m.len() >= 2 && motion_in_collision(chain, m, scene, resolution)?;
        let points = match kind {
            PlotKind::Endpoints => {
                let last = m
                    .last()
                    .ok_or_else(|| Error::MalformedInput(format!("motion {id} is empty")))?;
                let f = chain.forward_kinematics(last)?;
                vec![
                    [f.shoulder.x, f.shoulder.y],
                    [f.elbow.x, f.elbow.y],
                    [f.hand.x, f.hand.y],
                ]
            }
            PlotKind::Paths => m
                .iter()
                .map(|q| chain.forward_kinematics(q).map(|f| [f.hand.x, f.hand.y]))
                .collect::<Result<_>>()?,
        };
        lines.push((id.clone(), collides, points));
    }

    // Square extent around the arm's reach.
    let extent = chain.reach() * 1.1;
    let scale = (SIZE - 2.0 * MARGIN) / (2.0 * extent);
    let px = |x: f64| MARGIN + (x + extent) * scale;
    // SVG y grows downwards; world +Y is drawn upwards.
    let py = |y: f64| MARGIN + (extent - y) * scale;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#,
        s = SIZE
    );
    svg.push_str(
        "<style>.scene{fill:#dddddd;stroke:#555555}.free{fill:none;stroke:#1f77b4}\
         .collision{fill:none;stroke:#d62728}.axis{stroke:#999999}</style>\n",
    );
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
        fmt(px(-extent)),
        fmt(py(0.0)),
        fmt(px(extent)),
        fmt(py(0.0))
    );
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
        fmt(px(0.0)),
        fmt(py(-extent)),
        fmt(px(0.0)),
        fmt(py(extent))
    );
    for s in &scene.spheres {
        let _ = writeln!(
            svg,
            r#"<circle class="scene" cx="{}" cy="{}" r="{}"/>"#,
            fmt(px(s.center[0])),
            fmt(py(s.center[1])),
            fmt(s.radius * scale)
        );
    }
    let mut csv = String::from("motion,collides,point,x,y\n");
    for (id, collides, pts) in &lines {
        let class = if *collides { "collision" } else { "free" };
        let coords: Vec<String> = pts
            .iter()
            .map(|p| format!("{},{}", fmt(px(p[0])), fmt(py(p[1]))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="{class}" data-motion="{id}" points="{}"/>"#,
            coords.join(" ")
        );
        for (i, p) in pts.iter().enumerate() {
            let _ = writeln!(csv, "{id},{},{i},{},{}", u8::from(*collides), p[0], p[1]);
        }
    }
    svg.push_str("</svg>\n");
    Ok(Plot { svg, csv })
}

/// Fraction of plotted hand points (last point of each motion's polyline)
/// that fall inside the X-Y disc of any sphere.
pub fn hand_points_over_spheres(csv: &str, scene: &Scene) -> f64 {
    let mut last: Vec<(String, f64, f64)> = Vec::new();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            continue;
        }
        let (Ok(x), Ok(y)) = (cols[3].parse::<f64>(), cols[4].parse::<f64>()) else {
            continue;
        };
        match last.last_mut() {
            Some(l) if l.0 == cols[0] => {
                l.1 = x;
                l.2 = y;
            }
            _ => last.push((cols[0].to_string(), x, y)),
        }
    }
    if last.is_empty() {
        return 0.0;
    }
    let inside = last
        .iter()
        .filter(|(_, x, y)| {
            scene.spheres.iter().any(|s| {
                let dx = x - s.center[0];
                let dy = y - s.center[1];
                (dx * dx + dy * dy).sqrt() <= s.radius
            })
        })
        .count();
    inside as f64 / last.len() as f64
}
