//! SVG emitters: trajectory overlays (ground truth vs estimate) and the
//! assembled global scene with one color per frame. 3D inputs are drawn as
//! top-down XY projections.

use std::fmt::Write as _;

use strep_core::error::{Error, Result};
use strep_core::geometry::{GlobalScene, Pose};

struct Bounds {
    min_x: f64,
    min_y: f64,
    max_x: f64,
    max_y: f64,
}

impl Bounds {
    fn new() -> Bounds {
        Bounds {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        }
    }

    fn add(&mut self, x: f64, y: f64) {
        self.min_x = self.min_x.min(x);
        self.min_y = self.min_y.min(y);
        self.max_x = self.max_x.max(x);
        self.max_y = self.max_y.max(y);
    }

    /// `(origin_x, origin_y, side)` of a padded square viewport.
    fn viewport(&self) -> (f64, f64, f64) {
        let w = (self.max_x - self.min_x).max(1e-6);
        let h = (self.max_y - self.min_y).max(1e-6);
        let side = w.max(h) * 1.1;
        let cx = (self.min_x + self.max_x) / 2.0;
        let cy = (self.min_y + self.max_y) / 2.0;
        (cx - side / 2.0, cy - side / 2.0, side)
    }
}

fn open_svg(out: &mut String, b: &Bounds) -> f64 {
    let (ox, oy, side) = b.viewport();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"640\" \
         viewBox=\"{ox:.3} {oy:.3} {side:.3} {side:.3}\">"
    );
    let _ = writeln!(
        out,
        "<rect x=\"{ox:.3}\" y=\"{oy:.3}\" width=\"{side:.3}\" height=\"{side:.3}\" fill=\"white\"/>"
    );
    side
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, width: f64) {
    let mut attr = String::new();
    for (x, y) in pts {
        let _ = write!(attr, "{x:.3},{y:.3} ");
    }
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width:.4}\"/>",
        attr.trim_end()
    );
}

fn dots(out: &mut String, pts: &[(f64, f64)], color: &str, r: f64) {
    for (x, y) in pts {
        let _ = writeln!(
            out,
            "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"{r:.4}\" fill=\"{color}\"/>"
        );
    }
}

fn frame_color(i: usize, k: usize) -> String {
    let hue = 360.0 * i as f64 / k.max(1) as f64;
    format!("hsl({hue:.0},70%,45%)")
}

fn positions(poses: &[Pose]) -> Vec<(f64, f64)> {
    poses
        .iter()
        .map(|p| {
            let t = p.translation();
            (t[0], t[1])
        })
        .collect()
}

/// Ground truth (gray) vs estimated (blue) trajectory overlay. The caller
/// is expected to gauge-align the estimate first when a comparison is
/// intended.
pub fn svg_trajectories(gt: Option<&[Pose]>, est: &[Pose]) -> Result<String> {
    if est.is_empty() {
        return Err(Error::usage("no poses to plot"));
    }
    let est_xy = positions(est);
    let gt_xy = gt.map(positions);
    let mut b = Bounds::new();
    for &(x, y) in est_xy.iter().chain(gt_xy.iter().flatten()) {
        b.add(x, y);
    }
    let mut out = String::new();
    let side = open_svg(&mut out, &b);
    if let Some(gt_xy) = &gt_xy {
        polyline(&mut out, gt_xy, "#999999", side / 250.0);
        dots(&mut out, gt_xy, "#999999", side / 120.0);
    }
    polyline(&mut out, &est_xy, "#1f5fbf", side / 250.0);
    dots(&mut out, &est_xy, "#1f5fbf", side / 120.0);
    let (ox, oy, _) = b.viewport();
    let _ = writeln!(
        out,
        "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"{:.3}\" fill=\"#1f5fbf\">estimate</text>",
        ox + side * 0.03,
        oy + side * 0.05,
        side / 30.0
    );
    if gt.is_some() {
        let _ = writeln!(
            out,
            "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"{:.3}\" fill=\"#999999\">ground truth</text>",
            ox + side * 0.03,
            oy + side * 0.09,
            side / 30.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// The assembled global scene: every frame's transformed points in one
/// plot, colored by frame index.
pub fn svg_scene(scene: &GlobalScene) -> Result<String> {
    let k = scene.len();
    let mut b = Bounds::new();
    for i in 0..k {
        for p in scene.frame(i).iter() {
            b.add(p[0], p[1]);
        }
    }
    let mut out = String::new();
    let side = open_svg(&mut out, &b);
    for i in 0..k {
        let color = frame_color(i, k);
        let pts: Vec<(f64, f64)> = scene.frame(i).iter().map(|p| (p[0], p[1])).collect();
        dots(&mut out, &pts, &color, side / 300.0);
        let o = scene.origin(i);
        let _ = writeln!(
            out,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.4}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{:.4}\"/>",
            o[0],
            o[1],
            side / 100.0,
            side / 400.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use strep_core::geometry::{Dim, PointSet};

    fn poses(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| Pose::from_params(Dim::Two, &[i as f64, (i * i) as f64, 0.1]).unwrap())
            .collect()
    }

    fn assert_well_formed(svg: &str) {
        let mut reader = quick_xml::Reader::from_str(svg);
        let mut depth = 0i32;
        loop {
            match reader.read_event() {
                Ok(quick_xml::events::Event::Start(_)) => depth += 1,
                Ok(quick_xml::events::Event::End(_)) => depth -= 1,
                Ok(quick_xml::events::Event::Eof) => break,
                Ok(_) => {}
                Err(e) => panic!("XML error: {e}"),
            }
        }
        assert_eq!(depth, 0, "unbalanced elements");
    }

    #[test]
    fn trajectory_svg_is_well_formed_xml() {
        let gt = poses(6);
        let est = poses(6);
        let svg = svg_trajectories(Some(&gt), &est).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_well_formed(&svg);
        let no_gt = svg_trajectories(None, &est).unwrap();
        assert_well_formed(&no_gt);
        assert!(!no_gt.contains("ground truth"));
    }

    #[test]
    fn scene_svg_colors_every_frame() {
        let frames: Vec<PointSet> = (0..3)
            .map(|i| {
                PointSet::new(
                    Dim::Two,
                    vec![i as f64, 0.0, i as f64 + 0.5, 1.0, i as f64, 2.0],
                )
                .unwrap()
            })
            .collect();
        let scene = GlobalScene::from_frames(frames).unwrap();
        let svg = svg_scene(&scene).unwrap();
        assert_well_formed(&svg);
        assert!(svg.contains("hsl(0"));
        assert!(svg.contains("hsl(120"));
        assert!(svg.contains("hsl(240"));
    }

    #[test]
    fn degenerate_single_pose_still_plots() {
        let est = poses(1);
        let svg = svg_trajectories(None, &est).unwrap();
        assert_well_formed(&svg);
    }
}
