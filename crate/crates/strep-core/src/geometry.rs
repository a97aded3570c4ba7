//! Pose representations, rigid transforms, and point-set containers.

use crate::error::{Error, Result};

/// Spatial dimension of a sequence. Fixed per dataset.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn size(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    /// Number of pose parameters: translation + rotation angles.
    pub fn pose_params(self) -> usize {
        match self {
            Dim::Two => 3,
            Dim::Three => 6,
        }
    }

    pub fn from_size(d: usize) -> Result<Dim> {
        match d {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            _ => Err(Error::usage(format!("dimension must be 2 or 3, got {d}"))),
        }
    }
}

/// One frame's sensor-local observation: `n` points stored row-major,
/// plus the sensor origin expressed in the same local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: Dim,
    points: Vec<f64>,
    sensor_origin: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: Dim, points: Vec<f64>) -> Result<PointSet> {
        Self::with_origin(dim, points, vec![0.0; dim.size()])
    }

    pub fn with_origin(dim: Dim, points: Vec<f64>, sensor_origin: Vec<f64>) -> Result<PointSet> {
        let d = dim.size();
        if points.is_empty() || !points.len().is_multiple_of(d) {
            return Err(Error::usage(format!(
                "point buffer length {} is not a positive multiple of {d}",
                points.len()
            )));
        }
        if sensor_origin.len() != d {
            return Err(Error::usage("sensor origin dimension mismatch"));
        }
        if points.iter().chain(&sensor_origin).any(|v| !v.is_finite()) {
            return Err(Error::usage("non-finite coordinate in point set"));
        }
        Ok(PointSet {
            dim,
            points,
            sensor_origin,
        })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim.size()
    }

    pub fn is_empty(&self) -> bool {
        false // n >= 1 by construction
    }

    /// Flat row-major coordinate buffer.
    pub fn coords(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim.size();
        &self.points[i * d..(i + 1) * d]
    }

    pub fn sensor_origin(&self) -> &[f64] {
        &self.sensor_origin
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim.size())
    }
}

/// Rigid sensor pose: translation plus 1 angle (2D) or Z-Y-X intrinsic
/// Euler angles (3D). Angles are unconstrained reals; wrap only for display.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    dim: Dim,
    p: [f64; 6], // 2D uses p[0..3] = [tx, ty, theta]; 3D = [tx,ty,tz, yaw,pitch,roll]
}

impl Pose {
    pub fn identity(dim: Dim) -> Pose {
        Pose { dim, p: [0.0; 6] }
    }

    pub fn from_params(dim: Dim, params: &[f64]) -> Result<Pose> {
        if params.len() != dim.pose_params() {
            return Err(Error::usage(format!(
                "pose needs {} parameters, got {}",
                dim.pose_params(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("non-finite pose parameter"));
        }
        let mut p = [0.0; 6];
        p[..params.len()].copy_from_slice(params);
        Ok(Pose { dim, p })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    /// `[tx, ty, theta]` or `[tx, ty, tz, yaw, pitch, roll]`.
    pub fn params(&self) -> &[f64] {
        &self.p[..self.dim.pose_params()]
    }

    pub fn translation(&self) -> &[f64] {
        &self.p[..self.dim.size()]
    }

    /// Row-major `dim x dim` rotation matrix.
    pub fn rotation_matrix(&self) -> Vec<f64> {
        match self.dim {
            Dim::Two => {
                let (s, c) = self.p[2].sin_cos();
                vec![c, -s, s, c]
            }
            Dim::Three => {
                let m = rot3(self.p[3], self.p[4], self.p[5]);
                m.to_vec()
            }
        }
    }

    pub fn apply_point(&self, pt: &[f64], out: &mut [f64]) {
        match self.dim {
            Dim::Two => {
                let (s, c) = self.p[2].sin_cos();
                out[0] = c * pt[0] - s * pt[1] + self.p[0];
                out[1] = s * pt[0] + c * pt[1] + self.p[1];
            }
            Dim::Three => {
                let r = rot3(self.p[3], self.p[4], self.p[5]);
                for i in 0..3 {
                    out[i] = r[3 * i] * pt[0] + r[3 * i + 1] * pt[1] + r[3 * i + 2] * pt[2]
                        + self.p[i];
                }
            }
        }
    }

    /// Composition: `apply(compose(a,b), x) == apply(a, apply(b, x))`.
    pub fn compose(&self, other: &Pose) -> Result<Pose> {
        if self.dim != other.dim {
            return Err(Error::usage("pose dimension mismatch in compose"));
        }
        match self.dim {
            Dim::Two => {
                let mut t = [0.0; 2];
                self.apply_point(&other.p[..2], &mut t);
                Pose::from_params(Dim::Two, &[t[0], t[1], self.p[2] + other.p[2]])
            }
            Dim::Three => {
                let ra = rot3(self.p[3], self.p[4], self.p[5]);
                let rb = rot3(other.p[3], other.p[4], other.p[5]);
                let mut r = [0.0; 9];
                for i in 0..3 {
                    for j in 0..3 {
                        r[3 * i + j] = (0..3).map(|k| ra[3 * i + k] * rb[3 * k + j]).sum();
                    }
                }
                let mut t = [0.0; 3];
                self.apply_point(&other.p[..3], &mut t);
                let (yaw, pitch, roll) = euler_zyx_from_rot3(&r);
                Pose::from_params(Dim::Three, &[t[0], t[1], t[2], yaw, pitch, roll])
            }
        }
    }

    pub fn inverse(&self) -> Pose {
        match self.dim {
            Dim::Two => {
                let (s, c) = self.p[2].sin_cos();
                let tx = -(c * self.p[0] + s * self.p[1]);
                let ty = -(-s * self.p[0] + c * self.p[1]);
                Pose {
                    dim: Dim::Two,
                    p: [tx, ty, -self.p[2], 0.0, 0.0, 0.0],
                }
            }
            Dim::Three => {
                let r = rot3(self.p[3], self.p[4], self.p[5]);
                // R^-1 = R^T, t' = -R^T t
                let mut t = [0.0; 3];
                for i in 0..3 {
                    t[i] = -(r[i] * self.p[0] + r[3 + i] * self.p[1] + r[6 + i] * self.p[2]);
                }
                let rt = [r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]];
                let (yaw, pitch, roll) = euler_zyx_from_rot3(&rt);
                Pose {
                    dim: Dim::Three,
                    p: [t[0], t[1], t[2], yaw, pitch, roll],
                }
            }
        }
    }

    /// Copy with rotation angles wrapped into `(-pi, pi]` for reporting.
    pub fn wrapped(&self) -> Pose {
        let mut p = self.p;
        let angles = match self.dim {
            Dim::Two => 2..3,
            Dim::Three => 3..6,
        };
        for i in angles {
            p[i] = wrap_angle(p[i]);
        }
        Pose { dim: self.dim, p }
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Row-major rotation from Z-Y-X intrinsic Euler angles: `R = Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn rot3(yaw: f64, pitch: f64, roll: f64) -> [f64; 9] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    [
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    ]
}

/// Recover `(yaw, pitch, roll)` from a row-major rotation matrix.
/// Degenerate near pitch = ±pi/2 (accepted: sensor motion stays far from it).
pub fn euler_zyx_from_rot3(r: &[f64; 9]) -> (f64, f64, f64) {
    let sp = (-r[6]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let cp = (1.0 - sp * sp).sqrt();
    if cp > 1e-12 {
        (r[3].atan2(r[0]), pitch, r[7].atan2(r[8]))
    } else {
        // Gimbal lock: yaw and roll are coupled; put everything into yaw.
        ((-r[1]).atan2(r[4]), pitch, 0.0)
    }
}

/// Transform every point and the sensor origin of `pts` by `pose`.
pub fn apply_pose(pose: &Pose, pts: &PointSet) -> Result<PointSet> {
    if pose.dim() != pts.dim() {
        return Err(Error::usage("pose/point-set dimension mismatch"));
    }
    let d = pts.dim().size();
    let mut out = vec![0.0; pts.coords().len()];
    for (src, dst) in pts.iter().zip(out.chunks_exact_mut(d)) {
        pose.apply_point(src, dst);
    }
    let mut origin = vec![0.0; d];
    pose.apply_point(pts.sensor_origin(), &mut origin);
    PointSet::with_origin(pts.dim(), out, origin)
}

/// A sequence of frames brought into a common world frame; the transformed
/// sensor origins live in each frame's `sensor_origin`.
#[derive(Clone, Debug)]
pub struct GlobalScene {
    dim: Dim,
    frames: Vec<PointSet>,
}

impl GlobalScene {
    /// Wrap frames whose coordinates (and sensor origins) are already in a
    /// common world frame.
    pub fn from_frames(frames: Vec<PointSet>) -> Result<GlobalScene> {
        if frames.is_empty() {
            return Err(Error::usage("scene needs at least one frame"));
        }
        let dim = frames[0].dim();
        if frames.iter().any(|f| f.dim() != dim) {
            return Err(Error::usage("mixed dimensions across frames"));
        }
        Ok(GlobalScene { dim, frames })
    }

    /// Transform each local frame by its pose.
    pub fn from_poses(frames: &[PointSet], poses: &[Pose]) -> Result<GlobalScene> {
        if frames.is_empty() {
            return Err(Error::usage("scene needs at least one frame"));
        }
        if frames.len() != poses.len() {
            return Err(Error::usage("frame/pose count mismatch"));
        }
        let dim = frames[0].dim();
        if frames.iter().any(|f| f.dim() != dim) {
            return Err(Error::usage("mixed dimensions across frames"));
        }
        let transformed = frames
            .iter()
            .zip(poses)
            .map(|(f, p)| apply_pose(p, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(GlobalScene {
            dim,
            frames: transformed,
        })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> &PointSet {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[PointSet] {
        &self.frames
    }

    /// Transformed sensor origin of frame `i`.
    pub fn origin(&self, i: usize) -> &[f64] {
        self.frames[i].sensor_origin()
    }
}
