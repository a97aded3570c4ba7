//! Trajectory evaluation: absolute trajectory error and point-wise
//! registration distance, both after gauge alignment.
//!
//! Every loss term is invariant under one common rigid motion of all poses,
//! so estimated trajectories are defined only up to that gauge. Comparison
//! against ground truth therefore first solves for the best-fit rigid
//! transform (rotation + translation, no scale) of the estimated positions
//! onto the true ones — or anchors frame 1, if requested.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{euler_zyx_from_rot3, Dim, PointSet, Pose};

/// How the gauge is fixed before computing errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anchor {
    /// Make estimated frame 1 coincide with ground-truth frame 1.
    First,
    /// Least-squares best-fit rigid alignment of all positions (default).
    Fit,
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Anchor::First => write!(f, "first"),
            Anchor::Fit => write!(f, "fit"),
        }
    }
}

impl std::str::FromStr for Anchor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Anchor> {
        match s {
            "first" => Ok(Anchor::First),
            "fit" => Ok(Anchor::Fit),
            other => Err(Error::usage(format!(
                "anchor must be `first` or `fit`, got `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub ate: f64,
    /// Mean unsquared point-to-point distance (world units per point).
    pub point_dist: f64,
    /// Sum of squared point-to-point distances over all frames.
    pub point_dist_sq: f64,
    /// Per-frame translation error after alignment.
    pub per_frame: Vec<f64>,
    /// The gauge transform applied to the estimated poses.
    pub alignment: Pose,
    pub anchor: Anchor,
}

fn check_lengths(est: &[Pose], gt: &[Pose]) -> Result<Dim> {
    if est.len() != gt.len() {
        return Err(Error::usage("estimated/ground-truth pose counts differ"));
    }
    if est.is_empty() {
        return Err(Error::usage("cannot evaluate empty trajectories"));
    }
    let dim = est[0].dim();
    if est.iter().chain(gt).any(|p| p.dim() != dim) {
        return Err(Error::usage("mixed pose dimensions"));
    }
    Ok(dim)
}

fn centroid(poses: &[Pose], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d];
    for p in poses {
        for (ci, ti) in c.iter_mut().zip(p.translation()) {
            *ci += ti;
        }
    }
    c.iter_mut().for_each(|v| *v /= poses.len() as f64);
    c
}

/// Best-fit rigid transform mapping estimated positions onto ground-truth
/// positions. Degenerate inputs (all estimated positions coincide) fall back
/// to a translation-only alignment.
pub fn align_trajectories(est: &[Pose], gt: &[Pose]) -> Result<Pose> {
    let dim = check_lengths(est, gt)?;
    let d = dim.size();
    let ce = centroid(est, d);
    let cg = centroid(gt, d);

    let spread: f64 = est
        .iter()
        .map(|p| {
            p.translation()
                .iter()
                .zip(&ce)
                .map(|(t, c)| (t - c) * (t - c))
                .sum::<f64>()
        })
        .sum();
    if spread < 1e-18 {
        let mut params = vec![0.0; dim.pose_params()];
        for i in 0..d {
            params[i] = cg[i] - ce[i];
        }
        return Pose::from_params(dim, &params);
    }

    match dim {
        Dim::Two => {
            let (mut dot, mut cross) = (0.0, 0.0);
            for (e, g) in est.iter().zip(gt) {
                let p = [e.translation()[0] - ce[0], e.translation()[1] - ce[1]];
                let q = [g.translation()[0] - cg[0], g.translation()[1] - cg[1]];
                dot += p[0] * q[0] + p[1] * q[1];
                cross += p[0] * q[1] - p[1] * q[0];
            }
            let theta = cross.atan2(dot);
            let (s, c) = theta.sin_cos();
            let tx = cg[0] - (c * ce[0] - s * ce[1]);
            let ty = cg[1] - (s * ce[0] + c * ce[1]);
            Pose::from_params(dim, &[tx, ty, theta])
        }
        Dim::Three => {
            // Cross-covariance Σ p qᵀ over centered positions.
            let mut h = [0.0f64; 9];
            for (e, g) in est.iter().zip(gt) {
                let p: Vec<f64> = e.translation().iter().zip(&ce).map(|(t, c)| t - c).collect();
                let q: Vec<f64> = g.translation().iter().zip(&cg).map(|(t, c)| t - c).collect();
                for r in 0..3 {
                    for c2 in 0..3 {
                        h[3 * r + c2] += p[r] * q[c2];
                    }
                }
            }
            let r = rotation_from_cross_covariance(&h);
            let (yaw, pitch, roll) = euler_zyx_from_rot3(&r);
            let mut t = [0.0; 3];
            for k in 0..3 {
                t[k] = cg[k] - (r[3 * k] * ce[0] + r[3 * k + 1] * ce[1] + r[3 * k + 2] * ce[2]);
            }
            Pose::from_params(dim, &[t[0], t[1], t[2], yaw, pitch, roll])
        }
    }
}

/// Horn's closed-form absolute orientation: the optimal rotation is the unit
/// quaternion maximizing qᵀNq, i.e. the top eigenvector of the symmetric 4×4
/// built from the cross-covariance.
fn rotation_from_cross_covariance(h: &[f64; 9]) -> [f64; 9] {
    let (sxx, sxy, sxz) = (h[0], h[1], h[2]);
    let (syx, syy, syz) = (h[3], h[4], h[5]);
    let (szx, szy, szz) = (h[6], h[7], h[8]);
    let n = [
        sxx + syy + szz,
        syz - szy,
        szx - sxz,
        sxy - syx,
        syz - szy,
        sxx - syy - szz,
        sxy + syx,
        szx + sxz,
        szx - sxz,
        sxy + syx,
        -sxx + syy - szz,
        syz + szy,
        sxy - syx,
        szx + sxz,
        syz + szy,
        -sxx - syy + szz,
    ];
    let (vals, vecs) = jacobi_eigen_4(&n);
    let mut best = 0;
    for i in 1..4 {
        if vals[i] > vals[best] {
            best = i;
        }
    }
    let q = [vecs[best], vecs[4 + best], vecs[8 + best], vecs[12 + best]];
    quat_to_rot(&q)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric 4×4 matrix.
/// Returns (eigenvalues, eigenvectors-as-columns), deterministic.
fn jacobi_eigen_4(a_in: &[f64; 16]) -> ([f64; 4], [f64; 16]) {
    let mut a = *a_in;
    let mut v = [0.0f64; 16];
    for i in 0..4 {
        v[4 * i + i] = 1.0;
    }
    for _ in 0..64 {
        let mut off = 0.0;
        for p in 0..4 {
            for q in p + 1..4 {
                off += a[4 * p + q] * a[4 * p + q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..4 {
            for q in p + 1..4 {
                let apq = a[4 * p + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[4 * p + p];
                let aqq = a[4 * q + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let akp = a[4 * k + p];
                    let akq = a[4 * k + q];
                    a[4 * k + p] = c * akp - s * akq;
                    a[4 * k + q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let apk = a[4 * p + k];
                    let aqk = a[4 * q + k];
                    a[4 * p + k] = c * apk - s * aqk;
                    a[4 * q + k] = s * apk + c * aqk;
                }
                for k in 0..4 {
                    let vkp = v[4 * k + p];
                    let vkq = v[4 * k + q];
                    v[4 * k + p] = c * vkp - s * vkq;
                    v[4 * k + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ([a[0], a[5], a[10], a[15]], v)
}

fn quat_to_rot(q: &[f64; 4]) -> [f64; 9] {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm);
    [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

/// Gauge transform for the chosen anchor mode.
pub fn alignment(est: &[Pose], gt: &[Pose], anchor: Anchor) -> Result<Pose> {
    check_lengths(est, gt)?;
    match anchor {
        Anchor::Fit => align_trajectories(est, gt),
        Anchor::First => gt[0].compose(&est[0].inverse()),
    }
}

fn translation_errors(est: &[Pose], gt: &[Pose], align: &Pose) -> Vec<f64> {
    let d = align.dim().size();
    let mut out = Vec::with_capacity(est.len());
    let mut moved = vec![0.0; d];
    for (e, g) in est.iter().zip(gt) {
        align.apply_point(e.translation(), &mut moved);
        let err = moved
            .iter()
            .zip(g.translation())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        out.push(err);
    }
    out
}

/// Root-mean-square translation error after best-fit gauge alignment.
pub fn ate(est: &[Pose], gt: &[Pose]) -> Result<f64> {
    ate_anchored(est, gt, Anchor::Fit)
}

pub fn ate_anchored(est: &[Pose], gt: &[Pose], anchor: Anchor) -> Result<f64> {
    let align = alignment(est, gt, anchor)?;
    let errs = translation_errors(est, gt, &align);
    Ok((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt())
}

/// Mean unsquared distance between corresponding points (same source point
/// under estimated vs true pose), gauge-aligned first.
pub fn point_distance(est: &[Pose], gt: &[Pose], frames: &[PointSet]) -> Result<f64> {
    Ok(evaluate(est, gt, frames, Anchor::Fit)?.point_dist)
}

/// Full evaluation over a sequence.
pub fn evaluate(
    est: &[Pose],
    gt: &[Pose],
    frames: &[PointSet],
    anchor: Anchor,
) -> Result<EvalReport> {
    let dim = check_lengths(est, gt)?;
    if frames.len() != est.len() {
        return Err(Error::usage("frame count does not match pose count"));
    }
    if frames.iter().any(|f| f.dim() != dim) {
        return Err(Error::usage("frame dimension does not match poses"));
    }
    let align = alignment(est, gt, anchor)?;
    let per_frame = translation_errors(est, gt, &align);
    let ate = (per_frame.iter().map(|e| e * e).sum::<f64>() / per_frame.len() as f64).sqrt();

    let d = dim.size();
    let mut sum_dist = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for ((e, g), frame) in est.iter().zip(gt).zip(frames) {
        let aligned = align.compose(e)?;
        for p in frame.iter() {
            aligned.apply_point(p, &mut a);
            g.apply_point(p, &mut b);
            let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            sum_sq += sq;
            sum_dist += sq.sqrt();
            count += 1;
        }
    }
    Ok(EvalReport {
        ate,
        point_dist: sum_dist / count as f64,
        point_dist_sq: sum_sq,
        per_frame,
        alignment: align,
        anchor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random_traj(n: usize, seed: u64) -> Vec<Pose> {
        let mut rng = stream(seed, 500);
        (0..n)
            .map(|_| {
                Pose::from_params(
                    Dim::Two,
                    &[
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-3.0..3.0),
                    ],
                )
                .unwrap()
            })
            .collect()
    }

    fn random_traj_3d(n: usize, seed: u64) -> Vec<Pose> {
        let mut rng = stream(seed, 501);
        (0..n)
            .map(|_| {
                let p: Vec<f64> = (0..6)
                    .map(|i| {
                        if i < 3 {
                            rng.random_range(-10.0..10.0)
                        } else {
                            rng.random_range(-1.2..1.2)
                        }
                    })
                    .collect();
                Pose::from_params(Dim::Three, &p).unwrap()
            })
            .collect()
    }

    #[test]
    fn identical_trajectories_align_to_identity() {
        let t = random_traj(8, 1);
        let a = align_trajectories(&t, &t).unwrap();
        for (v, id) in a.params().iter().zip(Pose::identity(Dim::Two).params()) {
            assert!((v - id).abs() < 1e-9);
        }
        assert!(ate(&t, &t).unwrap() < 1e-12);
    }

    #[test]
    fn rigid_gauge_motion_is_fully_removed() {
        let gt = random_traj(10, 2);
        let motion = Pose::from_params(Dim::Two, &[33.0, -21.0, 0.8]).unwrap();
        let est: Vec<Pose> = gt.iter().map(|p| motion.compose(p).unwrap()).collect();
        assert!(ate(&est, &gt).unwrap() < 1e-9);
    }

    #[test]
    fn rigid_gauge_motion_is_fully_removed_3d() {
        let gt = random_traj_3d(12, 3);
        let motion = Pose::from_params(Dim::Three, &[3.0, -2.0, 1.0, 0.7, 0.4, -0.3]).unwrap();
        let est: Vec<Pose> = gt.iter().map(|p| motion.compose(p).unwrap()).collect();
        assert!(ate(&est, &gt).unwrap() < 1e-9, "{}", ate(&est, &gt).unwrap());
    }

    #[test]
    fn constant_offset_gives_zero_ate() {
        let gt = random_traj(6, 4);
        let est: Vec<Pose> = gt
            .iter()
            .map(|p| {
                let mut q = p.params().to_vec();
                q[0] += 17.0;
                q[1] -= 4.0;
                Pose::from_params(Dim::Two, &q).unwrap()
            })
            .collect();
        assert!(ate(&est, &gt).unwrap() < 1e-9);
    }

    #[test]
    fn single_bad_frame_among_sixteen() {
        // One frame off by 4 px among 16 perfect ones: RMSE ≈ 4/√16 = 1,
        // slightly perturbed by the refit.
        let gt = random_traj(16, 5);
        let mut est = gt.clone();
        let mut p = est[7].params().to_vec();
        p[0] += 4.0;
        est[7] = Pose::from_params(Dim::Two, &p).unwrap();
        let a = ate(&est, &gt).unwrap();
        assert!(a < 1.05 && a > 0.8, "ate {a}");
    }

    #[test]
    fn gauge_invariance_of_both_metrics() {
        let mut rng = stream(77, 7);
        let gt = random_traj(9, 8);
        let est = random_traj(9, 9);
        let frames: Vec<PointSet> = (0..9)
            .map(|i| {
                let pts = (0..24)
                    .map(|_| rng.random_range(-20.0..20.0))
                    .collect();
                let _ = i;
                PointSet::new(Dim::Two, pts).unwrap()
            })
            .collect();
        let base = evaluate(&est, &gt, &frames, Anchor::Fit).unwrap();
        for trial in 0..5 {
            let motion = Pose::from_params(
                Dim::Two,
                &[
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-3.0..3.0),
                ],
            )
            .unwrap();
            let moved: Vec<Pose> = est.iter().map(|p| motion.compose(p).unwrap()).collect();
            let r = evaluate(&moved, &gt, &frames, Anchor::Fit).unwrap();
            assert!((r.ate - base.ate).abs() < 1e-9, "trial {trial}");
            assert!((r.point_dist - base.point_dist).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_stationary_estimate_gets_translation_alignment() {
        let est = vec![Pose::from_params(Dim::Two, &[5.0, 5.0, 0.3]).unwrap(); 4];
        let gt = random_traj(4, 10);
        let a = align_trajectories(&est, &gt).unwrap();
        // Rotation-free fallback.
        assert_eq!(a.params()[2], 0.0);
        let cg = centroid(&gt, 2);
        assert!((a.params()[0] - (cg[0] - 5.0)).abs() < 1e-12);
    }

    #[test]
    fn half_turn_point_distance_doubles_centroid_distance() {
        // Points with centroid at the origin; estimate is a 180° turn.
        let pts = vec![3.0, 0.0, -3.0, 0.0, 0.0, 2.0, 0.0, -2.0];
        let frame = PointSet::new(Dim::Two, pts.clone()).unwrap();
        let est = vec![Pose::from_params(Dim::Two, &[0.0, 0.0, std::f64::consts::PI]).unwrap()];
        let gt = vec![Pose::identity(Dim::Two)];
        let r = evaluate(&est, &gt, &[frame], Anchor::Fit).unwrap();
        let mean_centroid_dist = (3.0 + 3.0 + 2.0 + 2.0) / 4.0;
        assert!((r.point_dist - 2.0 * mean_centroid_dist).abs() < 1e-9);
    }

    #[test]
    fn anchor_first_pins_first_frame() {
        let gt = random_traj(5, 11);
        let est = random_traj(5, 12);
        let r = evaluate(&est, &gt, &dummy_frames(5), Anchor::First).unwrap();
        assert!(r.per_frame[0] < 1e-9);
    }

    fn dummy_frames(n: usize) -> Vec<PointSet> {
        (0..n)
            .map(|i| PointSet::new(Dim::Two, vec![i as f64, 1.0, 2.0, 3.0]).unwrap())
            .collect()
    }

    #[test]
    fn length_mismatch_is_usage_error() {
        let a = random_traj(4, 13);
        let b = random_traj(5, 14);
        assert!(ate(&a, &b).is_err());
    }

    #[test]
    fn fit_alignment_matches_grid_refinement_oracle() {
        let gt = random_traj(12, 15);
        let mut rng = stream(16, 0);
        let est: Vec<Pose> = gt
            .iter()
            .map(|p| {
                let mut q = p.params().to_vec();
                q[0] += rng.random_range(-6.0..6.0);
                q[1] += rng.random_range(-6.0..6.0);
                Pose::from_params(Dim::Two, &q).unwrap()
            })
            .collect();
        let closed = align_trajectories(&est, &gt).unwrap();
        let sse = |theta: f64| {
            // Best translation given θ is the centroid correction.
            let (s, c) = theta.sin_cos();
            let ce = centroid(&est, 2);
            let cg = centroid(&gt, 2);
            let mut acc = 0.0;
            for (e, g) in est.iter().zip(&gt) {
                let p = [e.translation()[0] - ce[0], e.translation()[1] - ce[1]];
                let q = [g.translation()[0] - cg[0], g.translation()[1] - cg[1]];
                let rx = c * p[0] - s * p[1] - q[0];
                let ry = s * p[0] + c * p[1] - q[1];
                acc += rx * rx + ry * ry;
            }
            acc
        };
        // Coarse grid then golden-section refinement.
        let mut best_t = 0.0;
        let mut best_v = f64::INFINITY;
        for k in 0..3600 {
            let t = -std::f64::consts::PI + k as f64 * (2.0 * std::f64::consts::PI / 3600.0);
            let v = sse(t);
            if v < best_v {
                best_v = v;
                best_t = t;
            }
        }
        let (mut lo, mut hi) = (best_t - 0.002, best_t + 0.002);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if sse(m1) < sse(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let oracle_theta = 0.5 * (lo + hi);
        assert!(
            (sse(closed.params()[2]) - sse(oracle_theta)).abs() < 1e-6,
            "closed {} oracle {}",
            closed.params()[2],
            oracle_theta
        );
        assert!(sse(closed.params()[2]) <= sse(oracle_theta) + 1e-9);
    }
}
