//! Synthetic 2D LiDAR benchmark: procedural occupancy environments, random
//! sensor trajectories under bounded per-step motion, and ray-cast scans
//! with ground-truth poses.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Dim, PointSet, Pose};
use crate::rng::{derive_seed, stream};

/// Binary occupancy grid; `true` = obstacle. Closed world: the boundary is
/// always occupied.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub occ: Vec<bool>,
}

/// Side length of the built-in environments, in pixels.
pub const ENV_SIZE: usize = 400;
const WALL: usize = 8;

impl EnvironmentMap {
    pub fn new(name: &str, width: usize, height: usize, occ: Vec<bool>) -> Result<EnvironmentMap> {
        if width < 3 || height < 3 || occ.len() != width * height {
            return Err(Error::usage("environment grid size mismatch"));
        }
        let env = EnvironmentMap {
            name: name.to_string(),
            width,
            height,
            occ,
        };
        for x in 0..width {
            if !env.occ[x] || !env.occ[(height - 1) * width + x] {
                return Err(Error::usage("environment boundary must be occupied"));
            }
        }
        for y in 0..height {
            if !env.occ[y * width] || !env.occ[y * width + width - 1] {
                return Err(Error::usage("environment boundary must be occupied"));
            }
        }
        if !env.occ.iter().any(|&o| !o) {
            return Err(Error::usage("environment has no free space"));
        }
        Ok(env)
    }

    /// Cell occupancy; anything outside the grid counts as occupied.
    pub fn occupied(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return true;
        }
        self.occ[y as usize * self.width + x as usize]
    }

    /// Occupancy of the cell containing a continuous position.
    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        self.occupied(x.floor() as i64, y.floor() as i64)
    }

    /// True when every cell within Euclidean distance `r` of (x, y) is free.
    pub fn clearance(&self, x: f64, y: f64, r: f64) -> bool {
        let (cx, cy) = (x.floor() as i64, y.floor() as i64);
        let ri = r.ceil() as i64;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ((dx * dx + dy * dy) as f64) <= r * r && self.occupied(cx + dx, cy + dy) {
                    return false;
                }
            }
        }
        true
    }

    fn blank(name: &str) -> EnvironmentMap {
        let (w, h) = (ENV_SIZE, ENV_SIZE);
        let mut occ = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if x < WALL || y < WALL || x >= w - WALL || y >= h - WALL {
                    occ[y * w + x] = true;
                }
            }
        }
        EnvironmentMap {
            name: name.to_string(),
            width: w,
            height: h,
            occ,
        }
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.occ[y * self.width + x] = true;
            }
        }
    }

    fn clear_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.occ[y * self.width + x] = false;
            }
        }
    }

    /// Rectangular ring corridor around a central block.
    pub fn corridor_loop() -> EnvironmentMap {
        let mut env = Self::blank("corridor_loop");
        env.fill_rect(120, 120, 280, 280);
        env
    }

    /// Two rooms split by a wall with a doorway, plus rectangular furniture.
    pub fn two_room_office() -> EnvironmentMap {
        let mut env = Self::blank("two_room_office");
        env.fill_rect(196, 0, 204, ENV_SIZE);
        env.clear_rect(196, 160, 204, 240);
        env.fill_rect(60, 60, 112, 100);
        env.fill_rect(70, 280, 120, 330);
        env.fill_rect(270, 70, 330, 110);
        env.fill_rect(290, 270, 340, 322);
        env
    }

    /// Open hall with scattered axis-aligned boxes. The raster comes from a
    /// fixed internal seed: trajectory seeds never change the map itself.
    pub fn cluttered_hall() -> EnvironmentMap {
        let mut env = Self::blank("cluttered_hall");
        let mut rng = stream(0x00C1_A77E_2ED0_u64, 0);
        for _ in 0..12 {
            let w = rng.random_range(20..56);
            let h = rng.random_range(20..56);
            let x = rng.random_range(40..ENV_SIZE - 40 - w);
            let y = rng.random_range(40..ENV_SIZE - 40 - h);
            env.fill_rect(x, y, x + w, y + h);
        }
        env
    }

    pub fn builtins() -> Vec<EnvironmentMap> {
        vec![
            Self::corridor_loop(),
            Self::two_room_office(),
            Self::cluttered_hall(),
        ]
    }

    pub fn builtin(name: &str) -> Result<EnvironmentMap> {
        match name {
            "corridor_loop" => Ok(Self::corridor_loop()),
            "two_room_office" => Ok(Self::two_room_office()),
            "cluttered_hall" => Ok(Self::cluttered_hall()),
            other => Err(Error::config(format!(
                "unknown environment `{other}` (expected corridor_loop, two_room_office, or cluttered_hall)"
            ))),
        }
    }
}

/// Motion and sensor parameters for one simulated sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub num_frames: usize,
    /// Per-step heading change bound, radians (±).
    pub rot_range: f64,
    /// Per-step translation bound, pixels.
    pub trans_range: f64,
    pub beams: usize,
    /// Field of view, radians, centered on the heading.
    pub fov: f64,
    pub max_range: f64,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            num_frames: 16,
            rot_range: 10.0_f64.to_radians(),
            trans_range: 16.0,
            beams: 128,
            fov: std::f64::consts::TAU,
            max_range: 400.0,
            seed: 0,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 2 {
            return Err(Error::config("trajectories need at least 2 frames"));
        }
        if self.beams < 8 {
            return Err(Error::config("at least 8 beams required"));
        }
        if !(self.trans_range >= 0.0 && self.rot_range >= 0.0) {
            return Err(Error::config("motion ranges must be non-negative"));
        }
        if !(self.max_range > 0.0 && self.fov > 0.0) {
            return Err(Error::config("sensor ranges must be positive"));
        }
        Ok(())
    }
}

/// One recorded sequence: sensor-local frames plus (for simulated data)
/// ground-truth poses and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub dim: Dim,
    pub frames: Vec<PointSet>,
    pub gt_poses: Option<Vec<Pose>>,
    pub env_name: Option<String>,
    pub seed: u64,
    pub generator_version: u32,
}

impl SequenceDataset {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::usage("dataset has no frames"));
        }
        if self.frames.iter().any(|f| f.dim() != self.dim) {
            return Err(Error::usage("mixed frame dimensions in dataset"));
        }
        if let Some(gt) = &self.gt_poses {
            if gt.len() != self.frames.len() {
                return Err(Error::usage("ground-truth pose count mismatch"));
            }
            if gt.iter().any(|p| p.dim() != self.dim) {
                return Err(Error::usage("ground-truth pose dimension mismatch"));
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

const START_CLEARANCE: f64 = 20.0;
const MARCH_STEP: f64 = 0.5;
const STEP_TRIES: usize = 100;
const RESTARTS: usize = 1000;

fn draw_symmetric(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound == 0.0 {
        0.0
    } else {
        rng.random_range(-bound..bound)
    }
}

fn draw_upto(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound == 0.0 {
        0.0
    } else {
        rng.random_range(0.0..bound)
    }
}

/// Every marched sample along the segment lies in free space.
fn segment_free(env: &EnvironmentMap, from: (f64, f64), to: (f64, f64)) -> bool {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let len = (dx * dx + dy * dy).sqrt();
    let steps = (len / 0.25).ceil() as usize;
    for s in 0..=steps {
        let t = if steps == 0 { 1.0 } else { s as f64 / steps as f64 };
        if env.occupied_at(from.0 + t * dx, from.1 + t * dy) {
            return false;
        }
    }
    true
}

/// Random bounded-motion trajectory: uniform start over free cells with
/// ≥ 20 px clearance, then per-step heading change within ±rot_range and
/// forward step within [0, trans_range], rejection-sampled against the map.
pub fn sample_trajectory(env: &EnvironmentMap, spec: &TrajectorySpec) -> Result<Vec<Pose>> {
    spec.validate()?;
    let mut rng = stream(spec.seed, 0x7261);
    for _restart in 0..RESTARTS {
        let mut start = None;
        for _ in 0..10_000 {
            let x = rng.random_range(0..env.width) as f64 + 0.5;
            let y = rng.random_range(0..env.height) as f64 + 0.5;
            if !env.occupied_at(x, y) && env.clearance(x, y, START_CLEARANCE) {
                start = Some((x, y));
                break;
            }
        }
        let Some(mut pos) = start else {
            continue;
        };
        let mut heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let mut poses = Vec::with_capacity(spec.num_frames);
        poses.push(Pose::from_params(Dim::Two, &[pos.0, pos.1, heading])?);

        let mut stuck = false;
        while poses.len() < spec.num_frames {
            let mut accepted = false;
            for _ in 0..STEP_TRIES {
                let new_heading = heading + draw_symmetric(&mut rng, spec.rot_range);
                let step = draw_upto(&mut rng, spec.trans_range);
                let cand = (
                    pos.0 + step * new_heading.cos(),
                    pos.1 + step * new_heading.sin(),
                );
                if segment_free(env, pos, cand) {
                    pos = cand;
                    heading = new_heading;
                    poses.push(Pose::from_params(Dim::Two, &[pos.0, pos.1, heading])?);
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                stuck = true;
                break;
            }
        }
        if !stuck {
            return Ok(poses);
        }
    }
    Err(Error::generation(format!(
        "no valid trajectory in `{}` after {RESTARTS} restarts",
        env.name
    )))
}

/// Ray-cast scan from a pose: beams evenly spaced over the field of view
/// around the heading, marched in 0.5 px steps until the first occupied
/// cell; the hit is that cell's center, reported in sensor-local
/// coordinates. Beams that exhaust `max_range` are dropped; output is
/// ordered by beam angle.
pub fn raycast_scan(env: &EnvironmentMap, pose: &Pose, spec: &TrajectorySpec) -> Result<PointSet> {
    spec.validate()?;
    if pose.dim() != Dim::Two {
        return Err(Error::usage("the simulator casts 2D scans"));
    }
    let (px, py) = (pose.translation()[0], pose.translation()[1]);
    if env.occupied_at(px, py) {
        return Err(Error::usage("scan pose is inside an obstacle"));
    }
    let heading = pose.params()[2];
    let inv = pose.inverse();
    let mut pts = Vec::new();
    let mut local = [0.0f64; 2];
    for i in 0..spec.beams {
        let ang = heading - spec.fov / 2.0 + (i as f64 + 0.5) * spec.fov / spec.beams as f64;
        let (s, c) = ang.sin_cos();
        let mut t = MARCH_STEP;
        while t <= spec.max_range {
            let (x, y) = (px + t * c, py + t * s);
            if env.occupied_at(x, y) {
                let hit = [x.floor() + 0.5, y.floor() + 0.5];
                inv.apply_point(&hit, &mut local);
                pts.extend_from_slice(&local);
                break;
            }
            t += MARCH_STEP;
        }
    }
    if pts.is_empty() {
        return Err(Error::generation(
            "degenerate frame: no beam hit an obstacle within range",
        ));
    }
    PointSet::with_origin(Dim::Two, pts, vec![0.0, 0.0])
}

/// One simulated sequence: trajectory plus a scan per pose.
pub fn generate_sequence(env: &EnvironmentMap, spec: &TrajectorySpec) -> Result<SequenceDataset> {
    let poses = sample_trajectory(env, spec)?;
    let frames = poses
        .iter()
        .map(|p| raycast_scan(env, p, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceDataset {
        dim: Dim::Two,
        frames,
        gt_poses: Some(poses),
        env_name: Some(env.name.clone()),
        seed: spec.seed,
        generator_version: 1,
    })
}

/// Deterministic benchmark suite: `per_env[e]` sequences from each
/// environment, every sequence's trajectory seed derived from (`seed`, env
/// index, sequence index). The default split over the three built-in maps
/// is 7 + 7 + 6 = 20 sequences.
pub fn generate_benchmark(
    envs: &[EnvironmentMap],
    per_env: &[usize],
    base: &TrajectorySpec,
    seed: u64,
) -> Result<Vec<SequenceDataset>> {
    if envs.is_empty() || envs.len() != per_env.len() {
        return Err(Error::usage("one sequence count per environment required"));
    }
    let mut out = Vec::with_capacity(per_env.iter().sum());
    for (e, env) in envs.iter().enumerate() {
        for t in 0..per_env[e] {
            let mut spec = base.clone();
            spec.seed = derive_seed(seed, ((e as u64) << 32) | t as u64);
            out.push(generate_sequence(env, &spec)?);
        }
    }
    Ok(out)
}

/// The 20-sequence default split across the built-in environments.
pub const DEFAULT_PER_ENV: [usize; 3] = [7, 7, 6];
