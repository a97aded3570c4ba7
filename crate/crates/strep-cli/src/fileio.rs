//! On-disk formats: dataset files (text header + little-endian binary
//! payload + trailing metadata), versioned checkpoints, PGM occupancy
//! maps, and the CSV/report emitters. All writers are deterministic and
//! all round-trips are lossless at the bit level.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use strep_core::error::{Error, Result};
use strep_core::geometry::{Dim, PointSet, Pose};
use strep_core::losses::OccupancyNet;
use strep_core::metrics::EvalReport;
use strep_core::model::PoseDecoder;
use strep_core::simulator::{EnvironmentMap, SequenceDataset};
use strep_core::trainer::HistoryRow;

pub const DATASET_MAGIC: &str = "STREP-DATASET v1";
pub const CHECKPOINT_MAGIC: &str = "STREP-CHECKPOINT v1";

// ---------------------------------------------------------------------------
// Byte-cursor helpers shared by the binary readers.

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Cursor<'a> {
        Cursor {
            bytes,
            pos: 0,
            path,
        }
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::format(self.path, msg, Some(self.pos as u64)))
    }

    /// Next text line (without the newline); fails on EOF or non-UTF-8.
    fn line(&mut self) -> Result<&'a str> {
        let start = self.pos;
        let rest = &self.bytes[start.min(self.bytes.len())..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return self.fail("unexpected end of file inside the text section");
        };
        let s = std::str::from_utf8(&rest[..nl]);
        self.pos = start + nl + 1;
        match s {
            Ok(s) => Ok(s),
            Err(_) => {
                self.pos = start;
                self.fail("non-UTF-8 bytes in the text section")
            }
        }
    }

    /// A `key value` line; returns the value part.
    fn field(&mut self, key: &str) -> Result<&'a str> {
        let at = self.pos;
        let line = self.line()?;
        match line.strip_prefix(key).and_then(|r| r.strip_prefix(' ')) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::format(
                self.path,
                format!("expected `{key} <value>`, found `{line}`"),
                Some(at as u64),
            )),
        }
    }

    fn expect_line(&mut self, want: &str) -> Result<()> {
        let at = self.pos;
        let line = self.line()?;
        if line != want {
            return Err(Error::format(
                self.path,
                format!("expected `{want}`, found `{line}`"),
                Some(at as u64),
            ));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return self.fail("truncated binary payload (u32)");
        }
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        if self.pos + 8 * n > self.bytes.len() {
            return self.fail(format!("truncated binary payload ({what})"));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let at = self.pos + 8 * i;
            let v = f64::from_le_bytes(self.bytes[at..at + 8].try_into().unwrap());
            if !v.is_finite() {
                self.pos = at;
                return self.fail(format!("non-finite value in {what}"));
            }
            out.push(v);
        }
        self.pos += 8 * n;
        Ok(out)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_num<T: std::str::FromStr>(path: &Path, at: u64, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(path, format!("invalid {what}: `{s}`"), Some(at)))
}

// ---------------------------------------------------------------------------
// Dataset files.

/// Serializes a recorded sequence: text header, per-frame binary records
/// (`u32` point count, row-major points, sensor origin, optional pose),
/// then trailing provenance metadata.
pub fn write_dataset(path: &Path, ds: &SequenceDataset) -> Result<()> {
    ds.validate()
        .map_err(|e| Error::usage(format!("refusing to write invalid dataset: {e}")))?;
    let dim = ds.dim.size();
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC.as_bytes());
    buf.push(b'\n');
    let has_gt = ds.gt_poses.is_some();
    let units = match ds.dim {
        Dim::Two => "px",
        Dim::Three => "m",
    };
    let header = format!(
        "dim {dim}\nframes {}\nhas_gt {}\nunits {units}\npayload\n",
        ds.frames.len(),
        has_gt as u8
    );
    buf.extend_from_slice(header.as_bytes());
    for (i, frame) in ds.frames.iter().enumerate() {
        buf.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        push_f64s(&mut buf, frame.coords());
        push_f64s(&mut buf, frame.sensor_origin());
        if let Some(gt) = &ds.gt_poses {
            push_f64s(&mut buf, gt[i].params());
        }
    }
    buf.extend_from_slice(b"META\n");
    if let Some(env) = &ds.env_name {
        let _ = writeln!(sink(&mut buf), "env_name {env}");
    }
    let _ = writeln!(
        sink(&mut buf),
        "seed {}\ngenerator_version {}\nEND",
        ds.seed,
        ds.generator_version
    );
    write_file(path, &buf)
}

// std::io::Write adapter over a byte vec for `writeln!`.
fn sink(buf: &mut Vec<u8>) -> impl std::io::Write + '_ {
    buf
}

pub fn read_dataset(path: &Path) -> Result<SequenceDataset> {
    let bytes = read_file(path)?;
    let mut c = Cursor::new(&bytes, path);
    c.expect_line(DATASET_MAGIC)?;

    let at = c.pos as u64;
    let dim = match c.field("dim")? {
        "2" => Dim::Two,
        "3" => Dim::Three,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported dimension `{other}`"),
                Some(at),
            ))
        }
    };
    let at = c.pos as u64;
    let frames: usize = parse_num(path, at, "frame count", c.field("frames")?)?;
    if frames == 0 {
        return Err(Error::format(path, "zero frames", Some(at)));
    }
    let at = c.pos as u64;
    let has_gt = match c.field("has_gt")? {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::format(
                path,
                format!("has_gt must be 0 or 1, found `{other}`"),
                Some(at),
            ))
        }
    };
    c.field("units")?;
    c.expect_line("payload")?;

    let d = dim.size();
    let mut sets = Vec::with_capacity(frames);
    let mut poses = has_gt.then(|| Vec::with_capacity(frames));
    for _ in 0..frames {
        let at = c.pos;
        let n = c.u32()? as usize;
        if n == 0 || n > 16_000_000 {
            c.pos = at;
            return c.fail(format!("implausible point count {n}"));
        }
        let pts = c.f64s(n * d, "frame points")?;
        let origin = c.f64s(d, "sensor origin")?;
        let set = PointSet::with_origin(dim, pts, origin)
            .map_err(|e| Error::format(path, format!("bad frame: {e}"), Some(at as u64)))?;
        sets.push(set);
        if let Some(poses) = &mut poses {
            let at = c.pos as u64;
            let params = c.f64s(dim.pose_params(), "ground-truth pose")?;
            let pose = Pose::from_params(dim, &params)
                .map_err(|e| Error::format(path, format!("bad pose: {e}"), Some(at)))?;
            poses.push(pose);
        }
    }

    c.expect_line("META")?;
    let mut env_name = None;
    let at = c.pos as u64;
    let mut line = c.line()?;
    if let Some(v) = line.strip_prefix("env_name ") {
        env_name = Some(v.to_string());
        line = c.line()?;
    }
    let seed: u64 = match line.strip_prefix("seed ") {
        Some(v) => parse_num(path, at, "seed", v)?,
        None => return Err(Error::format(path, "missing `seed` metadata", Some(at))),
    };
    let at = c.pos as u64;
    let generator_version: u32 =
        parse_num(path, at, "generator version", c.field("generator_version")?)?;
    c.expect_line("END")?;
    if !c.done() {
        return c.fail("trailing bytes after END");
    }

    let ds = SequenceDataset {
        dim,
        frames: sets,
        gt_poses: poses,
        env_name,
        seed,
        generator_version,
    };
    ds.validate()
        .map_err(|e| Error::format(path, format!("inconsistent dataset: {e}"), None))?;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Checkpoints.

/// A trained model snapshot: decoder and occupancy weights, shared temporal
/// weights, every training sequence's latents, and the fingerprint of the
/// configuration that produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_hash: String,
    pub decoder: PoseDecoder,
    pub occupancy: OccupancyNet,
    pub decay: Vec<f64>,
    pub chains_raw: Vec<Vec<Vec<f64>>>,
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let dec = &ck.decoder;
    if ck.decay.len() != dec.latent_dim {
        return Err(Error::usage("temporal weights do not match the decoder"));
    }
    let mut buf = Vec::new();
    let mut header = String::new();
    let _ = writeln!(header, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(header, "config_hash {}", ck.config_hash);
    let _ = writeln!(header, "dim {}", dec.dim.size());
    let _ = writeln!(header, "latent_dim {}", dec.latent_dim);
    let _ = writeln!(header, "kernel_width {}", dec.kernel_width);
    let _ = writeln!(header, "trans_scale {:?}", dec.trans_scale);
    let extents: Vec<String> = ck
        .occupancy
        .world_extent
        .iter()
        .map(|e| format!("{e:?}"))
        .collect();
    let _ = writeln!(header, "world_extent {}", extents.join(" "));
    let frames: Vec<String> = ck
        .chains_raw
        .iter()
        .map(|c| c.len().to_string())
        .collect();
    let _ = writeln!(header, "chains {}", ck.chains_raw.len());
    let _ = writeln!(header, "chain_frames {}", frames.join(" "));
    let _ = writeln!(header, "payload");
    buf.extend_from_slice(header.as_bytes());

    for (_, blk) in dec.blocks() {
        push_f64s(&mut buf, blk);
    }
    for (_, blk) in ck.occupancy.blocks() {
        push_f64s(&mut buf, blk);
    }
    push_f64s(&mut buf, &ck.decay);
    for chain in &ck.chains_raw {
        for z in chain {
            if z.len() != dec.latent_dim {
                return Err(Error::usage("latent width mismatch in checkpoint"));
            }
            push_f64s(&mut buf, z);
        }
    }
    buf.extend_from_slice(b"END\n");
    write_file(path, &buf)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_file(path)?;
    let mut c = Cursor::new(&bytes, path);
    c.expect_line(CHECKPOINT_MAGIC)?;
    let config_hash = c.field("config_hash")?.to_string();
    let at = c.pos as u64;
    let dim = match c.field("dim")? {
        "2" => Dim::Two,
        "3" => Dim::Three,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported dimension `{other}`"),
                Some(at),
            ))
        }
    };
    let at = c.pos as u64;
    let latent_dim: usize = parse_num(path, at, "latent width", c.field("latent_dim")?)?;
    let at = c.pos as u64;
    let kernel_width: usize = parse_num(path, at, "kernel width", c.field("kernel_width")?)?;
    let at = c.pos as u64;
    let trans_scale: f64 = parse_num(path, at, "translation scale", c.field("trans_scale")?)?;
    let at = c.pos as u64;
    let extent: Vec<f64> = c
        .field("world_extent")?
        .split(' ')
        .map(|t| parse_num(path, at, "world extent", t))
        .collect::<Result<_>>()?;
    let at = c.pos as u64;
    let num_chains: usize = parse_num(path, at, "chain count", c.field("chains")?)?;
    let at = c.pos as u64;
    let chain_frames: Vec<usize> = c
        .field("chain_frames")?
        .split(' ')
        .map(|t| parse_num(path, at, "chain length", t))
        .collect::<Result<_>>()?;
    if chain_frames.len() != num_chains {
        return Err(Error::format(
            path,
            "chain count does not match chain_frames",
            Some(at),
        ));
    }
    c.expect_line("payload")?;

    // Shape the model structurally, then overwrite every block from the
    // payload so all size logic stays in one place.
    let mut throwaway = strep_core::rng::stream(0, 0);
    let mut decoder = PoseDecoder::init(dim, latent_dim, kernel_width, trans_scale, &mut throwaway)
        .map_err(|e| Error::format(path, format!("bad model shape: {e}"), None))?;
    let mut occupancy = OccupancyNet::init(dim, extent, &mut throwaway)
        .map_err(|e| Error::format(path, format!("bad occupancy shape: {e}"), None))?;
    for (_, blk) in decoder.blocks_mut() {
        *blk = c.f64s(blk.len(), "decoder weights")?;
    }
    for (_, blk) in occupancy.blocks_mut() {
        *blk = c.f64s(blk.len(), "occupancy weights")?;
    }
    let decay = c.f64s(latent_dim, "temporal weights")?;
    let mut chains_raw = Vec::with_capacity(num_chains);
    for &n in &chain_frames {
        let mut chain = Vec::with_capacity(n);
        for _ in 0..n {
            chain.push(c.f64s(latent_dim, "latent vector")?);
        }
        chains_raw.push(chain);
    }
    c.expect_line("END")?;
    if !c.done() {
        return c.fail("trailing bytes after END");
    }
    Ok(Checkpoint {
        config_hash,
        decoder,
        occupancy,
        decay,
        chains_raw,
    })
}

// ---------------------------------------------------------------------------
// PGM occupancy maps (P5, maxval 255; 0 = occupied, 255 = free).

pub fn write_pgm(path: &Path, env: &EnvironmentMap) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", env.width, env.height).into_bytes();
    buf.extend(env.occ.iter().map(|&o| if o { 0u8 } else { 255u8 }));
    write_file(path, &buf)
}

pub fn read_pgm(path: &Path) -> Result<EnvironmentMap> {
    let bytes = read_file(path)?;
    // Header: three whitespace-separated tokens after the magic, with
    // `#` comments allowed, then a single whitespace byte before the raster.
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<(String, usize)> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(
                path,
                format!("missing {what}"),
                Some(start as u64),
            ));
        }
        let s = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::format(path, format!("non-ASCII {what}"), Some(start as u64)))?;
        Ok((s.to_string(), start))
    };

    let (magic, at) = token("magic")?;
    if magic != "P5" {
        return Err(Error::format(path, "not a binary PGM (P5)", Some(at as u64)));
    }
    let (w, at) = token("width")?;
    let width: usize = parse_num(path, at as u64, "width", &w)?;
    let (h, at) = token("height")?;
    let height: usize = parse_num(path, at as u64, "height", &h)?;
    let (mv, at) = token("maxval")?;
    if mv != "255" {
        return Err(Error::format(path, "maxval must be 255", Some(at as u64)));
    }
    pos += 1; // single whitespace separating header from raster
    let raster = &bytes[pos.min(bytes.len())..];
    if raster.len() != width * height {
        return Err(Error::format(
            path,
            format!(
                "raster holds {} bytes, expected {}",
                raster.len(),
                width * height
            ),
            Some(pos as u64),
        ));
    }
    let mut occ = Vec::with_capacity(width * height);
    for (i, &b) in raster.iter().enumerate() {
        match b {
            0 => occ.push(true),
            255 => occ.push(false),
            other => {
                return Err(Error::format(
                    path,
                    format!("pixel value {other} is neither 0 (occupied) nor 255 (free)"),
                    Some((pos + i) as u64),
                ))
            }
        }
    }
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("map")
        .to_string();
    EnvironmentMap::new(&name, width, height, occ)
        .map_err(|e| Error::format(path, format!("invalid map: {e}"), None))
}

// ---------------------------------------------------------------------------
// CSV and report emitters.

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("iteration,local_loss,global_loss,total_loss,ate,point_dist\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{},{}",
            r.iteration,
            r.local_loss,
            r.global_loss,
            r.total_loss,
            opt(r.ate),
            opt(r.point_dist)
        );
    }
    out
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    write_file(path, history_csv(rows).as_bytes())
}

pub fn poses_csv(poses: &[Pose]) -> Result<String> {
    if poses.is_empty() {
        return Err(Error::usage("no poses to write"));
    }
    let dim = poses[0].dim();
    let mut out = String::from(match dim {
        Dim::Two => "frame,tx,ty,theta\n",
        Dim::Three => "frame,tx,ty,tz,yaw,pitch,roll\n",
    });
    for (i, p) in poses.iter().enumerate() {
        if p.dim() != dim {
            return Err(Error::usage("mixed pose dimensions"));
        }
        let cols: Vec<String> = p.params().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{i},{}", cols.join(","));
    }
    Ok(out)
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    write_file(path, poses_csv(poses)?.as_bytes())
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::format(path, "poses file is not UTF-8", Some(0)))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty poses file", Some(0)))?;
    let dim = match header {
        "frame,tx,ty,theta" => Dim::Two,
        "frame,tx,ty,tz,yaw,pitch,roll" => Dim::Three,
        other => {
            return Err(Error::format(
                path,
                format!("unrecognized poses header `{other}`"),
                Some(0),
            ))
        }
    };
    let mut poses = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim.pose_params() + 1 {
            return Err(Error::format(
                path,
                format!("line {}: wrong column count", lineno + 1),
                None,
            ));
        }
        let idx: usize = parse_num(path, lineno as u64, "frame index", cells[0])?;
        if idx != poses.len() {
            return Err(Error::format(
                path,
                format!("line {}: frames out of order", lineno + 1),
                None,
            ));
        }
        let params: Vec<f64> = cells[1..]
            .iter()
            .map(|c| parse_num(path, lineno as u64, "pose parameter", c))
            .collect::<Result<_>>()?;
        poses.push(
            Pose::from_params(dim, &params)
                .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1), None))?,
        );
    }
    if poses.is_empty() {
        return Err(Error::format(path, "poses file has no rows", None));
    }
    Ok(poses)
}

pub fn report_text(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "anchor {}", r.anchor);
    let _ = writeln!(out, "ate {:?}", r.ate);
    let _ = writeln!(out, "point_dist {:?}", r.point_dist);
    let _ = writeln!(out, "point_dist_sq {:?}", r.point_dist_sq);
    let align: Vec<String> = r
        .alignment
        .params()
        .iter()
        .map(|v| format!("{v:?}"))
        .collect();
    let _ = writeln!(out, "alignment {}", align.join(" "));
    let _ = writeln!(out, "frames {}", r.per_frame.len());
    for (i, e) in r.per_frame.iter().enumerate() {
        let _ = writeln!(out, "frame_error {i} {e:?}");
    }
    out
}

pub fn report_csv(r: &EvalReport) -> String {
    format!(
        "ate,point_dist,point_dist_sq,anchor\n{:?},{:?},{:?},{}\n",
        r.ate, r.point_dist, r.point_dist_sq, r.anchor
    )
}

pub fn write_report(dir: &Path, r: &EvalReport) -> Result<()> {
    write_file(&dir.join("eval_report.txt"), report_text(r).as_bytes())?;
    write_file(&dir.join("eval_report.csv"), report_csv(r).as_bytes())
}

/// One ablation measurement (a seed × mode cell of the summary).
#[derive(Clone, Debug, PartialEq)]
pub struct AblateRow {
    pub seed: u64,
    pub temporal: bool,
    pub ate: f64,
    pub point_dist: f64,
}

pub fn ablate_csv(rows: &[AblateRow]) -> String {
    let mut out = String::from("seed,mode,ate,point_dist\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?}",
            r.seed,
            if r.temporal { "fused" } else { "severed" },
            r.ate,
            r.point_dist
        );
    }
    out
}

pub fn write_ablate(path: &Path, rows: &[AblateRow]) -> Result<()> {
    write_file(path, ablate_csv(rows).as_bytes())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use strep_core::rng::stream;
    use strep_core::simulator::{generate_sequence, TrajectorySpec};
    use strep_core::trainer::{train, TrainConfig};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("strep-fileio-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sim_dataset(seed: u64) -> SequenceDataset {
        let env = EnvironmentMap::corridor_loop();
        let spec = TrajectorySpec {
            seed,
            num_frames: 4,
            beams: 24,
            ..Default::default()
        };
        generate_sequence(&env, &spec).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_lossless() {
        let ds = sim_dataset(3);
        let path = tmp("roundtrip.sds");
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds, back);
        // Byte-determinism of the writer as well.
        let again = tmp("roundtrip2.sds");
        write_dataset(&again, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn dataset_without_gt_round_trips() {
        let mut ds = sim_dataset(4);
        ds.gt_poses = None;
        ds.env_name = None;
        let path = tmp("nogt.sds");
        write_dataset(&path, &ds).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn corrupt_header_names_the_offset() {
        let ds = sim_dataset(5);
        let path = tmp("corrupt.sds");
        write_dataset(&path, &ds).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[17] = b'X'; // first byte of the `dim` line
        std::fs::write(&path, &bytes).unwrap();
        match read_dataset(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, Some(17)),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let ds = sim_dataset(6);
        let path = tmp("trunc.sds");
        write_dataset(&path, &ds).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn checkpoint_save_load_save_is_byte_identical() {
        let ds = sim_dataset(7);
        let cfg = TrainConfig {
            iters: 2,
            s_per_beam: 1,
            ..Default::default()
        };
        let out = train(std::slice::from_ref(&ds), &cfg).unwrap();
        let ck = Checkpoint {
            config_hash: "deadbeef".into(),
            decoder: out.decoder,
            occupancy: out.occupancy,
            decay: out.chains[0].decay.clone(),
            chains_raw: vec![out.chains[0].raw.clone()],
        };
        let a = tmp("ck_a.ckpt");
        let b = tmp("ck_b.ckpt");
        write_checkpoint(&a, &ck).unwrap();
        let loaded = read_checkpoint(&a).unwrap();
        write_checkpoint(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded.config_hash, "deadbeef");
        assert_eq!(loaded.decay, ck.decay);
    }

    #[test]
    fn checkpoint_version_is_checked() {
        let path = tmp("badver.ckpt");
        std::fs::write(&path, b"STREP-CHECKPOINT v9\njunk\n").unwrap();
        match read_checkpoint(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, Some(0)),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn pgm_round_trip_preserves_the_map() {
        let env = EnvironmentMap::two_room_office();
        let path = tmp("office.pgm");
        write_pgm(&path, &env).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.occ, env.occ);
        assert_eq!(back.width, env.width);
        assert_eq!(back.name, "office");
    }

    #[test]
    fn pgm_rejects_gray_pixels() {
        let env = EnvironmentMap::corridor_loop();
        let path = tmp("gray.pgm");
        write_pgm(&path, &env).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1000] = 128;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn poses_csv_round_trip_is_exact() {
        let mut rng = stream(11, 0);
        use rand::Rng;
        let poses: Vec<Pose> = (0..5)
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
            .collect();
        let path = tmp("poses.csv");
        write_poses(&path, &poses).unwrap();
        let back = read_poses(&path).unwrap();
        assert_eq!(poses.len(), back.len());
        for (a, b) in poses.iter().zip(&back) {
            assert_eq!(a.params(), b.params());
        }
    }

    #[test]
    fn history_and_ablate_csv_shapes() {
        let rows = vec![
            HistoryRow {
                iteration: 0,
                local_loss: 1.5,
                global_loss: 1.38,
                total_loss: 2.88,
                ate: Some(3.0),
                point_dist: None,
            },
            HistoryRow {
                iteration: 50,
                local_loss: 0.5,
                global_loss: 1.0,
                total_loss: 1.5,
                ate: None,
                point_dist: None,
            },
        ];
        let csv = history_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().ends_with("3.0,"));

        let ab = ablate_csv(&[
            AblateRow {
                seed: 1,
                temporal: true,
                ate: 2.0,
                point_dist: 1.0,
            },
            AblateRow {
                seed: 1,
                temporal: false,
                ate: 3.0,
                point_dist: 2.0,
            },
        ]);
        assert!(ab.contains("1,fused,2.0,1.0"));
        assert!(ab.contains("1,severed,3.0,2.0"));
    }
}
