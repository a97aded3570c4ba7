//! The gradient-verification suite behind `strep gradcheck`: every
//! differentiable primitive plus the composite paths (pose decoder,
//! Chamfer, occupancy loss, and the full objective) compared against
//! central finite differences at tie-free random points.

use std::sync::Arc;

use rand::Rng;
use strep_core::autodiff::check::{grad_check, CheckParam, CheckReport};
use strep_core::autodiff::{Graph, NodeId, Shape};
use strep_core::error::Result;
use strep_core::geometry::{Dim, PointSet};
use strep_core::losses::{chamfer_graph, global_loss_graph, local_loss_graph, NeighborSpec, OccupancyNet};
use strep_core::model::{decoder_graph, fuse_latents_graph, ChainLeaves, DecoderLeaves, PoseDecoder};
use strep_core::rng::stream;

/// Primitive tolerance and the relaxed bound for the deepest composite.
pub const TOL_PRIMITIVE: f64 = 1e-5;
pub const TOL_DEEPEST: f64 = 1e-4;

pub struct SuiteCase {
    pub name: &'static str,
    pub tol: f64,
    run: fn(u64) -> Result<CheckReport>,
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub tol: f64,
    pub worst: f64,
    pub passed: bool,
}

fn vals(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero, so kinked ops are probed tie-free.
fn vals_off_zero(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.random_range(0.2..2.0);
            if rng.random_range(0..2) == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn sq_sum(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let s = g.square(x)?;
    g.sum(s)
}

// --- primitive cases -------------------------------------------------------

fn case_sum(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 1);
    let p = CheckParam::new("x", Shape::new(4, 3), vals(&mut r, 12, -2.0, 2.0));
    grad_check(&[p], |g, ids| g.sum(ids[0]), TOL_PRIMITIVE, 0, seed)
}

fn case_mean(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 2);
    let p = CheckParam::new("x", Shape::new(3, 5), vals(&mut r, 15, -2.0, 2.0));
    grad_check(
        &[p],
        |g, ids| {
            let s = g.square(ids[0])?;
            g.mean(s)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_square(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 3);
    let p = CheckParam::new("x", Shape::new(4, 2), vals(&mut r, 8, -2.0, 2.0));
    grad_check(&[p], |g, ids| sq_sum(g, ids[0]), TOL_PRIMITIVE, 0, seed)
}

fn case_add_sub_mul(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 4);
    let a = CheckParam::new("a", Shape::new(3, 3), vals(&mut r, 9, -2.0, 2.0));
    let b = CheckParam::new("b", Shape::new(3, 3), vals(&mut r, 9, -2.0, 2.0));
    grad_check(
        &[a, b],
        |g, ids| {
            let s = g.add(ids[0], ids[1])?;
            let d = g.sub(ids[0], ids[1])?;
            let m = g.mul(s, d)?;
            sq_sum(g, m)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_scale_colscale(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 5);
    let x = CheckParam::new("x", Shape::new(4, 3), vals(&mut r, 12, -2.0, 2.0));
    grad_check(
        &[x],
        |g, ids| {
            let s = g.scale(ids[0], -1.7)?;
            let c = g.col_scale(s, &[0.5, 2.0, -3.0])?;
            sq_sum(g, c)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_trig(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 6);
    let x = CheckParam::new("x", Shape::new(3, 4), vals(&mut r, 12, -2.0, 2.0));
    grad_check(
        &[x],
        |g, ids| {
            let s = g.sin(ids[0])?;
            let c = g.cos(ids[0])?;
            let m = g.mul(s, c)?;
            sq_sum(g, m)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_relu(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 7);
    let x = CheckParam::new("x", Shape::new(5, 4), vals_off_zero(&mut r, 20));
    grad_check(
        &[x],
        |g, ids| {
            let a = g.relu(ids[0])?;
            sq_sum(g, a)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_linear(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 8);
    let x = CheckParam::new("x", Shape::new(4, 3), vals(&mut r, 12, -2.0, 2.0));
    let w = CheckParam::new("w", Shape::new(5, 3), vals(&mut r, 15, -1.0, 1.0));
    let b = CheckParam::new("b", Shape::new(1, 5), vals(&mut r, 5, -1.0, 1.0));
    grad_check(
        &[x, w, b],
        |g, ids| {
            let y = g.linear(ids[1], ids[2], ids[0])?;
            sq_sum(g, y)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_concat(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 9);
    let a = CheckParam::new("a", Shape::new(4, 2), vals(&mut r, 8, -2.0, 2.0));
    let z = CheckParam::new("z", Shape::new(1, 3), vals(&mut r, 3, -2.0, 2.0));
    let b = CheckParam::new("b", Shape::new(2, 5), vals(&mut r, 10, -2.0, 2.0));
    grad_check(
        &[a, z, b],
        |g, ids| {
            let wide = g.concat_cols(ids[0], ids[1])?; // broadcast z to 4 rows
            let tall = g.concat_rows(&[wide, ids[2]])?;
            sq_sum(g, tall)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_slices(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 10);
    let x = CheckParam::new("x", Shape::new(5, 4), vals(&mut r, 20, -2.0, 2.0));
    grad_check(
        &[x],
        |g, ids| {
            let cols = g.slice_cols(ids[0], 1, 3)?;
            let rows = g.slice_rows(cols, 1, 4)?;
            sq_sum(g, rows)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_gather(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 11);
    let x = CheckParam::new("x", Shape::new(5, 3), vals(&mut r, 15, -2.0, 2.0));
    grad_check(
        &[x],
        |g, ids| {
            // Repeated indices exercise gradient accumulation.
            let picked = g.gather(ids[0], &[0, 2, 2, 4, 1, 2])?;
            sq_sum(g, picked)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_seg_max(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 12);
    let x = CheckParam::new("x", Shape::new(9, 3), vals(&mut r, 27, -2.0, 2.0));
    grad_check(
        &[x],
        |g, ids| {
            let m = g.seg_max(ids[0], Arc::new(vec![0, 4, 9]))?;
            sq_sum(g, m)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_seg_mean(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 13);
    let x = CheckParam::new("x", Shape::new(9, 2), vals(&mut r, 18, -2.0, 2.0));
    grad_check(
        &[x],
        |g, ids| {
            let m = g.seg_mean(ids[0], Arc::new(vec![0, 3, 9]))?;
            sq_sum(g, m)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_sigmoid_bce(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 14);
    let x = CheckParam::new("logits", Shape::new(6, 1), vals(&mut r, 6, -3.0, 3.0));
    grad_check(
        &[x],
        |g, ids| {
            let pos = g.sigmoid_bce(ids[0], 1.0)?;
            let neg = g.sigmoid_bce(ids[0], 0.0)?;
            let both = g.add(pos, neg)?;
            g.sum(both)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_apply_pose_2d(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 15);
    let pose = CheckParam::row("pose", &vals(&mut r, 3, -1.5, 1.5));
    let pts = Arc::new(vals(&mut r, 12, -5.0, 5.0));
    grad_check(
        &[pose],
        move |g, ids| {
            let y = g.apply_pose(ids[0], pts.clone(), 2)?;
            sq_sum(g, y)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_apply_pose_3d(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 16);
    let pose = CheckParam::row("pose", &vals(&mut r, 6, -1.2, 1.2));
    let pts = Arc::new(vals(&mut r, 15, -5.0, 5.0));
    grad_check(
        &[pose],
        move |g, ids| {
            let y = g.apply_pose(ids[0], pts.clone(), 3)?;
            sq_sum(g, y)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_lerp(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 17);
    let origin = CheckParam::row("origin", &vals(&mut r, 2, -2.0, 2.0));
    let pts = CheckParam::new("pts", Shape::new(4, 2), vals(&mut r, 8, -5.0, 5.0));
    let fracs = Arc::new(vec![0.1, 0.6, 0.3, 0.8, 0.45, 0.9, 0.2, 0.7]);
    grad_check(
        &[origin, pts],
        move |g, ids| {
            let f = g.lerp_to_points(ids[0], ids[1], fracs.clone(), 2)?;
            sq_sum(g, f)
        },
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

// --- composite cases -------------------------------------------------------

fn case_chamfer(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 18);
    let a = CheckParam::new("a", Shape::new(8, 2), vals(&mut r, 16, -4.0, 4.0));
    let b = CheckParam::new("b", Shape::new(7, 2), vals(&mut r, 14, -4.0, 4.0));
    grad_check(
        &[a, b],
        |g, ids| chamfer_graph(g, ids[0], ids[1]),
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

fn case_chamfer_3d(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 19);
    let a = CheckParam::new("a", Shape::new(6, 3), vals(&mut r, 18, -4.0, 4.0));
    let b = CheckParam::new("b", Shape::new(5, 3), vals(&mut r, 15, -4.0, 4.0));
    grad_check(
        &[a, b],
        |g, ids| chamfer_graph(g, ids[0], ids[1]),
        TOL_PRIMITIVE,
        0,
        seed,
    )
}

/// Decoder parameter blocks as correctly shaped CheckParams (w then b per
/// layer, point stage before head — matching leaf order).
fn decoder_params(dec: &PoseDecoder) -> Vec<CheckParam> {
    let mut out = Vec::new();
    for (i, l) in dec.point_stage.iter().chain(dec.head.iter()).enumerate() {
        out.push(CheckParam::new(
            &format!("layer{i}.w"),
            Shape::new(l.out_dim, l.in_dim),
            l.w.clone(),
        ));
        out.push(CheckParam::new(
            &format!("layer{i}.b"),
            Shape::new(1, l.out_dim),
            l.b.clone(),
        ));
    }
    out
}

fn decoder_leaves_from(dec: &PoseDecoder, ids: &[NodeId]) -> DecoderLeaves {
    let pairs: Vec<(NodeId, NodeId)> = ids.chunks(2).map(|c| (c[0], c[1])).collect();
    let np = dec.point_stage.len();
    DecoderLeaves {
        point_stage: pairs[..np].to_vec(),
        head: pairs[np..].to_vec(),
    }
}

fn case_decoder(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 20);
    let dec = PoseDecoder::init(Dim::Two, 4, 1, 5.0, &mut r)?;
    let frame = PointSet::new(Dim::Two, vals(&mut r, 12, -6.0, 6.0))?;
    let mut params = decoder_params(&dec);
    params.push(CheckParam::row("latent", &vals(&mut r, 4, -1.0, 1.0)));
    let dec2 = dec.clone();
    grad_check(
        &params,
        move |g, ids| {
            let leaves = decoder_leaves_from(&dec2, &ids[..ids.len() - 1]);
            let z = ids[ids.len() - 1];
            let pg = decoder_graph(g, &dec2, &leaves, &[&frame], &[z])?;
            sq_sum(g, pg.pose_nodes[0])
        },
        TOL_PRIMITIVE,
        4,
        seed,
    )
}

fn occupancy_params(net: &OccupancyNet) -> Vec<CheckParam> {
    let mut out = Vec::new();
    for (i, l) in net.layers.iter().enumerate() {
        out.push(CheckParam::new(
            &format!("occ{i}.w"),
            Shape::new(l.out_dim, l.in_dim),
            l.w.clone(),
        ));
        out.push(CheckParam::new(
            &format!("occ{i}.b"),
            Shape::new(1, l.out_dim),
            l.b.clone(),
        ));
    }
    out
}

fn occupancy_leaves_from(ids: &[NodeId]) -> Vec<(NodeId, NodeId)> {
    ids.chunks(2).map(|c| (c[0], c[1])).collect()
}

fn case_global_loss(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 21);
    let net = OccupancyNet::init(Dim::Two, vec![10.0, 10.0], &mut r)?;
    let mut params = occupancy_params(&net);
    params.push(CheckParam::new(
        "frame0",
        Shape::new(5, 2),
        vals(&mut r, 10, -8.0, 8.0),
    ));
    params.push(CheckParam::new(
        "frame1",
        Shape::new(4, 2),
        vals(&mut r, 8, -8.0, 8.0),
    ));
    params.push(CheckParam::row("origin0", &vals(&mut r, 2, -2.0, 2.0)));
    params.push(CheckParam::row("origin1", &vals(&mut r, 2, -2.0, 2.0)));
    let net2 = net.clone();
    grad_check(
        &params,
        move |g, ids| {
            let nb = net2.layers.len() * 2;
            let leaves = occupancy_leaves_from(&ids[..nb]);
            let mut rr = stream(seed, 2100);
            global_loss_graph(
                g,
                &net2,
                &leaves,
                &[ids[nb], ids[nb + 1]],
                &[ids[nb + 2], ids[nb + 3]],
                2,
                &mut rr,
            )
        },
        TOL_PRIMITIVE,
        4,
        seed,
    )
}

/// The full objective through the whole stack: latent fusion → decoder →
/// pose application → registration + mapping losses. The deepest composite,
/// checked at the relaxed tolerance.
fn case_total_loss(seed: u64) -> Result<CheckReport> {
    let mut r = stream(seed, 22);
    let dec = PoseDecoder::init(Dim::Two, 3, 1, 4.0, &mut r)?;
    let net = OccupancyNet::init(Dim::Two, vec![12.0, 12.0], &mut r)?;
    let frames: Vec<PointSet> = (0..3)
        .map(|_| PointSet::new(Dim::Two, vals(&mut r, 10, -6.0, 6.0)))
        .collect::<Result<_>>()?;
    let mut params = decoder_params(&dec);
    let nd = params.len();
    params.extend(occupancy_params(&net));
    let no = params.len() - nd;
    for k in 0..frames.len() {
        params.push(CheckParam::row(
            &format!("latent{k}"),
            &vals(&mut r, 3, -1.0, 1.0),
        ));
    }
    params.push(CheckParam::row("decay", &vals(&mut r, 3, 0.2, 0.8)));
    let (dec2, net2) = (dec.clone(), net.clone());
    grad_check(
        &params,
        move |g, ids| {
            let dec_leaves = decoder_leaves_from(&dec2, &ids[..nd]);
            let occ_leaves = occupancy_leaves_from(&ids[nd..nd + no]);
            let k = frames.len();
            let chain = ChainLeaves {
                raw: ids[nd + no..nd + no + k].to_vec(),
                decay: ids[nd + no + k],
            };
            let fused = fuse_latents_graph(g, &chain)?;
            let refs: Vec<&PointSet> = frames.iter().collect();
            let pg = decoder_graph(g, &dec2, &dec_leaves, &refs, &fused)?;
            let local = local_loss_graph(g, &pg.transformed, NeighborSpec::new(1)?)?;
            let mut rr = stream(seed, 2200);
            let global = global_loss_graph(
                g,
                &net2,
                &occ_leaves,
                &pg.transformed,
                &pg.origin_nodes,
                2,
                &mut rr,
            )?;
            let w = g.scale(global, 1.0)?;
            g.add(local, w)
        },
        TOL_DEEPEST,
        4,
        seed,
    )
}

/// Every case in the suite, primitives first.
pub fn suite() -> Vec<SuiteCase> {
    fn c(name: &'static str, tol: f64, run: fn(u64) -> Result<CheckReport>) -> SuiteCase {
        SuiteCase { name, tol, run }
    }
    vec![
        c("sum", TOL_PRIMITIVE, case_sum),
        c("mean", TOL_PRIMITIVE, case_mean),
        c("square", TOL_PRIMITIVE, case_square),
        c("add_sub_mul", TOL_PRIMITIVE, case_add_sub_mul),
        c("scale_col_scale", TOL_PRIMITIVE, case_scale_colscale),
        c("sin_cos", TOL_PRIMITIVE, case_trig),
        c("relu", TOL_PRIMITIVE, case_relu),
        c("linear", TOL_PRIMITIVE, case_linear),
        c("concat", TOL_PRIMITIVE, case_concat),
        c("slices", TOL_PRIMITIVE, case_slices),
        c("gather", TOL_PRIMITIVE, case_gather),
        c("seg_max", TOL_PRIMITIVE, case_seg_max),
        c("seg_mean", TOL_PRIMITIVE, case_seg_mean),
        c("sigmoid_bce", TOL_PRIMITIVE, case_sigmoid_bce),
        c("apply_pose_2d", TOL_PRIMITIVE, case_apply_pose_2d),
        c("apply_pose_3d", TOL_PRIMITIVE, case_apply_pose_3d),
        c("lerp_free_space", TOL_PRIMITIVE, case_lerp),
        c("chamfer_2d", TOL_PRIMITIVE, case_chamfer),
        c("chamfer_3d", TOL_PRIMITIVE, case_chamfer_3d),
        c("pose_decoder", TOL_PRIMITIVE, case_decoder),
        c("global_loss", TOL_PRIMITIVE, case_global_loss),
        c("total_loss", TOL_DEEPEST, case_total_loss),
    ]
}

/// Run every case over all seeds, keeping the worst error per case.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for case in suite() {
        let mut worst: f64 = 0.0;
        for &seed in seeds {
            let report = (case.run)(seed)?;
            worst = worst.max(report.worst());
        }
        out.push(SuiteResult {
            name: case.name,
            tol: case.tol,
            worst,
            passed: worst < case.tol,
        });
    }
    Ok(out)
}
