//! Training losses: pairwise Chamfer over neighboring frames and the global
//! occupancy binary-cross-entropy term with its learnable occupancy network
//! and free-space sampler.

pub mod nn;

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, Shape};
use crate::error::{Error, Result};
use crate::geometry::{Dim, GlobalScene, PointSet};
use crate::model::{leaf_layers, mlp_forward, Layer};

/// Frames i, j are neighbors when `0 < |i − j| ≤ radius`.
#[derive(Clone, Copy, Debug)]
pub struct NeighborSpec {
    pub radius: usize,
}

impl NeighborSpec {
    pub fn new(radius: usize) -> Result<NeighborSpec> {
        if radius == 0 {
            return Err(Error::usage("neighbor radius must be ≥ 1"));
        }
        Ok(NeighborSpec { radius })
    }
}

impl Default for NeighborSpec {
    fn default() -> Self {
        NeighborSpec { radius: 1 }
    }
}

/// Symmetric Chamfer distance in sum form:
/// `Σ_{p∈a} min_{q∈b} ‖p−q‖² + Σ_{q∈b} min_{p∈a} ‖p−q‖²`.
pub fn chamfer(a: &PointSet, b: &PointSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::usage("chamfer operands must share dimensionality"));
    }
    Ok(chamfer_flat(a.coords(), b.coords(), a.dim().size()))
}

/// Chamfer over flat row-major buffers. Accumulation order matches the
/// graph version exactly (row-major element sums, then one addition).
fn chamfer_flat(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let ia = nn::nearest(a, b, dim);
    let ib = nn::nearest(b, a, dim);
    directed_sum(a, b, &ia, dim) + directed_sum(b, a, &ib, dim)
}

fn directed_sum(from: &[f64], to: &[f64], matches: &[u32], dim: usize) -> f64 {
    let mut acc = 0.0;
    for (i, p) in from.chunks_exact(dim).enumerate() {
        let q = &to[matches[i] as usize * dim..(matches[i] as usize + 1) * dim];
        for c in 0..dim {
            let t = p[c] - q[c];
            acc += t * t;
        }
    }
    acc
}

/// Differentiable Chamfer between two point-matrix nodes. Nearest matches
/// are computed from current values and held fixed during backward, so the
/// gradient is the standard fixed-correspondence one.
pub fn chamfer_graph(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa.cols != sb.cols {
        return Err(Error::usage("chamfer operands must share dimensionality"));
    }
    let ia = nn::nearest(g.value(a), g.value(b), sa.cols);
    let ib = nn::nearest(g.value(b), g.value(a), sb.cols);
    let matched_b = g.gather(b, &ia)?;
    let d1 = g.sub(a, matched_b)?;
    let q1 = g.square(d1)?;
    let t1 = g.sum(q1)?;
    let matched_a = g.gather(a, &ib)?;
    let d2 = g.sub(b, matched_a)?;
    let q2 = g.square(d2)?;
    let t2 = g.sum(q2)?;
    g.add(t1, t2)
}

/// Sum of Chamfer distances over all ordered neighbor pairs of the
/// world-frame point sets (each unordered pair contributes twice; by
/// symmetry that is exactly `2·chamfer` per unordered pair).
pub fn local_loss(scene: &GlobalScene, spec: NeighborSpec) -> Result<f64> {
    let k = scene.len();
    if k < 2 {
        return Err(Error::usage("local loss needs at least 2 frames"));
    }
    let mut acc = 0.0;
    for i in 0..k {
        for j in i + 1..(i + spec.radius + 1).min(k) {
            acc += 2.0 * chamfer(scene.frame(i), scene.frame(j))?;
        }
    }
    Ok(acc)
}

/// Graph version of `local_loss` over transformed frame nodes.
pub fn local_loss_graph(
    g: &mut Graph,
    transformed: &[NodeId],
    spec: NeighborSpec,
) -> Result<NodeId> {
    let k = transformed.len();
    if k < 2 {
        return Err(Error::usage("local loss needs at least 2 frames"));
    }
    let mut acc: Option<NodeId> = None;
    for i in 0..k {
        for j in i + 1..(i + spec.radius + 1).min(k) {
            let c = chamfer_graph(g, transformed[i], transformed[j])?;
            let c2 = g.scale(c, 2.0)?;
            acc = Some(match acc {
                None => c2,
                Some(prev) => g.add(prev, c2)?,
            });
        }
    }
    Ok(acc.expect("k ≥ 2 yields at least one pair"))
}

/// Hidden widths of the occupancy classifier.
pub const OCC_WIDTHS: [usize; 5] = [64, 256, 512, 256, 128];

/// Learnable occupancy field: world coordinate → occupancy logit. Queries
/// are divided per axis by `world_extent` before entering the network.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyNet {
    pub dim: Dim,
    pub world_extent: Vec<f64>,
    pub layers: Vec<Layer>,
}

impl OccupancyNet {
    pub fn init(dim: Dim, world_extent: Vec<f64>, rng: &mut impl Rng) -> Result<OccupancyNet> {
        if world_extent.len() != dim.size()
            || world_extent.iter().any(|&e| !(e > 0.0 && e.is_finite()))
        {
            return Err(Error::usage("world extent needs one positive value per axis"));
        }
        let mut layers = Vec::with_capacity(OCC_WIDTHS.len() + 1);
        let mut width = dim.size();
        for out in OCC_WIDTHS {
            layers.push(Layer::init(width, out, rng));
            width = out;
        }
        layers.push(Layer::init(width, 1, rng));
        Ok(OccupancyNet {
            dim,
            world_extent,
            layers,
        })
    }

    /// Normalization factors applied to query columns.
    fn inv_extent(&self) -> Vec<f64> {
        self.world_extent.iter().map(|e| 1.0 / e).collect()
    }

    pub fn blocks(&self) -> Vec<(String, &Vec<f64>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("occ{i}.w"), &l.w), (format!("occ{i}.b"), &l.b)])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| [(format!("occ{i}.w"), &mut l.w), (format!("occ{i}.b"), &mut l.b)])
            .collect()
    }

    pub fn leaf(&self, g: &mut Graph) -> Result<Vec<(NodeId, NodeId)>> {
        leaf_layers(g, &self.layers)
    }

    /// Logits for a `[n × dim]` query node through leafed weights.
    pub fn logits_graph(
        &self,
        g: &mut Graph,
        leaves: &[(NodeId, NodeId)],
        queries: NodeId,
    ) -> Result<NodeId> {
        let scaled = g.col_scale(queries, &self.inv_extent())?;
        mlp_forward(g, leaves, scaled)
    }
}

/// Stratified interpolation fractions: for each of `n_points` beams,
/// `s_per_beam` draws, the j-th uniform in the j-th equal bin of
/// (0.05, 0.95). Row-major by beam.
pub fn draw_fracs(n_points: usize, s_per_beam: usize, rng: &mut impl Rng) -> Vec<f64> {
    let inv_s = 1.0 / s_per_beam as f64;
    let mut out = Vec::with_capacity(n_points * s_per_beam);
    for _ in 0..n_points {
        for j in 0..s_per_beam {
            let u: f64 = rng.random();
            out.push(0.05 + (j as f64 + u) * inv_s * 0.9);
        }
    }
    out
}

/// Unoccupied samples strictly between the (world-frame) sensor origin and
/// every measured point of a world-frame point set.
pub fn sample_free_space(
    frame_global: &PointSet,
    origin_global: &[f64],
    s_per_beam: usize,
    rng: &mut impl Rng,
) -> Result<PointSet> {
    let dim = frame_global.dim().size();
    if origin_global.len() != dim {
        return Err(Error::usage("sensor origin length must match frame dimension"));
    }
    if s_per_beam == 0 {
        return Err(Error::usage("free-space samples per beam must be ≥ 1"));
    }
    let fracs = draw_fracs(frame_global.len(), s_per_beam, rng);
    let mut pts = Vec::with_capacity(frame_global.len() * s_per_beam * dim);
    for (i, p) in frame_global.iter().enumerate() {
        for j in 0..s_per_beam {
            let t = fracs[i * s_per_beam + j];
            for c in 0..dim {
                pts.push(origin_global[c] + t * (p[c] - origin_global[c]));
            }
        }
    }
    PointSet::new(frame_global.dim(), pts)
}

/// Differentiable global occupancy loss over a batch of world-frame nodes:
/// `(1/K) Σ_j [ meanBCE(net(F_j), 1) + meanBCE(net(S(F_j)), 0) ]`.
/// Free-space fractions are drawn from `rng` in frame order.
pub fn global_loss_graph(
    g: &mut Graph,
    net: &OccupancyNet,
    net_leaves: &[(NodeId, NodeId)],
    transformed: &[NodeId],
    origins: &[NodeId],
    s_per_beam: usize,
    rng: &mut impl Rng,
) -> Result<NodeId> {
    let k = transformed.len();
    if k == 0 || origins.len() != k {
        return Err(Error::usage("global loss needs one origin per frame"));
    }
    if s_per_beam == 0 {
        return Err(Error::usage("free-space samples per beam must be ≥ 1"));
    }

    let mut occ_segs = Vec::with_capacity(k + 1);
    let mut free_segs = Vec::with_capacity(k + 1);
    occ_segs.push(0u32);
    free_segs.push(0u32);
    let mut free_parts = Vec::with_capacity(k);
    for f in 0..k {
        let n = g.shape(transformed[f]).rows;
        let fracs = Arc::new(draw_fracs(n, s_per_beam, rng));
        let free = g.lerp_to_points(origins[f], transformed[f], fracs, s_per_beam)?;
        free_parts.push(free);
        occ_segs.push(occ_segs[f] + n as u32);
        free_segs.push(free_segs[f] + (n * s_per_beam) as u32);
    }

    let occupied = g.concat_rows(transformed)?;
    let occ_logits = net.logits_graph(g, net_leaves, occupied)?;
    let occ_bce = g.sigmoid_bce(occ_logits, 1.0)?;
    let occ_means = g.seg_mean(occ_bce, Arc::new(occ_segs))?;

    let free = g.concat_rows(&free_parts)?;
    let free_logits = net.logits_graph(g, net_leaves, free)?;
    let free_bce = g.sigmoid_bce(free_logits, 0.0)?;
    let free_means = g.seg_mean(free_bce, Arc::new(free_segs))?;

    let occ_term = g.sum(occ_means)?;
    let free_term = g.sum(free_means)?;
    let total = g.add(occ_term, free_term)?;
    g.scale(total, 1.0 / k as f64)
}

/// Value-level global loss for evaluation paths: builds a throwaway graph
/// with the scene's frames and origins as constants.
pub fn global_loss(
    scene: &GlobalScene,
    net: &OccupancyNet,
    s_per_beam: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let leaves = net.leaf(&mut g)?;
    let mut transformed = Vec::with_capacity(scene.len());
    let mut origins = Vec::with_capacity(scene.len());
    for i in 0..scene.len() {
        let frame = scene.frame(i);
        let n = frame.len();
        transformed.push(g.leaf(Shape::new(n, frame.dim().size()), frame.coords().to_vec())?);
        origins.push(g.leaf_row(frame.sensor_origin())?);
    }
    let root = global_loss_graph(&mut g, net, &leaves, &transformed, &origins, s_per_beam, rng)?;
    Ok(g.scalar_value(root))
}

/// `local + λ_global · global` over one batch of frame nodes.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph(
    g: &mut Graph,
    net: &OccupancyNet,
    net_leaves: &[(NodeId, NodeId)],
    transformed: &[NodeId],
    origins: &[NodeId],
    spec: NeighborSpec,
    lambda_global: f64,
    s_per_beam: usize,
    rng: &mut impl Rng,
) -> Result<(NodeId, NodeId, NodeId)> {
    if lambda_global < 0.0 {
        return Err(Error::usage("λ_global must be ≥ 0"));
    }
    let local = local_loss_graph(g, transformed, spec)?;
    let global = global_loss_graph(g, net, net_leaves, transformed, origins, s_per_beam, rng)?;
    let weighted = g.scale(global, lambda_global)?;
    let total = g.add(local, weighted)?;
    Ok((total, local, global))
}
