//! The registration model: per-frame latent chain with temporal fusion and
//! the shared point-network pose decoder.
//!
//! Latents are free optimization variables — there is no encoder. Frame k's
//! effective latent is the recurrence `z_1 = z̃_1`, `z_k = z̃_k + w ⊙ z_{k−1}`
//! with a learnable elementwise decay `w`. The decoder concatenates the fused
//! latent onto every point of the frame, lifts points through a shared MLP,
//! max-pools over the point axis, and regresses pose parameters.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, NodeId, Shape};
use crate::error::{Error, Result};
use crate::geometry::{Dim, PointSet, Pose};

/// Hidden widths of the per-point stage (applied before max-pooling).
pub const POINT_WIDTHS: [usize; 3] = [64, 256, 1024];
/// Hidden widths of the pose head after pooling (final layer emits the pose).
pub const HEAD_WIDTHS: [usize; 2] = [512, 128];

/// Latent dimension defaults per input dimensionality.
pub fn default_latent_dim(dim: Dim) -> usize {
    match dim {
        Dim::Two => 16,
        Dim::Three => 24,
    }
}

/// Translation head scale defaults: raw head outputs stay O(1) while
/// translations span the world's natural units.
pub fn default_trans_scale(dim: Dim) -> f64 {
    match dim {
        Dim::Two => 20.0,
        Dim::Three => 0.5,
    }
}

/// One dense affine layer `y = x Wᵀ + b` (`w` row-major `[out × in]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    /// Weights uniform in ±sqrt(1/fan_in), biases zero.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Layer {
        let bound = (1.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Layer {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Layer {
        Layer {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    /// Leaf pair (weights, bias) for this layer's current values.
    pub fn leaf(&self, g: &mut Graph) -> Result<(NodeId, NodeId)> {
        let w = g.leaf(Shape::new(self.out_dim, self.in_dim), self.w.clone())?;
        let b = g.leaf(Shape::new(1, self.out_dim), self.b.clone())?;
        Ok((w, b))
    }
}

/// Leaf an entire layer stack in order.
pub fn leaf_layers(g: &mut Graph, layers: &[Layer]) -> Result<Vec<(NodeId, NodeId)>> {
    layers.iter().map(|l| l.leaf(g)).collect()
}

/// Apply a leafed layer stack as an MLP: ReLU after every layer except the
/// last, which stays linear.
pub fn mlp_forward(g: &mut Graph, leaves: &[(NodeId, NodeId)], x: NodeId) -> Result<NodeId> {
    let mut h = x;
    for (i, &(w, b)) in leaves.iter().enumerate() {
        h = g.linear(w, b, h)?;
        if i + 1 < leaves.len() {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

/// Per-sequence latent state: raw per-frame latents and the shared decay.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentChain {
    /// Raw (free) latents, one length-`b` vector per frame.
    pub raw: Vec<Vec<f64>>,
    /// Elementwise memory decay, length `b`.
    pub decay: Vec<f64>,
}

impl LatentChain {
    pub fn new(raw: Vec<Vec<f64>>, decay: Vec<f64>) -> Result<LatentChain> {
        if raw.is_empty() || decay.is_empty() {
            return Err(Error::usage("latent chain needs ≥1 frame and b ≥ 1"));
        }
        let b = decay.len();
        if raw.iter().any(|z| z.len() != b) {
            return Err(Error::usage("all raw latents must have the decay's length"));
        }
        if raw.iter().flatten().chain(&decay).any(|v| !v.is_finite()) {
            return Err(Error::usage("latent chain values must be finite"));
        }
        Ok(LatentChain { raw, decay })
    }

    /// Fresh chain: raw latents i.i.d. standard normal, decay 0.5 throughout.
    pub fn init(num_frames: usize, b: usize, rng: &mut impl Rng) -> LatentChain {
        let raw = (0..num_frames)
            .map(|_| (0..b).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        LatentChain {
            raw,
            decay: vec![0.5; b],
        }
    }

    pub fn num_frames(&self) -> usize {
        self.raw.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.decay.len()
    }

    /// Zero the decay so fused latents reduce to the raw per-frame latents
    /// (the no-temporal-links baseline).
    pub fn sever_links(&mut self) {
        self.decay.iter_mut().for_each(|w| *w = 0.0);
    }

    /// Fused latents by the recurrence, as plain values.
    pub fn fused(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.raw.len());
        for k in 0..self.raw.len() {
            let z = match out.last() {
                None => self.raw[0].clone(),
                Some(prev) => self.raw[k]
                    .iter()
                    .zip(prev)
                    .zip(&self.decay)
                    .map(|((&r, &p), &w)| r + w * p)
                    .collect(),
            };
            out.push(z);
        }
        out
    }
}

/// Graph-side leaves of a latent chain, in optimizer order.
pub struct ChainLeaves {
    pub raw: Vec<NodeId>,
    pub decay: NodeId,
}

pub fn leaf_chain(g: &mut Graph, chain: &LatentChain) -> Result<ChainLeaves> {
    let raw = chain
        .raw
        .iter()
        .map(|z| g.leaf_row(z))
        .collect::<Result<Vec<_>>>()?;
    let decay = g.leaf_row(&chain.decay)?;
    Ok(ChainLeaves { raw, decay })
}

/// Differentiable fusion: `z_1 = z̃_1`, `z_k = z̃_k + w ⊙ z_{k−1}`.
/// Gradients flow into every upstream raw latent and into the decay.
pub fn fuse_latents_graph(g: &mut Graph, leaves: &ChainLeaves) -> Result<Vec<NodeId>> {
    let mut fused = Vec::with_capacity(leaves.raw.len());
    for (k, &raw) in leaves.raw.iter().enumerate() {
        let z = if k == 0 {
            raw
        } else {
            let carried = g.mul(leaves.decay, fused[k - 1])?;
            g.add(raw, carried)?
        };
        fused.push(z);
    }
    Ok(fused)
}

/// Shared pose decoder g_θ. `kernel_width` widens each point-stage layer to
/// look at neighbors along the scan ordering (1 = per-point MLP, order-free).
#[derive(Clone, Debug, PartialEq)]
pub struct PoseDecoder {
    pub dim: Dim,
    pub latent_dim: usize,
    pub kernel_width: usize,
    pub trans_scale: f64,
    pub point_stage: Vec<Layer>,
    pub head: Vec<Layer>,
}

impl PoseDecoder {
    pub fn init(
        dim: Dim,
        latent_dim: usize,
        kernel_width: usize,
        trans_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<PoseDecoder> {
        if latent_dim == 0 {
            return Err(Error::usage("latent dimension must be ≥ 1"));
        }
        if kernel_width == 0 || kernel_width.is_multiple_of(2) {
            return Err(Error::usage("kernel width must be an odd integer ≥ 1"));
        }
        if !(trans_scale > 0.0 && trans_scale.is_finite()) {
            return Err(Error::usage("translation scale must be positive and finite"));
        }
        let mut point_stage = Vec::with_capacity(POINT_WIDTHS.len());
        let mut width = dim.size() + latent_dim;
        for out in POINT_WIDTHS {
            point_stage.push(Layer::init(width * kernel_width, out, rng));
            width = out;
        }
        let mut head = Vec::with_capacity(HEAD_WIDTHS.len() + 1);
        for out in HEAD_WIDTHS {
            head.push(Layer::init(width, out, rng));
            width = out;
        }
        head.push(Layer::init(width, dim.pose_params(), rng));
        Ok(PoseDecoder {
            dim,
            latent_dim,
            kernel_width,
            trans_scale,
            point_stage,
            head,
        })
    }

    /// Column scales turning raw head outputs into pose parameters.
    pub fn output_scales(&self) -> Vec<f64> {
        let p = self.dim.pose_params();
        (0..p)
            .map(|i| if i < self.dim.size() { self.trans_scale } else { 1.0 })
            .collect()
    }

    /// Parameter blocks in a fixed, documented order (point stage then head,
    /// weights before biases). The trainer and checkpoint rely on this order.
    pub fn blocks(&self) -> Vec<(String, &Vec<f64>)> {
        self.layers_named()
            .flat_map(|(name, l)| [(format!("{name}.w"), &l.w), (format!("{name}.b"), &l.b)])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let point = self.point_stage.iter_mut().enumerate().map(|(i, l)| (format!("point{i}"), l));
        let head = self.head.iter_mut().enumerate().map(|(i, l)| (format!("head{i}"), l));
        point
            .chain(head)
            .flat_map(|(name, l)| [(format!("{name}.w"), &mut l.w), (format!("{name}.b"), &mut l.b)])
            .collect()
    }

    fn layers_named(&self) -> impl Iterator<Item = (String, &Layer)> {
        let point = self.point_stage.iter().enumerate().map(|(i, l)| (format!("point{i}"), l));
        let head = self.head.iter().enumerate().map(|(i, l)| (format!("head{i}"), l));
        point.chain(head)
    }
}

/// Leaves for the decoder's layers: point stage then head, matching
/// `PoseDecoder::blocks` order.
pub struct DecoderLeaves {
    pub point_stage: Vec<(NodeId, NodeId)>,
    pub head: Vec<(NodeId, NodeId)>,
}

pub fn leaf_decoder(g: &mut Graph, dec: &PoseDecoder) -> Result<DecoderLeaves> {
    Ok(DecoderLeaves {
        point_stage: leaf_layers(g, &dec.point_stage)?,
        head: leaf_layers(g, &dec.head)?,
    })
}

/// Decoded batch: per-frame pose rows plus the frames and sensor origins
/// carried into the world frame, all differentiable.
pub struct PoseGraph {
    /// Pose parameter rows, `[1 × 3]` (2D) or `[1 × 6]` (3D), translation
    /// already rescaled into world units.
    pub pose_nodes: Vec<NodeId>,
    /// World-frame point sets, `[n_i × dim]`.
    pub transformed: Vec<NodeId>,
    /// World-frame sensor origins, `[1 × dim]`.
    pub origin_nodes: Vec<NodeId>,
    /// Row offsets of each frame inside the stacked point matrix.
    pub segs: Arc<Vec<u32>>,
}

/// Neighbor row indices for a width-`kw` window along the scan ordering,
/// reflected at each frame's boundary, for all frames stacked by `segs`.
fn window_indices(segs: &[u32], offset: isize) -> Vec<u32> {
    let total = *segs.last().unwrap() as usize;
    let mut idx = Vec::with_capacity(total);
    for f in 0..segs.len() - 1 {
        let (lo, hi) = (segs[f] as i64, segs[f + 1] as i64);
        for r in lo..hi {
            let mut t = r + offset as i64;
            // Reflect about the frame's edges (mirror without repeating
            // the edge sample); degenerate one-point frames clamp.
            if t < lo {
                t = (2 * lo - t).min(hi - 1);
            } else if t >= hi {
                t = (2 * (hi - 1) - t).max(lo);
            }
            idx.push(t as u32);
        }
    }
    idx
}

/// Full decoder forward for a window of frames sharing one graph: stacks all
/// points, runs the point stage, pools per frame, regresses poses, and
/// applies them to the frames and origins.
pub fn decoder_graph(
    g: &mut Graph,
    dec: &PoseDecoder,
    leaves: &DecoderLeaves,
    frames: &[&PointSet],
    fused: &[NodeId],
) -> Result<PoseGraph> {
    if frames.is_empty() || frames.len() != fused.len() {
        return Err(Error::usage("decoder needs one fused latent per frame"));
    }
    if frames.iter().any(|f| f.dim() != dec.dim) {
        return Err(Error::usage("frame dimensionality does not match decoder"));
    }

    // Stack [x_i, z_k] rows for all frames.
    let mut parts = Vec::with_capacity(frames.len());
    let mut segs = Vec::with_capacity(frames.len() + 1);
    segs.push(0u32);
    let mut pts_consts = Vec::with_capacity(frames.len());
    for (f, &frame) in frames.iter().enumerate() {
        let n = frame.len();
        let coords = Arc::new(frame.coords().to_vec());
        let pts_leaf = g.leaf(Shape::new(n, dec.dim.size()), coords.as_ref().clone())?;
        let with_latent = g.concat_cols(pts_leaf, fused[f])?;
        parts.push(with_latent);
        segs.push(segs[f] + n as u32);
        pts_consts.push(coords);
    }
    let segs = Arc::new(segs);
    let mut h = g.concat_rows(&parts)?;

    // Point stage; kernel_width > 1 widens each layer input with reflected
    // neighbor rows along the scan ordering.
    let half = dec.kernel_width / 2;
    for &(w, b) in &leaves.point_stage {
        if half > 0 {
            let mut cat = None;
            for off in -(half as isize)..=half as isize {
                let part = if off == 0 {
                    h
                } else {
                    let idx = window_indices(&segs, off);
                    g.gather(h, &idx)?
                };
                cat = Some(match cat {
                    None => part,
                    Some(acc) => g.concat_cols(acc, part)?,
                });
            }
            h = cat.unwrap();
        }
        h = g.linear(w, b, h)?;
        h = g.relu(h)?;
    }

    let pooled = g.seg_max(h, segs.clone())?;
    let raw_out = mlp_forward(g, &leaves.head, pooled)?;
    let scales = dec.output_scales();

    let mut pose_nodes = Vec::with_capacity(frames.len());
    let mut transformed = Vec::with_capacity(frames.len());
    let mut origin_nodes = Vec::with_capacity(frames.len());
    for (f, &frame) in frames.iter().enumerate() {
        let row = g.slice_rows(raw_out, f, 1)?;
        let pose = g.col_scale(row, &scales)?;
        let moved = g.apply_pose(pose, pts_consts[f].clone(), dec.dim.size())?;
        let origin = g.apply_pose(
            pose,
            Arc::new(frame.sensor_origin().to_vec()),
            dec.dim.size(),
        )?;
        pose_nodes.push(pose);
        transformed.push(moved);
        origin_nodes.push(origin);
    }
    Ok(PoseGraph {
        pose_nodes,
        transformed,
        origin_nodes,
        segs,
    })
}

/// Pure single-frame pose evaluation (builds a throwaway graph).
pub fn decode_pose(dec: &PoseDecoder, frame: &PointSet, z: &[f64]) -> Result<Pose> {
    if z.len() != dec.latent_dim {
        return Err(Error::usage("fused latent length does not match decoder"));
    }
    let mut g = Graph::new();
    let leaves = leaf_decoder(&mut g, dec)?;
    let z_node = g.leaf_row(z)?;
    let pg = decoder_graph(&mut g, dec, &leaves, &[frame], &[z_node])?;
    Pose::from_params(dec.dim, g.value(pg.pose_nodes[0]))
}

/// Poses for a whole sequence: fuse the chain, decode every frame.
pub fn decode_sequence(
    dec: &PoseDecoder,
    chain: &LatentChain,
    frames: &[PointSet],
) -> Result<Vec<Pose>> {
    if chain.num_frames() != frames.len() {
        return Err(Error::usage("latent chain length does not match frame count"));
    }
    let mut g = Graph::new();
    let leaves = leaf_decoder(&mut g, dec)?;
    let chain_leaves = leaf_chain(&mut g, chain)?;
    let fused = fuse_latents_graph(&mut g, &chain_leaves)?;
    let refs: Vec<&PointSet> = frames.iter().collect();
    let pg = decoder_graph(&mut g, dec, &leaves, &refs, &fused)?;
    pg.pose_nodes
        .iter()
        .map(|&p| Pose::from_params(dec.dim, g.value(p)))
        .collect()
}

/// Seeded model construction: decoder weights then chain latents are drawn
/// from one derived stream, so equal seeds give bit-identical models.
pub fn init_model(
    dim: Dim,
    latent_dim: usize,
    num_frames: usize,
    kernel_width: usize,
    trans_scale: f64,
    seed: u64,
) -> Result<(PoseDecoder, LatentChain)> {
    let mut rng = crate::rng::stream(seed, 0x6d6f64656c);
    let dec = PoseDecoder::init(dim, latent_dim, kernel_width, trans_scale, &mut rng)?;
    let chain = LatentChain::init(num_frames, latent_dim, &mut rng);
    Ok((dec, chain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn chain_fixture(k: usize, b: usize, seed: u64) -> LatentChain {
        LatentChain::init(k, b, &mut stream(seed, 1))
    }

    /// Closed form z_k = Σ_{j≤k} w^{⊙(k−j)} ⊙ z̃_j.
    fn fused_closed_form(chain: &LatentChain) -> Vec<Vec<f64>> {
        let b = chain.latent_dim();
        (0..chain.num_frames())
            .map(|k| {
                (0..b)
                    .map(|c| {
                        (0..=k)
                            .map(|j| chain.decay[c].powi((k - j) as i32) * chain.raw[j][c])
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn zero_decay_is_memoryless() {
        let mut chain = chain_fixture(5, 4, 3);
        chain.sever_links();
        assert_eq!(chain.fused(), chain.raw);
    }

    #[test]
    fn unit_decay_accumulates() {
        let raw = vec![vec![2.0, -1.0]; 4];
        let chain = LatentChain::new(raw, vec![1.0, 1.0]).unwrap();
        let fused = chain.fused();
        assert_eq!(fused[3], vec![8.0, -4.0]);
    }

    #[test]
    fn recurrence_matches_closed_form() {
        let chain = chain_fixture(5, 6, 11);
        let rec = chain.fused();
        let closed = fused_closed_form(&chain);
        for (a, b) in rec.iter().flatten().zip(closed.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_fusion_matches_value_fusion() {
        let chain = chain_fixture(6, 3, 21);
        let mut g = Graph::new();
        let leaves = leaf_chain(&mut g, &chain).unwrap();
        let fused = fuse_latents_graph(&mut g, &leaves).unwrap();
        for (node, vals) in fused.iter().zip(chain.fused()) {
            assert_eq!(g.value(*node), &vals[..]);
        }
    }

    #[test]
    fn first_fused_equals_first_raw_exactly() {
        let chain = chain_fixture(3, 8, 5);
        assert_eq!(chain.fused()[0], chain.raw[0]);
    }

    fn frame_fixture(n: usize, seed: u64) -> PointSet {
        let mut rng = stream(seed, 2);
        let pts: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-30.0..30.0)).collect();
        PointSet::new(Dim::Two, pts).unwrap()
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_model(Dim::Two, 16, 4, 1, 20.0, 42).unwrap();
        let b = init_model(Dim::Two, 16, 4, 1, 20.0, 42).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = init_model(Dim::Two, 16, 4, 1, 20.0, 43).unwrap();
        assert_ne!(a.0.point_stage[0].w, c.0.point_stage[0].w);
    }

    #[test]
    fn decay_initialized_at_half_biases_zero() {
        let (dec, chain) = init_model(Dim::Two, 16, 4, 1, 20.0, 7).unwrap();
        assert!(chain.decay.iter().all(|&w| w == 0.5));
        assert!(dec.point_stage.iter().all(|l| l.b.iter().all(|&b| b == 0.0)));
        let bound = (1.0 / dec.point_stage[0].in_dim as f64).sqrt();
        assert!(dec.point_stage[0].w.iter().all(|&w| w.abs() < bound));
    }

    #[test]
    fn decode_is_permutation_invariant_with_width_one() {
        let (dec, _) = init_model(Dim::Two, 8, 1, 1, 20.0, 9).unwrap();
        let frame = frame_fixture(24, 4);
        let z = vec![0.3; 8];
        let pose = decode_pose(&dec, &frame, &z).unwrap();

        // Reverse the point order.
        let mut rev = Vec::with_capacity(frame.coords().len());
        for i in (0..frame.len()).rev() {
            rev.extend_from_slice(frame.point(i));
        }
        let frame_rev = PointSet::new(Dim::Two, rev).unwrap();
        let pose_rev = decode_pose(&dec, &frame_rev, &z).unwrap();
        assert_eq!(pose.params(), pose_rev.params());
    }

    #[test]
    fn width_three_depends_on_point_order() {
        let (dec, _) = init_model(Dim::Two, 8, 1, 3, 20.0, 9).unwrap();
        let frame = frame_fixture(24, 4);
        let z = vec![0.3; 8];
        let pose = decode_pose(&dec, &frame, &z).unwrap();
        let mut rev = Vec::new();
        for i in (0..frame.len()).rev() {
            rev.extend_from_slice(frame.point(i));
        }
        let frame_rev = PointSet::new(Dim::Two, rev).unwrap();
        let pose_rev = decode_pose(&dec, &frame_rev, &z).unwrap();
        assert!(pose
            .params()
            .iter()
            .zip(pose_rev.params())
            .any(|(a, b)| (a - b).abs() > 1e-12));
    }

    #[test]
    fn zero_head_decodes_identity_pose() {
        let (mut dec, _) = init_model(Dim::Two, 8, 1, 1, 20.0, 1).unwrap();
        let last = dec.head.last_mut().unwrap();
        *last = Layer::zeros(last.in_dim, last.out_dim);
        let frame = frame_fixture(10, 8);
        let pose = decode_pose(&dec, &frame, &[0.7; 8]).unwrap();
        assert_eq!(pose.params(), Pose::identity(Dim::Two).params());
    }

    #[test]
    fn decode_pose_is_pure() {
        let (dec, _) = init_model(Dim::Two, 16, 4, 1, 20.0, 42).unwrap();
        let frame = frame_fixture(16, 42);
        let z = vec![0.1; 16];
        let a = decode_pose(&dec, &frame, &z).unwrap();
        let b = decode_pose(&dec, &frame, &z).unwrap();
        assert_eq!(a.params(), b.params());
        assert!(a.params().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn temporal_gradient_flows_iff_decay_nonzero() {
        for (decay, expect_flow) in [(0.5, true), (0.0, false)] {
            let (dec, mut chain) = init_model(Dim::Two, 6, 3, 1, 20.0, 31).unwrap();
            chain.decay.iter_mut().for_each(|w| *w = decay);
            let frames: Vec<PointSet> = (0..3).map(|i| frame_fixture(12, 50 + i)).collect();
            let refs: Vec<&PointSet> = frames.iter().collect();

            let mut g = Graph::new();
            let dl = leaf_decoder(&mut g, &dec).unwrap();
            let cl = leaf_chain(&mut g, &chain).unwrap();
            let fused = fuse_latents_graph(&mut g, &cl).unwrap();
            let pg = decoder_graph(&mut g, &dec, &dl, &refs, &fused).unwrap();
            // Scalar probe of the LAST frame's pose only.
            let root = g.sum(pg.pose_nodes[2]).unwrap();
            g.backward(root).unwrap();
            let g1 = g.grad_dense(cl.raw[0]);
            let flows = g1.iter().any(|&v| v != 0.0);
            assert_eq!(flows, expect_flow, "decay {decay}");
        }
    }

    #[test]
    fn init_rejects_bad_hyperparameters() {
        assert!(init_model(Dim::Two, 0, 4, 1, 20.0, 1).is_err());
        assert!(init_model(Dim::Two, 8, 4, 2, 20.0, 1).is_err());
        assert!(init_model(Dim::Two, 8, 4, 1, 0.0, 1).is_err());
    }

    #[test]
    fn window_indices_reflect_at_frame_edges() {
        let segs = vec![0u32, 3, 5];
        // prev: rows [0,1,2 | 3,4] -> [1,0,1 | 4,3]
        assert_eq!(window_indices(&segs, -1), vec![1, 0, 1, 4, 3]);
        // next: -> [1,2,1 | 4,3]
        assert_eq!(window_indices(&segs, 1), vec![1, 2, 1, 4, 3]);
    }
}
