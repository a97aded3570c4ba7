//! Adam optimization over the registration objective: joint training of
//! decoder weights, occupancy weights, temporal weights, and per-frame
//! latents; plus frozen-model adaptation that re-optimizes latents only.

use rand::Rng;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::geometry::{Dim, GlobalScene, Pose};
use crate::losses::{
    global_loss, global_loss_graph, local_loss, local_loss_graph, NeighborSpec, OccupancyNet,
};
use crate::metrics::{evaluate, Anchor};
use crate::model::{
    decode_sequence, decoder_graph, default_latent_dim, default_trans_scale, fuse_latents_graph,
    leaf_decoder, ChainLeaves, LatentChain, PoseDecoder,
};
use crate::rng::stream;
use crate::simulator::SequenceDataset;

/// Optimization settings. Learning-rate defaults follow the registration
/// method's published choices (0.001 for network weights, 0.0001 for
/// latents); `temporal = false` removes the latent links entirely.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_net: f64,
    pub lr_latent: f64,
    pub iters: usize,
    /// Frames per batch; a batch is a contiguous window of one sequence.
    pub batch_frames: usize,
    pub lambda_global: f64,
    pub s_per_beam: usize,
    pub seed: u64,
    /// Neighbor window radius for the pairwise registration loss.
    pub neighbor_radius: usize,
    pub eval_every: usize,
    /// Latent width; `None` picks the per-dimension default.
    pub latent_dim: Option<usize>,
    pub kernel_width: usize,
    /// Translation output scale; `None` picks the per-dimension default.
    pub trans_scale: Option<f64>,
    /// Half side length of the occupancy query normalization box; `None`
    /// infers it from the data.
    pub world_extent: Option<f64>,
    /// When false, temporal weights are fixed at zero and never optimized
    /// (the independent-latents baseline).
    pub temporal: bool,
    /// Optional gradient clip at this global norm, as a divergence guard.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_net: 0.001,
            lr_latent: 0.0001,
            iters: 3000,
            batch_frames: 128,
            lambda_global: 1.0,
            s_per_beam: 8,
            seed: 0,
            neighbor_radius: 1,
            eval_every: 50,
            latent_dim: None,
            kernel_width: 1,
            trans_scale: None,
            world_extent: None,
            temporal: true,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the per-dimension batch size (128 in 2D, 8 in 3D).
    pub fn for_dim(dim: Dim) -> TrainConfig {
        TrainConfig {
            batch_frames: match dim {
                Dim::Two => 128,
                Dim::Three => 8,
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters < 1 {
            return Err(Error::config("iters must be ≥ 1"));
        }
        self.validate_relaxed()
    }

    /// Validation without the iteration floor; adaptation permits
    /// `iters = 0` as a pure inference pass.
    fn validate_relaxed(&self) -> Result<()> {
        if !(self.lr_net > 0.0 && self.lr_latent > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.batch_frames < 2 {
            return Err(Error::config("batch must cover at least 2 frames"));
        }
        if self.lambda_global < 0.0 {
            return Err(Error::config("lambda_global must be ≥ 0"));
        }
        if self.s_per_beam < 1 {
            return Err(Error::config("s_per_beam must be ≥ 1"));
        }
        if self.neighbor_radius < 1 {
            return Err(Error::config("neighbor radius must be ≥ 1"));
        }
        if self.eval_every < 1 {
            return Err(Error::config("eval_every must be ≥ 1"));
        }
        if self.kernel_width == 0 || self.kernel_width.is_multiple_of(2) {
            return Err(Error::config("kernel width must be odd"));
        }
        if let Some(c) = self.clip_norm {
            // Rejects NaN as well as non-positive values.
            if c.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::config("clip norm must be positive"));
            }
        }
        Ok(())
    }
}

/// Adam moment estimates, one pair of buffers per parameter slot.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(slot_sizes: &[usize]) -> AdamState {
        AdamState {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn num_slots(&self) -> usize {
        self.m.len()
    }
}

/// One bias-corrected Adam update across all slots; `lrs[i]` is slot i's
/// learning rate (0 freezes the slot exactly).
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut Vec<f64>],
    grads: &[Vec<f64>],
    lrs: &[f64],
) -> Result<()> {
    if params.len() != state.num_slots() || grads.len() != params.len() || lrs.len() != params.len()
    {
        return Err(Error::usage("optimizer slot count mismatch"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if p.len() != grads[i].len() || p.len() != state.m[i].len() {
            return Err(Error::usage("optimizer slot shape mismatch"));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, x) in p.iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            *x -= lrs[i] * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) {
    let sq: f64 = grads.iter().flatten().map(|g| g * g).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            *g *= s;
        }
    }
}

/// Loss and accuracy snapshot at one optimization step. Loss columns are
/// batch values for in-loop rows and full-sequence means for the final
/// row; accuracy columns are always full-sequence means and present only
/// when ground truth is available.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub local_loss: f64,
    pub global_loss: f64,
    pub total_loss: f64,
    pub ate: Option<f64>,
    pub point_dist: Option<f64>,
}

/// All optimizable state: shared decoder, shared occupancy net, shared
/// temporal weights, and per-sequence per-frame latents.
#[derive(Clone, Debug)]
pub struct TrainerModel {
    pub decoder: PoseDecoder,
    pub occupancy: OccupancyNet,
    pub decay: Vec<f64>,
    pub latents: Vec<Vec<Vec<f64>>>,
}

impl TrainerModel {
    /// Seeded initialization sized to the datasets. Latents are standard
    /// normal; temporal weights start at 0.5 (or 0 with `temporal` off).
    pub fn init(datasets: &[SequenceDataset], cfg: &TrainConfig) -> Result<TrainerModel> {
        let dim = check_datasets(datasets)?;
        let b = cfg.latent_dim.unwrap_or_else(|| default_latent_dim(dim));
        let ts = cfg.trans_scale.unwrap_or_else(|| default_trans_scale(dim));
        let extent = match cfg.world_extent {
            Some(e) if e > 0.0 => e,
            Some(_) => return Err(Error::config("world extent must be positive")),
            None => inferred_extent(datasets),
        };
        let mut rng = stream(cfg.seed, 0x6d6f64656c);
        let decoder = PoseDecoder::init(dim, b, cfg.kernel_width, ts, &mut rng)?;
        let occupancy = OccupancyNet::init(dim, vec![extent; dim.size()], &mut rng)?;
        let latents = datasets
            .iter()
            .map(|ds| LatentChain::init(ds.num_frames(), b, &mut rng).raw)
            .collect();
        let decay = if cfg.temporal {
            vec![0.5; b]
        } else {
            vec![0.0; b]
        };
        Ok(TrainerModel {
            decoder,
            occupancy,
            decay,
            latents,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.latent_dim
    }

    /// Per-sequence latent chains sharing the model's temporal weights.
    pub fn chains(&self) -> Result<Vec<LatentChain>> {
        self.latents
            .iter()
            .map(|raw| LatentChain::new(raw.clone(), self.decay.clone()))
            .collect()
    }
}

fn check_datasets(datasets: &[SequenceDataset]) -> Result<Dim> {
    if datasets.is_empty() {
        return Err(Error::usage("training needs at least one sequence"));
    }
    let dim = datasets[0].dim;
    for ds in datasets {
        ds.validate()?;
        if ds.dim != dim {
            return Err(Error::usage("mixed dimensions across sequences"));
        }
        if ds.num_frames() < 2 {
            return Err(Error::usage("every sequence needs at least 2 frames"));
        }
    }
    Ok(dim)
}

/// Query-normalization extent when none is configured: the largest
/// sensor-local coordinate magnitude, with head-room for pose motion.
fn inferred_extent(datasets: &[SequenceDataset]) -> f64 {
    let mut m: f64 = 0.0;
    for ds in datasets {
        for f in &ds.frames {
            for c in f.coords() {
                m = m.max(c.abs());
            }
        }
    }
    (1.25 * m).max(1.0)
}

/// Joint training (decoder, occupancy, temporal weights, latents) on one
/// or more sequences.
pub struct TrainOutput {
    pub decoder: PoseDecoder,
    pub occupancy: OccupancyNet,
    pub chains: Vec<LatentChain>,
    pub history: Vec<HistoryRow>,
}

pub fn train(datasets: &[SequenceDataset], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut model = TrainerModel::init(datasets, cfg)?;
    let history = train_model(&mut model, datasets, cfg)?;
    let chains = model.chains()?;
    Ok(TrainOutput {
        decoder: model.decoder,
        occupancy: model.occupancy,
        chains,
        history,
    })
}

fn diverged(it: usize, term: &str, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!(
            "optimization diverged at iteration {it} in the {term} term: {msg}"
        )),
        other => other,
    }
}

/// Mean ATE / point distance over all ground-truthed sequences, if any.
fn accuracy(
    model: &TrainerModel,
    datasets: &[SequenceDataset],
) -> Result<(Option<f64>, Option<f64>)> {
    let chains = model.chains()?;
    let (mut ate_sum, mut pd_sum, mut cnt) = (0.0, 0.0, 0usize);
    for (ds, chain) in datasets.iter().zip(&chains) {
        let Some(gt) = &ds.gt_poses else { continue };
        let est = decode_sequence(&model.decoder, chain, &ds.frames)?;
        let report = evaluate(&est, gt, &ds.frames, Anchor::Fit)?;
        ate_sum += report.ate;
        pd_sum += report.point_dist;
        cnt += 1;
    }
    if cnt == 0 {
        Ok((None, None))
    } else {
        Ok((Some(ate_sum / cnt as f64), Some(pd_sum / cnt as f64)))
    }
}

/// Full-sequence loss means for the terminal history row.
fn full_row(
    iteration: usize,
    model: &TrainerModel,
    datasets: &[SequenceDataset],
    cfg: &TrainConfig,
) -> Result<HistoryRow> {
    let spec = NeighborSpec::new(cfg.neighbor_radius)?;
    let mut rng = stream(cfg.seed, 0x6576616c ^ iteration as u64);
    let chains = model.chains()?;
    let (mut l_sum, mut g_sum) = (0.0, 0.0);
    for (ds, chain) in datasets.iter().zip(&chains) {
        let poses = decode_sequence(&model.decoder, chain, &ds.frames)?;
        let scene = GlobalScene::from_poses(&ds.frames, &poses)?;
        l_sum += local_loss(&scene, spec)?;
        g_sum += global_loss(&scene, &model.occupancy, cfg.s_per_beam, &mut rng)?;
    }
    let k = datasets.len() as f64;
    let (l, g) = (l_sum / k, g_sum / k);
    let (ate, point_dist) = accuracy(model, datasets)?;
    Ok(HistoryRow {
        iteration,
        local_loss: l,
        global_loss: g,
        total_loss: l + cfg.lambda_global * g,
        ate,
        point_dist,
    })
}

/// The shared optimization loop. `latent_only` freezes decoder, occupancy,
/// and temporal weights (their slots get learning rate 0 and are never
/// written, so they stay bit-identical).
fn optimize(
    model: &mut TrainerModel,
    datasets: &[SequenceDataset],
    cfg: &TrainConfig,
    latent_only: bool,
) -> Result<Vec<HistoryRow>> {
    let dim = check_datasets(datasets)?;
    if dim != model.decoder.dim {
        return Err(Error::usage("model/dataset dimension mismatch"));
    }
    if model.latents.len() != datasets.len()
        || model
            .latents
            .iter()
            .zip(datasets)
            .any(|(l, ds)| l.len() != ds.num_frames())
    {
        return Err(Error::usage("latent chains do not match the datasets"));
    }
    let spec = NeighborSpec::new(cfg.neighbor_radius)?;
    let mut rng = stream(cfg.seed, 0x747261696e);

    // Fixed slot order: decoder blocks, occupancy blocks, every sequence's
    // latents, shared temporal weights.
    let mut sizes: Vec<usize> = Vec::new();
    let mut lrs: Vec<f64> = Vec::new();
    for (_, blk) in model.decoder.blocks() {
        sizes.push(blk.len());
        lrs.push(if latent_only { 0.0 } else { cfg.lr_net });
    }
    for (_, blk) in model.occupancy.blocks() {
        sizes.push(blk.len());
        lrs.push(if latent_only { 0.0 } else { cfg.lr_net });
    }
    for seq in &model.latents {
        for z in seq {
            sizes.push(z.len());
            lrs.push(cfg.lr_latent);
        }
    }
    sizes.push(model.decay.len());
    lrs.push(if cfg.temporal && !latent_only {
        cfg.lr_latent
    } else {
        0.0
    });
    let mut adam = AdamState::new(&sizes);
    let mut history = Vec::new();

    for it in 0..cfg.iters {
        // Batch: a contiguous frame window of one randomly chosen sequence.
        let s = if datasets.len() > 1 {
            rng.random_range(0..datasets.len())
        } else {
            0
        };
        let n = datasets[s].num_frames();
        let win = cfg.batch_frames.min(n);
        let start = if n > win {
            rng.random_range(0..=n - win)
        } else {
            0
        };

        let mut g = Graph::new();
        let dec_leaves = leaf_decoder(&mut g, &model.decoder)?;
        let occ_leaves = model.occupancy.leaf(&mut g)?;
        let decay_leaf = g.leaf_row(&model.decay)?;
        let raw_leaves = model.latents[s]
            .iter()
            .map(|z| g.leaf_row(z))
            .collect::<Result<Vec<_>>>()?;
        let chain_leaves = ChainLeaves {
            raw: raw_leaves.clone(),
            decay: decay_leaf,
        };
        // The recurrence always runs over the whole chain so window frames
        // receive gradients from (and send them to) out-of-window latents.
        let fused = fuse_latents_graph(&mut g, &chain_leaves)
            .map_err(|e| diverged(it, "latent fusion", e))?;
        let frames: Vec<&_> = datasets[s].frames[start..start + win].iter().collect();
        let pg = decoder_graph(
            &mut g,
            &model.decoder,
            &dec_leaves,
            &frames,
            &fused[start..start + win],
        )
        .map_err(|e| diverged(it, "pose", e))?;
        let local = local_loss_graph(&mut g, &pg.transformed, spec)
            .map_err(|e| diverged(it, "registration", e))?;
        let global = global_loss_graph(
            &mut g,
            &model.occupancy,
            &occ_leaves,
            &pg.transformed,
            &pg.origin_nodes,
            cfg.s_per_beam,
            &mut rng,
        )
        .map_err(|e| diverged(it, "mapping", e))?;
        let weighted = g
            .scale(global, cfg.lambda_global)
            .and_then(|w| g.add(local, w))
            .map_err(|e| diverged(it, "total", e))?;
        g.backward(weighted)
            .map_err(|e| diverged(it, "backward pass", e))?;

        let row_losses = (
            g.scalar_value(local),
            g.scalar_value(global),
            g.scalar_value(weighted),
        );

        // Gradients in slot order; sequences outside the batch get zeros.
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(sizes.len());
        for (w, b) in dec_leaves.point_stage.iter().chain(dec_leaves.head.iter()) {
            grads.push(g.grad_dense(*w));
            grads.push(g.grad_dense(*b));
        }
        for (w, b) in &occ_leaves {
            grads.push(g.grad_dense(*w));
            grads.push(g.grad_dense(*b));
        }
        for (si, seq) in model.latents.iter().enumerate() {
            if si == s {
                for &leaf in &raw_leaves {
                    grads.push(g.grad_dense(leaf));
                }
            } else {
                for z in seq {
                    grads.push(vec![0.0; z.len()]);
                }
            }
        }
        grads.push(g.grad_dense(decay_leaf));
        drop(g);

        if it % cfg.eval_every == 0 {
            let (ate, point_dist) = accuracy(model, datasets)?;
            history.push(HistoryRow {
                iteration: it,
                local_loss: row_losses.0,
                global_loss: row_losses.1,
                total_loss: row_losses.2,
                ate,
                point_dist,
            });
        }

        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut grads, c);
        }

        let mut slots: Vec<&mut Vec<f64>> = Vec::with_capacity(sizes.len());
        for (_, blk) in model.decoder.blocks_mut() {
            slots.push(blk);
        }
        for (_, blk) in model.occupancy.blocks_mut() {
            slots.push(blk);
        }
        for seq in model.latents.iter_mut() {
            for z in seq.iter_mut() {
                slots.push(z);
            }
        }
        slots.push(&mut model.decay);
        adam_step(&mut adam, &mut slots, &grads, &lrs)?;
    }

    history.push(full_row(cfg.iters, model, datasets, cfg)?);
    Ok(history)
}

/// Joint optimization of an existing model (exposed so callers can stage
/// initialization and training separately).
pub fn train_model(
    model: &mut TrainerModel,
    datasets: &[SequenceDataset],
    cfg: &TrainConfig,
) -> Result<Vec<HistoryRow>> {
    cfg.validate()?;
    optimize(model, datasets, cfg, false)
}

/// Latent-only adaptation of a frozen model to a new sequence.
pub struct AdaptOutput {
    pub chain: LatentChain,
    pub poses: Vec<Pose>,
    pub history: Vec<HistoryRow>,
}

/// Fits fresh standard-normal latents to `dataset` under a frozen decoder,
/// occupancy net, and temporal weights. `cfg.iters` may be 0, which decodes
/// the random initialization unchanged. The frozen parts are never written.
pub fn adapt(
    dataset: &SequenceDataset,
    decoder: &PoseDecoder,
    occupancy: &OccupancyNet,
    decay: &[f64],
    cfg: &TrainConfig,
) -> Result<AdaptOutput> {
    cfg.validate_relaxed()?;
    dataset.validate()?;
    if dataset.dim != decoder.dim {
        return Err(Error::usage("model/dataset dimension mismatch"));
    }
    if decay.len() != decoder.latent_dim {
        return Err(Error::usage(
            "temporal weight length does not match the decoder latent width",
        ));
    }
    let n = dataset.num_frames();
    let mut init_rng = stream(cfg.seed, 0x61646170);
    let raw = LatentChain::init(n, decoder.latent_dim, &mut init_rng).raw;
    let mut model = TrainerModel {
        decoder: decoder.clone(),
        occupancy: occupancy.clone(),
        decay: decay.to_vec(),
        latents: vec![raw],
    };
    let history = if cfg.iters == 0 {
        vec![full_row(0, &model, std::slice::from_ref(dataset), cfg)?]
    } else {
        optimize(&mut model, std::slice::from_ref(dataset), cfg, true)?
    };
    let chain = LatentChain::new(model.latents.remove(0), model.decay)?;
    let poses = decode_sequence(decoder, &chain, &dataset.frames)?;
    Ok(AdaptOutput {
        chain,
        poses,
        history,
    })
}

/// Mean full-sequence registration loss of a decoded model — the headline
/// number for before/after comparisons.
pub fn scene_local_loss(
    decoder: &PoseDecoder,
    chain: &LatentChain,
    dataset: &SequenceDataset,
    neighbor_radius: usize,
) -> Result<f64> {
    let poses = decode_sequence(decoder, chain, &dataset.frames)?;
    let scene = GlobalScene::from_poses(&dataset.frames, &poses)?;
    local_loss(&scene, NeighborSpec::new(neighbor_radius)?)
}
