//! Run configuration: a TOML file with documented defaults, strict key
//! checking, and CLI-flag overrides. The resolved configuration is echoed
//! into every output directory so runs are self-describing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use strep_core::error::{Error, Result};
use strep_core::geometry::Dim;
use strep_core::metrics::Anchor;
use strep_core::simulator::TrajectorySpec;
use strep_core::trainer::TrainConfig;

/// Gauge-alignment choice for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorChoice {
    First,
    Fit,
}

impl From<AnchorChoice> for Anchor {
    fn from(c: AnchorChoice) -> Anchor {
        match c {
            AnchorChoice::First => Anchor::First,
            AnchorChoice::Fit => Anchor::Fit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Latent width; omitted = per-dimension default (16 in 2D, 24 in 3D).
    pub latent_dim: Option<usize>,
    pub kernel_width: usize,
    /// Translation output scale; omitted = per-dimension default (20 / 0.5).
    pub trans_scale: Option<f64>,
    /// Occupancy query normalization extent; omitted = inferred from data.
    pub world_extent: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent_dim: None,
            kernel_width: 1,
            trans_scale: None,
            world_extent: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr_net: f64,
    pub lr_latent: f64,
    pub iters: usize,
    pub batch_frames: usize,
    pub lambda_global: f64,
    pub s_per_beam: usize,
    pub neighbor_radius: usize,
    pub eval_every: usize,
    pub temporal: bool,
    /// Optional gradient clip (global norm), a divergence guard.
    pub clip_norm: Option<f64>,
    /// Iterations for latent-only adaptation runs.
    pub adapt_iters: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr_net: 0.001,
            lr_latent: 0.01,
            iters: 600,
            batch_frames: 128,
            lambda_global: 1.0,
            s_per_beam: 2,
            neighbor_radius: 1,
            eval_every: 100,
            temporal: true,
            clip_norm: None,
            adapt_iters: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub num_frames: usize,
    pub rot_range_deg: f64,
    pub trans_range: f64,
    pub beams: usize,
    pub fov_deg: f64,
    pub max_range: f64,
    /// Sequences per built-in environment (corridor loop, two-room office,
    /// cluttered hall).
    pub per_env: Vec<usize>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            num_frames: 16,
            rot_range_deg: 10.0,
            trans_range: 16.0,
            beams: 128,
            fov_deg: 360.0,
            max_range: 400.0,
            per_env: vec![7, 7, 6],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub anchor: AnchorChoice,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sim: SimSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            anchor: AnchorChoice::Fit,
            model: ModelSection::default(),
            train: TrainSection::default(),
            sim: SimSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.trajectory_spec().validate()?;
        if self.threads < 1 {
            return Err(Error::config("threads must be ≥ 1"));
        }
        if self.sim.per_env.len() != 3 {
            return Err(Error::config(
                "per_env needs one count per built-in environment (3 entries)",
            ));
        }
        Ok(())
    }

    /// The serialized form written beside every run's outputs.
    pub fn echo(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config echo: {e}")))
    }

    /// Provenance fingerprint of the resolved configuration.
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.echo()?.as_bytes());
        Ok(format!("{:x}", h.finalize()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_net: self.train.lr_net,
            lr_latent: self.train.lr_latent,
            iters: self.train.iters,
            batch_frames: self.train.batch_frames,
            lambda_global: self.train.lambda_global,
            s_per_beam: self.train.s_per_beam,
            seed: self.seed,
            neighbor_radius: self.train.neighbor_radius,
            eval_every: self.train.eval_every,
            latent_dim: self.model.latent_dim,
            kernel_width: self.model.kernel_width,
            trans_scale: self.model.trans_scale,
            world_extent: self.model.world_extent,
            temporal: self.train.temporal,
            clip_norm: self.train.clip_norm,
        }
    }

    pub fn trajectory_spec(&self) -> TrajectorySpec {
        TrajectorySpec {
            num_frames: self.sim.num_frames,
            rot_range: self.sim.rot_range_deg.to_radians(),
            trans_range: self.sim.trans_range,
            beams: self.sim.beams,
            fov: self.sim.fov_deg.to_radians(),
            max_range: self.sim.max_range,
            seed: self.seed,
        }
    }

    /// Effective batch size differs by dimension when left at the default.
    pub fn batch_frames_for(&self, dim: Dim) -> usize {
        if self.train.batch_frames == TrainSection::default().batch_frames {
            match dim {
                Dim::Two => self.train.batch_frames,
                Dim::Three => 8,
            }
        } else {
            self.train.batch_frames
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_echo() {
        let cfg = RunConfig::default();
        let echo = cfg.echo().unwrap();
        let back: RunConfig = toml::from_str(&echo).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("typo_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("typo_key"));
        assert!(toml::from_str::<RunConfig>("[train]\nbogus = 2\n").is_err());
    }

    #[test]
    fn partial_files_take_defaults_elsewhere() {
        let cfg: RunConfig = toml::from_str("seed = 9\n[train]\niters = 7\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.iters, 7);
        assert_eq!(cfg.train.lr_net, 0.001);
        assert_eq!(cfg.sim.num_frames, 16);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        assert_eq!(a.fingerprint().unwrap(), RunConfig::default().fingerprint().unwrap());
    }

    #[test]
    fn anchor_choices_map_to_metrics() {
        assert_eq!(Anchor::from(AnchorChoice::Fit), Anchor::Fit);
        assert_eq!(Anchor::from(AnchorChoice::First), Anchor::First);
        let cfg: RunConfig = toml::from_str("anchor = \"first\"\n").unwrap();
        assert_eq!(cfg.anchor, AnchorChoice::First);
    }
}
