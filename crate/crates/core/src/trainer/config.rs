use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::EnvSpec;
use crate::imitator::{DiscArch, DEFAULT_CLAMP};
use crate::pg::{PgMethod, ReturnForm};
use crate::policy::{Encoding, ImitInput, MixGranularity, PolicyKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    TrainAdversary,
    RetrainVictim,
    /// Adversary training with no imitator at all.
    AblationNoImitator,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub adversary: f64,
    pub imitator: f64,
    pub discriminator: f64,
    pub victim: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            adversary: 0.3,
            imitator: 0.5,
            discriminator: 1.0,
            victim: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub encoding: Encoding,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            kind: PolicyKind::TabularSoftmax,
            encoding: Encoding::OneHot,
        }
    }
}

/// Everything a training run depends on. Unset JSON fields take the
/// defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub mode: Mode,
    /// Enhanced imitator and differentiated adversary reward.
    pub enhanced: bool,
    /// Environment steps for adversary training.
    pub total_steps: u64,
    /// Environment steps for victim retraining.
    pub retrain_steps: u64,
    /// Environment steps of self-play when pretraining a victim.
    pub pretrain_steps: u64,
    /// Steps collected per cycle before the update phase runs.
    pub batch_size: usize,
    pub inner_epochs: usize,
    /// Cycles at the start during which only the imitator side learns.
    pub warmup_cycles: u64,
    pub lr: LearningRates,
    /// Entropy bonus weight of the imitator.
    pub entropy_coeff: f64,
    pub clamp: (f64, f64),
    pub clip_eps: f64,
    /// Overrides the environment's discount when set.
    pub gamma: Option<f64>,
    pub mix_p: f64,
    pub mix_granularity: MixGranularity,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub method: PgMethod,
    /// Return form of the adversary and victim updates.
    pub return_form: ReturnForm,
    /// Return form of the imitator update. Later imitation rewards depend on
    /// the victim's moves rather than the prediction, so one-step credit
    /// keeps most of the signal at far lower variance.
    pub imitator_return_form: ReturnForm,
    pub adversary: PolicySpec,
    pub imitator_input: ImitInput,
    pub discriminator: DiscArch,
    /// Weight discriminator pairs by `gamma^t`.
    pub disc_discounted: bool,
    /// Write a checkpoint whenever the step count crosses a multiple of this.
    /// Zero keeps only the initial and final checkpoints.
    pub checkpoint_every: u64,
    pub eval_episodes: usize,
    /// Episodes rolled out in parallel per chunk. Results do not depend on it.
    pub rollout_chunk: usize,
    pub verify_on_finish: bool,
    pub victim: Option<PathBuf>,
    /// Trained attacker (a training checkpoint or adversary file) for retraining.
    pub new_adversary: Option<PathBuf>,
    /// Baseline attacker for retraining.
    pub base_adversary: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::grid_pass(4, 3),
            mode: Mode::TrainAdversary,
            enhanced: true,
            total_steps: 500_000,
            retrain_steps: 200_000,
            pretrain_steps: 200_000,
            batch_size: 2048,
            inner_epochs: 4,
            warmup_cycles: 5,
            lr: LearningRates::default(),
            entropy_coeff: 0.01,
            clamp: DEFAULT_CLAMP,
            clip_eps: 0.2,
            gamma: None,
            mix_p: 0.5,
            mix_granularity: MixGranularity::Episode,
            seed: 0,
            output_dir: None,
            method: PgMethod::PpoClip,
            return_form: ReturnForm::RewardToGo,
            imitator_return_form: ReturnForm::Immediate,
            adversary: PolicySpec::default(),
            imitator_input: ImitInput::Sampled,
            discriminator: DiscArch::Pairwise,
            disc_discounted: true,
            checkpoint_every: 100_000,
            eval_episodes: 1000,
            rollout_chunk: 64,
            verify_on_finish: false,
            victim: None,
            new_adversary: None,
            base_adversary: None,
        }
    }
}

fn positive(name: &'static str, value: f64, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::ParamOutOfRange {
            name,
            value: value.to_string(),
            range: "> 0",
        })
    }
}

impl TrainConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        positive("batch_size", self.batch_size as f64, self.batch_size > 0)?;
        positive(
            "inner_epochs",
            self.inner_epochs as f64,
            self.inner_epochs > 0,
        )?;
        positive(
            "eval_episodes",
            self.eval_episodes as f64,
            self.eval_episodes > 0,
        )?;
        positive(
            "rollout_chunk",
            self.rollout_chunk as f64,
            self.rollout_chunk > 0,
        )?;
        positive("clip_eps", self.clip_eps, self.clip_eps > 0.0)?;
        for (name, lr) in [
            ("lr.adversary", self.lr.adversary),
            ("lr.imitator", self.lr.imitator),
            ("lr.discriminator", self.lr.discriminator),
            ("lr.victim", self.lr.victim),
        ] {
            positive(name, lr, lr > 0.0 && lr.is_finite())?;
        }
        if !(self.entropy_coeff >= 0.0 && self.entropy_coeff.is_finite()) {
            return Err(Error::ParamOutOfRange {
                name: "entropy_coeff",
                value: self.entropy_coeff.to_string(),
                range: ">= 0",
            });
        }
        if !(0.0..=1.0).contains(&self.mix_p) {
            return Err(Error::ParamOutOfRange {
                name: "mix_p",
                value: self.mix_p.to_string(),
                range: "0 <= mix_p <= 1",
            });
        }
        let (lo, hi) = self.clamp;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::ParamOutOfRange {
                name: "clamp",
                value: format!("({lo}, {hi})"),
                range: "0 < lower <= upper < 1",
            });
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::ParamOutOfRange {
                    name: "gamma",
                    value: g.to_string(),
                    range: "0 <= gamma < 1",
                });
            }
        }
        if self.adversary.kind == PolicyKind::Fixed {
            return Err(Error::Config("the adversary must be trainable".into()));
        }
        Ok(())
    }

    /// Copy with the environment fully spelled out and `gamma` set to the
    /// discount actually used.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let mut env = self.env.clone();
        if let Some(g) = self.gamma {
            env.discount = Some(g);
        }
        let env = env.resolved()?;
        Ok(Self {
            gamma: env.discount,
            env,
            ..self.clone()
        })
    }
}
