//! Training loops: adversary training with an imitator, victim pretraining
//! by self-play, and victim retraining against a mixed adversary.
//!
//! Every loop runs in cycles. A cycle collects whole episodes in parallel
//! from frozen policy snapshots until at least `batch_size` steps are in,
//! runs the update phase single-threaded, and clears its buffers. Episode
//! `i` of cycle `c` draws from `seeding::rng(seed, [stream, c, i])`, so a run
//! is reproducible regardless of thread count and can resume from any cycle
//! boundary.

mod checkpoint;
mod config;

use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_attacker, load_json, load_policy, load_train_state, save_json, Attacker, TrainState,
};
pub use config::{LearningRates, Mode, PolicySpec, TrainConfig};

use crate::adversary::{adv_update, differentiated_reward, AdversaryState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, run_end_bounds, write_bound_reports, WinTieReport};
use crate::game::{
    make_env, rollout, rollout_with, AdversaryAgent, MarkovGame, Outcome, Trajectory,
};
use crate::imitator::{
    disc_update, imit_policy_update, imitation_gap, Discriminator, ImitatorState, PairSample,
};
use crate::oracle::occupancy;
use crate::oracle::BoundReport;
use crate::pg::{pg_step, BatchTag, EpisodeRecord, PgBatch, PgMethod, PgSettings, StepRecord};
use crate::policy::{
    safe_ln, Encoding, ImitSignal, MixGranularity, Mixture, ObsLayout, Policy, PolicyKind,
};
use crate::seeding;

pub const METRICS_HEADER: &str =
    "step,win_rate,tie_rate,loss_rate,imitation_gap,adv_objective,eta_mean";

const TRAIN_STREAM: u64 = 1;
const RETRAIN_STREAM: u64 = 2;
const PRETRAIN_STREAM: u64 = 3;
const INIT_STREAM: u64 = 4;
const EVAL_SEED_STREAM: u64 = 5;

/// One line of `metrics.csv`. Quantities that do not apply to a run are NaN.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub win_rate: f64,
    pub tie_rate: f64,
    pub loss_rate: f64,
    /// Occupancy-weighted total variation between imitator and victim.
    pub imitation_gap: f64,
    /// Mean discounted return of the adversary's training reward.
    pub adv_objective: f64,
    /// Mean imitation reward over the cycle's imitator steps.
    pub eta_mean: f64,
}

impl MetricsRow {
    fn from_cycle(step: u64, trajs: &[Trajectory]) -> Self {
        let n = trajs.len() as f64;
        let frac = |o: Outcome| trajs.iter().filter(|t| t.outcome == o).count() as f64 / n;
        Self {
            step,
            win_rate: frac(Outcome::AdvWin),
            tie_rate: frac(Outcome::Tie),
            loss_rate: frac(Outcome::VicWin),
            imitation_gap: f64::NAN,
            adv_objective: f64::NAN,
            eta_mean: f64::NAN,
        }
    }
}

/// Appends rows to `<dir>/metrics.csv`, flushing after each.
struct MetricsSink {
    writer: Option<csv::Writer<std::fs::File>>,
}

impl MetricsSink {
    fn open(dir: Option<&Path>, prior: &[MetricsRow]) -> Result<Self> {
        let writer = match dir {
            None => None,
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let mut w = csv::WriterBuilder::new()
                    .has_headers(false)
                    .from_path(dir.join("metrics.csv"))
                    .map_err(csv_error)?;
                w.write_record(METRICS_HEADER.split(','))
                    .map_err(csv_error)?;
                for row in prior {
                    w.serialize(row).map_err(csv_error)?;
                }
                w.flush()?;
                Some(w)
            }
        };
        Ok(Self { writer })
    }

    fn push(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.serialize(row).map_err(csv_error)?;
            w.flush()?;
        }
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("metrics csv: {other:?}")),
    }
}

/// Reads a metrics file written by a training run.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::MalformedCsv {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    })?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize().enumerate() {
        rows.push(rec.map_err(|e: csv::Error| Error::MalformedCsv {
            path: path.to_path_buf(),
            line: e.position().map_or(i + 2, |p| p.line() as usize),
            msg: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Plays whole episodes, `chunk` at a time in parallel, until their step
/// count reaches `min_steps`. The kept prefix depends only on the episode
/// index order, never on `chunk`.
fn collect_episodes<F>(min_steps: usize, chunk: usize, play: F) -> Vec<Trajectory>
where
    F: Fn(u64) -> Trajectory + Sync,
{
    let mut out = Vec::new();
    let mut steps = 0usize;
    let mut next = 0u64;
    while steps < min_steps {
        let batch: Vec<Trajectory> = (next..next + chunk as u64)
            .into_par_iter()
            .map(&play)
            .collect();
        next += chunk as u64;
        for tr in batch {
            if steps >= min_steps {
                break;
            }
            // Zero-length episodes cannot occur from a live start state, but
            // count them as one step so the loop always terminates.
            steps += tr.len().max(1);
            out.push(tr);
        }
    }
    out
}

fn check_victim(game: &MarkovGame, victim: &Policy) -> Result<()> {
    victim.layout().check(game)?;
    if victim.action_count() != game.n_vic_actions() {
        return Err(Error::DimensionMismatch {
            expected: game.n_vic_actions(),
            got: victim.action_count(),
        });
    }
    Ok(())
}

fn check_start(game: &MarkovGame) -> Result<()> {
    if game.is_absorbing(game.initial_state()) {
        return Err(Error::InvalidArgument(
            "the initial state is absorbing; nothing to train".into(),
        ));
    }
    Ok(())
}

fn adversary_policy(cfg: &TrainConfig, game: &MarkovGame) -> Result<Policy> {
    let mut layout = ObsLayout::for_game(game, cfg.adversary.encoding, game.n_vic_actions())?;
    layout.imit_input = cfg.imitator_input;
    Ok(match cfg.adversary.kind {
        PolicyKind::TabularSoftmax => Policy::tabular(layout, game.n_adv_actions()),
        PolicyKind::Mlp { hidden } => Policy::mlp(
            layout,
            game.n_adv_actions(),
            hidden,
            &mut seeding::rng(cfg.seed, &[INIT_STREAM, 0]),
        ),
        PolicyKind::Fixed => return Err(Error::Config("the adversary must be trainable".into())),
    })
}

fn victim_layout(game: &MarkovGame) -> Result<ObsLayout> {
    ObsLayout::for_game(game, Encoding::OneHot, 0)
}

/// Fresh adversary (uniform, or small random weights for an MLP) and, unless
/// the mode is the no-imitator ablation, a uniform imitator with a zero
/// discriminator.
pub fn initial_state(cfg: &TrainConfig, game: &MarkovGame, victim: &Policy) -> Result<TrainState> {
    let with_imitator = match cfg.mode {
        Mode::TrainAdversary => true,
        Mode::AblationNoImitator => false,
        Mode::RetrainVictim => {
            return Err(Error::Config(
                "mode retrain_victim does not train an adversary".into(),
            ))
        }
    };
    let adversary = AdversaryState::new(adversary_policy(cfg, game)?, cfg.clip_eps, with_imitator)?;
    let imitator = if with_imitator {
        let discriminator = Discriminator::new(
            game,
            cfg.discriminator,
            Encoding::OneHot,
            cfg.clamp,
            &mut seeding::rng(cfg.seed, &[INIT_STREAM, 1]),
        )?;
        Some(ImitatorState {
            policy: Policy::tabular(victim_layout(game)?, game.n_vic_actions()),
            discriminator,
            entropy_coeff: cfg.entropy_coeff,
            enhanced: cfg.enhanced,
        })
    } else {
        None
    };
    Ok(TrainState {
        step: 0,
        cycle: 0,
        adversary,
        imitator,
        victim_fingerprint: victim.fingerprint(),
    })
}

/// The adversary's per-state training reward: `r_adv - r_vic` when
/// enhanced, `r_adv` otherwise.
pub fn adversary_reward(game: &MarkovGame, enhanced: bool) -> Vec<f64> {
    game.adv_reward()
        .iter()
        .zip(game.vic_reward())
        .map(|(&a, &v)| {
            if enhanced {
                differentiated_reward(a, v)
            } else {
                a
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
struct EpisodeSpan {
    initial_state: usize,
    absorbing: bool,
    start: usize,
    end: usize,
}

#[derive(Clone, Debug)]
pub struct AdvStep {
    pub obs: Vec<f64>,
    pub action: usize,
    pub behaviour_logp: f64,
    pub next_state: usize,
}

#[derive(Clone, Debug)]
pub struct ImitStep {
    pub state: usize,
    pub action: usize,
    pub behaviour_logp: f64,
    pub next_state: usize,
}

/// The four buffers of one collection cycle. `adv_replay` and `imit_replay`
/// hold one entry per environment step, in episode order; the two pair
/// buffers feed the discriminator.
#[derive(Clone, Debug, Default)]
pub struct BufferSet {
    pub capacity: usize,
    pub adv_replay: Vec<AdvStep>,
    pub imit_replay: Vec<ImitStep>,
    pub expert_traj: Vec<PairSample>,
    pub imit_traj: Vec<PairSample>,
    episodes: Vec<EpisodeSpan>,
}

impl BufferSet {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.adv_replay.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adv_replay.is_empty()
            && self.imit_replay.is_empty()
            && self.expert_traj.is_empty()
            && self.imit_traj.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    /// Appends a trajectory played by `agent`. Behaviour log-probabilities
    /// are taken from the agent's policies as they are now, which must be
    /// the snapshot the trajectory was played with.
    pub fn push(&mut self, game: &MarkovGame, agent: &AdversaryAgent, tr: &Trajectory) {
        let start = self.adv_replay.len();
        let adv = agent.policy;
        let mut obs = vec![0.0; adv.layout().dim()];
        let mut imit_obs = agent
            .imitator
            .map(|p| vec![0.0; p.layout().dim()])
            .unwrap_or_default();
        let mut imit_probs = agent
            .imitator
            .map(|p| vec![0.0; p.action_count()])
            .unwrap_or_default();
        for (t, x) in tr.transitions.iter().enumerate() {
            if let (Some(imit), Some(a)) = (agent.imitator, x.imit_action) {
                imit.layout()
                    .write(game, x.state, ImitSignal::None, &mut imit_obs);
                imit.probs_into(&imit_obs, &mut imit_probs);
                self.imit_replay.push(ImitStep {
                    state: x.state,
                    action: a,
                    behaviour_logp: safe_ln(imit_probs[a]),
                    next_state: x.next_state,
                });
                self.imit_traj.push(PairSample {
                    state: x.state,
                    action: a,
                    t,
                });
            }
            self.expert_traj.push(PairSample {
                state: x.state,
                action: x.vic_action,
                t,
            });
            agent.observe(game, x.state, x.imit_action, &imit_probs, &mut obs);
            self.adv_replay.push(AdvStep {
                behaviour_logp: adv.log_prob(&obs, x.adv_action),
                obs: obs.clone(),
                action: x.adv_action,
                next_state: x.next_state,
            });
        }
        self.episodes.push(EpisodeSpan {
            initial_state: tr.initial_state,
            absorbing: game.is_absorbing(tr.final_state()),
            start,
            end: self.adv_replay.len(),
        });
    }

    pub fn clear(&mut self) {
        self.adv_replay.clear();
        self.imit_replay.clear();
        self.expert_traj.clear();
        self.imit_traj.clear();
        self.episodes.clear();
    }

    /// Adversary batch with per-state reward `reward`.
    fn adv_batch(
        &self,
        tag: BatchTag,
        game: &MarkovGame,
        reward: &[f64],
        cfg: &TrainConfig,
    ) -> PgBatch {
        let episodes = self
            .episodes
            .iter()
            .map(|ep| EpisodeRecord {
                initial_reward: reward[ep.initial_state],
                steps: self.adv_replay[ep.start..ep.end]
                    .iter()
                    .map(|s| StepRecord {
                        obs: s.obs.clone(),
                        action: s.action,
                        behaviour_logp: s.behaviour_logp,
                        action_reward: 0.0,
                        next_state_reward: reward[s.next_state],
                    })
                    .collect(),
                absorbing: ep.absorbing,
            })
            .collect();
        PgBatch::from_episodes(tag, episodes, game.discount(), cfg.return_form)
    }

    /// Imitator batch with the reward recomputed from the current
    /// discriminator: `log D(s, a)` per step, minus `r_adv` per state when
    /// enhanced.
    fn imit_batch(
        &self,
        tag: BatchTag,
        game: &MarkovGame,
        imit: &ImitatorState,
        cfg: &TrainConfig,
    ) -> PgBatch {
        let state_reward = |s: usize| {
            if imit.enhanced {
                -game.adv_reward()[s]
            } else {
                0.0
            }
        };
        let layout = imit.policy.layout();
        let d = &imit.discriminator;
        // Imitator steps line up with adversary steps one to one.
        let episodes = self
            .episodes
            .iter()
            .map(|ep| EpisodeRecord {
                initial_reward: state_reward(ep.initial_state),
                steps: self.imit_replay[ep.start..ep.end]
                    .iter()
                    .map(|s| StepRecord {
                        obs: layout.observe(game, s.state, ImitSignal::None),
                        action: s.action,
                        behaviour_logp: s.behaviour_logp,
                        action_reward: d.prob(game, s.state, s.action).ln(),
                        next_state_reward: state_reward(s.next_state),
                    })
                    .collect(),
                absorbing: ep.absorbing,
            })
            .collect();
        PgBatch::from_episodes(tag, episodes, game.discount(), cfg.imitator_return_form)
    }
}

/// Runs the inner epochs on a full buffer and clears it. Each epoch takes a
/// discriminator step, then an imitator step on rewards from the updated
/// discriminator, then an adversary step (after warm-up). The adversary
/// keeps seeing the predictions sampled at collection time; fresh imitator
/// predictions only enter at the next rollout.
pub fn update_phase(
    cfg: &TrainConfig,
    game: &MarkovGame,
    state: &mut TrainState,
    buffers: &mut BufferSet,
    cycle: u64,
) -> Result<()> {
    let gamma = game.discount();
    let reward = adversary_reward(game, cfg.enhanced);
    let adv_batch = buffers.adv_batch(
        BatchTag::of(&state.adversary.policy, cycle),
        game,
        &reward,
        cfg,
    );
    let imit_tag = state
        .imitator
        .as_ref()
        .map(|i| BatchTag::of(&i.policy, cycle));
    let adversary_learns = state.imitator.is_none() || cycle >= cfg.warmup_cycles;
    for epoch in 0..cfg.inner_epochs {
        // REINFORCE batches are only valid for the parameters that collected them.
        let policy_step = epoch == 0 || cfg.method == PgMethod::PpoClip;
        if let (Some(imit), Some(tag)) = (state.imitator.as_mut(), imit_tag) {
            imit.discriminator = disc_update(
                imit,
                game,
                &buffers.imit_traj,
                &buffers.expert_traj,
                gamma,
                cfg.disc_discounted,
                cfg.lr.discriminator,
            )?;
            if policy_step {
                let batch = buffers.imit_batch(tag, game, imit, cfg);
                imit.policy = imit_policy_update(imit, &batch, cfg.lr.imitator, cfg.method, cycle)?;
            }
        }
        if adversary_learns && policy_step {
            state.adversary.policy = adv_update(
                &state.adversary,
                &adv_batch,
                cfg.lr.adversary,
                cfg.method,
                cycle,
            )?;
        }
    }
    buffers.clear();
    Ok(())
}

/// Result of an adversary-training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
    pub bounds: Vec<BoundReport>,
}

/// Trains an adversary (with an imitator unless the mode is the ablation)
/// against a fixed victim.
pub fn train_apil(cfg: &TrainConfig, victim: &Policy) -> Result<TrainRun> {
    let cfg = cfg.resolved()?;
    let game = make_env(&cfg.env)?;
    check_victim(&game, victim)?;
    let state = initial_state(&cfg, &game, victim)?;
    run_training(&cfg, &game, victim, state, Vec::new())
}

/// Continues a run from a checkpoint. Rows of an existing `metrics.csv` in
/// the output directory up to the checkpoint's step are kept.
pub fn resume_apil(cfg: &TrainConfig, victim: &Policy, checkpoint: &Path) -> Result<TrainRun> {
    let cfg = cfg.resolved()?;
    let game = make_env(&cfg.env)?;
    check_victim(&game, victim)?;
    let state = load_train_state(checkpoint)?;
    if state.victim_fingerprint != victim.fingerprint() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint {} was trained against a different victim",
            checkpoint.display()
        )));
    }
    state.adversary.policy.layout().check(&game)?;
    let prior = match cfg.output_dir.as_deref().map(|d| d.join("metrics.csv")) {
        Some(path) if path.exists() => read_metrics(&path)?
            .into_iter()
            .filter(|r| r.step <= state.step)
            .collect(),
        _ => Vec::new(),
    };
    run_training(&cfg, &game, victim, state, prior)
}

fn ckpt_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step}.json"))
}

fn write_config(dir: &Path, cfg: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;
    Ok(())
}

fn run_training(
    cfg: &TrainConfig,
    game: &MarkovGame,
    victim: &Policy,
    mut state: TrainState,
    prior: Vec<MetricsRow>,
) -> Result<TrainRun> {
    check_start(game)?;
    let out = cfg.output_dir.as_deref();
    if let Some(dir) = out {
        write_config(dir, cfg)?;
        if state.step == 0 {
            save_json(&ckpt_path(dir, 0), &state)?;
        }
    }
    let initial_adversary = state.adversary.clone();
    let mut sink = MetricsSink::open(out, &prior)?;
    let mut metrics = prior;
    let mut buffers = BufferSet::new(cfg.batch_size);
    let mut last_saved = state.step;
    while state.step < cfg.total_steps {
        let cycle = state.cycle;
        let attacker = Attacker {
            adversary: state.adversary.clone(),
            imitator: state.imitator.clone(),
        };
        let agent = attacker.agent();
        let trajs = collect_episodes(cfg.batch_size, cfg.rollout_chunk, |i| {
            rollout(
                game,
                &agent,
                victim,
                &mut seeding::rng(cfg.seed, &[TRAIN_STREAM, cycle, i]),
            )
        });
        for tr in &trajs {
            buffers.push(game, &agent, tr);
        }
        let steps: usize = trajs.iter().map(|t| t.len().max(1)).sum();
        let reward = adversary_reward(game, cfg.enhanced);
        let mut row = MetricsRow::from_cycle(state.step + steps as u64, &trajs);
        row.adv_objective = trajs
            .iter()
            .map(|t| t.discounted_return(game, |s| reward[s]))
            .sum::<f64>()
            / trajs.len() as f64;
        if let Some(imit) = &state.imitator {
            let etas: Vec<f64> = buffers
                .imit_replay
                .iter()
                .map(|s| {
                    crate::imitator::eta_reward(
                        &imit.discriminator,
                        game,
                        s.state,
                        s.action,
                        game.adv_reward()[s.state],
                        imit.enhanced,
                    )
                })
                .collect();
            row.eta_mean = etas.iter().sum::<f64>() / etas.len().max(1) as f64;
        }

        update_phase(cfg, game, &mut state, &mut buffers, cycle)?;
        state.step += steps as u64;
        state.cycle += 1;

        if let Some(imit) = &state.imitator {
            let agent = AdversaryAgent {
                feed_imitator: state.adversary.use_imitator_input,
                ..AdversaryAgent::with_imitator(&state.adversary.policy, &imit.policy)
            };
            let occ = occupancy(game, &agent, victim)?;
            row.imitation_gap = imitation_gap(&imit.policy, victim, game, &occ.weights)?;
        }
        info!(
            "cycle {} step {} win {:.3} tie {:.3} gap {:.4} objective {:.4}",
            state.cycle,
            state.step,
            row.win_rate,
            row.tie_rate,
            row.imitation_gap,
            row.adv_objective
        );
        sink.push(&row)?;
        metrics.push(row);
        if let Some(dir) = out {
            let every = cfg.checkpoint_every;
            if every > 0 && last_saved / every != state.step / every {
                save_json(&ckpt_path(dir, state.step), &state)?;
                last_saved = state.step;
            }
        }
    }
    if let Some(dir) = out {
        if last_saved != state.step {
            save_json(&ckpt_path(dir, state.step), &state)?;
        }
    }
    let bounds = if cfg.verify_on_finish {
        let last = Attacker {
            adversary: state.adversary.clone(),
            imitator: state.imitator.clone(),
        };
        let first = Attacker {
            adversary: initial_adversary,
            imitator: state.imitator.clone(),
        };
        let reports = run_end_bounds(game, victim, &first.agent(), &last.agent(), cfg.clamp)?;
        if let Some(dir) = out {
            write_bound_reports(dir, &reports)?;
        }
        reports
    } else {
        Vec::new()
    };
    Ok(TrainRun {
        state,
        metrics,
        bounds,
    })
}

/// A tabular copy of a fixed policy, with logits `ln p`, so it can be
/// trained. Trainable policies are returned unchanged.
pub fn trainable_victim(game: &MarkovGame, victim: &Policy) -> Result<Policy> {
    if victim.is_trainable() {
        return Ok(victim.clone());
    }
    let table = victim.state_table(game)?;
    let params = table.iter().map(|&p| safe_ln(p)).collect();
    Policy::from_parts(
        PolicyKind::TabularSoftmax,
        victim_layout(game)?,
        victim.action_count(),
        params,
    )
}

fn victim_batch(
    game: &MarkovGame,
    victim: &Policy,
    trajs: &[Trajectory],
    cycle: u64,
    cfg: &TrainConfig,
) -> PgBatch {
    let layout = victim.layout();
    let reward = game.vic_reward();
    let episodes = trajs
        .iter()
        .map(|tr| EpisodeRecord {
            initial_reward: reward[tr.initial_state],
            steps: tr
                .transitions
                .iter()
                .map(|x| {
                    let obs = layout.observe(game, x.state, ImitSignal::None);
                    StepRecord {
                        behaviour_logp: victim.log_prob(&obs, x.vic_action),
                        obs,
                        action: x.vic_action,
                        action_reward: 0.0,
                        next_state_reward: reward[x.next_state],
                    }
                })
                .collect(),
            absorbing: game.is_absorbing(tr.final_state()),
        })
        .collect();
    PgBatch::from_episodes(
        BatchTag::of(victim, cycle),
        episodes,
        game.discount(),
        cfg.return_form,
    )
}

fn plain_adv_batch(
    game: &MarkovGame,
    agent: &AdversaryAgent,
    trajs: &[Trajectory],
    cycle: u64,
    cfg: &TrainConfig,
) -> PgBatch {
    let mut buffers = BufferSet::new(0);
    for tr in trajs {
        buffers.push(game, agent, tr);
    }
    buffers.adv_batch(
        BatchTag::of(agent.policy, cycle),
        game,
        game.adv_reward(),
        cfg,
    )
}

fn pg_settings(cfg: &TrainConfig, lr: f64) -> PgSettings {
    PgSettings {
        lr,
        method: cfg.method,
        clip_eps: cfg.clip_eps,
        ..PgSettings::default()
    }
}

/// Result of victim pretraining.
#[derive(Clone, Debug)]
pub struct PretrainRun {
    pub victim: Policy,
    /// The self-play opponent, trained on the adversary's own reward. It
    /// serves as the baseline adversary.
    pub base_adversary: AdversaryState,
    pub metrics: Vec<MetricsRow>,
}

/// Pretrains a victim by self-play: victim and adversary both take
/// policy-gradient steps on their own rewards every cycle for
/// `pretrain_steps` steps. Writes `victim.json` and `base_adversary.json`.
pub fn make_victim(cfg: &TrainConfig) -> Result<PretrainRun> {
    let cfg = cfg.resolved()?;
    let game = make_env(&cfg.env)?;
    check_start(&game)?;
    let mut victim = Policy::tabular(victim_layout(&game)?, game.n_vic_actions());
    let mut adversary = AdversaryState::new(adversary_policy(&cfg, &game)?, cfg.clip_eps, false)?;
    let out = cfg.output_dir.as_deref();
    if let Some(dir) = out {
        write_config(dir, &cfg)?;
    }
    let mut sink = MetricsSink::open(out, &[])?;
    let mut metrics = Vec::new();
    let (mut step, mut cycle) = (0u64, 0u64);
    while step < cfg.pretrain_steps {
        let agent = AdversaryAgent::new(&adversary.policy);
        let trajs = collect_episodes(cfg.batch_size, cfg.rollout_chunk, |i| {
            rollout(
                &game,
                &agent,
                &victim,
                &mut seeding::rng(cfg.seed, &[PRETRAIN_STREAM, cycle, i]),
            )
        });
        let vic_batch = victim_batch(&game, &victim, &trajs, cycle, &cfg);
        let adv_batch = plain_adv_batch(&game, &agent, &trajs, cycle, &cfg);
        let (vs, adv_s) = (
            pg_settings(&cfg, cfg.lr.victim),
            pg_settings(&cfg, cfg.lr.adversary),
        );
        for epoch in 0..cfg.inner_epochs {
            if epoch > 0 && cfg.method == PgMethod::Reinforce {
                break;
            }
            victim = pg_step(&victim, &vic_batch, &vs, cycle)?.0;
            adversary.policy = pg_step(&adversary.policy, &adv_batch, &adv_s, cycle)?.0;
        }
        step += trajs.iter().map(|t| t.len().max(1) as u64).sum::<u64>();
        cycle += 1;
        let mut row = MetricsRow::from_cycle(step, &trajs);
        row.adv_objective = trajs
            .iter()
            .map(|t| t.discounted_return(&game, |s| game.adv_reward()[s]))
            .sum::<f64>()
            / trajs.len() as f64;
        info!(
            "self-play cycle {cycle} step {step} adversary win {:.3}",
            row.win_rate
        );
        sink.push(&row)?;
        metrics.push(row);
    }
    if let Some(dir) = out {
        save_json(&dir.join("victim.json"), &victim)?;
        save_json(&dir.join("base_adversary.json"), &adversary)?;
    }
    Ok(PretrainRun {
        victim,
        base_adversary: adversary,
        metrics,
    })
}

/// Evaluation of one victim against both attackers of a retraining run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VersusBoth {
    pub vs_new: WinTieReport,
    pub vs_base: WinTieReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub before: VersusBoth,
    pub after: VersusBoth,
}

#[derive(Clone, Debug)]
pub struct RetrainRun {
    pub victim: Policy,
    pub metrics: Vec<MetricsRow>,
    pub report: RetrainReport,
}

fn versus_both(
    cfg: &TrainConfig,
    game: &MarkovGame,
    new: &AdversaryAgent,
    base: &AdversaryAgent,
    victim: &Policy,
) -> Result<VersusBoth> {
    Ok(VersusBoth {
        vs_new: evaluate(
            game,
            new,
            victim,
            cfg.eval_episodes,
            seeding::derive(cfg.seed, &[EVAL_SEED_STREAM, 0]),
        )?,
        vs_base: evaluate(
            game,
            base,
            victim,
            cfg.eval_episodes,
            seeding::derive(cfg.seed, &[EVAL_SEED_STREAM, 1]),
        )?,
    })
}

/// Trains the victim on its own reward against a random mixture of a newly
/// trained attacker (probability `mix_p`) and a baseline attacker for
/// `retrain_steps` steps. Both attackers are evaluated against the victim
/// before and after, on the same episode seeds. Writes `victim.json` and
/// `retrain_report.json`.
pub fn retrain_victim(
    cfg: &TrainConfig,
    victim: &Policy,
    new: &Attacker,
    base: &Attacker,
) -> Result<RetrainRun> {
    let cfg = cfg.resolved()?;
    let game = make_env(&cfg.env)?;
    check_start(&game)?;
    check_victim(&game, victim)?;
    let (new_agent, base_agent) = (new.agent(), base.agent());
    for agent in [&new_agent, &base_agent] {
        agent.policy.layout().check(&game)?;
        if agent.policy.action_count() != game.n_adv_actions() {
            return Err(Error::IncompatibleActions(
                agent.policy.action_count(),
                game.n_adv_actions(),
            ));
        }
    }
    if cfg.mix_granularity == MixGranularity::Step
        && new_agent.policy.layout() != base_agent.policy.layout()
    {
        return Err(Error::DimensionMismatch {
            expected: new_agent.policy.layout().dim(),
            got: base_agent.policy.layout().dim(),
        });
    }
    let mixture = Mixture {
        new: new_agent,
        base: base_agent,
        p_new: cfg.mix_p,
        granularity: cfg.mix_granularity,
    };
    let out = cfg.output_dir.as_deref();
    if let Some(dir) = out {
        write_config(dir, &cfg)?;
    }
    let before = versus_both(&cfg, &game, &new_agent, &base_agent, victim)?;
    let mut victim = trainable_victim(&game, victim)?;
    let mut sink = MetricsSink::open(out, &[])?;
    let mut metrics = Vec::new();
    let settings = pg_settings(&cfg, cfg.lr.victim);
    let delta = adversary_reward(&game, true);
    let (mut step, mut cycle) = (0u64, 0u64);
    while step < cfg.retrain_steps {
        let trajs = collect_episodes(cfg.batch_size, cfg.rollout_chunk, |i| {
            let mut picker = seeding::rng(cfg.seed, &[RETRAIN_STREAM, cycle, i, 1]);
            let mut rng = seeding::rng(cfg.seed, &[RETRAIN_STREAM, cycle, i, 0]);
            match mixture.granularity {
                MixGranularity::Episode => {
                    rollout(&game, mixture.select(&mut picker), &victim, &mut rng)
                }
                MixGranularity::Step => {
                    rollout_with(&game, |_| *mixture.select(&mut picker), &victim, &mut rng)
                }
            }
        });
        let batch = victim_batch(&game, &victim, &trajs, cycle, &cfg);
        for epoch in 0..cfg.inner_epochs {
            if epoch > 0 && cfg.method == PgMethod::Reinforce {
                break;
            }
            victim = pg_step(&victim, &batch, &settings, cycle)?.0;
        }
        step += trajs.iter().map(|t| t.len().max(1) as u64).sum::<u64>();
        cycle += 1;
        let mut row = MetricsRow::from_cycle(step, &trajs);
        row.adv_objective = trajs
            .iter()
            .map(|t| t.discounted_return(&game, |s| delta[s]))
            .sum::<f64>()
            / trajs.len() as f64;
        info!(
            "retrain cycle {cycle} step {step} adversary win {:.3} tie {:.3}",
            row.win_rate, row.tie_rate
        );
        sink.push(&row)?;
        metrics.push(row);
    }
    let after = versus_both(&cfg, &game, &new_agent, &base_agent, &victim)?;
    let report = RetrainReport { before, after };
    if let Some(dir) = out {
        save_json(&dir.join("victim.json"), &victim)?;
        std::fs::write(
            dir.join("retrain_report.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
    }
    Ok(RetrainRun {
        victim,
        metrics,
        report,
    })
}
