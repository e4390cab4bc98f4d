//! Victim imitator: a discriminator between imitator and victim
//! (state, action) pairs, the imitation reward built on it, and the
//! imitator's policy update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{AdversaryAgent, MarkovGame, Trajectory};
use crate::pg::{pg_step, PgBatch, PgMethod, PgSettings};
use crate::policy::{total_variation, Encoding, ImitSignal, ObsLayout, Policy};

pub const DEFAULT_CLAMP: (f64, f64) = (0.01, 0.99);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscArch {
    /// Logistic regression on `state features ++ action one-hot`.
    Linear,
    /// Logistic regression on the outer product of state features and the
    /// action one-hot; a free logit per (state, action) under one-hot states.
    #[default]
    Pairwise,
    /// One tanh hidden layer on `state features ++ action one-hot`.
    Hidden { width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub arch: DiscArch,
    pub encoding: Encoding,
    pub state_dim: usize,
    pub n_actions: usize,
    pub params: Vec<f64>,
    pub clamp: (f64, f64),
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        game: &MarkovGame,
        arch: DiscArch,
        encoding: Encoding,
        clamp: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        let (lo, hi) = clamp;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::ParamOutOfRange {
                name: "clamp",
                value: format!("({lo}, {hi})"),
                range: "0 < lower <= upper < 1",
            });
        }
        let state_dim = ObsLayout::for_game(game, encoding, 0)?.state_dim;
        let n_actions = game.n_vic_actions();
        let input = state_dim + n_actions;
        let params = match arch {
            DiscArch::Linear => vec![0.0; input + 1],
            DiscArch::Pairwise => vec![0.0; state_dim * n_actions],
            DiscArch::Hidden { width } => {
                let mut p: Vec<f64> = (0..width * input)
                    .map(|_| rng.random_range(-0.1..0.1))
                    .collect();
                p.extend(std::iter::repeat_n(0.0, 2 * width + 1));
                p
            }
        };
        Ok(Self {
            arch,
            encoding,
            state_dim,
            n_actions,
            params,
            clamp,
        })
    }

    fn state_features<'g>(&self, game: &'g MarkovGame, s: usize) -> StateFeatures<'g> {
        match self.encoding {
            Encoding::OneHot => StateFeatures::One(s),
            Encoding::Factored => {
                StateFeatures::Many(&game.factored().expect("checked at construction").active[s])
            }
        }
    }

    /// Raw logit `z(s, a)`.
    pub fn score(&self, game: &MarkovGame, s: usize, a: usize) -> f64 {
        let feats = self.state_features(game, s);
        match self.arch {
            DiscArch::Linear => {
                let input = self.state_dim + self.n_actions;
                feats.iter().map(|j| self.params[j]).sum::<f64>()
                    + self.params[self.state_dim + a]
                    + self.params[input]
            }
            DiscArch::Pairwise => feats
                .iter()
                .map(|j| self.params[j * self.n_actions + a])
                .sum(),
            DiscArch::Hidden { width } => {
                let h = self.hidden(&feats, a, width);
                let w2 = &self.params[width * (self.state_dim + self.n_actions) + width..];
                h.iter().zip(w2).map(|(h, w)| h * w).sum::<f64>() + w2[width]
            }
        }
    }

    fn hidden(&self, feats: &StateFeatures, a: usize, width: usize) -> Vec<f64> {
        let input = self.state_dim + self.n_actions;
        let b1 = &self.params[width * input..width * input + width];
        (0..width)
            .map(|k| {
                let row = &self.params[k * input..(k + 1) * input];
                let z = b1[k] + feats.iter().map(|j| row[j]).sum::<f64>() + row[self.state_dim + a];
                z.tanh()
            })
            .collect()
    }

    /// Accumulates `scale * grad z(s, a)`.
    fn accumulate_score_grad(
        &self,
        game: &MarkovGame,
        s: usize,
        a: usize,
        scale: f64,
        grad: &mut [f64],
    ) {
        let feats = self.state_features(game, s);
        match self.arch {
            DiscArch::Linear => {
                for j in feats.iter() {
                    grad[j] += scale;
                }
                grad[self.state_dim + a] += scale;
                grad[self.state_dim + self.n_actions] += scale;
            }
            DiscArch::Pairwise => {
                for j in feats.iter() {
                    grad[j * self.n_actions + a] += scale;
                }
            }
            DiscArch::Hidden { width } => {
                let input = self.state_dim + self.n_actions;
                let h = self.hidden(&feats, a, width);
                let w2_off = width * input + width;
                for k in 0..width {
                    grad[w2_off + k] += scale * h[k];
                    let dz = scale * self.params[w2_off + k] * (1.0 - h[k] * h[k]);
                    grad[width * input + k] += dz;
                    for j in feats.iter() {
                        grad[k * input + j] += dz;
                    }
                    grad[k * input + self.state_dim + a] += dz;
                }
                grad[w2_off + width] += scale;
            }
        }
    }

    /// Accumulates `scale * (grad z(s, a))^2` elementwise.
    fn accumulate_score_grad_sq(
        &self,
        game: &MarkovGame,
        s: usize,
        a: usize,
        scale: f64,
        out: &mut [f64],
    ) {
        match self.arch {
            // Binary features: squaring changes nothing.
            DiscArch::Linear | DiscArch::Pairwise => {
                self.accumulate_score_grad(game, s, a, scale, out)
            }
            DiscArch::Hidden { width } => {
                let feats = self.state_features(game, s);
                let input = self.state_dim + self.n_actions;
                let h = self.hidden(&feats, a, width);
                let w2_off = width * input + width;
                for k in 0..width {
                    out[w2_off + k] += scale * h[k] * h[k];
                    let dz = self.params[w2_off + k] * (1.0 - h[k] * h[k]);
                    let dz2 = scale * dz * dz;
                    out[width * input + k] += dz2;
                    for j in feats.iter() {
                        out[k * input + j] += dz2;
                    }
                    out[k * input + self.state_dim + a] += dz2;
                }
                out[w2_off + width] += scale;
            }
        }
    }

    /// Sigmoid of the score, clamped to the configured interval.
    pub fn prob(&self, game: &MarkovGame, s: usize, a: usize) -> f64 {
        sigmoid(self.score(game, s, a)).clamp(self.clamp.0, self.clamp.1)
    }
}

enum StateFeatures<'g> {
    One(usize),
    Many(&'g [usize]),
}

impl StateFeatures<'_> {
    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let (one, many) = match self {
            StateFeatures::One(s) => (Some(*s), &[][..]),
            StateFeatures::Many(v) => (None, *v),
        };
        one.into_iter().chain(many.iter().copied())
    }
}

pub fn disc_forward(d: &Discriminator, game: &MarkovGame, s: usize, a_vic: usize) -> f64 {
    d.prob(game, s, a_vic)
}

/// A (state, victim-slot action) pair at step `t` of its episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub state: usize,
    pub action: usize,
    pub t: usize,
}

/// Imitator pairs `(s_t, predicted action)` of a batch of trajectories.
pub fn imitator_pairs(trajs: &[Trajectory]) -> Vec<PairSample> {
    trajs
        .iter()
        .flat_map(|tr| {
            tr.transitions.iter().enumerate().filter_map(|(t, x)| {
                x.imit_action.map(|a| PairSample {
                    state: x.state,
                    action: a,
                    t,
                })
            })
        })
        .collect()
}

/// Victim pairs `(s_t, a_vic)` of a batch of trajectories.
pub fn expert_pairs(trajs: &[Trajectory]) -> Vec<PairSample> {
    trajs
        .iter()
        .flat_map(|tr| {
            tr.transitions.iter().enumerate().map(|(t, x)| PairSample {
                state: x.state,
                action: x.vic_action,
                t,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImitatorState {
    pub policy: Policy,
    pub discriminator: Discriminator,
    pub entropy_coeff: f64,
    pub enhanced: bool,
}

/// Gradient of the classifier log-likelihood
/// `mean_expert[w_t log D] + mean_imit[w_t log(1 - D)]` with `w_t = gamma^t`
/// (or 1 when undiscounted), using the unclamped sigmoid. Its maximum in a
/// free (state, action) cell is `D = expert / (expert + imitator)`.
pub fn disc_gradient(
    d: &Discriminator,
    game: &MarkovGame,
    imit: &[PairSample],
    expert: &[PairSample],
    gamma: f64,
    discounted: bool,
) -> Result<Vec<f64>> {
    if imit.is_empty() || expert.is_empty() {
        return Err(Error::EmptyBatch(
            "discriminator update needs imitator and expert pairs",
        ));
    }
    let weight = |t: usize| {
        if discounted {
            gamma.powi(t as i32)
        } else {
            1.0
        }
    };
    let mut grad = vec![0.0; d.params.len()];
    let ni = imit.len() as f64;
    for p in imit {
        let sig = sigmoid(d.score(game, p.state, p.action));
        d.accumulate_score_grad(game, p.state, p.action, -weight(p.t) * sig / ni, &mut grad);
    }
    let ne = expert.len() as f64;
    for p in expert {
        let sig = sigmoid(d.score(game, p.state, p.action));
        d.accumulate_score_grad(
            game,
            p.state,
            p.action,
            weight(p.t) * (1.0 - sig) / ne,
            &mut grad,
        );
    }
    Ok(grad)
}

/// Diagonal Gauss-Newton curvature of the discriminator log-likelihood: per
/// parameter, the weighted mean of `sigma (1 - sigma) (dz/dw)^2` over each
/// side's pairs.
pub fn disc_curvature(
    d: &Discriminator,
    game: &MarkovGame,
    imit: &[PairSample],
    expert: &[PairSample],
    gamma: f64,
    discounted: bool,
) -> Vec<f64> {
    let weight = |t: usize| {
        if discounted {
            gamma.powi(t as i32)
        } else {
            1.0
        }
    };
    let mut curv = vec![0.0; d.params.len()];
    for (pairs, n) in [(imit, imit.len() as f64), (expert, expert.len() as f64)] {
        for p in pairs {
            let sig = sigmoid(d.score(game, p.state, p.action));
            d.accumulate_score_grad_sq(
                game,
                p.state,
                p.action,
                weight(p.t) * sig * (1.0 - sig) / n,
                &mut curv,
            );
        }
    }
    curv
}

/// One ascent step on the discriminator log-likelihood: `D` moves toward 0
/// on imitator pairs and toward 1 on victim pairs. The gradient is divided by
/// the diagonal curvature plus one pseudo-sample, so parameters touched by
/// few pairs move as fast as common ones. With one-hot pairwise features
/// and `lr = 1` this is a damped Newton step per (state, action) cell.
pub fn disc_update(
    state: &ImitatorState,
    game: &MarkovGame,
    imit: &[PairSample],
    expert: &[PairSample],
    gamma: f64,
    discounted: bool,
    lr: f64,
) -> Result<Discriminator> {
    let d = &state.discriminator;
    let grad = disc_gradient(d, game, imit, expert, gamma, discounted)?;
    let curv = disc_curvature(d, game, imit, expert, gamma, discounted);
    let damping = 1.0 / (imit.len() + expert.len()) as f64;
    let mut next = d.clone();
    for ((w, g), h) in next.params.iter_mut().zip(&grad).zip(&curv) {
        *w += lr * g / (h + damping);
    }
    Ok(next)
}

/// Imitation reward `log D(s, a)`, minus the adversary's state reward when
/// enhanced.
pub fn eta_reward(
    d: &Discriminator,
    game: &MarkovGame,
    s: usize,
    a_vic: usize,
    r_adv: f64,
    enhanced: bool,
) -> f64 {
    let log_d = d.prob(game, s, a_vic).ln();
    if enhanced {
        log_d - r_adv
    } else {
        log_d
    }
}

/// One policy-gradient step of the imitator on a batch whose returns were
/// built from [`eta_reward`]; the entropy bonus uses `state.entropy_coeff`.
pub fn imit_policy_update(
    state: &ImitatorState,
    batch: &PgBatch,
    lr: f64,
    method: PgMethod,
    cycle: u64,
) -> Result<Policy> {
    let settings = PgSettings {
        lr,
        method,
        entropy_coeff: state.entropy_coeff,
        ..PgSettings::default()
    };
    Ok(pg_step(&state.policy, batch, &settings, cycle)?.0)
}

/// Occupancy-weighted total variation between imitator and victim over
/// non-absorbing states, normalized by the weight on those states.
pub fn imitation_gap(
    imit: &Policy,
    victim: &Policy,
    game: &MarkovGame,
    occupancy: &[f64],
) -> Result<f64> {
    if imit.action_count() != victim.action_count() {
        return Err(Error::IncompatibleActions(
            imit.action_count(),
            victim.action_count(),
        ));
    }
    if occupancy.len() != game.n_states() {
        return Err(Error::DimensionMismatch {
            expected: game.n_states(),
            got: occupancy.len(),
        });
    }
    let a = imit.action_count();
    let (ti, tv) = (imit.state_table(game)?, victim.state_table(game)?);
    let (mut num, mut den) = (0.0, 0.0);
    for s in game.live_states() {
        let w = occupancy[s];
        if w > 0.0 {
            num += w * total_variation(&ti[s * a..(s + 1) * a], &tv[s * a..(s + 1) * a]);
            den += w;
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Score sum `sum_t grad log pi(a_vic_t | s_t)` of the victim-slot policy.
fn slot_score(game: &MarkovGame, slot: &Policy, traj: &Trajectory) -> Vec<f64> {
    let mut grad = vec![0.0; slot.num_params()];
    let mut obs = vec![0.0; slot.layout().dim()];
    for x in &traj.transitions {
        slot.layout()
            .write(game, x.state, ImitSignal::None, &mut obs);
        slot.accumulate_log_prob_grad(&obs, x.vic_action, 1.0, &mut grad);
    }
    grad
}

/// Single-trajectory estimate of the gradient of the adversary's value with
/// respect to the victim-slot policy: `R_adv(tau) * sum_t grad log pi(a_t|s_t)`.
/// The trajectory must have been played with `slot` in the victim's seat.
pub fn adversary_value_slot_sample(
    game: &MarkovGame,
    slot: &Policy,
    traj: &Trajectory,
) -> Vec<f64> {
    let ret = traj.discounted_return(game, |s| game.adv_reward()[s]);
    let mut g = slot_score(game, slot, traj);
    g.iter_mut().for_each(|x| *x *= ret);
    g
}

/// Single-trajectory estimate of the gradient of the imitation objective:
/// `(sum_t gamma^t log D(s_t, a_t) - [enhanced] R_adv(tau)) * score`.
pub fn eta_objective_sample(
    game: &MarkovGame,
    slot: &Policy,
    disc: &Discriminator,
    enhanced: bool,
    traj: &Trajectory,
) -> Vec<f64> {
    let gamma = game.discount();
    let mut ret: f64 = traj
        .transitions
        .iter()
        .enumerate()
        .map(|(t, x)| gamma.powi(t as i32) * disc.prob(game, x.state, x.vic_action).ln())
        .sum();
    if enhanced {
        ret -= traj.discounted_return(game, |s| game.adv_reward()[s]);
    }
    let mut g = slot_score(game, slot, traj);
    g.iter_mut().for_each(|x| *x *= ret);
    g
}

/// Exact value of the imitation objective with entropy bonus:
/// `E_imit[sum gamma^t log D] + E_victim[sum gamma^t log(1 - D)] + lambda H(imit)`
/// where `H` is the imitator's occupancy-weighted entropy. Computed from
/// occupancies rather than the value recursion.
pub fn imitation_objective(
    game: &MarkovGame,
    adversary: &AdversaryAgent,
    state: &ImitatorState,
    victim: &Policy,
) -> Result<f64> {
    use crate::oracle::occupancy;
    let d_imit = occupancy(game, adversary, &state.policy)?.weights;
    let d_vic = occupancy(game, adversary, victim)?.weights;
    let a = game.n_vic_actions();
    let (ti, tv) = (state.policy.state_table(game)?, victim.state_table(game)?);
    let disc = &state.discriminator;
    let mut total = 0.0;
    for s in game.live_states() {
        for b in 0..a {
            let dp = disc.prob(game, s, b);
            total += d_imit[s] * ti[s * a + b] * dp.ln();
            total += d_vic[s] * tv[s * a + b] * (1.0 - dp).ln();
        }
    }
    Ok(total + state.entropy_coeff * crate::policy::entropy(&state.policy, game, &d_imit)?)
}
