use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{step, MarkovGame, Outcome};
use crate::policy::{blind_in_place, ImitInput, ImitSignal, ObservationMask, Policy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub adv_action: usize,
    pub vic_action: usize,
    /// The imitator's prediction for this step, if an imitator was present.
    pub imit_action: Option<usize>,
    pub adv_reward: f64,
    pub vic_reward: f64,
    pub next_state: usize,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_state: usize,
    pub transitions: Vec<Transition>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn final_state(&self) -> usize {
        self.transitions
            .last()
            .map_or(self.initial_state, |t| t.next_state)
    }

    /// Visited states `s_0, ..., s_n`.
    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.initial_state).chain(self.transitions.iter().map(|t| t.next_state))
    }

    /// `sum_k gamma^k c(s_k)` over the visited states, plus the geometric tail
    /// of the absorbing state the episode ended in. Timeouts get no tail.
    pub fn discounted_return(&self, game: &MarkovGame, reward: impl Fn(usize) -> f64) -> f64 {
        let gamma = game.discount();
        let mut total = 0.0;
        let mut w = 1.0;
        for s in self.states() {
            total += w * reward(s);
            w *= gamma;
        }
        let last = self.final_state();
        if game.is_absorbing(last) {
            total += w * reward(last) / (1.0 - gamma);
        }
        total
    }
}

/// An adversary as it acts in the environment: its policy plus the optional
/// imitator whose per-step prediction is appended to the observation, and an
/// optional blinding mask over the state coordinates.
#[derive(Clone, Copy, Debug)]
pub struct AdversaryAgent<'a> {
    pub policy: &'a Policy,
    pub imitator: Option<&'a Policy>,
    /// When false the imitator still predicts (the prediction is recorded) but
    /// the observation's imitator block stays zero.
    pub feed_imitator: bool,
    pub mask: Option<&'a ObservationMask>,
}

impl<'a> AdversaryAgent<'a> {
    pub fn new(policy: &'a Policy) -> Self {
        Self {
            policy,
            imitator: None,
            feed_imitator: false,
            mask: None,
        }
    }

    pub fn with_imitator(policy: &'a Policy, imitator: &'a Policy) -> Self {
        Self {
            policy,
            imitator: Some(imitator),
            feed_imitator: true,
            mask: None,
        }
    }

    /// Keeps the imitator predicting but zeroes its block in the observation,
    /// so random draws line up with the fed agent episode for episode.
    pub fn unfed(mut self) -> Self {
        self.feed_imitator = false;
        self
    }

    pub fn blinded(mut self, mask: &'a ObservationMask) -> Self {
        self.mask = Some(mask);
        self
    }

    /// Writes the adversary observation at `s` given the imitator's sampled
    /// action and (for distribution input) its action distribution.
    pub fn observe(
        &self,
        game: &MarkovGame,
        s: usize,
        imit_action: Option<usize>,
        imit_dist: &[f64],
        out: &mut [f64],
    ) {
        let layout = self.policy.layout();
        let signal = match (self.feed_imitator, imit_action) {
            (true, Some(a)) => match layout.imit_input {
                ImitInput::Sampled => ImitSignal::Action(a),
                ImitInput::Distribution => ImitSignal::Dist(imit_dist),
            },
            _ => ImitSignal::None,
        };
        layout.write(game, s, signal, out);
        if let Some(mask) = self.mask {
            blind_in_place(out, mask);
        }
    }
}

/// Plays one episode from the game's initial state.
///
/// Each step samples the victim's action, then the imitator's prediction,
/// then the adversary's action from the augmented observation, then the next
/// state. The adversary never sees the victim's actual action.
pub fn rollout<R: Rng + ?Sized>(
    game: &MarkovGame,
    adversary: &AdversaryAgent,
    victim: &Policy,
    rng: &mut R,
) -> Trajectory {
    rollout_with(game, |_| *adversary, victim, rng)
}

/// Like [`rollout`], with the acting adversary chosen per step by `pick(t)`.
/// All candidates must share an observation layout and action count.
pub fn rollout_with<'a, R: Rng + ?Sized>(
    game: &MarkovGame,
    mut pick: impl FnMut(usize) -> AdversaryAgent<'a>,
    victim: &Policy,
    rng: &mut R,
) -> Trajectory {
    let first = pick(0);
    let mut vic_obs = vec![0.0; victim.layout().dim()];
    let mut adv_obs = vec![0.0; first.policy.layout().dim()];
    let mut vic_probs = vec![0.0; victim.action_count()];
    let mut adv_probs = vec![0.0; first.policy.action_count()];
    let mut imit_obs = Vec::new();
    let mut imit_probs = Vec::new();

    let s0 = game.initial_state();
    let mut s = s0;
    let mut transitions = Vec::new();
    let mut outcome = game.outcome(s).unwrap_or(Outcome::Tie);
    if game.is_absorbing(s) {
        return Trajectory {
            initial_state: s0,
            transitions,
            outcome,
        };
    }
    for t in 0..game.horizon() {
        let adversary = if t == 0 { first } else { pick(t) };
        victim
            .layout()
            .write(game, s, ImitSignal::None, &mut vic_obs);
        let vic_action = victim.sample_into(&vic_obs, &mut vic_probs, rng);
        let imit_action = adversary.imitator.map(|imit| {
            imit_obs.resize(imit.layout().dim(), 0.0);
            imit_probs.resize(imit.action_count(), 0.0);
            imit.layout()
                .write(game, s, ImitSignal::None, &mut imit_obs);
            imit.sample_into(&imit_obs, &mut imit_probs, rng)
        });
        adversary.observe(game, s, imit_action, &imit_probs, &mut adv_obs);
        let adv_action = adversary.policy.sample_into(&adv_obs, &mut adv_probs, rng);
        let (next_state, adv_reward, vic_reward, done) = step(game, s, adv_action, vic_action, rng);
        transitions.push(Transition {
            state: s,
            adv_action,
            vic_action,
            imit_action,
            adv_reward,
            vic_reward,
            next_state,
            done,
        });
        s = next_state;
        if done {
            outcome = game.outcome(s).unwrap_or(Outcome::Tie);
            break;
        }
    }
    Trajectory {
        initial_state: s0,
        transitions,
        outcome,
    }
}
