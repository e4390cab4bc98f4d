//! Finite two-player simultaneous-move Markov games.
//!
//! Rewards are attached to states. A transition into `s'` pays `r(s')` to
//! each player, and absorbing outcome states self-loop forever.

mod envs;
mod rollout;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;

pub use envs::{make_env, EnvSpec, MAX_STATES};
pub use rollout::{rollout, rollout_with, AdversaryAgent, Trajectory, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    AdvWin,
    VicWin,
    Tie,
}

/// Factored state features: a few named one-hot blocks per state instead of
/// a single one-hot over the whole state space. Used for blinding, where the
/// coordinates describing the victim must be separable.
#[derive(Clone, Debug)]
pub struct FactoredFeatures {
    pub dim: usize,
    /// Active (value 1) coordinates for every state.
    pub active: Vec<Vec<usize>>,
    /// Coordinates that describe the victim.
    pub victim_block: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct MarkovGame {
    name: String,
    n_states: usize,
    n_adv: usize,
    n_vic: usize,
    // CSR rows indexed by (s, a_adv, a_vic).
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
    adv_reward: Vec<f64>,
    vic_reward: Vec<f64>,
    discount: f64,
    initial_state: usize,
    horizon: usize,
    terminal: Vec<Option<Outcome>>,
    factored: Option<FactoredFeatures>,
}

impl MarkovGame {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_adv_actions(&self) -> usize {
        self.n_adv
    }

    pub fn n_vic_actions(&self) -> usize {
        self.n_vic
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn adv_reward(&self) -> &[f64] {
        &self.adv_reward
    }

    pub fn vic_reward(&self) -> &[f64] {
        &self.vic_reward
    }

    pub fn outcome(&self, s: usize) -> Option<Outcome> {
        self.terminal[s]
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.terminal[s].is_some()
    }

    pub fn factored(&self) -> Option<&FactoredFeatures> {
        self.factored.as_ref()
    }

    /// Sparse row `P(. | s, a_adv, a_vic)` as `(next_state, probability)`.
    pub fn transition(&self, s: usize, a_adv: usize, a_vic: usize) -> &[(usize, f64)] {
        let row = (s * self.n_adv + a_adv) * self.n_vic + a_vic;
        &self.entries[self.offsets[row]..self.offsets[row + 1]]
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        check_discount(discount)?;
        self.discount = discount;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_initial_state(mut self, s: usize) -> Result<Self> {
        if s >= self.n_states {
            return Err(Error::InvalidArgument(format!(
                "initial state {s} out of range"
            )));
        }
        self.initial_state = s;
        Ok(self)
    }

    /// Same dynamics with different state rewards.
    pub fn with_rewards(mut self, adv: Vec<f64>, vic: Vec<f64>) -> Result<Self> {
        if adv.len() != self.n_states || vic.len() != self.n_states {
            return Err(Error::InvalidGame(
                "reward vectors must cover every state".into(),
            ));
        }
        if adv.iter().chain(&vic).any(|r| !r.is_finite()) {
            return Err(Error::InvalidGame("rewards must be finite".into()));
        }
        self.adv_reward = adv;
        self.vic_reward = vic;
        Ok(self)
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.adv_reward
            .iter()
            .chain(&self.vic_reward)
            .fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Non-absorbing states, in index order.
    pub fn live_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|&s| !self.is_absorbing(s))
    }
}

fn check_discount(discount: f64) -> Result<()> {
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::ParamOutOfRange {
            name: "discount",
            value: discount.to_string(),
            range: "0 <= discount < 1",
        });
    }
    Ok(())
}

/// Incremental construction of a [`MarkovGame`] with validation at the end.
#[derive(Clone, Debug)]
pub struct GameBuilder {
    name: String,
    n_states: usize,
    n_adv: usize,
    n_vic: usize,
    rows: Vec<Vec<(usize, f64)>>,
    adv_reward: Vec<f64>,
    vic_reward: Vec<f64>,
    discount: f64,
    initial_state: usize,
    horizon: usize,
    terminal: Vec<Option<Outcome>>,
    factored: Option<FactoredFeatures>,
}

impl GameBuilder {
    pub fn new(name: &str, n_states: usize, n_adv: usize, n_vic: usize) -> Self {
        Self {
            name: name.to_string(),
            n_states,
            n_adv,
            n_vic,
            rows: vec![Vec::new(); n_states * n_adv * n_vic],
            adv_reward: vec![0.0; n_states],
            vic_reward: vec![0.0; n_states],
            discount: 0.95,
            initial_state: 0,
            horizon: 100,
            terminal: vec![None; n_states],
            factored: None,
        }
    }

    pub fn transition(
        &mut self,
        s: usize,
        a_adv: usize,
        a_vic: usize,
        row: Vec<(usize, f64)>,
    ) -> &mut Self {
        let idx = (s * self.n_adv + a_adv) * self.n_vic + a_vic;
        self.rows[idx] = row;
        self
    }

    /// Marks `s` as an absorbing outcome state and makes it self-loop.
    pub fn terminal(&mut self, s: usize, outcome: Outcome) -> &mut Self {
        self.terminal[s] = Some(outcome);
        for a in 0..self.n_adv {
            for v in 0..self.n_vic {
                self.transition(s, a, v, vec![(s, 1.0)]);
            }
        }
        self
    }

    pub fn rewards(&mut self, s: usize, adv: f64, vic: f64) -> &mut Self {
        self.adv_reward[s] = adv;
        self.vic_reward[s] = vic;
        self
    }

    pub fn discount(&mut self, discount: f64) -> &mut Self {
        self.discount = discount;
        self
    }

    pub fn initial_state(&mut self, s: usize) -> &mut Self {
        self.initial_state = s;
        self
    }

    pub fn horizon(&mut self, horizon: usize) -> &mut Self {
        self.horizon = horizon;
        self
    }

    pub fn factored(&mut self, features: FactoredFeatures) -> &mut Self {
        self.factored = Some(features);
        self
    }

    pub fn build(&self) -> Result<MarkovGame> {
        let bad = |msg: String| Err(Error::InvalidGame(msg));
        if self.n_states == 0 || self.n_adv == 0 || self.n_vic == 0 {
            return bad("game needs at least one state and one action per player".into());
        }
        if self.n_states > MAX_STATES {
            return Err(Error::ParamOutOfRange {
                name: "states",
                value: self.n_states.to_string(),
                range: "at most 10000 states",
            });
        }
        check_discount(self.discount)?;
        if self.initial_state >= self.n_states {
            return bad(format!("initial state {} out of range", self.initial_state));
        }
        if self
            .adv_reward
            .iter()
            .chain(&self.vic_reward)
            .any(|r| !r.is_finite())
        {
            return bad("rewards must be finite".into());
        }

        let mut offsets = Vec::with_capacity(self.rows.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for (idx, row) in self.rows.iter().enumerate() {
            let s = idx / (self.n_adv * self.n_vic);
            if row.is_empty() {
                return bad(format!("missing transition row for state {s}"));
            }
            let mut merged: Vec<(usize, f64)> = row.clone();
            merged.sort_by_key(|&(t, _)| t);
            merged.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            merged.retain(|&(_, p)| p != 0.0);
            let mut total = 0.0;
            for &(t, p) in &merged {
                if t >= self.n_states || !(0.0..=1.0).contains(&p) {
                    return bad(format!("bad transition entry ({t}, {p}) from state {s}"));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-12 {
                return bad(format!("transition row from state {s} sums to {total}"));
            }
            if self.terminal[s].is_some() && merged != [(s, 1.0)] {
                return bad(format!("absorbing state {s} must self-loop"));
            }
            entries.extend(merged);
            offsets.push(entries.len());
        }

        if let Some(f) = &self.factored {
            if f.active.len() != self.n_states
                || f.active.iter().flatten().any(|&i| i >= f.dim)
                || f.victim_block.end > f.dim
            {
                return bad("factored features do not match the state space".into());
            }
        }

        Ok(MarkovGame {
            name: self.name.clone(),
            n_states: self.n_states,
            n_adv: self.n_adv,
            n_vic: self.n_vic,
            offsets,
            entries,
            adv_reward: self.adv_reward.clone(),
            vic_reward: self.vic_reward.clone(),
            discount: self.discount,
            initial_state: self.initial_state,
            horizon: self.horizon,
            terminal: self.terminal.clone(),
            factored: self.factored.clone(),
        })
    }
}

/// Victim-marginalized kernel `q(. | s, a_adv) = sum_v pi(v|s) P(. | s, a_adv, v)`
/// as a dense vector over states.
pub fn marginalize_transition(
    game: &MarkovGame,
    victim: &Policy,
    s: usize,
    a_adv: usize,
) -> Result<Vec<f64>> {
    if s >= game.n_states() || a_adv >= game.n_adv_actions() {
        return Err(Error::InvalidArgument(format!(
            "state {s} / adversary action {a_adv} out of range"
        )));
    }
    let probs = victim.state_dist(game, s)?;
    if probs.len() != game.n_vic_actions() {
        return Err(Error::IncompatibleActions(
            probs.len(),
            game.n_vic_actions(),
        ));
    }
    let mut out = vec![0.0; game.n_states()];
    for (v, &pv) in probs.iter().enumerate() {
        if pv == 0.0 {
            continue;
        }
        for &(t, p) in game.transition(s, a_adv, v) {
            out[t] += pv * p;
        }
    }
    Ok(out)
}

/// Samples one transition. Returns `(next_state, r_adv, r_vic, done)` where
/// `done` flags arrival in an absorbing state; the caller owns the step
/// budget.
pub fn step<R: Rng + ?Sized>(
    game: &MarkovGame,
    s: usize,
    a_adv: usize,
    a_vic: usize,
    rng: &mut R,
) -> (usize, f64, f64, bool) {
    let row = game.transition(s, a_adv, a_vic);
    let next = if row.len() == 1 {
        row[0].0
    } else {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = row[row.len() - 1].0;
        for &(t, p) in row {
            acc += p;
            if u < acc {
                pick = t;
                break;
            }
        }
        pick
    };
    (
        next,
        game.adv_reward[next],
        game.vic_reward[next],
        game.is_absorbing(next),
    )
}

/// Random game for property sweeps: `n_live` transient states plus the three
/// outcome states, sparse random rows, uniform random state rewards on live
/// states and fixed outcome payoffs.
pub fn random_game<R: Rng + ?Sized>(
    rng: &mut R,
    n_live: usize,
    n_adv: usize,
    n_vic: usize,
    discount: f64,
) -> Result<MarkovGame> {
    let n = n_live + 3;
    let (win, lose, tie) = (n_live, n_live + 1, n_live + 2);
    let mut b = GameBuilder::new("random", n, n_adv, n_vic);
    b.discount(discount)
        .horizon(60)
        .terminal(win, Outcome::AdvWin);
    b.terminal(lose, Outcome::VicWin)
        .terminal(tie, Outcome::Tie);
    b.rewards(win, 1.0, -1.0)
        .rewards(lose, -1.0, 1.0)
        .rewards(tie, -0.2, -0.2);
    for s in 0..n_live {
        b.rewards(s, rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        for a in 0..n_adv {
            for v in 0..n_vic {
                let k = rng.random_range(1..=3usize);
                let mut w: Vec<(usize, f64)> = (0..k)
                    .map(|_| (rng.random_range(0..n), rng.random_range(0.05..1.0)))
                    .collect();
                let z: f64 = w.iter().map(|e| e.1).sum();
                for e in &mut w {
                    e.1 /= z;
                }
                fix_row_sum(&mut w);
                b.transition(s, a, v, w);
            }
        }
    }
    b.build()
}

// Nudges the last entry so the row sums to one in floating point.
fn fix_row_sum(row: &mut [(usize, f64)]) {
    let head: f64 = row[..row.len() - 1].iter().map(|e| e.1).sum();
    if let Some(last) = row.last_mut() {
        last.1 = 1.0 - head;
    }
}
