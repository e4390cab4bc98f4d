//! Adversary optimization on the differentiated reward `r_adv - r_vic`,
//! acting on observations augmented with the imitator's prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{AdversaryAgent, MarkovGame, Trajectory};
use crate::oracle::{value_function, Side};
use crate::pg::{pg_step, PgBatch, PgMethod, PgSettings};
use crate::policy::{ImitSignal, ObsLayout, Policy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryState {
    #[serde(flatten)]
    pub policy: Policy,
    pub clip_eps: f64,
    pub use_imitator_input: bool,
}

impl AdversaryState {
    pub fn new(policy: Policy, clip_eps: f64, use_imitator_input: bool) -> Result<Self> {
        if clip_eps.is_nan() || clip_eps <= 0.0 {
            return Err(Error::ParamOutOfRange {
                name: "clip_eps",
                value: clip_eps.to_string(),
                range: "clip_eps > 0",
            });
        }
        Ok(Self {
            policy,
            clip_eps,
            use_imitator_input,
        })
    }
}

pub fn differentiated_reward(r_adv: f64, r_vic: f64) -> f64 {
    r_adv - r_vic
}

/// State features followed by the imitator-prediction block, which is left
/// at zero when `use_imitator` is off.
pub fn augment_observation(
    game: &MarkovGame,
    layout: &ObsLayout,
    s: usize,
    imit_action: Option<usize>,
    use_imitator: bool,
) -> Result<Vec<f64>> {
    layout.check(game)?;
    if s >= game.n_states() {
        return Err(Error::InvalidArgument(format!("state {s} out of range")));
    }
    let signal = if use_imitator {
        match imit_action {
            Some(a) if a < layout.imit_dim => ImitSignal::Action(a),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "imitator action {other:?} invalid for a block of {}",
                    layout.imit_dim
                )))
            }
        }
    } else {
        ImitSignal::None
    };
    Ok(layout.observe(game, s, signal))
}

/// One policy-gradient step on a batch whose returns are built from the
/// differentiated reward.
pub fn adv_update(
    state: &AdversaryState,
    batch: &PgBatch,
    lr: f64,
    method: PgMethod,
    cycle: u64,
) -> Result<Policy> {
    let settings = PgSettings {
        lr,
        method,
        clip_eps: state.clip_eps,
        ..PgSettings::default()
    };
    Ok(pg_step(&state.policy, batch, &settings, cycle)?.0)
}

/// `V_adv(s0) - V_vic(s0)` from the two value tables.
pub fn enhanced_objective_value(
    game: &MarkovGame,
    adversary: &AdversaryAgent,
    victim: &Policy,
) -> Result<f64> {
    let s0 = game.initial_state();
    let adv = value_function(game, adversary, victim, Side::Adversary)?.values[s0];
    let vic = value_function(game, adversary, victim, Side::Victim)?.values[s0];
    Ok(adv - vic)
}

/// Single-trajectory estimate of the gradient of the differentiated
/// objective: `DeltaR(tau) * sum_t grad log pi(a_t | s_t, predicted a_t)`
/// over the observations the adversary actually saw.
pub fn delta_return_sample(
    game: &MarkovGame,
    adversary: &AdversaryAgent,
    traj: &Trajectory,
) -> Vec<f64> {
    let ret = traj.discounted_return(game, |s| {
        differentiated_reward(game.adv_reward()[s], game.vic_reward()[s])
    });
    let policy = adversary.policy;
    let mut grad = vec![0.0; policy.num_params()];
    let mut obs = vec![0.0; policy.layout().dim()];
    let imit_dist = adversary
        .imitator
        .map(|imit| imit.state_table(game).expect("imitator checked by caller"));
    let k = policy.layout().imit_dim;
    for x in &traj.transitions {
        let dist = imit_dist
            .as_ref()
            .map_or(&[][..], |t| &t[x.state * k..(x.state + 1) * k]);
        adversary.observe(game, x.state, x.imit_action, dist, &mut obs);
        policy.accumulate_log_prob_grad(&obs, x.adv_action, ret, &mut grad);
    }
    grad
}
