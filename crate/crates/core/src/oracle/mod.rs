//! Exact dynamic-programming ground truth for tabular games.
//!
//! Values follow `V(s) = c(s) + [s live] sum_v B(s,v) rho(s,v) + gamma sum_s' M(s,s') V(s')`
//! where `M` is the kernel induced by both players, `c` a state reward and
//! `rho` an optional reward on the victim-slot action. The state's own reward
//! is part of its value, so an absorbing state worth `r` per step has value
//! `r / (1 - gamma)`.

mod bounds;
mod report;

use crate::error::{Error, Result};
use crate::game::{AdversaryAgent, MarkovGame};
use crate::imitator::Discriminator;
use crate::policy::{safe_ln, Policy};

pub use bounds::{
    best_response, imitation_constant, imitation_constant_expanded, robustness_probe,
    sensitivity_check, Pinsker, SensitivityReports,
};
pub use report::BoundReport;

/// Tolerance on the Bellman residual every value table must meet.
pub const RESIDUAL_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Adversary,
    Victim,
}

#[derive(Clone, Debug)]
pub struct ValueTable {
    pub values: Vec<f64>,
    /// Number of backups performed; the values equal the discounted sum
    /// truncated at this many steps.
    pub horizon_used: usize,
    /// Largest Bellman residual of the returned values.
    pub residual: f64,
}

impl ValueTable {
    /// Value minus the state's own reward: the discounted sum from the next
    /// step on.
    pub fn continuation(&self, state_reward: &[f64], s: usize) -> f64 {
        self.values[s] - state_reward[s]
    }
}

#[derive(Clone, Debug)]
pub struct Occupancy {
    /// `d(s) = sum_{t <= T} gamma^t Pr(s_t = s)`.
    pub weights: Vec<f64>,
    /// Truncation step `T`.
    pub horizon: usize,
}

/// Reward selected for [`exact_objective`] and [`exact_policy_gradient`].
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    /// `r_adv(s)`.
    Adv,
    /// `r_vic(s)`.
    Vic,
    /// `r_adv(s) - r_vic(s)`.
    Delta,
    /// `log D(s, v)` for the victim-slot action, minus `r_adv(s)` when enhanced.
    Eta {
        disc: &'a Discriminator,
        enhanced: bool,
    },
    /// `log(1 - D(s, v))` for the victim-slot action.
    ExpertLog { disc: &'a Discriminator },
    /// `-log pi(v|s)` of the victim-slot policy: its discounted causal entropy.
    Entropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wrt {
    Adversary,
    VictimSlot,
}

/// Per-state action distributions of both players and the induced kernel.
pub struct Joint {
    pub adv: Vec<f64>,
    pub vic: Vec<f64>,
    pub n_adv: usize,
    pub n_vic: usize,
    pub kernel: Vec<Vec<(usize, f64)>>,
}

/// Effective `S x A` action table of an adversary, with the imitator's
/// prediction marginalized out.
pub fn adversary_table(game: &MarkovGame, agent: &AdversaryAgent) -> Result<Vec<f64>> {
    let policy = agent.policy;
    policy.layout().check(game)?;
    if policy.action_count() != game.n_adv_actions() {
        return Err(Error::IncompatibleActions(
            policy.action_count(),
            game.n_adv_actions(),
        ));
    }
    let na = policy.action_count();
    let imit = imitator_table(game, agent)?;
    let mut out = vec![0.0; game.n_states() * na];
    let mut obs = vec![0.0; policy.layout().dim()];
    let mut probs = vec![0.0; na];
    for s in 0..game.n_states() {
        let row = &mut out[s * na..(s + 1) * na];
        for_each_adv_obs(game, agent, imit.as_deref(), s, &mut obs, |obs, w| {
            policy.probs_into(obs, &mut probs);
            for (r, p) in row.iter_mut().zip(&probs) {
                *r += w * p;
            }
        });
    }
    Ok(out)
}

fn imitator_table(game: &MarkovGame, agent: &AdversaryAgent) -> Result<Option<Vec<f64>>> {
    match (agent.feed_imitator, agent.imitator) {
        (true, Some(imit)) => {
            if imit.action_count() != agent.policy.layout().imit_dim {
                return Err(Error::IncompatibleActions(
                    imit.action_count(),
                    agent.policy.layout().imit_dim,
                ));
            }
            Ok(Some(imit.state_table(game)?))
        }
        _ => Ok(None),
    }
}

// Calls `f(obs, weight)` for every observation the adversary may see at `s`,
// weighted by the probability of the imitator prediction that produces it.
fn for_each_adv_obs(
    game: &MarkovGame,
    agent: &AdversaryAgent,
    imit: Option<&[f64]>,
    s: usize,
    obs: &mut [f64],
    mut f: impl FnMut(&[f64], f64),
) {
    let Some(table) = imit else {
        agent.observe(game, s, None, &[], obs);
        f(obs, 1.0);
        return;
    };
    let k = agent.policy.layout().imit_dim;
    let dist = &table[s * k..(s + 1) * k];
    match agent.policy.layout().imit_input {
        crate::policy::ImitInput::Distribution => {
            agent.observe(game, s, Some(0), dist, obs);
            f(obs, 1.0);
        }
        crate::policy::ImitInput::Sampled => {
            for (a, &w) in dist.iter().enumerate() {
                if w > 0.0 {
                    agent.observe(game, s, Some(a), dist, obs);
                    f(obs, w);
                }
            }
        }
    }
}

pub fn joint(game: &MarkovGame, adversary: &AdversaryAgent, victim: &Policy) -> Result<Joint> {
    if victim.action_count() != game.n_vic_actions() {
        return Err(Error::IncompatibleActions(
            victim.action_count(),
            game.n_vic_actions(),
        ));
    }
    let adv = adversary_table(game, adversary)?;
    let vic = victim.state_table(game)?;
    let (na, nv, n) = (game.n_adv_actions(), game.n_vic_actions(), game.n_states());
    let mut dense = vec![0.0; n];
    let mut touched = Vec::new();
    let mut kernel = Vec::with_capacity(n);
    for s in 0..n {
        if game.is_absorbing(s) {
            kernel.push(vec![(s, 1.0)]);
            continue;
        }
        for a in 0..na {
            let pa = adv[s * na + a];
            if pa == 0.0 {
                continue;
            }
            for v in 0..nv {
                let w = pa * vic[s * nv + v];
                if w == 0.0 {
                    continue;
                }
                for &(t, p) in game.transition(s, a, v) {
                    if dense[t] == 0.0 {
                        touched.push(t);
                    }
                    dense[t] += w * p;
                }
            }
        }
        touched.sort_unstable();
        let row: Vec<(usize, f64)> = touched.iter().map(|&t| (t, dense[t])).collect();
        for &t in &touched {
            dense[t] = 0.0;
        }
        touched.clear();
        kernel.push(row);
    }
    Ok(Joint {
        adv,
        vic,
        n_adv: na,
        n_vic: nv,
        kernel,
    })
}

/// State reward `c` and per-(state, victim action) reward `rho` of an objective.
fn rewards(
    game: &MarkovGame,
    joint: &Joint,
    objective: &Objective,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let n = game.n_states();
    let nv = joint.n_vic;
    let per_action = |f: &dyn Fn(usize, usize) -> f64| {
        let mut rho = vec![0.0; n * nv];
        for s in game.live_states() {
            for v in 0..nv {
                rho[s * nv + v] = f(s, v);
            }
        }
        rho
    };
    match *objective {
        Objective::Adv => (game.adv_reward().to_vec(), None),
        Objective::Vic => (game.vic_reward().to_vec(), None),
        Objective::Delta => (
            game.adv_reward()
                .iter()
                .zip(game.vic_reward())
                .map(|(a, v)| a - v)
                .collect(),
            None,
        ),
        Objective::Eta { disc, enhanced } => {
            let c = if enhanced {
                game.adv_reward().iter().map(|r| -r).collect()
            } else {
                vec![0.0; n]
            };
            (c, Some(per_action(&|s, v| disc.prob(game, s, v).ln())))
        }
        Objective::ExpertLog { disc } => (
            vec![0.0; n],
            Some(per_action(&|s, v| (1.0 - disc.prob(game, s, v)).ln())),
        ),
        Objective::Entropy => (
            vec![0.0; n],
            Some(per_action(&|s, v| -safe_ln(joint.vic[s * nv + v]))),
        ),
    }
}

fn base_rewards(game: &MarkovGame, joint: &Joint, c: &[f64], rho: Option<&[f64]>) -> Vec<f64> {
    let nv = joint.n_vic;
    let mut base = c.to_vec();
    if let Some(rho) = rho {
        for s in game.live_states() {
            base[s] += (0..nv)
                .map(|v| joint.vic[s * nv + v] * rho[s * nv + v])
                .sum::<f64>();
        }
    }
    base
}

/// Solves `V = base + gamma M V` by repeated backups.
pub fn solve_values(
    game: &MarkovGame,
    kernel: &[Vec<(usize, f64)>],
    base: &[f64],
) -> Result<ValueTable> {
    let gamma = game.discount();
    let n = base.len();
    let backup = |v: &[f64], s: usize| {
        base[s] + gamma * kernel[s].iter().map(|&(t, p)| p * v[t]).sum::<f64>()
    };
    let mut v = vec![0.0; n];
    for s in 0..n {
        if game.is_absorbing(s) {
            v[s] = base[s] / (1.0 - gamma);
        }
    }
    let mut next = v.clone();
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut residual: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for s in 0..n {
            if !game.is_absorbing(s) {
                next[s] = backup(&v, s);
            }
            residual = residual.max((next[s] - v[s]).abs());
            scale = scale.max(next[s].abs());
        }
        std::mem::swap(&mut v, &mut next);
        if residual <= 1e-14 * scale {
            break;
        }
        if residual < best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
            // Rounding noise floor reached.
            if stalled > 50 && best <= 1e-12 * scale {
                break;
            }
        }
        if sweeps >= MAX_SWEEPS {
            break;
        }
    }
    let residual = (0..n)
        .map(|s| (backup(&v, s) - v[s]).abs())
        .fold(0.0, f64::max);
    if residual > RESIDUAL_TOL || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonConvergence {
            iterations: sweeps,
            residual,
        });
    }
    Ok(ValueTable {
        values: v,
        horizon_used: sweeps,
        residual,
    })
}

/// Value table of the selected side's own state reward.
pub fn value_function(
    game: &MarkovGame,
    adversary: &AdversaryAgent,
    victim: &Policy,
    side: Side,
) -> Result<ValueTable> {
    let j = joint(game, adversary, victim)?;
    let c = match side {
        Side::Adversary => game.adv_reward(),
        Side::Victim => game.vic_reward(),
    };
    solve_values(game, &j.kernel, c)
}

pub fn objective_values(
    game: &MarkovGame,
    joint: &Joint,
    objective: &Objective,
) -> Result<ValueTable> {
    let (c, rho) = rewards(game, joint, objective);
    solve_values(
        game,
        &joint.kernel,
        &base_rewards(game, joint, &c, rho.as_deref()),
    )
}

/// Exact discounted objective from the initial state with `slot` playing the
/// victim's role (the real victim or the imitator).
pub fn exact_objective(
    game: &MarkovGame,
    adversary: &AdversaryAgent,
    slot: &Policy,
    objective: &Objective,
) -> Result<f64> {
    let j = joint(game, adversary, slot)?;
    Ok(objective_values(game, &j, objective)?.values[game.initial_state()])
}

/// Truncation step for occupancy sums: the smallest `T` with
/// `gamma^(T+1) / (1 - gamma) <= 1e-13`.
pub fn occupancy_horizon(gamma: f64) -> usize {
    if gamma == 0.0 {
        return 0;
    }
    let t = ((1e-13 * (1.0 - gamma)).ln() / gamma.ln()).ceil() as usize;
    t.saturating_sub(1).min(MAX_SWEEPS)
}

pub fn occupancy_of(game: &MarkovGame, kernel: &[Vec<(usize, f64)>]) -> Occupancy {
    let gamma = game.discount();
    let horizon = occupancy_horizon(gamma);
    let n = game.n_states();
    let mut mu = vec![0.0; n];
    mu[game.initial_state()] = 1.0;
    let mut d = mu.clone();
    let mut w = 1.0;
    let mut next = vec![0.0; n];
    for _ in 0..horizon {
        next.fill(0.0);
        for (s, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                for &(t, p) in &kernel[s] {
                    next[t] += m * p;
                }
            }
        }
        std::mem::swap(&mut mu, &mut next);
        w *= gamma;
        for (di, m) in d.iter_mut().zip(&mu) {
            *di += w * m;
        }
    }
    Occupancy {
        weights: d,
        horizon,
    }
}

pub fn occupancy(
    game: &MarkovGame,
    adversary: &AdversaryAgent,
    victim: &Policy,
) -> Result<Occupancy> {
    Ok(occupancy_of(game, &joint(game, adversary, victim)?.kernel))
}

/// The victim's value at the initial state under the given adversary.
pub fn gamma_of_adversary(
    game: &MarkovGame,
    victim: &Policy,
    adversary: &AdversaryAgent,
) -> Result<f64> {
    Ok(value_function(game, adversary, victim, Side::Victim)?.values[game.initial_state()])
}

/// `A(s, s_bar) = r_vic(s) + gamma V_vic(s_bar) - V_vic(s)` for precomputed
/// victim values.
pub fn advantage_from_values(
    game: &MarkovGame,
    values: &ValueTable,
    s: usize,
    s_bar: usize,
) -> f64 {
    game.vic_reward()[s] + game.discount() * values.values[s_bar] - values.values[s]
}

pub fn competitive_advantage(
    game: &MarkovGame,
    adversary: &AdversaryAgent,
    victim: &Policy,
    s: usize,
    s_bar: usize,
) -> Result<f64> {
    if s >= game.n_states() || s_bar >= game.n_states() {
        return Err(Error::InvalidArgument("state out of range".into()));
    }
    let values = value_function(game, adversary, victim, Side::Victim)?;
    Ok(advantage_from_values(game, &values, s, s_bar))
}

/// `max_s |E_{s_bar ~ M(s, .)} A(s, s_bar)|`, zero up to the solver residual.
pub fn max_advantage_mean(
    game: &MarkovGame,
    adversary: &AdversaryAgent,
    victim: &Policy,
) -> Result<f64> {
    let j = joint(game, adversary, victim)?;
    let values = solve_values(game, &j.kernel, game.vic_reward())?;
    Ok((0..game.n_states())
        .map(|s| {
            j.kernel[s]
                .iter()
                .map(|&(t, p)| p * advantage_from_values(game, &values, s, t))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max))
}

/// Gradient of [`exact_objective`] with respect to the parameters of either
/// the adversary or the victim-slot policy, from the policy-gradient theorem
/// over exact occupancies.
pub fn exact_policy_gradient(
    game: &MarkovGame,
    adversary: &AdversaryAgent,
    slot: &Policy,
    objective: &Objective,
    wrt: Wrt,
) -> Result<Vec<f64>> {
    let target = match wrt {
        Wrt::Adversary => adversary.policy,
        Wrt::VictimSlot => slot,
    };
    if !target.is_trainable() {
        return Err(Error::InvalidArgument(
            "cannot differentiate a fixed policy".into(),
        ));
    }
    let j = joint(game, adversary, slot)?;
    let (c, rho) = rewards(game, &j, objective);
    let values = solve_values(game, &j.kernel, &base_rewards(game, &j, &c, rho.as_deref()))?;
    let occ = occupancy_of(game, &j.kernel);
    let gamma = game.discount();
    let (na, nv) = (j.n_adv, j.n_vic);
    let v = &values.values;
    let rho_at = |s: usize, b: usize| rho.as_ref().map_or(0.0, |r| r[s * nv + b]);
    // Expected next value for each joint action.
    let next_value = |s: usize, a: usize, b: usize| -> f64 {
        game.transition(s, a, b)
            .iter()
            .map(|&(t, p)| p * v[t])
            .sum()
    };

    let mut grad = vec![0.0; target.num_params()];
    match wrt {
        Wrt::VictimSlot => {
            let mut obs = vec![0.0; slot.layout().dim()];
            for s in game.live_states() {
                let d = occ.weights[s];
                if d == 0.0 {
                    continue;
                }
                let weights: Vec<f64> = (0..nv)
                    .map(|b| {
                        rho_at(s, b)
                            + gamma
                                * (0..na)
                                    .map(|a| j.adv[s * na + a] * next_value(s, a, b))
                                    .sum::<f64>()
                    })
                    .collect();
                slot.layout()
                    .write(game, s, crate::policy::ImitSignal::None, &mut obs);
                slot.accumulate_prob_vjp(&obs, &weights, d, &mut grad);
            }
        }
        Wrt::Adversary => {
            let imit = imitator_table(game, adversary)?;
            let mut obs = vec![0.0; adversary.policy.layout().dim()];
            for s in game.live_states() {
                let d = occ.weights[s];
                if d == 0.0 {
                    continue;
                }
                let weights: Vec<f64> = (0..na)
                    .map(|a| {
                        (0..nv)
                            .map(|b| {
                                j.vic[s * nv + b] * (rho_at(s, b) + gamma * next_value(s, a, b))
                            })
                            .sum::<f64>()
                    })
                    .collect();
                for_each_adv_obs(game, adversary, imit.as_deref(), s, &mut obs, |obs, w| {
                    adversary
                        .policy
                        .accumulate_prob_vjp(obs, &weights, d * w, &mut grad);
                });
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::game::{make_env, random_game, EnvSpec, GameBuilder, Outcome};
    use crate::policy::{Encoding, ObsLayout};
    use crate::seeding;

    fn rps() -> MarkovGame {
        make_env(&EnvSpec::markov_rps()).unwrap()
    }

    fn fixed(g: &MarkovGame, a: usize) -> Policy {
        Policy::deterministic(g, &vec![a; g.n_states()], 3).unwrap()
    }

    #[test]
    fn zero_rewards_zero_values() {
        let mut rng = seeding::rng(1, &[]);
        let g = random_game(&mut rng, 4, 2, 2, 0.9).unwrap();
        let g = g.with_rewards(vec![0.0; 7], vec![0.0; 7]).unwrap();
        let l = ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap();
        let a = Policy::random_tabular(l.clone(), 2, 1.0, &mut rng);
        let v = Policy::random_tabular(l, 2, 1.0, &mut rng);
        let t = value_function(&g, &AdversaryAgent::new(&a), &v, Side::Adversary).unwrap();
        assert!(t.values.iter().all(|&x| x == 0.0));
        assert_eq!(
            gamma_of_adversary(&g, &v, &AdversaryAgent::new(&a)).unwrap(),
            0.0
        );
    }

    #[test]
    fn recurrent_state_geometric_series() {
        // One non-absorbing state that loops on itself with reward 0.7.
        let mut b = GameBuilder::new("loop", 1, 1, 1);
        b.transition(0, 0, 0, vec![(0, 1.0)])
            .rewards(0, 0.7, 0.0)
            .discount(0.9);
        let g = b.build().unwrap();
        let p = Policy::tabular(ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap(), 1);
        let t = value_function(&g, &AdversaryAgent::new(&p), &p, Side::Adversary).unwrap();
        assert!(t.residual <= RESIDUAL_TOL);
        assert_abs_diff_eq!(
            t.continuation(g.adv_reward(), 0),
            0.7 * 0.9 / 0.1,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(t.values[0], 0.7 / 0.1, epsilon = 1e-9);
    }

    #[test]
    fn rps_paper_against_rock() {
        let g = rps();
        let (rock, paper) = (fixed(&g, 0), fixed(&g, 1));
        let agent = AdversaryAgent::new(&paper);
        let adv = value_function(&g, &agent, &rock, Side::Adversary).unwrap();
        // V(win) = 1 / (1 - gamma); V(s0) = 0 + gamma V(win).
        let gamma = 0.9;
        let v_win = 1.0 / (1.0 - gamma);
        assert_abs_diff_eq!(adv.values[1], v_win, epsilon = 1e-9);
        assert_abs_diff_eq!(adv.values[0], gamma * v_win, epsilon = 1e-9);
        let vic = gamma_of_adversary(&g, &rock, &agent).unwrap();
        assert_abs_diff_eq!(vic, -gamma / (1.0 - gamma), epsilon = 1e-9);
    }

    #[test]
    fn occupancy_mass_and_absorbing_start() {
        let g = rps();
        let mut rng = seeding::rng(2, &[]);
        let l = ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap();
        let a = Policy::random_tabular(l.clone(), 3, 1.0, &mut rng);
        let v = Policy::random_tabular(l, 3, 1.0, &mut rng);
        let occ = occupancy(&g, &AdversaryAgent::new(&a), &v).unwrap();
        let gamma: f64 = 0.9;
        let mass = (1.0 - gamma.powi(occ.horizon as i32 + 1)) / (1.0 - gamma);
        assert_abs_diff_eq!(occ.weights.iter().sum::<f64>(), mass, epsilon = 1e-9);
        assert_eq!(occ.weights[0], 1.0);

        let g = g.with_initial_state(3).unwrap();
        let occ = occupancy(&g, &AdversaryAgent::new(&a), &v).unwrap();
        assert_abs_diff_eq!(occ.weights[3], 1.0 / (1.0 - gamma), epsilon = 1e-9);
    }

    #[test]
    fn occupancy_follows_deterministic_path() {
        let g = make_env(&EnvSpec::grid_pass(4, 3)).unwrap();
        // Blocker stays, runner walks along the bottom row (no contact).
        let stay = Policy::deterministic(&g, &vec![0; g.n_states()], 5).unwrap();
        let down_then_right: Vec<usize> = (0..g.n_states())
            .map(|s| {
                let f = &g.factored().map(|f| f.active[s].clone()).unwrap();
                if f.len() == 4 && f[1] == 3 {
                    3 // runner in row 0: go right
                } else {
                    2 // go down
                }
            })
            .collect();
        let runner = Policy::deterministic(&g, &down_then_right, 4).unwrap();
        let occ = occupancy(&g, &AdversaryAgent::new(&stay), &runner).unwrap();

        // Trace the path by hand.
        let mut path = vec![g.initial_state()];
        let mut s = g.initial_state();
        while !g.is_absorbing(s) {
            s = g.transition(s, 0, down_then_right[s])[0].0;
            path.push(s);
        }
        assert_eq!(g.outcome(s), Some(Outcome::VicWin));
        for x in 0..g.n_states() {
            if path.contains(&x) {
                assert!(occ.weights[x] > 0.0);
            } else {
                assert_eq!(occ.weights[x], 0.0);
            }
        }
    }

    #[test]
    fn delta_is_twice_adv_when_zero_sum() {
        let g = rps();
        let mut rng = seeding::rng(3, &[]);
        let l = ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap();
        let a = Policy::random_tabular(l.clone(), 3, 1.0, &mut rng);
        let v = Policy::random_tabular(l, 3, 1.0, &mut rng);
        let agent = AdversaryAgent::new(&a);
        let adv = exact_objective(&g, &agent, &v, &Objective::Adv).unwrap();
        let delta = exact_objective(&g, &agent, &v, &Objective::Delta).unwrap();
        assert_abs_diff_eq!(delta, 2.0 * adv, epsilon = 1e-12);
        let vf = value_function(&g, &agent, &v, Side::Adversary).unwrap();
        assert_eq!(adv, vf.values[0]);
    }

    #[test]
    fn uniform_victim_gives_zero_adversary_gradient() {
        let g = rps();
        let mut rng = seeding::rng(4, &[]);
        let l = ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap();
        let vic = Policy::tabular(l.clone(), 3);
        for _ in 0..10 {
            let a = Policy::random_tabular(l.clone(), 3, 2.0, &mut rng);
            let grad = exact_policy_gradient(
                &g,
                &AdversaryAgent::new(&a),
                &vic,
                &Objective::Adv,
                Wrt::Adversary,
            )
            .unwrap();
            assert!(grad.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn advantage_zero_mean_and_absorbing() {
        let g = make_env(&EnvSpec::grid_pass(4, 3)).unwrap();
        let mut rng = seeding::rng(5, &[]);
        let a = Policy::random_tabular(
            ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap(),
            5,
            1.0,
            &mut rng,
        );
        let v = Policy::random_tabular(
            ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap(),
            4,
            1.0,
            &mut rng,
        );
        let agent = AdversaryAgent::new(&a);
        assert!(max_advantage_mean(&g, &agent, &v).unwrap() <= 1e-9);
        let abs = g.n_states() - 1;
        assert!(
            competitive_advantage(&g, &agent, &v, abs, abs)
                .unwrap()
                .abs()
                <= 1e-9
        );
    }

    #[test]
    fn fixed_policies_are_not_differentiable() {
        let g = rps();
        let rock = fixed(&g, 0);
        let err = exact_policy_gradient(
            &g,
            &AdversaryAgent::new(&rock),
            &rock,
            &Objective::Adv,
            Wrt::Adversary,
        );
        assert!(err.is_err());
    }

    #[test]
    fn gamma_zero_occupancy() {
        assert_eq!(occupancy_horizon(0.0), 0);
        let h = occupancy_horizon(0.9);
        assert!(0.9f64.powi(h as i32 + 1) / 0.1 <= 1e-13);
        assert!(0.9f64.powi(h as i32) / 0.1 > 1e-13);
    }
}
