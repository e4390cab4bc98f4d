//! Stochastic policies over observation vectors, with exact gradients.
//!
//! Observations are built by [`ObsLayout`]: a state block (one-hot over
//! states, or the game's factored features) followed by an optional block
//! carrying the imitator's prediction of the victim's action.

mod dist;
mod mlp;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::MarkovGame;

pub use dist::{entropy, entropy_of, kl, kl_divergence, max_state_kl, total_variation};

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn safe_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    OneHot,
    Factored,
}

/// How the imitator's prediction enters the adversary observation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImitInput {
    /// One-hot of the sampled predicted action.
    #[default]
    Sampled,
    /// The imitator's full action distribution.
    Distribution,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub encoding: Encoding,
    pub state_dim: usize,
    pub imit_dim: usize,
    #[serde(default)]
    pub imit_input: ImitInput,
}

#[derive(Clone, Copy, Debug)]
pub enum ImitSignal<'a> {
    None,
    Action(usize),
    Dist(&'a [f64]),
}

impl ObsLayout {
    pub fn for_game(game: &MarkovGame, encoding: Encoding, imit_dim: usize) -> Result<Self> {
        let state_dim = match encoding {
            Encoding::OneHot => game.n_states(),
            Encoding::Factored => {
                game.factored()
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "{} has no factored state features",
                            game.name()
                        ))
                    })?
                    .dim
            }
        };
        Ok(Self {
            encoding,
            state_dim,
            imit_dim,
            imit_input: ImitInput::Sampled,
        })
    }

    pub fn dim(&self) -> usize {
        self.state_dim + self.imit_dim
    }

    /// Checks that the layout can encode the game's states.
    pub fn check(&self, game: &MarkovGame) -> Result<()> {
        let expected = Self::for_game(game, self.encoding, self.imit_dim)?;
        if expected.state_dim != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: expected.state_dim,
                got: self.state_dim,
            });
        }
        Ok(())
    }

    pub fn write(&self, game: &MarkovGame, s: usize, imit: ImitSignal, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out.fill(0.0);
        match self.encoding {
            Encoding::OneHot => out[s] = 1.0,
            Encoding::Factored => {
                let f = game.factored().expect("layout checked against game");
                for &i in &f.active[s] {
                    out[i] = 1.0;
                }
            }
        }
        let block = &mut out[self.state_dim..];
        match imit {
            ImitSignal::None => {}
            ImitSignal::Action(a) => block[a] = 1.0,
            ImitSignal::Dist(p) => block.copy_from_slice(p),
        }
    }

    pub fn observe(&self, game: &MarkovGame, s: usize, imit: ImitSignal) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.write(game, s, imit, &mut out);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Softmax of a linear map of the observation; a per-state logit table
    /// when the state block is one-hot.
    TabularSoftmax,
    /// One tanh hidden layer and a softmax head.
    Mlp { hidden: usize },
    /// A fixed per-state probability table with no trainable parameters.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    kind: PolicyKind,
    #[serde(rename = "obs_layout")]
    layout: ObsLayout,
    action_count: usize,
    params: Vec<f64>,
}

pub const MLP_HIDDEN: usize = 32;

impl Policy {
    /// Tabular softmax with all logits zero (uniform everywhere).
    pub fn tabular(layout: ObsLayout, action_count: usize) -> Self {
        let params = vec![0.0; layout.dim() * action_count];
        Self {
            kind: PolicyKind::TabularSoftmax,
            layout,
            action_count,
            params,
        }
    }

    /// Tabular softmax with i.i.d. normal logits of the given scale.
    pub fn random_tabular<R: Rng + ?Sized>(
        layout: ObsLayout,
        action_count: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::tabular(layout, action_count);
        for w in &mut p.params {
            let z: f64 = StandardNormal.sample(rng);
            *w = scale * z;
        }
        p
    }

    pub fn mlp<R: Rng + ?Sized>(
        layout: ObsLayout,
        action_count: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let n = mlp::param_count(layout.dim(), hidden, action_count);
        Self {
            kind: PolicyKind::Mlp { hidden },
            layout,
            action_count,
            params: (0..n).map(|_| rng.random_range(-0.1..0.1)).collect(),
        }
    }

    /// Fixed per-state table over a one-hot state layout (`table[s * A + a]`).
    pub fn fixed(game: &MarkovGame, action_count: usize, table: Vec<f64>) -> Result<Self> {
        let layout = ObsLayout::for_game(game, Encoding::OneHot, 0)?;
        Self::from_parts(PolicyKind::Fixed, layout, action_count, table)
    }

    /// Fixed policy that always plays `choices[s]` at state `s`.
    pub fn deterministic(
        game: &MarkovGame,
        choices: &[usize],
        action_count: usize,
    ) -> Result<Self> {
        if choices.len() != game.n_states() {
            return Err(Error::DimensionMismatch {
                expected: game.n_states(),
                got: choices.len(),
            });
        }
        let mut table = vec![0.0; choices.len() * action_count];
        for (s, &a) in choices.iter().enumerate() {
            if a >= action_count {
                return Err(Error::InvalidArgument(format!("action {a} out of range")));
            }
            table[s * action_count + a] = 1.0;
        }
        Self::fixed(game, action_count, table)
    }

    pub fn from_parts(
        kind: PolicyKind,
        layout: ObsLayout,
        action_count: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let p = Self {
            kind,
            layout,
            action_count,
            params,
        };
        p.validate()?;
        Ok(p)
    }

    /// Structural checks, also applied after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.action_count == 0 {
            return Err(Error::InvalidArgument(
                "policy needs at least one action".into(),
            ));
        }
        if self.params.len() != self.expected_params() {
            return Err(Error::DimensionMismatch {
                expected: self.expected_params(),
                got: self.params.len(),
            });
        }
        if self.params.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite policy parameter".into()));
        }
        if self.kind == PolicyKind::Fixed {
            if self.layout.encoding != Encoding::OneHot {
                return Err(Error::InvalidArgument(
                    "fixed policies need a one-hot layout".into(),
                ));
            }
            for row in self.params.chunks(self.action_count) {
                let total: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(
                        "fixed policy rows must be distributions".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn expected_params(&self) -> usize {
        match self.kind {
            PolicyKind::TabularSoftmax => self.layout.dim() * self.action_count,
            PolicyKind::Mlp { hidden } => {
                mlp::param_count(self.layout.dim(), hidden, self.action_count)
            }
            PolicyKind::Fixed => self.layout.state_dim * self.action_count,
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn layout(&self) -> &ObsLayout {
        &self.layout
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_trainable(&self) -> bool {
        self.kind != PolicyKind::Fixed
    }

    /// Copy with a new parameter vector of the same length.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn fingerprint(&self) -> u64 {
        crate::seeding::fingerprint(&self.params)
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.dim(),
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Action distribution at an observation.
    pub fn action_dist(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        let mut out = vec![0.0; self.action_count];
        self.probs_into(obs, &mut out);
        Ok(out)
    }

    /// Action distribution at a game state with an empty imitator block.
    pub fn state_dist(&self, game: &MarkovGame, s: usize) -> Result<Vec<f64>> {
        self.layout.check(game)?;
        self.action_dist(&self.layout.observe(game, s, ImitSignal::None))
    }

    /// Row-major `S x A` table of [`Policy::state_dist`].
    pub fn state_table(&self, game: &MarkovGame) -> Result<Vec<f64>> {
        self.layout.check(game)?;
        let mut obs = vec![0.0; self.layout.dim()];
        let mut out = vec![0.0; game.n_states() * self.action_count];
        for (s, row) in out.chunks_mut(self.action_count).enumerate() {
            self.layout.write(game, s, ImitSignal::None, &mut obs);
            self.probs_into(&obs, row);
        }
        Ok(out)
    }

    /// Unchecked [`Policy::action_dist`] writing into `out`.
    pub fn probs_into(&self, obs: &[f64], out: &mut [f64]) {
        match self.kind {
            PolicyKind::Fixed => {
                let a = self.action_count;
                match obs[..self.layout.state_dim].iter().position(|&x| x != 0.0) {
                    Some(row) => out.copy_from_slice(&self.params[row * a..(row + 1) * a]),
                    None => out.fill(1.0 / a as f64),
                }
                return;
            }
            PolicyKind::TabularSoftmax => self.linear_logits(obs, out),
            PolicyKind::Mlp { hidden } => {
                mlp::forward(
                    &self.params,
                    obs.len(),
                    hidden,
                    self.action_count,
                    obs,
                    out,
                    None,
                );
            }
        }
        softmax_in_place(out);
    }

    fn linear_logits(&self, obs: &[f64], out: &mut [f64]) {
        let a = self.action_count;
        out.fill(0.0);
        for (j, &x) in obs.iter().enumerate() {
            if x != 0.0 {
                for (o, w) in out.iter_mut().zip(&self.params[j * a..(j + 1) * a]) {
                    *o += x * w;
                }
            }
        }
    }

    pub fn log_prob(&self, obs: &[f64], action: usize) -> f64 {
        let mut p = vec![0.0; self.action_count];
        self.probs_into(obs, &mut p);
        safe_ln(p[action])
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> usize {
        let mut p = vec![0.0; self.action_count];
        self.sample_into(obs, &mut p, rng)
    }

    /// Samples an action, leaving the distribution in `probs`.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        probs: &mut [f64],
        rng: &mut R,
    ) -> usize {
        self.probs_into(obs, probs);
        sample_index(probs, rng)
    }

    /// Accumulates `scale * J^T dlogits` into `grad`, where `J` is the
    /// Jacobian of the logits with respect to the parameters. No-op for fixed
    /// policies.
    pub fn backprop_logits(&self, obs: &[f64], dlogits: &[f64], scale: f64, grad: &mut [f64]) {
        match self.kind {
            PolicyKind::Fixed => {}
            PolicyKind::TabularSoftmax => {
                let a = self.action_count;
                for (j, &x) in obs.iter().enumerate() {
                    if x != 0.0 {
                        for (g, d) in grad[j * a..(j + 1) * a].iter_mut().zip(dlogits) {
                            *g += scale * x * d;
                        }
                    }
                }
            }
            PolicyKind::Mlp { hidden } => {
                mlp::backward(
                    &self.params,
                    obs.len(),
                    hidden,
                    self.action_count,
                    obs,
                    dlogits,
                    scale,
                    grad,
                );
            }
        }
    }

    /// Accumulates `scale * grad log pi(action | obs)`.
    pub fn accumulate_log_prob_grad(
        &self,
        obs: &[f64],
        action: usize,
        scale: f64,
        grad: &mut [f64],
    ) {
        let mut d = vec![0.0; self.action_count];
        self.probs_into(obs, &mut d);
        for x in &mut d {
            *x = -*x;
        }
        d[action] += 1.0;
        self.backprop_logits(obs, &d, scale, grad);
    }

    /// Gradient of `log pi(action | obs)` with respect to the parameters.
    pub fn log_prob_grad(&self, obs: &[f64], action: usize) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        if action >= self.action_count {
            return Err(Error::InvalidArgument(format!(
                "action {action} out of range"
            )));
        }
        let mut g = vec![0.0; self.params.len()];
        self.accumulate_log_prob_grad(obs, action, 1.0, &mut g);
        Ok(g)
    }

    /// Accumulates `scale * sum_x w_x grad pi(x | obs)`.
    pub fn accumulate_prob_vjp(&self, obs: &[f64], weights: &[f64], scale: f64, grad: &mut [f64]) {
        let mut p = vec![0.0; self.action_count];
        self.probs_into(obs, &mut p);
        let mean: f64 = p.iter().zip(weights).map(|(p, w)| p * w).sum();
        let d: Vec<f64> = p.iter().zip(weights).map(|(p, w)| p * (w - mean)).collect();
        self.backprop_logits(obs, &d, scale, grad);
    }

    /// Accumulates `scale * grad H(pi(. | obs))` (entropy in nats).
    pub fn accumulate_entropy_grad(&self, obs: &[f64], scale: f64, grad: &mut [f64]) {
        let mut p = vec![0.0; self.action_count];
        self.probs_into(obs, &mut p);
        let h = entropy_of(&p);
        // dH/dz_b = -p_b (log p_b + H)
        let d: Vec<f64> = p.iter().map(|&pb| -pb * (safe_ln(pb) + h)).collect();
        self.backprop_logits(obs, &d, scale, grad);
    }
}

pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in z.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in z.iter_mut() {
        *x /= total;
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Observation coordinates to zero out.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMask {
    zeroed: Vec<usize>,
}

impl ObservationMask {
    pub fn new(mut zeroed: Vec<usize>, obs_dim: usize) -> Result<Self> {
        zeroed.sort_unstable();
        zeroed.dedup();
        if let Some(&i) = zeroed.last() {
            if i >= obs_dim {
                return Err(Error::InvalidArgument(format!(
                    "mask coordinate {i} outside observation of length {obs_dim}"
                )));
            }
        }
        Ok(Self { zeroed })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn full(obs_dim: usize) -> Self {
        Self {
            zeroed: (0..obs_dim).collect(),
        }
    }

    /// Every state coordinate; the imitator block is left alone.
    pub fn state_block(layout: &ObsLayout) -> Self {
        Self {
            zeroed: (0..layout.state_dim).collect(),
        }
    }

    /// The coordinates describing the victim. With a one-hot encoding the
    /// victim cannot be separated from the state, so the whole state block is
    /// masked.
    pub fn victim_block(game: &MarkovGame, layout: &ObsLayout) -> Result<Self> {
        layout.check(game)?;
        Ok(match layout.encoding {
            Encoding::OneHot => Self::state_block(layout),
            Encoding::Factored => Self {
                zeroed: game
                    .factored()
                    .expect("checked")
                    .victim_block
                    .clone()
                    .collect(),
            },
        })
    }

    pub fn coordinates(&self) -> &[usize] {
        &self.zeroed
    }
}

pub fn blind(obs: &[f64], mask: &ObservationMask) -> Vec<f64> {
    let mut out = obs.to_vec();
    blind_in_place(&mut out, mask);
    out
}

pub fn blind_in_place(obs: &mut [f64], mask: &ObservationMask) {
    for &i in &mask.zeroed {
        obs[i] = 0.0;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixGranularity {
    #[default]
    Episode,
    Step,
}

/// Random mixture of two same-shaped agents. With episode granularity one of
/// them is drawn at the start of each episode and acts throughout.
#[derive(Clone, Debug)]
pub struct Mixture<T> {
    pub new: T,
    pub base: T,
    pub p_new: f64,
    pub granularity: MixGranularity,
}

impl<T> Mixture<T> {
    /// True when the draw picks `new`. `p_new = 0` never picks it and
    /// `p_new = 1` always does.
    pub fn picks_new<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        rng.random::<f64>() < self.p_new
    }

    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> &T {
        if self.picks_new(rng) {
            &self.new
        } else {
            &self.base
        }
    }
}

pub fn mix_policies(new: Policy, base: Policy, p_new: f64) -> Result<Mixture<Policy>> {
    if !(0.0..=1.0).contains(&p_new) {
        return Err(Error::ParamOutOfRange {
            name: "p_new",
            value: p_new.to_string(),
            range: "0 <= p_new <= 1",
        });
    }
    if new.action_count != base.action_count {
        return Err(Error::IncompatibleActions(
            new.action_count,
            base.action_count,
        ));
    }
    Ok(Mixture {
        new,
        base,
        p_new,
        granularity: MixGranularity::Episode,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::game::{make_env, EnvSpec};
    use crate::seeding;

    fn rps() -> MarkovGame {
        make_env(&EnvSpec::markov_rps()).unwrap()
    }

    fn onehot(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn zero_logits_are_uniform() {
        let g = rps();
        let p = Policy::tabular(ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap(), 3);
        for x in p.action_dist(&onehot(4, 0)).unwrap() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let m = Policy::from_parts(
            PolicyKind::Mlp { hidden: 32 },
            p.layout().clone(),
            3,
            vec![0.0; mlp::param_count(4, 32, 3)],
        )
        .unwrap();
        for x in m.action_dist(&onehot(4, 2)).unwrap() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn peaked_logits() {
        let g = rps();
        let mut p = Policy::tabular(ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap(), 3);
        p.params_mut()[0] = 10.0;
        let d = p.action_dist(&onehot(4, 0)).unwrap();
        let z = 10f64.exp() + 2.0;
        assert_abs_diff_eq!(d[0], 10f64.exp() / z, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 1.0 / z, epsilon = 1e-15);
        assert!((d[0] - 0.99991).abs() < 1e-5 && (d[1] - 0.000045).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = rps();
        let p = Policy::tabular(ObsLayout::for_game(&g, Encoding::OneHot, 3).unwrap(), 3);
        assert!(matches!(
            p.action_dist(&[1.0, 0.0]),
            Err(Error::DimensionMismatch {
                expected: 7,
                got: 2
            })
        ));
    }

    #[test]
    fn uniform_score_block() {
        let g = rps();
        let p = Policy::tabular(ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap(), 3);
        let grad = p.log_prob_grad(&onehot(4, 1), 0).unwrap();
        let block = &grad[3..6];
        assert_abs_diff_eq!(block[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(block[1], -1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(block[2], -1.0 / 3.0, epsilon = 1e-15);
        assert!(grad[..3].iter().chain(&grad[6..]).all(|&x| x == 0.0));
    }

    #[test]
    fn fixed_policy_lookup_and_blind_fallback() {
        let g = rps();
        let p = Policy::deterministic(&g, &[2, 0, 0, 0], 3).unwrap();
        assert_eq!(p.state_dist(&g, 0).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(p.action_dist(&[0.0; 4]).unwrap(), vec![1.0 / 3.0; 3]);
        assert!(!p.is_trainable());
        assert!(Policy::fixed(&g, 3, vec![0.5; 12]).is_err());
    }

    #[test]
    fn grid_pass_victim_block_mask() {
        let g = make_env(&EnvSpec::grid_pass(4, 3)).unwrap();
        let layout = ObsLayout::for_game(&g, Encoding::Factored, 4).unwrap();
        let mask = ObservationMask::victim_block(&g, &layout).unwrap();
        let s = g.initial_state();
        let obs = layout.observe(&g, s, ImitSignal::Action(2));
        let blinded = blind(&obs, &mask);
        let f = g.factored().unwrap();
        for i in 0..layout.dim() {
            if f.victim_block.contains(&i) {
                assert_eq!(blinded[i], 0.0);
            } else {
                assert_eq!(blinded[i], obs[i], "coordinate {i} changed");
            }
        }
        // Own position (x = 3, y = 1) survives.
        assert_eq!(blinded[6 + 3], 1.0);
        assert_eq!(blinded[10 + 1], 1.0);
        assert_eq!(blinded[layout.state_dim + 2], 1.0);
    }

    #[test]
    fn empty_and_full_masks() {
        let obs = vec![0.3, -1.0, 2.0];
        assert_eq!(blind(&obs, &ObservationMask::empty()), obs);
        assert_eq!(blind(&obs, &ObservationMask::full(3)), vec![0.0; 3]);
        assert!(ObservationMask::new(vec![3], 3).is_err());
    }

    #[test]
    fn mixture_selection() {
        let g = rps();
        let l = ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap();
        let mut rng = seeding::rng(4, &[]);
        let a = Policy::random_tabular(l.clone(), 3, 1.0, &mut rng);
        let b = Policy::random_tabular(l.clone(), 3, 1.0, &mut rng);
        let m = mix_policies(a.clone(), b.clone(), 0.5).unwrap();
        let n = 10_000;
        let hits = (0..n).filter(|_| m.picks_new(&mut rng)).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);
        let always = mix_policies(a.clone(), b.clone(), 1.0).unwrap();
        let never = mix_policies(a.clone(), b.clone(), 0.0).unwrap();
        for _ in 0..1000 {
            assert_eq!(always.select(&mut rng), &a);
            assert_eq!(never.select(&mut rng), &b);
        }
        let four = Policy::tabular(l, 4);
        assert!(matches!(
            mix_policies(a, four, 0.5),
            Err(Error::IncompatibleActions(3, 4))
        ));
    }

    #[test]
    fn json_round_trip() {
        let g = rps();
        let mut rng = seeding::rng(8, &[]);
        let p = Policy::mlp(
            ObsLayout::for_game(&g, Encoding::OneHot, 3).unwrap(),
            3,
            MLP_HIDDEN,
            &mut rng,
        );
        let back: Policy = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(back
            .params()
            .iter()
            .zip(p.params())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
