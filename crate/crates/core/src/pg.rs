//! Sample-based policy-gradient steps shared by the imitator, the adversary
//! and victim retraining.
//!
//! Returns are discounted from the start of the episode: step `t` of an
//! episode carries weight `gamma^t`, matching the exact objective.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgMethod {
    Reinforce,
    #[default]
    PpoClip,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnForm {
    /// Every step is weighted by the whole episode's return.
    FullTrajectory,
    /// Step `t` is weighted by the return collected from step `t` on.
    #[default]
    RewardToGo,
    /// Step `t` is weighted by its own reward only: the action reward and
    /// the discounted reward of the state it leads to.
    Immediate,
}

/// Identifies the parameter snapshot a batch was collected under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchTag {
    pub cycle: u64,
    pub params_hash: u64,
}

impl BatchTag {
    pub fn of(policy: &Policy, cycle: u64) -> Self {
        Self {
            cycle,
            params_hash: policy.fingerprint(),
        }
    }
}

/// One decision of an episode.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub obs: Vec<f64>,
    pub action: usize,
    pub behaviour_logp: f64,
    /// Reward attached to the action itself.
    pub action_reward: f64,
    /// State reward of the state reached by this step.
    pub next_state_reward: f64,
}

#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    /// State reward of the initial state.
    pub initial_reward: f64,
    pub steps: Vec<StepRecord>,
    /// Whether the final state is absorbing (its reward then repeats forever).
    pub absorbing: bool,
}

impl EpisodeRecord {
    /// Per-step returns under the given form.
    pub fn returns(&self, gamma: f64, form: ReturnForm) -> Vec<f64> {
        let n = self.steps.len();
        let weights: Vec<f64> = (0..=n).map(|t| gamma.powi(t as i32)).collect();
        let tail = match self.steps.last() {
            Some(last) if self.absorbing => {
                weights[n] * gamma * last.next_state_reward / (1.0 - gamma)
            }
            None if self.absorbing => gamma * self.initial_reward / (1.0 - gamma),
            _ => 0.0,
        };
        // rtg[t] = sum_{k>=t} gamma^k (rho_k + gamma c(s_{k+1})) + tail
        let mut rtg = vec![0.0; n];
        let mut acc = tail;
        for t in (0..n).rev() {
            let s = &self.steps[t];
            acc += weights[t] * (s.action_reward + gamma * s.next_state_reward);
            rtg[t] = acc;
        }
        match form {
            ReturnForm::RewardToGo => rtg,
            ReturnForm::Immediate => self
                .steps
                .iter()
                .enumerate()
                .map(|(t, s)| weights[t] * (s.action_reward + gamma * s.next_state_reward))
                .collect(),
            ReturnForm::FullTrajectory => {
                let total = self.initial_reward + rtg.first().copied().unwrap_or(tail);
                vec![total; n]
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct PgSample {
    pub obs: Vec<f64>,
    pub action: usize,
    pub ret: f64,
    pub behaviour_logp: f64,
    /// `gamma^t` for the step.
    pub discount: f64,
}

#[derive(Clone, Debug)]
pub struct PgBatch {
    pub tag: BatchTag,
    pub samples: Vec<PgSample>,
    pub episodes: usize,
}

impl PgBatch {
    pub fn from_episodes(
        tag: BatchTag,
        episodes: Vec<EpisodeRecord>,
        gamma: f64,
        form: ReturnForm,
    ) -> Self {
        let n = episodes.len();
        let mut samples = Vec::new();
        for ep in episodes {
            let rets = ep.returns(gamma, form);
            let mut w = 1.0;
            for (step, ret) in ep.steps.into_iter().zip(rets) {
                samples.push(PgSample {
                    obs: step.obs,
                    action: step.action,
                    ret,
                    behaviour_logp: step.behaviour_logp,
                    discount: w,
                });
                w *= gamma;
            }
        }
        Self {
            tag,
            samples,
            episodes: n,
        }
    }
}

/// What is subtracted from each sample's return before the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    /// Mean return of the batch.
    #[default]
    BatchMean,
    /// Leave-one-out mean of the undiscounted-by-`t` return over the other
    /// samples with the same observation, rescaled by the sample's `gamma^t`.
    /// Observations seen once fall back to the leave-one-out batch mean of
    /// the same quantity. It depends on the observation only, so it removes
    /// return variance that the action cannot explain.
    PerObservation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgSettings {
    pub lr: f64,
    pub method: PgMethod,
    pub clip_eps: f64,
    pub entropy_coeff: f64,
    pub baseline: Baseline,
    /// Divide clipped-surrogate advantages by their batch standard deviation.
    pub normalize_advantages: bool,
}

impl Default for PgSettings {
    fn default() -> Self {
        Self {
            lr: 0.05,
            method: PgMethod::PpoClip,
            clip_eps: 0.2,
            entropy_coeff: 0.0,
            baseline: Baseline::BatchMean,
            normalize_advantages: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PgStats {
    pub mean_return: f64,
    pub clipped_fraction: f64,
}

/// Ascent direction of the sampled objective (plus entropy bonus).
///
/// REINFORCE needs a batch collected under exactly these parameters.
/// The clipped surrogate accepts any batch from the current collection
/// cycle, re-weighting by the stored behaviour log-probabilities.
pub fn pg_gradient(
    policy: &Policy,
    batch: &PgBatch,
    settings: &PgSettings,
    cycle: u64,
) -> Result<(Vec<f64>, PgStats)> {
    if batch.samples.is_empty() {
        return Err(Error::EmptyBatch("policy-gradient batch has no steps"));
    }
    if !policy.is_trainable() {
        return Err(Error::InvalidArgument(
            "fixed policy has no trainable parameters".into(),
        ));
    }
    match settings.method {
        PgMethod::Reinforce if batch.tag.params_hash != policy.fingerprint() => {
            return Err(Error::StaleBatch("parameters changed since collection"))
        }
        PgMethod::PpoClip if batch.tag.cycle != cycle => {
            return Err(Error::StaleBatch("batch belongs to an earlier cycle"))
        }
        _ => {}
    }
    let n = batch.samples.len() as f64;
    let mean = batch.samples.iter().map(|s| s.ret).sum::<f64>() / n;
    let mut adv: Vec<f64> = match settings.baseline {
        Baseline::None => batch.samples.iter().map(|s| s.ret).collect(),
        Baseline::BatchMean => batch.samples.iter().map(|s| s.ret - mean).collect(),
        Baseline::PerObservation => {
            let base = observation_baseline(&batch.samples);
            batch
                .samples
                .iter()
                .zip(base)
                .map(|(s, b)| s.ret - b)
                .collect()
        }
    };

    let mut grad = vec![0.0; policy.num_params()];
    let mut probs = vec![0.0; policy.action_count()];
    let mut clipped = 0usize;
    match settings.method {
        PgMethod::Reinforce => {
            let scale = 1.0 / batch.episodes.max(1) as f64;
            for (s, a) in batch.samples.iter().zip(&adv) {
                if *a != 0.0 {
                    policy.accumulate_log_prob_grad(&s.obs, s.action, scale * a, &mut grad);
                }
                if settings.entropy_coeff != 0.0 {
                    policy.accumulate_entropy_grad(
                        &s.obs,
                        scale * settings.entropy_coeff * s.discount,
                        &mut grad,
                    );
                }
            }
        }
        PgMethod::PpoClip => {
            if settings.normalize_advantages {
                let var = adv.iter().map(|a| a * a).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    adv.iter_mut().for_each(|a| *a /= sd);
                }
            }
            let scale = 1.0 / n;
            for (s, &a) in batch.samples.iter().zip(&adv) {
                policy.probs_into(&s.obs, &mut probs);
                let ratio = (crate::policy::safe_ln(probs[s.action]) - s.behaviour_logp).exp();
                let eps = settings.clip_eps;
                // Gradient of min(ratio a, clip(ratio) a) is zero once the
                // clip binds in the direction of improvement.
                let active = !((a > 0.0 && ratio > 1.0 + eps) || (a < 0.0 && ratio < 1.0 - eps));
                if active {
                    if a != 0.0 {
                        let mut d: Vec<f64> = probs.iter().map(|p| -p).collect();
                        d[s.action] += 1.0;
                        policy.backprop_logits(&s.obs, &d, scale * a * ratio, &mut grad);
                    }
                } else {
                    clipped += 1;
                }
                if settings.entropy_coeff != 0.0 {
                    policy.accumulate_entropy_grad(
                        &s.obs,
                        scale * settings.entropy_coeff * s.discount,
                        &mut grad,
                    );
                }
            }
        }
    }
    Ok((
        grad,
        PgStats {
            mean_return: mean,
            clipped_fraction: clipped as f64 / n,
        },
    ))
}

fn observation_baseline(samples: &[PgSample]) -> Vec<f64> {
    let scaled = |s: &PgSample| {
        if s.discount > 0.0 {
            s.ret / s.discount
        } else {
            0.0
        }
    };
    let mut groups: HashMap<Vec<u64>, (f64, usize)> = HashMap::new();
    let (mut total, n) = (0.0, samples.len());
    for s in samples {
        let key: Vec<u64> = s.obs.iter().map(|x| x.to_bits()).collect();
        let g = groups.entry(key).or_insert((0.0, 0));
        g.0 += scaled(s);
        g.1 += 1;
        total += scaled(s);
    }
    samples
        .iter()
        .map(|s| {
            let key: Vec<u64> = s.obs.iter().map(|x| x.to_bits()).collect();
            let (sum, count) = groups[&key];
            let own = scaled(s);
            let b = if count > 1 {
                (sum - own) / (count - 1) as f64
            } else if n > 1 {
                (total - own) / (n - 1) as f64
            } else {
                0.0
            };
            b * s.discount
        })
        .collect()
}

/// One ascent step; returns the updated copy.
pub fn pg_step(
    policy: &Policy,
    batch: &PgBatch,
    settings: &PgSettings,
    cycle: u64,
) -> Result<(Policy, PgStats)> {
    let (grad, stats) = pg_gradient(policy, batch, settings, cycle)?;
    let mut next = policy.clone();
    for (w, g) in next.params_mut().iter_mut().zip(&grad) {
        *w += settings.lr * g;
    }
    Ok((next, stats))
}

/// Probability ratios `pi_new(a|o) / pi_behaviour(a|o)` over a batch.
pub fn ratios(policy: &Policy, batch: &PgBatch) -> Vec<f64> {
    let mut p = vec![0.0; policy.action_count()];
    batch
        .samples
        .iter()
        .map(|s| {
            policy.probs_into(&s.obs, &mut p);
            (crate::policy::safe_ln(p[s.action]) - s.behaviour_logp).exp()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn step(rho: f64, c_next: f64) -> StepRecord {
        StepRecord {
            obs: vec![1.0],
            action: 0,
            behaviour_logp: 0.0,
            action_reward: rho,
            next_state_reward: c_next,
        }
    }

    #[test]
    fn returns_by_hand() {
        let g: f64 = 0.9;
        let ep = EpisodeRecord {
            initial_reward: 0.5,
            steps: vec![step(1.0, 2.0), step(-1.0, 3.0)],
            absorbing: true,
        };
        // full = c0 + rho0 + g c1 + g rho1 + g^2 c2 + g^3 c2 / (1 - g)
        let full = 0.5 + 1.0 + g * 2.0 - g + g * g * 3.0 + g.powi(3) * 3.0 / (1.0 - g);
        let rtg = ep.returns(g, ReturnForm::RewardToGo);
        assert_abs_diff_eq!(rtg[0], full - 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            rtg[1],
            -g + g * g * 3.0 + g.powi(3) * 3.0 / (1.0 - g),
            epsilon = 1e-12
        );
        let f = ep.returns(g, ReturnForm::FullTrajectory);
        assert_abs_diff_eq!(f[0], full, epsilon = 1e-12);
        assert_eq!(f[0], f[1]);
        let imm = ep.returns(g, ReturnForm::Immediate);
        assert_abs_diff_eq!(imm[0], 1.0 + g * 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(imm[1], g * (-1.0 + g * 3.0), epsilon = 1e-12);

        let timeout = EpisodeRecord {
            absorbing: false,
            ..ep
        };
        let f = timeout.returns(g, ReturnForm::FullTrajectory);
        assert_abs_diff_eq!(f[0], 0.5 + 1.0 + g * 2.0 - g + g * g * 3.0, epsilon = 1e-12);
    }

    #[test]
    fn observation_baseline_is_leave_one_out() {
        let sample = |obs: f64, ret: f64, discount: f64| PgSample {
            obs: vec![obs],
            action: 0,
            ret,
            behaviour_logp: 0.0,
            discount,
        };
        let samples = [
            sample(0.0, 1.0, 1.0),
            sample(0.0, 3.0, 1.0),
            sample(0.0, 0.5, 0.5),
            sample(1.0, 4.0, 1.0),
        ];
        let b = observation_baseline(&samples);
        // Group {0,1,2} has scaled returns 1, 3, 1.
        assert_abs_diff_eq!(b[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b[2], 0.5 * 2.0, epsilon = 1e-12);
        // Singleton falls back to the others' mean: (1 + 3 + 1) / 3.
        assert_abs_diff_eq!(b[3], 5.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn myopic_returns() {
        let ep = EpisodeRecord {
            initial_reward: 0.0,
            steps: vec![step(1.0, 2.0), step(5.0, 3.0)],
            absorbing: true,
        };
        assert_eq!(ep.returns(0.0, ReturnForm::RewardToGo), vec![1.0, 0.0]);
    }
}
