use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::report::BoundReport;
use super::{joint, solve_values};
use crate::error::{Error, Result};
use crate::game::{AdversaryAgent, MarkovGame};
use crate::policy::{kl, safe_ln, Encoding, ObsLayout, Policy, PolicyKind};

/// Constant relating the L1 distance of two distributions to their KL
/// divergence (in nats).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pinsker {
    /// `sqrt(2 ln 2 * KL)`, the constant the bound formulas are stated with.
    #[default]
    Ln2,
    /// `sqrt(2 * KL)`, Pinsker's inequality for KL in nats.
    Nats,
}

impl Pinsker {
    pub fn factor(self) -> f64 {
        match self {
            Pinsker::Ln2 => (2.0 * std::f64::consts::LN_2).sqrt(),
            Pinsker::Nats => std::f64::consts::SQRT_2,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Pinsker::Ln2 => "ln2",
            Pinsker::Nats => "nats",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SensitivityReports {
    pub kl: BoundReport,
    pub lipschitz: BoundReport,
}

/// Sensitivity of the victim's initial-state value to a change of adversary.
///
/// `measured = |Gamma(b) - Gamma(a)|`. The KL bound is
/// `gamma H c / (1 - gamma) * max_s sqrt(KL(a(.|s) || b(.|s)))` and the
/// Lipschitz bound `gamma H / (1 - gamma) * max_s |a(.|s) - b(.|s)|_1`, with
/// `H = max_s |V_vic(s)|` under the first adversary and `c` the Pinsker
/// constant. Maxima run over non-absorbing states.
pub fn sensitivity_check(
    game: &MarkovGame,
    victim: &Policy,
    adv_a: &AdversaryAgent,
    adv_b: &AdversaryAgent,
    pinsker: Pinsker,
) -> Result<SensitivityReports> {
    let ja = joint(game, adv_a, victim)?;
    let jb = joint(game, adv_b, victim)?;
    let va = solve_values(game, &ja.kernel, game.vic_reward())?;
    let vb = solve_values(game, &jb.kernel, game.vic_reward())?;
    let s0 = game.initial_state();
    let measured = (vb.values[s0] - va.values[s0]).abs();
    let h = va.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let na = ja.n_adv;
    let (mut max_kl, mut max_l1) = (0.0f64, 0.0f64);
    for s in game.live_states() {
        let (pa, pb) = (&ja.adv[s * na..(s + 1) * na], &jb.adv[s * na..(s + 1) * na]);
        max_kl = max_kl.max(kl(pa, pb));
        max_l1 = max_l1.max(pa.iter().zip(pb).map(|(x, y)| (x - y).abs()).sum());
    }
    let gamma = game.discount();
    let lead = gamma * h / (1.0 - gamma);
    let kl_bound = if max_kl.is_infinite() {
        f64::INFINITY
    } else {
        lead * pinsker.factor() * max_kl.sqrt()
    };
    let context = |r: BoundReport| {
        r.with("gamma", gamma)
            .with("h", h)
            .with("h_policy", "first")
            .with(
                "max_kl",
                if max_kl.is_finite() {
                    max_kl.into()
                } else {
                    serde_json::Value::from("inf")
                },
            )
            .with("max_l1", max_l1)
    };
    Ok(SensitivityReports {
        kl: context(BoundReport::new("sensitivity_kl", measured, kl_bound))
            .with("pinsker", pinsker.label()),
        lipschitz: context(BoundReport::new("sensitivity_l1", measured, lead * max_l1)),
    })
}

fn check_clamp(gamma: f64, max_vic_reward: f64, d_lo: f64, d_hi: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::ParamOutOfRange {
            name: "gamma",
            value: gamma.to_string(),
            range: "0 <= gamma < 1",
        });
    }
    if !(d_lo > 0.0 && d_lo <= d_hi && d_hi < 1.0) {
        return Err(Error::ParamOutOfRange {
            name: "clamp",
            value: format!("({d_lo}, {d_hi})"),
            range: "0 < lower <= upper < 1",
        });
    }
    if !max_vic_reward.is_finite() {
        return Err(Error::InvalidArgument(
            "max victim reward must be finite".into(),
        ));
    }
    Ok(())
}

/// `K = gamma sqrt(2 ln 2) (max r_vic - ln(D_lo (1 - D_hi))) / (1 - gamma)^2`,
/// with the log taken as `ln D_lo + ln(1 - D_hi)`.
pub fn imitation_constant(gamma: f64, max_vic_reward: f64, d_lo: f64, d_hi: f64) -> Result<f64> {
    check_clamp(gamma, max_vic_reward, d_lo, d_hi)?;
    let log_term = d_lo.ln() + (-d_hi).ln_1p();
    Ok(gamma * Pinsker::Ln2.factor() * (max_vic_reward - log_term) / (1.0 - gamma).powi(2))
}

/// Same constant with the log argument multiplied out, `ln(D_lo - D_lo D_hi)`.
pub fn imitation_constant_expanded(
    gamma: f64,
    max_vic_reward: f64,
    d_lo: f64,
    d_hi: f64,
) -> Result<f64> {
    check_clamp(gamma, max_vic_reward, d_lo, d_hi)?;
    Ok(
        gamma * Pinsker::Ln2.factor() * (max_vic_reward - (d_lo - d_lo * d_hi).ln())
            / (1.0 - gamma).powi(2),
    )
}

/// Exact best response of the adversary against a fixed victim for a state
/// reward, by policy iteration over deterministic policies. Returns the
/// value at the initial state and the chosen action per state.
pub fn best_response(
    game: &MarkovGame,
    victim: &Policy,
    reward: &[f64],
) -> Result<(f64, Vec<usize>)> {
    if victim.action_count() != game.n_vic_actions() {
        return Err(Error::IncompatibleActions(
            victim.action_count(),
            game.n_vic_actions(),
        ));
    }
    let vic = victim.state_table(game)?;
    let (n, na, nv) = (game.n_states(), game.n_adv_actions(), game.n_vic_actions());
    let gamma = game.discount();
    let lookahead = |v: &[f64], s: usize, a: usize| -> f64 {
        (0..nv)
            .map(|b| {
                let pb = vic[s * nv + b];
                if pb == 0.0 {
                    0.0
                } else {
                    pb * game
                        .transition(s, a, b)
                        .iter()
                        .map(|&(t, p)| p * v[t])
                        .sum::<f64>()
                }
            })
            .sum()
    };
    let mut choice = vec![0usize; n];
    for _ in 0..10_000 {
        let kernel: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|s| {
                if game.is_absorbing(s) {
                    return vec![(s, 1.0)];
                }
                let mut row: Vec<(usize, f64)> = Vec::new();
                for b in 0..nv {
                    let pb = vic[s * nv + b];
                    if pb == 0.0 {
                        continue;
                    }
                    for &(t, p) in game.transition(s, choice[s], b) {
                        match row.iter_mut().find(|e| e.0 == t) {
                            Some(e) => e.1 += pb * p,
                            None => row.push((t, pb * p)),
                        }
                    }
                }
                row
            })
            .collect();
        let values = solve_values(game, &kernel, reward)?;
        let v = &values.values;
        let mut changed = false;
        for s in game.live_states() {
            let current = lookahead(v, s, choice[s]);
            let (best_a, best_q) =
                (0..na)
                    .map(|a| (a, lookahead(v, s, a)))
                    .fold(
                        (choice[s], current),
                        |acc, x| if x.1 > acc.1 { x } else { acc },
                    );
            if gamma > 0.0 && best_q > current + 1e-12 * (1.0 + current.abs()) {
                choice[s] = best_a;
                changed = true;
            }
        }
        if !changed {
            return Ok((v[game.initial_state()], choice));
        }
    }
    Err(Error::NonConvergence {
        iterations: 10_000,
        residual: f64::NAN,
    })
}

const PROBE_ATTEMPTS: usize = 500;

/// Draws a tabular victim with `max_s KL(victim0(.|s) || sample(.|s)) <= eps`
/// by perturbing log-probabilities with Gaussian noise, shrinking the noise
/// after each rejection.
fn perturbed_victim<R: Rng + ?Sized>(
    game: &MarkovGame,
    base: &[f64],
    eps: f64,
    rng: &mut R,
) -> Result<(Policy, f64)> {
    let nv = game.n_vic_actions();
    let layout = ObsLayout::for_game(game, Encoding::OneHot, 0)?;
    let base_logits: Vec<f64> = base.iter().map(|&p| safe_ln(p)).collect();
    let mut sigma = 2.0 * eps.sqrt();
    for _ in 0..PROBE_ATTEMPTS {
        let logits: Vec<f64> = base_logits
            .iter()
            .map(|&z| {
                let xi: f64 = StandardNormal.sample(rng);
                z + sigma * xi
            })
            .collect();
        let cand = Policy::from_parts(PolicyKind::TabularSoftmax, layout.clone(), nv, logits)?;
        let table = cand.state_table(game)?;
        let worst = game
            .live_states()
            .map(|s| kl(&base[s * nv..(s + 1) * nv], &table[s * nv..(s + 1) * nv]))
            .fold(0.0, f64::max);
        if worst <= eps {
            return Ok((cand, worst));
        }
        sigma *= 0.8;
    }
    Err(Error::SamplingStalled(PROBE_ATTEMPTS))
}

/// Robustness probe for victims within KL radius `eps` of `victim0`.
///
/// `Y*` is the best-response value of the differentiated reward
/// `r_adv - r_vic` against `victim0`. Sampled victims inside the KL ball give
/// best-response values `L_i`; `Y_est = min(Y*, min_i L_i)`. Because the
/// samples only cover part of the ball, `Y_est` over-estimates the true
/// worst case, so a pass is a necessary condition rather than a proof. The
/// report also records the largest single-sample gap.
pub fn robustness_probe<R: Rng + ?Sized>(
    game: &MarkovGame,
    victim0: &Policy,
    eps: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be nonnegative, got {eps}"
        )));
    }
    let delta: Vec<f64> = game
        .adv_reward()
        .iter()
        .zip(game.vic_reward())
        .map(|(a, v)| a - v)
        .collect();
    let (y_star, _) = best_response(game, victim0, &delta)?;
    let base = victim0.state_table(game)?;
    let mut y_est = y_star;
    let mut max_gap = 0.0f64;
    let mut max_kl = 0.0f64;
    if eps > 0.0 {
        for _ in 0..n_samples {
            let (victim, worst) = perturbed_victim(game, &base, eps, rng)?;
            let (value, _) = best_response(game, &victim, &delta)?;
            y_est = y_est.min(value);
            max_gap = max_gap.max((value - y_star).abs());
            max_kl = max_kl.max(worst);
        }
    }
    let gamma = game.discount();
    let max_delta = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let bound = gamma * Pinsker::Ln2.factor() * max_delta / (1.0 - gamma).powi(2) * eps.sqrt();
    Ok(
        BoundReport::new("robustness", (y_est - y_star).abs(), bound)
            .with("epsilon", eps)
            .with("samples", n_samples)
            .with("y_star", y_star)
            .with("y_est", y_est)
            .with("max_sample_gap", max_gap)
            .with("max_sample_kl", max_kl)
            .with(
                "all_samples_within_bound",
                max_gap <= bound + super::report::MARGIN_TOL,
            ),
    )
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::game::{make_env, EnvSpec};
    use crate::seeding;

    #[test]
    fn imitation_constant_reference_values() {
        assert_eq!(imitation_constant(0.0, 1.0, 0.1, 0.9).unwrap(), 0.0);
        let k = imitation_constant(0.9, 1.0, 0.1, 0.9).unwrap();
        let by_hand = 0.9 * (2.0 * 2f64.ln()).sqrt() * (1.0 - 0.01f64.ln()) / 0.01;
        assert_abs_diff_eq!(k, by_hand, epsilon = 1e-9);
        assert!((k - 594.0).abs() < 0.1);
        assert_abs_diff_eq!(
            k,
            imitation_constant_expanded(0.9, 1.0, 0.1, 0.9).unwrap(),
            epsilon = 1e-9
        );
        assert!(imitation_constant(0.9, 1.0, 0.0, 0.9).is_err());
        assert!(imitation_constant(0.9, 1.0, 0.5, 0.4).is_err());
        assert!(imitation_constant(1.0, 1.0, 0.1, 0.9).is_err());
    }

    #[test]
    fn imitation_constant_decreasing_in_lower_clamp() {
        let mut rng = seeding::rng(1, &[]);
        for _ in 0..200 {
            let g = rng.random_range(0.01..0.99);
            let r = rng.random_range(-2.0..2.0);
            let hi = rng.random_range(0.5..0.99);
            let lo = rng.random_range(0.001..hi);
            let lo2 = rng.random_range(lo..=hi);
            if lo2 > lo {
                assert!(
                    imitation_constant(g, r, lo2, hi).unwrap()
                        < imitation_constant(g, r, lo, hi).unwrap()
                );
            }
        }
    }

    #[test]
    fn sensitivity_identical_policies() {
        let g = make_env(&EnvSpec::markov_rps()).unwrap();
        let mut rng = seeding::rng(2, &[]);
        let l = ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap();
        let a = Policy::random_tabular(l.clone(), 3, 1.0, &mut rng);
        let v = Policy::random_tabular(l, 3, 1.0, &mut rng);
        let r = sensitivity_check(
            &g,
            &v,
            &AdversaryAgent::new(&a),
            &AdversaryAgent::new(&a),
            Pinsker::Ln2,
        )
        .unwrap();
        assert_eq!((r.kl.measured, r.kl.bound), (0.0, 0.0));
        assert!(r.kl.passed && r.lipschitz.passed);
    }

    #[test]
    fn sensitivity_bound_arithmetic() {
        // gamma = 0.9, H = 10, max KL = 0.04
        let bound = 0.9 * 10.0 * Pinsker::Ln2.factor() / 0.1 * 0.04f64.sqrt();
        assert!((bound - 21.19).abs() < 0.01, "{bound}");
    }

    #[test]
    fn sensitivity_support_violation_is_degenerate() {
        let g = make_env(&EnvSpec::markov_rps()).unwrap();
        let v = Policy::tabular(ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap(), 3);
        let rock = Policy::deterministic(&g, &[0; 4], 3).unwrap();
        let mixed = Policy::fixed(&g, 3, [0.5, 0.5, 0.0].repeat(4)).unwrap();
        let r = sensitivity_check(
            &g,
            &v,
            &AdversaryAgent::new(&mixed),
            &AdversaryAgent::new(&rock),
            Pinsker::Ln2,
        )
        .unwrap();
        assert!(r.kl.degenerate && r.kl.passed && r.kl.bound.is_infinite());
        assert!(!r.lipschitz.degenerate);
    }

    #[test]
    fn best_response_in_rps() {
        let g = make_env(&EnvSpec::markov_rps()).unwrap();
        let rock = Policy::deterministic(&g, &[0; 4], 3).unwrap();
        let delta: Vec<f64> = g
            .adv_reward()
            .iter()
            .zip(g.vic_reward())
            .map(|(a, v)| a - v)
            .collect();
        let (value, choice) = best_response(&g, &rock, &delta).unwrap();
        assert_eq!(choice[0], 1);
        assert_abs_diff_eq!(value, 0.9 * 2.0 / 0.1, epsilon = 1e-9);
    }

    #[test]
    fn robustness_trivial_cases() {
        let g = make_env(&EnvSpec::markov_rps()).unwrap();
        let mut rng = seeding::rng(3, &[]);
        let v = Policy::random_tabular(
            ObsLayout::for_game(&g, Encoding::OneHot, 0).unwrap(),
            3,
            0.5,
            &mut rng,
        );
        let r = robustness_probe(&g, &v, 0.0, 10, &mut rng).unwrap();
        assert_eq!((r.measured, r.bound), (0.0, 0.0));
        assert!(r.passed);

        let myopic = g.clone().with_discount(0.0).unwrap();
        let r = robustness_probe(&myopic, &v, 0.05, 20, &mut rng).unwrap();
        assert_eq!(r.bound, 0.0);
        assert!(r.measured.abs() <= 1e-12 && r.passed);
        assert!(robustness_probe(&g, &v, -1.0, 1, &mut rng).is_err());
    }
}
