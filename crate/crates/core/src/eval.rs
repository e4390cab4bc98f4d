//! Win/tie evaluation and bound-verification sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{rollout, AdversaryAgent, MarkovGame, Outcome};
use crate::oracle::max_advantage_mean;
use crate::oracle::{
    imitation_constant, imitation_constant_expanded, robustness_probe, sensitivity_check,
    BoundReport, Pinsker,
};
use crate::policy::{Encoding, ObsLayout, Policy};
use crate::seeding;

const EVAL_STREAM: u64 = 0xE7A1;
const BOUNDS_STREAM: u64 = 0xB0D5;

/// `1.96 sqrt(p (1 - p) / n)`.
pub fn half_width(p: f64, n: usize) -> f64 {
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinTieReport {
    pub episodes: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    /// Outcome fractions from the adversary's side.
    pub win_rate: f64,
    pub tie_rate: f64,
    pub loss_rate: f64,
    /// Half-width of the normal-approximation 95% interval on `win_rate`.
    pub ci95: f64,
    pub win_tie_rate: f64,
    pub win_tie_ci95: f64,
    pub seed: u64,
    /// Hash of the policies, mask, episode count and seed.
    pub fingerprint: String,
}

impl WinTieReport {
    pub fn from_outcomes(outcomes: &[Outcome], seed: u64, fingerprint: u64) -> Self {
        let n = outcomes.len();
        let count = |o: Outcome| outcomes.iter().filter(|&&x| x == o).count();
        let (wins, ties, losses) = (
            count(Outcome::AdvWin),
            count(Outcome::Tie),
            count(Outcome::VicWin),
        );
        let frac = |k: usize| k as f64 / n as f64;
        let win_tie_rate = frac(wins + ties);
        Self {
            episodes: n,
            wins,
            ties,
            losses,
            win_rate: frac(wins),
            tie_rate: frac(ties),
            loss_rate: frac(losses),
            ci95: half_width(frac(wins), n),
            win_tie_rate,
            win_tie_ci95: half_width(win_tie_rate, n),
            seed,
            fingerprint: format!("{fingerprint:016x}"),
        }
    }

    /// The victim's win-plus-tie rate, i.e. the adversary's loss-plus-tie rate.
    pub fn victim_win_tie_rate(&self) -> f64 {
        (self.losses + self.ties) as f64 / self.episodes as f64
    }
}

/// Half-width of the 95% interval on the difference of two independent
/// rates: `1.96 sqrt(p1 (1 - p1) / n1 + p2 (1 - p2) / n2)`.
pub fn joint_half_width(p1: f64, n1: usize, p2: f64, n2: usize) -> f64 {
    1.96 * (p1 * (1.0 - p1) / n1 as f64 + p2 * (1.0 - p2) / n2 as f64).sqrt()
}

/// Half-width of the 95% interval on the mean of paired differences
/// `a_i - b_i`, from their sample variance.
pub fn paired_half_width(a: &[bool], b: &[bool]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return f64::INFINITY;
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x as u8 as f64 - y as u8 as f64)
        .collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    1.96 * (var / n as f64).sqrt()
}

/// Two agents evaluated on the same episode seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub first: WinTieReport,
    pub second: WinTieReport,
    /// First minus second adversary win-plus-tie rate.
    pub win_tie_diff: f64,
    /// Paired 95% half-width on `win_tie_diff`.
    pub paired_ci95: f64,
    /// Half-width if the two runs were independent samples.
    pub independent_ci95: f64,
}

/// Evaluates both agents on episode seeds `0..episodes`. When the agents
/// differ only in what they observe, random draws stay aligned, so the
/// paired interval is the right one for the difference.
pub fn compare_paired(
    game: &MarkovGame,
    first: &AdversaryAgent,
    second: &AdversaryAgent,
    victim: &Policy,
    episodes: usize,
    seed: u64,
) -> Result<PairedComparison> {
    let a = evaluate_outcomes(game, first, victim, episodes, seed)?;
    let b = evaluate_outcomes(game, second, victim, episodes, seed)?;
    let good = |o: &[Outcome]| {
        o.iter()
            .map(|&x| x != Outcome::VicWin)
            .collect::<Vec<bool>>()
    };
    let first =
        WinTieReport::from_outcomes(&a, seed, eval_fingerprint(first, victim, episodes, seed));
    let second =
        WinTieReport::from_outcomes(&b, seed, eval_fingerprint(second, victim, episodes, seed));
    Ok(PairedComparison {
        win_tie_diff: first.win_tie_rate - second.win_tie_rate,
        paired_ci95: paired_half_width(&good(&a), &good(&b)),
        independent_ci95: joint_half_width(
            first.win_tie_rate,
            episodes,
            second.win_tie_rate,
            episodes,
        ),
        first,
        second,
    })
}

fn eval_fingerprint(agent: &AdversaryAgent, victim: &Policy, episodes: usize, seed: u64) -> u64 {
    let mut parts = vec![
        agent.policy.fingerprint(),
        agent.imitator.map_or(0, |p| p.fingerprint()),
        agent.feed_imitator as u64,
        victim.fingerprint(),
        episodes as u64,
        seed,
    ];
    if let Some(mask) = agent.mask {
        parts.extend(mask.coordinates().iter().map(|&c| c as u64 + 1));
    }
    let bits: Vec<f64> = parts.into_iter().map(f64::from_bits).collect();
    seeding::fingerprint(&bits)
}

fn check_agents(game: &MarkovGame, agent: &AdversaryAgent, victim: &Policy) -> Result<()> {
    agent.policy.layout().check(game)?;
    victim.layout().check(game)?;
    if agent.policy.action_count() != game.n_adv_actions() {
        return Err(Error::IncompatibleActions(
            agent.policy.action_count(),
            game.n_adv_actions(),
        ));
    }
    if victim.action_count() != game.n_vic_actions() {
        return Err(Error::IncompatibleActions(
            victim.action_count(),
            game.n_vic_actions(),
        ));
    }
    if let Some(imit) = agent.imitator {
        imit.layout().check(game)?;
        if imit.action_count() != agent.policy.layout().imit_dim {
            return Err(Error::DimensionMismatch {
                expected: agent.policy.layout().imit_dim,
                got: imit.action_count(),
            });
        }
    }
    Ok(())
}

/// Plays `episodes` seeded episodes without learning. Episode `i` uses its
/// own generator, so the result does not depend on the thread count.
/// A blinding mask on the agent hides state coordinates from the adversary
/// only; the imitator still observes the true state.
pub fn evaluate(
    game: &MarkovGame,
    agent: &AdversaryAgent,
    victim: &Policy,
    episodes: usize,
    seed: u64,
) -> Result<WinTieReport> {
    let outcomes = evaluate_outcomes(game, agent, victim, episodes, seed)?;
    Ok(WinTieReport::from_outcomes(
        &outcomes,
        seed,
        eval_fingerprint(agent, victim, episodes, seed),
    ))
}

/// Per-episode outcomes of [`evaluate`], in episode order.
pub fn evaluate_outcomes(
    game: &MarkovGame,
    agent: &AdversaryAgent,
    victim: &Policy,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Outcome>> {
    if episodes == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one episode".into(),
        ));
    }
    check_agents(game, agent, victim)?;
    Ok((0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            rollout(
                game,
                agent,
                victim,
                &mut seeding::rng(seed, &[EVAL_STREAM, i]),
            )
            .outcome
        })
        .collect())
}

/// Sizes of a bound-verification sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSweep {
    /// Random adversary pairs checked against the sensitivity bound.
    pub sensitivity_pairs: usize,
    pub pinsker: Vec<Pinsker>,
    /// Random policy pairs checked for a zero-mean competitive advantage.
    pub advantage_checks: usize,
    pub robustness_samples: usize,
    pub epsilons: Vec<f64>,
    /// Grid for the closed-form constant.
    pub gammas: Vec<f64>,
    pub clamps: Vec<(f64, f64)>,
    /// Points on a path between two adversaries; the margins are logged.
    pub interpolation_steps: usize,
}

impl Default for BoundSweep {
    fn default() -> Self {
        Self {
            sensitivity_pairs: 200,
            pinsker: vec![Pinsker::Nats, Pinsker::Ln2],
            advantage_checks: 50,
            robustness_samples: 100,
            epsilons: vec![0.005, 0.02, 0.08],
            gammas: vec![0.5, 0.9, 0.99],
            clamps: vec![(0.01, 0.99), (0.1, 0.9), (0.2, 0.6)],
            interpolation_steps: 10,
        }
    }
}

impl BoundSweep {
    pub fn empty() -> Self {
        Self {
            sensitivity_pairs: 0,
            pinsker: Vec::new(),
            advantage_checks: 0,
            robustness_samples: 0,
            epsilons: Vec::new(),
            gammas: Vec::new(),
            clamps: Vec::new(),
            interpolation_steps: 0,
        }
    }
}

fn plain_layout(game: &MarkovGame) -> Result<ObsLayout> {
    ObsLayout::for_game(game, Encoding::OneHot, 0)
}

/// A random adversary pair: either independent draws or a draw and a
/// Gaussian perturbation of it, so that both far and near pairs occur.
fn adversary_pair<R: Rng + ?Sized>(game: &MarkovGame, rng: &mut R) -> Result<(Policy, Policy)> {
    let layout = plain_layout(game)?;
    let n = game.n_adv_actions();
    let a = Policy::random_tabular(layout.clone(), n, rng.random_range(0.1..3.0), rng);
    let b = if rng.random_bool(0.5) {
        Policy::random_tabular(layout, n, rng.random_range(0.1..3.0), rng)
    } else {
        let noise = Normal::new(0.0, rng.random_range(0.01..1.0)).expect("positive std");
        let params = a.params().iter().map(|w| w + noise.sample(rng)).collect();
        a.with_params(params)?
    };
    Ok((a, b))
}

fn sensitivity_reports(
    game: &MarkovGame,
    victim: &Policy,
    a: &Policy,
    b: &Policy,
    pinsker: &[Pinsker],
) -> Result<Vec<BoundReport>> {
    let (ga, gb) = (AdversaryAgent::new(a), AdversaryAgent::new(b));
    let mut out = Vec::new();
    for (i, &p) in pinsker.iter().enumerate() {
        let r = sensitivity_check(game, victim, &ga, &gb, p)?;
        out.push(r.kl);
        if i == 0 {
            out.push(r.lipschitz);
        }
    }
    Ok(out)
}

/// Runs the sensitivity, zero-mean-advantage, robustness and constant checks
/// over random policies of `game`. Every item draws from its own seeded
/// stream.
pub fn verify_bounds(game: &MarkovGame, sweep: &BoundSweep, seed: u64) -> Result<Vec<BoundReport>> {
    let layout = plain_layout(game)?;
    let victim_for = |rng: &mut seeding::Rng| {
        let scale = rng.random_range(0.1..3.0);
        Policy::random_tabular(layout.clone(), game.n_vic_actions(), scale, rng)
    };

    let sensitivity: Vec<Vec<BoundReport>> = (0..sweep.sensitivity_pairs as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeding::rng(seed, &[BOUNDS_STREAM, 0, k]);
            let victim = victim_for(&mut rng);
            let (a, b) = adversary_pair(game, &mut rng)?;
            let reports = sensitivity_reports(game, &victim, &a, &b, &sweep.pinsker)?;
            Ok(reports.into_iter().map(|r| r.with("pair", k)).collect())
        })
        .collect::<Result<_>>()?;
    let mut reports: Vec<BoundReport> = sensitivity.into_iter().flatten().collect();

    if sweep.interpolation_steps > 0 && !sweep.pinsker.is_empty() {
        let mut rng = seeding::rng(seed, &[BOUNDS_STREAM, 1]);
        let victim = victim_for(&mut rng);
        let (a, b) = {
            let n = game.n_adv_actions();
            let a = Policy::random_tabular(layout.clone(), n, 2.0, &mut rng);
            let b = Policy::random_tabular(layout.clone(), n, 2.0, &mut rng);
            (a, b)
        };
        for i in 0..=sweep.interpolation_steps {
            let t = i as f64 / sweep.interpolation_steps as f64;
            let params = a
                .params()
                .iter()
                .zip(b.params())
                .map(|(x, y)| x + t * (y - x))
                .collect();
            let mid = a.with_params(params)?;
            let r = sensitivity_check(
                game,
                &victim,
                &AdversaryAgent::new(&a),
                &AdversaryAgent::new(&mid),
                sweep.pinsker[0],
            )?;
            let mut r = r.kl;
            r.check_name = "sensitivity_path".into();
            reports.push(r.with("t", t));
        }
    }

    let advantage: Vec<BoundReport> = (0..sweep.advantage_checks as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeding::rng(seed, &[BOUNDS_STREAM, 2, k]);
            let victim = victim_for(&mut rng);
            let (a, _) = adversary_pair(game, &mut rng)?;
            let worst = max_advantage_mean(game, &AdversaryAgent::new(&a), &victim)?;
            Ok(BoundReport::new("advantage_zero_mean", worst, 0.0).with("pair", k))
        })
        .collect::<Result<_>>()?;
    reports.extend(advantage);

    for (k, &eps) in sweep.epsilons.iter().enumerate() {
        let mut rng = seeding::rng(seed, &[BOUNDS_STREAM, 3, k as u64]);
        let victim = victim_for(&mut rng);
        reports.push(robustness_probe(
            game,
            &victim,
            eps,
            sweep.robustness_samples,
            &mut rng,
        )?);
    }

    let max_vic = game
        .vic_reward()
        .iter()
        .fold(f64::NEG_INFINITY, |m, &r| m.max(r));
    for &gamma in &sweep.gammas {
        for &(lo, hi) in &sweep.clamps {
            let k = imitation_constant(gamma, max_vic, lo, hi)?;
            let k2 = imitation_constant_expanded(gamma, max_vic, lo, hi)?;
            reports.push(
                BoundReport::new(
                    "imitation_constant",
                    (k - k2).abs(),
                    1e-9 * k.abs().max(1.0),
                )
                .with("gamma", gamma)
                .with("max_vic_reward", max_vic)
                .with("d_lo", lo)
                .with("d_hi", hi)
                .with("k", k),
            );
        }
    }
    Ok(reports)
}

/// Checks run at the end of a training run: the sensitivity bound between
/// the initial and final adversaries and the zero-mean advantage of the
/// final one.
pub fn run_end_bounds(
    game: &MarkovGame,
    victim: &Policy,
    initial: &AdversaryAgent,
    last: &AdversaryAgent,
    clamp: (f64, f64),
) -> Result<Vec<BoundReport>> {
    let r = sensitivity_check(game, victim, initial, last, Pinsker::Nats)?;
    let worst = max_advantage_mean(game, last, victim)?;
    let max_vic = game
        .vic_reward()
        .iter()
        .fold(f64::NEG_INFINITY, |m, &r| m.max(r));
    let k = imitation_constant(game.discount(), max_vic, clamp.0, clamp.1)?;
    let k2 = imitation_constant_expanded(game.discount(), max_vic, clamp.0, clamp.1)?;
    Ok(vec![
        r.kl,
        r.lipschitz,
        BoundReport::new("advantage_zero_mean", worst, 0.0),
        BoundReport::new(
            "imitation_constant",
            (k - k2).abs(),
            1e-9 * k.abs().max(1.0),
        )
        .with("k", k),
    ])
}

fn family(check_name: &str) -> &str {
    check_name.split('_').next().unwrap_or(check_name)
}

/// Writes `bounds.jsonl`, one `<family>.jsonl` per check family and a
/// `summary.tsv` table into `dir`.
pub fn write_bound_reports(dir: &Path, reports: &[BoundReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut all = String::new();
    let mut by_family: BTreeMap<&str, String> = BTreeMap::new();
    for r in reports {
        let line = serde_json::to_string(r)? + "\n";
        all.push_str(&line);
        by_family
            .entry(family(&r.check_name))
            .or_default()
            .push_str(&line);
    }
    std::fs::write(dir.join("bounds.jsonl"), all)?;
    for (name, text) in &by_family {
        std::fs::write(dir.join(format!("{name}.jsonl")), text)?;
    }
    let mut summary = std::fs::File::create(dir.join("summary.tsv"))?;
    writeln!(
        summary,
        "check\tcount\tpassed\tfailed\tdegenerate\tmin_margin\tmax_measured"
    )?;
    for row in summarize(reports) {
        writeln!(
            summary,
            "{}\t{}\t{}\t{}\t{}\t{:e}\t{:e}",
            row.check_name,
            row.count,
            row.passed,
            row.failed,
            row.degenerate,
            row.min_margin,
            row.max_measured
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub check_name: String,
    pub count: usize,
    pub passed: usize,
    pub failed: usize,
    pub degenerate: usize,
    pub min_margin: f64,
    pub max_measured: f64,
}

/// Per-check counts in first-seen order.
pub fn summarize(reports: &[BoundReport]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for r in reports {
        let idx = match rows.iter().position(|x| x.check_name == r.check_name) {
            Some(i) => i,
            None => {
                rows.push(SummaryRow {
                    check_name: r.check_name.clone(),
                    count: 0,
                    passed: 0,
                    failed: 0,
                    degenerate: 0,
                    min_margin: f64::INFINITY,
                    max_measured: f64::NEG_INFINITY,
                });
                rows.len() - 1
            }
        };
        let row = &mut rows[idx];
        row.count += 1;
        if r.passed {
            row.passed += 1;
        } else {
            row.failed += 1;
        }
        if r.degenerate {
            row.degenerate += 1;
        }
        row.min_margin = row.min_margin.min(r.margin);
        row.max_measured = row.max_measured.max(r.measured);
    }
    rows
}
