use super::{safe_ln, Policy};
use crate::error::{Error, Result};
use crate::game::MarkovGame;

/// `KL(p || q)` in nats. Infinite when `q` misses support of `p`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        total += pi * (pi / qi).ln();
    }
    total.max(0.0)
}

/// Shannon entropy in nats.
pub fn entropy_of(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * safe_ln(x))
        .sum::<f64>()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn same_actions(p: &Policy, q: &Policy) -> Result<()> {
    if p.action_count() != q.action_count() {
        return Err(Error::IncompatibleActions(
            p.action_count(),
            q.action_count(),
        ));
    }
    Ok(())
}

pub fn kl_divergence(p: &Policy, q: &Policy, game: &MarkovGame, s: usize) -> Result<f64> {
    same_actions(p, q)?;
    Ok(kl(&p.state_dist(game, s)?, &q.state_dist(game, s)?))
}

/// Largest per-state KL over non-absorbing states.
pub fn max_state_kl(p: &Policy, q: &Policy, game: &MarkovGame) -> Result<f64> {
    same_actions(p, q)?;
    let a = p.action_count();
    let (tp, tq) = (p.state_table(game)?, q.state_table(game)?);
    Ok(game
        .live_states()
        .map(|s| kl(&tp[s * a..(s + 1) * a], &tq[s * a..(s + 1) * a]))
        .fold(0.0, f64::max))
}

/// Occupancy-weighted action entropy `sum_s d(s) H(pi(.|s))` over
/// non-absorbing states (nothing is decided in an absorbing state).
pub fn entropy(policy: &Policy, game: &MarkovGame, occupancy: &[f64]) -> Result<f64> {
    if occupancy.len() != game.n_states() {
        return Err(Error::DimensionMismatch {
            expected: game.n_states(),
            got: occupancy.len(),
        });
    }
    if occupancy.iter().any(|&d| d < 0.0) {
        return Err(Error::InvalidArgument(
            "occupancy must be nonnegative".into(),
        ));
    }
    let a = policy.action_count();
    let table = policy.state_table(game)?;
    Ok(game
        .live_states()
        .map(|s| occupancy[s] * entropy_of(&table[s * a..(s + 1) * a]))
        .sum())
}
