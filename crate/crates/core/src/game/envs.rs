use serde::{Deserialize, Serialize};

use super::{FactoredFeatures, GameBuilder, MarkovGame, Outcome};
use crate::error::{Error, Result};

/// Upper bound on the state count so the exact oracle stays cheap.
pub const MAX_STATES: usize = 10_000;

/// Environment name plus optional size overrides. Unset fields take the
/// per-environment defaults; [`EnvSpec::resolved`] fills them in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
}

impl EnvSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            width: None,
            height: None,
            length: None,
            horizon: None,
            slip: None,
            discount: None,
        }
    }

    pub fn markov_rps() -> Self {
        Self::named("markov_rps")
    }

    pub fn grid_pass(width: usize, height: usize) -> Self {
        Self {
            width: Some(width),
            height: Some(height),
            ..Self::named("grid_pass")
        }
    }

    pub fn push_duel(length: usize, horizon: usize) -> Self {
        Self {
            length: Some(length),
            horizon: Some(horizon),
            ..Self::named("push_duel")
        }
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = Some(discount);
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }

    /// Copy with every parameter relevant to the environment made explicit.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = Self::named(&self.name);
        match self.name.as_str() {
            "markov_rps" => {
                out.horizon = Some(self.horizon.unwrap_or(1));
                out.discount = Some(self.discount.unwrap_or(0.9));
            }
            "grid_pass" => {
                out.width = Some(self.width.unwrap_or(4));
                out.height = Some(self.height.unwrap_or(3));
                out.horizon = Some(self.horizon.unwrap_or(12));
                out.slip = Some(self.slip.unwrap_or(0.0));
                out.discount = Some(self.discount.unwrap_or(0.95));
            }
            "push_duel" => {
                out.length = Some(self.length.unwrap_or(7));
                out.horizon = Some(self.horizon.unwrap_or(50));
                out.discount = Some(self.discount.unwrap_or(0.95));
            }
            other => return Err(Error::UnknownEnv(other.to_string())),
        }
        Ok(out)
    }
}

fn in_range(
    name: &'static str,
    value: usize,
    lo: usize,
    hi: usize,
    range: &'static str,
) -> Result<usize> {
    if value < lo || value > hi {
        return Err(Error::ParamOutOfRange {
            name,
            value: value.to_string(),
            range,
        });
    }
    Ok(value)
}

pub fn make_env(spec: &EnvSpec) -> Result<MarkovGame> {
    let spec = spec.resolved()?;
    let horizon = in_range("horizon", spec.horizon.unwrap(), 1, 100_000, "1..=100000")?;
    let discount = spec.discount.unwrap();
    let mut b = match spec.name.as_str() {
        "markov_rps" => markov_rps(),
        "grid_pass" => {
            let w = in_range("width", spec.width.unwrap(), 2, 10, "2..=10")?;
            let h = in_range("height", spec.height.unwrap(), 1, 10, "1..=10")?;
            let slip = spec.slip.unwrap();
            if !(0.0..1.0).contains(&slip) {
                return Err(Error::ParamOutOfRange {
                    name: "slip",
                    value: slip.to_string(),
                    range: "0 <= slip < 1",
                });
            }
            grid_pass(w, h, slip)
        }
        "push_duel" => push_duel(in_range("length", spec.length.unwrap(), 3, 100, "3..=100")?),
        _ => unreachable!("resolved() rejects unknown names"),
    };
    b.discount(discount).horizon(horizon);
    b.build()
}

const RPS_PLAY: usize = 0;
const RPS_WIN: usize = 1;
const RPS_LOSE: usize = 2;
const RPS_TIE: usize = 3;

/// One simultaneous round of rock/paper/scissors (actions 0/1/2) followed by
/// an absorbing outcome state.
fn markov_rps() -> GameBuilder {
    let mut b = GameBuilder::new("markov_rps", 4, 3, 3);
    b.terminal(RPS_WIN, Outcome::AdvWin)
        .terminal(RPS_LOSE, Outcome::VicWin)
        .terminal(RPS_TIE, Outcome::Tie);
    b.rewards(RPS_WIN, 1.0, -1.0).rewards(RPS_LOSE, -1.0, 1.0);
    for a in 0..3 {
        for v in 0..3 {
            let next = match (3 + a - v) % 3 {
                0 => RPS_TIE,
                1 => RPS_WIN,
                _ => RPS_LOSE,
            };
            b.transition(RPS_PLAY, a, v, vec![(next, 1.0)]);
        }
    }
    b.initial_state(RPS_PLAY);
    b
}

// Runner moves: stay, up, down, right. Blocker moves: stay, up, down, left, right.
const RUNNER_MOVES: [(i64, i64); 4] = [(0, 0), (0, 1), (0, -1), (1, 0)];
const BLOCKER_MOVES: [(i64, i64); 5] = [(0, 0), (0, 1), (0, -1), (-1, 0), (1, 0)];

/// Runner (victim) tries to cross a `w x h` grid from column 0 to column
/// `w - 1`; the blocker (adversary) wins by stepping onto the runner or
/// swapping cells with it. Timeouts are ties. With `slip > 0` the runner's
/// move fails (it stays) with that probability.
///
/// Only live position pairs are indexed, followed by the two outcome states.
fn grid_pass(w: usize, h: usize, slip: f64) -> GameBuilder {
    let runner_cells = (w - 1) * h;
    let blocker_cells = w * h;
    let mut index = vec![usize::MAX; runner_cells * blocker_cells];
    let mut live = Vec::new();
    for r in 0..runner_cells {
        for bl in 0..blocker_cells {
            let (rx, ry) = (r / h, r % h);
            let (bx, by) = (bl / h, bl % h);
            if (rx, ry) != (bx, by) {
                index[r * blocker_cells + bl] = live.len();
                live.push(((rx, ry), (bx, by)));
            }
        }
    }
    let n_live = live.len();
    let (win, lose) = (n_live, n_live + 1);
    let mut b = GameBuilder::new(
        "grid_pass",
        n_live + 2,
        BLOCKER_MOVES.len(),
        RUNNER_MOVES.len(),
    );
    b.terminal(win, Outcome::AdvWin)
        .terminal(lose, Outcome::VicWin);
    b.rewards(win, 1.0, -1.0).rewards(lose, -1.0, 1.0);

    let clamp = |x: i64, hi: usize| x.clamp(0, hi as i64 - 1) as usize;
    let resolve = |(rx, ry): (usize, usize),
                   (bx, by): (usize, usize),
                   r2: (usize, usize),
                   b2: (usize, usize)| {
        if r2 == b2 || (r2 == (bx, by) && b2 == (rx, ry)) {
            win
        } else if r2.0 == w - 1 {
            lose
        } else {
            index[(r2.0 * h + r2.1) * blocker_cells + b2.0 * h + b2.1]
        }
    };

    for (s, &(rp, bp)) in live.iter().enumerate() {
        for (a, &(dx, dy)) in BLOCKER_MOVES.iter().enumerate() {
            let b2 = (clamp(bp.0 as i64 + dx, w), clamp(bp.1 as i64 + dy, h));
            for (v, &(ex, ey)) in RUNNER_MOVES.iter().enumerate() {
                let moved = (clamp(rp.0 as i64 + ex, w), clamp(rp.1 as i64 + ey, h));
                let row = if slip > 0.0 && moved != rp {
                    vec![
                        (resolve(rp, bp, moved, b2), 1.0 - slip),
                        (resolve(rp, bp, rp, b2), slip),
                    ]
                } else {
                    vec![(resolve(rp, bp, moved, b2), 1.0)]
                };
                b.transition(s, a, v, row);
            }
        }
    }

    // Factored layout: [runner x | runner y | blocker x | blocker y | win, lose].
    let rx0 = 0;
    let ry0 = w - 1;
    let bx0 = ry0 + h;
    let by0 = bx0 + w;
    let flags = by0 + h;
    let mut active: Vec<Vec<usize>> = live
        .iter()
        .map(|&((rx, ry), (bx, by))| vec![rx0 + rx, ry0 + ry, bx0 + bx, by0 + by])
        .collect();
    active.push(vec![flags]);
    active.push(vec![flags + 1]);
    b.factored(FactoredFeatures {
        dim: flags + 2,
        active,
        victim_block: 0..bx0,
    });
    let start = ((0, h / 2), (w - 1, h / 2));
    b.initial_state(
        live.iter()
            .position(|&p| p == start)
            .expect("start is live"),
    );
    b
}

/// Two agents on a line of `len` cells, adversary on the left. Actions are
/// advance / stay / retreat. Adjacent agents push: an advancer moves both
/// agents one cell toward the other side, and two advancers contest the push
/// with a fair coin. Being pushed off the line loses; retreating at the edge
/// is a no-op. Two advancers at distance 2 flip a coin for the middle cell.
fn push_duel(len: usize) -> GameBuilder {
    let mut index = vec![usize::MAX; len * len];
    let mut live = Vec::new();
    for pa in 0..len {
        for pv in pa + 1..len {
            index[pa * len + pv] = live.len();
            live.push((pa, pv));
        }
    }
    let n_live = live.len();
    let (win, lose) = (n_live, n_live + 1);
    let mut b = GameBuilder::new("push_duel", n_live + 2, 3, 3);
    b.terminal(win, Outcome::AdvWin)
        .terminal(lose, Outcome::VicWin);
    b.rewards(win, 1.0, -1.0).rewards(lose, -1.0, 1.0);

    let hi = len as i64 - 1;
    // Shift both agents by `d` (+1 toward the victim's edge).
    let shift = |pa: usize, pv: usize, d: i64| -> usize {
        let (na, nv) = (pa as i64 + d, pv as i64 + d);
        if nv > hi {
            win
        } else if na < 0 {
            lose
        } else {
            index[na as usize * len + nv as usize]
        }
    };
    // Adversary displacement for advance/stay/retreat; the victim mirrors it.
    let dir = [1i64, 0, -1];

    for (s, &(pa, pv)) in live.iter().enumerate() {
        for a in 0..3 {
            for v in 0..3 {
                let row = if pv - pa == 1 {
                    match (a, v) {
                        (0, 0) => vec![(shift(pa, pv, 1), 0.5), (shift(pa, pv, -1), 0.5)],
                        (0, _) => vec![(shift(pa, pv, 1), 1.0)],
                        (_, 0) => vec![(shift(pa, pv, -1), 1.0)],
                        _ => {
                            let na = (pa as i64 - i64::from(a == 2)).max(0) as usize;
                            let nv = (pv as i64 + i64::from(v == 2)).min(hi) as usize;
                            vec![(index[na * len + nv], 1.0)]
                        }
                    }
                } else {
                    let na = (pa as i64 + dir[a]).clamp(0, hi) as usize;
                    let nv = (pv as i64 - dir[v]).clamp(0, hi) as usize;
                    if na >= nv {
                        // Only reachable at distance 2 with both advancing.
                        let mid = pa + 1;
                        vec![(index[mid * len + pv], 0.5), (index[pa * len + mid], 0.5)]
                    } else {
                        vec![(index[na * len + nv], 1.0)]
                    }
                };
                b.transition(s, a, v, row);
            }
        }
    }

    // Factored layout: [victim position | adversary position | win, lose].
    let mut active: Vec<Vec<usize>> = live.iter().map(|&(pa, pv)| vec![pv, len + pa]).collect();
    active.push(vec![2 * len]);
    active.push(vec![2 * len + 1]);
    b.factored(FactoredFeatures {
        dim: 2 * len + 2,
        active,
        victim_block: 0..len,
    });
    let pa0 = ((len - 1) / 2).saturating_sub(1);
    b.initial_state(index[pa0 * len + (len - 1 - pa0)]);
    b
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;

    fn rows_stochastic(g: &MarkovGame) -> bool {
        (0..g.n_states()).all(|s| {
            (0..g.n_adv_actions()).all(|a| {
                (0..g.n_vic_actions()).all(|v| {
                    let t: f64 = g.transition(s, a, v).iter().map(|e| e.1).sum();
                    (t - 1.0).abs() <= 1e-12
                })
            })
        })
    }

    #[test]
    fn rps_shape() {
        let g = make_env(&EnvSpec::markov_rps()).unwrap();
        assert_eq!(g.n_states(), 4);
        assert_eq!((g.n_adv_actions(), g.n_vic_actions()), (3, 3));
        // paper beats rock
        assert_eq!(g.transition(0, 1, 0), &[(RPS_WIN, 1.0)]);
        assert_eq!(g.transition(0, 0, 1), &[(RPS_LOSE, 1.0)]);
        assert_eq!(g.transition(0, 2, 2), &[(RPS_TIE, 1.0)]);
        assert_eq!(g.adv_reward(), &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(g.vic_reward(), &[0.0, -1.0, 1.0, 0.0]);
    }

    #[test]
    fn grid_pass_counts() {
        let g = make_env(&EnvSpec::grid_pass(4, 3)).unwrap();
        assert_eq!(g.n_states(), 3 * 3 * 11 + 2);
        assert!(rows_stochastic(&g));
        let slippy = make_env(&EnvSpec {
            slip: Some(0.2),
            ..EnvSpec::grid_pass(4, 3)
        })
        .unwrap();
        assert!(rows_stochastic(&slippy));
        let f = g.factored().unwrap();
        assert_eq!(f.dim, 3 + 3 + 4 + 3 + 2);
        assert_eq!(f.victim_block, 0..6);
        assert_eq!(f.active[g.initial_state()], vec![0, 3 + 1, 6 + 3, 10 + 1]);
    }

    #[test]
    fn grid_pass_interception() {
        let g = make_env(&EnvSpec::grid_pass(2, 1)).unwrap();
        // 1 runner cell x 2 blocker cells minus the shared one, plus outcomes.
        assert_eq!(g.n_states(), 1 + 2);
        let s0 = g.initial_state();
        let right = 3;
        // Runner steps onto the blocker's cell: interception wins for the blocker.
        assert_eq!(
            g.outcome(g.transition(s0, 0, right)[0].0),
            Some(Outcome::AdvWin)
        );
        // Blocker steps into the runner while the runner stays: interception.
        assert_eq!(
            g.outcome(g.transition(s0, 3, 0)[0].0),
            Some(Outcome::AdvWin)
        );
    }

    #[test]
    fn push_duel_outcomes_reachable_by_one_sided_pushes() {
        let g = make_env(&EnvSpec::push_duel(7, 50)).unwrap();
        assert_eq!(g.n_states(), 7 * 6 / 2 + 2);
        assert!(rows_stochastic(&g));
        let absorbing: Vec<usize> = (0..g.n_states()).filter(|&s| g.is_absorbing(s)).collect();
        assert_eq!(absorbing.len(), 2);

        // Breadth-first search over the support of "adversary advances, victim
        // stays" (and the mirror image) from every interior state.
        for (a, v, target) in [(0, 1, Outcome::AdvWin), (1, 0, Outcome::VicWin)] {
            for start in g.live_states() {
                let mut seen = vec![false; g.n_states()];
                let mut queue = VecDeque::from([start]);
                seen[start] = true;
                let mut hit = false;
                while let Some(s) = queue.pop_front() {
                    if g.outcome(s) == Some(target) {
                        hit = true;
                        break;
                    }
                    for &(t, _) in g.transition(s, a, v) {
                        if !seen[t] {
                            seen[t] = true;
                            queue.push_back(t);
                        }
                    }
                }
                assert!(hit, "state {start} cannot reach {target:?}");
            }
        }
    }

    #[test]
    fn push_duel_start_and_size_limit() {
        let g = make_env(&EnvSpec::push_duel(7, 50)).unwrap();
        assert_eq!(
            g.factored().unwrap().active[g.initial_state()],
            vec![4, 7 + 2]
        );
        assert!(make_env(&EnvSpec::push_duel(100, 10)).is_ok());
        assert!(matches!(
            make_env(&EnvSpec::push_duel(101, 10)),
            Err(Error::ParamOutOfRange { name: "length", .. })
        ));
    }

    #[test]
    fn unknown_env_and_bad_params() {
        assert!(matches!(
            make_env(&EnvSpec::named("sumo")),
            Err(Error::UnknownEnv(_))
        ));
        assert!(make_env(&EnvSpec::grid_pass(1, 3)).is_err());
        assert!(make_env(&EnvSpec::markov_rps().with_discount(1.0)).is_err());
        assert!(make_env(&EnvSpec::markov_rps().with_horizon(0)).is_err());
    }

    #[test]
    fn spec_json_rejects_unknown_fields() {
        let ok: EnvSpec = serde_json::from_str(r#"{"name":"grid_pass","width":5}"#).unwrap();
        assert_eq!(ok.width, Some(5));
        assert!(serde_json::from_str::<EnvSpec>(r#"{"name":"grid_pass","colour":5}"#).is_err());
    }
}
