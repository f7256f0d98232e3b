//! Brute-force ground truth: exact value iteration on the joint MDP, plus the
//! partition and value-relation checks used to compare two-agent and
//! N-agent designs.

use serde::{Deserialize, Serialize};

use crate::env::{JointMdp, TerminalKind};
use crate::error::{Error, Result};
use crate::rl::{GreedyPolicy, MixedRadix, QTable};
use crate::tocd::Codebook;
use crate::voi::ValueTable;

/// Largest joint MDP (state-action pairs) the oracle will solve.
pub const ORACLE_MAX_PAIRS: u128 = 1_000_000;

#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub v_star: Vec<f64>,
    pub q_star: QTable,
    pub policy: GreedyPolicy,
    pub sweeps: usize,
    pub residual: f64,
}

impl ExactSolution {
    /// Mean optimal value over a set of start states.
    pub fn mean_value(&self, starts: &[Vec<usize>]) -> f64 {
        let codec = self.q_star.state_codec();
        starts.iter().map(|s| self.v_star[codec.encode(s)]).sum::<f64>() / starts.len() as f64
    }

    /// Expected optimal value under the MDP's initial law.
    pub fn expected_start_value<M: JointMdp + ?Sized>(&self, mdp: &M) -> f64 {
        let n = mdp.n_agents();
        let cells = mdp.start_cells();
        let codec = MixedRadix::uniform(cells.len(), n);
        let mut digits = vec![0; n];
        let mut state = vec![0; n];
        let mut total = 0.0;
        for i in 0..codec.size() {
            codec.decode_into(i, &mut digits);
            for (s, &d) in state.iter_mut().zip(&digits) {
                *s = cells[d];
            }
            total += self.v_star[self.q_star.state_codec().encode(&state)];
        }
        total / codec.size() as f64
    }
}

/// Jacobi value iteration with terminal states pinned at zero.
///
/// Runs until the largest Bellman residual is at most `tol`. The sweep cap is
/// `|S| · |joint actions|`; hitting it is reported as divergence.
pub fn value_iteration<M: JointMdp + ?Sized>(mdp: &M, discount: f64, tol: f64) -> Result<ExactSolution> {
    value_iteration_capped(mdp, discount, tol, ORACLE_MAX_PAIRS)
}

/// [`value_iteration`] with an explicit state-action budget.
pub fn value_iteration_capped<M: JointMdp + ?Sized>(
    mdp: &M,
    discount: f64,
    tol: f64,
    max_pairs: u128,
) -> Result<ExactSolution> {
    if !(0.0..=1.0).contains(&discount) {
        return Err(Error::config(format!("discount {discount} outside [0, 1]")));
    }
    let n = mdp.n_agents();
    let states = MixedRadix::uniform(mdp.n_observations(), n);
    let actions = MixedRadix::uniform(mdp.n_actions(), n);
    let pairs = states
        .size_u128()
        .and_then(|s| actions.size_u128().and_then(|a| s.checked_mul(a)));
    match pairs {
        Some(p) if p <= max_pairs => {}
        other => {
            return Err(Error::Capacity {
                what: "oracle value iteration".into(),
                required: other.unwrap_or(u128::MAX),
                budget: max_pairs,
            })
        }
    }
    let n_s = states.size();
    let n_a = actions.size();

    // successor and reward for every (state, joint action)
    let mut terminal = vec![false; n_s];
    let mut succ = vec![0u32; n_s * n_a];
    let mut reward = vec![0.0f64; n_s * n_a];
    let mut ends = vec![false; n_s * n_a];
    let mut obs = vec![0; n];
    let mut joint = vec![0; n];
    let mut next = vec![0; n];
    for (s, end) in terminal.iter_mut().enumerate() {
        states.decode_into(s, &mut obs);
        if mdp.is_terminal(&obs) {
            *end = true;
            continue;
        }
        for a in 0..n_a {
            actions.decode_into(a, &mut joint);
            let (r, kind) = mdp.step(&obs, &joint, &mut next);
            let i = s * n_a + a;
            succ[i] = states.encode(&next) as u32;
            reward[i] = r;
            ends[i] = kind != TerminalKind::None;
        }
    }

    let backup = |v: &[f64], i: usize| -> f64 {
        if ends[i] {
            reward[i]
        } else {
            reward[i] + discount * v[succ[i] as usize]
        }
    };

    let cap = n_s.saturating_mul(n_a).max(1);
    let mut v = vec![0.0; n_s];
    let mut fresh = vec![0.0; n_s];
    let mut sweeps = 0;
    let mut residual;
    loop {
        residual = 0.0f64;
        let mut worst = 0;
        for s in 0..n_s {
            fresh[s] = if terminal[s] {
                0.0
            } else {
                (0..n_a)
                    .map(|a| backup(&v, s * n_a + a))
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let d = (fresh[s] - v[s]).abs();
            if d > residual {
                residual = d;
                worst = s;
            }
        }
        std::mem::swap(&mut v, &mut fresh);
        sweeps += 1;
        if residual <= tol {
            break;
        }
        if sweeps >= cap {
            return Err(Error::Divergence {
                sweeps,
                residual,
                state: worst,
            });
        }
    }

    let mut q = vec![0.0; n_s * n_a];
    for s in (0..n_s).filter(|&s| !terminal[s]) {
        for a in 0..n_a {
            q[s * n_a + a] = backup(&v, s * n_a + a);
        }
    }
    let q_star = QTable::from_values(states, actions, q)?;
    let policy = q_star.greedy_policy();
    Ok(ExactSolution {
        v_star: v,
        q_star,
        policy,
        sweeps,
        residual,
    })
}

/// Outcome of comparing two observation partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub equal: bool,
    /// First pair (in lexicographic order) grouped by one partition only.
    pub witness: Option<(usize, usize)>,
}

/// Whether two codebooks induce the same equivalence relation on Ω.
pub fn check_c1(p2: &Codebook, pn: &Codebook) -> Result<PartitionReport> {
    if p2.n_observations() != pn.n_observations() {
        return Err(Error::contract(format!(
            "partitions over {} and {} observations",
            p2.n_observations(),
            pn.n_observations()
        )));
    }
    let n = p2.n_observations();
    for a in 0..n {
        for b in a + 1..n {
            let same2 = p2.cluster_of(a) == p2.cluster_of(b);
            let same_n = pn.cluster_of(a) == pn.cluster_of(b);
            if same2 != same_n {
                return Ok(PartitionReport {
                    equal: false,
                    witness: Some((a, b)),
                });
            }
        }
    }
    Ok(PartitionReport {
        equal: true,
        witness: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    /// The value pairing is a well-defined, strictly increasing bijection.
    Strict,
    /// Order-preserving, but a tie in one table is split in the other.
    Weak,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFitReport {
    pub tau: Option<f64>,
    pub zeta: Option<f64>,
    pub r_squared: Option<f64>,
    pub monotonic: bool,
    pub monotonicity: Monotonicity,
    /// `v2` has zero variance, so no fit exists.
    pub degenerate: bool,
}

/// Relative tolerance under which two values count as tied.
pub const VALUE_TIE_TOL: f64 = 1e-9;

fn cmp_tol(a: f64, b: f64) -> std::cmp::Ordering {
    let scale = a.abs().max(b.abs()).max(1.0);
    if (a - b).abs() <= VALUE_TIE_TOL * scale {
        std::cmp::Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Least-squares fit `vN ≈ τ·v2 + ζ` and an order comparison of the tables.
pub fn check_affine_relation(v2: &ValueTable, vn: &ValueTable) -> Result<AffineFitReport> {
    if v2.len() != vn.len() {
        return Err(Error::contract(format!(
            "value tables over {} and {} observations",
            v2.len(),
            vn.len()
        )));
    }
    let x = v2.values();
    let y = vn.values();

    let mut monotonicity = Monotonicity::Strict;
    'pairs: for a in 0..x.len() {
        for b in 0..x.len() {
            use std::cmp::Ordering::*;
            match (cmp_tol(x[a], x[b]), cmp_tol(y[a], y[b])) {
                (Less, Greater) | (Greater, Less) => {
                    monotonicity = Monotonicity::None;
                    break 'pairs;
                }
                (l, r) if l != r => monotonicity = Monotonicity::Weak,
                _ => {}
            }
        }
    }

    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if x.is_empty() || sxx <= (VALUE_TIE_TOL * scale).powi(2) * n {
        return Ok(AffineFitReport {
            tau: None,
            zeta: None,
            r_squared: None,
            monotonic: false,
            monotonicity,
            degenerate: true,
        });
    }
    let tau = sxy / sxx;
    let zeta = my - tau * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - (tau * a + zeta)).powi(2)).sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(AffineFitReport {
        tau: Some(tau),
        zeta: Some(zeta),
        r_squared: Some(r_squared),
        monotonic: monotonicity == Monotonicity::Strict,
        monotonicity,
        degenerate: false,
    })
}
