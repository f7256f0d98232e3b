//! Value of a single agent's observation under a trained centralized policy.
//!
//! `V(o) = Σ_{o_-i} p(o_-i) · Q(s, π(s))` where `s` places `o` in the agent's
//! slot and `o_-i` in the peers' slots. Terminal joint states contribute zero.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sample_start, JointMdp, TerminalKind};
use crate::error::{Error, Result};
use crate::rl::{GreedyPolicy, QTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeerDistributionKind {
    UniformNonGoal,
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PeerTable {
    /// Independent peers, one marginal over Ω per peer.
    Factored(Vec<Vec<f64>>),
    /// Explicit PMF over peer tuples.
    Joint(BTreeMap<Vec<usize>, f64>),
}

/// Law of the peers' observations `p(o_-i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerDistribution {
    pub kind: PeerDistributionKind,
    pub n_peers: usize,
    pub table: PeerTable,
}

impl PeerDistribution {
    /// Every peer i.i.d. uniform over the MDP's start cells.
    pub fn uniform_non_goal<M: JointMdp + ?Sized>(mdp: &M, n_peers: usize) -> Self {
        let mut marginal = vec![0.0; mdp.n_observations()];
        let cells = mdp.start_cells();
        for &c in cells {
            marginal[c] = 1.0 / cells.len() as f64;
        }
        PeerDistribution {
            kind: PeerDistributionKind::UniformNonGoal,
            n_peers,
            table: PeerTable::Factored(vec![marginal; n_peers]),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match &self.table {
            PeerTable::Factored(m) => m.iter().map(|p| p.iter().sum::<f64>()).product(),
            PeerTable::Joint(t) => t.values().sum(),
        }
    }

    /// Number of peer tuples an exact sum would visit.
    fn support_size(&self) -> u128 {
        match &self.table {
            PeerTable::Factored(m) => m
                .iter()
                .map(|p| p.iter().filter(|&&x| x > 0.0).count() as u128)
                .fold(1u128, |a, b| a.saturating_mul(b)),
            PeerTable::Joint(t) => t.len() as u128,
        }
    }

    /// Calls `f(tuple, probability)` for every peer tuple with positive mass.
    fn for_each(&self, mut f: impl FnMut(&[usize], f64)) {
        match &self.table {
            PeerTable::Joint(t) => {
                for (tuple, &p) in t {
                    if p > 0.0 {
                        f(tuple, p);
                    }
                }
            }
            PeerTable::Factored(m) => {
                let supports: Vec<Vec<(usize, f64)>> = m
                    .iter()
                    .map(|p| p.iter().copied().enumerate().filter(|(_, x)| *x > 0.0).collect())
                    .collect();
                if supports.iter().any(Vec::is_empty) {
                    return;
                }
                let mut idx = vec![0usize; supports.len()];
                let mut tuple = vec![0usize; supports.len()];
                loop {
                    let mut p = 1.0;
                    for (k, s) in supports.iter().enumerate() {
                        tuple[k] = s[idx[k]].0;
                        p *= s[idx[k]].1;
                    }
                    f(&tuple, p);
                    // odometer over the supports
                    let mut k = supports.len();
                    loop {
                        if k == 0 {
                            return;
                        }
                        k -= 1;
                        idx[k] += 1;
                        if idx[k] < supports[k].len() {
                            break;
                        }
                        idx[k] = 0;
                    }
                }
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [usize]) {
        match &self.table {
            PeerTable::Factored(m) => {
                for (slot, p) in out.iter_mut().zip(m) {
                    *slot = sample_index(p.iter().copied(), rng);
                }
            }
            PeerTable::Joint(t) => {
                let i = sample_index(t.values().copied(), rng);
                out.copy_from_slice(t.keys().nth(i).expect("index within table"));
            }
        }
    }
}

fn sample_index(weights: impl Iterator<Item = f64> + Clone, rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.clone().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

/// `V(o)` for every observation, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    values: Vec<f64>,
    pub n_agents_trained: usize,
    pub agent: usize,
    pub peer_distribution: PeerDistributionKind,
    /// Largest Monte Carlo standard error, when sampling was used.
    pub standard_error: Option<f64>,
}

impl ValueTable {
    pub fn new(
        values: Vec<f64>,
        n_agents_trained: usize,
        agent: usize,
        peer_distribution: PeerDistributionKind,
    ) -> Self {
        ValueTable {
            values,
            n_agents_trained,
            agent,
            peer_distribution,
            standard_error: None,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, observation: usize) -> f64 {
        self.values[observation]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same provenance, values mapped elementwise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ValueTable {
        ValueTable {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# esaic-values v1 trained_agents={} agent={} peers={}\nobservation,value\n",
            self.n_agents_trained,
            self.agent,
            match self.peer_distribution {
                PeerDistributionKind::UniformNonGoal => "uniform-non-goal",
                PeerDistributionKind::Empirical => "empirical",
            }
        );
        for (o, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{o},{v}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::write_file(path, &self.to_csv())
    }

    pub fn read_csv(path: &Path) -> Result<ValueTable> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        let head = lines
            .first()
            .and_then(|l| l.strip_prefix("# esaic-values v1 "))
            .ok_or_else(|| Error::parse(path, "missing esaic-values v1 header"))?;
        let mut table = ValueTable::new(Vec::new(), 0, 0, PeerDistributionKind::UniformNonGoal);
        for field in head.split_whitespace() {
            let bad = || Error::parse(path, format!("bad header field {field}"));
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "trained_agents" => table.n_agents_trained = v.parse().map_err(|_| bad())?,
                "agent" => table.agent = v.parse().map_err(|_| bad())?,
                "peers" => {
                    table.peer_distribution = match v {
                        "uniform-non-goal" => PeerDistributionKind::UniformNonGoal,
                        "empirical" => PeerDistributionKind::Empirical,
                        _ => return Err(bad()),
                    }
                }
                _ => return Err(bad()),
            }
        }
        for line in lines.iter().skip(2).filter(|l| !l.is_empty()) {
            let (o, v) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, format!("bad row {line}")))?;
            let o: usize = o.parse().map_err(|_| Error::parse(path, format!("bad row {line}")))?;
            if o != table.values.len() {
                return Err(Error::parse(path, format!("rows out of order at {line}")));
            }
            table
                .values
                .push(v.parse().map_err(|_| Error::parse(path, format!("bad row {line}")))?);
        }
        Ok(table)
    }
}

/// Exact-versus-sampled switch for [`compute_values`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueOptions {
    /// Largest number of peer tuples summed exactly.
    pub exact_cap: u128,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for ValueOptions {
    fn default() -> Self {
        ValueOptions {
            exact_cap: 1_000_000,
            mc_samples: 100_000,
            seed: 0,
        }
    }
}

/// Pairwise sum of terms sorted ascending; independent of the order the
/// terms were produced in.
fn stable_sum(terms: &mut [f64]) -> f64 {
    fn pairwise(t: &[f64]) -> f64 {
        match t.len() {
            0 => 0.0,
            1 => t[0],
            n => pairwise(&t[..n / 2]) + pairwise(&t[n / 2..]),
        }
    }
    terms.sort_by(f64::total_cmp);
    pairwise(terms)
}

/// Values of every observation of `agent` under the greedy joint policy.
pub fn compute_values<M: JointMdp + ?Sized>(
    mdp: &M,
    q: &QTable,
    policy: &GreedyPolicy,
    dist: &PeerDistribution,
    agent: usize,
    opts: &ValueOptions,
) -> Result<ValueTable> {
    let n = q.state_codec().digits();
    let n_obs = mdp.n_observations();
    if n != mdp.n_agents() || q.state_codec().radices().iter().any(|&r| r != n_obs) {
        return Err(Error::contract("Q-table does not match the MDP's joint state space"));
    }
    if policy.state_codec() != q.state_codec() || policy.action_codec() != q.action_codec() {
        return Err(Error::contract("policy and Q-table come from different codecs"));
    }
    if dist.n_peers + 1 != n {
        return Err(Error::contract(format!(
            "peer distribution covers {} peers, joint state has {} agents",
            dist.n_peers, n
        )));
    }
    if agent >= n {
        return Err(Error::contract(format!("agent {agent} of {n}")));
    }
    let mut state = vec![0usize; n];
    let value_at = |state: &[usize]| -> f64 {
        if mdp.is_terminal(state) {
            0.0
        } else {
            let s = q.state_codec().encode(state);
            q.get(s, policy.action(s))
        }
    };
    let place = |state: &mut [usize], own: usize, peers: &[usize]| {
        let mut it = peers.iter();
        for (k, slot) in state.iter_mut().enumerate() {
            *slot = if k == agent { own } else { *it.next().unwrap() };
        }
    };

    let mut values = Vec::with_capacity(n_obs);
    let mut worst_se: Option<f64> = None;
    if dist.support_size() <= opts.exact_cap {
        let mut terms = Vec::new();
        for o in 0..n_obs {
            terms.clear();
            dist.for_each(|peers, p| {
                place(&mut state, o, peers);
                terms.push(p * value_at(&state));
            });
            values.push(stable_sum(&mut terms));
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut peers = vec![0usize; n - 1];
        let samples = opts.mc_samples.max(2);
        for o in 0..n_obs {
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for i in 0..samples {
                dist.sample(&mut rng, &mut peers);
                place(&mut state, o, &peers);
                let x = value_at(&state);
                let delta = x - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (x - mean);
            }
            let se = (m2 / (samples - 1) as f64 / samples as f64).sqrt();
            worst_se = Some(worst_se.map_or(se, |w: f64| w.max(se)));
            values.push(mean);
        }
    }
    Ok(ValueTable {
        values,
        n_agents_trained: n,
        agent,
        peer_distribution: dist.kind,
        standard_error: worst_se,
    })
}

/// Visitation frequencies of the peers' observations under greedy rollouts
/// from the uniform initial law. Every pre-action state of every step counts.
pub fn empirical_peer_distribution<M: JointMdp + ?Sized>(
    mdp: &M,
    policy: &GreedyPolicy,
    agent: usize,
    rollouts: usize,
    seed: u64,
) -> Result<PeerDistribution> {
    let n = mdp.n_agents();
    if rollouts < 1 {
        return Err(Error::contract("need at least one rollout"));
    }
    if agent >= n {
        return Err(Error::contract(format!("agent {agent} of {n}")));
    }
    if policy.state_codec().digits() != n {
        return Err(Error::contract("policy does not match the MDP"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    let mut total = 0u64;
    let mut obs = vec![0; n];
    let mut next = vec![0; n];
    let mut joint = vec![0; n];
    for _ in 0..rollouts {
        sample_start(mdp, &mut rng, &mut obs);
        for _ in 0..mdp.max_steps() {
            let peers: Vec<usize> = (0..n).filter(|&k| k != agent).map(|k| obs[k]).collect();
            *counts.entry(peers).or_insert(0) += 1;
            total += 1;
            let s = policy.state_codec().encode(&obs);
            policy.action_codec().decode_into(policy.action(s), &mut joint);
            let (_, kind) = mdp.step(&obs, &joint, &mut next);
            if kind != TerminalKind::None {
                break;
            }
            std::mem::swap(&mut obs, &mut next);
        }
    }
    let table = counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect();
    Ok(PeerDistribution {
        kind: PeerDistributionKind::Empirical,
        n_peers: n - 1,
        table: PeerTable::Joint(table),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, GridSpec, Rendezvous};
    use crate::oracle::value_iteration;
    use crate::rl::MixedRadix;

    fn two_by_two() -> Rendezvous {
        Rendezvous::new(GridSpec::rendezvous(2).with_goal(3).with_discount(1.0), 2).unwrap()
    }

    #[test]
    fn point_mass_peer_reads_one_entry() {
        let mdp = two_by_two();
        let exact = value_iteration(&mdp, 1.0, 1e-12).unwrap();
        let mut marginal = vec![0.0; 4];
        marginal[1] = 1.0;
        let dist = PeerDistribution {
            kind: PeerDistributionKind::UniformNonGoal,
            n_peers: 1,
            table: PeerTable::Factored(vec![marginal]),
        };
        let v = compute_values(&mdp, &exact.q_star, &exact.policy, &dist, 0, &ValueOptions::default()).unwrap();
        for o in 0..3 {
            let s = o * 4 + 1;
            assert_eq!(v.get(o), exact.q_star.get(s, exact.policy.action(s)));
        }
        assert_eq!(v.get(3), 0.0);
    }

    #[test]
    fn two_by_two_values_match_hand_expectation() {
        // γ = 1: every non-terminal joint state can reach a joint arrival, so
        // Q(s, π(s)) = C2 = 10 off the goal and V(o) = 10 for o ≠ goal.
        let mdp = two_by_two();
        let exact = value_iteration(&mdp, 1.0, 1e-12).unwrap();
        let dist = PeerDistribution::uniform_non_goal(&mdp, 1);
        let v = compute_values(&mdp, &exact.q_star, &exact.policy, &dist, 0, &ValueOptions::default()).unwrap();
        assert_eq!(v.values(), &[10.0, 10.0, 10.0, 0.0]);
    }

    #[test]
    fn two_by_two_discounted_values() {
        // γ = 0.9. Cells 1 and 2 neighbour the goal (distance 1), cell 0 is at
        // distance 2. Optimal joint return is C2·γ^(max distance − 1).
        let spec = GridSpec::rendezvous(2).with_goal(3);
        let mdp = Rendezvous::new(spec, 2).unwrap();
        let exact = value_iteration(&mdp, 0.9, 1e-13).unwrap();
        let dist = PeerDistribution::uniform_non_goal(&mdp, 1);
        let v = compute_values(&mdp, &exact.q_star, &exact.policy, &dist, 0, &ValueOptions::default()).unwrap();
        let near = (10.0 + 10.0 + 9.0) / 3.0;
        let far = 9.0;
        for (o, want) in [(0, far), (1, near), (2, near), (3, 0.0)] {
            assert!((v.get(o) - want).abs() < 1e-9, "V({o}) = {} want {want}", v.get(o));
        }
    }

    #[test]
    fn constant_shift_moves_every_value() {
        let spec = GridSpec::rendezvous(3);
        let mdp = Rendezvous::new(spec, 2).unwrap();
        let exact = value_iteration(&mdp, 0.9, 1e-12).unwrap();
        let dist = PeerDistribution::uniform_non_goal(&mdp, 1);
        let opts = ValueOptions::default();
        let base = compute_values(&mdp, &exact.q_star, &exact.policy, &dist, 0, &opts).unwrap();
        let delta = 2.5;
        let shifted_q = exact.q_star.shifted(delta);
        let shifted = compute_values(&mdp, &shifted_q, &exact.policy, &dist, 0, &opts).unwrap();
        for o in 0..9 {
            if o == spec_goal(&mdp) {
                assert_eq!(shifted.get(o), 0.0);
            } else {
                assert!((shifted.get(o) - base.get(o) - delta).abs() < 1e-12);
            }
        }
    }

    fn spec_goal(mdp: &Rendezvous) -> usize {
        mdp.spec().goal
    }

    #[test]
    fn symmetric_cells_get_equal_values() {
        for (side, n) in [(3, 2), (3, 3), (5, 2)] {
            let mdp = Rendezvous::new(GridSpec::rendezvous(side), n).unwrap();
            let exact = value_iteration(&mdp, 0.9, 1e-12).unwrap();
            let dist = PeerDistribution::uniform_non_goal(&mdp, n - 1);
            let v = compute_values(&mdp, &exact.q_star, &exact.policy, &dist, 0, &ValueOptions::default()).unwrap();
            let spec = mdp.spec();
            for a in 0..spec.n_cells() {
                for b in 0..spec.n_cells() {
                    let (ra, ca) = (a / side, a % side);
                    let (rb, cb) = (b / side, b % side);
                    let mirror =
                        rb == side - 1 - ra && cb == ca || rb == ra && cb == side - 1 - ca || rb == ca && cb == ra;
                    if mirror {
                        assert!((v.get(a) - v.get(b)).abs() < 1e-9, "{side}x{side} N={n}: cells {a} {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn values_decrease_with_distance_to_goal() {
        for side in [3, 4, 5] {
            let mdp = Rendezvous::new(GridSpec::rendezvous(side), 2).unwrap();
            let exact = value_iteration(&mdp, 0.9, 1e-12).unwrap();
            let dist = PeerDistribution::uniform_non_goal(&mdp, 1);
            let v = compute_values(&mdp, &exact.q_star, &exact.policy, &dist, 0, &ValueOptions::default()).unwrap();
            let spec = mdp.spec();
            for a in 0..spec.n_cells() {
                for b in 0..spec.n_cells() {
                    let (da, db) = (spec.manhattan_to_goal(a), spec.manhattan_to_goal(b));
                    if a != spec.goal && b != spec.goal && da < db {
                        assert!(v.get(a) >= v.get(b) - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn monte_carlo_agrees_with_exact_sum() {
        let mdp = Rendezvous::new(GridSpec::rendezvous(3), 3).unwrap();
        let exact = value_iteration(&mdp, 0.9, 1e-12).unwrap();
        let dist = PeerDistribution::uniform_non_goal(&mdp, 2);
        let e = compute_values(&mdp, &exact.q_star, &exact.policy, &dist, 1, &ValueOptions::default()).unwrap();
        let opts = ValueOptions {
            exact_cap: 10,
            mc_samples: 100_000,
            seed: 3,
        };
        let mc = compute_values(&mdp, &exact.q_star, &exact.policy, &dist, 1, &opts).unwrap();
        let se = mc.standard_error.unwrap();
        assert!(se > 0.0 && se < 0.05);
        for o in 0..9 {
            assert!((mc.get(o) - e.get(o)).abs() < 5.0 * se + 1e-12);
        }
        assert!(e.standard_error.is_none());
    }

    #[test]
    fn mismatched_peer_count_is_rejected() {
        let mdp = two_by_two();
        let exact = value_iteration(&mdp, 1.0, 1e-12).unwrap();
        let dist = PeerDistribution::uniform_non_goal(&mdp, 2);
        let err = compute_values(&mdp, &exact.q_star, &exact.policy, &dist, 0, &ValueOptions::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    fn always_stop(mdp: &Rendezvous) -> GreedyPolicy {
        let n = mdp.n_agents();
        let states = MixedRadix::uniform(mdp.n_observations(), n);
        let actions = MixedRadix::uniform(mdp.n_actions(), n);
        let stop = actions.encode(&vec![Action::Stop.index(); n]);
        GreedyPolicy::from_choices(states.clone(), actions, vec![stop; states.size()]).unwrap()
    }

    fn tv(a: &PeerDistribution, b: &PeerDistribution) -> f64 {
        let mut keys: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
        a.for_each(|t, p| keys.entry(t.to_vec()).or_default().0 += p);
        b.for_each(|t, p| keys.entry(t.to_vec()).or_default().1 += p);
        keys.values().map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
    }

    #[test]
    fn stop_policy_reproduces_initial_law() {
        let mdp = Rendezvous::new(GridSpec::rendezvous(3), 2).unwrap();
        let dist = empirical_peer_distribution(&mdp, &always_stop(&mdp), 0, 20_000, 1).unwrap();
        assert!((dist.total_mass() - 1.0).abs() < 1e-12);
        let uniform = PeerDistribution::uniform_non_goal(&mdp, 1);
        assert!(tv(&dist, &uniform) < 0.02, "tv {}", tv(&dist, &uniform));
        // the goal cell is never visited by a peer
        if let PeerTable::Joint(t) = &dist.table {
            assert!(t.keys().all(|k| k[0] != 4));
        }
    }

    #[test]
    fn empirical_distribution_converges() {
        let mdp = Rendezvous::new(GridSpec::rendezvous(3), 2).unwrap();
        let exact = value_iteration(&mdp, 0.9, 1e-12).unwrap();
        let small = empirical_peer_distribution(&mdp, &exact.policy, 1, 10_000, 8).unwrap();
        let large = empirical_peer_distribution(&mdp, &exact.policy, 1, 20_000, 8).unwrap();
        assert!((small.total_mass() - 1.0).abs() < 1e-12);
        assert!(tv(&small, &large) < 0.05);
    }

    #[test]
    fn value_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let v = ValueTable::new(vec![0.1, 2.0 / 3.0, 1e-300, 0.0], 3, 1, PeerDistributionKind::Empirical);
        v.write_csv(&path).unwrap();
        assert_eq!(ValueTable::read_csv(&path).unwrap(), v);
    }
}
