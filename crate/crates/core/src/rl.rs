//! Tabular Q-learning: a centralized learner over joint states and joint
//! actions, and independent per-agent learners that condition on their own
//! observation plus the codewords received from every peer.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sample_start, JointMdp, TerminalKind};
use crate::error::{Error, Result};
use crate::tocd::{Codebook, LinkCodebooks};

/// Default budget on the number of Q-table entries a single run may allocate.
pub const DEFAULT_MAX_TABLE_ENTRIES: u128 = 10_000_000;

/// Row-major mixed-radix codec between index tuples and flat indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedRadix {
    radices: Vec<usize>,
}

impl MixedRadix {
    pub fn new(radices: Vec<usize>) -> Self {
        MixedRadix { radices }
    }

    pub fn uniform(radix: usize, digits: usize) -> Self {
        MixedRadix::new(vec![radix; digits])
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn digits(&self) -> usize {
        self.radices.len()
    }

    /// Product of the radices, or `None` on overflow.
    pub fn size_u128(&self) -> Option<u128> {
        self.radices
            .iter()
            .try_fold(1u128, |acc, &r| acc.checked_mul(r as u128))
    }

    pub fn size(&self) -> usize {
        self.radices.iter().product()
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.radices.len());
        digits.iter().zip(&self.radices).fold(0, |acc, (&d, &r)| acc * r + d)
    }

    pub fn decode_into(&self, mut index: usize, out: &mut [usize]) {
        for (slot, &r) in out.iter_mut().zip(&self.radices).rev() {
            *slot = index % r;
            index /= r;
        }
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        self.decode_into(index, &mut out);
        out
    }
}

/// Dense action-value table. Rows are encoded states, columns encoded actions.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    states: MixedRadix,
    actions: MixedRadix,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(states: MixedRadix, actions: MixedRadix) -> Self {
        let len = states.size() * actions.size();
        QTable {
            states,
            actions,
            values: vec![0.0; len],
        }
    }

    pub fn from_values(states: MixedRadix, actions: MixedRadix, values: Vec<f64>) -> Result<Self> {
        if values.len() != states.size() * actions.size() {
            return Err(Error::contract(format!(
                "{} values for a {}x{} table",
                values.len(),
                states.size(),
                actions.size()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("Q-table entries must be finite"));
        }
        Ok(QTable {
            states,
            actions,
            values,
        })
    }

    pub fn state_codec(&self) -> &MixedRadix {
        &self.states
    }

    pub fn action_codec(&self) -> &MixedRadix {
        &self.actions
    }

    pub fn n_states(&self) -> usize {
        self.states.size()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.size()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, state: usize) -> &[f64] {
        let m = self.n_actions();
        &self.values[state * m..(state + 1) * m]
    }

    pub fn row_mut(&mut self, state: usize) -> &mut [f64] {
        let m = self.n_actions();
        &mut self.values[state * m..(state + 1) * m]
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions() + action]
    }

    pub fn max(&self, state: usize) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    pub fn greedy_policy(&self) -> GreedyPolicy {
        GreedyPolicy {
            states: self.states.clone(),
            actions: self.actions.clone(),
            choice: (0..self.n_states()).map(|s| self.greedy(s)).collect(),
        }
    }

    /// Adds `delta` to every entry.
    pub fn shifted(&self, delta: f64) -> QTable {
        QTable {
            states: self.states.clone(),
            actions: self.actions.clone(),
            values: self.values.iter().map(|v| v + delta).collect(),
        }
    }

    /// CSV layout: one comment line naming the codecs, a header, then one row
    /// per encoded state with one column per encoded action.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let join = |r: &[usize]| r.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        let _ = writeln!(
            out,
            "# esaic-qtable v1 states={} actions={}",
            join(self.states.radices()),
            join(self.actions.radices())
        );
        out.push_str("state");
        for a in 0..self.n_actions() {
            let _ = write!(out, ",a{a}");
        }
        out.push('\n');
        for s in 0..self.n_states() {
            let _ = write!(out, "{s}");
            for v in self.row(s) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::write_file(path, &self.to_csv())
    }

    pub fn read_csv(path: &Path) -> Result<QTable> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let mut next_line = || -> Result<Option<String>> { lines.next().transpose().map_err(|e| Error::io(path, e)) };
        let head = next_line()?.ok_or_else(|| Error::parse(path, "empty file"))?;
        let rest = head
            .strip_prefix("# esaic-qtable v1 ")
            .ok_or_else(|| Error::parse(path, "missing esaic-qtable v1 header"))?;
        let mut states = None;
        let mut actions = None;
        for field in rest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::parse(path, format!("bad header field {field}")))?;
            let radices = value
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, e.to_string()))?;
            match key {
                "states" => states = Some(MixedRadix::new(radices)),
                "actions" => actions = Some(MixedRadix::new(radices)),
                _ => return Err(Error::parse(path, format!("unknown header key {key}"))),
            }
        }
        let states = states.ok_or_else(|| Error::parse(path, "header lacks states="))?;
        let actions = actions.ok_or_else(|| Error::parse(path, "header lacks actions="))?;
        next_line()?; // column names
        let mut values = Vec::with_capacity(states.size() * actions.size());
        while let Some(line) = next_line()? {
            if line.is_empty() {
                continue;
            }
            for cell in line.split(',').skip(1) {
                values.push(
                    cell.parse::<f64>()
                        .map_err(|e| Error::parse(path, format!("{cell}: {e}")))?,
                );
            }
        }
        QTable::from_values(states, actions, values)
    }
}

/// First index of the maximum; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Deterministic policy extracted from a Q-table.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPolicy {
    states: MixedRadix,
    actions: MixedRadix,
    choice: Vec<usize>,
}

impl GreedyPolicy {
    pub fn from_choices(states: MixedRadix, actions: MixedRadix, choice: Vec<usize>) -> Result<Self> {
        if choice.len() != states.size() || choice.iter().any(|&a| a >= actions.size()) {
            return Err(Error::contract("policy table does not match its codecs"));
        }
        Ok(GreedyPolicy {
            states,
            actions,
            choice,
        })
    }

    pub fn state_codec(&self) -> &MixedRadix {
        &self.states
    }

    pub fn action_codec(&self) -> &MixedRadix {
        &self.actions
    }

    pub fn action(&self, state: usize) -> usize {
        self.choice[state]
    }

    pub fn choices(&self) -> &[usize] {
        &self.choice
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    /// `Q ← Q + α (target − Q)`
    Standard,
    /// `Q ← max(Q, target)`, for deterministic cooperative tasks.
    Optimistic,
}

impl UpdateRule {
    #[inline]
    fn apply(self, q: &mut f64, target: f64, alpha: f64) {
        match self {
            UpdateRule::Standard => *q += alpha * (target - *q),
            UpdateRule::Optimistic => {
                if target > *q {
                    *q = target
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub episodes: usize,
    pub seed: u64,
    pub update_rule: UpdateRule,
    pub max_table_entries: u128,
}

impl TrainConfig {
    pub fn new(discount: f64, episodes: usize, seed: u64, update_rule: UpdateRule) -> Self {
        TrainConfig {
            learning_rate: 0.1,
            discount,
            episodes,
            seed,
            update_rule,
            max_table_entries: DEFAULT_MAX_TABLE_ENTRIES,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::config(format!(
                "learning rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::config(format!("discount {} outside [0, 1]", self.discount)));
        }
        Ok(())
    }
}

/// Linear exploration decay `ε(k) = 1 − 0.99·k/K`, evaluated as `0.01 + 0.99·(K − k)/K`.
pub fn epsilon(k: usize, total: usize) -> f64 {
    0.01 + 0.99 * ((total as f64 - k as f64) / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpsilonSchedule {
    pub total_episodes: usize,
}

impl EpsilonSchedule {
    pub fn at(&self, k: usize) -> f64 {
        epsilon(k, self.total_episodes)
    }
}

/// Per-episode learning curve of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub returns: Vec<f64>,
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CentralizedSolution {
    pub q: QTable,
    pub policy: GreedyPolicy,
    pub trace: TrainingTrace,
}

fn capacity_check(what: &str, required: Option<u128>, budget: u128) -> Result<()> {
    match required {
        Some(n) if n <= budget => Ok(()),
        Some(n) => Err(Error::Capacity {
            what: what.to_string(),
            required: n,
            budget,
        }),
        None => Err(Error::Capacity {
            what: what.to_string(),
            required: u128::MAX,
            budget,
        }),
    }
}

/// Entries of the joint Q-table for `n_agents` agents: `(|Ω|·|M|)^N`.
pub fn joint_table_entries(n_observations: usize, n_actions: usize, n_agents: usize) -> Option<u128> {
    (n_observations as u128 * n_actions as u128).checked_pow(n_agents as u32)
}

/// Centralized ε-greedy Q-learning over joint states and joint actions.
pub fn centralized_q_learning<M: JointMdp + ?Sized>(mdp: &M, cfg: &TrainConfig) -> Result<CentralizedSolution> {
    cfg.validate()?;
    let n = mdp.n_agents();
    let states = MixedRadix::uniform(mdp.n_observations(), n);
    let actions = MixedRadix::uniform(mdp.n_actions(), n);
    capacity_check(
        "centralized Q-table",
        joint_table_entries(mdp.n_observations(), mdp.n_actions(), n),
        cfg.max_table_entries,
    )?;
    let mut q = QTable::zeros(states.clone(), actions.clone());
    let n_joint = actions.size();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = TrainingTrace {
        returns: Vec::with_capacity(cfg.episodes),
        epsilons: Vec::with_capacity(cfg.episodes),
    };
    let mut obs = vec![0; n];
    let mut next = vec![0; n];
    let mut joint = vec![0; n];
    for k in 1..=cfg.episodes {
        let eps = epsilon(k, cfg.episodes);
        sample_start(mdp, &mut rng, &mut obs);
        let mut s = states.encode(&obs);
        let mut ret = 0.0;
        let mut weight = 1.0;
        for _ in 0..mdp.max_steps() {
            let a = if rng.random::<f64>() < eps {
                rng.random_range(0..n_joint)
            } else {
                q.greedy(s)
            };
            actions.decode_into(a, &mut joint);
            let (r, kind) = mdp.step(&obs, &joint, &mut next);
            let s_next = states.encode(&next);
            let target = if kind == TerminalKind::None {
                r + cfg.discount * q.max(s_next)
            } else {
                r
            };
            let i = s * n_joint + a;
            cfg.update_rule.apply(&mut q.values[i], target, cfg.learning_rate);
            ret += weight * r;
            weight *= cfg.discount;
            if kind != TerminalKind::None {
                break;
            }
            std::mem::swap(&mut obs, &mut next);
            s = s_next;
        }
        trace.returns.push(ret);
        trace.epsilons.push(eps);
    }
    let policy = q.greedy_policy();
    Ok(CentralizedSolution { q, policy, trace })
}

/// What agent `i` conditions on: its own cell and one codeword per peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalContext {
    pub own_obs: usize,
    pub inbound: Vec<usize>,
}

/// The inbound links of one agent, in increasing sender order.
struct Inbox<'a> {
    senders: Vec<usize>,
    books: Vec<&'a Codebook>,
    codec: MixedRadix,
}

impl<'a> Inbox<'a> {
    fn new(agent: usize, n_obs: usize, n_agents: usize, codebooks: &'a LinkCodebooks) -> Result<Self> {
        let mut senders = Vec::with_capacity(n_agents.saturating_sub(1));
        let mut books = Vec::with_capacity(n_agents.saturating_sub(1));
        let mut radices = vec![n_obs];
        for j in (0..n_agents).filter(|&j| j != agent) {
            let book = codebooks
                .get(j, agent)
                .ok_or_else(|| Error::config(format!("no codebook for link {j} -> {agent}")))?;
            if book.n_observations() != n_obs {
                return Err(Error::config(format!(
                    "codebook for link {j} -> {agent} covers {} observations, environment has {n_obs}",
                    book.n_observations()
                )));
            }
            senders.push(j);
            radices.push(book.size());
            books.push(book);
        }
        Ok(Inbox {
            senders,
            books,
            codec: MixedRadix::new(radices),
        })
    }

    fn context(&self, agent: usize, obs: &[usize]) -> LocalContext {
        LocalContext {
            own_obs: obs[agent],
            inbound: self
                .senders
                .iter()
                .zip(&self.books)
                .map(|(&j, b)| b.encode(obs[j]))
                .collect(),
        }
    }

    #[inline]
    fn encode(&self, agent: usize, obs: &[usize]) -> usize {
        let mut idx = obs[agent];
        for ((&j, b), &r) in self.senders.iter().zip(&self.books).zip(&self.codec.radices()[1..]) {
            idx = idx * r + b.encode(obs[j]);
        }
        idx
    }

    fn encode_context(&self, ctx: &LocalContext) -> Result<usize> {
        if ctx.inbound.len() != self.books.len() {
            return Err(Error::contract(format!(
                "{} inbound codewords, expected {}",
                ctx.inbound.len(),
                self.books.len()
            )));
        }
        let mut digits = Vec::with_capacity(ctx.inbound.len() + 1);
        digits.push(ctx.own_obs);
        for (&c, &r) in ctx.inbound.iter().zip(&self.codec.radices()[1..]) {
            if c >= r {
                return Err(Error::contract(format!("codeword {c} outside a {r}-word codebook")));
            }
            digits.push(c);
        }
        if ctx.own_obs >= self.codec.radices()[0] {
            return Err(Error::contract(format!("observation {} out of range", ctx.own_obs)));
        }
        Ok(self.codec.encode(&digits))
    }
}

/// Per-agent tables and policies from decentralized training.
#[derive(Debug, Clone)]
pub struct DistributedSolution {
    pub tables: Vec<QTable>,
    pub policies: Vec<GreedyPolicy>,
    pub trace: TrainingTrace,
}

impl DistributedSolution {
    /// Greedy local action for a context, validating codeword ranges.
    pub fn act(&self, agent: usize, ctx: &LocalContext, codebooks: &LinkCodebooks) -> Result<usize> {
        let n_agents = self.tables.len();
        let table = self
            .tables
            .get(agent)
            .ok_or_else(|| Error::contract(format!("agent {agent} of {n_agents}")))?;
        let inbox = Inbox::new(agent, table.state_codec().radices()[0], n_agents, codebooks)?;
        let row = inbox.encode_context(ctx)?;
        Ok(self.policies[agent].action(row))
    }
}

/// Entries of one agent's local table: `|Ω| · Π_j B_{j,i} · |M|`.
pub fn local_table_entries(n_observations: usize, n_actions: usize, inbound_sizes: &[usize]) -> u128 {
    inbound_sizes
        .iter()
        .fold(n_observations as u128 * n_actions as u128, |acc, &b| acc * b as u128)
}

/// Decentralized ε-greedy Q-learning with fixed quantized messages.
///
/// Each step every agent encodes its cell through its outbound codebooks, the
/// messages arrive within the same step, and each agent acts ε-greedily on
/// its own `(cell, inbound codewords)` row.
pub fn distributed_q_learning<M: JointMdp + ?Sized>(
    mdp: &M,
    codebooks: &LinkCodebooks,
    cfg: &TrainConfig,
) -> Result<DistributedSolution> {
    distributed_inner(mdp, codebooks, cfg, &mut |_, _| {})
}

fn distributed_inner<M: JointMdp + ?Sized>(
    mdp: &M,
    codebooks: &LinkCodebooks,
    cfg: &TrainConfig,
    after_episode: &mut dyn FnMut(usize, &[QTable]),
) -> Result<DistributedSolution> {
    cfg.validate()?;
    let n = mdp.n_agents();
    let n_obs = mdp.n_observations();
    let n_act = mdp.n_actions();
    let inboxes = (0..n)
        .map(|i| Inbox::new(i, n_obs, n, codebooks))
        .collect::<Result<Vec<_>>>()?;
    let total: u128 = inboxes
        .iter()
        .map(|b| b.codec.size_u128().unwrap_or(u128::MAX).saturating_mul(n_act as u128))
        .fold(0u128, |a, b| a.saturating_add(b));
    capacity_check("decentralized Q-tables", Some(total), cfg.max_table_entries)?;

    let mut tables: Vec<QTable> = inboxes
        .iter()
        .map(|b| QTable::zeros(b.codec.clone(), MixedRadix::uniform(n_act, 1)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = TrainingTrace {
        returns: Vec::with_capacity(cfg.episodes),
        epsilons: Vec::with_capacity(cfg.episodes),
    };
    let mut obs = vec![0; n];
    let mut next = vec![0; n];
    let mut ctx = vec![0; n];
    let mut next_ctx = vec![0; n];
    let mut acts = vec![0; n];
    for k in 1..=cfg.episodes {
        let eps = epsilon(k, cfg.episodes);
        sample_start(mdp, &mut rng, &mut obs);
        for i in 0..n {
            ctx[i] = inboxes[i].encode(i, &obs);
        }
        let mut ret = 0.0;
        let mut weight = 1.0;
        for _ in 0..mdp.max_steps() {
            for i in 0..n {
                acts[i] = if rng.random::<f64>() < eps {
                    rng.random_range(0..n_act)
                } else {
                    tables[i].greedy(ctx[i])
                };
            }
            let (r, kind) = mdp.step(&obs, &acts, &mut next);
            let terminal = kind != TerminalKind::None;
            for i in 0..n {
                let target = if terminal {
                    r
                } else {
                    next_ctx[i] = inboxes[i].encode(i, &next);
                    r + cfg.discount * tables[i].max(next_ctx[i])
                };
                let cell = &mut tables[i].row_mut(ctx[i])[acts[i]];
                cfg.update_rule.apply(cell, target, cfg.learning_rate);
            }
            ret += weight * r;
            weight *= cfg.discount;
            if terminal {
                break;
            }
            std::mem::swap(&mut obs, &mut next);
            std::mem::swap(&mut ctx, &mut next_ctx);
        }
        trace.returns.push(ret);
        trace.epsilons.push(eps);
        after_episode(k, &tables);
    }
    let policies = tables.iter().map(QTable::greedy_policy).collect();
    Ok(DistributedSolution {
        tables,
        policies,
        trace,
    })
}

/// Draws `count` joint start states from a seeded stream.
pub fn sample_starts<M: JointMdp + ?Sized>(mdp: &M, count: usize, rng: &mut dyn RngCore) -> Vec<Vec<usize>> {
    (0..count)
        .map(|_| {
            let mut s = vec![0; mdp.n_agents()];
            sample_start(mdp, rng, &mut s);
            s
        })
        .collect()
}

/// Discounted return of the greedy joint policy from one start state.
pub fn centralized_return<M: JointMdp + ?Sized>(mdp: &M, policy: &GreedyPolicy, start: &[usize]) -> f64 {
    let n = mdp.n_agents();
    let mut obs = start.to_vec();
    let mut next = vec![0; n];
    let mut joint = vec![0; n];
    let mut ret = 0.0;
    let mut weight = 1.0;
    for _ in 0..mdp.max_steps() {
        if mdp.is_terminal(&obs) {
            break;
        }
        let s = policy.state_codec().encode(&obs);
        policy.action_codec().decode_into(policy.action(s), &mut joint);
        let (r, kind) = mdp.step(&obs, &joint, &mut next);
        ret += weight * r;
        weight *= mdp.discount();
        if kind != TerminalKind::None {
            break;
        }
        std::mem::swap(&mut obs, &mut next);
    }
    ret
}

/// Discounted return when every agent follows its greedy local policy.
pub fn distributed_return<M: JointMdp + ?Sized>(
    mdp: &M,
    codebooks: &LinkCodebooks,
    solution: &DistributedSolution,
    start: &[usize],
) -> Result<f64> {
    let n = mdp.n_agents();
    let inboxes = (0..n)
        .map(|i| Inbox::new(i, mdp.n_observations(), n, codebooks))
        .collect::<Result<Vec<_>>>()?;
    let mut obs = start.to_vec();
    let mut next = vec![0; n];
    let mut acts = vec![0; n];
    let mut ret = 0.0;
    let mut weight = 1.0;
    for _ in 0..mdp.max_steps() {
        if mdp.is_terminal(&obs) {
            break;
        }
        for i in 0..n {
            acts[i] = solution.policies[i].action(inboxes[i].encode(i, &obs));
        }
        let (r, kind) = mdp.step(&obs, &acts, &mut next);
        ret += weight * r;
        weight *= mdp.discount();
        if kind != TerminalKind::None {
            break;
        }
        std::mem::swap(&mut obs, &mut next);
    }
    Ok(ret)
}

/// Context an agent would see in joint state `obs`.
pub fn local_context(
    agent: usize,
    obs: &[usize],
    n_observations: usize,
    codebooks: &LinkCodebooks,
) -> Result<LocalContext> {
    let inbox = Inbox::new(agent, n_observations, obs.len(), codebooks)?;
    Ok(inbox.context(agent, obs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridSpec, Rendezvous};
    use crate::oracle::value_iteration;
    use crate::tocd::LinkCodebooks;
    use proptest::prelude::*;

    /// One agent on a line `0 - 1 - 2` with the goal at cell 2.
    struct Chain;

    impl JointMdp for Chain {
        fn n_agents(&self) -> usize {
            1
        }
        fn n_observations(&self) -> usize {
            3
        }
        fn n_actions(&self) -> usize {
            2 // 0 = toward goal, 1 = stay
        }
        fn discount(&self) -> f64 {
            1.0
        }
        fn max_steps(&self) -> usize {
            30
        }
        fn is_terminal(&self, obs: &[usize]) -> bool {
            obs[0] == 2
        }
        fn step(&self, obs: &[usize], actions: &[usize], next: &mut [usize]) -> (f64, TerminalKind) {
            next[0] = if actions[0] == 0 { obs[0] + 1 } else { obs[0] };
            if next[0] == 2 {
                (10.0, TerminalKind::Full)
            } else {
                (0.0, TerminalKind::None)
            }
        }
        fn start_cells(&self) -> &[usize] {
            &[0, 1]
        }
    }

    #[test]
    fn epsilon_schedule_values() {
        assert_eq!(epsilon(100, 100), 0.01);
        assert_eq!(epsilon(50, 100), 0.505);
        assert!((epsilon(1, 100) - (1.0 - 0.99 / 100.0)).abs() < 1e-15);
        assert!((epsilon(1, 1_000_000) - 1.0).abs() < 1e-5);
        let sched = EpsilonSchedule { total_episodes: 37 };
        for k in 1..=37 {
            let e = sched.at(k);
            assert!((0.01 - 1e-15..=1.0).contains(&e));
        }
    }

    #[test]
    fn mixed_radix_round_trip() {
        let codec = MixedRadix::new(vec![9, 3, 4]);
        for i in 0..codec.size() {
            assert_eq!(codec.encode(&codec.decode(i)), i);
        }
        assert_eq!(codec.encode(&[1, 0, 0]), 12);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn zero_episodes_leave_table_zero() {
        let mdp = Rendezvous::new(GridSpec::rendezvous(2).with_goal(3), 2).unwrap();
        let cfg = TrainConfig::new(0.9, 0, 1, UpdateRule::Standard);
        let sol = centralized_q_learning(&mdp, &cfg).unwrap();
        assert!(sol.q.values().iter().all(|&v| v == 0.0));
        assert!(sol.policy.choices().iter().all(|&a| a == 0));
        assert!(sol.trace.returns.is_empty());
    }

    #[test]
    fn chain_converges_to_hand_dp() {
        // V(1) = 10 via "toward"; V(0) = 10 with γ = 1.
        let cfg = TrainConfig {
            learning_rate: 0.5,
            ..TrainConfig::new(1.0, 2_000, 3, UpdateRule::Standard)
        };
        let sol = centralized_q_learning(&Chain, &cfg).unwrap();
        assert!((sol.q.get(1, 0) - 10.0).abs() < 1e-9);
        assert!((sol.q.get(0, 0) - 10.0).abs() < 1e-6);
        assert_eq!(sol.policy.action(1), 0);
        assert_eq!(sol.q.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn single_agent_adjacent_goal() {
        // 2x2, goal 3; cells 1 and 2 are adjacent, so Q(cell, move) -> C2.
        let spec = GridSpec::rendezvous(2).with_goal(3);
        let mdp = Rendezvous::new(spec.clone(), 1).unwrap();
        let cfg = TrainConfig::new(0.9, 5_000, 11, UpdateRule::Standard);
        let sol = centralized_q_learning(&mdp, &cfg).unwrap();
        // cell 2 (top-left) reaches 3 moving Right; cell 1 reaches it moving Up.
        assert!((sol.q.get(2, 0) - spec.reward_full).abs() < 1e-6);
        assert!((sol.q.get(1, 2) - spec.reward_full).abs() < 1e-6);
        assert_eq!(sol.policy.action(2), 0);
        assert_eq!(sol.policy.action(1), 2);
    }

    #[test]
    fn centralized_matches_oracle_on_two_by_two() {
        let mdp = Rendezvous::new(GridSpec::rendezvous(2).with_goal(3).with_discount(1.0), 2).unwrap();
        let exact = value_iteration(&mdp, 1.0, 1e-12).unwrap();
        let cfg = TrainConfig::new(1.0, 3_000, 5, UpdateRule::Standard);
        let sol = centralized_q_learning(&mdp, &cfg).unwrap();
        for &a in mdp.start_cells() {
            for &b in mdp.start_cells() {
                let start = [a, b];
                let s = sol.q.state_codec().encode(&start);
                assert_eq!(centralized_return(&mdp, &sol.policy, &start), exact.v_star[s]);
            }
        }
    }

    #[test]
    fn capacity_error_names_entry_count() {
        let mdp = Rendezvous::new(GridSpec::rendezvous(8), 3).unwrap();
        let cfg = TrainConfig::new(0.9, 1, 0, UpdateRule::Standard);
        match centralized_q_learning(&mdp, &cfg) {
            Err(Error::Capacity { required, .. }) => assert_eq!(required, 320u128.pow(3)),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn distributed_requires_every_link() {
        let mdp = Rendezvous::new(GridSpec::rendezvous(3), 3).unwrap();
        let books = LinkCodebooks::identity(2, 9);
        let cfg = TrainConfig::new(0.9, 10, 0, UpdateRule::Optimistic);
        assert!(matches!(
            distributed_q_learning(&mdp, &books, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn distributed_replay_is_bitwise_identical() {
        let mdp = Rendezvous::new(GridSpec::rendezvous(3), 2).unwrap();
        let books = LinkCodebooks::identity(2, 9);
        let cfg = TrainConfig::new(0.9, 3_000, 42, UpdateRule::Optimistic);
        let a = distributed_q_learning(&mdp, &books, &cfg).unwrap();
        let b = distributed_q_learning(&mdp, &books, &cfg).unwrap();
        for (x, y) in a.tables.iter().zip(&b.tables) {
            let xb: Vec<u64> = x.values().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn act_rejects_out_of_range_codeword() {
        let mdp = Rendezvous::new(GridSpec::rendezvous(3), 2).unwrap();
        let books = LinkCodebooks::silent(2, 9);
        let cfg = TrainConfig::new(0.9, 10, 0, UpdateRule::Optimistic);
        let sol = distributed_q_learning(&mdp, &books, &cfg).unwrap();
        let ok = LocalContext {
            own_obs: 0,
            inbound: vec![0],
        };
        assert!(sol.act(0, &ok, &books).is_ok());
        let bad = LocalContext {
            own_obs: 0,
            inbound: vec![1],
        };
        assert!(matches!(sol.act(0, &bad, &books), Err(Error::Contract(_))));
    }

    #[test]
    fn qtable_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        let mdp = Rendezvous::new(GridSpec::rendezvous(2).with_goal(3), 2).unwrap();
        let sol = centralized_q_learning(&mdp, &TrainConfig::new(0.9, 500, 9, UpdateRule::Standard)).unwrap();
        sol.q.write_csv(&path).unwrap();
        let back = QTable::read_csv(&path).unwrap();
        assert_eq!(back, sol.q);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn optimistic_entries_never_decrease(seed in 0u64..1_000) {
            let mdp = Rendezvous::new(GridSpec::rendezvous(3), 2).unwrap();
            let books = LinkCodebooks::identity(2, 9);
            let cfg = TrainConfig::new(0.9, 300, seed, UpdateRule::Optimistic);
            let mut prev: Option<Vec<QTable>> = None;
            let mut decreased = false;
            distributed_inner(&mdp, &books, &cfg, &mut |_, tables| {
                if let Some(p) = &prev {
                    for (old, new) in p.iter().zip(tables) {
                        decreased |= old.values().iter().zip(new.values()).any(|(a, b)| b < a);
                    }
                }
                prev = Some(tables.to_vec());
            }).unwrap();
            prop_assert!(!decreased);
            for t in prev.unwrap() {
                prop_assert!(t.values().iter().all(|&v| (0.0..=10.0).contains(&v)));
            }
        }

        #[test]
        fn centralized_values_bounded(seed in 0u64..1_000, gamma in 0.5f64..0.99) {
            let mdp = Rendezvous::new(GridSpec::rendezvous(3).with_discount(gamma), 2).unwrap();
            let sol = centralized_q_learning(&mdp, &TrainConfig::new(gamma, 300, seed, UpdateRule::Standard)).unwrap();
            let cap = 10.0 / (1.0 - gamma);
            prop_assert!(sol.q.values().iter().all(|&v| v >= 0.0 && v <= cap && v.is_finite()));
        }
    }
}
