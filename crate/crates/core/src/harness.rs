//! Experiment orchestration: scenario files, the three pipelines, metrics and
//! artifact emission.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{GridSpec, JointMdp, Rendezvous};
use crate::error::{Error, Result};
use crate::oracle::{
    check_affine_relation, check_c1, value_iteration_capped, AffineFitReport, ExactSolution, PartitionReport,
    ORACLE_MAX_PAIRS,
};
use crate::rl::{
    centralized_q_learning, centralized_return, distributed_q_learning, distributed_return, joint_table_entries,
    local_table_entries, sample_starts, CentralizedSolution, DistributedSolution, TrainConfig, TrainingTrace,
    UpdateRule, DEFAULT_MAX_TABLE_ENTRIES,
};
use crate::tocd::{build_link_codebooks, design_quantizer, BitBudgetMatrix, LinkCodebooks};
use crate::voi::{
    compute_values, empirical_peer_distribution, PeerDistribution, PeerDistributionKind, ValueOptions, ValueTable,
};
use crate::write_file;

pub const CURVE_SCHEMA: &str = "esaic.curve.v1";
pub const RECORD_SCHEMA: &str = "esaic.record.v1";
pub const SUMMARY_SCHEMA: &str = "esaic.summary.v1";

const ORACLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Centralized,
    Saic,
    Esaic,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Centralized => "centralized",
            Pipeline::Saic => "saic",
            Pipeline::Esaic => "esaic",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "centralized" => Ok(Pipeline::Centralized),
            "saic" => Ok(Pipeline::Saic),
            "esaic" => Ok(Pipeline::Esaic),
            other => Err(Error::config(format!("unknown pipeline `{other}`"))),
        }
    }
}

/// Grid section of a scenario file. Unset fields take the rendezvous defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub side: Option<usize>,
    pub goal: Option<usize>,
    pub reward_partial: Option<f64>,
    pub reward_full: Option<f64>,
    pub discount: Option<f64>,
    pub max_steps: Option<usize>,
}

impl GridConfig {
    pub fn resolve(&self) -> Result<GridSpec> {
        let side = self.side.unwrap_or(3);
        let mut spec = GridSpec::rendezvous(side);
        if let Some(g) = self.goal {
            spec.goal = g;
        }
        if let Some(r) = self.reward_partial {
            spec.reward_partial = r;
        }
        if let Some(r) = self.reward_full {
            spec.reward_full = r;
        }
        if let Some(d) = self.discount {
            spec.discount = d;
        }
        if let Some(m) = self.max_steps {
            spec.max_steps = m;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Training section of a scenario file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseConfig {
    /// Fixed episode count; otherwise `episodes_per_state` times the joint state count.
    pub episodes: Option<usize>,
    pub episodes_per_state: Option<usize>,
    pub learning_rate: Option<f64>,
    pub update_rule: Option<UpdateRule>,
    pub max_table_entries: Option<u64>,
}

/// Resolved training settings of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSettings {
    pub episodes: Option<usize>,
    pub episodes_per_state: usize,
    pub learning_rate: f64,
    pub update_rule: UpdateRule,
    pub max_table_entries: u64,
}

impl PhaseConfig {
    fn resolve(&self, rule: UpdateRule) -> Result<PhaseSettings> {
        let s = PhaseSettings {
            episodes: self.episodes,
            episodes_per_state: self.episodes_per_state.unwrap_or(200),
            learning_rate: self.learning_rate.unwrap_or(0.1),
            update_rule: self.update_rule.unwrap_or(rule),
            max_table_entries: self.max_table_entries.unwrap_or(DEFAULT_MAX_TABLE_ENTRIES as u64),
        };
        if !(s.learning_rate > 0.0 && s.learning_rate <= 1.0) {
            return Err(Error::config(format!(
                "learning rate {} outside (0, 1]",
                s.learning_rate
            )));
        }
        Ok(s)
    }
}

impl PhaseSettings {
    /// Episode budget for a table over `joint_states` states.
    pub fn episodes_for(&self, joint_states: u128) -> usize {
        self.episodes.unwrap_or_else(|| {
            let n = joint_states.saturating_mul(self.episodes_per_state as u128);
            usize::try_from(n).unwrap_or(usize::MAX)
        })
    }

    fn train_config(&self, discount: f64, episodes: usize, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(discount, episodes, seed, self.update_rule);
        cfg.learning_rate = self.learning_rate;
        cfg.max_table_entries = self.max_table_entries as u128;
        cfg
    }
}

/// A scenario file as written on disk (TOML).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub grid: GridConfig,
    pub n_agents: Option<usize>,
    /// Homogeneous per-link bit budget.
    pub budget: Option<u32>,
    /// Per-link budgets, row = sender; the diagonal is ignored.
    pub budget_matrix: Option<Vec<Vec<u32>>>,
    pub pipelines: Option<Vec<Pipeline>>,
    pub seeds: Option<Vec<u64>>,
    pub peer_dist: Option<PeerDistributionKind>,
    pub empirical_rollouts: Option<usize>,
    pub eval_episodes: Option<usize>,
    pub smoothing_window: Option<usize>,
    pub oracle_max_pairs: Option<u64>,
    pub value_exact_cap: Option<u64>,
    pub value_samples: Option<usize>,
    pub parallel: Option<bool>,
    pub centralized: PhaseConfig,
    pub decentralized: PhaseConfig,
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let grid = self.grid.resolve()?;
        let n_agents = self.n_agents.unwrap_or(2);
        if n_agents < 2 {
            return Err(Error::config("scenarios need at least two agents"));
        }
        let budgets = match (&self.budget, &self.budget_matrix) {
            (Some(_), Some(_)) => return Err(Error::config("give either `budget` or `budget_matrix`, not both")),
            (_, Some(rows)) => BitBudgetMatrix::from_rows(rows.clone())?,
            (b, None) => BitBudgetMatrix::homogeneous(n_agents, b.unwrap_or(2)),
        };
        if budgets.n_agents() != n_agents {
            return Err(Error::config(format!(
                "budget matrix is {0}x{0} but the scenario has {n_agents} agents",
                budgets.n_agents()
            )));
        }
        let mut pipelines = self.pipelines.clone().unwrap_or_else(|| vec![Pipeline::Esaic]);
        pipelines.sort();
        pipelines.dedup();
        if pipelines.is_empty() {
            return Err(Error::config("no pipeline selected"));
        }
        let seeds = self.seeds.clone().unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(Error::config("no seeds given"));
        }
        let eval_episodes = self.eval_episodes.unwrap_or(500);
        if eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be positive"));
        }
        let smoothing_window = self.smoothing_window.unwrap_or(100);
        if smoothing_window == 0 {
            return Err(Error::config("smoothing_window must be positive"));
        }
        let scenario = Scenario {
            grid,
            n_agents,
            budgets,
            centralized: self.centralized.resolve(UpdateRule::Standard)?,
            decentralized: self.decentralized.resolve(UpdateRule::Optimistic)?,
            pipelines,
            seeds,
            peer_dist: self.peer_dist.unwrap_or(PeerDistributionKind::UniformNonGoal),
            empirical_rollouts: self.empirical_rollouts.unwrap_or(10_000),
            eval_episodes,
            smoothing_window,
            oracle_max_pairs: self.oracle_max_pairs.unwrap_or(ORACLE_MAX_PAIRS as u64),
            value_exact_cap: self.value_exact_cap.unwrap_or(1_000_000),
            value_samples: self.value_samples.unwrap_or(100_000),
            parallel: self.parallel.unwrap_or(true),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// A fully resolved experiment: one D-JCCD instance plus run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: GridSpec,
    pub n_agents: usize,
    pub budgets: BitBudgetMatrix,
    pub centralized: PhaseSettings,
    pub decentralized: PhaseSettings,
    pub pipelines: Vec<Pipeline>,
    pub seeds: Vec<u64>,
    pub peer_dist: PeerDistributionKind,
    pub empirical_rollouts: usize,
    pub eval_episodes: usize,
    pub smoothing_window: usize,
    pub oracle_max_pairs: u64,
    pub value_exact_cap: u64,
    pub value_samples: usize,
    /// Fan seeds out over a thread pool. Does not affect results.
    #[serde(skip)]
    pub parallel: bool,
}

impl Scenario {
    /// Defaults for an `side × side` grid with `n_agents` agents.
    pub fn new(side: usize, n_agents: usize) -> Result<Self> {
        ScenarioFile {
            grid: GridConfig {
                side: Some(side),
                ..Default::default()
            },
            n_agents: Some(n_agents),
            ..Default::default()
        }
        .resolve()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n_obs = self.grid.n_cells();
        let per_agent = n_obs * crate::env::NUM_ACTIONS;
        for p in &self.pipelines {
            let agents = match p {
                Pipeline::Centralized | Pipeline::Saic => self.n_agents,
                Pipeline::Esaic => 2,
            };
            let required = joint_table_entries(n_obs, crate::env::NUM_ACTIONS, agents);
            let budget = self.centralized.max_table_entries as u128;
            if required.is_none_or(|r| r > budget) {
                return Err(Error::Capacity {
                    what: format!("{p} centralized phase (({per_agent})^{agents})"),
                    required: required.unwrap_or(u128::MAX),
                    budget,
                });
            }
        }
        Ok(())
    }

    pub fn mdp(&self) -> Result<Rendezvous> {
        Rendezvous::new(self.grid.clone(), self.n_agents)
    }

    /// Lowercase hex SHA-256 of the canonical JSON of the scenario minus seeds.
    pub fn scenario_hash(&self) -> String {
        let mut copy = self.clone();
        copy.seeds.clear();
        sha256_hex(&serde_json::to_vec(&copy).expect("scenario serializes"))
    }

    /// Short fingerprint of the full configuration including seeds.
    pub fn fingerprint(&self) -> String {
        let full = sha256_hex(&serde_json::to_vec(self).expect("scenario serializes"));
        full[..12].to_string()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Independent RNG stream for one phase of one seeded run.
fn phase_seed(seed: u64, phase: Phase) -> u64 {
    // splitmix64 finalizer over (seed, phase)
    let mut z = seed ^ (phase as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Centralized,
    Values,
    Quantizer,
    Decentralized,
    Evaluation,
}

/// Moving average: entry `k` is the mean of the last `min(k, window)` returns.
pub fn smooth(returns: &[f64], window: usize) -> Vec<f64> {
    (0..returns.len())
        .map(|k| {
            let lo = (k + 1).saturating_sub(window);
            let w = &returns[lo..=k];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// Learning curve as emitted to CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub returns: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub epsilons: Vec<f64>,
}

impl Curve {
    pub fn from_trace(trace: &TrainingTrace, window: usize) -> Self {
        Curve {
            smoothed: smooth(&trace.returns, window),
            returns: trace.returns.clone(),
            epsilons: trace.epsilons.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn to_csv(&self, meta: &str) -> String {
        let mut out = format!("# {CURVE_SCHEMA} {meta}\nepisode,return,smoothed,epsilon\n");
        for k in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                k + 1,
                self.returns[k],
                self.smoothed[k],
                self.epsilons[k]
            ));
        }
        out
    }

    pub fn parse_csv(text: &str) -> std::result::Result<Curve, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.starts_with(&format!("# {CURVE_SCHEMA}")) => {}
            other => return Err(format!("missing `{CURVE_SCHEMA}` header, found {other:?}")),
        }
        if lines.next() != Some("episode,return,smoothed,epsilon") {
            return Err("missing column header".into());
        }
        let mut curve = Curve::default();
        for (row, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(format!("row {}: expected 4 fields", row + 1));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", row + 1));
            if f[0].parse::<usize>().ok() != Some(row + 1) {
                return Err(format!("row {}: episode out of sequence", row + 1));
            }
            curve.returns.push(num(f[1])?);
            curve.smoothed.push(num(f[2])?);
            curve.epsilons.push(num(f[3])?);
        }
        Ok(curve)
    }

    pub fn read_csv(path: &Path) -> Result<Curve> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Curve::parse_csv(&text).map_err(|m| Error::parse(path, m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    /// Agents in the trained joint model, where applicable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    pub episodes: usize,
    pub table_entries: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSummary {
    pub sender: usize,
    pub receiver: usize,
    pub budget_bits: u32,
    pub clusters: usize,
    pub cost: f64,
    pub partition: Vec<usize>,
}

fn summarize_codebooks(books: &LinkCodebooks) -> Vec<CodebookSummary> {
    books
        .iter()
        .map(|((i, j), b)| CodebookSummary {
            sender: i,
            receiver: j,
            budget_bits: b.budget_bits,
            clusters: b.size(),
            cost: b.cost,
            partition: b.partition.clone(),
        })
        .collect()
}

/// Metrics of one pipeline on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema: String,
    pub pipeline: Pipeline,
    pub seed: u64,
    pub n_agents: usize,
    pub grid_side: usize,
    pub phases: Vec<PhaseRecord>,
    /// Training curve of the centralized phase.
    pub centralized_curve: Curve,
    /// Training curve of the decentralized phase (absent for the centralized pipeline).
    pub decentralized_curve: Option<Curve>,
    pub values: Option<Vec<f64>>,
    /// Largest gap between learned and exact observation values, when the oracle ran.
    pub value_gap: Option<f64>,
    pub codebooks: Vec<CodebookSummary>,
    pub eval_episodes: usize,
    pub eval_return: f64,
    pub oracle_return: Option<f64>,
    /// Σ greedy return ÷ Σ optimal return over the same evaluation starts.
    pub normalized_return: Option<f64>,
}

impl ExperimentRecord {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseRecord> {
        self.phases.iter().find(|p| p.phase == phase)
    }

    pub fn centralized_entries(&self) -> u128 {
        self.phase(Phase::Centralized).map_or(0, |p| p.table_entries)
    }

    pub fn centralized_seconds(&self) -> Option<f64> {
        self.phase(Phase::Centralized).and_then(|p| p.seconds)
    }

    /// Curve the record is plotted by: decentralized if present.
    pub fn curve(&self) -> &Curve {
        self.decentralized_curve.as_ref().unwrap_or(&self.centralized_curve)
    }

    fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for p in &mut r.phases {
            p.seconds = None;
        }
        r
    }
}

/// A pipeline's record together with the learned artifacts.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub record: ExperimentRecord,
    pub centralized: CentralizedSolution,
    pub values: Option<ValueTable>,
    pub codebooks: Option<LinkCodebooks>,
    pub decentralized: Option<DistributedSolution>,
}

/// Exact solutions shared by all seeds of a scenario.
#[derive(Debug, Clone, Default)]
pub struct OracleCache {
    /// Keyed by team size.
    pub solutions: BTreeMap<usize, ExactSolution>,
}

impl OracleCache {
    /// Solves the scenario's grid for each team size that fits the oracle budget.
    pub fn build(scenario: &Scenario, team_sizes: &[usize]) -> Result<Self> {
        let mut solutions = BTreeMap::new();
        for &n in team_sizes {
            if solutions.contains_key(&n) {
                continue;
            }
            let mdp = Rendezvous::new(scenario.grid.clone(), n)?;
            match value_iteration_capped(
                &mdp,
                scenario.grid.discount,
                ORACLE_TOL,
                scenario.oracle_max_pairs as u128,
            ) {
                Ok(sol) => {
                    solutions.insert(n, sol);
                }
                Err(Error::Capacity { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(OracleCache { solutions })
    }

    pub fn get(&self, n_agents: usize) -> Option<&ExactSolution> {
        self.solutions.get(&n_agents)
    }
}

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Timer(Instant::now())
    }

    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn pow_u128(base: usize, exp: usize) -> u128 {
    (base as u128).saturating_pow(exp as u32)
}

struct Evaluation {
    starts: Vec<Vec<usize>>,
}

impl Evaluation {
    fn new(scenario: &Scenario, mdp: &Rendezvous, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(phase_seed(seed, Phase::Evaluation));
        Evaluation {
            starts: sample_starts(mdp, scenario.eval_episodes, &mut rng),
        }
    }

    fn finish(&self, returns: &[f64], oracle: Option<&ExactSolution>) -> (f64, Option<f64>, Option<f64>) {
        let total: f64 = returns.iter().sum();
        let mean = total / returns.len() as f64;
        match oracle {
            Some(sol) => {
                let codec = sol.q_star.state_codec();
                let best: f64 = self.starts.iter().map(|s| sol.v_star[codec.encode(s)]).sum();
                let norm = if best > 0.0 { Some(total / best) } else { None };
                (mean, Some(best / returns.len() as f64), norm)
            }
            None => (mean, None, None),
        }
    }
}

struct Centralized {
    solution: CentralizedSolution,
    phase: PhaseRecord,
}

fn train_centralized(scenario: &Scenario, agents: usize, seed: u64) -> Result<Centralized> {
    let mdp = Rendezvous::new(scenario.grid.clone(), agents)?;
    let n_obs = mdp.n_observations();
    let episodes = scenario.centralized.episodes_for(pow_u128(n_obs, agents));
    let cfg = scenario
        .centralized
        .train_config(scenario.grid.discount, episodes, phase_seed(seed, Phase::Centralized));
    let t = Timer::start();
    let solution = centralized_q_learning(&mdp, &cfg)?;
    let seconds = t.seconds();
    Ok(Centralized {
        phase: PhaseRecord {
            phase: Phase::Centralized,
            agents: Some(agents),
            episodes,
            table_entries: joint_table_entries(n_obs, mdp.n_actions(), agents).unwrap_or(u128::MAX),
            seconds: Some(seconds),
        },
        solution,
    })
}

/// Full greedy evaluation of a centralized policy on the scenario's team.
pub fn run_centralized(scenario: &Scenario, seed: u64, oracle: &OracleCache) -> Result<PipelineRun> {
    let mdp = scenario.mdp()?;
    let c = train_centralized(scenario, scenario.n_agents, seed)?;
    let eval = Evaluation::new(scenario, &mdp, seed);
    let t = Timer::start();
    let returns: Vec<f64> = eval
        .starts
        .iter()
        .map(|s| centralized_return(&mdp, &c.solution.policy, s))
        .collect();
    let eval_phase = PhaseRecord {
        phase: Phase::Evaluation,
        agents: None,
        episodes: returns.len(),
        table_entries: 0,
        seconds: Some(t.seconds()),
    };
    let (eval_return, oracle_return, normalized_return) = eval.finish(&returns, oracle.get(scenario.n_agents));
    Ok(PipelineRun {
        record: ExperimentRecord {
            schema: RECORD_SCHEMA.into(),
            pipeline: Pipeline::Centralized,
            seed,
            n_agents: scenario.n_agents,
            grid_side: scenario.grid.side,
            phases: vec![c.phase, eval_phase],
            centralized_curve: Curve::from_trace(&c.solution.trace, scenario.smoothing_window),
            decentralized_curve: None,
            values: None,
            value_gap: None,
            codebooks: Vec::new(),
            eval_episodes: scenario.eval_episodes,
            eval_return,
            oracle_return,
            normalized_return,
        },
        centralized: c.solution,
        values: None,
        codebooks: None,
        decentralized: None,
    })
}

/// Observation values of agent 0 extracted from a centralized solution.
pub fn extract_values(
    scenario: &Scenario,
    agents: usize,
    q: &crate::rl::QTable,
    policy: &crate::rl::GreedyPolicy,
    seed: u64,
) -> Result<ValueTable> {
    let mdp = Rendezvous::new(scenario.grid.clone(), agents)?;
    let dist = match scenario.peer_dist {
        PeerDistributionKind::UniformNonGoal => PeerDistribution::uniform_non_goal(&mdp, agents - 1),
        PeerDistributionKind::Empirical => empirical_peer_distribution(
            &mdp,
            policy,
            0,
            scenario.empirical_rollouts,
            phase_seed(seed, Phase::Values),
        )?,
    };
    let opts = ValueOptions {
        exact_cap: scenario.value_exact_cap as u128,
        mc_samples: scenario.value_samples,
        seed: phase_seed(seed, Phase::Quantizer),
    };
    compute_values(&mdp, q, policy, &dist, 0, &opts)
}

fn run_quantized(scenario: &Scenario, pipeline: Pipeline, seed: u64, oracle: &OracleCache) -> Result<PipelineRun> {
    let trained_agents = match pipeline {
        Pipeline::Saic => scenario.n_agents,
        Pipeline::Esaic => 2,
        Pipeline::Centralized => unreachable!("not a quantized pipeline"),
    };
    let mdp = scenario.mdp()?;
    let n_obs = mdp.n_observations();
    let n_act = mdp.n_actions();
    let mut phases = Vec::new();

    let c = train_centralized(scenario, trained_agents, seed)?;
    phases.push(c.phase.clone());

    let t = Timer::start();
    let values = extract_values(scenario, trained_agents, &c.solution.q, &c.solution.policy, seed)?;
    phases.push(PhaseRecord {
        phase: Phase::Values,
        agents: Some(trained_agents),
        episodes: 0,
        table_entries: n_obs as u128,
        seconds: Some(t.seconds()),
    });
    let value_gap = match (scenario.peer_dist, oracle.get(trained_agents)) {
        (PeerDistributionKind::UniformNonGoal, Some(sol)) => {
            let exact = extract_values(scenario, trained_agents, &sol.q_star, &sol.policy, seed)?;
            Some(
                values
                    .values()
                    .iter()
                    .zip(exact.values())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
            )
        }
        _ => None,
    };

    let t = Timer::start();
    let codebooks = build_link_codebooks(&values, &scenario.budgets)?;
    phases.push(PhaseRecord {
        phase: Phase::Quantizer,
        agents: None,
        episodes: 0,
        table_entries: 0,
        seconds: Some(t.seconds()),
    });

    let episodes = scenario.decentralized.episodes_for(pow_u128(n_obs, scenario.n_agents));
    let cfg =
        scenario
            .decentralized
            .train_config(scenario.grid.discount, episodes, phase_seed(seed, Phase::Decentralized));
    let t = Timer::start();
    let solution = distributed_q_learning(&mdp, &codebooks, &cfg)?;
    let seconds = t.seconds();
    let entries = (0..scenario.n_agents)
        .map(|i| {
            let inbound: Vec<usize> = (0..scenario.n_agents)
                .filter(|&j| j != i)
                .map(|j| codebooks.get(j, i).map_or(1, |b| b.size()))
                .collect();
            local_table_entries(n_obs, n_act, &inbound)
        })
        .sum();
    phases.push(PhaseRecord {
        phase: Phase::Decentralized,
        agents: Some(scenario.n_agents),
        episodes,
        table_entries: entries,
        seconds: Some(seconds),
    });

    let eval = Evaluation::new(scenario, &mdp, seed);
    let t = Timer::start();
    let returns = eval
        .starts
        .iter()
        .map(|s| distributed_return(&mdp, &codebooks, &solution, s))
        .collect::<Result<Vec<f64>>>()?;
    phases.push(PhaseRecord {
        phase: Phase::Evaluation,
        agents: None,
        episodes: returns.len(),
        table_entries: 0,
        seconds: Some(t.seconds()),
    });
    let (eval_return, oracle_return, normalized_return) = eval.finish(&returns, oracle.get(scenario.n_agents));

    Ok(PipelineRun {
        record: ExperimentRecord {
            schema: RECORD_SCHEMA.into(),
            pipeline,
            seed,
            n_agents: scenario.n_agents,
            grid_side: scenario.grid.side,
            phases,
            centralized_curve: Curve::from_trace(&c.solution.trace, scenario.smoothing_window),
            decentralized_curve: Some(Curve::from_trace(&solution.trace, scenario.smoothing_window)),
            values: Some(values.values().to_vec()),
            value_gap,
            codebooks: summarize_codebooks(&codebooks),
            eval_episodes: scenario.eval_episodes,
            eval_return,
            oracle_return,
            normalized_return,
        },
        centralized: c.solution,
        values: Some(values),
        codebooks: Some(codebooks),
        decentralized: Some(solution),
    })
}

/// N-agent centralized training, N-agent values, codebooks, decentralized training.
pub fn run_saic(scenario: &Scenario, seed: u64, oracle: &OracleCache) -> Result<PipelineRun> {
    run_quantized(scenario, Pipeline::Saic, seed, oracle)
}

/// Two-agent centralized training, two-agent values, codebooks, N-agent decentralized training.
pub fn run_esaic(scenario: &Scenario, seed: u64, oracle: &OracleCache) -> Result<PipelineRun> {
    run_quantized(scenario, Pipeline::Esaic, seed, oracle)
}

pub fn run_pipeline(scenario: &Scenario, pipeline: Pipeline, seed: u64, oracle: &OracleCache) -> Result<PipelineRun> {
    match pipeline {
        Pipeline::Centralized => run_centralized(scenario, seed, oracle),
        Pipeline::Saic => run_saic(scenario, seed, oracle),
        Pipeline::Esaic => run_esaic(scenario, seed, oracle),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub pipeline: Pipeline,
    pub seeds: usize,
    pub centralized_entries: u128,
    pub decentralized_entries: Option<u128>,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub normalized_return_mean: Option<f64>,
    pub normalized_return_std: Option<f64>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(pipeline: Pipeline, records: &[&ExperimentRecord]) -> Aggregate {
    let evals: Vec<f64> = records.iter().map(|r| r.eval_return).collect();
    let (eval_return_mean, eval_return_std) = mean_std(&evals);
    let norms: Option<Vec<f64>> = records.iter().map(|r| r.normalized_return).collect();
    let (nm, ns) = match norms {
        Some(v) => {
            let (m, s) = mean_std(&v);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    Aggregate {
        pipeline,
        seeds: records.len(),
        centralized_entries: records[0].centralized_entries(),
        decentralized_entries: records[0].phase(Phase::Decentralized).map(|p| p.table_entries),
        eval_return_mean,
        eval_return_std,
        normalized_return_mean: nm,
        normalized_return_std: ns,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPartitionReport {
    pub seed: u64,
    pub sender: usize,
    pub receiver: usize,
    pub budget_bits: u32,
    pub report: PartitionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPartitionReport {
    pub budget_bits: u32,
    pub report: PartitionReport,
}

/// Exact two-agent versus N-agent comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDiagnostics {
    pub values_2: Vec<f64>,
    pub values_n: Vec<f64>,
    pub affine: AffineFitReport,
    pub c1: Vec<BudgetPartitionReport>,
}

/// Diagnostics from exact two-agent and N-agent values, one c1 report per
/// distinct link budget. `None` if either oracle is out of budget.
pub fn oracle_diagnostics(scenario: &Scenario, oracle: &OracleCache) -> Result<Option<OracleDiagnostics>> {
    let (Some(s2), Some(sn)) = (oracle.get(2), oracle.get(scenario.n_agents)) else {
        return Ok(None);
    };
    let uniform = Scenario {
        peer_dist: PeerDistributionKind::UniformNonGoal,
        ..scenario.clone()
    };
    let v2 = extract_values(&uniform, 2, &s2.q_star, &s2.policy, 0)?;
    let vn = extract_values(&uniform, scenario.n_agents, &sn.q_star, &sn.policy, 0)?;
    let affine = check_affine_relation(&v2, &vn)?;
    let mut budgets: Vec<u32> = scenario
        .budgets
        .rows()
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(move |(j, _)| *j != i)
                .map(|(_, &b)| b)
                .collect::<Vec<_>>()
        })
        .collect();
    budgets.sort_unstable();
    budgets.dedup();
    let c1 = budgets
        .into_iter()
        .map(|bits| {
            Ok(BudgetPartitionReport {
                budget_bits: bits,
                report: check_c1(&design_quantizer(&v2, bits)?, &design_quantizer(&vn, bits)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(OracleDiagnostics {
        values_2: v2.values().to_vec(),
        values_n: vn.values().to_vec(),
        affine,
        c1,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub scenario_hash: String,
    pub fingerprint: String,
    pub scenario: Scenario,
    pub aggregates: Vec<Aggregate>,
    /// Learned SAIC versus ESAIC partitions, when both pipelines ran.
    pub c1: Option<Vec<LinkPartitionReport>>,
    pub oracle: Option<OracleDiagnostics>,
}

/// Everything produced by [`run_scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub summary: RunSummary,
    /// Ordered by seed (as listed), then pipeline.
    pub runs: Vec<PipelineRun>,
}

impl ScenarioRun {
    pub fn records(&self) -> impl Iterator<Item = &ExperimentRecord> {
        self.runs.iter().map(|r| &r.record)
    }
}

/// Runs every configured pipeline on every seed. Seeds may run in parallel;
/// results are merged in seed order.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioRun> {
    scenario.validate()?;
    let mut sizes = vec![scenario.n_agents];
    if scenario.pipelines.contains(&Pipeline::Esaic) || scenario.n_agents > 2 {
        sizes.push(2);
    }
    let oracle = OracleCache::build(scenario, &sizes)?;
    let per_seed = |&seed: &u64| -> Result<Vec<PipelineRun>> {
        scenario
            .pipelines
            .iter()
            .map(|&p| run_pipeline(scenario, p, seed, &oracle))
            .collect()
    };
    let nested: Vec<Vec<PipelineRun>> = if scenario.parallel {
        scenario.seeds.par_iter().map(per_seed).collect::<Result<_>>()?
    } else {
        scenario.seeds.iter().map(per_seed).collect::<Result<_>>()?
    };
    let runs: Vec<PipelineRun> = nested.into_iter().flatten().collect();

    let aggregates = scenario
        .pipelines
        .iter()
        .map(|&p| {
            let recs: Vec<&ExperimentRecord> = runs.iter().map(|r| &r.record).filter(|r| r.pipeline == p).collect();
            aggregate(p, &recs)
        })
        .collect();

    let c1 = if scenario.pipelines.contains(&Pipeline::Saic) && scenario.pipelines.contains(&Pipeline::Esaic) {
        let mut reports = Vec::new();
        for &seed in &scenario.seeds {
            let find = |p: Pipeline| {
                runs.iter()
                    .find(|r| r.record.seed == seed && r.record.pipeline == p)
                    .and_then(|r| r.codebooks.as_ref())
                    .expect("quantized pipelines carry codebooks")
            };
            let (saic, esaic) = (find(Pipeline::Saic), find(Pipeline::Esaic));
            for ((i, j), book) in saic.iter() {
                let other = esaic
                    .get(i, j)
                    .ok_or_else(|| Error::contract(format!("link {i}->{j} missing from ESAIC codebooks")))?;
                reports.push(LinkPartitionReport {
                    seed,
                    sender: i,
                    receiver: j,
                    budget_bits: book.budget_bits,
                    report: check_c1(book, other)?,
                });
            }
        }
        Some(reports)
    } else {
        None
    };

    Ok(ScenarioRun {
        summary: RunSummary {
            schema: SUMMARY_SCHEMA.into(),
            scenario_hash: scenario.scenario_hash(),
            fingerprint: scenario.fingerprint(),
            scenario: scenario.clone(),
            aggregates,
            c1,
            oracle: oracle_diagnostics(scenario, &oracle)?,
        },
        runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::config(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitOptions {
    pub format: Format,
    /// Include wall-clock seconds, which makes artifacts differ between runs.
    pub timings: bool,
}

impl Default for EmitOptions {
    fn default() -> Self {
        EmitOptions {
            format: Format::Csv,
            timings: false,
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}

/// Writes one record. CSV writes the curves and a JSON record without them;
/// JSON writes a single record file with the curves inline.
pub fn emit_record(record: &ExperimentRecord, dir: &Path, opts: EmitOptions) -> Result<Vec<PathBuf>> {
    let record = if opts.timings {
        record.clone()
    } else {
        record.without_timings()
    };
    let stem = format!("{}_seed{}", record.pipeline, record.seed);
    let mut written = Vec::new();
    match opts.format {
        Format::Json => {
            let path = dir.join(format!("record_{stem}.json"));
            write_file(&path, &to_json(&record))?;
            written.push(path);
        }
        Format::Csv => {
            let meta = |phase: &str| format!("pipeline={} seed={} phase={phase}", record.pipeline, record.seed);
            let path = dir.join(format!("curve_{stem}_centralized.csv"));
            write_file(&path, &record.centralized_curve.to_csv(&meta("centralized")))?;
            written.push(path);
            if let Some(c) = &record.decentralized_curve {
                let path = dir.join(format!("curve_{stem}_decentralized.csv"));
                write_file(&path, &c.to_csv(&meta("decentralized")))?;
                written.push(path);
            }
            let mut slim = record.clone();
            slim.centralized_curve = Curve::default();
            slim.decentralized_curve = slim.decentralized_curve.map(|_| Curve::default());
            let path = dir.join(format!("record_{stem}.json"));
            write_file(&path, &to_json(&slim))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn emit_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    write_file(path, &to_json(summary))
}

/// Writes the summary, every record and the learned codebooks under `dir`.
pub fn emit_run(run: &ScenarioRun, dir: &Path, opts: EmitOptions) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let path = dir.join("summary.json");
    emit_summary(&run.summary, &path)?;
    written.push(path);
    for r in &run.runs {
        written.extend(emit_record(&r.record, dir, opts)?);
        if let Some(books) = &r.codebooks {
            let sub = dir.join(format!("codebooks_{}_seed{}", r.record.pipeline, r.record.seed));
            books.write_dir(&sub)?;
            written.push(sub);
        }
    }
    Ok(written)
}

/// One row of a wall-clock sweep over team sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub pipeline: Pipeline,
    pub n_agents: usize,
    pub centralized_entries: Option<u128>,
    pub centralized_episodes: Option<usize>,
    /// Median over repeats; absent when the capacity guard refused the run.
    pub centralized_seconds: Option<f64>,
    /// Fastest repeat, the least noisy estimate on a loaded machine.
    pub centralized_seconds_min: Option<f64>,
    pub refused: Option<String>,
}

/// Times only the centralized phase of SAIC and ESAIC for each team size,
/// with a fixed episode budget so that table size is the only variable.
pub fn timing_sweep(base: &Scenario, team_sizes: &[usize], episodes: usize, repeats: usize) -> Result<Vec<TimingRow>> {
    struct Cell {
        pipeline: Pipeline,
        n: usize,
        agents: usize,
        entries: Option<u128>,
        times: Vec<f64>,
        refused: Option<String>,
    }
    let n_obs = base.grid.n_cells();
    let mut cells = Vec::new();
    for &n in team_sizes {
        for pipeline in [Pipeline::Saic, Pipeline::Esaic] {
            let agents = if pipeline == Pipeline::Esaic { 2 } else { n };
            let entries = joint_table_entries(n_obs, crate::env::NUM_ACTIONS, agents);
            cells.push(Cell {
                pipeline,
                n,
                agents,
                entries,
                times: Vec::new(),
                refused: None,
            });
        }
    }
    // ESAIC pass first, then SAIC; repeats outermost within a pass
    for pipeline in [Pipeline::Esaic, Pipeline::Saic] {
        for r in 0..repeats.max(1) {
            for cell in cells
                .iter_mut()
                .filter(|c| c.pipeline == pipeline && c.refused.is_none())
            {
                let mut scenario = base.clone();
                scenario.n_agents = cell.n;
                scenario.centralized.episodes = Some(episodes);
                match train_centralized(&scenario, cell.agents, r as u64) {
                    Ok(c) => cell.times.push(c.phase.seconds.unwrap_or(0.0)),
                    Err(e @ Error::Capacity { .. }) => cell.refused = Some(e.to_string()),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(cells
        .into_iter()
        .map(|mut c| {
            c.times.sort_by(f64::total_cmp);
            let ok = c.refused.is_none();
            TimingRow {
                pipeline: c.pipeline,
                n_agents: c.n,
                centralized_entries: c.entries,
                centralized_episodes: ok.then_some(episodes),
                centralized_seconds: c.times.get(c.times.len() / 2).copied().filter(|_| ok),
                centralized_seconds_min: c.times.first().copied().filter(|_| ok),
                refused: c.refused,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_agents: usize, pipelines: &[Pipeline]) -> Scenario {
        let mut s = Scenario::new(3, n_agents).unwrap();
        s.pipelines = pipelines.to_vec();
        s.centralized.episodes = Some(3_000);
        s.decentralized.episodes = Some(3_000);
        s.eval_episodes = 50;
        s.seeds = vec![5];
        s
    }

    #[test]
    fn smoothing_definition() {
        let r = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(smooth(&r, 100), vec![1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(smooth(&r, 2), vec![1.0, 1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn curve_csv_round_trip() {
        let trace = TrainingTrace {
            returns: vec![0.0, 10.0, 0.1 + 0.2, 1e-300, 7.290000000000001],
            epsilons: (1..=5).map(|k| crate::rl::epsilon(k, 5)).collect(),
        };
        let c = Curve::from_trace(&trace, 3);
        let back = Curve::parse_csv(&c.to_csv("pipeline=esaic seed=1")).unwrap();
        assert_eq!(back, c);
        assert!(Curve::parse_csv("episode,return\n").is_err());
    }

    #[test]
    fn scenario_file_defaults_and_overrides() {
        let f = ScenarioFile::from_toml(
            r#"
            n_agents = 3
            budget = 1
            pipelines = ["saic", "esaic"]
            seeds = [1, 2]
            [grid]
            side = 4
            [decentralized]
            update_rule = "standard"
            episodes = 10
            "#,
        )
        .unwrap();
        let s = f.resolve().unwrap();
        assert_eq!(s.grid.goal, 10);
        assert_eq!(s.budgets, BitBudgetMatrix::homogeneous(3, 1));
        assert_eq!(s.centralized.update_rule, UpdateRule::Standard);
        assert_eq!(s.decentralized.update_rule, UpdateRule::Standard);
        assert_eq!(s.decentralized.episodes, Some(10));
        assert_eq!(s.centralized.episodes_for(16 * 16 * 16), 200 * 4096);
        assert_eq!(s.eval_episodes, 500);
        assert!(ScenarioFile::from_toml("bogus = 1").is_err());
        assert!(ScenarioFile::from_toml("budget = 1\nbudget_matrix = [[0,1],[1,0]]")
            .unwrap()
            .resolve()
            .is_err());
        assert!(ScenarioFile::from_toml("n_agents = 3\nbudget_matrix = [[0,1],[1,0]]")
            .unwrap()
            .resolve()
            .is_err());
    }

    #[test]
    fn saic_guard_is_checked_up_front() {
        let f = ScenarioFile::from_toml("n_agents = 5\npipelines = [\"saic\"]").unwrap();
        assert!(matches!(f.resolve(), Err(Error::Capacity { required, .. }) if required == 45u128.pow(5)));
        let f = ScenarioFile::from_toml("n_agents = 5\npipelines = [\"esaic\"]").unwrap();
        assert!(f.resolve().is_ok());
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = Scenario::new(3, 2).unwrap();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seeds = vec![9];
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.scenario_hash(), b.scenario_hash());
        b.budgets = BitBudgetMatrix::homogeneous(2, 1);
        assert_ne!(a.scenario_hash(), b.scenario_hash());
    }

    #[test]
    fn phase_streams_differ() {
        let seeds: Vec<u64> = [
            Phase::Centralized,
            Phase::Decentralized,
            Phase::Evaluation,
            Phase::Values,
        ]
        .iter()
        .map(|&p| phase_seed(7, p))
        .collect();
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }

    #[test]
    fn table_entry_accounting() {
        let s = small(3, &[Pipeline::Centralized, Pipeline::Saic, Pipeline::Esaic]);
        let run = run_scenario(&s).unwrap();
        let by = |p| run.records().find(|r| r.pipeline == p).unwrap().clone();
        assert_eq!(by(Pipeline::Centralized).centralized_entries(), 91_125);
        assert_eq!(by(Pipeline::Saic).centralized_entries(), 91_125);
        assert_eq!(by(Pipeline::Esaic).centralized_entries(), 2_025);
        // each agent: 9 cells x 4 x 4 inbound codewords x 5 actions, unless fewer clusters exist
        let dec = by(Pipeline::Esaic).phase(Phase::Decentralized).unwrap().table_entries;
        let sizes: u128 = (0..3)
            .map(|i| {
                let inbound: Vec<usize> = by(Pipeline::Esaic)
                    .codebooks
                    .iter()
                    .filter(|c| c.receiver == i)
                    .map(|c| c.clusters)
                    .collect();
                local_table_entries(9, 5, &inbound)
            })
            .sum();
        assert_eq!(dec, sizes);
        assert!(run.summary.c1.is_some());
        assert!(run.summary.oracle.is_some());
    }

    #[test]
    fn normalized_return_is_bounded() {
        let s = small(2, &[Pipeline::Centralized, Pipeline::Esaic]);
        let run = run_scenario(&s).unwrap();
        for r in run.records() {
            let n = r.normalized_return.unwrap();
            assert!((0.0..=1.0 + 1e-9).contains(&n), "{n}");
        }
    }

    #[test]
    fn emitted_artifacts_are_reproducible() {
        let mut s = small(2, &[Pipeline::Saic, Pipeline::Esaic]);
        s.seeds = vec![1, 2];
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        emit_run(&run_scenario(&s).unwrap(), a.path(), EmitOptions::default()).unwrap();
        s.parallel = false;
        emit_run(&run_scenario(&s).unwrap(), b.path(), EmitOptions::default()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() > 5);
        for name in names {
            let pa = a.path().join(&name);
            if pa.is_dir() {
                continue;
            }
            assert_eq!(
                fs::read(&pa).unwrap(),
                fs::read(b.path().join(&name)).unwrap(),
                "{name:?}"
            );
        }
        let curve = Curve::read_csv(&a.path().join("curve_esaic_seed1_decentralized.csv")).unwrap();
        assert_eq!(curve.len(), 3_000);
    }

    #[test]
    fn timing_sweep_refuses_large_saic() {
        let s = Scenario::new(3, 2).unwrap();
        let rows = timing_sweep(&s, &[2, 5], 10, 1).unwrap();
        let saic5 = rows
            .iter()
            .find(|r| r.pipeline == Pipeline::Saic && r.n_agents == 5)
            .unwrap();
        assert!(saic5.refused.is_some() && saic5.centralized_seconds.is_none());
        assert_eq!(saic5.centralized_entries, Some(45u128.pow(5)));
        let esaic5 = rows
            .iter()
            .find(|r| r.pipeline == Pipeline::Esaic && r.n_agents == 5)
            .unwrap();
        assert_eq!(esaic5.centralized_entries, Some(2_025));
        assert!(esaic5.centralized_seconds.is_some());
    }
}
