//! The joint MDP contract and the rendezvous grid world.
//!
//! Cells are numbered row-major from the bottom-left corner: `Up` adds the
//! side length, `Right` adds one. Moves that would leave the grid keep the
//! agent where it is. An episode ends as soon as any agent stands on the goal.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of per-agent actions in the rendezvous world.
pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Observation(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Right,
    Left,
    Up,
    Down,
    Stop,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Right, Action::Left, Action::Up, Action::Down, Action::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointState {
    pub positions: Vec<Observation>,
}

impl JointState {
    pub fn new(cells: impl IntoIterator<Item = usize>) -> Self {
        JointState {
            positions: cells.into_iter().map(Observation).collect(),
        }
    }

    pub fn cells(&self) -> Vec<usize> {
        self.positions.iter().map(|o| o.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminalKind {
    None,
    Partial,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: JointState,
    pub reward: f64,
    pub terminal: bool,
    pub terminal_kind: TerminalKind,
}

/// Grid geometry, rewards and episode limits of a rendezvous instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub side: usize,
    pub goal: usize,
    pub reward_partial: f64,
    pub reward_full: f64,
    pub discount: f64,
    pub max_steps: usize,
}

impl GridSpec {
    /// Defaults for an `side × side` grid: goal in the central cell, `C1 = 1`,
    /// `C2 = 10`, `γ = 0.9` and an episode cap of `10·side²` steps.
    pub fn rendezvous(side: usize) -> Self {
        GridSpec {
            side,
            goal: (side / 2) * side + side / 2,
            reward_partial: 1.0,
            reward_full: 10.0,
            discount: 0.9,
            max_steps: 10 * side * side,
        }
    }

    pub fn with_goal(mut self, goal: usize) -> Self {
        self.goal = goal;
        self
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn n_cells(&self) -> usize {
        self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 {
            return Err(Error::config("grid side must be positive"));
        }
        if self.goal >= self.n_cells() {
            return Err(Error::config(format!(
                "goal {} outside a {}x{} grid",
                self.goal, self.side, self.side
            )));
        }
        if self.reward_partial.partial_cmp(&self.reward_full) != Some(std::cmp::Ordering::Less) {
            return Err(Error::config(format!(
                "partial reward {} must be below full reward {}",
                self.reward_partial, self.reward_full
            )));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::config(format!("discount {} outside [0, 1]", self.discount)));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be positive"));
        }
        if self.n_cells() < 2 {
            return Err(Error::config("grid needs at least one non-goal cell"));
        }
        Ok(())
    }

    /// Destination of a single move with boundary clamping.
    pub fn move_cell(&self, cell: usize, action: Action) -> usize {
        let n = self.side;
        match action {
            Action::Right if cell % n + 1 < n => cell + 1,
            Action::Left if !cell.is_multiple_of(n) => cell - 1,
            Action::Up if cell + n < n * n => cell + n,
            Action::Down if cell >= n => cell - n,
            _ => cell,
        }
    }

    pub fn manhattan_to_goal(&self, cell: usize) -> usize {
        let n = self.side;
        let (r, c) = (cell / n, cell % n);
        let (gr, gc) = (self.goal / n, self.goal % n);
        r.abs_diff(gr) + c.abs_diff(gc)
    }
}

/// A finite cooperative MDP over joint observations with a team reward.
///
/// States are vectors of per-agent observation indices, actions are vectors
/// of per-agent action indices. Transitions are deterministic.
pub trait JointMdp {
    fn n_agents(&self) -> usize;
    fn n_observations(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn discount(&self) -> f64;
    fn max_steps(&self) -> usize;
    fn is_terminal(&self, obs: &[usize]) -> bool;
    /// Writes the successor into `next` and returns the team reward.
    fn step(&self, obs: &[usize], actions: &[usize], next: &mut [usize]) -> (f64, TerminalKind);
    /// Cells an agent may start from; initial observations are i.i.d. uniform over them.
    fn start_cells(&self) -> &[usize];
}

/// Draws a joint initial observation according to [`JointMdp::start_cells`].
pub fn sample_start<M: JointMdp + ?Sized>(mdp: &M, rng: &mut dyn RngCore, out: &mut [usize]) {
    let cells = mdp.start_cells();
    for slot in out.iter_mut() {
        *slot = cells[rng.random_range(0..cells.len())];
    }
}

/// The rendezvous problem for a fixed number of agents.
#[derive(Debug, Clone)]
pub struct Rendezvous {
    spec: GridSpec,
    n_agents: usize,
    moves: Vec<[usize; NUM_ACTIONS]>,
    start: Vec<usize>,
}

impl Rendezvous {
    pub fn new(spec: GridSpec, n_agents: usize) -> Result<Self> {
        spec.validate()?;
        if n_agents < 1 {
            return Err(Error::contract("rendezvous needs at least one agent"));
        }
        let moves = (0..spec.n_cells())
            .map(|cell| Action::ALL.map(|a| spec.move_cell(cell, a)))
            .collect();
        let start = (0..spec.n_cells()).filter(|&c| c != spec.goal).collect();
        Ok(Rendezvous {
            spec,
            n_agents,
            moves,
            start,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Same grid with a different team size.
    pub fn with_agents(&self, n_agents: usize) -> Result<Self> {
        Rendezvous::new(self.spec.clone(), n_agents)
    }
}

impl JointMdp for Rendezvous {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn n_observations(&self) -> usize {
        self.spec.n_cells()
    }

    fn n_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn discount(&self) -> f64 {
        self.spec.discount
    }

    fn max_steps(&self) -> usize {
        self.spec.max_steps
    }

    fn is_terminal(&self, obs: &[usize]) -> bool {
        obs.contains(&self.spec.goal)
    }

    fn step(&self, obs: &[usize], actions: &[usize], next: &mut [usize]) -> (f64, TerminalKind) {
        let mut arrived = 0;
        for ((dst, &cell), &a) in next.iter_mut().zip(obs).zip(actions) {
            *dst = self.moves[cell][a];
            if *dst == self.spec.goal {
                arrived += 1;
            }
        }
        if arrived == 0 {
            (0.0, TerminalKind::None)
        } else if arrived == obs.len() {
            (self.spec.reward_full, TerminalKind::Full)
        } else {
            (self.spec.reward_partial, TerminalKind::Partial)
        }
    }

    fn start_cells(&self) -> &[usize] {
        &self.start
    }
}

/// One joint step of the rendezvous dynamics.
pub fn transition(state: &JointState, actions: &[Action], spec: &GridSpec) -> Result<StepOutcome> {
    if state.positions.len() != actions.len() {
        return Err(Error::contract(format!(
            "{} agents but {} actions",
            state.positions.len(),
            actions.len()
        )));
    }
    if let Some(o) = state.positions.iter().find(|o| o.0 >= spec.n_cells()) {
        return Err(Error::contract(format!("cell {} outside the grid", o.0)));
    }
    if state.positions.iter().any(|o| o.0 == spec.goal) {
        return Err(Error::contract("transition from a terminal state"));
    }
    let mut arrived = 0;
    let next: Vec<Observation> = state
        .positions
        .iter()
        .zip(actions)
        .map(|(o, &a)| {
            let cell = spec.move_cell(o.0, a);
            if cell == spec.goal {
                arrived += 1;
            }
            Observation(cell)
        })
        .collect();
    let (reward, terminal_kind) = match arrived {
        0 => (0.0, TerminalKind::None),
        k if k == next.len() => (spec.reward_full, TerminalKind::Full),
        _ => (spec.reward_partial, TerminalKind::Partial),
    };
    Ok(StepOutcome {
        next_state: JointState { positions: next },
        reward,
        terminal: terminal_kind != TerminalKind::None,
        terminal_kind,
    })
}

/// Initial positions drawn i.i.d. uniformly from the non-goal cells.
pub fn initial_state(spec: &GridSpec, n_agents: usize, seed: u64) -> Result<JointState> {
    let mdp = Rendezvous::new(spec.clone(), n_agents)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = vec![0; n_agents];
    sample_start(&mdp, &mut rng, &mut cells);
    Ok(JointState::new(cells))
}

/// `Σ_t γ^{t-1} r_t` with `t` counted from one.
pub fn discounted_return(rewards: &[f64], discount: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += weight * r;
        weight *= discount;
    }
    total
}
