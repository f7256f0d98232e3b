use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use esaic_core::harness::{
    emit_record, emit_run, extract_values, oracle_diagnostics, run_centralized, run_pipeline, timing_sweep, Curve,
    EmitOptions, ExperimentRecord, Format, OracleCache, Pipeline, Scenario, ScenarioFile,
};
use esaic_core::rl::{distributed_q_learning, distributed_return, sample_starts, TrainConfig};
use esaic_core::tocd::{build_link_codebooks, LinkCodebooks};
use esaic_core::voi::ValueTable;
use esaic_core::{Error, JointMdp};

#[derive(Parser)]
#[command(
    name = "esaic",
    version,
    about = "Value-based quantizer design for multi-agent rendezvous"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a centralized joint Q-table and write it with its learning curve.
    TrainCentralized(Common),
    /// Train the centralized phase of a pipeline, extract values and design codebooks.
    DesignQuantizer {
        #[command(flatten)]
        common: Common,
        /// Design from an existing value table instead of training.
        #[arg(long)]
        values: Option<PathBuf>,
    },
    /// Decentralized training with codebooks read from a directory.
    TrainDistributed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        codebooks: PathBuf,
    },
    /// Run full pipelines over all seeds and write every artifact.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also record wall-clock seconds per phase (artifacts then differ between runs).
        #[arg(long)]
        timings: bool,
    },
    /// Solve the scenario exactly and report the two-agent versus N-agent checks.
    Verify(Common),
    /// Time the centralized phase of SAIC and ESAIC across team sizes.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Team sizes 2..=max.
        #[arg(long, default_value_t = 6)]
        max_agents: usize,
        /// Fixed centralized episode budget for every size.
        #[arg(long, default_value_t = 20_000)]
        episodes: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML). Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One or more of centralized, saic, esaic.
    #[arg(long, value_delimiter = ',')]
    pipeline: Vec<Pipeline>,
    #[arg(long)]
    agents: Option<usize>,
    /// Grid side length.
    #[arg(long)]
    grid: Option<usize>,
    /// Homogeneous bits per link.
    #[arg(long, conflicts_with = "budget_matrix")]
    budget: Option<u32>,
    /// Whitespace- or comma-separated matrix, one sender per line.
    #[arg(long)]
    budget_matrix: Option<PathBuf>,
    /// One or more seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long)]
    centralized_episodes: Option<usize>,
    #[arg(long)]
    decentralized_episodes: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: Format,
}

impl Common {
    fn scenario(&self) -> anyhow::Result<Scenario> {
        let mut file = match &self.config {
            Some(p) => ScenarioFile::load(p)?,
            None => ScenarioFile::default(),
        };
        if !self.pipeline.is_empty() {
            file.pipelines = Some(self.pipeline.clone());
        }
        if let Some(n) = self.agents {
            file.n_agents = Some(n);
            if self.budget_matrix.is_none() {
                file.budget_matrix = None;
                file.budget = file.budget.or(Some(2));
            }
        }
        if let Some(side) = self.grid {
            file.grid.side = Some(side);
            file.grid.goal = None;
            file.grid.max_steps = None;
        }
        if let Some(b) = self.budget {
            file.budget = Some(b);
            file.budget_matrix = None;
        }
        if let Some(p) = &self.budget_matrix {
            file.budget_matrix = Some(read_matrix(p)?);
            file.budget = None;
        }
        if !self.seed.is_empty() {
            file.seeds = Some(self.seed.clone());
        }
        if let Some(e) = self.centralized_episodes {
            file.centralized.episodes = Some(e);
        }
        if let Some(e) = self.decentralized_episodes {
            file.decentralized.episodes = Some(e);
        }
        Ok(file.resolve()?)
    }

    fn emit(&self) -> EmitOptions {
        EmitOptions {
            format: self.format,
            timings: false,
        }
    }
}

fn read_matrix(path: &Path) -> anyhow::Result<Vec<Vec<u32>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: bad budget", path.display(), n + 1))?;
        rows.push(row);
    }
    Ok(rows)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn single_seed(s: &Scenario) -> anyhow::Result<u64> {
    match s.seeds.as_slice() {
        [seed] => Ok(*seed),
        _ => bail!("this command takes exactly one --seed"),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

fn print_record(r: &ExperimentRecord) {
    println!(
        "{:<11} seed {:<4} return {:.4}  oracle {}  normalized {}",
        r.pipeline,
        r.seed,
        r.eval_return,
        fmt_opt(r.oracle_return),
        fmt_opt(r.normalized_return)
    );
}

fn train_centralized(c: &Common) -> anyhow::Result<()> {
    let s = c.scenario()?;
    let seed = single_seed(&s)?;
    let oracle = OracleCache::build(&s, &[s.n_agents])?;
    let run = run_centralized(&s, seed, &oracle)?;
    run.centralized.q.write_csv(&c.out.join("qtable_centralized.csv"))?;
    emit_record(&run.record, &c.out, c.emit())?;
    print_record(&run.record);
    Ok(())
}

fn design_quantizer(c: &Common, values: Option<&Path>) -> anyhow::Result<()> {
    let s = c.scenario()?;
    let table = match values {
        Some(p) => ValueTable::read_csv(p)?,
        None => {
            let seed = single_seed(&s)?;
            let pipeline = match s.pipelines.as_slice() {
                [p @ (Pipeline::Saic | Pipeline::Esaic)] => *p,
                _ => bail!("design-quantizer needs a single --pipeline saic or esaic"),
            };
            let agents = if pipeline == Pipeline::Esaic { 2 } else { s.n_agents };
            let mut trained = s.clone();
            trained.n_agents = agents;
            trained.pipelines = vec![Pipeline::Centralized];
            let run = run_centralized(&trained, seed, &OracleCache::default())?;
            extract_values(&s, agents, &run.centralized.q, &run.centralized.policy, seed)?
        }
    };
    if table.len() != s.grid.n_cells() {
        bail!(
            "value table has {} observations, grid has {}",
            table.len(),
            s.grid.n_cells()
        );
    }
    table.write_csv(&c.out.join("values.csv"))?;
    let books = build_link_codebooks(&table, &s.budgets)?;
    books.write_dir(&c.out.join("codebooks"))?;
    for ((i, j), b) in books.iter() {
        println!(
            "link {i}->{j}: {} bits, {} clusters, cost {:.6}",
            b.budget_bits,
            b.size(),
            b.cost
        );
    }
    Ok(())
}

fn train_distributed(c: &Common, dir: &Path) -> anyhow::Result<()> {
    let s = c.scenario()?;
    let seed = single_seed(&s)?;
    let mdp = s.mdp()?;
    let books = LinkCodebooks::read_dir(dir, s.n_agents)?;
    let episodes = s
        .decentralized
        .episodes_for((mdp.n_observations() as u128).pow(s.n_agents as u32));
    let mut cfg = TrainConfig::new(s.grid.discount, episodes, seed, s.decentralized.update_rule);
    cfg.learning_rate = s.decentralized.learning_rate;
    cfg.max_table_entries = s.decentralized.max_table_entries as u128;
    let sol = distributed_q_learning(&mdp, &books, &cfg)?;
    for (i, t) in sol.tables.iter().enumerate() {
        t.write_csv(&c.out.join(format!("qtable_agent{i}.csv")))?;
    }
    let curve = Curve::from_trace(&sol.trace, s.smoothing_window);
    write(
        &c.out.join("curve_distributed.csv"),
        &curve.to_csv(&format!("seed={seed} phase=decentralized")),
    )?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let starts = sample_starts(&mdp, s.eval_episodes, &mut rng);
    let total: f64 = starts
        .iter()
        .map(|st| distributed_return(&mdp, &books, &sol, st))
        .collect::<Result<Vec<_>, _>>()?
        .iter()
        .sum();
    println!(
        "greedy return {:.4} over {} starts",
        total / starts.len() as f64,
        starts.len()
    );
    Ok(())
}

fn run(c: &Common, timings: bool) -> anyhow::Result<()> {
    let s = c.scenario()?;
    let run = esaic_core::harness::run_scenario(&s)?;
    let opts = EmitOptions { timings, ..c.emit() };
    emit_run(&run, &c.out, opts)?;
    for r in run.records() {
        print_record(r);
    }
    for a in &run.summary.aggregates {
        println!(
            "{:<11} mean normalized {} ± {}  centralized entries {}",
            a.pipeline,
            fmt_opt(a.normalized_return_mean),
            fmt_opt(a.normalized_return_std),
            a.centralized_entries
        );
    }
    if let Some(c1) = &run.summary.c1 {
        let equal = c1.iter().filter(|r| r.report.equal).count();
        println!("learned SAIC/ESAIC partitions equal on {equal}/{} links", c1.len());
    }
    println!("fingerprint {}", run.summary.fingerprint);
    Ok(())
}

fn verify(c: &Common) -> anyhow::Result<()> {
    let mut s = c.scenario()?;
    if s.n_agents < 2 {
        s.n_agents = 2;
    }
    let oracle = OracleCache::build(&s, &[2, s.n_agents])?;
    let Some(diag) = oracle_diagnostics(&s, &oracle)? else {
        return Err(Error::Capacity {
            what: "oracle value iteration".into(),
            required: (s.grid.n_cells() as u128 * 5).pow(s.n_agents as u32),
            budget: s.oracle_max_pairs as u128,
        }
        .into());
    };
    write(&c.out.join("oracle.json"), &json(&diag))?;
    let a = &diag.affine;
    println!(
        "affine fit: tau {}  zeta {}  r2 {}  monotonicity {:?}",
        fmt_opt(a.tau),
        fmt_opt(a.zeta),
        fmt_opt(a.r_squared),
        a.monotonicity
    );
    for b in &diag.c1 {
        println!(
            "c1 at {} bits: {}",
            b.budget_bits,
            if b.report.equal {
                "equal".to_string()
            } else {
                format!("differs at {:?}", b.report.witness.unwrap_or_default())
            }
        );
    }
    // a learned-pipeline spot check on the first seed
    let seed = s.seeds[0];
    for p in s.pipelines.iter().copied().filter(|p| *p != Pipeline::Centralized) {
        let r = run_pipeline(&s, p, seed, &oracle)?;
        if let Some(gap) = r.record.value_gap {
            println!("{p}: learned values within {gap:.3e} of exact");
        }
    }
    Ok(())
}

fn bench(c: &Common, max_agents: usize, episodes: usize, repeats: usize) -> anyhow::Result<()> {
    let s = c.scenario()?;
    let sizes: Vec<usize> = (2..=max_agents.max(2)).collect();
    let rows = timing_sweep(&s, &sizes, episodes, repeats)?;
    match c.format {
        Format::Json => write(&c.out.join("timing.json"), &json(&rows))?,
        Format::Csv => {
            let mut text =
                String::from("# esaic.timing.v1\npipeline,n_agents,centralized_entries,episodes,seconds,seconds_min\n");
            for r in &rows {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.pipeline,
                    r.n_agents,
                    r.centralized_entries.map_or(String::new(), |e| e.to_string()),
                    r.centralized_episodes.map_or(String::new(), |e| e.to_string()),
                    r.centralized_seconds.map_or(String::new(), |e| e.to_string()),
                    r.centralized_seconds_min.map_or(String::new(), |e| e.to_string()),
                ));
            }
            write(&c.out.join("timing.csv"), &text)?;
        }
    }
    for r in &rows {
        println!(
            "{:<6} N={}  entries {:>12}  {}",
            r.pipeline,
            r.n_agents,
            r.centralized_entries.map_or("overflow".into(), |e| e.to_string()),
            r.centralized_seconds
                .map_or_else(|| "refused".to_string(), |t| format!("{t:.3} s"))
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TrainCentralized(c) => train_centralized(c),
        Command::DesignQuantizer { common, values } => design_quantizer(common, values.as_deref()),
        Command::TrainDistributed { common, codebooks } => train_distributed(common, codebooks),
        Command::Run { common, timings } => run(common, *timings),
        Command::Verify(c) => verify(c),
        Command::Bench {
            common,
            max_agents,
            episodes,
            repeats,
        } => bench(common, *max_agents, *episodes, *repeats),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let cause = cause.to_string();
                if !msg.ends_with(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            match e.downcast_ref::<Error>() {
                Some(Error::Capacity { .. }) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
