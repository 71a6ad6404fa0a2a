//! `rmcurric`: sampling, solvability audits, curriculum runs and evaluation.

mod config;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rmcurric::curriculum::{ued_step, Algorithm, StepEvent, UedState};
use rmcurric::metrics::{self, EvalReport, CVAR_ALPHAS};
use rmcurric::mutations::mutate;
use rmcurric::problem::{read_jsonl, write_jsonl};
use rmcurric::reward_machine::RewardMachine;
use rmcurric::rng::{RngStreams, Stream};
use rmcurric::samplers::{sample_problem, SamplingMode, Structure};
use rmcurric::solvability::{breakdown_table, overall_config, overall_table};
use rmcurric::Problem;
use serde_json::json;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Budget(_) => 3,
        }
    }
}

impl From<rmcurric::Error> for CliError {
    fn from(e: rmcurric::Error) -> Self {
        match e {
            rmcurric::Error::Config(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "rmcurric", version, about = "Task-level autocurricula over reward machines and gridworlds")]
struct Cli {
    /// Worker threads for rollouts and sampling (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Independent,
    LevelConditioned,
    TaskConditioned,
}

impl From<ModeArg> for SamplingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Independent => Self::Independent,
            ModeArg::LevelConditioned => Self::LevelConditioned,
            ModeArg::TaskConditioned => Self::TaskConditioned,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureArg {
    Sequential,
    Dag,
    Cyclic,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Dr,
    PlrRobust,
    Accel,
    Accel0,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum TableArg {
    Overall,
    Breakdown,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Sample problems as JSON lines.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        structure: Option<StructureArg>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Percentage of statically solvable problems per sampler setting.
    Solvability {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        batches: usize,
        #[arg(long, default_value_t = 4096)]
        batch_size: usize,
        #[arg(long, value_enum, default_value = "overall")]
        table: TableArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the curriculum loop, writing events and checkpoints.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmArg>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop with exit code 3 (after checkpointing) past this many seconds.
        #[arg(long)]
        time_budget: Option<f64>,
    },
    /// Evaluate a student on a problem set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        problems: PathBuf,
        #[arg(long, default_value_t = metrics::DEFAULT_REPS)]
        reps: usize,
        #[arg(long, default_value_t = rmcurric::students::DEFAULT_HORIZON)]
        horizon: usize,
        /// Extra CVaR levels in percent, added to the standard curve.
        #[arg(long)]
        alpha: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply random edit sequences to problems.
    Mutate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        problems: PathBuf,
        /// Mutants per input problem.
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        min_edits: usize,
        #[arg(long, default_value_t = 10)]
        max_edits: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the policy-conditioning graph of a machine (or of a problem's machine).
    ExportGraph {
        #[arg(long)]
        rm: PathBuf,
        /// Mark this machine state as current.
        #[arg(long)]
        state: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn load_problems(path: &Path) -> Result<Vec<Problem>> {
    let f = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_jsonl(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_sample(
    common: &Common,
    n: usize,
    mode: Option<ModeArg>,
    structure: Option<StructureArg>,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = common.load()?;
    let mut sampler = cfg.curriculum.sampler.clone();
    if let Some(m) = mode {
        sampler.mode = m.into();
    }
    if let Some(s) = structure {
        let s = match s {
            StructureArg::Sequential => Structure::Sequential,
            StructureArg::Dag => Structure::Dag,
            StructureArg::Cyclic => Structure::Cyclic,
        };
        sampler.task = overall_config(sampler.mode, s).task;
    }
    let streams = RngStreams::new(cfg.seed);
    let problems = (0..n as u64)
        .map(|i| sample_problem(&mut streams.stream(Stream::Sampler, &[i]), &sampler))
        .collect::<rmcurric::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &problems)?;
    emit(out, &buf)
}

fn cmd_solvability(common: &Common, batches: usize, batch_size: usize, table: TableArg, out: Option<&Path>) -> Result<()> {
    if batches == 0 || batch_size == 0 {
        return Err(CliError::Config("batches and batch size must be positive".into()));
    }
    let cfg = common.load()?;
    let mut report = serde_json::Map::new();
    report.insert("batches".into(), json!(batches));
    report.insert("batch_size".into(), json!(batch_size));
    if table != TableArg::Breakdown {
        report.insert("overall".into(), serde_json::to_value(overall_table(batches, batch_size, cfg.seed)?)?);
    }
    if table != TableArg::Overall {
        report.insert(
            "breakdown".into(),
            serde_json::to_value(breakdown_table(batches, batch_size, cfg.seed)?)?,
        );
    }
    emit(out, &pretty(&report)?)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Checkpoint {
    run: RunConfig,
    state: UedState,
}

fn event_line(e: &StepEvent) -> Result<String> {
    let mut s = serde_json::to_string(e)?;
    s.push('\n');
    Ok(s)
}

/// Keeps only events for steps the checkpoint has already covered.
fn truncate_events(path: &Path, upto: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let f = fs::File::open(path)?;
    let mut kept = String::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| CliError::Data(format!("events line {}: {e}", i + 1)))?;
        let step = v["step"]
            .as_u64()
            .ok_or_else(|| CliError::Data(format!("events line {} has no step", i + 1)))?;
        if step < upto {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    write_atomic(path, kept.as_bytes())
}

fn cmd_run(
    common: &Common,
    out_dir: &Path,
    steps: Option<u64>,
    algorithm: Option<AlgorithmArg>,
    resume: bool,
    time_budget: Option<f64>,
) -> Result<()> {
    let mut run = common.load()?;
    if let Some(s) = steps {
        run.steps = s;
    }
    if let Some(a) = algorithm {
        run.curriculum.algorithm = match a {
            AlgorithmArg::Dr => Algorithm::Dr,
            AlgorithmArg::PlrRobust => Algorithm::PlrRobust,
            AlgorithmArg::Accel => Algorithm::Accel,
            AlgorithmArg::Accel0 => Algorithm::Accel0,
        };
    }
    run.validate()?;
    fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.json");
    let events_path = out_dir.join("events.jsonl");

    let mut state = if resume {
        let text = fs::read_to_string(&ckpt_path).map_err(|e| CliError::Data(format!("{}: {e}", ckpt_path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        // The step budget may grow across resumes; nothing else may change.
        let same = RunConfig { steps: run.steps, ..ck.run.clone() } == run;
        if !same {
            return Err(CliError::Config("configuration differs from the checkpointed run".into()));
        }
        truncate_events(&events_path, ck.state.step)?;
        ck.state
    } else {
        if events_path.exists() {
            fs::remove_file(&events_path)?;
        }
        UedState::new(run.curriculum.clone(), run.seed)?
    };

    let save = |state: &UedState| -> Result<()> {
        let ck = Checkpoint {
            run: run.clone(),
            state: state.clone(),
        };
        write_atomic(&ckpt_path, &serde_json::to_vec(&ck)?)
    };
    let mut events = fs::OpenOptions::new().create(true).append(true).open(&events_path)?;
    let start = Instant::now();
    while state.step < run.steps {
        let out = ued_step(&mut state, &run.student)?;
        events.write_all(event_line(&out.event)?.as_bytes())?;
        events.flush()?;
        if run.checkpoint_every > 0 && state.step % run.checkpoint_every == 0 {
            save(&state)?;
        }
        if let Some(b) = time_budget {
            if start.elapsed().as_secs_f64() > b && state.step < run.steps {
                save(&state)?;
                return Err(CliError::Budget(format!(
                    "stopped at step {} of {} after {b} s; resume with --resume",
                    state.step, run.steps
                )));
            }
        }
    }
    save(&state)?;
    let summary = json!({
        "steps": state.step,
        "buffer_size": state.buffer.len(),
        "buffer_stats": state.stats(),
    });
    emit(None, &pretty(&summary)?)
}

fn cmd_eval(common: &Common, problems: &Path, reps: usize, horizon: usize, alpha: &[f64], out: Option<&Path>) -> Result<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let set = load_problems(problems)?;
    if set.is_empty() {
        return Err(CliError::Data(format!("{}: no problems", problems.display())));
    }
    let report = metrics::evaluate(&cfg.student, &set, reps, horizon, &RngStreams::new(cfg.seed))?;
    let mut alphas: Vec<f64> = CVAR_ALPHAS.to_vec();
    for &a in alpha {
        if !alphas.contains(&a) {
            alphas.push(a);
        }
    }
    alphas.sort_by(f64::total_cmp);
    let report = EvalReport::from_rates(&report.student, reps, report.per_problem_solve_rate, &alphas)?;
    emit(out, &pretty(&report)?)
}

fn cmd_mutate(common: &Common, problems: &Path, count: usize, range: (usize, usize), out: Option<&Path>) -> Result<()> {
    let cfg = common.load()?;
    let set = load_problems(problems)?;
    let streams = RngStreams::new(cfg.seed);
    let mut mutants = Vec::with_capacity(set.len() * count);
    for (i, p) in set.iter().enumerate() {
        for c in 0..count {
            let mut rng = streams.stream(Stream::Mutation, &[i as u64, c as u64]);
            mutants.push(mutate(p, &mut rng, None, range)?.0);
        }
    }
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &mutants)?;
    emit(out, &buf)
}

fn cmd_export_graph(rm: &Path, state: Option<usize>, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(rm).map_err(|e| CliError::Data(format!("{}: {e}", rm.display())))?;
    let machine = match serde_json::from_str::<RewardMachine>(&text) {
        Ok(m) => m,
        Err(e) => match serde_json::from_str::<Problem>(&text) {
            Ok(p) => p.rm,
            Err(_) => return Err(CliError::Data(format!("{}: {e}", rm.display()))),
        },
    };
    machine.validate()?;
    let mut graph = machine.export_policy_graph();
    if let Some(u) = state {
        if u >= machine.num_states {
            return Err(CliError::Config(format!("state {u} out of range")));
        }
        graph = graph.with_current(u);
    }
    emit(out, &pretty(&graph)?)
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Sample {
            common,
            n,
            mode,
            structure,
            out,
        } => cmd_sample(&common, n, mode, structure, out.as_deref()),
        Command::Solvability {
            common,
            batches,
            batch_size,
            table,
            out,
        } => cmd_solvability(&common, batches, batch_size, table, out.as_deref()),
        Command::Run {
            common,
            out_dir,
            steps,
            algorithm,
            resume,
            time_budget,
        } => cmd_run(&common, &out_dir, steps, algorithm, resume, time_budget),
        Command::Eval {
            common,
            problems,
            reps,
            horizon,
            alpha,
            out,
        } => cmd_eval(&common, &problems, reps, horizon, &alpha, out.as_deref()),
        Command::Mutate {
            common,
            problems,
            count,
            min_edits,
            max_edits,
            out,
        } => cmd_mutate(&common, &problems, count, (min_edits, max_edits), out.as_deref()),
        Command::ExportGraph { rm, state, out } => cmd_export_graph(&rm, state, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rmcurric: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
