//! `netlq`: solve, simulate and compare decentralized controllers over a lossy, delayed network.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netlq_core::container::{check_compatible, write_atomic};
use netlq_core::scenarios::Baseline;
use netlq_core::{
    builtin, read_schedule, run_episode, run_monte_carlo, single_controller_gains, solve_game, write_schedule,
    write_state_blocks_csv, CostSummary, EmissionPolicy, Error, GainSchedule, InfoMode, NetworkSpec, PlantSpec,
    ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "netlq", version, about = "Decentralized LQ control over lossy, delayed networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the gain schedules of every baseline and write the containers.
    Solve(Common),
    /// Run one episode per baseline from previously solved gains and write traces.
    Simulate(Common),
    /// Monte-Carlo comparison of previously solved gains on common scenarios.
    Compare(Common),
    /// Solve, simulate and compare in one go.
    Full(Common),
    /// Print a scenario as an editable TOML config.
    Config(Source),
}

#[derive(Args, Clone)]
struct Source {
    /// Built-in scenario name.
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// Path to a TOML scenario config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Delay bound as a fraction of the sampling period, applied to every controller.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Clone)]
struct Common {
    #[command(flatten)]
    source: Source,
    /// Master seed; overrides both the solver and the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo samples per moment estimate.
    #[arg(long)]
    samples: Option<usize>,
    /// Episodes for the comparison.
    #[arg(long)]
    runs: Option<usize>,
    /// Keep only this decentralized baseline (the single-controller baseline is kept).
    #[arg(long)]
    mode: Option<ModeArg>,
    /// Emission rule of a perfect-information controller whose sensor packet is lost.
    #[arg(long, value_enum, default_value_t = PolicyArg::Skip)]
    policy: PolicyArg,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Perfect,
    Imperfect,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Skip,
    Always,
}

impl From<PolicyArg> for EmissionPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Skip => EmissionPolicy::SkipOnSensorLoss,
            PolicyArg::Always => EmissionPolicy::Always,
        }
    }
}

struct Run {
    cfg: ScenarioConfig,
    baselines: Vec<Baseline>,
    policy: EmissionPolicy,
    out_dir: PathBuf,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, Error> {
        let cfg = match (&self.scenario, &self.config) {
            (Some(name), None) => builtin(name)?,
            (None, Some(path)) => ScenarioConfig::load(path)?,
            (None, None) => return Err(Error::Config("one of --scenario or --config is required".into())),
            (Some(_), Some(_)) => unreachable!("clap rejects both"),
        };
        match self.alpha {
            Some(alpha) => cfg.with_alpha(alpha),
            None => Ok(cfg),
        }
    }
}

impl Common {
    fn resolve(&self) -> Result<Run, Error> {
        let mut cfg = self.source.load()?;
        if let Some(seed) = self.seed {
            cfg.solver.seed = seed;
            cfg.experiment.seed = seed;
        }
        if let Some(n) = self.samples {
            cfg.solver.n_samples = n;
        }
        if let Some(n) = self.runs {
            cfg.experiment.n_runs = n;
        }
        if let Some(dir) = &self.out_dir {
            cfg.output.out_dir = dir.clone();
        }
        cfg.validate()?;
        let mut baselines = cfg.experiment.baselines.clone();
        if let Some(mode) = self.mode {
            let drop = match mode {
                ModeArg::Perfect => Baseline::Imperfect,
                ModeArg::Imperfect => Baseline::Perfect,
            };
            baselines.retain(|b| *b != drop);
        }
        if baselines.is_empty() {
            return Err(Error::Config("no baselines selected".into()));
        }
        Ok(Run {
            out_dir: cfg.output.out_dir.clone(),
            cfg,
            baselines,
            policy: self.policy.into(),
        })
    }
}

impl Run {
    /// Plant and network a baseline is solved and simulated on.
    fn specs(&self, b: Baseline) -> (PlantSpec, NetworkSpec) {
        let (plant, net) = (&self.cfg.plant, &self.cfg.network);
        match b {
            Baseline::Perfect => (plant.clone(), net.with_mode(InfoMode::Perfect)),
            Baseline::Imperfect => (plant.clone(), net.with_mode(InfoMode::Imperfect)),
            Baseline::Single => (plant.restrict(1), net.restrict(1)),
        }
    }

    fn gains_path(&self, b: Baseline) -> PathBuf {
        self.out_dir.join(format!("gains_{}.txt", b.name()))
    }

    fn load_gains(&self, b: Baseline) -> Result<GainSchedule, Error> {
        let path = self.gains_path(b);
        if !path.exists() {
            return Err(Error::InvalidArgument(format!(
                "missing {}; run `netlq solve` with the same config first",
                path.display()
            )));
        }
        let schedule = read_schedule(&path).map_err(|e| with_path(e, &path))?;
        let (plant, net) = self.specs(b);
        check_compatible(&schedule, &plant, &net).map_err(|e| with_path(e, &path))?;
        Ok(schedule)
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Container(msg) => Error::Container(format!("{}: {msg}", path.display())),
        Error::Compatibility { expected, found } => Error::Compatibility {
            expected,
            found: format!("{found} (in {})", path.display()),
        },
        other => other,
    }
}

fn solve(run: &Run) -> Result<(), Error> {
    std::fs::create_dir_all(&run.out_dir)?;
    let settings = run.cfg.solver.settings();
    let mut report = String::from("schedule,controller,predicted_cost\n");
    for &b in &run.baselines {
        let (plant, net) = run.specs(b);
        let solution = match b {
            Baseline::Single => single_controller_gains(&run.cfg.plant, &run.cfg.network, &settings)?,
            _ => solve_game(&plant, &net, &settings)?,
        };
        write_schedule(&solution.schedule, &run.gains_path(b))?;
        write_state_blocks_csv(&solution.schedule, &run.out_dir.join(format!("state_blocks_{}.csv", b.name())))?;
        for (i, cost) in solution.predicted_costs(&plant.x0).iter().enumerate() {
            let _ = writeln!(report, "{},{},{cost}", b.name(), i + 1);
        }
        println!("solved {:<9} -> {}", b.name(), run.gains_path(b).display());
    }
    write_atomic(&run.out_dir.join("predicted.csv"), report.as_bytes())
}

fn simulate(run: &Run) -> Result<(), Error> {
    std::fs::create_dir_all(&run.out_dir)?;
    for &b in &run.baselines {
        let schedule = run.load_gains(b)?;
        let (plant, net) = run.specs(b);
        let trace = run_episode(&plant, &net, &schedule, run.cfg.experiment.seed, run.policy)?;
        let path = run.out_dir.join(format!("trace_{}.csv", b.name()));
        trace.write_csv(&path)?;
        println!("simulated {:<9} J = {:.6} -> {}", b.name(), trace.j_joint, path.display());
    }
    Ok(())
}

fn compare(run: &Run) -> Result<(), Error> {
    std::fs::create_dir_all(&run.out_dir)?;
    let schedules = run
        .baselines
        .iter()
        .map(|&b| Ok((b.name().to_string(), run.load_gains(b)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let exp = &run.cfg.experiment;
    let summaries = run_monte_carlo(&run.cfg.plant, &run.cfg.network, &schedules, exp.n_runs, exp.seed, run.policy)?;
    write_atomic(&run.out_dir.join("comparison.csv"), comparison_csv(&summaries).as_bytes())?;
    let text = summary_text(&run.cfg, &summaries)?;
    write_atomic(&run.out_dir.join("summary.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn comparison_csv(summaries: &[CostSummary]) -> String {
    let mut out = String::from("schedule,controller,mean,stderr,runs\n");
    for s in summaries {
        let _ = writeln!(out, "{},joint,{},{},{}", s.name, s.joint_mean, s.joint_stderr, s.runs);
        for (i, (m, e)) in s.mean.iter().zip(&s.stderr).enumerate() {
            let _ = writeln!(out, "{},{},{m},{e},{}", s.name, i + 1, s.runs);
        }
    }
    out
}

fn summary_text(cfg: &ScenarioConfig, summaries: &[CostSummary]) -> Result<String, Error> {
    let mut out = String::new();
    let runs = summaries.first().map_or(0, |s| s.runs);
    let _ = writeln!(out, "scenario {}", cfg.name);
    let _ = writeln!(
        out,
        "runs {runs}, experiment seed {}, solver seed {}, samples {}",
        cfg.experiment.seed, cfg.solver.seed, cfg.solver.n_samples
    );
    let _ = writeln!(out, "\nmean joint cost");
    for s in summaries {
        let _ = writeln!(out, "  {:<10} {:>14.6} +/- {:.6}", s.name, s.joint_mean, s.joint_stderr);
    }
    if summaries.len() > 1 {
        let _ = writeln!(out, "\npaired differences (row - column)");
        for (a, sa) in summaries.iter().enumerate() {
            for sb in &summaries[a + 1..] {
                let (d, se) = sa.paired_difference(sb)?;
                let _ = writeln!(
                    out,
                    "  {:<10} - {:<10} {:>12.6} +/- {:.6}  (z = {:.2})",
                    sa.name,
                    sb.name,
                    d,
                    se,
                    d / se
                );
            }
        }
    }
    Ok(out)
}

fn print_config(source: &Source) -> Result<(), Error> {
    let cfg = source.load()?;
    print!("{}", cfg.to_toml()?);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Container(_) => 2,
        Error::Compatibility { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Config(source) => print_config(source),
        Command::Solve(c) => c.resolve().and_then(|r| solve(&r)),
        Command::Simulate(c) => c.resolve().and_then(|r| simulate(&r)),
        Command::Compare(c) => c.resolve().and_then(|r| compare(&r)),
        Command::Full(c) => c.resolve().and_then(|r| {
            solve(&r)?;
            simulate(&r)?;
            compare(&r)
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("netlq: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
