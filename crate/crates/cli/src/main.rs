use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rhgame::oracle::equilibrium_residual;
use rhgame::scenario::{
    self, load_trajectory_dump, plot_metrics, read_metrics_csv, write_events_log,
    write_metrics_csv, write_trajectory_dump, Scenario,
};
use rhgame::Error;

/// Receding-horizon routing game simulator.
#[derive(Debug, Parser)]
#[command(name = "rhgame", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write metrics (plus optional dumps and plots).
    Run(RunArgs),
    /// Check a scenario and its drawn population without running it.
    Validate(ScenarioArg),
    /// Evaluate the equilibrium residual of the final state of a trajectory dump.
    EquilibriumCheck(CheckArgs),
    /// Print the shipped demonstration scenario.
    Demo,
    /// Render a metrics CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct ScenarioArg {
    /// Scenario file; `-` reads standard input.
    #[arg(value_name = "SCENARIO", conflicts_with = "scenario")]
    path: Option<PathBuf>,
    /// Scenario file (alternative to the positional argument).
    #[arg(long)]
    scenario: Option<PathBuf>,
}

impl ScenarioArg {
    fn path(&self) -> Result<&Path, Error> {
        self.path
            .as_deref()
            .or(self.scenario.as_deref())
            .ok_or_else(|| Error::Config("no scenario given".into()))
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    input: ScenarioArg,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    gamma: Option<usize>,
    /// Number of recorded instants.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Convergence tolerance on the update norm.
    #[arg(long)]
    tol: Option<f64>,
    /// Also write trajectory.jsonl and events.jsonl.
    #[arg(long)]
    dump_trajectory: bool,
    /// Also write metrics.svg.
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Trajectory dump written by `run --dump-trajectory`.
    dump: PathBuf,
    /// Residual tolerance relative to the mean per-agent cost.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Metrics CSV written by `run`.
    metrics: PathBuf,
    /// Output SVG path; defaults to the CSV path with an .svg extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_ASSERTION: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::InfeasibleAgent { .. } | Error::InfeasibleInitial(_) => {
            EXIT_VALIDATION
        }
        Error::Config(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Network(_) => {
            EXIT_INPUT
        }
        _ => EXIT_ASSERTION,
    }
}

fn report(e: &Error) {
    match e {
        Error::Validation(list) => {
            eprintln!("error: scenario is invalid");
            for item in list {
                eprintln!("  - {item}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn read_scenario(path: &Path) -> Result<Scenario, Error> {
    let text = if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        s
    } else {
        fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    };
    Scenario::parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn cmd_run(args: &RunArgs) -> Result<u8, Error> {
    let mut scn = read_scenario(args.input.path()?)?;
    if let Some(g) = args.gamma {
        scn.gamma = g;
    }
    if let Some(s) = args.steps {
        scn.steps = s;
    }
    if let Some(s) = args.seed {
        scn.seed = s;
    }
    if let Some(t) = args.tol {
        scn.tol = t;
    }
    scn.validate()?;
    let out = scenario::run_scenario(&scn)?;
    fs::create_dir_all(&args.out)?;
    let table = out.metrics_table();
    let csv_path = args.out.join("metrics.csv");
    write_metrics_csv(&csv_path, &table)?;
    println!("wrote {} ({} rows)", csv_path.display(), table.rows.len());
    if args.dump_trajectory {
        let p = args.out.join("trajectory.jsonl");
        write_trajectory_dump(&p, &out.population.game, &out.trajectory)?;
        let e = args.out.join("events.jsonl");
        write_events_log(&e, &out.population, &out.events)?;
        println!("wrote {} and {}", p.display(), e.display());
    }
    if args.svg {
        let p = args.out.join("metrics.svg");
        plot_metrics(&p, &table)?;
        println!("wrote {}", p.display());
    }
    println!(
        "agents {}, period {}, gamma {}, instants {}",
        out.population.game.n_agents(),
        scn.period,
        scn.gamma,
        out.trajectory.len()
    );
    for s in &out.segments {
        let c = &s.convergence;
        match c.t_star {
            Some(t) => println!(
                "segment {}..={}: converged at t*={t} (tol {:e}), periodicity defect {:.3e}, residual {:.3e} (mean cost {:.4})",
                s.range.0,
                s.range.1,
                c.tol,
                c.periodicity_defect.unwrap_or(0.0),
                s.residual.max,
                s.mean_cost
            ),
            None => println!(
                "segment {}..={}: not converged (tol {:e}), residual {:.3e} (mean cost {:.4})",
                s.range.0, s.range.1, c.tol, s.residual.max, s.mean_cost
            ),
        }
    }
    Ok(0)
}

fn cmd_validate(args: &ScenarioArg) -> Result<u8, Error> {
    let path = args.path()?;
    let scn = read_scenario(path)?;
    scn.validate()?;
    let pop = scenario::generate_population(&scn)?;
    let mut problems = Vec::new();
    for a in &pop.game.agents {
        if a.demand > a.capacity() {
            problems.push(format!(
                "agent {} (group '{}'): demand {} exceeds window capacity {}",
                a.id,
                pop.group_of(a.id).unwrap_or("?"),
                a.demand,
                a.capacity()
            ));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    println!("{}: ok", path.display());
    println!(
        "  {} agents in {} groups, {} links, {} paths, period {}",
        pop.game.n_agents(),
        pop.groups.len(),
        pop.game.network.n_links(),
        pop.game.network.n_paths(),
        scn.period
    );
    for (name, members) in &pop.groups {
        println!("  group {name}: {} agents", members.len());
    }
    Ok(0)
}

fn cmd_equilibrium_check(args: &CheckArgs) -> Result<u8, Error> {
    let state = load_trajectory_dump(&args.dump)?;
    let rep = equilibrium_residual(&state.game, &state.x, state.theta)?;
    let eps = args.tol * rep.mean_cost();
    println!("state t={} phase={}", state.t, state.theta);
    match rep.argmax {
        Some(a) => println!("max residual {:.6e} (agent {a})", rep.max),
        None => println!("max residual 0 (no active agents)"),
    }
    println!(
        "threshold {eps:.6e} = {:e} x mean cost {:.6}",
        args.tol,
        rep.mean_cost()
    );
    if rep.is_equilibrium(eps) {
        println!("verdict: ε-equilibrium");
        Ok(0)
    } else {
        println!("verdict: not equilibrium");
        Ok(EXIT_VALIDATION)
    }
}

fn cmd_plot(args: &PlotArgs) -> Result<u8, Error> {
    let table = read_metrics_csv(&args.metrics)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.metrics.with_extension("svg"));
    plot_metrics(&out, &table)?;
    println!("wrote {}", out.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Validate(a) => cmd_validate(a),
        Command::EquilibriumCheck(a) => cmd_equilibrium_check(a),
        Command::Demo => {
            print!("{}", scenario::DEMO_SCENARIO);
            Ok(0)
        }
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
