use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gdnlab::constructions::{assign_labels_rni, assign_labels_uid, parse_targets};
use gdnlab::graph::{parse_graph, AttributedGraph};
use gdnlab::harness::{aggregate_dir, run_experiment_with, write_csv, RunConfig};
use gdnlab::orbits::orbit_partition;
use gdnlab::wl::{wl_indistinguishable, wl_refine};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "gdnlab", version, about = "Graph decision network laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Rni,
    Uid,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, applied after the file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Aggregate every run below a directory into `aggregate.csv`.
    Aggregate { dir: PathBuf },
    /// Decide whether 1-WL tells two graphs apart.
    WlCheck { first: PathBuf, second: PathBuf },
    /// Print the automorphism orbits of a graph.
    Orbits { graph: PathBuf },
    /// Assign per-orbit target labels with the symmetry-breaking construction.
    Construct {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_graph(path: &Path) -> Result<AttributedGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_graph(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cfg_path: &Path, overrides: &[String]) -> Result<()> {
    let text =
        fs::read_to_string(cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let mut cfg = RunConfig::parse(&text, overrides)?;
    let default_dir = PathBuf::from("runs").join(cfg.run_name());
    let dir = cfg.out_dir.get_or_insert(default_dir).clone();
    let out = run_experiment_with(&cfg, &mut |epoch, results| {
        let cols: Vec<String> = results.iter().map(|(m, v)| format!("{m}={v:.4}")).collect();
        println!("epoch {epoch}: {}", cols.join(" "));
    })?;
    if let Some(e) = out.stopped_at {
        println!("stop condition met at epoch {e}");
    }
    println!("results written to {}", dir.display());
    Ok(())
}

fn aggregate(dir: &Path) -> Result<()> {
    let rows = aggregate_dir(dir)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    fs::write(dir.join("aggregate.csv"), &buf)?;
    print!("{}", String::from_utf8(buf)?);
    Ok(())
}

fn wl_check(a: &Path, b: &Path) -> Result<()> {
    let (g1, g2) = (load_graph(a)?, load_graph(b)?);
    let same = wl_indistinguishable(&g1, &g2);
    println!(
        "{}",
        if same {
            "indistinguishable"
        } else {
            "distinguishable"
        }
    );
    println!(
        "stable after {} / {} rounds",
        wl_refine(&g1).stable_round,
        wl_refine(&g2).stable_round
    );
    Ok(())
}

fn orbits(path: &Path) -> Result<()> {
    let p = orbit_partition(&load_graph(path)?)?;
    for (k, o) in p.orbits.iter().enumerate() {
        let nodes: Vec<String> = o.iter().map(usize::to_string).collect();
        println!("orbit {k}: {}", nodes.join(" "));
    }
    Ok(())
}

fn construct(mode: Mode, graph: &Path, targets: &Path, seed: u64) -> Result<()> {
    let g = load_graph(graph)?;
    let text =
        fs::read_to_string(targets).with_context(|| format!("reading {}", targets.display()))?;
    let t = parse_targets(&text)
        .map_err(anyhow::Error::msg)
        .context("parsing targets")?;
    let labels = match mode {
        Mode::Uid => assign_labels_uid(&g, &t)?,
        Mode::Rni => assign_labels_rni(&g, &t, &mut ChaCha8Rng::seed_from_u64(seed))?,
    };
    let p = orbit_partition(&g)?;
    for (i, l) in labels.iter().enumerate() {
        println!("{i} {} {l}", p.orbit_of[i]);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run { config, overrides } => run(config, overrides),
        Command::Aggregate { dir } => aggregate(dir),
        Command::WlCheck { first, second } => wl_check(first, second),
        Command::Orbits { graph } => orbits(graph),
        Command::Construct {
            mode,
            graph,
            targets,
            seed,
        } => construct(*mode, graph, targets, *seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
