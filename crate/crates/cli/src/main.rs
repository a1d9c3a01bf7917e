use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rdlp::config::ExperimentConfig;
use rdlp::data::{generate_synthetic, write_csv, SyntheticSpec};
use rdlp::runner::{
    emit_plots, load_record, load_results, report_table, run_grid, select_and_rank, write_report,
    write_results, RUNS_DIR,
};
use rdlp::scoring::ScoringMatrix;

#[derive(Parser)]
#[command(
    name = "rdlp",
    version,
    about = "Cluster daily load profiles into representative profiles and rank the runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment grid, persist the runs and rank them.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rank persisted runs: combined index first, then the scoring matrix.
    Rank {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Write RDLP curve and cluster size CSV/SVG files for one run.
    Plot {
        #[arg(long)]
        run: String,
        #[arg(long, default_value = "results")]
        results: PathBuf,
        /// Defaults to `<results>/plots/<run>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic profile CSV from an archetype spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output } => run(config, output),
        Command::Rank {
            results,
            top_n,
            matrix,
        } => rank(results, top_n, matrix),
        Command::Plot { run, results, out } => plot(&run, results, out),
        Command::Synth { spec, out } => synth(spec, out),
    }
}

fn run(config_path: PathBuf, output: Option<PathBuf>) -> Result<()> {
    let mut config = ExperimentConfig::from_file(&config_path)
        .with_context(|| format!("loading config {}", config_path.display()))?;
    if let Some(dir) = output {
        config.output_dir = dir;
    }
    let matrix = match &config.scoring_matrix {
        Some(p) => ScoringMatrix::from_file(p)
            .with_context(|| format!("loading matrix {}", p.display()))?,
        None => ScoringMatrix::default(),
    };
    let data = config.load_dataset().context("loading dataset")?;
    eprintln!("{} profiles loaded", data.len());

    let records = run_grid(&config, &data)?;
    let failed = records.iter().filter(|r| r.ci.is_none()).count();
    eprintln!(
        "{} runs executed, {failed} without a combined index",
        records.len()
    );
    write_results(&config.output_dir, &config, &matrix, &data, &records)
        .with_context(|| format!("writing results to {}", config.output_dir.display()))?;

    let report = select_and_rank(&records, &data, config.top_n, &matrix, &config.qualitative)?;
    write_report(&config.output_dir, &report)?;
    print!("{}", report_table(&report));
    eprintln!("results written to {}", config.output_dir.display());
    Ok(())
}

fn rank(dir: PathBuf, top_n: Option<usize>, matrix: Option<PathBuf>) -> Result<()> {
    let results =
        load_results(&dir).with_context(|| format!("reading results {}", dir.display()))?;
    let matrix = match matrix {
        Some(p) => ScoringMatrix::from_file(&p)
            .with_context(|| format!("loading matrix {}", p.display()))?,
        None => results.matrix,
    };
    let top_n = top_n.unwrap_or(results.config.top_n);
    let report = select_and_rank(
        &results.records,
        &results.data,
        top_n,
        &matrix,
        &results.config.qualitative,
    )?;
    write_report(&dir, &report)?;
    print!("{}", report_table(&report));
    Ok(())
}

fn plot(run_id: &str, dir: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let path = dir.join(RUNS_DIR).join(format!("{run_id}.json"));
    if !path.is_file() {
        bail!("no run {run_id} in {}", dir.display());
    }
    let record = load_record(&path)?;
    if record.clusters.iter().all(|c| c.rdlp.is_none()) {
        bail!("run {run_id} has no RDLPs to plot");
    }
    let out = out.unwrap_or_else(|| dir.join("plots").join(run_id));
    for p in emit_plots(&record, &out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn synth(spec: PathBuf, out: PathBuf) -> Result<()> {
    let spec = SyntheticSpec::from_file(&spec)
        .with_context(|| format!("loading spec {}", spec.display()))?;
    let set = generate_synthetic(&spec)?;
    write_csv(&set, &out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("{} profiles written to {}", set.len(), out.display());
    Ok(())
}
