use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hpm_core::dataset::write_dataset_csv;
use hpm_core::harness::{rank_table_csv, write_atomic};
use hpm_core::{
    emit_report, generate_target_model, rank_sources, run_sweep_with_bank, ExperimentReport,
    GridSpec, RankedSource, RankingStrategy, ReportFormat, ScenarioConfig, SourceBank,
    TaskDescriptor, Technique, TechniqueSetting,
};

#[derive(Parser)]
#[command(
    name = "hpm",
    version,
    about = "Zero-shot regression with hyper-process models"
)]
struct Cli {
    /// Scenario JSON file, or "default" for the built-in deep-drawing scenario
    #[arg(long, global = true, default_value = "default")]
    config: String,
    /// Seed for the surrogate noise, MLP initialization and inversion restarts
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the surrogate for every process and write one CSV per process
    GenData,
    /// Train one source model per process and cache them with their grid shapes
    TrainSources,
    /// Print the candidate sources for a target, nearest first
    Rank {
        #[arg(long)]
        target: u32,
        #[arg(long, default_value = "euc")]
        strategy: RankingStrategy,
    },
    /// Synthesize a model for a target from its nearest sources
    Generate {
        #[arg(long)]
        target: u32,
        #[arg(long)]
        n_sources: usize,
        #[arg(long, default_value = "pol3")]
        technique: Technique,
        #[arg(long, default_value = "euc")]
        strategy: RankingStrategy,
    },
    /// Run the full source-count sweep and write every report format
    Sweep,
    /// Re-emit a saved sweep report in another format
    Report {
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Saved JSON report; defaults to <out>/report.json
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Plotdata,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Plotdata => ReportFormat::Plotdata,
        }
    }
}

/// A source bank together with the scenario that produced it.
#[derive(Serialize, Deserialize)]
struct CachedBank {
    config: ScenarioConfig,
    bank: SourceBank,
}

const BANK_FILE: &str = "sources.json";

/// Everything that changes the trained sources.
fn same_sources(a: &ScenarioConfig, b: &ScenarioConfig) -> bool {
    a.descriptors == b.descriptors
        && a.bhf_values == b.bhf_values
        && a.friction_values == b.friction_values
        && a.surrogate == b.surrogate
        && a.grid_levels == b.grid_levels
        && a.source_spec == b.source_spec
}

fn build_bank(config: &ScenarioConfig, out: &Path) -> Result<SourceBank> {
    let bank = SourceBank::build(config).context("training source models")?;
    let cached = CachedBank {
        config: config.clone(),
        bank,
    };
    let path = out.join(BANK_FILE);
    write_atomic(&path, serde_json::to_string(&cached)?.as_bytes())?;
    eprintln!(
        "trained {} source models -> {}",
        cached.bank.models.len(),
        path.display()
    );
    Ok(cached.bank)
}

/// Reuse `<out>/sources.json` when it was built from the same sources, otherwise retrain.
fn load_or_build_bank(config: &ScenarioConfig, out: &Path) -> Result<SourceBank> {
    let path = out.join(BANK_FILE);
    if let Ok(text) = fs::read_to_string(&path) {
        match serde_json::from_str::<CachedBank>(&text) {
            Ok(cached) if same_sources(&cached.config, config) => return Ok(cached.bank),
            Ok(_) => eprintln!("{} is stale, retraining", path.display()),
            Err(e) => eprintln!("ignoring unreadable {}: {e}", path.display()),
        }
    }
    build_bank(config, out)
}

fn setting_for(config: &ScenarioConfig, technique: Technique) -> TechniqueSetting {
    config
        .techniques
        .iter()
        .chain(TechniqueSetting::defaults().iter())
        .find(|s| s.technique == technique)
        .cloned()
        .unwrap_or_else(|| TechniqueSetting::unpenalized(technique))
}

/// Retained processes other than `target`, with their ranking.
fn ranked(
    config: &ScenarioConfig,
    target: u32,
    strategy: RankingStrategy,
) -> Result<(Vec<TaskDescriptor>, Vec<RankedSource>)> {
    let t = config.descriptor(target)?;
    let candidates: Vec<_> = config
        .retained()
        .into_iter()
        .filter(|d| d.id() != target)
        .cloned()
        .collect();
    let ranking = rank_sources(&candidates, t, strategy)?;
    Ok((candidates, ranking))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = ScenarioConfig::load(&cli.config)
        .with_context(|| format!("loading config '{}'", cli.config))?;
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    config.validate()?;
    let out = cli.out.as_path();

    match cli.command {
        Command::GenData => {
            let dir = out.join("data");
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for d in &config.descriptors {
                let ds = hpm_core::sample_dataset(
                    d,
                    &config.bhf_values,
                    &config.friction_values,
                    &config.surrogate,
                )?;
                write_dataset_csv(&ds, dir.join(format!("process_{:02}.csv", d.id())))?;
            }
            println!(
                "wrote {} datasets to {}",
                config.descriptors.len(),
                dir.display()
            );
        }
        Command::TrainSources => {
            build_bank(&config, out)?;
        }
        Command::Rank { target, strategy } => {
            let (candidates, ranking) = ranked(&config, target, strategy)?;
            print!("{}", rank_table_csv(&ranking, &candidates)?);
        }
        Command::Generate {
            target,
            n_sources,
            technique,
            strategy,
        } => {
            let ids: Vec<u32> = ranked(&config, target, strategy)?
                .1
                .into_iter()
                .map(|r| r.id)
                .collect();
            if n_sources < 2 || n_sources > ids.len() {
                bail!("--n-sources must be between 2 and {}", ids.len());
            }
            let mut selected = ids[..n_sources].to_vec();
            selected.sort_unstable();
            let bank = load_or_build_bank(&config, out)?;
            let models = selected
                .iter()
                .map(|&i| bank.model(i).cloned())
                .collect::<hpm_core::Result<Vec<_>>>()?;
            let descriptors = selected
                .iter()
                .map(|&i| bank.descriptor(i).cloned())
                .collect::<hpm_core::Result<Vec<_>>>()?;
            let grid = GridSpec {
                min: bank.grid.min.clone(),
                max: bank.grid.max.clone(),
                levels: bank.grid.levels,
            };
            let options = config.hpm_options(&setting_for(&config, technique), strategy);
            let generated = generate_target_model(
                &models,
                &descriptors,
                bank.descriptor(target)?,
                &grid,
                &options,
            )?;
            let mse = hpm_core::shape_mse(&generated.shape, bank.shape(target)?)?;
            let path = out.join(format!(
                "generated_t{target:02}_{}_{}_n{n_sources}.json",
                technique.name().to_ascii_lowercase(),
                strategy.name().to_ascii_lowercase()
            ));
            write_atomic(&path, serde_json::to_string_pretty(&generated)?.as_bytes())?;
            if generated.provenance.poorly_invertible {
                eprintln!("warning: descriptor is poorly invertible for this source set");
            }
            println!("sources {selected:?}");
            println!("shape_mse {mse:.6e}");
            println!("wrote {}", path.display());
        }
        Command::Sweep => {
            let bank = load_or_build_bank(&config, out)?;
            let report = run_sweep_with_bank(&config, &bank)?;
            let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
            for format in [
                ReportFormat::Csv,
                ReportFormat::Json,
                ReportFormat::Plotdata,
            ] {
                for p in emit_report(&report, format, out)? {
                    println!("wrote {}", p.display());
                }
            }
            eprintln!("{} rows, {failed} failed", report.rows.len());
        }
        Command::Report { format, input } => {
            let input = input.unwrap_or_else(|| out.join("report.json"));
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let report: ExperimentReport = serde_json::from_str(&text)?;
            for p in emit_report(&report, format.into(), out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
