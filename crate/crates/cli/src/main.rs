//! `exostab`: synthesize or ingest perturbation trials, compute WBAM, fit the
//! assistance response surface and run the statistics battery.
//!
//! Settings resolve as built-in defaults < `--config` file < `EXOSTAB_*`
//! environment < command-line flags.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use exostab_core::config::{ConfigError, DataSource, RunConfig};
use exostab_core::dataset::Outcome;
use exostab_core::pipeline::{self, FailureClass, PipelineError};

#[derive(Debug, Parser)]
#[command(name = "exostab", version, about = "Exoskeleton assistance evaluation pipeline")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for synthesis and bootstrap.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every CPU.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Outcome for single-outcome stages.
    #[arg(long, global = true, value_enum)]
    outcome: Option<OutcomeArg>,
    /// Trial source.
    #[arg(long, global = true, value_enum)]
    source: Option<SourceArg>,
    /// Recorded session root; implies `--source directory`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutcomeArg {
    Wbam,
    Opus,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceArg {
    Walker,
    Planted,
    Directory,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic walker study (session manifests and trial CSVs) to
    /// the output directory.
    Synth,
    /// Per-trial WBAM results and the exclusion log.
    Wbam,
    /// Aggregate trials over the condition grid for the selected outcome.
    Sweep,
    /// Response surface, optimum, bootstrap CIs and contour figure.
    Surface,
    /// Mixed model, ICC, repeated-measures ANOVA and trend regressions.
    Stats,
    /// Every stage for both outcomes plus `report.json`.
    Report,
    /// Print the resolved configuration as TOML.
    Config,
}

fn resolve(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply_env()?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.paths.out_dir = out.clone();
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(o) = cli.outcome {
        config.outcome = match o {
            OutcomeArg::Wbam => Outcome::Wbam,
            OutcomeArg::Opus => Outcome::Opus,
        };
    }
    if let Some(dir) = &cli.data {
        config.paths.data_dir = Some(dir.clone());
        config.source = DataSource::Directory;
    }
    if let Some(s) = cli.source {
        config.source = match s {
            SourceArg::Walker => DataSource::Walker,
            SourceArg::Planted => DataSource::Planted,
            SourceArg::Directory => DataSource::Directory,
        };
    }
    config.validate()?;
    Ok(config)
}

fn report_written(entries: &[pipeline::ArtifactEntry], config: &RunConfig) {
    for e in entries {
        println!("{}  {}", e.sha256, config.paths.out_dir.join(&e.file).display());
    }
}

fn run(command: &Command, config: &RunConfig) -> Result<(), PipelineError> {
    let hash = config.hash();
    let (out, seed, outcome) = (config.paths.out_dir.as_path(), config.seed, config.outcome);
    match command {
        Command::Config => {
            print!("{}", config.to_toml_string()?);
        }
        Command::Synth => {
            let paths = pipeline::with_pool(config, || pipeline::synthesize(config, out))?;
            println!("wrote {} sessions under {}", paths.len(), out.display());
        }
        Command::Wbam => {
            let trials = pipeline::with_pool(config, || pipeline::collect_trials(config))?;
            let exclusions = pipeline::assemble(&trials, Outcome::Wbam)?.exclusions;
            let entries =
                pipeline::write_artifacts(out, &pipeline::trial_artifacts(&trials, &exclusions, &hash, seed))?;
            println!("{} trials, {} excluded", trials.len(), exclusions.len());
            report_written(&entries, config);
        }
        Command::Sweep => {
            let data = pipeline::with_pool(config, || pipeline::assemble(&pipeline::collect_trials(config)?, outcome))?;
            let entries = pipeline::write_artifacts(out, &[pipeline::dataset_artifact(&data, &hash, seed)])?;
            println!("{} records over {} conditions", data.records().len(), data.conditions().len());
            report_written(&entries, config);
        }
        Command::Surface => {
            let (surface, grid) = pipeline::with_pool(config, || {
                let data = pipeline::assemble(&pipeline::collect_trials(config)?, outcome)?;
                pipeline::surface_stage(&data, config)
            })?;
            let svg = pipeline::render_figure(&surface, &grid, &hash, seed)
                .map_err(|e| stage_error(pipeline::Stage::Report, FailureClass::Numerical, e))?;
            let entries =
                pipeline::write_artifacts(out, &pipeline::surface_artifacts(&surface, &grid, &svg, &hash, seed)?)?;
            let (o, b) = (&surface.optimum, &surface.bootstrap);
            println!(
                "{outcome} optimum: magnitude {:.4} [{:.4}, {:.4}], duration {:.3} [{:.3}, {:.3}], value {:.3}",
                o.magnitude,
                b.magnitude_ci.lower,
                b.magnitude_ci.upper,
                o.duration,
                b.duration_ci.lower,
                b.duration_ci.upper,
                o.value
            );
            report_written(&entries, config);
        }
        Command::Stats => {
            let stats = pipeline::with_pool(config, || {
                let data = pipeline::assemble(&pipeline::collect_trials(config)?, outcome)?;
                pipeline::stats_battery(&data, config)
                    .map_err(|e| stage_error(pipeline::Stage::Stats, pipeline::stats_class(&e), e))
            })?;
            let entries = pipeline::write_artifacts(out, &[pipeline::stats_artifact(&stats, &hash, seed)])?;
            let a = &stats.anova;
            println!(
                "{outcome}: ICC {:.3}; ANOVA F({}, {}) = {:.3}, p = {:.4}",
                stats.icc, a.df_effect, a.df_error, a.f, a.p_value
            );
            report_written(&entries, config);
        }
        Command::Report => {
            let (bundle, entries) = pipeline::run_and_write(config)?;
            for o in &bundle.outcomes {
                let opt = &o.surface.optimum;
                println!(
                    "{}: optimum ({:.4}, {:.3}) value {:.3}; ICC {:.3}",
                    o.outcome, opt.magnitude, opt.duration, opt.value, o.stats.icc
                );
            }
            report_written(&entries, config);
            println!("report: {}", out.join(pipeline::REPORT_FILE).display());
        }
    }
    Ok(())
}

fn stage_error(
    stage: pipeline::Stage,
    class: FailureClass,
    e: impl std::error::Error + Send + Sync + 'static,
) -> PipelineError {
    PipelineError::Stage { stage, trial_id: None, class, source: Box::new(e) }
}

fn exit_code(class: FailureClass) -> u8 {
    match class {
        FailureClass::Config => 2,
        FailureClass::Data => 3,
        FailureClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = resolve(&cli).map_err(PipelineError::from).and_then(|config| run(&cli.command, &config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("exostab: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_failure_class() {
        assert_eq!(exit_code(FailureClass::Config), 2);
        assert_eq!(exit_code(FailureClass::Data), 3);
        assert_eq!(exit_code(FailureClass::Numerical), 4);
    }

    #[test]
    fn data_flag_selects_directory_source() {
        let cli = Cli::parse_from(["exostab", "wbam", "--data", "/d", "--workers", "2"]);
        let c = resolve(&cli).unwrap();
        assert_eq!(c.source, DataSource::Directory);
        assert_eq!(c.workers, 2);
    }
}
