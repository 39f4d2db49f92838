//! Command-line surface: population synthesis, single simulations,
//! calibration, ensembles, validation reports, and cross-region transfer.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! divergence.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use epidiff::calibration::{calibrate, ObservationSeries};
use epidiff::ensemble::{
    read_ensemble_csv, read_members_csv, run_ensemble, write_ensemble_csv, write_members_csv,
};
use epidiff::epi_model::SimMode;
use epidiff::metrics::{comparison_report, read_breakdown_csv, write_summary_breakdown_csv};
use epidiff::population::{generate_synthetic, load_population, save_population};
use epidiff::FitResult;

use config::{config_hash, load_run_config, write_manifest, RunConfig};

#[derive(Parser)]
#[command(name = "epidiff", version, about = "Differentiable agent-based epidemic simulator")]
struct Cli {
    /// Cap on worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population: agents.csv + venues.csv.
    SynthPop {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: io.out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one simulation and write trace.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// hard | relaxed | straight-through (default hard).
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Fit parameters to observed weekly cases and write fit.json.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// observed.csv (default: io.observed).
        #[arg(long)]
        observed: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Run a hard-mode ensemble: ensemble.csv + members.csv + breakdown.csv.
    Ensemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Calibrated parameters; [disease] is used when absent.
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        members: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Compare an ensemble against observations: report.json + curves.csv.
    Report {
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        observed: PathBuf,
        /// members.csv for per-member statistics (optional).
        #[arg(long)]
        members: Option<PathBuf>,
        /// breakdown.csv to embed (optional).
        #[arg(long)]
        breakdown: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Apply a fit from one region to another population, with the seed
    /// count overridden by hand.
    Transfer {
        /// fit.json trained elsewhere.
        #[arg(long)]
        fit: PathBuf,
        /// Target agents.csv, or a directory holding agents.csv + venues.csv.
        #[arg(long)]
        population: PathBuf,
        /// venues.csv when --population is a file (default: sibling venues.csv).
        #[arg(long)]
        venues: Option<PathBuf>,
        /// Expected number of initial infectors in the target region.
        #[arg(long)]
        seed_count: f64,
        /// Optional config for [ensemble], [policies.*], horizon, seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        members: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
}

/// Error wrapper carrying the process exit code.
enum CliError {
    Data(anyhow::Error),
    Divergence(String),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Divergence(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(anyhow::anyhow!("cannot create {}: {e}", dir.display())))
}

fn resolve_population(
    cfg: &RunConfig,
    seed: u64,
) -> Result<(epidiff::Population, epidiff::ContactGraph), CliError> {
    let pop = match (&cfg.io.agents, &cfg.io.venues) {
        (Some(agents), Some(venues)) => {
            config::require_exists(agents)?;
            config::require_exists(venues)?;
            load_population(agents, venues).map_err(anyhow::Error::from)?
        }
        (None, None) => match &cfg.population {
            Some(spec) => generate_synthetic(spec, seed).map_err(anyhow::Error::from)?,
            None => {
                return Err(CliError::Data(anyhow::anyhow!(
                    "config needs either [population] or io.agents + io.venues"
                )))
            }
        },
        _ => {
            return Err(CliError::Data(anyhow::anyhow!(
                "io.agents and io.venues must be set together"
            )))
        }
    };
    let graph = epidiff::population::build_contact_graph(&pop);
    Ok((pop, graph))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::SynthPop { config, seed, out } => {
            let (mut cfg, _) = load_run_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.io.out_dir = o;
            }
            let hash = config_hash(&cfg, "synth-pop")?;
            let spec = cfg
                .population
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("config has no [population] table"))?;
            let pop = generate_synthetic(spec, cfg.seed).map_err(anyhow::Error::from)?;
            ensure_out_dir(&cfg.io.out_dir)?;
            let agents = cfg.io.out_dir.join("agents.csv");
            let venues = cfg.io.out_dir.join("venues.csv");
            save_population(&pop, &agents, &venues).map_err(anyhow::Error::from)?;
            write_manifest(&cfg.io.out_dir, "synth-pop", &hash, &[&agents, &venues])?;
            println!(
                "wrote {} agents, {} venues to {}",
                pop.n_agents(),
                pop.n_venues(),
                cfg.io.out_dir.display()
            );
            Ok(())
        }
        Command::Simulate { config, seed, out, mode, horizon } => {
            let (mut cfg, _) = load_run_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.io.out_dir = o;
            }
            if let Some(h) = horizon {
                cfg.horizon_days = h;
            }
            let hash = config_hash(&cfg, "simulate")?;
            let mode = match mode.as_deref() {
                None => SimMode::Hard,
                Some(m) => SimMode::parse(m)
                    .ok_or_else(|| anyhow::anyhow!("unknown mode `{m}` (hard | relaxed | straight-through)"))?,
            };
            let (pop, graph) = resolve_population(&cfg, cfg.seed)?;
            let trace = epidiff::epi_model::run(
                &pop,
                &graph,
                &cfg.disease,
                &cfg.policies,
                cfg.horizon_days,
                cfg.seed,
                mode,
            )
            .map_err(anyhow::Error::from)?;
            ensure_out_dir(&cfg.io.out_dir)?;
            let path = cfg.io.out_dir.join("trace.csv");
            trace.write_csv(&path).map_err(anyhow::Error::from)?;
            write_manifest(&cfg.io.out_dir, "simulate", &hash, &[&path])?;
            println!(
                "simulated {} days, {} cumulative infections -> {}",
                trace.days(),
                trace.cumulative_infections(),
                path.display()
            );
            Ok(())
        }
        Command::Calibrate { config, seed, out, observed, iterations } => {
            let (mut cfg, _) = load_run_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.io.out_dir = o;
            }
            if let Some(it) = iterations {
                cfg.calibration.iterations = it;
            }
            let hash = config_hash(&cfg, "calibrate")?;
            let observed_path = observed
                .or_else(|| cfg.io.observed.clone())
                .ok_or_else(|| anyhow::anyhow!("no observed.csv (flag --observed or io.observed)"))?;
            config::require_exists(&observed_path)?;
            let obs = ObservationSeries::load_csv(&observed_path).map_err(map_calib)?;
            let (pop, graph) = resolve_population(&cfg, cfg.seed)?;
            println!(
                "calibrating {} iterations on {} agents, {} observed weeks",
                cfg.calibration.iterations,
                pop.n_agents(),
                obs.n_weeks()
            );
            let mut fit = calibrate(
                &pop,
                &graph,
                &obs,
                &cfg.policies,
                &cfg.disease,
                &cfg.calibration,
                cfg.seed,
            )
            .map_err(map_calib)?;
            fit.config_hash = hash.clone();
            ensure_out_dir(&cfg.io.out_dir)?;
            let path = cfg.io.out_dir.join("fit.json");
            fit.write_json(&path).map_err(map_calib)?;
            write_manifest(&cfg.io.out_dir, "calibrate", &hash, &[&path])?;
            println!(
                "best loss {:.6} at iteration {} -> {}",
                fit.loss_history[fit.best_iteration],
                fit.best_iteration,
                path.display()
            );
            Ok(())
        }
        Command::Ensemble { config, seed, out, fit, members, horizon } => {
            let (mut cfg, _) = load_run_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.io.out_dir = o;
            }
            if let Some(m) = members {
                cfg.ensemble.n_members = m;
            }
            if let Some(h) = horizon {
                cfg.horizon_days = h;
            }
            let hash = config_hash(&cfg, "ensemble")?;
            let params = match &fit {
                Some(path) => {
                    config::require_exists(path)?;
                    FitResult::read_json(path).map_err(map_calib)?.params
                }
                None => cfg.disease.clone(),
            };
            let (pop, graph) = resolve_population(&cfg, cfg.seed)?;
            let summary = run_ensemble(
                &pop,
                &graph,
                &params,
                &cfg.policies,
                cfg.horizon_days,
                &cfg.ensemble,
                cfg.seed,
            )
            .map_err(anyhow::Error::from)?;
            ensure_out_dir(&cfg.io.out_dir)?;
            let e_path = cfg.io.out_dir.join("ensemble.csv");
            let m_path = cfg.io.out_dir.join("members.csv");
            let b_path = cfg.io.out_dir.join("breakdown.csv");
            write_ensemble_csv(&summary, cfg.start_week, &e_path).map_err(anyhow::Error::from)?;
            write_members_csv(&summary, cfg.start_week, &m_path).map_err(anyhow::Error::from)?;
            write_summary_breakdown_csv(&summary, &b_path).map_err(anyhow::Error::from)?;
            write_manifest(&cfg.io.out_dir, "ensemble", &hash, &[&e_path, &m_path, &b_path])?;
            println!(
                "{} members over {} weeks -> {}",
                summary.n_members,
                summary.n_weeks(),
                cfg.io.out_dir.display()
            );
            Ok(())
        }
        Command::Report { ensemble, observed, members, breakdown, out } => {
            config::require_exists(&ensemble)?;
            config::require_exists(&observed)?;
            let (start_week, mut summary) = read_ensemble_csv(&ensemble).map_err(anyhow::Error::from)?;
            if let Some(m) = &members {
                config::require_exists(m)?;
                let weekly = read_members_csv(m).map_err(anyhow::Error::from)?;
                summary.member_cumulative = weekly.iter().map(|w| w.iter().sum()).collect();
                summary.n_members = weekly.len();
                summary.member_weekly = weekly;
            }
            let obs = ObservationSeries::load_csv(&observed).map_err(map_calib)?;
            if obs.start_week != start_week {
                return Err(CliError::Data(anyhow::anyhow!(
                    "week ranges differ: ensemble starts at week {start_week}, observations at {}",
                    obs.start_week
                )));
            }
            let mut report = comparison_report(&summary, &obs).map_err(anyhow::Error::from)?;
            if let Some(b) = &breakdown {
                config::require_exists(b)?;
                let (eth, age) = read_breakdown_csv(b).map_err(anyhow::Error::from)?;
                report.ethnicity_breakdown = eth;
                report.age_breakdown = age;
            }
            ensure_out_dir(&out)?;
            let r_path = out.join("report.json");
            let c_path = out.join("curves.csv");
            let b_path = out.join("breakdown.csv");
            report.write_json(&r_path).map_err(anyhow::Error::from)?;
            report.write_curves_csv(&c_path).map_err(anyhow::Error::from)?;
            report.write_breakdown_csv(&b_path).map_err(anyhow::Error::from)?;
            println!(
                "cumulative simulated {:.1} vs observed {:.1}; peak week {} vs {} -> {}",
                report.cumulative_sim,
                report.cumulative_obs,
                report.peak_week_sim,
                report.peak_week_obs,
                r_path.display()
            );
            Ok(())
        }
        Command::Transfer { fit, population, venues, seed_count, config, seed, out, members, horizon } => {
            config::require_exists(&fit)?;
            let fit_result = FitResult::read_json(&fit).map_err(map_calib)?;
            let (agents_path, venues_path) = if population.is_dir() {
                (population.join("agents.csv"), population.join("venues.csv"))
            } else {
                let v = venues.unwrap_or_else(|| {
                    population.parent().unwrap_or(Path::new(".")).join("venues.csv")
                });
                (population.clone(), v)
            };
            config::require_exists(&agents_path)?;
            config::require_exists(&venues_path)?;
            let pop = load_population(&agents_path, &venues_path).map_err(anyhow::Error::from)?;
            let graph = epidiff::population::build_contact_graph(&pop);

            let (mut cfg, _) = match &config {
                Some(path) => load_run_config(path)?,
                None => (RunConfig::default(), String::new()),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.io.out_dir = o;
            }
            if let Some(m) = members {
                cfg.ensemble.n_members = m;
            }
            if let Some(h) = horizon {
                cfg.horizon_days = h;
            }
            let hash = config_hash(&cfg, "transfer")?;

            if seed_count < 0.0 || seed_count >= pop.n_agents() as f64 {
                return Err(CliError::Data(anyhow::anyhow!(
                    "--seed-count must lie in [0, {})",
                    pop.n_agents()
                )));
            }
            let mut params = fit_result.params.clone();
            // expected initial infectors = beta * N in the target region
            params.beta = seed_count / pop.n_agents() as f64;

            let summary = run_ensemble(
                &pop,
                &graph,
                &params,
                &cfg.policies,
                cfg.horizon_days,
                &cfg.ensemble,
                cfg.seed,
            )
            .map_err(anyhow::Error::from)?;
            ensure_out_dir(&cfg.io.out_dir)?;
            let e_path = cfg.io.out_dir.join("ensemble.csv");
            let m_path = cfg.io.out_dir.join("members.csv");
            let b_path = cfg.io.out_dir.join("breakdown.csv");
            write_ensemble_csv(&summary, cfg.start_week, &e_path).map_err(anyhow::Error::from)?;
            write_members_csv(&summary, cfg.start_week, &m_path).map_err(anyhow::Error::from)?;
            write_summary_breakdown_csv(&summary, &b_path).map_err(anyhow::Error::from)?;
            write_manifest(&cfg.io.out_dir, "transfer", &hash, &[&e_path, &m_path, &b_path])?;
            println!(
                "transferred fit to {} agents with {} expected seeds -> {}",
                pop.n_agents(),
                seed_count,
                cfg.io.out_dir.display()
            );
            Ok(())
        }
    }
}

fn map_calib(e: epidiff::calibration::CalibError) -> CliError {
    match e {
        epidiff::calibration::CalibError::Divergence { .. } => CliError::Divergence(e.to_string()),
        other => CliError::Data(other.into()),
    }
}
