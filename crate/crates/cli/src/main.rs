use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::SystemTime;

use clap::{Parser, Subcommand};

use fairaudit::audit::run::{choose_cohort, lexicon, load_template, plan_prompts, prepare_data};
use fairaudit::audit::{
    power_study, read_result, render_report, run_audit, write_outputs, AuditConfig, AuditError,
    PowerStudyConfig, ReportFormat,
};
use fairaudit::corpus::{split_stats, AttributeValue, SplitManifest};
use fairaudit::metrics::Metric;
use fairaudit::profiles::{sample_profile, user_seed};
use fairaudit::prompts::expand_condition_grid;
use fairaudit::stats::TestKind;

#[derive(Parser)]
#[command(
    name = "fairaudit",
    version,
    about = "Consumer-fairness audits of LLM-backed recommenders"
)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset and print corpus totals.
    Ingest {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Split histories, select the cohort and print the split manifest.
    Split {
        #[arg(short, long)]
        config: PathBuf,
        /// Write the manifest here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Sample profiles for the cohort (and optionally render every prompt) as JSON lines.
    Profiles {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Emit the rendered prompts of the whole grid instead of profiles.
        #[arg(long)]
        prompts: bool,
    },
    /// Run the full audit and write report.md, report.csv, result.json and the run log.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Skip the console summary.
        #[arg(short, long)]
        quiet: bool,
    },
    /// Re-render a stored result.json.
    Report {
        #[arg(short, long)]
        result: PathBuf,
        /// markdown, csv, json or console.
        #[arg(short, long, default_value = "console")]
        format: ReportFormat,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_color: bool,
    },
    /// Power study: plant a bias with the synthetic ranker and count detections.
    Simulate {
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = 0.6)]
        quality: f64,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// Degraded group: male, female, young or old.
        #[arg(long, default_value = "old")]
        target: AttributeValue,
        #[arg(long, default_value = "rank")]
        metric: Metric,
        #[arg(long, default_value = "welch")]
        test: TestKind,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Print every replicate as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check a config file and print its digest.
    ValidateConfig {
        #[arg(short, long)]
        config: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<AuditConfig, AuditError> {
    let cfg = AuditConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), AuditError> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json_line<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("value serializes") + "\n"
}

fn execute(cmd: Command) -> Result<(), AuditError> {
    match cmd {
        Command::Ingest { config } => {
            let cfg = load_config(&config)?;
            let data = prepare_data(&cfg)?;
            let summary = serde_json::json!({
                "dataset": data.summary,
                "split": split_stats(&data.users),
                "dropped_users": data.split_dropped.len(),
            });
            emit(
                None,
                &(serde_json::to_string_pretty(&summary).expect("json") + "\n"),
            )
        }
        Command::Split { config, out } => {
            let cfg = load_config(&config)?;
            let data = prepare_data(&cfg)?;
            let cohort = choose_cohort(&cfg, &data)?;
            let manifest =
                SplitManifest::new(&cohort, cfg.cohort.train_fraction, &data.split_dropped);
            emit(
                out.as_deref(),
                &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"),
            )
        }
        Command::Profiles {
            config,
            out,
            prompts,
        } => {
            let cfg = load_config(&config)?;
            let data = prepare_data(&cfg)?;
            let cohort = choose_cohort(&cfg, &data)?;
            let mut text = String::new();
            if prompts {
                let g = &cfg.grid;
                let grid = expand_condition_grid(&g.conditions, &g.strategies, &g.rankers)
                    .map_err(|e| AuditError::Config(e.to_string()))?;
                let template = load_template(&cfg)?;
                for unit in plan_prompts(
                    &cfg,
                    &cohort,
                    &data.catalog,
                    &grid.cells,
                    &template,
                    &lexicon(&cfg),
                ) {
                    text += &match unit.prompt {
                        Ok(p) => json_line(&p),
                        Err(f) => json_line(&f),
                    };
                }
            } else {
                let p = &cfg.profiles;
                for user in &cohort.users {
                    for &strategy in &cfg.grid.strategies {
                        let seed = user_seed(p.seed, &user.user_id);
                        match sample_profile(user, &data.catalog, strategy, p.length, seed, p.alpha)
                        {
                            Ok(profile) => text += &json_line(&profile),
                            Err(e) => log::warn!("user {}: {e}", user.user_id),
                        }
                    }
                }
            }
            emit(out.as_deref(), &text)
        }
        Command::Run { config, out, quiet } => {
            let started = SystemTime::now();
            let cfg = load_config(&config)?;
            let result = run_audit(&cfg)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            let paths = write_outputs(&result, &dir, started)?;
            if !quiet {
                print!(
                    "{}",
                    render_report(&result, ReportFormat::Console { color: true })
                );
            }
            eprintln!(
                "wrote {}, {}, {} (run log {})",
                paths.report_md.display(),
                paths.report_csv.display(),
                paths.result_json.display(),
                paths.manifest_log.display()
            );
            Ok(())
        }
        Command::Report {
            result,
            format,
            out,
            no_color,
        } => {
            let result = read_result(&result)?;
            let format = match format {
                ReportFormat::Console { .. } => ReportFormat::Console {
                    color: !no_color && out.is_none(),
                },
                f => f,
            };
            emit(out.as_deref(), &render_report(&result, format))
        }
        Command::Simulate {
            users,
            replicates,
            quality,
            beta,
            target,
            metric,
            test,
            seed,
            json,
        } => {
            let cfg = PowerStudyConfig {
                users,
                replicates,
                base_quality: quality,
                beta,
                target,
                metric,
                test,
                seed,
                ..PowerStudyConfig::default()
            };
            if !(0.0..=1.0).contains(&quality) || !(0.0..=1.0).contains(&beta) {
                return Err(AuditError::Config(
                    "quality and beta must lie in [0, 1]".into(),
                ));
            }
            let r = power_study(&cfg);
            if json {
                emit(
                    None,
                    &(serde_json::to_string_pretty(&r).expect("json") + "\n"),
                )
            } else {
                emit(
                    None,
                    &format!(
                        "{} replicates, {} users, beta {} on {}: p < {} in {} ({} with the predicted sign {})\n",
                        r.replicates.len(),
                        users,
                        beta,
                        target.token(),
                        cfg.alpha,
                        r.significant,
                        r.significant_with_sign,
                        if r.predicted_sign > 0 { "+" } else { "-" }
                    ),
                )
            }
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(&config)?;
            emit(None, &format!("ok {}\n", cfg.digest()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
