//! `rmst` command line: run Monte Carlo scenarios and sweeps from presets or
//! config files, and dump single simulated trials for plotting.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rmst_core::config::{from_kv, to_kv, RunConfig};
use rmst_core::kaplan_meier::km_fit;
use rmst_core::models::arm_average_survival;
use rmst_core::montecarlo::{
    run_scenario, run_scenario_with_workers, sweep, sweep_with_workers, write_report_csv,
    write_z_csv, MonteCarloReport,
};
use rmst_core::presets;
use rmst_core::simulate::{generate_trial, null_design, write_trial_csv};
use rmst_core::{Hypothesis, SubjectRecord};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rmst", about = "Restricted mean survival time trial simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario or sweep and write report CSVs.
    Run(RunArgs),
    /// Generate one trial and dump subject, Kaplan-Meier, and analytic
    /// survival-curve CSVs.
    DumpTrial(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name (`--preset help` lists them).
    #[arg(long)]
    preset: Option<String>,
    /// Scenario file in key = value form (e.g. a previous run's config.echo).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replication count.
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads (defaults to available parallelism; results are
    /// identical for any value).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write the retained Z statistics as z_values.csv.
    #[arg(long)]
    dump_z: bool,
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match (&args.preset, &args.config) {
        (Some(name), None) => {
            if name == "help" {
                bail!("available presets: {}", presets::preset_names().join(", "));
            }
            presets::preset(name).ok_or_else(|| {
                anyhow!(
                    "unknown preset `{name}`; available: {}",
                    presets::preset_names().join(", ")
                )
            })?
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            from_kv(&text).with_context(|| format!("invalid config {}", path.display()))?
        }
        (Some(_), Some(_)) => bail!("--preset and --config are mutually exclusive"),
        (None, None) => bail!("one of --preset or --config is required"),
    };
    if let Some(seed) = args.seed {
        config.scenario.design.seed = seed;
    }
    if let Some(replications) = args.replications {
        config.scenario.replications = replications;
    }
    if let Some(workers) = args.workers {
        config.workers = Some(workers);
    }
    if args.dump_z {
        config.dump_z = true;
    }
    config.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;
    Ok(config)
}

fn write_echo(out_dir: &Path, config: &RunConfig) -> Result<()> {
    fs::write(out_dir.join("config.echo"), to_kv(config))
        .with_context(|| format!("cannot write {}", out_dir.join("config.echo").display()))?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let config = resolve(args)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output directory {}", args.out.display()))?;

    let scenario = &config.scenario;
    let rows: Vec<(f64, MonteCarloReport)> = match &config.sweep {
        Some(spec) => {
            let reports = match config.workers {
                Some(w) => sweep_with_workers(scenario, spec.axis, &spec.values, w),
                None => sweep(scenario, spec.axis, &spec.values),
            };
            spec.values.iter().copied().zip(reports).collect()
        }
        None => {
            let report = match config.workers {
                Some(w) => run_scenario_with_workers(scenario, w),
                None => run_scenario(scenario),
            };
            vec![(scenario.t_star, report)]
        }
    };

    let row_refs: Vec<(f64, &MonteCarloReport)> = rows.iter().map(|(v, r)| (*v, r)).collect();
    let mut report_csv = Vec::new();
    write_report_csv(&mut report_csv, &row_refs)?;
    fs::write(args.out.join("report.csv"), &report_csv)?;

    if config.dump_z {
        let reports: Vec<&MonteCarloReport> = rows.iter().map(|(_, r)| r).collect();
        let mut z_csv = Vec::new();
        write_z_csv(&mut z_csv, &reports)?;
        fs::write(args.out.join("z_values.csv"), &z_csv)?;
    }
    write_echo(&args.out, &config)?;

    let axis_label = config.sweep.as_ref().map(|s| s.axis.name()).unwrap_or("t_star");
    println!(
        "{} replications per point, hypothesis {}, seed {}",
        scenario.replications,
        scenario.hypothesis.name(),
        scenario.design.seed
    );
    println!(
        "{:>12} {:<14} {:>9} {:>8} {:>8} {:>10} {:>9} {:>11} {:>9}",
        axis_label, "method", "evaluable", "excl_km", "excl_fit", "rejections", "rate", "mean_delta", "mean_se"
    );
    for (value, report) in &rows {
        for m in &report.methods {
            println!(
                "{value:>12} {:<14} {:>9} {:>8} {:>8} {:>10} {:>9.4} {:>11.3} {:>9.3}",
                m.method.name(),
                m.evaluable,
                m.excluded_km,
                m.excluded_fit,
                m.rejections,
                m.rejection_rate(),
                m.mean_delta,
                m.mean_se,
            );
        }
    }
    println!("report written to {}", args.out.join("report.csv").display());
    Ok(())
}

fn cmd_dump_trial(args: &RunArgs) -> Result<()> {
    let config = resolve(args)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output directory {}", args.out.display()))?;

    let scenario = &config.scenario;
    let design = match scenario.hypothesis {
        Hypothesis::Alternative => scenario.design.clone(),
        Hypothesis::Null => null_design(&scenario.design),
    };
    let records = generate_trial(&design, 0);

    let mut trial_csv = Vec::new();
    write_trial_csv(&records, &mut trial_csv)?;
    fs::write(args.out.join("trial.csv"), &trial_csv)?;

    for (arm, treated) in [("treatment", true), ("control", false)] {
        let arm_records: Vec<SubjectRecord> = records
            .iter()
            .filter(|r| r.covariates.treatment == treated)
            .copied()
            .collect();
        match km_fit(&arm_records) {
            Ok(curve) => {
                let mut buf = Vec::new();
                curve.write_csv(&mut buf)?;
                fs::write(args.out.join(format!("km_{arm}.csv")), &buf)?;
            }
            Err(e) => eprintln!("skipping km_{arm}.csv: {e}"),
        }

        // model curve averaged over the covariate distribution, 1-week grid
        let mut buf = String::from("time,survival\n");
        let mut week = 0u32;
        while f64::from(week) <= design.analysis_time {
            let t = f64::from(week);
            buf.push_str(&format!(
                "{t},{:.6}\n",
                arm_average_survival(t, &design.truth, treated)
            ));
            week += 1;
        }
        fs::write(args.out.join(format!("curve_{arm}.csv")), buf)?;
    }
    write_echo(&args.out, &config)?;

    let events = records.iter().filter(|r| r.event).count();
    let treated = records.iter().filter(|r| r.covariates.treatment).count();
    println!(
        "dumped {} subjects ({} treated, {} events) to {}",
        records.len(),
        treated,
        events,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::DumpTrial(args) => cmd_dump_trial(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
