//! Command-line front end: structural checks, simulation, identification,
//! and noise sweeps over network spec files.
//!
//! Reports go to stdout; progress notes and errors go to stderr. Every run
//! is reproducible from the spec file, the flags, and the seed alone, so
//! identical invocations produce bit-identical outputs regardless of the
//! `NETIDENT_THREADS` setting.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use netident::ident::{identify, IdentifyOptions};
use netident::sim::{run_batch, experiment_csv, ExperimentPlan};
use netident::specfile;
use netident::NetworkSpec;

#[derive(Parser)]
#[command(
    name = "netident",
    version,
    about = "Simulate and identify nonlinear dynamics on acyclic networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report sinks, required measurements, parallel-path groups, the
    /// identification schedule, and linearity hazards.
    ///
    /// Exits zero only when every sink is measured, the schedule exists,
    /// and no linearity hazard is present.
    Check {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Integrate the network and write one CSV of states and measurements
    /// per experiment.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        plan: PlanArgs,
        /// Measurement noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Output directory for the experiment CSV files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the staged identification and report estimated coefficients.
    Identify {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        plan: PlanArgs,
        /// Measurement noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Output directory for the coefficient and stage CSV files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the per-experiment derivative targets (jets.csv).
        #[arg(long)]
        dump_jets: bool,
        /// Use exact Taylor derivatives instead of fitting sampled data
        /// (debugging aid; ignores sigma).
        #[arg(long)]
        exact_derivatives: bool,
    },
    /// Repeat the identification over a list of noise levels and report
    /// median and interquartile RMSE per level.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        plan: PlanArgs,
        /// Noise level; repeat the flag or pass a comma-separated list.
        #[arg(long, required = true, value_delimiter = ',')]
        sigma: Vec<f64>,
        /// Independent repetitions per noise level.
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Output directory for the per-run and summary CSV files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Use exact Taylor derivatives instead of fitting sampled data
        /// (debugging aid; ignores sigma).
        #[arg(long)]
        exact_derivatives: bool,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Network spec file.
    #[arg(long, value_name = "PATH")]
    spec: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    /// Base RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Experiments per stage (default: three times the stage's
    /// coefficient count). For `simulate`, the number of experiments.
    #[arg(long)]
    k: Option<usize>,
    /// Sampling period.
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    /// Samples per experiment.
    #[arg(long, default_value_t = 10)]
    samples: usize,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    configure_threads()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Check { common } => cmd_check(&common.spec),
        Command::Simulate {
            common,
            plan,
            sigma,
            out,
        } => cmd_simulate(&common.spec, &plan, sigma, &out),
        Command::Identify {
            common,
            plan,
            sigma,
            out,
            dump_jets,
            exact_derivatives,
        } => cmd_identify(&common.spec, &plan, sigma, &out, dump_jets, exact_derivatives),
        Command::Sweep {
            common,
            plan,
            sigma,
            reps,
            out,
            exact_derivatives,
        } => cmd_sweep(&common.spec, &plan, &sigma, reps, &out, exact_derivatives),
    }
}

/// Caps the global worker pool when `NETIDENT_THREADS` is set.
fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("NETIDENT_THREADS") {
        let threads: usize = value
            .parse()
            .with_context(|| format!("NETIDENT_THREADS must be a positive integer, got `{value}`"))?;
        if threads == 0 {
            bail!("NETIDENT_THREADS must be a positive integer, got `0`");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("worker pool already configured")?;
    }
    Ok(())
}

fn load_spec(path: &Path) -> Result<NetworkSpec> {
    Ok(specfile::load(path)?)
}

fn cmd_check(spec_path: &Path) -> Result<ExitCode> {
    let spec = load_spec(spec_path)?;
    let mut ok = true;
    let sinks = spec.sinks();
    let sources = spec.sources();
    let joined = |nodes: &[netident::NodeId]| {
        nodes
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };

    println!(
        "network: {} nodes, {} edges, class {}",
        spec.node_count,
        spec.edges.len(),
        spec.class
    );
    println!("sinks: {}", joined(&sinks));
    println!("sources: {}", joined(&sources));
    let required: Vec<netident::NodeId> = spec.required_measurements().into_iter().collect();
    println!("required measurements: {}", joined(&required));
    let measured: Vec<netident::NodeId> = spec.measured.iter().copied().collect();
    println!("measured: {}", joined(&measured));

    for sink in &sinks {
        if !spec.measured.contains(sink) {
            println!("missing measurement: sink {sink} is not measured");
            ok = false;
        }
    }

    let groups = spec.parallel_path_groups();
    if groups.is_empty() {
        println!("parallel-path groups: none");
    } else {
        println!("parallel-path groups:");
        for g in &groups {
            let firsts = g
                .first_edges
                .iter()
                .map(|e| spec.edges[e.index()].label())
                .collect::<Vec<_>>()
                .join(", ");
            println!(
                "  {} -> {}: {} paths of length {}, first edges {}",
                g.source,
                g.sink,
                g.paths.len(),
                g.length,
                firsts
            );
        }
    }

    match spec.identification_schedule() {
        Ok(schedule) => {
            println!("identification schedule:");
            for (i, stage) in schedule.iter().enumerate() {
                let edges = stage
                    .edges
                    .iter()
                    .map(|e| spec.edges[e.index()].label())
                    .collect::<Vec<_>>()
                    .join(", ");
                let zeroed = stage
                    .zeroed_nodes
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(", ");
                println!(
                    "  stage {i}: order {}, sink {}, edges [{}], zeroed [{}]",
                    stage.derivative_order, stage.sink, edges, zeroed
                );
            }
        }
        Err(err) => {
            println!("identification schedule: unavailable — {err}");
            ok = false;
        }
    }

    let hazards = spec.linearity_hazard();
    if hazards.is_empty() {
        println!("linearity hazards: none");
    } else {
        for hazard in &hazards {
            println!("linearity hazard: {}", hazard.message(&spec));
        }
        ok = false;
    }

    println!("status: {}", if ok { "ok" } else { "not identifiable" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_simulate(spec_path: &Path, plan_args: &PlanArgs, sigma: f64, out: &Path) -> Result<ExitCode> {
    let spec = load_spec(spec_path)?;
    let functions = spec.truth_functions()?;
    let experiments = plan_args.k.unwrap_or(1);
    let plan = ExperimentPlan::uniform(
        &spec,
        experiments,
        plan_args.dt,
        plan_args.samples,
        sigma,
        plan_args.seed,
    );
    let records = run_batch(&spec, &functions, &plan, &Default::default())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    println!("experiment,file,{}", header_x0(&spec));
    for (i, record) in records.iter().enumerate() {
        let file = out.join(format!("exp_{i}.csv"));
        write_text(&file, &experiment_csv(&spec, &plan, record))?;
        let x0 = record
            .x0
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        println!("{i},{},{x0}", file.display());
    }
    eprintln!("wrote {} experiment files to {}", records.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_identify(
    spec_path: &Path,
    plan_args: &PlanArgs,
    sigma: f64,
    out: &Path,
    dump_jets: bool,
    exact_derivatives: bool,
) -> Result<ExitCode> {
    let spec = load_spec(spec_path)?;
    let plan = ExperimentPlan::uniform(
        &spec,
        plan_args.k.unwrap_or(1).max(1),
        plan_args.dt,
        plan_args.samples,
        sigma,
        plan_args.seed,
    );
    let options = IdentifyOptions {
        experiments: plan_args.k,
        exact_derivatives,
        collect_jets: dump_jets,
        ..IdentifyOptions::default()
    };
    let report = identify(&spec, &plan, &options)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join("coefficients.csv"), &report.coefficient_csv(&spec))?;
    write_text(&out.join("stages.csv"), &report.stage_csv(&spec))?;
    if dump_jets {
        let mut jets = format!("stage,experiment,target,{}\n", header_x0(&spec));
        for dump in &report.jet_dumps {
            let x0 = dump
                .x0
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            jets.push_str(&format!(
                "{},{},{},{x0}\n",
                dump.stage, dump.experiment, dump.target
            ));
        }
        write_text(&out.join("jets.csv"), &jets)?;
    }
    eprintln!("wrote coefficients.csv and stages.csv to {}", out.display());

    print!("{}", report.human_table(&spec));
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(
    spec_path: &Path,
    plan_args: &PlanArgs,
    sigmas: &[f64],
    reps: usize,
    out: &Path,
    exact_derivatives: bool,
) -> Result<ExitCode> {
    use rayon::prelude::*;

    if sigmas.is_empty() {
        bail!("sweep needs at least one --sigma");
    }
    if reps == 0 {
        bail!("--reps must be at least 1");
    }
    let spec = load_spec(spec_path)?;

    let mut jobs = Vec::new();
    for (si, &sigma) in sigmas.iter().enumerate() {
        for rep in 0..reps {
            jobs.push((si, sigma, rep));
        }
    }
    let results: Vec<(usize, usize, u64, Result<f64, String>)> = jobs
        .par_iter()
        .map(|&(si, sigma, rep)| {
            let seed = plan_args.seed.wrapping_add(rep as u64);
            let plan = ExperimentPlan::uniform(
                &spec,
                plan_args.k.unwrap_or(1).max(1),
                plan_args.dt,
                plan_args.samples,
                sigma,
                seed,
            );
            let options = IdentifyOptions {
                experiments: plan_args.k,
                exact_derivatives,
                ..IdentifyOptions::default()
            };
            let outcome = identify(&spec, &plan, &options)
                .map(|report| report.rmse.expect("self-contained runs score an RMSE"))
                .map_err(|e| e.to_string());
            (si, rep, seed, outcome)
        })
        .collect();

    let mut runs_csv = String::from("sigma,rep,seed,rmse,error\n");
    let mut summary_csv = String::from("sigma,repetitions,failures,median_rmse,q1_rmse,q3_rmse\n");
    let mut table = format!(
        "{:<10} {:>12} {:>12} {:>12} {:>8}\n",
        "sigma", "median", "q1", "q3", "ok"
    );
    for (si, &sigma) in sigmas.iter().enumerate() {
        let mut values = Vec::new();
        let mut failures = 0usize;
        for &(rsi, rep, seed, ref outcome) in &results {
            if rsi != si {
                continue;
            }
            match outcome {
                Ok(rmse) => {
                    values.push(*rmse);
                    runs_csv.push_str(&format!("{sigma},{rep},{seed},{rmse},\n"));
                }
                Err(message) => {
                    failures += 1;
                    let clean = message.replace(',', ";").replace('\n', " ");
                    runs_csv.push_str(&format!("{sigma},{rep},{seed},,{clean}\n"));
                }
            }
        }
        values.sort_by(|a, b| a.total_cmp(b));
        let (median, q1, q3) = match values.len() {
            0 => (f64::NAN, f64::NAN, f64::NAN),
            _ => (
                quantile(&values, 0.5),
                quantile(&values, 0.25),
                quantile(&values, 0.75),
            ),
        };
        summary_csv.push_str(&format!(
            "{sigma},{reps},{failures},{median},{q1},{q3}\n"
        ));
        table.push_str(&format!(
            "{:<10} {:>12.6} {:>12.6} {:>12.6} {:>5}/{}\n",
            sigma,
            median,
            q1,
            q3,
            reps - failures,
            reps
        ));
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join("sweep_runs.csv"), &runs_csv)?;
    write_text(&out.join("sweep_summary.csv"), &summary_csv)?;
    eprintln!(
        "wrote sweep_runs.csv and sweep_summary.csv to {}",
        out.display()
    );

    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

/// Linear-interpolation quantile of sorted values (the common `type 7`
/// convention), so `q = 0.5` is the usual median.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let position = q * (n - 1) as f64;
    let lower = position.floor() as usize;
    let upper = position.ceil() as usize;
    let weight = position - lower as f64;
    sorted[lower] * (1.0 - weight) + sorted[upper] * weight
}

fn header_x0(spec: &NetworkSpec) -> String {
    (1..=spec.node_count)
        .map(|n| format!("x0_{n}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}
