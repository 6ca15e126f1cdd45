//! Command-line front end for the deformable-mirror tomography simulator.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use dmtomo_core::pipeline::Histogram;
use dmtomo_core::qlin::pure_fidelity;
use dmtomo_core::tomo::{linear_inversion, mle_reconstruct};
use dmtomo_core::{
    run_pipeline, Estimator, Experiment, ExperimentConfig, ProbabilityMatrix, PureState, RunReport,
    Scenario, StateCounts,
};

use output::{csv_matrix, fmt_num, to_rounded_json, write_atomic};

#[derive(Debug, Parser)]
#[command(
    name = "dmtomo",
    version,
    about = "Deformable-mirror MUB tomography simulator"
)]
struct Cli {
    /// TOML experiment configuration. Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the mean photon number per measurement.
    #[arg(long, global = true)]
    photons: Option<f64>,
    /// Use exact probabilities instead of simulated counts.
    #[arg(long, global = true)]
    noiseless: bool,
    /// Output directory. Commands that print results also write them here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the 20 MUB elements as JSON.
    DumpMub,
    /// Print the condition number of a measurement scenario.
    Eta {
        #[arg(long, value_parser = parse_scenario)]
        scenario: Scenario,
    },
    /// Print the 20x20 probability matrix of a scenario as CSV.
    Pmatrix {
        #[arg(long, value_parser = parse_scenario)]
        scenario: Scenario,
    },
    /// Reconstruct a state from probabilities or counts given as JSON.
    Tomo {
        #[arg(long)]
        input: PathBuf,
        /// Measurement scenario assumed for the projectors.
        #[arg(long, value_parser = parse_scenario, default_value = "ideal")]
        scenario: Scenario,
    },
    /// Run the pipeline on `n` random states and print the fidelity histogram.
    Histogram {
        #[arg(long, default_value_t = 210)]
        n: usize,
    },
    /// Run the whole virtual experiment and write every artifact to --out.
    Run,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: dmtomo_core::Error| e.to_string())
}

/// Input of the `tomo` command. Exactly one of `probabilities` and `counts`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TomoInput {
    probabilities: Option<Vec<f64>>,
    counts: Option<StateCounts>,
    /// True state amplitudes as `[re, im]` pairs, for a fidelity figure.
    truth: Option<Vec<Complex64>>,
}

#[derive(Debug, Serialize)]
struct TomoOutput {
    estimator: Estimator,
    rho: Vec<Vec<Complex64>>,
    fidelity: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(photons) = cli.photons {
        config.counting.photons = photons;
    }
    if cli.noiseless {
        config.counting.noiseless = true;
    }
    config.validate().context("invalid configuration")?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::DumpMub => {
            let exp = Experiment::new(config)?;
            let elements: Vec<_> = exp
                .mubs()
                .elements()
                .iter()
                .enumerate()
                .map(|(flat, psi)| {
                    json!({
                        "index": flat,
                        "basis": flat / 4,
                        "element": flat % 4,
                        "amplitudes": psi.amplitudes(),
                    })
                })
                .collect();
            emit(cli, "mub.json", &json_text(&elements)?)
        }
        Command::Eta { scenario } => {
            let exp = Experiment::new(config)?;
            let projectors = exp.projectors(*scenario)?;
            let eta = dmtomo_core::tomo::eta(&projectors)
                .with_context(|| format!("condition number of `{scenario}`"))?;
            emit(
                cli,
                &format!("eta_{scenario}.txt"),
                &format!("{}\n", fmt_num(eta)),
            )
        }
        Command::Pmatrix { scenario } => {
            let exp = Experiment::new(config)?;
            let projectors = exp.projectors(*scenario)?;
            let p = ProbabilityMatrix::predicted(&exp.mubs().elements(), &projectors)?;
            emit(
                cli,
                &format!("pmatrix_{scenario}.csv"),
                &csv_matrix(p.rows()),
            )
        }
        Command::Tomo { input, scenario } => {
            let text = std::fs::read_to_string(input)
                .with_context(|| format!("reading {}", input.display()))?;
            let data: TomoInput = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", input.display()))?;
            let exp = Experiment::new(config)?;
            let projectors = exp.projectors(*scenario)?;
            let (estimator, rho) = match (&data.probabilities, &data.counts) {
                (Some(p), None) => (Estimator::Linear, linear_inversion(p, &projectors)?),
                (None, Some(c)) => match exp.config().estimator {
                    Estimator::Linear => (
                        Estimator::Linear,
                        linear_inversion(&c.estimated_probabilities()?, &projectors)?,
                    ),
                    Estimator::Mle => (
                        Estimator::Mle,
                        mle_reconstruct(c, &projectors, &exp.config().mle)?.rho,
                    ),
                },
                _ => bail!("input must contain exactly one of `probabilities` and `counts`"),
            };
            let fidelity = match &data.truth {
                Some(amps) => {
                    let truth = PureState::normalized(amps.clone()).context("invalid `truth`")?;
                    Some(pure_fidelity(&rho, &truth)?)
                }
                None => None,
            };
            let m = rho.into_inner();
            let out = TomoOutput {
                estimator,
                rho: (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                    .collect(),
                fidelity,
            };
            emit(cli, "tomo.json", &json_text(&out)?)
        }
        Command::Histogram { n } => {
            let mut config = config;
            config.random_states = *n;
            let report = run_pipeline(&config)?;
            emit(cli, "histogram.csv", &histogram_csv(&report))
        }
        Command::Run => {
            let Some(dir) = &cli.out else {
                bail!("`run` needs an output directory (--out)");
            };
            let report = run_pipeline(&config)?;
            write_run(dir, &config, &report)?;
            println!(
                "mean fidelity {} (min {}) over {} random states; artifacts in {}",
                fmt_num(report.random_summary.mean),
                fmt_num(report.random_summary.min),
                report.random_summary.count,
                dir.display()
            );
            Ok(())
        }
    }
}

fn json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&to_rounded_json(value)?)?;
    s.push('\n');
    Ok(s)
}

/// Prints `text` and, with --out, also stores it as `name`.
fn emit(cli: &Cli, name: &str, text: &str) -> Result<()> {
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_atomic(&dir.join(name), text)?;
    }
    print!("{text}");
    Ok(())
}

fn histogram_csv(report: &RunReport) -> String {
    let h = &report.histogram;
    let mut s = String::from("lower,upper,count\n");
    s.push_str(&format!(
        "0,{},{}\n",
        fmt_num(h.lower_edges[0]),
        h.underflow
    ));
    for (lo, count) in h.lower_edges.iter().zip(&h.counts) {
        let hi = lo + Histogram::WIDTH;
        s.push_str(&format!("{},{},{count}\n", fmt_num(*lo), fmt_num(hi)));
    }
    s
}

fn write_run(dir: &Path, config: &ExperimentConfig, report: &RunReport) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join("config.toml"), &toml::to_string(config)?)?;
    write_atomic(
        &dir.join("pmatrix_ideal.csv"),
        &csv_matrix(report.ideal_matrix.rows()),
    )?;
    write_atomic(
        &dir.join("pmatrix_inf.csv"),
        &csv_matrix(report.inf_matrix.rows()),
    )?;
    write_atomic(
        &dir.join("pmatrix_dm.csv"),
        &csv_matrix(report.dm_matrix.rows()),
    )?;
    write_atomic(&dir.join("histogram.csv"), &histogram_csv(report))?;

    let mut fid = String::from("kind,index,fidelity\n");
    for (kind, values) in [
        ("mub", &report.mub_fidelities),
        ("random", &report.random_fidelities),
    ] {
        for (i, f) in values.iter().enumerate() {
            fid.push_str(&format!("{kind},{i},{}\n", fmt_num(*f)));
        }
    }
    write_atomic(&dir.join("fidelities.csv"), &fid)?;

    let summary = json!({
        "seed": report.seed,
        "eta": report.eta,
        "mub_fidelity": report.mub_summary,
        "random_fidelity": report.random_summary,
        "discarded_weight": report.discarded_weight,
        "mirrors": report.mirrors,
        "recovered_projectors": report.recovered_projectors,
    });
    write_atomic(&dir.join("report.json"), &json_text(&summary)?)
}
