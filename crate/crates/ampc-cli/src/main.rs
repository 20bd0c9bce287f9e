//! Command-line driver: every subcommand takes a config file and an output
//! directory, stages re-derive what they need deterministically from the
//! config's seeds. Exit codes: 0 success, 2 config error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ampc::bench::{self, ExperimentConfig, ModelConfig};
use ampc::error::{Error, Result};
use ampc::excitation::{trajectory_from_csv, trajectory_to_csv};

#[derive(Parser)]
#[command(name = "ampc", about = "Approximate-model MPC benchmark pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the excitation signal, simulate the plant, write dataset.csv.
    Excite(CommonArgs),
    /// Fit the configured TPWL and POD-TPWL models, write model files.
    FitPodTpwl(CommonArgs),
    /// Fit the configured subspace models, write model files.
    FitSid(CommonArgs),
    /// Train the configured NN models, write model files.
    FitNn(CommonArgs),
    /// Run the tracking-MPC closed loop for every model.
    RunMpc(CommonArgs),
    /// Run the EMPC closed loop for every model.
    RunEmpc(CommonArgs),
    /// Run the whole protocol and write report.csv / report.txt.
    Report(CommonArgs),
    /// Emit long-format plot data from a trajectory or run CSV.
    PlotData {
        #[command(flatten)]
        common: CommonArgs,
        /// CSV file (as written by excite or the run stages).
        #[arg(long)]
        input: PathBuf,
        /// Channels to extract, e.g. y_1,u_2.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<String>,
        /// Series label prefix.
        #[arg(long, default_value = "series")]
        label: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Excite(a) => cmd_excite(a),
        Command::FitPodTpwl(a) => cmd_fit(a, |m| {
            matches!(m, ModelConfig::Tpwl { .. } | ModelConfig::PodTpwl { .. })
        }),
        Command::FitSid(a) => cmd_fit(a, |m| matches!(m, ModelConfig::Subspace { .. })),
        Command::FitNn(a) => cmd_fit(a, |m| matches!(m, ModelConfig::Nn { .. })),
        Command::RunMpc(a) => cmd_run(a, "mpc"),
        Command::RunEmpc(a) => cmd_run(a, "empc"),
        Command::Report(a) => cmd_report(a),
        Command::PlotData {
            common,
            input,
            channels,
            label,
        } => cmd_plot_data(common, input, channels, label),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(a: &CommonArgs) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(&a.config)?;
    std::fs::create_dir_all(&a.out)?;
    Ok(cfg)
}

fn cmd_excite(a: &CommonArgs) -> Result<()> {
    let cfg = load(a)?;
    let plant = cfg.build_plant()?;
    let dataset = bench::generate_dataset(&cfg, &plant)?;
    for w in &dataset.warnings {
        eprintln!("warning: {w}");
    }
    let path = a.out.join("dataset.csv");
    std::fs::write(&path, trajectory_to_csv(&dataset.traj, true))?;
    println!("wrote {} ({} samples)", path.display(), dataset.len());
    Ok(())
}

fn cmd_fit(a: &CommonArgs, select: impl Fn(&ModelConfig) -> bool) -> Result<()> {
    let cfg = load(a)?;
    let plant = cfg.build_plant()?;
    let dataset = bench::generate_dataset(&cfg, &plant)?;
    let (train, _val) = dataset.split(cfg.excitation.train_fraction);
    let models_dir = a.out.join("models");
    std::fs::create_dir_all(&models_dir)?;
    let mut fitted_any = false;
    for mc in cfg.models.iter().filter(|m| select(m)) {
        let fitted = bench::fit_model(&cfg, mc, &plant, &train)?;
        if let Some(json) = fitted.artifact.to_json()? {
            let path = models_dir.join(format!("{}.json", fitted.tag));
            std::fs::write(&path, json)?;
            println!("wrote {}", path.display());
        }
        fitted_any = true;
    }
    if !fitted_any {
        eprintln!("warning: no matching model entries in the config");
    }
    Ok(())
}

fn cmd_run(a: &CommonArgs, mode: &str) -> Result<()> {
    let cfg = load(a)?;
    let plant = cfg.build_plant()?;
    let dataset = bench::generate_dataset(&cfg, &plant)?;
    let (train, _val) = dataset.split(cfg.excitation.train_fraction);
    let steady = bench::steady_targets(&cfg, &plant)?;
    let problem = bench::build_problem(&cfg, &plant, mode, &steady)?;
    let runs_dir = a.out.join("runs");
    std::fs::create_dir_all(&runs_dir)?;

    let mut model_cfgs = vec![ModelConfig::Original {
        tag: "original".into(),
    }];
    model_cfgs.extend(cfg.models.iter().cloned());
    for mc in &model_cfgs {
        let fitted = bench::fit_model(&cfg, mc, &plant, &train)?;
        let result = ampc::control::run_closed_loop(
            &plant,
            &problem,
            fitted.backend.as_ref(),
            cfg.run.closed_loop_steps,
            cfg.plant.substeps,
            None,
        )?;
        let path = runs_dir.join(format!("{mode}_{}.csv", fitted.tag));
        std::fs::write(&path, ampc::bench::simulation_csv_text(&result, &problem))?;
        println!(
            "{mode} {}: objective {:.4}, mean step {:.4} s -> {}",
            fitted.tag,
            result.accumulated_objective,
            result.mean_solve_time_s,
            path.display()
        );
    }
    Ok(())
}

fn cmd_report(a: &CommonArgs) -> Result<()> {
    let cfg = load(a)?;
    let report = bench::run_experiment(&cfg, &a.out)?;
    print!("{}", report.to_table());
    println!("report written to {}", a.out.join("report.csv").display());
    Ok(())
}

fn cmd_plot_data(
    a: &CommonArgs,
    input: &Path,
    channels: &[String],
    label: &str,
) -> Result<()> {
    let _ = load(a)?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", input.display())))?;
    let traj = trajectory_from_csv(&text)?;
    let out_text = bench::emit_plot_data(&[(label.to_string(), traj)], channels)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    let path = a.out.join(format!("plotdata_{stem}.csv"));
    std::fs::write(&path, out_text)?;
    println!("wrote {}", path.display());
    Ok(())
}
