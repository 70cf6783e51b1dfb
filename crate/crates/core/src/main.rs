//! Command-line front end: run scenarios, list presets, verify benchmark
//! bands.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use soilflow::scenario::{self, config, runner};
use soilflow::SimError;

#[derive(Parser)]
#[command(name = "soilflow", about = "Fixed-mesh multiphase soil-structure solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a preset name or a TOML config file.
    Run {
        /// Preset name (see `presets`) or path to a config file.
        scenario: String,
        /// Mesh/motion scale for presets.
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Output directory (default: ./out/<name>, or $SOILFLOW_OUT/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Run twice and require byte-identical force output.
        #[arg(long)]
        seed_check: bool,
    },
    /// List built-in presets.
    Presets,
    /// Run a preset and check its acceptance band; nonzero exit on failure.
    Verify {
        preset: String,
        #[arg(long, default_value = "desk")]
        scale: String,
    },
}

fn load(scenario: &str, scale: &str) -> Result<config::ScenarioConfig, SimError> {
    let scale: config::Scale = scale.parse()?;
    if Path::new(scenario).exists() {
        config::load_config(Path::new(scenario))
    } else {
        config::preset(scenario, scale)
    }
}

fn out_dir(base: &Option<PathBuf>, name: &str) -> PathBuf {
    match base {
        Some(dir) => dir.clone(),
        None => {
            let root = std::env::var("SOILFLOW_OUT").unwrap_or_else(|_| "out".into());
            PathBuf::from(root).join(name)
        }
    }
}

fn cmd_run(
    scenario: &str,
    scale: &str,
    out: &Option<PathBuf>,
    steps: Option<usize>,
    seed_check: bool,
) -> Result<(), SimError> {
    let mut cfg = load(scenario, scale)?;
    if let Some(s) = steps {
        cfg.time.steps = s;
    }
    let dir = out_dir(out, &cfg.name);
    std::fs::create_dir_all(&dir)?;
    let summary = runner::run(&cfg, Some(&dir))?;
    println!(
        "{}: {} steps in {:.1}s; steady mean N = {:.4} (std {:.4}), F = ({:.4}, {:.4}) N/m",
        summary.name,
        summary.steps,
        summary.wall_time_s,
        summary.steady.mean_n,
        summary.steady.std_n,
        summary.steady.mean_fx,
        summary.steady.mean_fy,
    );
    if summary.transport_fallbacks > 0 {
        println!(
            "note: {} empty-neighbourhood fallbacks in the history transport",
            summary.transport_fallbacks
        );
    }
    println!("outputs in {}", dir.display());

    if seed_check {
        let rerun_dir = dir.join("seed_check");
        std::fs::create_dir_all(&rerun_dir)?;
        runner::run(&cfg, Some(&rerun_dir))?;
        let a = std::fs::read(dir.join("forces.csv"))?;
        let b = std::fs::read(rerun_dir.join("forces.csv"))?;
        if a == b {
            println!("seed check: force history byte-identical across reruns");
        } else {
            return Err(SimError::StateError(
                "seed check failed: reruns differ".into(),
            ));
        }
    }
    Ok(())
}

fn cmd_verify(preset: &str, scale: &str) -> Result<bool, SimError> {
    let scale: config::Scale = scale.parse()?;
    let mut pass = true;
    let mut check = |label: &str, ok: bool, detail: String| {
        println!("[{}] {label}: {detail}", if ok { "PASS" } else { "FAIL" });
        pass &= ok;
    };
    match preset {
        "plate_5x6" => {
            let cfg = config::plate_5x6(scale);
            let s = runner::run(&cfg, None)?;
            let n = s.steady.mean_n;
            check(
                "plate resistance",
                (10.3..=12.6).contains(&n),
                format!("steady mean N = {n:.3}, band [10.3, 12.6]"),
            );
        }
        "pipe_10x10" => {
            let cfg = config::pipe_10x10(scale);
            let s = runner::run(&cfg, None)?;
            let n = s.steady.mean_n;
            check(
                "pipe resistance",
                (10.2..=13.7).contains(&n),
                format!("steady mean N = {n:.3}, band [10.2, 13.7]"),
            );
            if let Some(sb) = s.shear_band {
                check(
                    "shear band",
                    sb.ratio >= 5.0,
                    format!("near-body/median strain-rate ratio = {:.1}", sb.ratio),
                );
            }
        }
        "pipe_penetration" => {
            use soilflow::rigid::FrictionModel;
            let rough = runner::run(&config::pipe_penetration(scale, FrictionModel::NonSlip), None)?;
            let smooth = runner::run(&config::pipe_penetration(scale, FrictionModel::Slip), None)?;
            let ok = scenario::checks::friction_ordering(&rough.records, &smooth.records, 0.1);
            check(
                "friction ordering",
                ok,
                "rough >= smooth for every embedment >= 0.1D".into(),
            );
        }
        "pipe_lateral" => {
            let ideal = runner::run(&config::pipe_lateral(scale, 0.3, false), None)?;
            let soft = runner::run(&config::pipe_lateral(scale, 0.3, true), None)?;
            let fi = ideal.steady.mean_n;
            let fs = soft.steady.mean_n;
            let ratio = fs / fi;
            check(
                "softening effect",
                (0.75..=1.0 + 1e-9).contains(&ratio),
                format!("softening/ideal steady lateral force = {ratio:.3}"),
            );
        }
        other => {
            return Err(SimError::Config(format!("unknown preset '{other}'")));
        }
    }
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            scale,
            out,
            steps,
            seed_check,
        } => cmd_run(scenario, scale, out, *steps, *seed_check).map(|()| true),
        Command::Presets => {
            for name in config::preset_names() {
                println!("{name}");
            }
            Ok(true)
        }
        Command::Verify { preset, scale } => cmd_verify(preset, scale),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
