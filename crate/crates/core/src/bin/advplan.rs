use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advplan::experiment::{
    cmd_eval, cmd_gen_targets, cmd_loop, load_iteration_motions, run_dir, toy_dataset,
    ExperimentConfig, ExperimentKind,
};
use advplan::io::{write_json, write_text};
use advplan::nn::{Discriminator, LossMode};
use advplan::plot::{top_view, PlotKind};
use advplan::{Error, Vector3};

#[derive(Parser)]
#[command(name = "advplan", version, about = "Adversarial cost shaping for RRT* motion planning")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON), applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in preset: sphere, desk or imitation.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Maximum number of concurrent planning queries.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the target set (planned motions or demonstrations).
    GenTargets,
    /// Run the alternating plan/train loop.
    Loop,
    /// Recompute metrics from a finished run.
    Eval,
    /// Export a top-view SVG and CSV of one iteration.
    ExportPlot {
        #[arg(long, default_value_t = 0)]
        iteration: usize,
        #[arg(long, default_value = "endpoints")]
        kind: PlotKind,
    },
    /// Compare analytic and numeric discriminator gradients.
    GradCheck {
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, default_value = "bce")]
        loss: String,
    },
    /// Print IK goal states for a hand target.
    IkProbe {
        /// Hand target as x,y,z (meters).
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        target: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
}

fn config(g: &Global) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(g.config.as_deref(), g.preset.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output = Some(o.clone());
    }
    if g.jobs.is_some() {
        cfg.jobs = g.jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("output serializes")
    );
}

fn run(cli: Cli) -> Result<bool, Error> {
    let g = &cli.global;
    match cli.command {
        Command::GenTargets => {
            let cfg = config(g)?;
            let summary = cmd_gen_targets(&cfg, g.force)?;
            print_json(&summary);
        }
        Command::Loop => {
            let cfg = config(g)?;
            let reports = cmd_loop(&cfg, g.force)?;
            print_json(&reports);
        }
        Command::Eval => {
            let cfg = config(g)?;
            let rows = cmd_eval(&cfg)?;
            print_json(&rows);
        }
        Command::ExportPlot { iteration, kind } => {
            let cfg = config(g)?;
            let chain = cfg.chain()?;
            let out = cfg.output_dir();
            let motions = load_iteration_motions(&run_dir(&out), iteration)?;
            let scene = match cfg.kind {
                ExperimentKind::Sphere => cfg.sphere_scene()?,
                ExperimentKind::Imitation => advplan::collision::Scene::empty(),
            };
            let plot = top_view(&chain, &motions, &scene, cfg.planner.resolution, kind)?;
            let name = format!(
                "iter_{iteration}_{}",
                match kind {
                    PlotKind::Endpoints => "endpoints",
                    PlotKind::Paths => "paths",
                }
            );
            let dir = out.join("plots");
            let svg = dir.join(format!("{name}.svg"));
            let csv = dir.join(format!("{name}.csv"));
            if !g.force && (svg.exists() || csv.exists()) {
                return Err(Error::InvalidConfig(format!(
                    "{} already exists; pass --force to overwrite",
                    svg.display()
                )));
            }
            write_text(&svg, &plot.svg)?;
            write_text(&csv, &plot.csv)?;
            println!("{}", svg.display());
        }
        Command::GradCheck { seeds, loss } => {
            let mode = match loss.as_str() {
                "bce" => LossMode::Bce,
                "log_ratio" => LossMode::LogRatio,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown loss {other:?}; expected bce or log_ratio"
                    )))
                }
            };
            let mut worst: f64 = 0.0;
            let mut rows = Vec::new();
            for s in seeds {
                let d = Discriminator::default_random(s);
                let err = d.gradient_check(&toy_dataset(4, s), mode)?;
                log::info!("seed {s}: max relative error {err:e}");
                worst = worst.max(err);
                rows.push(serde_json::json!({ "seed": s, "max_relative_error": err }));
            }
            print_json(&rows);
            return Ok(worst < 1e-5);
        }
        Command::IkProbe { target, count } => {
            if target.len() != 3 {
                return Err(Error::InvalidConfig(format!(
                    "--target needs x,y,z; got {} values",
                    target.len()
                )));
            }
            let cfg = config(g)?;
            let chain = cfg.chain()?;
            let t = Vector3::new(target[0], target[1], target[2]);
            let states = chain.sample_goal_states(&t, count, cfg.seed);
            let rows: Vec<_> = states
                .iter()
                .map(|q| {
                    let f = chain.forward_kinematics(q).expect("IK states match the chain");
                    serde_json::json!({
                        "state": q,
                        "swivel": f.swivel(),
                        "hand_error": (f.hand - t).norm(),
                    })
                })
                .collect();
            print_json(&rows);
            if let Some(out) = &g.out {
                write_json(&out.join("ik_probe.json"), &rows)?;
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
