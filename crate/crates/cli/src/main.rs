use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use semflow::eval::format_report;
use semflow::pipeline::{run_eval, run_refine, run_synth, run_viz, synth_dataset, RefineOptions};
use semflow::synth::SceneSpec;
use semflow::{ClassTaxonomy, WeightOverrides};

/// Semantic optical flow refinement.
#[derive(Parser)]
#[command(name = "semflow", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine the initial flow of a sequence manifest.
    Refine(RefineArgs),
    /// Compare estimated flow files against ground truth.
    Eval(EvalArgs),
    /// Render a synthetic sequence with ground truth.
    Synth(SynthArgs),
    /// Color-code a flow file.
    Viz(VizArgs),
}

#[derive(Args)]
struct RefineArgs {
    manifest: PathBuf,
    /// Output directory; defaults to the manifest's.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Frames per window.
    #[arg(short = 'T', long)]
    window: Option<usize>,
    /// Write KITTI 16-bit PNG flow instead of .flo.
    #[arg(long)]
    kitti: bool,
    /// Also write color visualizations.
    #[arg(long)]
    viz: bool,
    /// Worker threads (default: all cores).
    #[arg(short, long)]
    jobs: Option<usize>,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Args)]
struct WeightArgs {
    #[arg(long)]
    lambda_motion: Option<f64>,
    #[arg(long)]
    lambda_time: Option<f64>,
    #[arg(long)]
    lambda_layer: Option<f64>,
    #[arg(long)]
    lambda_space: Option<f64>,
    #[arg(long)]
    lambda_d: Option<f64>,
    #[arg(long)]
    lambda_aff: Option<f64>,
    /// Per-class affine weight, e.g. `--class-aff car=20`. Repeatable.
    #[arg(long = "class-aff", value_parser = parse_class_weight)]
    class_aff: Vec<(String, f64)>,
}

fn parse_class_weight(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected CLASS=VALUE, got `{s}`"))?;
    let value: f64 = value.trim().parse().map_err(|e| format!("bad weight in `{s}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

impl WeightArgs {
    fn overrides(&self) -> WeightOverrides {
        WeightOverrides {
            lambda_motion: self.lambda_motion,
            lambda_time: self.lambda_time,
            lambda_layer: self.lambda_layer,
            lambda_space: self.lambda_space,
            lambda_d: self.lambda_d,
            lambda_aff: self.lambda_aff,
            class_lambda_aff: self.class_aff.iter().cloned().collect(),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of estimated flow files.
    estimate: PathBuf,
    /// Directory of ground truth flow files with matching names.
    ground_truth: PathBuf,
    /// Foreground masks named like the flow files.
    #[arg(long)]
    fg: Option<PathBuf>,
    /// Non-occluded masks named like the flow files.
    #[arg(long)]
    noc: Option<PathBuf>,
    /// Print every file, not only the aggregate.
    #[arg(long)]
    per_file: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    SquareOverHomography,
    TwoMotions,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec (TOML). Required unless --preset is given.
    spec: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "spec")]
    preset: Option<Preset>,
    #[arg(short, long)]
    output: PathBuf,
    /// Window length written to the manifest.
    #[arg(short = 'T', long, default_value_t = 5)]
    window: usize,
}

#[derive(Args)]
struct VizArgs {
    flow: PathBuf,
    output: PathBuf,
    /// Magnitude mapped to full saturation; defaults to the field maximum.
    #[arg(long)]
    max: Option<f32>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::Refine(a) => {
            let opts = RefineOptions {
                weights: a.weights.overrides(),
                seed: a.seed,
                window: a.window,
                output: a.output,
                kitti: a.kitti,
                visualize: a.viz,
                jobs: a.jobs,
                ..Default::default()
            };
            let report = run_refine(&a.manifest, &opts).with_context(|| format!("refining {}", a.manifest.display()))?;
            print!("{}", report.to_text(&ClassTaxonomy::default()));
            eprintln!("wrote {}", report.output.display());
        }
        Command::Eval(a) => {
            let report = run_eval(&a.estimate, &a.ground_truth, a.fg.as_deref(), a.noc.as_deref())?;
            if a.per_file {
                for (name, m) in &report.per_file {
                    println!("{name}\n{}", m.table());
                }
            }
            println!("{}", report.aggregate.table());
            print!("{}", format_report(&report.aggregate.to_map("")));
        }
        Command::Synth(a) => {
            let manifest = match (a.spec, a.preset) {
                (Some(spec), _) => run_synth(&spec, &a.output, a.window)?,
                (None, Some(p)) => {
                    let spec = match p {
                        Preset::SquareOverHomography => SceneSpec::square_over_homography(),
                        Preset::TwoMotions => SceneSpec::two_motions(),
                    };
                    synth_dataset(&spec, &a.output, a.window)?
                }
                (None, None) => bail!("give a scene spec file or --preset"),
            };
            println!("{}", manifest.display());
        }
        Command::Viz(a) => run_viz(&a.flow, &a.output, a.max)?,
    }
    Ok(())
}
