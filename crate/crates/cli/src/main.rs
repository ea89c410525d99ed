use clap::{Args, Parser, Subcommand};
use lidar_agb::las_io::{read_las, write_las};
use lidar_agb::metrics::read_metrics_csv;
use lidar_agb::pipeline::demo::{write_demo_project, DemoSpec};
use lidar_agb::pipeline::{create_file, open_file, Pipeline, RunConfig, Stage};
use lidar_agb::synth::{generate, truth_rows, SceneSpec};
use lidar_agb::waveform::{waveform_metrics, FootprintConfig};
use lidar_agb::{allometry, metrics, Error, Model, Result};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Forest aboveground biomass from discrete-return and simulated
/// full-waveform lidar.
#[derive(Parser, Debug)]
#[command(name = "lidar-agb", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed from the configuration or scene spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tile the input clouds and cut a buffered clip around every plot.
    Ingest,
    /// Deduplicate, remove noise, classify ground, normalize heights.
    Preprocess,
    /// Discrete metrics per plot and waveform metrics per footprint.
    Metrics,
    /// Simulate one waveform footprint from a point cloud.
    Simulate(SimulateArgs),
    /// Compute plot biomass and carbon totals from the tree list.
    Inventory,
    /// Variance, correlation and importance filtering of metrics.
    Select,
    /// OLS subset search and SVR grid search.
    Fit,
    /// Apply a fitted model to a metrics CSV.
    Predict(PredictArgs),
    /// Predictions, error summaries and system comparison.
    Evaluate,
    /// Generate a synthetic scene, or a complete demo project.
    Synth(SynthArgs),
    /// Run every stage, or only one.
    Run {
        #[arg(long)]
        only: Option<Stage>,
    },
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Ground-classified LAS cloud with absolute elevations.
    #[arg(long)]
    input: PathBuf,
    /// Footprint center easting.
    #[arg(long, allow_hyphen_values = true)]
    x: f64,
    /// Footprint center northing.
    #[arg(long, allow_hyphen_values = true)]
    y: f64,
    /// Footprint diameter (m).
    #[arg(long, default_value_t = 25.0)]
    diameter: f64,
    /// Noise standard deviation as a fraction of peak amplitude.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Waveform text output.
    #[arg(long)]
    out: PathBuf,
    /// Optional single-row waveform metrics CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value = "footprint")]
    id: String,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Metrics CSV with one row per plot.
    #[arg(long)]
    metrics: PathBuf,
    /// Output CSV (`plot_id,predicted`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["spec", "demo"]))]
struct SynthArgs {
    /// Scene specification (TOML).
    #[arg(long, requires_all = ["out", "truth"])]
    spec: Option<PathBuf>,
    /// Scene LAS output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tree list CSV output.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write a ten-plot demo project (clouds, tree list, run.toml) here.
    #[arg(long)]
    demo: Option<PathBuf>,
    /// Number of demo plots.
    #[arg(long, default_value_t = 10)]
    plots: usize,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_stages(cli: &Cli, only: Option<Stage>) -> Result<()> {
    let pipeline = Pipeline::new(load_config(cli)?);
    let summary = pipeline.run(only)?;
    if !summary.is_empty() {
        let report = std::fs::read_to_string(pipeline.layout.report())?;
        print!("{report}");
    }
    Ok(())
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let cloud = read_las(&args.input)?;
    let cfg = FootprintConfig {
        center: [args.x, args.y],
        diameter: args.diameter,
        noise_std: args.noise,
        seed: cli.seed.unwrap_or(FootprintConfig::default().seed),
        ..FootprintConfig::default()
    };
    let (mut wf, m) = waveform_metrics(&cloud, &cfg)?;
    wf.wave_id = args.id.clone();
    let mut out = create_file(&args.out)?;
    wf.write_text(&mut out)?;
    out.flush()?;
    if let Some(path) = &args.metrics {
        let mut row = m.to_metric_vector(&args.id)?;
        row.system = metrics::SystemTag::SlsFw;
        metrics::write_metrics_csv(&[row], create_file(path)?)?;
    }
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let model = Model::read_json(open_file(&args.model)?)?;
    let rows = read_metrics_csv(open_file(&args.metrics)?)?;
    let mut w = csv::Writer::from_writer(create_file(&args.out)?);
    let csv_err = |e: csv::Error| Error::Io(e.into());
    w.write_record(["plot_id", "predicted"]).map_err(csv_err)?;
    for row in &rows {
        let x = model
            .names()
            .iter()
            .map(|n| {
                row.get(n).ok_or_else(|| {
                    Error::Config(format!("plot {} has no value for {n}", row.plot_id))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        w.write_record([row.plot_id.clone(), model.predict_row(&x).to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    if let Some(dir) = &args.demo {
        let spec = DemoSpec {
            plots: args.plots,
            seed: cli.seed.unwrap_or(DemoSpec::default().seed),
            ..DemoSpec::default()
        };
        let project = write_demo_project(dir, &spec)?;
        println!("{}", project.config.display());
        return Ok(());
    }
    let (Some(spec_path), Some(out), Some(truth)) = (&args.spec, &args.out, &args.truth) else {
        return Err(Error::Config(
            "synth needs --spec, --out and --truth".into(),
        ));
    };
    let text = std::fs::read_to_string(spec_path).map_err(|source| Error::File {
        path: spec_path.clone(),
        source,
    })?;
    let mut spec = SceneSpec::from_toml(&text)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let scene = generate(&spec)?;
    ensure_parent(out)?;
    write_las(&scene.cloud, out)?;
    allometry::write_inventory_csv(&truth_rows(&scene), create_file(truth)?)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|source| Error::File {
                path: dir.to_path_buf(),
                source,
            })
        }
        _ => Ok(()),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Ingest => run_stages(cli, Some(Stage::Ingest)),
        Command::Preprocess => run_stages(cli, Some(Stage::Preprocess)),
        Command::Metrics => run_stages(cli, Some(Stage::Metrics)),
        Command::Inventory => run_stages(cli, Some(Stage::Inventory)),
        Command::Select => run_stages(cli, Some(Stage::Select)),
        Command::Fit => run_stages(cli, Some(Stage::Fit)),
        Command::Evaluate => run_stages(cli, Some(Stage::Evaluate)),
        Command::Run { only } => run_stages(cli, *only),
        Command::Simulate(args) => simulate(cli, args),
        Command::Predict(args) => predict(args),
        Command::Synth(args) => synth(cli, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
