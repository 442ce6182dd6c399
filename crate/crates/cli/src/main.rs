use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use invnav::bench::{
    banana_csv, banana_samples, benchmark, run_filter, simulated_segments, InnovScaling, Variant,
};
use invnav::dataio::{
    inject_test_noise, load_akit, load_segment, ColumnMapping, FilterKind, NnVariant, RunConfig, Segment, TestNoise,
};
use invnav::geo::{Vec3, Vec9};
use invnav::neural::{load_model, save_model, LossKind, NoiseModel, TrainConfig};
use invnav::simgen::{build_training_set, gen_realizations, read_dataset, write_dataset, TrajectoryFamily};

/// Adaptive invariant Kalman filtering for inertial/DVL navigation.
#[derive(Parser)]
#[command(name = "invnav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the simulated training dataset (12 families x 4 noise regimes).
    Simulate(SimulateArgs),
    /// Train the noise-regression network.
    Train(TrainArgs),
    /// Run one filter on one segment.
    Run(RunArgs),
    /// Run the filter comparison over all segments, variants and seeds.
    Benchmark(BenchArgs),
    /// Sample a Gaussian in the Lie algebra and map it through the group exponential.
    DumpBanana(BananaArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    Huber,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset written by `simulate`; generated in memory from `--data-seed` when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    #[arg(long, value_enum, default_value_t = LossArg::Mse)]
    loss: LossArg,
    #[arg(long, default_value_t = 1.0)]
    huber_delta: f64,
    #[arg(long, default_value_t = 10)]
    step: usize,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Settings shared by `run` and `benchmark`; flags override the config file.
#[derive(Args)]
struct FilterArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    innovation_window: Option<usize>,
    #[arg(long, value_parser = parse_scaling)]
    innov_scaling: Option<InnovScaling>,
    /// Dataset directory (real-data segments).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Column mapping for the dataset.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Disable test-noise injection.
    #[arg(long)]
    no_noise: bool,
}

fn parse_scaling(s: &str) -> std::result::Result<InnovScaling, String> {
    match s {
        "per_step" => Ok(InnovScaling::PerStep),
        "per_update" => Ok(InnovScaling::PerUpdate),
        _ => Err(format!("expected per_step or per_update, got `{s}`")),
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: FilterArgs,
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    nn_variant: Option<String>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Segment id within `--dataset`.
    #[arg(long)]
    segment: Option<usize>,
    /// Simulate a noise-free trajectory of this family instead of loading data.
    #[arg(long)]
    simulate: Option<String>,
    #[arg(long, default_value_t = 0)]
    traj_seed: u64,
    /// Test-noise seed.
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Per-step error log (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: FilterArgs,
    /// Use this many held-out simulated trajectories instead of `--dataset`.
    #[arg(long)]
    simulated: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    sim_seed: u64,
    /// Directory with `<variant>.txt` weight files.
    #[arg(long)]
    weights_dir: Option<PathBuf>,
    /// Comma-separated columns, e.g. `AEKF,AR-IKF,NN-AR-IKF:s1_mse` (default: full grid).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Number of test-noise seeds (0..n); overrides the config's seed list.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_text: Option<PathBuf>,
}

#[derive(Args)]
struct BananaArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Heading standard deviation [rad].
    #[arg(long, default_value_t = 0.3)]
    sigma_heading: f64,
    /// Horizontal position standard deviation in the algebra [m].
    #[arg(long, default_value_t = 0.5)]
    sigma_pos: f64,
    /// Distance of the mean from the origin along x [m].
    #[arg(long, default_value_t = 10.0)]
    distance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn base_config(a: &FilterArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(w) = a.innovation_window {
        cfg.innovation_window = w;
    }
    if let Some(s) = a.innov_scaling {
        cfg.innov_scaling = s;
    }
    if a.no_noise {
        cfg.noise = TestNoise::ZERO;
    }
    if a.dataset.is_some() {
        cfg.paths.dataset = a.dataset.clone();
    }
    if a.mapping.is_some() {
        cfg.paths.mapping = a.mapping.clone();
    }
    Ok(cfg)
}

fn mapping(cfg: &RunConfig) -> Result<ColumnMapping> {
    Ok(match &cfg.paths.mapping {
        Some(p) => ColumnMapping::load(p)?,
        None => ColumnMapping::default(),
    })
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let reals = gen_realizations(a.seed)?;
    write_dataset(&a.out, &reals)?;
    println!("wrote {} realizations to {}", reals.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let reals = match &a.data {
        Some(d) => read_dataset(d)?,
        None => gen_realizations(a.data_seed)?,
    };
    let set = build_training_set(&reals, a.step);
    let loss = match a.loss {
        LossArg::Mse => LossKind::Mse,
        LossArg::Huber => LossKind::Huber { delta: a.huber_delta },
    };
    let cfg = TrainConfig {
        loss,
        epochs: a.epochs,
        lr: a.lr,
        dropout: a.dropout,
        batch_size: a.batch_size,
        seed: a.seed,
        step: a.step,
    };
    println!("training on {} windows", set.len());
    let (model, report) = NoiseModel::train(&set, &cfg, &mut |e, l| println!("epoch {e:3}  loss {l:.6}"))?;
    save_model(&model, &a.out)?;
    println!("saved {} after {:.1} s", a.out.display(), report.seconds);
    Ok(ExitCode::SUCCESS)
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = base_config(&a.common)?;
    if let Some(f) = &a.filter {
        cfg.filter = f.parse()?;
        cfg.nn_variant = if cfg.filter.uses_network() { NnVariant::S1Mse } else { NnVariant::None };
    }
    if let Some(v) = &a.nn_variant {
        cfg.nn_variant = v.parse()?;
    }
    if a.weights.is_some() {
        cfg.paths.weights = a.weights.clone();
    }
    cfg.validate()?;
    let seg = match (&a.simulate, &cfg.paths.dataset) {
        (Some(fam), _) => Segment::simulated(1, fam.parse::<TrajectoryFamily>()?, a.traj_seed)?,
        (None, Some(dir)) => {
            let id = a.segment.context("--segment is required with a dataset")?;
            load_segment(dir, id, &mapping(&cfg)?)?
        }
        (None, None) => bail!("give --simulate FAMILY or --dataset DIR --segment ID"),
    };
    let model = if cfg.filter.uses_network() {
        let p = cfg.paths.weights.as_ref().context("network filters need --weights")?;
        Some(load_model(p)?)
    } else {
        None
    };
    let noisy = inject_test_noise(&seg, &cfg.noise, a.noise_seed);
    let nn = model.as_ref().map(|m| m as &dyn invnav::bench::NoiseSource);
    match run_filter(&noisy, &cfg, nn) {
        Ok(r) => {
            println!("{} segment {}: position RMSE {:.4} m", cfg.filter, seg.id, r.rmse_position);
            if let Some(out) = &a.out {
                let mut s = String::from("t,pos_err,vel_err,cov_trace\n");
                for i in 0..r.times.len() {
                    s.push_str(&format!("{},{},{},{}\n", r.times[i], r.pos_err[i], r.vel_err[i], r.cov_trace[i]));
                }
                fs::write(out, s)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("filter diverged: {e}");
            Ok(ExitCode::from(2))
        }
    }
}

fn load_models(dir: Option<&Path>, variants: &[Variant]) -> Result<HashMap<NnVariant, NoiseModel>> {
    let mut models = HashMap::new();
    for v in variants {
        if v.nn == NnVariant::None || models.contains_key(&v.nn) {
            continue;
        }
        let dir = dir.context("network variants need --weights-dir")?;
        let p = dir.join(v.nn.file_name());
        let m = load_model(&p).with_context(|| format!("loading {}", p.display()))?;
        models.insert(v.nn, m);
    }
    Ok(models)
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let mut cfg = base_config(&a.common)?;
    if let Some(n) = a.seeds {
        cfg.seeds = (0..n).collect();
    }
    if a.weights_dir.is_some() {
        cfg.paths.weights_dir = a.weights_dir.clone();
    }
    // The per-variant filter/network pair is set per column; validate the rest.
    RunConfig { filter: FilterKind::Aekf, nn_variant: NnVariant::None, ..cfg.clone() }.validate()?;
    let variants: Vec<Variant> = if a.variants.is_empty() {
        Variant::full_grid()
    } else {
        a.variants.iter().map(|s| s.parse()).collect::<invnav::Result<_>>()?
    };
    let segments = match (a.simulated, &cfg.paths.dataset) {
        (Some(n), _) => simulated_segments(n, a.sim_seed)?,
        (None, Some(dir)) => load_akit(dir, &mapping(&cfg)?)?,
        (None, None) => bail!("give --dataset DIR or --simulated N"),
    };
    let models = load_models(cfg.paths.weights_dir.as_deref(), &variants)?;
    let table = benchmark(&segments, &variants, &cfg.seeds, &cfg, &models, &mut |m| eprintln!("{m}"))?;
    let text = table.to_text();
    print!("{text}");
    if let Some(p) = &a.out_csv {
        fs::write(p, table.to_csv())?;
    }
    if let Some(p) = &a.out_text {
        fs::write(p, &text)?;
    }
    if table.diverged() {
        for f in &table.failures {
            eprintln!("diverged: {f}");
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn banana(a: BananaArgs) -> Result<ExitCode> {
    let mut sigma = Vec9::zeros();
    sigma[2] = a.sigma_heading;
    sigma[6] = a.sigma_pos;
    sigma[7] = a.sigma_pos;
    let s = banana_csv(&banana_samples(a.n, &sigma, &Vec3::new(a.distance, 0.0, 0.0), a.seed));
    match &a.out {
        Some(p) => fs::write(p, s)?,
        None => print!("{s}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Run(a) => run(a),
        Command::Benchmark(a) => bench(a),
        Command::DumpBanana(a) => banana(a),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
