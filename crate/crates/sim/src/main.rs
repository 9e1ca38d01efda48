use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use irsbf_core::scenario::Scenario;
use irsbf_nets::dataset::{generate_dataset_beam, generate_dataset_phase, BeamDataset, PhaseDataset};
use irsbf_nets::train::{iafnn_config_for, train_iafnn, train_lacl, TrainConfig, TrainReport};
use irsbf_nets::{LaClConfig, LaClGnn};
use irsbf_sim::config::{CheckpointPair, ConfigFile};
use irsbf_sim::models::{DlpbModels, ModelSet, TrainingRecord};
use irsbf_sim::report::{ReportPaths, Summary, VERSION};
use irsbf_sim::{
    emit_report, preset_file, run_monte_carlo, scalability_eval, summarize, train_for_experiment, ExperimentConfig, Scale,
    Scheme, TrialResult,
};

/// Predictive IRS beamforming simulator.
#[derive(Parser)]
#[command(name = "irsbf", version = VERSION)]
struct Cli {
    /// Worker threads (default: one per core). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phase-network or beam-network training dataset.
    GenData(GenDataArgs),
    /// Train the phase network on a phase dataset.
    TrainPhase(TrainArgs),
    /// Train the beam network on a beam dataset.
    TrainBeam(TrainArgs),
    /// Run the experiment described by a configuration file.
    Eval(EvalArgs),
    /// Train networks and run one of the named sweeps (beta, power, users, velocity, tau).
    Sweep(SweepArgs),
    /// Evaluate one network pair at several user counts without retraining.
    Scalability(ScalabilityArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Phase,
    Beam,
}

/// Which system to simulate.
#[derive(Args)]
struct SystemArgs {
    /// Full-size system (N=100, M=6) instead of the desk-scale one (N=16, M=4).
    #[arg(long)]
    full: bool,
    /// Take the scenario (and history length) from this experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl SystemArgs {
    fn scale(&self) -> Scale {
        if self.full {
            Scale::Full
        } else {
            Scale::Desk
        }
    }

    /// Scenario and default history length.
    fn resolve(&self) -> anyhow::Result<(Scenario, usize)> {
        match &self.config {
            Some(path) => {
                let cfg = ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
                Ok((cfg.scenario, cfg.tau))
            }
            None => Ok((self.scale().scenario(), self.scale().lacl().tau)),
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    kind: DataKind,
    /// Output dataset file (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    /// Master seed of the dataset.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// History length of a phase dataset.
    #[arg(long)]
    tau: Option<usize>,
    /// Phase-network checkpoint whose predictions a beam dataset is built on.
    #[arg(long)]
    phase: Option<PathBuf>,
    /// Channel-estimation NMSE of a beam dataset.
    #[arg(long, default_value_t = 0.1)]
    nmse: f64,
    #[command(flatten)]
    system: SystemArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file produced by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Seed of the initialization and the mini-batch order.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Use the full-size phase-network architecture.
    #[arg(long)]
    full: bool,
}

impl TrainArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the configuration's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// beta, power, users, velocity or tau.
    preset: String,
    /// Full-size system (N=100, M=6) instead of the desk-scale one (N=16, M=4).
    #[arg(long)]
    full: bool,
    /// Monte Carlo trials per sweep point (default: 200 desk, 2000 full-size).
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed (default: 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: results/<preset>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of dlpb, fp_icsi, naive_fp, random_mrt.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Examples per training dataset.
    #[arg(long)]
    examples: Option<usize>,
    /// Training epochs of each network.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct ScalabilityArgs {
    /// Phase-network checkpoint.
    #[arg(long)]
    phase: PathBuf,
    /// Beam-network checkpoint.
    #[arg(long)]
    beam: PathBuf,
    /// Comma-separated user counts.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6")]
    users: Vec<usize>,
    /// Monte Carlo trials per user count (default: 200 desk, 2000 full-size).
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Full-size system (N=100, M=6) instead of the desk-scale one (N=16, M=4).
    #[arg(long)]
    full: bool,
    #[arg(long, default_value = "results/scalability")]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainPhase(a) => train_phase(a),
        Command::TrainBeam(a) => train_beam(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Scalability(a) => scalability(a),
    }
}

fn gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let (scenario, default_tau) = a.system.resolve()?;
    match a.kind {
        DataKind::Phase => {
            let data = generate_dataset_phase(&scenario, a.tau.unwrap_or(default_tau), a.count, a.seed)?;
            data.save(&a.out)?;
        }
        DataKind::Beam => {
            let Some(phase) = &a.phase else { bail!("a beam dataset needs --phase <checkpoint>") };
            let net = LaClGnn::load(phase).with_context(|| format!("loading {}", phase.display()))?;
            let data = generate_dataset_beam(&net, &scenario, a.nmse, a.count, a.seed)?;
            data.save(&a.out)?;
        }
    }
    println!("wrote {} examples to {}", a.count, a.out.display());
    Ok(())
}

fn print_report(what: &str, r: &TrainReport) {
    println!(
        "{what}: loss {:.6} -> {:.6} (best epoch {}), held-out {} -> {}",
        r.initial_loss,
        r.final_loss,
        r.best_epoch,
        r.heldout_initial.map_or("-".into(), |v| format!("{v:.6}")),
        r.heldout_final.map_or("-".into(), |v| format!("{v:.6}")),
    );
}

fn train_phase(a: TrainArgs) -> anyhow::Result<()> {
    let data = PhaseDataset::load(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let g = &data.scenario.geometry;
    let base = if a.full { LaClConfig::full() } else { LaClConfig::desk() };
    let config = LaClConfig { n: g.num_irs_elements(), m: g.num_ap_antennas, tau: data.tau, ..base };
    let (net, report) = train_lacl(&data, config, &a.train_config())?;
    net.save(&a.out)?;
    print_report("phase network", &report);
    println!("saved {}", a.out.display());
    Ok(())
}

fn train_beam(a: TrainArgs) -> anyhow::Result<()> {
    let data = BeamDataset::load(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let (net, report) = train_iafnn(&data, iafnn_config_for(&data.scenario), &a.train_config())?;
    net.save(&a.out)?;
    print_report("beam network", &report);
    println!("saved {}", a.out.display());
    Ok(())
}

fn finish(cfg: &ExperimentConfig, results: &[TrialResult], out: &Path) -> anyhow::Result<()> {
    let ReportPaths { csv, summary } = emit_report(cfg, results, out)?;
    print_summary(&summarize(cfg, results)?);
    println!("wrote {} and {}", csv.display(), summary.display());
    Ok(())
}

fn print_summary(s: &Summary) {
    println!("{:<12} {:>10} {:>12} {:>10} {:>14}", "scheme", s.unit, "mean WSR", "stderr", "protocol WSR");
    for c in &s.cells {
        println!(
            "{:<12} {:>10} {:>12.4} {:>10.4} {:>14.4}",
            c.scheme.name(),
            c.sweep_value,
            c.mean_wsr,
            c.stderr_wsr,
            c.mean_protocol_wsr
        );
    }
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let models = if cfg.schemes.contains(&Scheme::Dlpb) { Some(ModelSet::load(&cfg)?) } else { None };
    let results = run_monte_carlo(&cfg, models.as_ref())?;
    finish(&cfg, &results, a.out.as_deref().unwrap_or(&cfg.output))
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let scale = if a.full { Scale::Full } else { Scale::Desk };
    let mut file: ConfigFile = preset_file(&a.preset, scale)?;
    if let Some(t) = a.trials {
        file.trials = t;
    }
    if let Some(s) = a.seed {
        file.seed = s;
    }
    if let Some(names) = &a.schemes {
        file.schemes = names.iter().map(|n| n.parse()).collect::<irsbf_sim::Result<_>>()?;
    }
    if let Some(n) = a.examples {
        file.training.examples = n;
    }
    if let Some(e) = a.epochs {
        file.training.epochs = e;
    }
    let out = a.out.unwrap_or_else(|| file.output.clone());
    file.output = out.clone();
    let mut cfg = ExperimentConfig::parse(file.clone())?;

    let models = if cfg.schemes.contains(&Scheme::Dlpb) {
        eprintln!("training {} network pair(s)", cfg.model_count());
        let models = train_for_experiment(&cfg, |i, r: &TrainingRecord| {
            eprintln!(
                "  pair {i}: phase loss {:.4} -> {:.4}, beam loss {:.4} -> {:.4}",
                r.phase.initial_loss, r.phase.final_loss, r.beam.initial_loss, r.beam.final_loss
            );
        })?;
        let pairs = models.save(&out.join("checkpoints"), "net")?;
        file.dlpb.checkpoints = pairs
            .into_iter()
            .map(|p| CheckpointPair { phase: Path::new("checkpoints").join(p.phase), beam: Path::new("checkpoints").join(p.beam) })
            .collect();
        cfg = ExperimentConfig::parse(file.clone())?;
        Some(models)
    } else {
        None
    };
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.toml"), file.to_toml()?)?;
    let results = run_monte_carlo(&cfg, models.as_ref())?;
    finish(&cfg, &results, &out)
}

fn scalability(a: ScalabilityArgs) -> anyhow::Result<()> {
    let scale = if a.full { Scale::Full } else { Scale::Desk };
    let models = DlpbModels::load(&CheckpointPair { phase: a.phase.clone(), beam: a.beam.clone() })?;
    let mut file = preset_file("users", scale)?;
    file.seed = a.seed;
    if let Some(t) = a.trials {
        file.trials = t;
    }
    file.dlpb.tau = Some(models.phase.config().tau);
    file.output = a.out.clone();
    let base = ExperimentConfig::parse(file)?;
    let results = scalability_eval(&base, &models, &a.users)?;
    let mut echo = base.source.clone();
    echo.schemes = vec![Scheme::Dlpb];
    echo.sweep.values = a.users.iter().map(|&k| k as f64).collect();
    finish(&ExperimentConfig::parse(echo)?, &results, &a.out)
}
