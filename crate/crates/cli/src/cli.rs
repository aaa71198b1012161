//! Command-line surface and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use mlcsc::learning::{perturb_layer, LambdaPolicy, LearnConfig, ZetaPolicy};
use mlcsc::pursuit::PursuitConfig;
use mlcsc::{serialize, MlcscModel, SignalGeometry};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::experiments::{self, stream_rng, RecoverMethod, RecoverParams, Scenario};
use crate::formats::{load_dataset, stack_table, write_bytes, Dataset};
use crate::synth;

#[derive(Debug, Parser)]
#[command(name = "mlcsc", version, about = "Multi-layer convolutional sparse coding experiments")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file with default flag values; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Build a synthetic non-convolutional model.
    SynthModel(SynthArgs),
    /// Draw signals from a model.
    Sample(SampleArgs),
    /// Planted recovery sweep comparing projection and layered pursuit.
    Recover(RecoverArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// M-term approximation error of IHT codes.
    Mterm(MtermArgs),
    /// Tabulate the stability bounds for noise scenarios.
    Bounds(BoundsArgs),
    /// Per-layer coherence and sparsity report.
    Coherence(CoherenceArgs),
    /// Project signals onto the model.
    Project(ProjectArgs),
    /// Code signals against the deepest effective dictionary.
    Pursue(PursueArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Dense Gaussian first layer, sparse random deeper layers.
    Nonconv,
    /// Low-coherence identity/DCT first layer, identity/Hadamard deeper layers.
    Control,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "nonconv")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 200)]
    pub signal_len: usize,
    /// Atoms per layer.
    #[arg(long, value_delimiter = ',', default_value = "250,300,350")]
    pub atoms: Vec<usize>,
    /// Fraction of zero entries in deeper-layer atoms.
    #[arg(long, default_value_t = 0.99)]
    pub sparsity: f64,
    /// Deepest sparsity level; shallower ones follow from the dictionaries.
    #[arg(long, default_value_t = 10)]
    pub deepest_cap: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Nonzeros in the deepest representation.
    #[arg(long)]
    pub nnz: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output directory (signals.mlcs, stacks.csv).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Deepest cardinalities: a list (`1,2,5`) or a range (`2-10`).
    #[arg(long, default_value = "1-10")]
    pub k: String,
    #[arg(long, default_value_t = 0.02)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "projection-omp,projection-sp,layered-sp")]
    pub methods: Vec<String>,
    /// Summary CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-trial certification CSV.
    #[arg(long)]
    pub trials_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// IDX image file or MLCS signal matrix.
    #[arg(long)]
    pub data: PathBuf,
    /// Channels per position for MLCS input (IDX uses image columns).
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub center: bool,
    /// Use only the first N signals.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Layers as `filters:n:stride`, comma separated.
    #[arg(long, conflicts_with = "init")]
    pub arch: Option<String>,
    /// Start from a saved model instead of a random architecture.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Relative perturbation applied to the initial model's kernels.
    #[arg(long, default_value_t = 0.0)]
    pub perturb: f64,
    /// Fraction of coefficients kept in layers 2..L.
    #[arg(long, value_delimiter = ',')]
    pub keep: Vec<f64>,
    /// Fixed l1 weight; otherwise tuned toward --target-nnz.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 15.0)]
    pub target_nnz: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.001)]
    pub iota: f64,
    #[arg(long, default_value_t = 200)]
    pub fista_iters: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output directory (model.mlcsc, trace.csv, train.toml).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// IDX image file or MLCS signal matrix.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub center: bool,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MtermArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,25")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Global noise energies, one scenario each.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub e0: Vec<f64>,
    /// Patch-wise noise levels (default: equal to e0).
    #[arg(long, value_delimiter = ',')]
    pub eps0: Vec<f64>,
    /// Sparsity levels (default: the model's).
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<usize>,
    #[arg(long)]
    pub nnz_patch: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub gamma_min: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CoherenceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Restart OMP from scratch at each cardinality.
    #[arg(long)]
    pub cold: bool,
    /// Output directory (signals.mlcs, stacks.csv, summary.csv).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Coder {
    Omp,
    Sp,
    Fista,
    Iht,
}

#[derive(Debug, Args)]
pub struct PursueArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "omp")]
    pub method: Coder,
    /// Cardinality for OMP, SP and IHT.
    #[arg(long)]
    pub k: Option<usize>,
    /// l1 weight for FISTA.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Output directory (signals.mlcs, stacks.csv, summary.csv).
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `1,2,5` or `2-10`.
pub fn parse_k_range(text: &str) -> Result<Vec<usize>> {
    let bad = || CliError::Argument(format!("bad cardinality list `{text}`"));
    if let Some((a, b)) = text.split_once('-') {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Argument(format!("{} is not a readable file", path.display())))
    }
}

fn load_model(path: &Path) -> Result<MlcscModel> {
    require_file(path)?;
    Ok(serialize::load(path)?)
}

fn load_data(d: &DataArgs) -> Result<Dataset> {
    require_file(&d.data)?;
    load_dataset(&d.data, d.center, d.channels, d.limit)
}

fn save_model(model: &MlcscModel, path: &Path) -> Result<()> {
    write_bytes(path, &serialize::to_bytes(model))
}

fn save_coded(out: &Path, coded: &experiments::Coded) -> Result<()> {
    coded.signals.save(&out.join("signals.mlcs"))?;
    stack_table(coded.stacks.iter().enumerate()).save(&out.join("stacks.csv"))?;
    coded.summary.save(&out.join("summary.csv"))
}

fn synth_model(a: &SynthArgs) -> Result<()> {
    let mut rng = stream_rng(a.seed, 0);
    let model = match a.kind {
        SynthKind::Nonconv => synth::nonconvolutional(a.signal_len, &a.atoms, a.sparsity, a.deepest_cap, &mut rng)?,
        SynthKind::Control => synth::control(a.signal_len, &a.atoms, a.deepest_cap)?,
    };
    save_model(&model, &a.out)?;
    println!("model with sparsity levels {:?} written to {}", model.lambdas(), a.out.display());
    Ok(())
}

fn sample(a: &SampleArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let s = experiments::sample_signals(&model, a.count, a.nnz, a.seed)?;
    s.signals.save(&a.out.join("signals.mlcs"))?;
    stack_table(s.stacks.iter().enumerate()).save(&a.out.join("stacks.csv"))?;
    println!("membership: {}/{} samples are model members", s.members, a.count);
    Ok(())
}

fn recover(a: &RecoverArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let params = RecoverParams {
        ks: parse_k_range(&a.k)?,
        sigma: a.sigma,
        trials: a.trials,
        seed: a.seed,
        methods: a.methods.iter().map(|m| RecoverMethod::parse(m.trim())).collect::<Result<_>>()?,
    };
    let report = experiments::recover(&model, &params)?;
    report.summary.save(&a.out)?;
    if let Some(path) = &a.trials_out {
        report.trials.save(path)?;
    }
    let certs: Vec<_> = report.outcomes.iter().filter_map(|o| o.certification.as_ref()).collect();
    println!(
        "certification: {} trials meet the hypotheses, {} certified, {} violations",
        certs.iter().filter(|c| c.hypothesis).count(),
        certs.iter().filter(|c| c.certified()).count(),
        certs.iter().filter(|c| c.violated()).count()
    );
    Ok(())
}

fn learn_config(a: &TrainArgs) -> LearnConfig {
    LearnConfig {
        lambda: a.lambda.map_or(LambdaPolicy::TargetNnz(a.target_nnz), LambdaPolicy::Fixed),
        zetas: a.keep.iter().map(|&q| ZetaPolicy::KeepFraction(q)).collect(),
        eta: a.eta,
        momentum: a.momentum,
        iota: a.iota,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        fista_iters: a.fista_iters,
        ..LearnConfig::default()
    }
}

fn train(a: &TrainArgs) -> Result<()> {
    require_file(&a.data)?;
    if let Some(init) = &a.init {
        require_file(init)?;
    }
    let data = load_dataset(&a.data, a.center, a.channels, a.limit)?;
    let mut config = learn_config(a);
    let mut rng = stream_rng(a.seed, u64::MAX);
    let init = match (&a.init, &a.arch) {
        (Some(path), _) => {
            let model = serialize::load(path)?;
            if config.zetas.is_empty() {
                config.zetas = model.layers()[1..]
                    .iter()
                    .map(|l| ZetaPolicy::KeepFraction(1.0 - l.sparsity()))
                    .collect();
            }
            let layers = model
                .layers()
                .iter()
                .map(|l| perturb_layer(l, a.perturb, &mut rng))
                .collect::<mlcsc::Result<Vec<_>>>()?;
            model.with_layers(layers)?
        }
        (None, Some(arch)) => {
            let arch = synth::parse_arch(arch)?;
            let geometry = SignalGeometry::new(data.spatial_len, data.channels)?;
            synth::init_model(geometry, &arch, &config.zetas, &mut rng)?
        }
        (None, None) => return Err(CliError::Argument("train needs --arch or --init".into())),
    };
    let (model, trace, table) = experiments::run_train(&data.signals, &init, &config)?;
    save_model(&model, &a.out.join("model.mlcsc"))?;
    table.save(&a.out.join("trace.csv"))?;
    let sidecar = toml::to_string(a).map_err(|e| CliError::Config(e.to_string()))?;
    write_bytes(&a.out.join("train.toml"), sidecar.as_bytes())?;
    if let Some(last) = trace.epochs.last() {
        println!(
            "trained {} epochs: mean loss {:.6}, kernel sparsity {:?}",
            trace.epochs.len(),
            last.mean_loss,
            last.kernel_sparsity
        );
    }
    Ok(())
}

fn mterm(a: &MtermArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let report = experiments::mterm(&model, &data.signals, &a.k, a.iters)?;
    report.table.save(&a.out)?;
    println!("non-increasing in k: {}", report.non_increasing);
    Ok(())
}

fn bounds(a: &BoundsArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    if !a.eps0.is_empty() && a.eps0.len() != a.e0.len() {
        return Err(CliError::Argument("--eps0 needs one value per --e0 value".into()));
    }
    let scenarios: Vec<Scenario> = a
        .e0
        .iter()
        .enumerate()
        .map(|(i, &e0)| Scenario {
            e0,
            eps0: a.eps0.get(i).copied().unwrap_or(e0),
            lambdas: (!a.lambdas.is_empty()).then(|| a.lambdas.clone()),
            nnz_patch: a.nnz_patch,
            gamma_min: a.gamma_min,
        })
        .collect();
    experiments::bounds_table(&model, &scenarios)?.save(&a.out)
}

fn coherence(a: &CoherenceArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    experiments::coherence_table(&model)?.save(&a.out)
}

fn project(a: &ProjectArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    save_coded(&a.out, &experiments::project_signals(&model, &data.signals, !a.cold)?)
}

fn pursue(a: &PursueArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let need_k = || a.k.ok_or_else(|| CliError::Argument(format!("{:?} needs --k", a.method)));
    let coder = match a.method {
        Coder::Omp => PursuitConfig::omp(need_k()?),
        Coder::Sp => PursuitConfig::subspace(need_k()?),
        Coder::Iht => PursuitConfig::iht(need_k()?),
        Coder::Fista => PursuitConfig::fista(a.lambda.ok_or_else(|| CliError::Argument("fista needs --lambda".into()))?),
    };
    save_coded(&a.out, &experiments::pursue_signals(&model, &data.signals, &coder)?)
}

/// Parses `argv` (after config expansion) and runs the command.
pub fn run(argv: Vec<String>) -> anyhow::Result<()> {
    let argv = crate::config::expand(argv, &Cli::command())?;
    let cli = Cli::parse_from(argv);
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Cmd::SynthModel(a) => synth_model(a),
        Cmd::Sample(a) => sample(a),
        Cmd::Recover(a) => recover(a),
        Cmd::Train(a) => train(a),
        Cmd::Mterm(a) => mterm(a),
        Cmd::Bounds(a) => bounds(a),
        Cmd::Coherence(a) => coherence(a),
        Cmd::Project(a) => project(a),
        Cmd::Pursue(a) => pursue(a),
    }?;
    Ok(())
}
