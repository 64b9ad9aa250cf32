use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::LevelFilter;
use radarnet::dataset::{
    decode_signal, decode_tensor, generate_dataset, generate_tensors, load_tensor, save_tensor,
    stratified_fold_split, Dataset, DatasetPreset, GenerateOptions, SIGNAL_MAGIC, TENSOR_MAGIC,
};
use radarnet::evaluation::{cross_validate, evaluate, train_fold_from, ConfusionMatrix};
use radarnet::network::{build_network, load_weights, save_weights, LoadOptions, Network};
use radarnet::spectrogram::{mean_normalize, signal_to_tensor, RdTensor, TensorLayout};
use radarnet::VehicleClass;
use serde::Serialize;

mod config;

use config::RunConfig;

/// FM-CW radar vehicle classifier: simulate, plot, train, evaluate, predict.
#[derive(Debug, Parser)]
#[command(name = "radarnet", version)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a labelled dataset of range-Doppler tensors.
    Generate(GenerateArgs),
    /// Render tensor channels or a raw signal's spectrograms as PGM images.
    Plot(PlotArgs),
    /// Train one fold and write weights plus the training mean tensor.
    Train(TrainArgs),
    /// Evaluate saved weights on a fold's test set or a whole dataset.
    Eval(EvalArgs),
    /// Run k-fold cross-validation and write a report.
    Cv(CvArgs),
    /// Classify a tensor (.rdt) or raw beat signal (.rbs).
    Predict(PredictArgs),
    /// Validate or print the effective configuration.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Output directory; its parent must exist.
    #[arg(short, long)]
    out: PathBuf,
    /// Per-class sample counts.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Base seed; sample i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Also store the raw beat signals (.rbs).
    #[arg(long)]
    save_signals: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    PaperLike,
}

impl From<PresetArg> for DatasetPreset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => DatasetPreset::Desk,
            PresetArg::PaperLike => DatasetPreset::PaperLike,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Channel {
    Up,
    Down,
    Average,
    All,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Tensor (.rdt) or raw beat signal (.rbs).
    input: PathBuf,
    /// Output image. With `--channel all` the channel name is appended to the stem.
    #[arg(short, long)]
    out: PathBuf,
    /// Map magnitudes to dB before scaling.
    #[arg(long)]
    log: bool,
    #[arg(long, value_enum, default_value = "all")]
    channel: Channel,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Simulate the dataset in memory instead of reading `--data`.
    #[arg(long, value_enum, conflicts_with = "data")]
    preset: Option<PresetArg>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output weights (.rdw); the mean tensor goes to `<stem>.mean.rdt`.
    #[arg(short, long)]
    out: PathBuf,
    /// Which fold draw to train on.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed of the batch order.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the network initialization and dropout masks.
    #[arg(long)]
    net_seed: Option<u64>,
    /// Start from these weights instead of a random initialization.
    #[arg(long, value_name = "FILE")]
    init_weights: Option<PathBuf>,
    /// With `--init-weights`, keep only the convolution layers and
    /// re-initialize the fully connected ones.
    #[arg(long, requires = "init_weights")]
    reinit_fc: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    weights: PathBuf,
    /// Evaluate on this fold's test set.
    #[arg(long, conflicts_with = "all")]
    fold: Option<usize>,
    /// Evaluate on every sample.
    #[arg(long)]
    all: bool,
    /// Write the confusion matrix as JSON.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Write the JSON report here.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Write the averaged confusion matrix as a PGM image.
    #[arg(long, value_name = "FILE")]
    pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Tensor (.rdt) or raw beat signal (.rbs).
    input: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Mean tensor; defaults to the one stored beside the weights.
    #[arg(long)]
    mean: Option<PathBuf>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Print the effective configuration with every default filled in.
    #[arg(long)]
    dump: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => cmd_generate(cfg, a),
        Command::Plot(a) => cmd_plot(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Cv(a) => cmd_cv(cfg, a),
        Command::Predict(a) => cmd_predict(cfg, a),
        Command::Config(a) => cmd_config(cfg, a),
    }
}

fn generate_options(cfg: &RunConfig) -> GenerateOptions {
    GenerateOptions {
        counts: cfg.dataset.preset.counts(),
        base_seed: cfg.dataset.seed,
        layout: cfg.layout,
        save_signals: cfg.dataset.save_signals,
    }
}

fn cmd_generate(mut cfg: RunConfig, a: GenerateArgs) -> Result<()> {
    if let Some(p) = a.preset {
        cfg.dataset.preset = p.into();
    }
    if let Some(s) = a.seed {
        cfg.dataset.seed = s;
    }
    cfg.dataset.save_signals |= a.save_signals;
    cfg.validate()?;
    let ds = generate_dataset(&generate_options(&cfg), &cfg.profiles, &cfg.radar, &a.out)
        .with_context(|| format!("generating dataset in {}", a.out.display()))?;
    let m = &ds.manifest;
    println!("dataset: {}", ds.root.display());
    println!("samples: {}", m.samples.len());
    for (class, n) in &m.class_counts {
        println!("  {class} ({}): {n}", class.description());
    }
    println!("tensor shape: 3x{}x{}", m.layout.height, m.layout.width);
    println!("radar params hash: {}", m.radar_params_hash);
    Ok(())
}

enum Input {
    Tensor(RdTensor),
    Signal(radarnet::radar_model::BeatSignal),
}

fn read_input(path: &Path) -> Result<Input> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let input = match bytes.get(..4) {
        Some(m) if m == SIGNAL_MAGIC => Input::Signal(decode_signal(&bytes)?),
        Some(m) if m == TENSOR_MAGIC => Input::Tensor(decode_tensor(&bytes)?),
        _ => bail!("{}: neither a tensor (.rdt) nor a beat signal (.rbs)", path.display()),
    };
    Ok(input)
}

fn cmd_plot(cfg: RunConfig, a: PlotArgs) -> Result<()> {
    let tensor = match read_input(&a.input)? {
        Input::Tensor(t) => t,
        Input::Signal(sig) => {
            let layout = TensorLayout::new(cfg.radar.freq_bins(), sig.num_ramps() / 2);
            signal_to_tensor(&sig, &cfg.radar, layout)?
        }
    };
    let channels: &[(usize, &str)] = match a.channel {
        Channel::Up => &[(0, "up")],
        Channel::Down => &[(1, "down")],
        Channel::Average => &[(2, "average")],
        Channel::All => &[(0, "up"), (1, "down"), (2, "average")],
    };
    for &(c, name) in channels {
        let path = if a.channel == Channel::All {
            let stem = a.out.file_stem().unwrap_or_default().to_string_lossy();
            a.out.with_file_name(format!("{stem}_{name}.pgm"))
        } else {
            a.out.clone()
        };
        fs::write(&path, tensor.channel_pgm(c, a.log)).with_context(|| format!("writing {}", path.display()))?;
        println!("{name}: {} ({}x{})", path.display(), tensor.width, tensor.height);
    }
    Ok(())
}

fn load_samples(cfg: &RunConfig, data: &DataArgs) -> Result<Vec<RdTensor>> {
    match (&data.data, data.preset) {
        (Some(dir), _) => {
            let ds = Dataset::open(dir)?;
            Ok(ds.load_all()?)
        }
        (None, Some(p)) => {
            let mut opts = generate_options(cfg);
            opts.counts = DatasetPreset::from(p).counts();
            Ok(generate_tensors(&opts, &cfg.profiles, &cfg.radar)?)
        }
        (None, None) => bail!("either --data or --preset is required"),
    }
}

fn fold_of(cfg: &RunConfig, samples: &[RdTensor], fold: usize) -> Result<radarnet::dataset::FoldSplit> {
    let labels: Vec<(usize, VehicleClass)> = samples
        .iter()
        .enumerate()
        .map(|(i, t)| (i, t.label.expect("dataset tensors are labelled")))
        .collect();
    let cv = &cfg.cv;
    let mut splits = stratified_fold_split(&labels, fold + 1, cv.train_per_class, cv.val_per_class, cv.split_seed)?;
    Ok(splits.swap_remove(fold))
}

fn mean_path(weights: &Path) -> PathBuf {
    weights.with_extension("mean.rdt")
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = a.net_seed {
        cfg.cv.net_seed = s;
    }
    cfg.validate()?;
    let samples = load_samples(&cfg, &a.data)?;
    let fold = fold_of(&cfg, &samples, a.fold)?;
    let shape = samples[0].shape();
    let net_seed = cfg.cv.net_seed;
    let mut net: Network<f32> = build_network(cfg.network, shape, VehicleClass::COUNT, net_seed)?;
    if let Some(init) = &a.init_weights {
        let opts = LoadOptions {
            allow_partial: false,
            reinit_fc: a.reinit_fc.then_some(net_seed),
        };
        let report = load_weights(init, &mut net, opts).with_context(|| format!("importing {}", init.display()))?;
        println!("imported layers: {}", report.loaded.join(", "));
        if !report.reinitialized.is_empty() {
            println!("re-initialized layers: {}", report.reinitialized.join(", "));
        }
    }
    let outcome = train_fold_from(&fold, &samples, net, net_seed, &cfg.train)?;
    for h in &outcome.history {
        println!(
            "epoch {:>3}  loss {:.4}  validation accuracy {:.4}",
            h.epoch, h.mean_loss, h.val_accuracy
        );
    }
    match outcome.best_epoch {
        Some(e) => println!("best epoch: {e}"),
        None => println!("no training epochs; saving the initial network"),
    }
    save_weights(&a.out, &outcome.net)?;
    let mean = mean_path(&a.out);
    save_tensor(&mean, &outcome.mean)?;
    println!("weights: {}", a.out.display());
    println!("mean tensor: {}", mean.display());
    Ok(())
}

fn load_model(cfg: &RunConfig, weights: &Path, mean: Option<&Path>) -> Result<(Network<f32>, RdTensor)> {
    let mean_file = mean.map_or_else(|| mean_path(weights), Path::to_path_buf);
    if !mean_file.is_file() {
        bail!("mean tensor {} not found (it is written beside the weights by `train`)", mean_file.display());
    }
    let mean = load_tensor(&mean_file)?;
    let mut net = build_network(cfg.network, mean.shape(), VehicleClass::COUNT, 0)?;
    load_weights(weights, &mut net, LoadOptions::default())
        .with_context(|| format!("loading {}", weights.display()))?;
    Ok((net, mean))
}

fn print_matrix(m: &ConfusionMatrix) {
    print!("true\\pred");
    for c in VehicleClass::ALL {
        print!("{:>6}", c.to_string());
    }
    println!();
    for (c, row) in VehicleClass::ALL.iter().zip(&m.counts) {
        print!("{:>9}", c.to_string());
        for v in row {
            print!("{v:>6}");
        }
        println!();
    }
}

#[derive(Serialize)]
struct EvalReport<'a> {
    weights: &'a Path,
    fold: Option<usize>,
    samples: u64,
    accuracy: f64,
    confusion: &'a ConfusionMatrix,
}

fn cmd_eval(cfg: RunConfig, a: EvalArgs) -> Result<()> {
    cfg.validate()?;
    let (net, mean) = load_model(&cfg, &a.weights, None)?;
    let samples = load_samples(&cfg, &a.data)?;
    let ids: Vec<usize> = if a.all {
        (0..samples.len()).collect()
    } else {
        fold_of(&cfg, &samples, a.fold.unwrap_or(0))?.test
    };
    let normalized = ids
        .iter()
        .map(|&id| mean_normalize(&samples[id], &mean))
        .collect::<radarnet::Result<Vec<_>>>()?;
    let m = evaluate(&net, &normalized)?;
    print_matrix(&m);
    println!("accuracy: {:.4} ({} samples)", m.accuracy(), m.total());
    if let Some(path) = &a.report {
        let report = EvalReport {
            weights: &a.weights,
            fold: if a.all { None } else { Some(a.fold.unwrap_or(0)) },
            samples: m.total(),
            accuracy: m.accuracy(),
            confusion: &m,
        };
        let text = serde_json::to_string_pretty(&report)? + "\n";
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_cv(mut cfg: RunConfig, a: CvArgs) -> Result<()> {
    if let Some(k) = a.folds {
        cfg.cv.folds = k;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let samples = load_samples(&cfg, &a.data)?;
    let report = cross_validate(&samples, &cfg.cv_options())?;
    for f in &report.folds {
        println!(
            "fold {:>2}  accuracy {:.4}  best epoch {}",
            f.fold,
            f.accuracy,
            f.best_epoch.map_or("-".into(), |e| e.to_string())
        );
    }
    println!("mean accuracy: {:.4}", report.mean_accuracy);
    let g: Vec<String> = report.class_g_row.iter().map(|v| format!("{v:.3}")).collect();
    println!("class G row: [{}]", g.join(", "));
    if let Some(path) = &a.report {
        fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.pgm {
        fs::write(path, report.confusion_pgm()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    class: VehicleClass,
    description: &'static str,
    scores: BTreeMap<VehicleClass, f64>,
}

fn cmd_predict(cfg: RunConfig, a: PredictArgs) -> Result<()> {
    cfg.validate()?;
    let (net, mean) = load_model(&cfg, &a.weights, a.mean.as_deref())?;
    let tensor = match read_input(&a.input)? {
        Input::Tensor(t) => t,
        Input::Signal(sig) => {
            let layout = TensorLayout {
                height: mean.height,
                width: mean.width,
                ..cfg.layout
            };
            signal_to_tensor(&sig, &cfg.radar, layout)?
        }
    };
    let (class, scores) = net.predict(&mean_normalize(&tensor, &mean)?)?;
    let p = Prediction {
        class,
        description: class.description(),
        scores: VehicleClass::ALL.into_iter().zip(scores).collect(),
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&p)?);
    } else {
        println!("class: {} ({})", p.class, p.description);
        for (c, s) in &p.scores {
            println!("  {c}: {s:.6}");
        }
    }
    Ok(())
}

fn cmd_config(cfg: RunConfig, a: ConfigArgs) -> Result<()> {
    cfg.validate()?;
    if a.dump {
        print!("{}", cfg.to_json());
    } else {
        println!("configuration is valid");
    }
    Ok(())
}
