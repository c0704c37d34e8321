use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gcn_nam::nam::RankOrder;
use gcn_nam::{
    attribute, build_niv, curves_to_json, curves_to_tsv, emit_dot, emit_json, generate_synthetic, load_dataset,
    parse_curves_tsv, rank_nodes, render_svg, run_perturbation, train, Attribution, AttributionQuery, Dataset,
    DeletionMode, LoadOptions, Model, NivStyle, NormalizedAdjacency, PerturbationConfig, Strategy,
    SyntheticConfig, TargetSplit, TrainConfig,
};

/// Graph convolutional network training, node attribution and
/// perturbation analysis.
#[derive(Debug, Parser)]
#[command(name = "gcn-nam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a GCN and write a checkpoint.
    Train(TrainArgs),
    /// Attribute one node's logit to the nodes of its receptive field.
    Attribute(AttributeArgs),
    /// Delete neighbors by attribution rank or at random and record accuracy.
    Perturb(PerturbArgs),
    /// Emit the node importance subgraph as DOT and JSON.
    Visualize(VisualizeArgs),
    /// Render curves.tsv as an SVG line chart.
    Plot(PlotArgs),
    /// Write a planted-partition dataset in the portable format.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Dataset directory (meta.json, edges.tsv, features.tsv, labels.tsv, splits.json).
    #[arg(long)]
    dataset: PathBuf,
    /// Skip L1 row normalization of features.
    #[arg(long)]
    raw_features: bool,
}

impl DatasetArgs {
    fn load(&self) -> Result<Dataset> {
        let opts = LoadOptions {
            normalize_features: !self.raw_features,
        };
        let (ds, _) = load_dataset(&self.dataset, opts)
            .with_context(|| format!("loading dataset {}", self.dataset.display()))?;
        Ok(ds)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Write the per-epoch log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AttributeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    node: usize,
    /// `predicted`, `ground-truth`, or a class id.
    #[arg(long, default_value = "predicted")]
    class: String,
    /// Receptive-field radius; defaults to the model depth.
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Include per-node gradient vectors in the JSON.
    #[arg(long)]
    gradients: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrderArg {
    Signed,
    Abs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Nam,
    Random,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Renormalize,
    ZeroFeatures,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated deletion fractions, ascending.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    p: Vec<f64>,
    /// Number of random-deletion seeds.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// First random seed; the others follow consecutively.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "signed")]
    order: OrderArg,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "renormalize")]
    mode: ModeArg,
    #[arg(long)]
    hops: Option<usize>,
}

#[derive(Debug, Args)]
struct VisualizeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    model: PathBuf,
    /// JSON written by `attribute`.
    #[arg(long)]
    attribution: PathBuf,
    #[arg(long)]
    out_dot: PathBuf,
    #[arg(long)]
    out_json: PathBuf,
    #[arg(long, default_value_t = 1)]
    hops: usize,
    #[arg(long, default_value_t = 0.3)]
    size_min: f64,
    #[arg(long, default_value_t = 2.0)]
    size_max: f64,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    curves: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Separable,
    ZeroSignal,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    intra: Option<f64>,
    #[arg(long)]
    inter: Option<f64>,
    #[arg(long)]
    signal: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Attribute(a) => cmd_attribute(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Visualize(a) => cmd_visualize(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path, ds: &Dataset) -> Result<Model> {
    let model = Model::load(path).with_context(|| format!("loading model {}", path.display()))?;
    if model.input_dim() != ds.num_features() || model.num_classes() != ds.num_classes {
        bail!(
            "model {} expects {} features and {} classes but the dataset has {} and {}",
            path.display(),
            model.input_dim(),
            model.num_classes(),
            ds.num_features(),
            ds.num_classes
        );
    }
    Ok(model)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let ds = a.data.load()?;
    let cfg = TrainConfig {
        hidden_dim: a.hidden,
        epochs: a.epochs,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        dropout: a.dropout,
        seed: a.seed,
        patience: a.patience,
        ..TrainConfig::default()
    };
    let out = train(&ds, &cfg)?;
    out.model
        .save(&a.model_out)
        .with_context(|| format!("writing {}", a.model_out.display()))?;
    if let Some(log) = &a.log {
        write(log, &out.log())?;
    }
    let trace = out.model.forward(&NormalizedAdjacency::build(&ds.graph), &ds.features)?;
    let acc = gcn_nam::accuracy(&trace.predict(), &ds.labels, &ds.splits.test);
    println!("test_acc={acc:.3}");
    Ok(())
}

fn cmd_attribute(a: AttributeArgs) -> Result<()> {
    let ds = a.data.load()?;
    let model = load_model(&a.model, &ds)?;
    if a.node >= ds.num_nodes() {
        bail!("node {} is out of range (dataset has {} nodes)", a.node, ds.num_nodes());
    }
    let trace = model.forward(&NormalizedAdjacency::build(&ds.graph), &ds.features)?;
    let class = match a.class.as_str() {
        "predicted" => trace.predict()[a.node],
        "ground-truth" => ds.labels[a.node],
        other => other
            .parse()
            .with_context(|| format!("--class must be predicted, ground-truth or a class id, got {other:?}"))?,
    };
    let query = AttributionQuery {
        node: a.node,
        class,
        hops: a.hops.unwrap_or(model.depth()),
    };
    let result = attribute(&model, &trace, query)?;
    write(&a.out, &result.to_json(a.gradients))?;
    println!("node {} class {} ({} nodes attributed)", a.node, class, result.per_node.len());
    for n in rank_nodes(&result, RankOrder::AbsDesc, false).into_iter().take(5) {
        println!("{n}\t{:.6e}", result.contribution(n));
    }
    Ok(())
}

fn cmd_perturb(a: PerturbArgs) -> Result<()> {
    let ds = a.data.load()?;
    let model = load_model(&a.model, &ds)?;
    let cfg = PerturbationConfig {
        p_values: a.p,
        strategies: match a.strategy {
            StrategyArg::Nam => vec![Strategy::Nam],
            StrategyArg::Random => vec![Strategy::Random],
            StrategyArg::Both => vec![Strategy::Nam, Strategy::Random],
        },
        rank_order: match a.order {
            OrderArg::Signed => RankOrder::SignedDesc,
            OrderArg::Abs => RankOrder::AbsDesc,
        },
        num_random_seeds: a.seeds,
        seed: a.seed,
        hops: a.hops,
        split: match a.split {
            SplitArg::Test => TargetSplit::Test,
            SplitArg::All => TargetSplit::All,
        },
        mode: match a.mode {
            ModeArg::Renormalize => DeletionMode::Renormalize,
            ModeArg::ZeroFeatures => DeletionMode::ZeroFeatures,
        },
    };
    cfg.validate()?;
    let threads = match std::env::var("GCN_NAM_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .with_context(|| format!("GCN_NAM_THREADS must be a positive integer, got {v:?}"))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let curves = pool.install(|| run_perturbation(&model, &ds, &cfg))?;
    write(&a.out_dir.join("curves.tsv"), &curves_to_tsv(&curves))?;
    write(&a.out_dir.join("curves.json"), &curves_to_json(&curves))?;
    for c in &curves {
        println!("{}\tarea={:.4}", c.strategy.name(), c.area());
    }
    Ok(())
}

fn cmd_visualize(a: VisualizeArgs) -> Result<()> {
    let ds = a.data.load()?;
    let model = load_model(&a.model, &ds)?;
    let text = fs::read_to_string(&a.attribution).with_context(|| format!("reading {}", a.attribution.display()))?;
    let result = Attribution::from_json(&text).with_context(|| format!("parsing {}", a.attribution.display()))?;
    if result.query.node >= ds.num_nodes() {
        bail!(
            "{} refers to node {} but the dataset has {} nodes",
            a.attribution.display(),
            result.query.node,
            ds.num_nodes()
        );
    }
    let trace = model.forward(&NormalizedAdjacency::build(&ds.graph), &ds.features)?;
    let style = NivStyle {
        size_min: a.size_min,
        size_max: a.size_max,
    };
    let doc = build_niv(&result, &trace.predict(), &ds.graph, a.hops, style)?;
    write(&a.out_dot, &emit_dot(&doc))?;
    write(&a.out_json, &emit_json(&doc))?;
    println!("{} nodes, {} edges", doc.nodes.len(), doc.edges.len());
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.curves).with_context(|| format!("reading {}", a.curves.display()))?;
    let series = parse_curves_tsv(&text).with_context(|| format!("parsing {}", a.curves.display()))?;
    write(&a.out, &render_svg(&series))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let base = match a.preset {
        Preset::Default => SyntheticConfig {
            seed: a.seed,
            ..SyntheticConfig::default()
        },
        Preset::Separable => SyntheticConfig::separable(a.seed),
        Preset::ZeroSignal => SyntheticConfig::zero_signal(a.seed),
    };
    let cfg = SyntheticConfig {
        num_nodes: a.nodes.unwrap_or(base.num_nodes),
        num_classes: a.classes.unwrap_or(base.num_classes),
        num_features: a.features.unwrap_or(base.num_features),
        intra_edge_prob: a.intra.unwrap_or(base.intra_edge_prob),
        inter_edge_prob: a.inter.unwrap_or(base.inter_edge_prob),
        feature_signal: a.signal.unwrap_or(base.feature_signal),
        ..base
    };
    let ds: Dataset = generate_synthetic(&cfg)?;
    ds.save(&a.out).with_context(|| format!("writing dataset {}", a.out.display()))?;
    println!(
        "{} nodes, {} edges, {} classes",
        ds.num_nodes(),
        ds.graph.num_edges(),
        ds.num_classes
    );
    Ok(())
}
