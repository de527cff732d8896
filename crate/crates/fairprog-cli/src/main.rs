//! Command-line front end: one subcommand per protocol, flags mirroring the
//! config schema, `--config <path>` overriding the flags. Exit code 0 on
//! success; any failure prints a single `error: ...` line on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairprog::config::{Protocol, RunConfig, TriggerKind};
use fairprog::experiment::run_experiment;
use fairprog::fairness::Criterion;
use fairprog::model::Activation;
use fairprog::train::FairnessLoss;
use fairprog::trigger::TriggerPosition;

#[derive(Parser)]
#[command(
    name = "fairprog",
    about = "Fairness triggers for frozen classifiers: train, reprogram, sweep, verify",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every protocol; each one mirrors a config field and is
/// applied over the defaults. A `--config` file, when given, replaces the
/// flag-built configuration wholesale (its protocol must match the
/// subcommand).
#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML run configuration; overrides all other flags.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Data source: `synth` or a CSV path (header `y,z,f0,...`).
    #[arg(long)]
    source: Option<String>,
    /// Synthetic rows.
    #[arg(long)]
    n: Option<usize>,
    /// Synthetic feature width.
    #[arg(long)]
    d: Option<usize>,
    /// Spurious label-group correlation in [0, 1].
    #[arg(long)]
    bias: Option<f64>,
    /// Data generation seed.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Signal scale of the label block.
    #[arg(long)]
    signal: Option<f64>,
    /// Noise scale of every feature.
    #[arg(long)]
    noise: Option<f64>,

    /// Hidden layer widths, comma separated (e.g. 64,64).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Hidden activation: relu or tanh.
    #[arg(long)]
    activation: Option<String>,

    /// Fairness weight in the combined objective.
    #[arg(long)]
    lambda: Option<f64>,
    /// Fairness criterion: eo or dp.
    #[arg(long)]
    criterion: Option<String>,
    /// Fairness loss: adversarial or mmd.
    #[arg(long)]
    fairness_loss: Option<String>,
    /// Debiasing epochs (trigger / adversarial fine-tuning).
    #[arg(long)]
    epochs: Option<usize>,
    /// Base-model training epochs.
    #[arg(long)]
    base_epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Classifier learning rate.
    #[arg(long)]
    lr_classifier: Option<f64>,
    /// Trigger learning rate.
    #[arg(long)]
    lr_trigger: Option<f64>,
    /// Discriminator learning rate.
    #[arg(long)]
    lr_discriminator: Option<f64>,
    /// Discriminator steps per trigger/model step.
    #[arg(long)]
    disc_steps: Option<usize>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Trigger kind: additive, concat, border, patch, soft, hard.
    #[arg(long)]
    trigger_kind: Option<String>,
    /// Trigger size (slots / ring width / patch side); 0 = kind default.
    #[arg(long)]
    trigger_size: Option<usize>,
    /// Trigger position: prefix or suffix.
    #[arg(long)]
    trigger_position: Option<String>,
    /// Vocabulary size for soft/hard triggers.
    #[arg(long)]
    vocab: Option<usize>,
    /// Embedding width for soft/hard triggers.
    #[arg(long)]
    embed: Option<usize>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Sweep lambdas, comma separated.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Sweep seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Limited-data tuning ratios, comma separated.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Transfer: seed of the model the trigger is trained against.
    #[arg(long)]
    source_seed: Option<u64>,
    /// Transfer: seed of the unseen target model.
    #[arg(long)]
    target_seed: Option<u64>,
    /// Theory: target demographic group of the trigger token.
    #[arg(long)]
    theory_target: Option<usize>,
    /// Theory: trigger strengths, ascending in (0, 1].
    #[arg(long, value_delimiter = ',')]
    strengths: Option<Vec<f64>>,
    /// Theory: sigma grid for the infrequent-strong-features check.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    /// Estimate trigger gradients from loss queries only.
    #[arg(long)]
    blackbox: bool,
    /// Query count per zeroth-order gradient estimate.
    #[arg(long)]
    queries: Option<usize>,
    /// Zeroth-order smoothing radius.
    #[arg(long)]
    smoothing: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or re-emit) a dataset as CSV.
    GenData(CommonArgs),
    /// Train the frozen base classifier.
    TrainBase(CommonArgs),
    /// In-processing adversarial training from scratch.
    Advin(CommonArgs),
    /// Adversarial fine-tuning of the base model on the tuning set.
    Advpost(CommonArgs),
    /// Optimize a fairness trigger against the frozen base model.
    Reprogram(CommonArgs),
    /// Trade-off sweep over (lambda, seed) cells.
    Sweep(CommonArgs),
    /// Reprogramming under shrinking tuning-set ratios.
    LimitedData(CommonArgs),
    /// Train a trigger on one base model, score it on an unseen one.
    Transfer(CommonArgs),
    /// Exact generative-model checks and the trigger-strength curve.
    Theory(CommonArgs),
    /// Demographic probe of a trained trigger on the null input.
    Probe(CommonArgs),
}

impl Command {
    fn protocol(&self) -> Protocol {
        match self {
            Command::GenData(_) => Protocol::GenData,
            Command::TrainBase(_) => Protocol::Base,
            Command::Advin(_) => Protocol::Advin,
            Command::Advpost(_) => Protocol::Advpost,
            Command::Reprogram(_) => Protocol::Reprogram,
            Command::Sweep(_) => Protocol::Sweep,
            Command::LimitedData(_) => Protocol::LimitedData,
            Command::Transfer(_) => Protocol::Transfer,
            Command::Theory(_) => Protocol::Theory,
            Command::Probe(_) => Protocol::Probe,
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::GenData(a)
            | Command::TrainBase(a)
            | Command::Advin(a)
            | Command::Advpost(a)
            | Command::Reprogram(a)
            | Command::Sweep(a)
            | Command::LimitedData(a)
            | Command::Transfer(a)
            | Command::Theory(a)
            | Command::Probe(a) => a,
        }
    }
}

fn parse_choice<T>(name: &str, value: &str, table: &[(&str, T)]) -> Result<T, fairprog::Error>
where
    T: Copy,
{
    table
        .iter()
        .find(|(k, _)| *k == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let options: Vec<&str> = table.iter().map(|(k, _)| *k).collect();
            fairprog::Error::Config(format!("{name} must be one of {options:?}, got `{value}`"))
        })
}

fn build_config(protocol: Protocol, args: &CommonArgs) -> Result<RunConfig, fairprog::Error> {
    if let Some(path) = &args.config {
        let cfg = RunConfig::from_file(path)?;
        if cfg.protocol != protocol {
            return Err(fairprog::Error::Config(format!(
                "config file runs protocol `{}` but the subcommand is `{}`",
                cfg.protocol.name(),
                protocol.name()
            )));
        }
        return Ok(cfg);
    }
    let mut cfg = RunConfig::new(protocol);
    if let Some(v) = &args.source {
        cfg.data.source = v.clone();
    }
    if let Some(v) = args.n {
        cfg.data.n = v;
    }
    if let Some(v) = args.d {
        cfg.data.d = v;
    }
    if let Some(v) = args.bias {
        cfg.data.bias = v;
    }
    if let Some(v) = args.data_seed {
        cfg.data.seed = v;
    }
    if let Some(v) = args.signal {
        cfg.data.signal = v;
    }
    if let Some(v) = args.noise {
        cfg.data.noise = v;
    }
    if let Some(v) = &args.hidden {
        cfg.model.hidden = v.clone();
    }
    if let Some(v) = &args.activation {
        cfg.model.activation =
            parse_choice("activation", v, &[("relu", Activation::Relu), ("tanh", Activation::Tanh)])?;
    }
    if let Some(v) = args.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = &args.criterion {
        cfg.train.criterion = parse_choice("criterion", v, &[("eo", Criterion::Eo), ("dp", Criterion::Dp)])?;
    }
    if let Some(v) = &args.fairness_loss {
        cfg.train.fairness_loss = parse_choice(
            "fairness-loss",
            v,
            &[("adversarial", FairnessLoss::Adversarial), ("mmd", FairnessLoss::Mmd)],
        )?;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.base_epochs {
        cfg.train.base_epochs = v;
    }
    if let Some(v) = args.batch {
        cfg.train.batch = v;
    }
    if let Some(v) = args.lr_classifier {
        cfg.train.lrs.classifier = v;
    }
    if let Some(v) = args.lr_trigger {
        cfg.train.lrs.trigger = v;
    }
    if let Some(v) = args.lr_discriminator {
        cfg.train.lrs.discriminator = v;
    }
    if let Some(v) = args.disc_steps {
        cfg.train.disc_steps = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = &args.trigger_kind {
        cfg.trigger.kind = parse_choice(
            "trigger-kind",
            v,
            &[
                ("additive", TriggerKind::Additive),
                ("concat", TriggerKind::Concat),
                ("border", TriggerKind::Border),
                ("patch", TriggerKind::Patch),
                ("soft", TriggerKind::Soft),
                ("hard", TriggerKind::Hard),
            ],
        )?;
    }
    if let Some(v) = args.trigger_size {
        cfg.trigger.size = v;
    }
    if let Some(v) = &args.trigger_position {
        cfg.trigger.position = parse_choice(
            "trigger-position",
            v,
            &[("prefix", TriggerPosition::Prefix), ("suffix", TriggerPosition::Suffix)],
        )?;
    }
    if let Some(v) = args.vocab {
        cfg.trigger.vocab = v;
    }
    if let Some(v) = args.embed {
        cfg.trigger.embed = v;
    }
    if let Some(v) = &args.out {
        cfg.output.dir = v.clone();
    }
    if let Some(v) = &args.lambdas {
        cfg.sweep.lambdas = v.clone();
    }
    if let Some(v) = &args.seeds {
        cfg.sweep.seeds = v.clone();
    }
    if let Some(v) = &args.ratios {
        cfg.limited.ratios = v.clone();
    }
    if let Some(v) = args.source_seed {
        cfg.transfer.source_seed = v;
    }
    if let Some(v) = args.target_seed {
        cfg.transfer.target_seed = v;
    }
    if let Some(v) = args.theory_target {
        cfg.theory.target = v;
    }
    if let Some(v) = &args.strengths {
        cfg.theory.strengths = v.clone();
    }
    if let Some(v) = &args.sigmas {
        cfg.theory.sigmas = v.clone();
    }
    cfg.blackbox.enabled = args.blackbox;
    if let Some(v) = args.queries {
        cfg.blackbox.queries = v;
    }
    if let Some(v) = args.smoothing {
        cfg.blackbox.smoothing = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> Result<(), fairprog::Error> {
    let cli = Cli::parse();
    let protocol = cli.command.protocol();
    let cfg = build_config(protocol, cli.command.args())?;
    let summary = run_experiment(&cfg)?;
    println!("{}: wrote {} file(s) to {}", protocol.name(), summary.manifest.outputs.len() + 1, summary.out_dir.display());
    for name in summary.manifest.outputs.keys() {
        println!("  {}", summary.out_dir.join(name).display());
    }
    println!("  {}", summary.out_dir.join("manifest.json").display());
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // single line, `error: <kind>: <detail>`
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
