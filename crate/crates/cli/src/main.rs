//! `osrlab` command-line front end.
//!
//! Experiment subcommands (`run-e1e2`, `run-finetune`, `run-ensemble`,
//! `simulate`, `score-external`) read an optional config file and apply
//! flags on top of it. They exit with status 1 when an acceptance check
//! fails and 2 on errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use osrlab::harness::{
    self, check_e1e2, check_ensemble, check_finetune, check_simulation, Check, ExperimentConfig,
    ExperimentKind, ResultTable,
};
use osrlab::metrics::{auroc, openness};
use osrlab::nn::{
    evaluate, extract_representation, finetune_frozen, load_params, save_params, train_classifier,
    train_supcon, Layer, ModelParams, TrainConfig,
};
use osrlab::osr::{aggregate_with, read_embeddings, write_embeddings, Aggregation, Scorer};
use osrlab::synthdata::{
    generate_outline_set, generate_protocol, load_dataset, write_dataset, LabeledDataset, Protocol,
    Role, Sample,
};

#[derive(Parser, Debug)]
#[command(name = "osrlab", version, about = "Open-set recognition experiments on synthetic shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a shape dataset to a directory of PPM images and a manifest.
    GenData {
        #[arg(long, default_value = "E2")]
        protocol: Protocol,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// White outlines instead of filled shapes.
        #[arg(long)]
        outline: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier (cross-entropy) or a SupCon model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = LossArg::Ce)]
        loss: LossArg,
        /// SupCon temperature.
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training a classifier with its early layers frozen.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "conv1")]
        freeze_until: Layer,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the activations of one layer to an embedding file.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "linear2")]
        layer: Layer,
        /// `train`, or `test` for inliers followed by outliers.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score embedding files and report AUROC.
    Score {
        /// Test embeddings, one file per model.
        #[arg(long, required = true)]
        test: Vec<PathBuf>,
        /// Training embeddings matching `--test`.
        #[arg(long)]
        train: Vec<PathBuf>,
        #[arg(long, default_value = "norm")]
        scorer: Scorer,
        #[arg(long, default_value = "socsum")]
        aggregation: Aggregation,
        #[arg(long)]
        zscore: bool,
        /// Write `label score` lines here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of a classifier on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Openness of a protocol with the given class counts.
    Openness {
        #[arg(long)]
        known: usize,
        #[arg(long)]
        unknown: usize,
    },
    /// Gradient curves of the SupCon loss over pair similarities.
    Simulate(ExperimentArgs),
    /// Classifier accuracy and AUROC on E1 and E2.
    RunE1e2(ExperimentArgs),
    /// Frozen-layer finetuning of the E1/E2 models on outlines.
    RunFinetune(ExperimentArgs),
    /// SupCon temperature ensemble on E2.
    RunEnsemble(ExperimentArgs),
    /// Scoring, aggregation, kNN and OSCR on external embedding files.
    ScoreExternal(ExperimentArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, ValueEnum)]
enum LossArg {
    Ce,
    Supcon,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

/// A dataset directory, or a protocol and seed to generate one.
#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long, conflicts_with_all = ["protocol", "data_seed", "outline"])]
    data: Option<PathBuf>,
    #[arg(long, default_value = "E2")]
    protocol: Protocol,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    #[arg(long)]
    outline: bool,
}

impl DataArgs {
    fn load(&self) -> osrlab::Result<LabeledDataset> {
        match &self.data {
            Some(dir) => load_dataset(dir),
            None if self.outline => Ok(generate_outline_set(self.protocol, self.data_seed)),
            None => Ok(generate_protocol(self.protocol, self.data_seed)),
        }
    }
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $OSRLAB_OUT or ./osrlab-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sets both the data and the model seed lists.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Training epochs of the experiment's main stage.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ExperimentArgs {
    fn config(&self, kind: ExperimentKind) -> osrlab::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| osrlab::Error::Io { path: path.clone(), source: e })?;
                let cfg = harness::parse_config(&text)?;
                if cfg.kind != kind && !(kind == ExperimentKind::E1e2 && cfg.kind == ExperimentKind::ToyOsr) {
                    return Err(osrlab::Error::InvalidArgument(format!(
                        "{} is a {} config",
                        path.display(),
                        cfg.kind.name()
                    )));
                }
                cfg
            }
            None => ExperimentConfig::new(kind),
        };
        let mut pairs: Vec<(String, String)> = Vec::new();
        if let Some(out) = &self.out {
            pairs.push(("out_dir".into(), out.display().to_string()));
        }
        if !self.seed.is_empty() {
            let list = self.seed.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
            pairs.push(("data_seeds".into(), list.clone()));
            pairs.push(("model_seeds".into(), list));
        }
        if let Some(e) = self.epochs {
            let key = match kind {
                ExperimentKind::Finetune => "finetune_epochs",
                ExperimentKind::Ensemble => "supcon_epochs",
                _ => "epochs",
            };
            pairs.push((key.into(), e.to_string()));
        }
        if let Some(lr) = self.lr {
            pairs.push(("learning_rate".into(), lr.to_string()));
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                osrlab::Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{kv}`"))
            })?;
            pairs.push((k.trim().into(), v.trim().into()));
        }
        cfg.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(table: &ResultTable, checks: &[Check]) -> bool {
    print!("{}", table.summary());
    for c in checks {
        println!("{c}");
    }
    checks.iter().all(|c| c.passed)
}

fn print_eval(ds: &LabeledDataset, params: &ModelParams<f32>) -> osrlab::Result<()> {
    for role in [Role::Train, Role::TestInlier] {
        let e = evaluate(params, ds, role)?;
        println!(
            "{:<12} accuracy {:.4}  shape accuracy {:.4}",
            role.name(),
            e.accuracy,
            e.shape_accuracy
        );
    }
    Ok(())
}

fn samples_for(ds: &LabeledDataset, split: SplitArg) -> Vec<&Sample> {
    match split {
        SplitArg::Train => ds.split(Role::Train).collect(),
        SplitArg::Test => ds.split(Role::TestInlier).chain(ds.split(Role::TestOutlier)).collect(),
    }
}

fn run(cli: Cli) -> osrlab::Result<bool> {
    match cli.command {
        Command::GenData { protocol, seed, outline, out } => {
            let ds = if outline {
                generate_outline_set(protocol, seed)
            } else {
                generate_protocol(protocol, seed)
            };
            let manifest = write_dataset(&ds, &out)?;
            println!("wrote {} images to {}", manifest.entries.len(), out.display());
        }
        Command::Train { data, loss, tau, epochs, lr, seed, out } => {
            let ds = data.load()?;
            let mut cfg = match loss {
                LossArg::Ce => TrainConfig::classifier(seed),
                LossArg::Supcon => TrainConfig::supcon(tau, seed),
            };
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            let report = match loss {
                LossArg::Ce => train_classifier(&ds, &cfg)?,
                LossArg::Supcon => train_supcon(&ds, &cfg)?,
            };
            if let Some(last) = report.epoch_losses.last() {
                println!("final epoch loss {last:.6}");
            }
            if loss == LossArg::Ce {
                print_eval(&ds, &report.params)?;
            }
            save_params(&report.params, &out)?;
        }
        Command::Finetune { model, data, freeze_until, epochs, lr, seed, out } => {
            let ds = data.load()?;
            let params: ModelParams<f32> = load_params(&model)?;
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                ..TrainConfig::classifier(seed)
            };
            let report = finetune_frozen(&params, freeze_until, &ds, &cfg)?;
            print_eval(&ds, &report.params)?;
            save_params(&report.params, &out)?;
        }
        Command::Embed { model, data, layer, split, out } => {
            let ds = data.load()?;
            let params: ModelParams<f32> = load_params(&model)?;
            let prov = format!("{} seed={} model={}", ds.protocol, ds.seed, model.display());
            let batch = extract_representation(&params, &samples_for(&ds, split), layer, &prov)?;
            write_embeddings(&batch, &out)?;
            println!("wrote {} rows of width {} to {}", batch.len(), batch.dim(), out.display());
        }
        Command::Score { test, train, scorer, aggregation, zscore, out } => {
            let read_all = |paths: &[PathBuf]| paths.iter().map(|p| read_embeddings(p)).collect::<osrlab::Result<Vec<_>>>();
            let test = read_all(&test)?;
            let train = read_all(&train)?;
            let scores = aggregate_with(&train, &test, aggregation, scorer, zscore)?;
            let labels = test[0].labels();
            if let Some(out) = out {
                let text: String = labels
                    .iter()
                    .zip(&scores.scores)
                    .map(|(l, s)| format!("{l} {s:e}\n"))
                    .collect();
                std::fs::write(&out, text).map_err(|e| osrlab::Error::Io { path: out.clone(), source: e })?;
            }
            let (inl, outl): (Vec<_>, Vec<_>) = labels.iter().zip(&scores.scores).partition(|(l, _)| **l >= 0);
            if !inl.is_empty() && !outl.is_empty() {
                let a = auroc(
                    &inl.iter().map(|p| *p.1).collect::<Vec<_>>(),
                    &outl.iter().map(|p| *p.1).collect::<Vec<_>>(),
                )?;
                println!("auroc_{scorer} {aggregation} {a:.6}");
            }
        }
        Command::Eval { model, data } => {
            let ds = data.load()?;
            let params: ModelParams<f32> = load_params(&model)?;
            print_eval(&ds, &params)?;
        }
        Command::Openness { known, unknown } => {
            println!("{:.4}%", 100.0 * openness(known, unknown)?);
        }
        Command::Simulate(args) => {
            let cfg = args.config(ExperimentKind::Simulate)?;
            let (curves, files) = harness::run_simulate(&cfg)?;
            println!("wrote {} files to {}", files.len(), cfg.out_dir.join("simulate").display());
            let checks = check_simulation(&curves);
            for c in &checks {
                println!("{c}");
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::RunE1e2(args) => {
            let cfg = args.config(ExperimentKind::E1e2)?;
            let table = harness::run_e1e2(&cfg)?;
            return Ok(report(&table, &check_e1e2(&table)));
        }
        Command::RunFinetune(args) => {
            let cfg = args.config(ExperimentKind::Finetune)?;
            let table = harness::run_finetune(&cfg)?;
            return Ok(report(&table, &check_finetune(&table)));
        }
        Command::RunEnsemble(args) => {
            let cfg = args.config(ExperimentKind::Ensemble)?;
            let table = harness::run_ensemble(&cfg)?;
            let metric = format!("auroc_{}", cfg.scorer);
            let checks = check_ensemble(&table, &cfg.temperatures, &metric, cfg.aggregation.name());
            return Ok(report(&table, &checks));
        }
        Command::ScoreExternal(args) => {
            let cfg = args.config(ExperimentKind::ScoreExternal)?;
            let table = harness::run_score_external(&cfg)?;
            return Ok(report(&table, &[]));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
