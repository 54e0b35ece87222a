//! Experiment configuration and the end-to-end training run behind the
//! `spikefed` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;

use spikefed::codec::RngStream;
use spikefed::data::{
    load_cifar_split, synth_with, write_metrics_csv, CifarVariant, Dataset, MetricsRow,
    PartitionScheme, PartitionSpec, SynthConfig,
};
use spikefed::energy::LayerEnergy;
use spikefed::neuro::{LifConfig, Regime};
use spikefed::vfl::{
    EpochReport, EvalReport, Execution, FederatedData, Federation, ProtocolRegistry, TrainConfig,
};
use spikefed::zoo::{BuildOptions, PresetRegistry, TopologySpec};

pub const DATA_ENV: &str = "SPIKEFED_DATA";

/// Every setting is optional so that flags, the config file and preset
/// defaults can be layered.
#[derive(Parser, Debug, Default, Clone)]
#[command(
    name = "spikefed",
    version,
    about = "Train spiking networks across vertically partitioned clients"
)]
pub struct Args {
    /// cifar10, cifar100 or synth.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory holding the extracted CIFAR binary files.
    #[arg(long)]
    pub data_path: Option<PathBuf>,
    /// Preset name: vgg-mini, res-mini, vgg9 or resnet18.
    #[arg(long)]
    pub model: Option<String>,
    /// Comma-separated layer list overriding the preset's layers.
    #[arg(long)]
    pub topology: Option<String>,
    /// split or no-split.
    #[arg(long)]
    pub mode: Option<String>,
    /// snn or ann.
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Simulation time steps.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Client (bottom/local model) learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Server (top model) learning rate.
    #[arg(long)]
    pub top_lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Membrane leak factor.
    #[arg(long)]
    pub leak: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metrics CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat `key=value` file using the flag names as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// vertical-strips, left-right-halves or quadrants.
    #[arg(long)]
    pub partition: Option<String>,
    /// Cut position for split mode (conv/pool/linear count 1, residual blocks 2).
    #[arg(long)]
    pub cut: Option<usize>,
    /// sequential or parallel client execution.
    #[arg(long)]
    pub exec: Option<String>,
    #[arg(long)]
    pub synth_samples: Option<usize>,
    #[arg(long)]
    pub synth_test_samples: Option<usize>,
    #[arg(long)]
    pub synth_classes: Option<usize>,
    /// Side length of synthetic images.
    #[arg(long)]
    pub synth_size: Option<usize>,
    #[arg(long)]
    pub synth_noise: Option<f32>,
}

impl Args {
    /// Fills every unset field from `lower`.
    fn or(self, lower: Args) -> Args {
        macro_rules! layer {
            ($($f:ident),*) => { Args { $($f: self.$f.or(lower.$f)),* } };
        }
        layer!(
            dataset,
            data_path,
            model,
            topology,
            mode,
            activation,
            k,
            t,
            epochs,
            lr,
            top_lr,
            batch,
            momentum,
            weight_decay,
            leak,
            seed,
            out,
            config,
            partition,
            cut,
            exec,
            synth_samples,
            synth_test_samples,
            synth_classes,
            synth_size,
            synth_noise
        )
    }
}

/// Parses a flat `key=value` file into [`Args`]. Blank lines and `#`
/// comments are skipped; keys are flag names with `-` or `_`.
pub fn parse_config_file(text: &str) -> Result<Args> {
    let mut argv = vec!["spikefed".to_string()];
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("config line {}: expected key=value", n + 1))?;
        let key = key.trim().replace('_', "-");
        if key == "config" {
            bail!(
                "config line {}: a config file cannot include another",
                n + 1
            );
        }
        argv.push(format!("--{key}"));
        argv.push(value.trim().to_string());
    }
    Args::try_parse_from(argv).context("invalid config file")
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Cifar {
        variant: CifarVariant,
        dir: PathBuf,
    },
    Synth {
        train: SynthConfig,
        test_samples: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub model: String,
    pub topology: Option<String>,
    /// Protocol name: `split` or `no-split`.
    pub mode: String,
    pub k: usize,
    pub partition: PartitionScheme,
    pub cut: Option<usize>,
    pub leak: f64,
    pub train: TrainConfig,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn regime(&self) -> Regime {
        self.train.regime
    }

    pub fn build_options(&self) -> BuildOptions {
        let base = match self.train.regime {
            Regime::Spiking => BuildOptions::spiking(self.train.steps),
            Regime::Ann => BuildOptions::ann(),
        };
        BuildOptions {
            lif: LifConfig {
                leak: self.leak,
                ..base.lif
            },
            ..base
        }
    }
}

/// Resolves flags over an optional config file over preset defaults.
/// `argv` includes the program name.
pub fn parse_config<I, S>(argv: I) -> Result<ExperimentConfig>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let flags = Args::try_parse_from(argv)?;
    resolve(flags)
}

/// [`parse_config`] on already-parsed flags.
pub fn resolve(flags: Args) -> Result<ExperimentConfig> {
    let file = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            parse_config_file(&text)?
        }
        None => Args::default(),
    };
    let a = flags.or(file);

    let regime = match a.activation.as_deref().unwrap_or("snn") {
        "snn" => Regime::Spiking,
        "ann" => Regime::Ann,
        other => bail!("activation: expected snn or ann, got `{other}`"),
    };
    let presets = PresetRegistry::default();
    let model = a.model.unwrap_or_else(|| "vgg-mini".into());
    let preset = presets.get(&model).context("model")?;
    let mode = a.mode.unwrap_or_else(|| "no-split".into());
    ProtocolRegistry::default().get(&mode).context("mode")?;

    let steps = match regime {
        Regime::Spiking => a.t.unwrap_or(32),
        Regime::Ann => 1,
    };
    let lr = a.lr.unwrap_or_else(|| preset.default_lr(regime));
    let default_wd = match regime {
        Regime::Spiking => 1e-4,
        Regime::Ann => 5e-4,
    };
    let execution = match a.exec.as_deref().unwrap_or("parallel") {
        "parallel" => Execution::Parallel,
        "sequential" => Execution::Sequential,
        other => bail!("exec: expected sequential or parallel, got `{other}`"),
    };
    let train = TrainConfig {
        epochs: a.epochs.unwrap_or(5),
        steps,
        bottom_lr: lr,
        top_lr: a.top_lr.unwrap_or(lr),
        batch_size: a.batch.unwrap_or(32),
        momentum: a.momentum.unwrap_or(0.95),
        weight_decay: a.weight_decay.unwrap_or(default_wd),
        regime,
        seed: a.seed.unwrap_or(0),
        execution,
    };
    train.validate().context("invalid training configuration")?;
    for (field, v) in [("lr", train.bottom_lr), ("top-lr", train.top_lr)] {
        if v <= 0.0 {
            bail!("{field}: learning rates must be positive");
        }
    }
    let leak = a.leak.unwrap_or(0.99);
    LifConfig::new(leak, 1.0, steps).context("leak")?;

    let k = a.k.unwrap_or(2);
    if k == 0 {
        bail!("k: at least one client is required");
    }
    let partition = match a.partition.as_deref() {
        Some(s) => s.parse().context("partition")?,
        None => PartitionScheme::VerticalStrips,
    };

    let dataset = match a.dataset.as_deref().unwrap_or("synth") {
        "synth" => {
            let defaults = SynthConfig::default();
            let size = a.synth_size.unwrap_or(defaults.height);
            let train = SynthConfig {
                samples: a.synth_samples.unwrap_or(defaults.samples),
                classes: a.synth_classes.unwrap_or(defaults.classes),
                height: size,
                width: size,
                noise: a.synth_noise.unwrap_or(defaults.noise),
                seed: train.seed,
            };
            DatasetSource::Synth {
                train,
                test_samples: a.synth_test_samples.unwrap_or(train.samples / 4),
            }
        }
        name @ ("cifar10" | "cifar100") => {
            let variant = if name == "cifar10" {
                CifarVariant::Cifar10
            } else {
                CifarVariant::Cifar100
            };
            let dir = a
                .data_path
                .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("data"));
            DatasetSource::Cifar { variant, dir }
        }
        other => bail!("dataset: expected cifar10, cifar100 or synth, got `{other}`"),
    };

    Ok(ExperimentConfig {
        dataset,
        model,
        topology: a.topology,
        mode,
        k,
        partition,
        cut: a.cut,
        leak,
        train,
        out: a.out.unwrap_or_else(|| PathBuf::from("metrics.csv")),
    })
}

/// Mean over epochs for "Average", max for "Best", last epoch for "Final".
/// Precision, recall and F1 are the final epoch's macro averages.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub epochs: usize,
    pub average_training_accuracy: f64,
    pub best_test_accuracy: f64,
    pub final_test_accuracy: f64,
    pub average_test_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_score: f64,
}

impl RunSummary {
    pub fn from_history(train: &[EpochReport], test: &[EvalReport]) -> Result<Self> {
        let (Some(last), false) = (test.last(), train.is_empty()) else {
            bail!("no epochs were run");
        };
        let mean = |v: &mut dyn Iterator<Item = f64>, n: usize| v.sum::<f64>() / n as f64;
        Ok(Self {
            epochs: test.len(),
            average_training_accuracy: mean(
                &mut train.iter().map(|r| r.metrics.accuracy),
                train.len(),
            ),
            best_test_accuracy: test
                .iter()
                .map(|r| r.metrics.accuracy)
                .fold(f64::MIN, f64::max),
            final_test_accuracy: last.metrics.accuracy,
            average_test_accuracy: mean(&mut test.iter().map(|r| r.metrics.accuracy), test.len()),
            precision: last.metrics.macro_precision,
            recall: last.metrics.macro_recall,
            f1_score: last.metrics.macro_f1,
        })
    }

    pub fn line(&self) -> String {
        format!(
            "Average Training Accuracy: {:.2} | Best Test Accuracy: {:.2} | Final Test Accuracy: {:.2} | Average Test Accuracy: {:.2} | Precision: {:.2} | Recall: {:.2} | F1 Score: {:.2}",
            100.0 * self.average_training_accuracy,
            100.0 * self.best_test_accuracy,
            100.0 * self.final_test_accuracy,
            100.0 * self.average_test_accuracy,
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1_score,
        )
    }
}

/// Train and test splits for the configured source.
pub fn load_datasets(source: &DatasetSource) -> Result<(Dataset, Dataset)> {
    match source {
        DatasetSource::Synth {
            train,
            test_samples,
        } => {
            let test = SynthConfig {
                samples: *test_samples,
                seed: RngStream::new(train.seed).derive(0x7e57).seed(),
                ..*train
            };
            Ok((synth_with(train)?, synth_with(&test)?))
        }
        DatasetSource::Cifar { variant, dir } => {
            let load = |train| {
                load_cifar_split(dir, *variant, train)
                    .with_context(|| format!("loading CIFAR data from {}", dir.display()))
            };
            Ok((load(true)?, load(false)?))
        }
    }
}

fn topology(cfg: &ExperimentConfig, ds: &Dataset) -> Result<TopologySpec> {
    let preset = PresetRegistry::default().get(&cfg.model)?;
    let input = ds.image_shape();
    Ok(match &cfg.topology {
        Some(layers) => TopologySpec::parse(preset.name(), input, layers)?,
        None => preset.topology(input, ds.classes())?,
    })
}

fn rows_for(
    epoch: usize,
    split: &str,
    loss: f64,
    m: &spikefed::vfl::MetricsReport,
    rows: &[LayerEnergy],
    total: LayerEnergy,
) -> Vec<MetricsRow> {
    let mut out = Vec::with_capacity(rows.len() + 1);
    out.push(MetricsRow {
        accuracy: Some(m.accuracy),
        macro_precision: Some(m.macro_precision),
        macro_recall: Some(m.macro_recall),
        macro_f1: Some(m.macro_f1),
        loss: Some(loss),
        ..MetricsRow::from_energy(epoch, split, &total)
    });
    out.extend(
        rows.iter()
            .map(|r| MetricsRow::from_energy(epoch, split, r)),
    );
    out
}

/// CSV rows for one epoch: a whole-network line then one line per synaptic
/// layer, for the training pass and then the test pass.
pub fn epoch_rows(train: &EpochReport, test: &EvalReport) -> Vec<MetricsRow> {
    let e = train.epoch + 1;
    let mut rows = rows_for(
        e,
        "train",
        train.loss,
        &train.metrics,
        &train.ledger.rows,
        train.ledger.total(),
    );
    rows.extend(rows_for(
        e,
        "test",
        test.loss,
        &test.metrics,
        &test.ledger.rows,
        test.ledger.total(),
    ));
    rows
}

/// Runs the configured experiment, writing the metrics CSV to `cfg.out`.
/// Per-epoch progress goes to `progress`.
pub fn run(cfg: &ExperimentConfig, progress: &mut dyn std::io::Write) -> Result<RunSummary> {
    let (train_ds, test_ds) = load_datasets(&cfg.dataset)?;
    let spec = topology(cfg, &train_ds)?;
    let [_, h, w] = train_ds.image_shape();
    let partition = PartitionSpec::new(cfg.partition, cfg.k, h, w)?;
    let mut fed = Federation::assemble(
        &ProtocolRegistry::default(),
        &cfg.mode,
        &spec,
        &partition,
        &cfg.build_options(),
        cfg.cut,
        cfg.train,
    )?;
    let train_data = FederatedData::new(&train_ds, &partition)?;
    let test_data = FederatedData::new(&test_ds, &partition)?;

    let mut rows = Vec::new();
    let (mut train_hist, mut test_hist) = (Vec::new(), Vec::new());
    for epoch in 0..cfg.train.epochs {
        let tr = fed.train_epoch(&train_data, epoch)?;
        let te = fed.evaluate(&test_data)?;
        writeln!(
            progress,
            "epoch {}: loss {:.4}, train accuracy {:.4}, test accuracy {:.4}",
            epoch + 1,
            tr.loss,
            tr.metrics.accuracy,
            te.metrics.accuracy
        )?;
        rows.extend(epoch_rows(&tr, &te));
        train_hist.push(tr);
        test_hist.push(te);
    }
    write_csv(&rows, &cfg.out)?;
    RunSummary::from_history(&train_hist, &test_hist)
}

fn write_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_metrics_csv(rows, path).with_context(|| format!("writing {}", path.display()))
}
