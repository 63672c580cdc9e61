use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockkey::analysis::{self, Direction};
use blockkey::attacks::{self, EstimateOptions, TransferMode};
use blockkey::dataset::{self, generate_synthetic, Dataset};
use blockkey::experiment::{self, ExperimentConfig};
use blockkey::keyset::DEFAULT_PASSWORD;
use blockkey::learner::{self, evaluate};
use blockkey::{key_space, pnm, Classifier, Error, KeySet, TrainConfig, TransformPipeline, TransformSet};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "blockkey", version, about = "Key-protected image classifiers at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key set and write it as JSON.
    Keygen {
        #[arg(short = 'M', long = "M", alias = "block-size")]
        block_size: usize,
        /// Comma- or plus-separated list, e.g. shf,np,ffx.
        #[arg(long)]
        transforms: TransformSet,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value = DEFAULT_PASSWORD)]
        password: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print exact key-space sizes.
    Keyspace {
        /// Single block size; omit for the 1, 2, 4, 8 table.
        #[arg(short = 'M', long = "M", alias = "block-size")]
        block_size: Option<usize>,
        /// Single transform set; omit for all six combinations.
        #[arg(long)]
        transforms: Option<TransformSet>,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        /// Print CSV instead of JSON.
        #[arg(long)]
        csv: bool,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Transform every image of a manifest into a mirror directory tree.
    Transform {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train a classifier, protected when a key is given.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 1)]
        model_seed: u64,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Accuracy of a model, optionally also under random incorrect keys.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        key: Option<PathBuf>,
        /// Number of random incorrect keys to evaluate as well.
        #[arg(long, default_value_t = 0)]
        incorrect: u64,
        #[arg(long, default_value_t = 1000)]
        incorrect_seed: u64,
    },
    /// Adversary procedures.
    Attack {
        #[command(subcommand)]
        command: AttackCommand,
    },
    /// Correlation and sensitivity instruments.
    Analyze {
        #[command(subcommand)]
        command: AnalyzeCommand,
    },
    /// Run the whole experiment and write one JSON report.
    Repro {
        #[arg(short, long)]
        out: PathBuf,
        /// Flat JSON experiment config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seconds-scale run with tiny images.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write the synthetic dataset as train.csv / test.csv plus images.
    Gen {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 800)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
}

#[derive(Subcommand)]
enum AttackCommand {
    /// Greedy pairwise-swap key estimation.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        transforms: TransformSet,
        #[arg(short = 'M', long = "M", alias = "block-size")]
        block_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probe images drawn from the manifest.
        #[arg(long, default_value_t = 128)]
        probe_size: usize,
        #[arg(long, default_value_t = 1)]
        passes: usize,
        #[arg(long, default_value = DEFAULT_PASSWORD)]
        password: String,
        /// Evaluate the estimated key on this manifest as well.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out_key: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fine-tune a stolen model under a forged key.
    Forge {
        #[arg(long)]
        model: PathBuf,
        /// The adversary's data.
        #[arg(long)]
        subset: PathBuf,
        /// Use only this many items of the subset manifest.
        #[arg(long)]
        subset_size: Option<usize>,
        #[arg(long)]
        test: PathBuf,
        /// Any key of the right shape; the forged key is redrawn from it.
        #[arg(long)]
        key: PathBuf,
        #[arg(long, default_value_t = 500)]
        forged_seed: u64,
        #[arg(long)]
        out_model: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Transfer a stolen model to a new dataset without any key.
    Transfer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train_manifest: PathBuf,
        #[arg(long)]
        test_manifest: PathBuf,
        #[arg(long, default_value = "full")]
        mode: TransferMode,
        /// Also train a plain model from scratch for reference.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out_model: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Adjacent-pixel correlation of one image.
    Corr {
        #[arg(long)]
        image: PathBuf,
        /// Transform the image with this key first.
        #[arg(long)]
        key: Option<PathBuf>,
        /// One direction; omit for all three.
        #[arg(long)]
        direction: Option<Direction>,
        #[arg(long, default_value_t = analysis::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the sampled pairs here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Accuracy drop under single-position key changes.
    Sens {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            momentum: self.momentum.unwrap_or(d.momentum),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

type Result<T> = blockkey::Result<T>;

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON value"));
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn load_pipeline(path: Option<&PathBuf>) -> Result<Option<TransformPipeline>> {
    path.map(|p| KeySet::load(p).map(TransformPipeline::new)).transpose()
}

fn keyspace(block_size: Option<usize>, transforms: Option<TransformSet>, channels: usize, csv: bool) -> Result<()> {
    let sizes = block_size.map_or_else(|| vec![1, 2, 4, 8], |m| vec![m]);
    let sets = transforms.map_or_else(|| TransformSet::grid().to_vec(), |t| vec![t]);
    let configs: Vec<(usize, TransformSet)> =
        sizes.iter().flat_map(|&m| sets.iter().map(move |&t| (m, t))).collect();
    let rows = analysis::keyspace_report(&configs, channels);
    if csv {
        let mut out = Vec::new();
        analysis::write_keyspace_csv(&rows, &mut out)?;
        print!("{}", String::from_utf8_lossy(&out));
    } else {
        print(&serde_json::to_value(&rows)?);
    }
    Ok(())
}

fn dataset_gen(
    out: &Path,
    classes: usize,
    per_class: usize,
    size: usize,
    channels: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<()> {
    let data = generate_synthetic(classes, per_class, (channels, size, size), seed)?;
    let (train, test) = data.split(train_fraction, seed.wrapping_add(1))?;
    let train_path = train.save(out, "train.csv")?;
    let test_path = test.save(out, "test.csv")?;
    print(&json!({
        "train": train_path, "test": test_path,
        "train_items": train.len(), "test_items": test.len(),
    }));
    Ok(())
}

fn transform(key: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let pipeline = TransformPipeline::new(KeySet::load(key)?);
    let entries = dataset::read_manifest(manifest)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    for e in &entries {
        let image = pnm::read_image(root.join(&e.relative_path))?;
        let target = out.join(&e.relative_path);
        if let Some(dir) = target.parent() {
            std::fs::create_dir_all(dir).map_err(|err| Error::file(dir, err))?;
        }
        pnm::write_image(&pipeline.transform(&image)?, &target)?;
    }
    let name = manifest.file_name().unwrap_or("manifest.csv".as_ref());
    let copy = out.join(name);
    dataset::write_manifest(&copy, &entries)?;
    print(&json!({ "manifest": copy, "images": entries.len() }));
    Ok(())
}

fn train(
    manifest: &Path,
    key: Option<&PathBuf>,
    out: &Path,
    classes: Option<usize>,
    model_seed: u64,
    config: &TrainConfig,
) -> Result<()> {
    let data = Dataset::load_manifest(manifest, classes)?;
    let pipeline = load_pipeline(key)?;
    let fresh = Classifier::new(data.dims(), data.classes(), model_seed)?;
    let (model, history) = learner::train(fresh, &data, pipeline.as_ref(), config)?;
    let train_accuracy = evaluate(&model, &data, pipeline.as_ref())?;
    model.save(out)?;
    print(&json!({
        "model": out,
        "epoch_loss": history.epoch_loss,
        "train_accuracy": train_accuracy,
    }));
    Ok(())
}

fn eval(model: &Path, manifest: &Path, key: Option<&PathBuf>, incorrect: u64, seed: u64) -> Result<()> {
    let model = Classifier::load(model)?;
    let data = Dataset::load_manifest(manifest, Some(model.classes()))?;
    let pipeline = load_pipeline(key)?;
    let accuracy = evaluate(&model, &data, pipeline.as_ref())?;
    let mut result = json!({ "accuracy": accuracy, "items": data.len() });
    if incorrect > 0 {
        let p = pipeline
            .as_ref()
            .ok_or_else(|| Error::Config("--incorrect needs --key".into()))?;
        let accs = (seed..seed + incorrect)
            .map(|s| evaluate(&model, &data, Some(&p.rekey(p.keyset().random_incorrect(s)))))
            .collect::<Result<Vec<_>>>()?;
        result["incorrect_mean"] = json!(accs.iter().sum::<f64>() / accs.len() as f64);
        result["incorrect"] = json!(accs);
    }
    print(&result);
    Ok(())
}

fn finish_report(report: &attacks::AttackReport, path: Option<&PathBuf>) -> Result<()> {
    if let Some(p) = path {
        write_text(p, &report.to_json()?)?;
    }
    let mut v = serde_json::to_value(report)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("trace");
    }
    print(&v);
    Ok(())
}

fn attack(command: &AttackCommand) -> Result<()> {
    match command {
        AttackCommand::Estimate {
            model,
            probe,
            transforms,
            block_size,
            seed,
            probe_size,
            passes,
            password,
            test,
            out_key,
            report,
        } => {
            let model = Classifier::load(model)?;
            let all = Dataset::load_manifest(probe, Some(model.classes()))?;
            let probe = all.subset((*probe_size).min(all.len()), *seed)?;
            let options = EstimateOptions { passes: *passes, password: password.clone() };
            let c = model.input_dims().0;
            let (key, mut rep) =
                attacks::estimate_key(&model, &probe, *transforms, *block_size, c, *seed, &options)?;
            if let Some(t) = test {
                let test = Dataset::load_manifest(t, Some(model.classes()))?;
                rep.test_accuracy = Some(evaluate(&model, &test, Some(&TransformPipeline::new(key.clone())))?);
            }
            if let Some(p) = out_key {
                key.save(p)?;
                rep.artifact = p.display().to_string();
            }
            finish_report(&rep, report.as_ref())
        }
        AttackCommand::Forge {
            model,
            subset,
            subset_size,
            test,
            key,
            forged_seed,
            out_model,
            report,
            train,
        } => {
            let model = Classifier::load(model)?;
            let mut subset = Dataset::load_manifest(subset, Some(model.classes()))?;
            if let Some(n) = subset_size {
                subset = subset.subset(*n, *forged_seed)?;
            }
            let test = Dataset::load_manifest(test, Some(model.classes()))?;
            let forged = KeySet::load(key)?.random_incorrect(*forged_seed);
            let (tuned, mut rep) =
                attacks::finetune_forged_key(&model, &subset, &test, &forged, &train.config())?;
            if let Some(p) = out_model {
                tuned.save(p)?;
                rep.artifact = p.display().to_string();
            }
            finish_report(&rep, report.as_ref())
        }
        AttackCommand::Transfer {
            model,
            train_manifest,
            test_manifest,
            mode,
            baseline,
            out_model,
            report,
            train,
        } => {
            let model = Classifier::load(model)?;
            let new_train = Dataset::load_manifest(train_manifest, None)?;
            let new_test = Dataset::load_manifest(test_manifest, Some(new_train.classes()))?;
            let config = train.config();
            let base = if *baseline {
                Some(attacks::scratch_baseline(&new_train, &new_test, &config, config.seed)?)
            } else {
                None
            };
            let (tuned, mut rep) =
                attacks::finetune_new_dataset(&model, &new_train, &new_test, *mode, &config, base)?;
            if let Some(p) = out_model {
                tuned.save(p)?;
                rep.artifact = p.display().to_string();
            }
            finish_report(&rep, report.as_ref())
        }
    }
}

fn analyze(command: &AnalyzeCommand) -> Result<()> {
    match command {
        AnalyzeCommand::Corr { image, key, direction, samples, seed, csv } => {
            let mut image = pnm::read_image(image)?;
            if let Some(p) = load_pipeline(key.as_ref())? {
                image = p.transform(&image)?;
            }
            let dirs = direction.map_or_else(|| Direction::ALL.to_vec(), |d| vec![d]);
            let results = dirs
                .iter()
                .map(|&d| analysis::pixel_correlation(&image, d, *samples, *seed))
                .collect::<Result<Vec<_>>>()?;
            if let Some(path) = csv {
                analysis::write_csv_file(path, |buf| analysis::write_pairs_csv(&results, buf))?;
            }
            let out: Vec<Value> = results
                .iter()
                .map(|r| json!({ "direction": r.direction, "pearson_r": r.pearson_r, "pairs": r.pairs.len() }))
                .collect();
            print(&Value::Array(out));
            Ok(())
        }
        AnalyzeCommand::Sens { model, manifest, key, seed, csv } => {
            let model = Classifier::load(model)?;
            let data = Dataset::load_manifest(manifest, Some(model.classes()))?;
            let key = KeySet::load(key)?;
            let r = analysis::key_sensitivity(&model, &data, &key, *seed)?;
            if let Some(path) = csv {
                let row = std::slice::from_ref(&r);
                analysis::write_csv_file(path, |buf| analysis::write_sensitivity_csv(row, buf))?;
            }
            print(&serde_json::to_value(&r)?);
            Ok(())
        }
    }
}

fn repro(out: &Path, config: Option<&PathBuf>, quick: bool) -> Result<()> {
    let base = if quick { ExperimentConfig::quick() } else { ExperimentConfig::default() };
    let config = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
            let overrides: Value = serde_json::from_str(&text)?;
            let mut merged = serde_json::to_value(&base)?;
            match (merged.as_object_mut(), overrides.as_object()) {
                (Some(m), Some(o)) => m.extend(o.clone()),
                _ => return Err(Error::Config("config file must hold a JSON object".into())),
            }
            serde_json::from_value(merged)
                .map_err(|e| Error::Config(format!("invalid experiment config: {e}")))?
        }
        None => base,
    };
    let report = experiment::run(&config, &mut |line| eprintln!("{line}"))?;
    write_text(out, &report.to_json()?)?;
    print(&json!({ "report": out, "baseline_accuracy": report.baseline_accuracy }));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Keygen { block_size, transforms, seed, channels, password, out } => {
            let key = KeySet::generate_with_password(block_size, channels, transforms, seed, password)?;
            key.save(&out)?;
            let space = key_space(block_size, channels, transforms);
            print(&json!({
                "key": out,
                "transforms": transforms,
                "M": block_size,
                "log2_key_space": blockkey::keyset::log2_big(&space),
            }));
            Ok(())
        }
        Command::Keyspace { block_size, transforms, channels, csv } => {
            keyspace(block_size, transforms, channels, csv)
        }
        Command::Dataset {
            command: DatasetCommand::Gen { out, classes, per_class, size, channels, seed, train_fraction },
        } => dataset_gen(&out, classes, per_class, size, channels, seed, train_fraction),
        Command::Transform { key, manifest, out } => transform(&key, &manifest, &out),
        Command::Train { manifest, key, out, classes, model_seed, train: t } => {
            train(&manifest, key.as_ref(), &out, classes, model_seed, &t.config())
        }
        Command::Eval { model, manifest, key, incorrect, incorrect_seed } => {
            eval(&model, &manifest, key.as_ref(), incorrect, incorrect_seed)
        }
        Command::Attack { command } => attack(&command),
        Command::Analyze { command } => analyze(&command),
        Command::Repro { out, config, quick } => repro(&out, config.as_ref(), quick),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
