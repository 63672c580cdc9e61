//! The end-to-end desk-scale experiment behind `repro`: data, protected and
//! plain models, incorrect-key and plain evaluation, attacks and analyses,
//! collected into one deterministic report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{self, Direction, KeyspaceRow, SensitivityResult};
use crate::attacks::{self, AttackReport, EstimateOptions, TransferMode};
use crate::dataset::{generate_synthetic_styled, Dataset, SyntheticStyle};
use crate::error::{Error, Result};
use crate::keyset::{KeySet, Transform, TransformSet};
use crate::learner::{self, evaluate, Classifier, TrainConfig};
use crate::transforms::TransformPipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data_seed: u64,
    pub classes: usize,
    pub dims: (usize, usize, usize),
    pub per_class: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub style: SyntheticStyle,
    pub key_seed: u64,
    pub model_seed: u64,
    pub train: TrainConfig,
    /// Block sizes of the full transform-combination table.
    pub block_sizes: Vec<usize>,
    /// Extra rows for the block-size trend: these sizes for `trend_transforms`.
    pub trend_block_sizes: Vec<usize>,
    pub trend_transforms: Vec<TransformSet>,
    pub incorrect_keys: usize,
    pub incorrect_seed_base: u64,
    /// Block size the attacks and analyses run at.
    pub attack_block_size: usize,
    pub probe_size: usize,
    pub estimate_transforms: Vec<TransformSet>,
    pub forge_transforms: Vec<TransformSet>,
    pub forge_sizes: Vec<usize>,
    pub forge_seed: u64,
    pub forge_train: TrainConfig,
    pub transfer_transforms: Vec<TransformSet>,
    pub transfer_classes: usize,
    pub transfer_per_class: usize,
    pub transfer_train: TrainConfig,
    pub sensitivity_samples: usize,
    pub correlation_samples: usize,
}

fn sets(names: &[&str]) -> Vec<TransformSet> {
    names.iter().map(|n| n.parse().expect("valid set")).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig {
            epochs: 8,
            learning_rate: 0.01,
            seed: 3,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            data_seed: 7,
            classes: 4,
            dims: (3, 32, 32),
            per_class: 800,
            train_fraction: 0.8,
            split_seed: 1,
            style: SyntheticStyle::default(),
            key_seed: 3,
            model_seed: 1,
            train,
            block_sizes: vec![2, 4],
            trend_block_sizes: vec![8],
            trend_transforms: sets(&["SHF", "SHF+NP+FFX"]),
            incorrect_keys: 100,
            incorrect_seed_base: 1000,
            attack_block_size: 4,
            probe_size: 128,
            estimate_transforms: sets(&["SHF", "NP", "FFX"]),
            forge_transforms: sets(&["SHF", "NP", "FFX"]),
            forge_sizes: vec![50, 200, 800],
            forge_seed: 500,
            forge_train: TrainConfig { epochs: 5, ..train },
            transfer_transforms: sets(&["SHF", "NP", "FFX"]),
            transfer_classes: 3,
            transfer_per_class: 300,
            transfer_train: TrainConfig { epochs: 5, ..train },
            sensitivity_samples: 200,
            correlation_samples: analysis::DEFAULT_SAMPLES,
        }
    }
}

impl ExperimentConfig {
    /// A seconds-scale variant with every stage still exercised.
    pub fn quick() -> Self {
        let train = TrainConfig {
            epochs: 1,
            batch_size: 16,
            learning_rate: 0.01,
            seed: 3,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            dims: (3, 8, 8),
            per_class: 10,
            train,
            block_sizes: vec![2, 4],
            trend_block_sizes: vec![],
            incorrect_keys: 3,
            probe_size: 8,
            attack_block_size: 2,
            estimate_transforms: sets(&["SHF", "FFX"]),
            forge_transforms: sets(&["SHF"]),
            forge_sizes: vec![4, 8],
            forge_train: train,
            transfer_transforms: sets(&["NP"]),
            transfer_per_class: 6,
            transfer_train: train,
            sensitivity_samples: 8,
            correlation_samples: 64,
            ..ExperimentConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let (_, h, w) = self.dims;
        let sizes = self.block_sizes.iter().chain(&self.trend_block_sizes);
        for &m in sizes.chain(std::iter::once(&self.attack_block_size)) {
            if m == 0 || h % m != 0 || w % m != 0 {
                return Err(Error::Config(format!(
                    "block size {m} does not divide the {h}x{w} images"
                )));
            }
        }
        if self.incorrect_keys == 0 {
            return Err(Error::Config("incorrect_keys must be >= 1".into()));
        }
        Ok(())
    }
}

/// Correct-key, incorrect-key and plain-image accuracy of one protected model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionRow {
    pub transforms: TransformSet,
    pub block_size: usize,
    pub correct: f64,
    pub incorrect_mean: f64,
    pub incorrect_min: f64,
    pub incorrect_max: f64,
    pub plain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    /// `"plain"` or the source model's transform set.
    pub source: String,
    pub report: AttackReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    /// `"plain"` or the transform set applied to the test image.
    pub image: String,
    pub direction: Direction,
    pub pearson_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub config: ExperimentConfig,
    pub baseline_accuracy: f64,
    pub protection: Vec<ProtectionRow>,
    pub key_estimation: Vec<AttackReport>,
    pub forged_key: Vec<AttackReport>,
    pub transfer: Vec<TransferRow>,
    pub transfer_scratch_accuracy: f64,
    pub correlation: Vec<CorrelationRow>,
    pub sensitivity: Vec<SensitivityResult>,
    pub keyspace: Vec<KeyspaceRow>,
}

impl ReproReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn row(&self, transforms: TransformSet, block_size: usize) -> Option<&ProtectionRow> {
        self.protection
            .iter()
            .find(|r| r.transforms == transforms && r.block_size == block_size)
    }
}

/// The synthetic train/test split described by `config`.
pub fn prepare_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let data = generate_synthetic_styled(
        config.classes,
        config.per_class,
        config.dims,
        config.data_seed,
        config.style,
    )?;
    data.split(config.train_fraction, config.split_seed)
}

/// A model trained under a fresh key of the given shape.
pub fn train_protected(
    config: &ExperimentConfig,
    train: &Dataset,
    transforms: TransformSet,
    block_size: usize,
) -> Result<(Classifier, KeySet, f64)> {
    let key = KeySet::generate(block_size, config.dims.0, transforms, config.key_seed)?;
    let pipeline = TransformPipeline::new(key.clone());
    let fresh = Classifier::new(config.dims, config.classes, config.model_seed)?;
    let (model, history) = learner::train(fresh, train, Some(&pipeline), &config.train)?;
    let loss = history.epoch_loss.last().copied().unwrap_or(f64::NAN);
    Ok((model, key, loss))
}

/// Accuracy under the correct key, `n` random incorrect keys (seeds
/// `seed_base..seed_base+n`) and no key.
pub fn protection_row(
    model: &Classifier,
    key: &KeySet,
    test: &Dataset,
    n: usize,
    seed_base: u64,
) -> Result<ProtectionRow> {
    let correct_pipe = TransformPipeline::new(key.clone());
    let correct = evaluate(model, test, Some(&correct_pipe))?;
    let mut accs = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let p = correct_pipe.rekey(key.random_incorrect(seed_base + i));
        accs.push(evaluate(model, test, Some(&p))?);
    }
    let plain = evaluate(model, test, None)?;
    Ok(ProtectionRow {
        transforms: key.transforms(),
        block_size: key.block_size(),
        correct,
        incorrect_mean: accs.iter().sum::<f64>() / n as f64,
        incorrect_min: accs.iter().copied().fold(f64::INFINITY, f64::min),
        incorrect_max: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        plain,
        final_train_loss: None,
    })
}

struct Trained {
    model: Classifier,
    key: KeySet,
}

/// Runs every stage. `progress` receives one line per finished step.
pub fn run(config: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<ReproReport> {
    config.validate()?;
    let (train, test) = prepare_data(config)?;
    progress(&format!("data: {} train / {} test", train.len(), test.len()));

    let fresh = Classifier::new(config.dims, config.classes, config.model_seed)?;
    let (baseline, _) = learner::train(fresh, &train, None, &config.train)?;
    let baseline_accuracy = evaluate(&baseline, &test, None)?;
    progress(&format!("baseline: {baseline_accuracy:.4}"));

    let mut jobs: Vec<(TransformSet, usize)> = Vec::new();
    for &m in &config.block_sizes {
        jobs.extend(TransformSet::grid().into_iter().map(|t| (t, m)));
    }
    for &m in &config.trend_block_sizes {
        jobs.extend(config.trend_transforms.iter().map(|&t| (t, m)));
    }
    let mut trained: Vec<Trained> = Vec::new();
    let mut protection = Vec::new();
    for (set, m) in jobs {
        if protection.iter().any(|r: &ProtectionRow| r.transforms == set && r.block_size == m) {
            continue;
        }
        let (model, key, loss) = train_protected(config, &train, set, m)?;
        let mut row = protection_row(
            &model,
            &key,
            &test,
            config.incorrect_keys,
            config.incorrect_seed_base,
        )?;
        row.final_train_loss = Some(loss);
        progress(&format!(
            "{set} M={m}: correct {:.4} incorrect {:.4} plain {:.4}",
            row.correct, row.incorrect_mean, row.plain
        ));
        protection.push(row);
        trained.push(Trained { model, key });
    }
    let find = |set: TransformSet, m: usize| -> Result<&Trained> {
        trained
            .iter()
            .find(|t| t.key.transforms() == set && t.key.block_size() == m)
            .ok_or_else(|| Error::Config(format!("no {set} model at M={m} in this run")))
    };
    let am = config.attack_block_size;

    let probe = train.subset(config.probe_size.min(train.len()), config.data_seed.wrapping_add(2))?;
    let mut key_estimation = Vec::new();
    for &set in &config.estimate_transforms {
        let t = find(set, am)?;
        let (est, mut report) = attacks::estimate_key(
            &t.model,
            &probe,
            set,
            am,
            config.dims.0,
            config.key_seed.wrapping_add(1_000_003),
            &EstimateOptions::default(),
        )?;
        report.test_accuracy = Some(evaluate(&t.model, &test, Some(&TransformPipeline::new(est)))?);
        report.artifact = format!("estimated {set} key, M={am}");
        progress(&format!(
            "estimate {set}: probe {:.4} -> {:.4}, test {:.4}",
            report.starting_accuracy,
            report.final_accuracy,
            report.test_accuracy.unwrap_or(f64::NAN)
        ));
        key_estimation.push(report);
    }

    let mut forged_key = Vec::new();
    for &set in &config.forge_transforms {
        let t = find(set, am)?;
        let forged = t.key.random_incorrect(config.forge_seed);
        for &n in &config.forge_sizes {
            let subset = train.subset(n.min(train.len()), config.forge_seed)?;
            let (_, mut report) =
                attacks::finetune_forged_key(&t.model, &subset, &test, &forged, &config.forge_train)?;
            report.artifact = format!("{set} model fine-tuned under a forged key");
            progress(&format!("forge {set} |D'|={n}: {:.4}", report.final_accuracy));
            forged_key.push(report);
        }
    }

    let new_data = generate_synthetic_styled(
        config.transfer_classes,
        config.transfer_per_class,
        config.dims,
        config.data_seed.wrapping_add(100),
        config.style,
    )?;
    let (new_train, new_test) =
        new_data.split(config.train_fraction, config.data_seed.wrapping_add(101))?;
    let transfer_scratch_accuracy = attacks::scratch_baseline(
        &new_train,
        &new_test,
        &config.transfer_train,
        config.model_seed,
    )?;
    progress(&format!("transfer scratch baseline: {transfer_scratch_accuracy:.4}"));
    let mut sources: Vec<(String, &Classifier)> = vec![("plain".into(), &baseline)];
    for &set in &config.transfer_transforms {
        sources.push((set.to_string(), &find(set, am)?.model));
    }
    let mut transfer = Vec::new();
    for (name, model) in sources {
        for mode in [TransferMode::Fixed, TransferMode::Full] {
            let (_, mut report) = attacks::finetune_new_dataset(
                model,
                &new_train,
                &new_test,
                mode,
                &config.transfer_train,
                Some(transfer_scratch_accuracy),
            )?;
            report.artifact = format!("{name} source, {mode:?} transfer").to_lowercase();
            progress(&format!("transfer {name} {mode:?}: {:.4}", report.final_accuracy));
            transfer.push(TransferRow {
                source: name.clone(),
                report,
            });
        }
    }

    let image = &test.items()[0].image;
    let mut correlation = Vec::new();
    let mut images = vec![("plain".to_string(), image.clone())];
    for t in Transform::ALL {
        let set = TransformSet::new(&[t])?;
        let key = KeySet::generate(am, config.dims.0, set, config.key_seed)?;
        images.push((set.to_string(), TransformPipeline::new(key).transform(image)?));
    }
    for (name, im) in &images {
        for d in Direction::ALL {
            let r = analysis::pixel_correlation(im, d, config.correlation_samples, config.data_seed)?;
            correlation.push(CorrelationRow {
                image: name.clone(),
                direction: d,
                pearson_r: r.pearson_r,
            });
        }
    }

    let sens_data = test.subset(config.sensitivity_samples.min(test.len()), config.data_seed.wrapping_add(3))?;
    let mut sensitivity = Vec::new();
    for t in &trained {
        if t.key.block_size() < am {
            continue;
        }
        let r = analysis::key_sensitivity(&t.model, &sens_data, &t.key, config.key_seed)?;
        progress(&format!(
            "sensitivity {} M={}: {:.4}",
            r.transforms, r.block_size, r.sensitivity
        ));
        sensitivity.push(r);
    }

    let mut ks_configs = Vec::new();
    for m in [1, 2, 4, 8] {
        ks_configs.extend(TransformSet::grid().into_iter().map(|t| (m, t)));
    }
    let keyspace = analysis::keyspace_report(&ks_configs, config.dims.0);

    Ok(ReproReport {
        config: config.clone(),
        baseline_accuracy,
        protection,
        key_estimation,
        forged_key,
        transfer,
        transfer_scratch_accuracy,
        correlation,
        sensitivity,
        keyspace,
    })
}
