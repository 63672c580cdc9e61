//! Adversary procedures: greedy key estimation and two fine-tuning attacks.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::keyset::{pair_count, KeySet, Transform, TransformSet, DEFAULT_PASSWORD};
use crate::learner::{self, count_correct, evaluate, Classifier, TrainConfig};
use crate::tensor::ImageTensor;
use crate::transforms::TransformPipeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    KeyEstimation,
    ForgedKey,
    NewDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMode {
    /// Only the replaced final layer is trained.
    Fixed,
    /// Every layer is trained.
    Full,
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(TransferMode::Fixed),
            "full" => Ok(TransferMode::Full),
            _ => Err(Error::Config(format!("unknown transfer mode {s:?} (fixed|full)"))),
        }
    }
}

/// One candidate swap of the key search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub pair_index: usize,
    pub component: Transform,
    pub accepted: bool,
    /// Probe accuracy of the candidate key.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub starting_accuracy: f64,
    pub final_accuracy: f64,
    /// What the attack produced: a key file, a model file or a short label.
    pub artifact: String,
    pub evaluations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<TransferMode>,
    /// Held-out accuracy under the estimated key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    /// Accuracy of a model trained from scratch on the same data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_accuracy: Option<f64>,
}

impl AttackReport {
    fn new(kind: AttackKind, starting_accuracy: f64, artifact: String) -> Self {
        AttackReport {
            kind,
            starting_accuracy,
            final_accuracy: starting_accuracy,
            artifact,
            evaluations: 0,
            trace: Vec::new(),
            subset_size: None,
            mode: None,
            test_accuracy: None,
            baseline_accuracy: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EstimateOptions {
    /// Full sweeps over the pair set. The reference procedure does one.
    pub passes: usize,
    /// Cipher password of the initial guess.
    pub password: String,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            passes: 1,
            password: DEFAULT_PASSWORD.into(),
        }
    }
}

/// All index pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn index_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Greedy pairwise-swap hill climbing from `init`. For every pair, each key
/// component (SHF, NP, FFX order) gets one candidate swap, kept only if
/// `score` strictly improves. Uses `1 + passes * |P| * components` scores.
pub fn estimate_key_with<F>(
    init: KeySet,
    options: &EstimateOptions,
    mut score: F,
) -> Result<(KeySet, AttackReport)>
where
    F: FnMut(&KeySet) -> Result<f64>,
{
    let n = init.block_pixels();
    let components = init.transforms();
    let mut key = init;
    let mut best = score(&key)?;
    let mut report = AttackReport::new(AttackKind::KeyEstimation, best, "estimated key".into());
    report.evaluations = 1;
    if n >= 2 {
        let expected = pair_count(key.block_size(), key.channels())? as usize;
        debug_assert_eq!(index_pairs(n).count(), expected);
        report.trace.reserve(options.passes * expected * components.len());
    }
    for _ in 0..options.passes {
        for (pair_index, (i, j)) in index_pairs(n).enumerate() {
            for component in components.iter() {
                key.swap(component, i, j);
                let accuracy = score(&key)?;
                report.evaluations += 1;
                let accepted = accuracy > best;
                if accepted {
                    best = accuracy;
                } else {
                    key.swap(component, i, j);
                }
                report.trace.push(TraceStep {
                    pair_index,
                    component,
                    accepted,
                    accuracy,
                });
            }
        }
    }
    report.final_accuracy = best;
    Ok((key, report))
}

/// Scores candidate keys by probe accuracy of a stolen model.
pub struct ModelScorer<'a> {
    model: &'a Classifier,
    images: Vec<ImageTensor>,
    labels: Vec<usize>,
    last: Option<TransformPipeline>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Classifier, probe: &Dataset) -> Result<Self> {
        if probe.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(ModelScorer {
            model,
            images: probe.images().cloned().collect(),
            labels: probe.labels(),
            last: None,
        })
    }

    pub fn score(&mut self, key: &KeySet) -> Result<f64> {
        let pipeline = match &self.last {
            Some(p) => p.rekey(key.clone()),
            None => TransformPipeline::new(key.clone()),
        };
        self.model.check_pipeline(Some(&pipeline))?;
        let inputs = pipeline.transform_all(&self.images)?;
        let hits = count_correct(self.model, &inputs, &self.labels)?;
        self.last = Some(pipeline);
        Ok(hits as f64 / self.labels.len() as f64)
    }
}

/// Key estimation against a trained model from a random initial key drawn
/// with `seed`.
pub fn estimate_key(
    model: &Classifier,
    probe: &Dataset,
    transforms: TransformSet,
    block_size: usize,
    channels: usize,
    seed: u64,
    options: &EstimateOptions,
) -> Result<(KeySet, AttackReport)> {
    let mut scorer = ModelScorer::new(model, probe)?;
    let init = KeySet::generate_with_password(
        block_size,
        channels,
        transforms,
        seed,
        options.password.as_bytes(),
    )?;
    estimate_key_with(init, options, |k| scorer.score(k))
}

/// Fine-tunes every layer of a stolen model on the adversary's subset,
/// transformed with a forged key, then scores it on `test` under that key.
pub fn finetune_forged_key(
    model: &Classifier,
    subset: &Dataset,
    test: &Dataset,
    forged: &KeySet,
    config: &TrainConfig,
) -> Result<(Classifier, AttackReport)> {
    let pipeline = TransformPipeline::new(forged.clone());
    let start = evaluate(model, test, Some(&pipeline))?;
    let mut report = AttackReport::new(AttackKind::ForgedKey, start, "forged-key model".into());
    report.subset_size = Some(subset.len());
    let tuned = if config.epochs == 0 {
        model.clone()
    } else {
        learner::finetune(model.clone(), subset, Some(&pipeline), config, false)?.0
    };
    report.final_accuracy = evaluate(&tuned, test, Some(&pipeline))?;
    report.evaluations = 2;
    Ok((tuned, report))
}

/// Plain-data model trained from scratch; the reference for transfer attacks.
pub fn scratch_baseline(
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let fresh = Classifier::new(train.dims(), train.classes(), seed)?;
    let (model, _) = learner::train(fresh, train, None, config)?;
    evaluate(&model, test, None)
}

/// Transfer attack: new final layer for the new task, then train the head
/// (`Fixed`) or everything (`Full`) on plain images.
pub fn finetune_new_dataset(
    model: &Classifier,
    train: &Dataset,
    test: &Dataset,
    mode: TransferMode,
    config: &TrainConfig,
    baseline: Option<f64>,
) -> Result<(Classifier, AttackReport)> {
    let mut tuned = model.clone();
    tuned.set_protection(None);
    tuned.replace_head(train.classes(), config.seed)?;
    let start = evaluate(&tuned, test, None)?;
    let mut report = AttackReport::new(AttackKind::NewDataset, start, "transferred model".into());
    report.mode = Some(mode);
    report.subset_size = Some(train.len());
    report.baseline_accuracy = baseline;
    if config.epochs > 0 {
        tuned = learner::finetune(tuned, train, None, config, mode == TransferMode::Fixed)?.0;
    }
    report.final_accuracy = evaluate(&tuned, test, None)?;
    report.evaluations = 2;
    Ok((tuned, report))
}
