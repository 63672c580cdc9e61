//! The classifier `f(·)`, its SGD trainer and evaluator.

mod checkpoint;
mod gradcheck;
pub mod net;

use serde::{Deserialize, Serialize};

pub use gradcheck::{grad_check, grad_check_sampled};
pub use net::Arch;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::keyset::TransformSet;
use crate::rng::DetRng;
use crate::tensor::ImageTensor;
use crate::transforms::TransformPipeline;
use net::{Scratch, Trace};

/// Key shape a model was trained under; checked before keyed evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Protection {
    pub block_size: usize,
    pub transforms: TransformSet,
}

impl Protection {
    pub fn of(pipeline: &TransformPipeline) -> Self {
        Protection {
            block_size: pipeline.keyset().block_size(),
            transforms: pipeline.keyset().transforms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    arch: Arch,
    params: Vec<f32>,
    protection: Option<Protection>,
}

impl Classifier {
    /// Fresh network with He-uniform weights (`±sqrt(6 / fan_in)`) drawn in
    /// layer order from `seed`, and zero biases.
    pub fn new(dims: (usize, usize, usize), classes: usize, seed: u64) -> Result<Self> {
        let arch = Self::check_arch(dims, classes)?;
        let mut params = vec![0f32; arch.param_count()];
        let mut rng = DetRng::new(seed);
        for (range, fan_in) in arch.weight_fans() {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.uniform(-bound, bound) as f32;
            }
        }
        Ok(Classifier {
            arch,
            params,
            protection: None,
        })
    }

    /// Every parameter set to `value`; predicts the same class for every input.
    pub fn uniform(dims: (usize, usize, usize), classes: usize, value: f32) -> Result<Self> {
        let arch = Self::check_arch(dims, classes)?;
        Ok(Classifier {
            arch,
            params: vec![value; arch.param_count()],
            protection: None,
        })
    }

    fn check_arch((channels, height, width): (usize, usize, usize), classes: usize) -> Result<Arch> {
        if channels == 0 || height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0 {
            return Err(Error::Dimension(format!(
                "classifier needs non-empty input with h, w divisible by 4, got {channels}x{height}x{width}"
            )));
        }
        if classes < 2 {
            return Err(Error::Config(format!("classifier needs >= 2 classes, got {classes}")));
        }
        Ok(Arch {
            channels,
            height,
            width,
            classes,
        })
    }

    pub(crate) fn from_parts(arch: Arch, params: Vec<f32>, protection: Option<Protection>) -> Self {
        Classifier {
            arch,
            params,
            protection,
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        (self.arch.channels, self.arch.height, self.arch.width)
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn protection(&self) -> Option<Protection> {
        self.protection
    }

    pub fn set_protection(&mut self, protection: Option<Protection>) {
        self.protection = protection;
    }

    /// Parameters of everything below the final linear layer.
    pub fn feature_params(&self) -> &[f32] {
        &self.params[..self.arch.layout().fc2_w.start]
    }

    /// Swap in a freshly initialized final layer for `classes` outputs.
    pub fn replace_head(&mut self, classes: usize, seed: u64) -> Result<()> {
        let fresh = Classifier::new(self.input_dims(), classes, seed)?;
        let keep = self.arch.layout().fc2_w.start;
        let mut params = self.params[..keep].to_vec();
        params.extend_from_slice(&fresh.params[keep..]);
        self.arch.classes = classes;
        self.params = params;
        Ok(())
    }

    pub fn predict_proba(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        self.check_image(image)?;
        let mut trace = Trace::default();
        net::forward(&self.arch, &self.params, image.data(), &mut trace);
        Ok(trace.probs)
    }

    pub fn predict(&self, image: &ImageTensor) -> Result<usize> {
        Ok(argmax(&self.predict_proba(image)?))
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        if image.dims() != self.input_dims() {
            return Err(Error::Dimension(format!(
                "model expects {:?}, image is {:?}",
                self.input_dims(),
                image.dims()
            )));
        }
        Ok(())
    }

    /// Keyed evaluation needs a key of the same shape as the training key.
    pub(crate) fn check_pipeline(&self, pipeline: Option<&TransformPipeline>) -> Result<()> {
        if let (Some(p), Some(prot)) = (pipeline, self.protection) {
            let k = p.keyset();
            if k.block_size() != prot.block_size {
                return Err(Error::Config(format!(
                    "key block size M={} does not match the model's M={}",
                    k.block_size(),
                    prot.block_size
                )));
            }
            if k.transforms() != prot.transforms {
                return Err(Error::Config(format!(
                    "key transforms {} do not match the model's {}",
                    k.transforms(),
                    prot.transforms
                )));
            }
        }
        Ok(())
    }
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || !(self.weight_decay >= 0.0)
        {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Network inputs after the (optional) key transform, as flat channel-major
/// vectors.
fn prepare(
    dims: (usize, usize, usize),
    data: &Dataset,
    pipeline: Option<&TransformPipeline>,
) -> Result<Vec<Vec<f32>>> {
    if data.dims() != dims {
        return Err(Error::Dimension(format!(
            "model expects {dims:?}, dataset is {:?}",
            data.dims()
        )));
    }
    data.images()
        .map(|im| match pipeline {
            Some(p) => p.transform(im).map(ImageTensor::into_data),
            None => Ok(im.data().to_vec()),
        })
        .collect()
}

/// Trains all layers with mini-batch SGD (momentum, L2 weight decay) on
/// cross-entropy. The key transform is applied once, before the epoch loop.
pub fn train(
    model: Classifier,
    data: &Dataset,
    pipeline: Option<&TransformPipeline>,
    config: &TrainConfig,
) -> Result<(Classifier, TrainHistory)> {
    let mut model = run_sgd(model, data, pipeline, config, false)?;
    model.0.protection = pipeline.map(Protection::of);
    Ok(model)
}

/// Continues training a model. With `freeze_features` only the final linear
/// layer moves; every other parameter stays bit-identical.
pub fn finetune(
    model: Classifier,
    data: &Dataset,
    pipeline: Option<&TransformPipeline>,
    config: &TrainConfig,
    freeze_features: bool,
) -> Result<(Classifier, TrainHistory)> {
    run_sgd(model, data, pipeline, config, freeze_features)
}

fn run_sgd(
    mut model: Classifier,
    data: &Dataset,
    pipeline: Option<&TransformPipeline>,
    config: &TrainConfig,
    head_only: bool,
) -> Result<(Classifier, TrainHistory)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.classes() > model.classes() || data.items().iter().any(|s| s.label >= model.classes()) {
        return Err(Error::Config(format!(
            "dataset labels exceed the model's {} classes",
            model.classes()
        )));
    }
    let inputs = prepare(model.input_dims(), data, pipeline)?;
    let labels = data.labels();
    let arch = model.arch;
    let trainable = if head_only {
        arch.layout().fc2_w.start..arch.param_count()
    } else {
        0..arch.param_count()
    };
    let mut grad = vec![0f32; arch.param_count()];
    let mut velocity = vec![0f32; arch.param_count()];
    let mut trace = Trace::default();
    let mut scratch = Scratch::default();
    let mut rng = DetRng::new(config.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = TrainHistory::default();
    let (lr, mom, wd) = (
        config.learning_rate as f32,
        config.momentum as f32,
        config.weight_decay as f32,
    );

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0f64;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            grad[trainable.clone()].fill(0.0);
            let scale = 1.0 / chunk.len() as f32;
            let mut batch_loss = 0f64;
            for &i in chunk {
                net::forward(&arch, &model.params, &inputs[i], &mut trace);
                batch_loss += f64::from(net::loss(&trace.probs, labels[i]));
                net::backward(
                    &arch,
                    &model.params,
                    &trace,
                    labels[i],
                    scale,
                    head_only,
                    &mut grad,
                    &mut scratch,
                );
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
            epoch_loss += batch_loss;
            let params = &mut model.params[trainable.clone()];
            let grads = &grad[trainable.clone()];
            let vel = &mut velocity[trainable.clone()];
            for ((p, &g), v) in params.iter_mut().zip(grads).zip(vel.iter_mut()) {
                let g = g + wd * *p;
                *v = mom * *v + g;
                *p -= lr * *v;
            }
        }
        history.epoch_loss.push(epoch_loss / inputs.len() as f64);
    }
    Ok((model, history))
}

/// Predicted class of every image.
pub fn predict_all(model: &Classifier, inputs: &[ImageTensor]) -> Result<Vec<usize>> {
    let mut trace = Trace::default();
    inputs
        .iter()
        .map(|im| {
            model.check_image(im)?;
            net::forward(&model.arch, &model.params, im.data(), &mut trace);
            Ok(argmax(&trace.probs))
        })
        .collect()
}

/// Number of correctly classified images among already-prepared inputs.
pub fn count_correct(model: &Classifier, inputs: &[ImageTensor], labels: &[usize]) -> Result<usize> {
    if inputs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let preds = predict_all(model, inputs)?;
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count())
}

/// Fraction of correctly classified images among already-prepared inputs.
pub fn accuracy_on(model: &Classifier, inputs: &[ImageTensor], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(count_correct(model, inputs, labels)? as f64 / inputs.len() as f64)
}

/// Top-1 accuracy on `data`, transformed by `pipeline` when given.
pub fn evaluate(
    model: &Classifier,
    data: &Dataset,
    pipeline: Option<&TransformPipeline>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.check_pipeline(pipeline)?;
    let inputs: Vec<ImageTensor> = match pipeline {
        Some(p) => p.transform_all(data.images())?,
        None => data.images().cloned().collect(),
    };
    accuracy_on(model, &inputs, &data.labels())
}

/// Mean cross-entropy over `data`.
pub fn mean_loss(
    model: &Classifier,
    data: &Dataset,
    pipeline: Option<&TransformPipeline>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs = prepare(model.input_dims(), data, pipeline)?;
    let mut trace = Trace::default();
    let mut total = 0f64;
    for (x, s) in inputs.iter().zip(data.items()) {
        net::forward(&model.arch, &model.params, x, &mut trace);
        total += f64::from(net::loss(&trace.probs, s.label));
    }
    Ok(total / inputs.len() as f64)
}
