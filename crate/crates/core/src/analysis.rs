//! Adjacent-pixel correlation, key sensitivity and key-space tables.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::keyset::{key_space, log2_big, KeySet, Transform, TransformSet};
use crate::learner::{count_correct, Classifier};
use crate::rng::DetRng;
use crate::tensor::ImageTensor;
use crate::transforms::TransformPipeline;

/// Default number of sampled positions per correlation test.
pub const DEFAULT_SAMPLES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Horizontal,
    Vertical,
    Diagonal,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Horizontal, Direction::Vertical, Direction::Diagonal];

    /// Neighbour offset as (rows, cols).
    pub fn offset(self) -> (usize, usize) {
        match self {
            Direction::Horizontal => (0, 1),
            Direction::Vertical => (1, 0),
            Direction::Diagonal => (1, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Horizontal => "horizontal",
            Direction::Vertical => "vertical",
            Direction::Diagonal => "diagonal",
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h" | "horizontal" => Ok(Direction::Horizontal),
            "v" | "vertical" => Ok(Direction::Vertical),
            "d" | "diagonal" => Ok(Direction::Diagonal),
            _ => Err(Error::Config(format!(
                "unknown direction {s:?} (horizontal|vertical|diagonal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPair {
    pub value: f64,
    pub neighbor: f64,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub direction: Direction,
    pub pairs: Vec<PixelPair>,
    /// Mean over channels of the per-channel Pearson coefficient.
    pub pearson_r: f64,
}

#[derive(Serialize)]
struct PairRow<'a> {
    value: f64,
    neighbor: f64,
    channel: usize,
    direction: &'a str,
}

impl CorrelationResult {
    /// Recomputes the coefficient from the stored pairs.
    pub fn recompute(&self) -> Result<f64> {
        channel_mean_r(&self.pairs)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_pairs_csv(std::slice::from_ref(self), out)
    }
}

/// Writes the pairs of several results as one table
/// (`value,neighbor,channel,direction`).
pub fn write_pairs_csv<W: std::io::Write>(results: &[CorrelationResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        for p in &r.pairs {
            w.serialize(PairRow {
                value: p.value,
                neighbor: p.neighbor,
                channel: p.channel,
                direction: r.direction.name(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pearson correlation of two equally long series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("series lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn channel_mean_r(pairs: &[PixelPair]) -> Result<f64> {
    let channels = pairs.iter().map(|p| p.channel + 1).max().unwrap_or(0);
    if channels == 0 {
        return Err(Error::Domain("no pixel pairs".into()));
    }
    let mut total = 0.0;
    for ch in 0..channels {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs
            .iter()
            .filter(|p| p.channel == ch)
            .map(|p| (p.value, p.neighbor))
            .unzip();
        total += pearson(&x, &y)?;
    }
    Ok(total / channels as f64)
}

/// Samples `sample_n` positions, pairs every channel value with its
/// neighbour in `direction` and averages the per-channel coefficients.
pub fn pixel_correlation(
    image: &ImageTensor,
    direction: Direction,
    sample_n: usize,
    seed: u64,
) -> Result<CorrelationResult> {
    if sample_n < 2 {
        return Err(Error::Config(format!("sample_n must be >= 2, got {sample_n}")));
    }
    let (c, h, w) = image.dims();
    let (dr, dc) = direction.offset();
    if h <= dr || w <= dc {
        return Err(Error::Dimension(format!(
            "{h}x{w} image has no {} neighbours",
            direction.name()
        )));
    }
    let mut rng = DetRng::new(seed);
    let mut pairs = Vec::with_capacity(sample_n * c);
    for _ in 0..sample_n {
        let row = rng.index(h - dr);
        let col = rng.index(w - dc);
        for ch in 0..c {
            pairs.push(PixelPair {
                value: f64::from(image.get(ch, row, col)),
                neighbor: f64::from(image.get(ch, row + dr, col + dc)),
                channel: ch,
            });
        }
    }
    let pearson_r = channel_mean_r(&pairs)?;
    Ok(CorrelationResult {
        direction,
        pairs,
        pearson_r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub transforms: TransformSet,
    pub block_size: usize,
    pub acc: f64,
    pub acc_prime_mean: f64,
    pub sensitivity: f64,
    pub evaluations: usize,
}

#[derive(Serialize)]
struct SensitivityRow {
    transform: String,
    #[serde(rename = "M")]
    block_size: usize,
    #[serde(rename = "ACC")]
    acc: f64,
    #[serde(rename = "ACC_prime")]
    acc_prime: f64,
    sensitivity: f64,
}

/// Writes `transform,M,ACC,ACC_prime,sensitivity` rows.
pub fn write_sensitivity_csv<W: std::io::Write>(rows: &[SensitivityResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(SensitivityRow {
            transform: r.transforms.to_string(),
            block_size: r.block_size,
            acc: r.acc,
            acc_prime: r.acc_prime_mean,
            sensitivity: r.sensitivity,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// The correct key with position `p` minimally changed in every component:
/// alpha swaps `p` with a random other position, beta and gamma flip bit `p`.
pub fn modified_key(keyset: &KeySet, p: usize, rng: &mut DetRng) -> KeySet {
    let n = keyset.block_pixels();
    let mut k = keyset.clone();
    for t in keyset.transforms().iter() {
        match t {
            Transform::Shf => {
                if n > 1 {
                    let q = (p + 1 + rng.index(n - 1)) % n;
                    k.swap(t, p, q);
                }
            }
            Transform::Np | Transform::Ffx => k.flip(t, p),
        }
    }
    k
}

/// Accuracy drop caused by single-position key changes, averaged over all
/// `c·M·M` positions. `build` turns each modified key into a pipeline.
pub fn key_sensitivity_with<F>(
    model: &Classifier,
    test: &Dataset,
    keyset: &KeySet,
    seed: u64,
    mut build: F,
) -> Result<SensitivityResult>
where
    F: FnMut(&KeySet) -> Result<TransformPipeline>,
{
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = test.labels();
    let correct = TransformPipeline::new(keyset.clone());
    model.check_pipeline(Some(&correct))?;
    let hits = count_correct(model, &correct.transform_all(test.images())?, &labels)?;
    let positions = keyset.block_pixels();
    let mut rng = DetRng::new(seed);
    let mut total = 0usize;
    for p in 0..positions {
        let modified = modified_key(keyset, p, &mut rng);
        let pipeline = build(&modified)?;
        model.check_pipeline(Some(&pipeline))?;
        total += count_correct(model, &pipeline.transform_all(test.images())?, &labels)?;
    }
    let n = labels.len();
    let acc = hits as f64 / n as f64;
    let acc_prime_mean = total as f64 / (n * positions) as f64;
    Ok(SensitivityResult {
        transforms: keyset.transforms(),
        block_size: keyset.block_size(),
        acc,
        acc_prime_mean,
        sensitivity: acc - acc_prime_mean,
        evaluations: positions + 1,
    })
}

pub fn key_sensitivity(
    model: &Classifier,
    test: &Dataset,
    keyset: &KeySet,
    seed: u64,
) -> Result<SensitivityResult> {
    let base = TransformPipeline::new(keyset.clone());
    key_sensitivity_with(model, test, keyset, seed, |k| Ok(base.rekey(k.clone())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyspaceRow {
    pub block_size: usize,
    pub channels: usize,
    pub transforms: TransformSet,
    /// Exact decimal value.
    pub key_space: String,
    pub log2: f64,
}

pub fn keyspace_report(configs: &[(usize, TransformSet)], channels: usize) -> Vec<KeyspaceRow> {
    configs
        .iter()
        .map(|&(m, set)| {
            let n = key_space(m, channels, set);
            KeyspaceRow {
                block_size: m,
                channels,
                transforms: set,
                key_space: n.to_string(),
                log2: log2_big(&n),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct KeyspaceCsvRow<'a> {
    #[serde(rename = "M")]
    block_size: usize,
    channels: usize,
    transforms: String,
    key_space: &'a str,
    log2: f64,
}

pub fn write_keyspace_csv<W: std::io::Write>(rows: &[KeyspaceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(KeyspaceCsvRow {
            block_size: r.block_size,
            channels: r.channels,
            transforms: r.transforms.to_string(),
            key_space: &r.key_space,
            log2: r.log2,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: impl AsRef<Path>, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    body(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;

    fn gradient_image() -> ImageTensor {
        let (c, h, w) = (3, 16, 16);
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(((x + y + ch) as f32) / 40.0);
                }
            }
        }
        ImageTensor::new(c, h, w, data).unwrap()
    }

    #[test]
    fn constant_image_has_zero_variance() {
        let im = ImageTensor::zeros(1, 8, 8);
        let err = pixel_correlation(&im, Direction::Horizontal, 64, 1).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance));
        assert!(err.to_string().contains("zero variance"));
    }

    #[test]
    fn smooth_gradient_is_highly_correlated() {
        for d in Direction::ALL {
            let r = pixel_correlation(&gradient_image(), d, 512, 3).unwrap();
            assert!(r.pearson_r > 0.99, "{d:?} {}", r.pearson_r);
            assert!((r.recompute().unwrap() - r.pearson_r).abs() < 1e-9);
            assert_eq!(r.pairs.len(), 512 * 3);
        }
    }

    #[test]
    fn too_few_samples_or_tiny_image() {
        assert!(pixel_correlation(&gradient_image(), Direction::Vertical, 1, 0).is_err());
        let tall = ImageTensor::zeros(1, 4, 1);
        assert!(matches!(
            pixel_correlation(&tall, Direction::Horizontal, 10, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn pearson_invariances() {
        let x = [0.1, 0.5, 0.2, 0.9, 0.4];
        let y = [0.3, 0.6, 0.1, 0.8, 0.5];
        let r = pearson(&x, &y).unwrap();
        assert!((pearson(&y, &x).unwrap() - r).abs() < 1e-12);
        let xs: Vec<f64> = x.iter().map(|v| 3.0 * v + 2.0).collect();
        let ys: Vec<f64> = y.iter().map(|v| 0.5 * v - 7.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - r).abs() < 1e-9);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &x).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn modified_key_changes_one_position_per_component() {
        let set: TransformSet = "SHF+NP+FFX".parse().unwrap();
        let k = KeySet::generate(2, 3, set, 42).unwrap();
        let mut rng = DetRng::new(0);
        for p in 0..k.block_pixels() {
            let m = modified_key(&k, p, &mut rng);
            let a_diff = (0..12).filter(|&i| m.alpha().unwrap()[i] != k.alpha().unwrap()[i]).count();
            assert_eq!(a_diff, 2);
            assert_ne!(m.alpha().unwrap()[p], k.alpha().unwrap()[p]);
            assert_ne!(m.beta().unwrap()[p], k.beta().unwrap()[p]);
            assert_ne!(m.gamma().unwrap()[p], k.gamma().unwrap()[p]);
        }
    }

    #[test]
    fn degenerate_modification_has_zero_sensitivity() {
        let data = generate_synthetic(2, 5, (3, 8, 8), 1).unwrap();
        let model = Classifier::new((3, 8, 8), 2, 4).unwrap();
        let k = KeySet::generate(2, 3, "NP".parse().unwrap(), 42).unwrap();
        let correct = TransformPipeline::new(k.clone());
        let r = key_sensitivity_with(&model, &data, &k, 0, |_| Ok(correct.clone())).unwrap();
        assert_eq!(r.sensitivity, 0.0);
        assert_eq!(r.acc, r.acc_prime_mean);
        assert_eq!(r.evaluations, 3 * 2 * 2 + 1);
    }

    #[test]
    fn keyspace_rows_match_key_space() {
        let set: TransformSet = "SHF".parse().unwrap();
        let rows = keyspace_report(&[(2, set), (4, set)], 3);
        assert_eq!(rows[0].key_space, "479001600");
        assert!(rows[1].log2 > rows[0].log2);
        let mut out = Vec::new();
        write_keyspace_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("M,channels,transforms,key_space,log2\n2,3,SHF,479001600,"));
    }

    #[test]
    fn csv_headers() {
        let r = pixel_correlation(&gradient_image(), Direction::Diagonal, 4, 1).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("value,neighbor,channel,direction\n"));
        let s = SensitivityResult {
            transforms: "NP".parse().unwrap(),
            block_size: 4,
            acc: 1.0,
            acc_prime_mean: 0.5,
            sensitivity: 0.5,
            evaluations: 49,
        };
        let mut out = Vec::new();
        write_sensitivity_csv(&[s], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "transform,M,ACC,ACC_prime,sensitivity\nNP,4,1.0,0.5,0.5\n");
    }
}
