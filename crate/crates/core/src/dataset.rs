//! Labeled image collections: a seeded synthetic generator, stratified
//! splitting/subsetting, and a CSV manifest + PNM tree on disk.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnm;
use crate::rng::DetRng;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: usize,
    dims: (usize, usize, usize),
    items: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub relative_path: String,
    pub label: usize,
}

impl Dataset {
    pub fn new(classes: usize, dims: (usize, usize, usize), items: Vec<Sample>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("dataset needs at least one class".into()));
        }
        for (i, s) in items.iter().enumerate() {
            if s.image.dims() != dims {
                return Err(Error::Dimension(format!(
                    "item {i} has dims {:?}, dataset is {dims:?}",
                    s.image.dims()
                )));
            }
            if s.label >= classes {
                return Err(Error::Config(format!(
                    "item {i} has label {} but there are {classes} classes",
                    s.label
                )));
            }
        }
        Ok(Dataset {
            classes,
            dims,
            items,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageTensor> {
        self.items.iter().map(|s| &s.image)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.items {
            counts[s.label] += 1;
        }
        counts
    }

    fn pick(&self, indices: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes,
            dims: self.dims,
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }

    fn shuffled_by_class(&self, rng: &mut DetRng) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.classes];
        for (i, s) in self.items.iter().enumerate() {
            by_class[s.label].push(i);
        }
        for idx in &mut by_class {
            rng.shuffle(idx);
        }
        by_class
    }

    /// Stratified split; each class contributes `round(n_c · fraction)` items
    /// to the first part. Both parts keep the original item order.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {train_fraction} must lie in (0, 1)"
            )));
        }
        let mut rng = DetRng::new(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for idx in self.shuffled_by_class(&mut rng) {
            let n = (idx.len() as f64 * train_fraction).round() as usize;
            train.extend_from_slice(&idx[..n]);
            test.extend_from_slice(&idx[n..]);
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config(format!(
                "fraction {train_fraction} of {} items leaves an empty split",
                self.len()
            )));
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.pick(&train), self.pick(&test)))
    }

    /// Stratified random subset of `n` items, classes balanced as evenly as
    /// divisibility allows, returned in shuffled order.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::Config(format!(
                "subset of {n} requested from {} items",
                self.len()
            )));
        }
        let mut rng = DetRng::new(seed);
        let by_class = self.shuffled_by_class(&mut rng);
        let mut chosen = Vec::with_capacity(n);
        let mut depth = 0;
        while chosen.len() < n {
            for idx in &by_class {
                if chosen.len() == n {
                    break;
                }
                if let Some(&i) = idx.get(depth) {
                    chosen.push(i);
                }
            }
            depth += 1;
        }
        rng.shuffle(&mut chosen);
        Ok(self.pick(&chosen))
    }

    /// Writes `images/<index>_<label>.ppm|pgm` and a manifest CSV into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, manifest_name: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let img_dir = dir.join("images");
        fs::create_dir_all(&img_dir).map_err(|e| Error::file(&img_dir, e))?;
        let ext = if self.dims.0 == 1 { "pgm" } else { "ppm" };
        let stem = manifest_name.trim_end_matches(".csv");
        let mut entries = Vec::with_capacity(self.len());
        for (i, s) in self.items.iter().enumerate() {
            let rel = format!("images/{stem}_{i:05}_{}.{ext}", s.label);
            pnm::write_image(&s.image, dir.join(&rel))?;
            entries.push(ManifestEntry {
                relative_path: rel,
                label: s.label,
            });
        }
        let path = dir.join(manifest_name);
        write_manifest(&path, &entries)?;
        Ok(path)
    }

    /// Loads every image listed in a manifest. The class count is
    /// `max(label) + 1` unless `classes` is given.
    pub fn load_manifest(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
        let path = path.as_ref();
        let entries = read_manifest(path)?;
        let root = path.parent().unwrap_or(Path::new("."));
        let items = entries
            .iter()
            .map(|e| {
                Ok(Sample {
                    image: pnm::read_image(root.join(&e.relative_path))?,
                    label: e.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let first = items.first().ok_or(Error::EmptyDataset)?;
        let dims = first.image.dims();
        let classes = classes.unwrap_or_else(|| items.iter().map(|s| s.label).max().unwrap_or(0) + 1);
        Dataset::new(classes, dims, items)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

/// Knobs of the synthetic pattern generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStyle {
    /// Channel level for "low" palette entries.
    pub low: f64,
    /// Channel level for "high" palette entries; "mid" sits halfway.
    pub high: f64,
    /// Peak-to-peak amplitude of the oriented background gradient.
    pub gradient: f64,
    /// Contrast between the shape and the background.
    pub shape_contrast: f64,
    /// Half-width of the uniform per-pixel noise.
    pub noise: f64,
    /// Half-width of the per-image, per-channel colour jitter.
    pub color_jitter: f64,
}

impl Default for SyntheticStyle {
    fn default() -> Self {
        SyntheticStyle {
            low: 0.25,
            high: 0.75,
            gradient: 0.08,
            shape_contrast: 0.12,
            noise: 0.08,
            color_jitter: 0.05,
        }
    }
}

/// Largest class count the generator supports.
pub const MAX_SYNTHETIC_CLASSES: usize = 8;

// Per-class channel levels: 0 = low, 1 = mid, 2 = high. The first six are the
// orderings of (low, mid, high), so a class is told apart by which channel is
// brightest rather than by overall intensity.
const PALETTE: [[u8; 3]; MAX_SYNTHETIC_CLASSES] = [
    [2, 1, 0],
    [0, 2, 1],
    [1, 0, 2],
    [0, 1, 2],
    [2, 0, 1],
    [1, 2, 0],
    [2, 2, 0],
    [0, 2, 2],
];

/// Inside test for one of four shapes centred at the origin.
fn in_shape(kind: usize, dx: f64, dy: f64, r: f64) -> bool {
    match kind % 4 {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
        2 => dy >= -r * 0.8 && dy <= r * 0.8 && dx.abs() <= (dy + r * 0.8) * 0.6,
        _ => (dx.abs() <= r * 0.3 && dy.abs() <= r) || (dy.abs() <= r * 0.3 && dx.abs() <= r),
    }
}

/// Class-conditional synthetic images. Class `k` has its own colour palette,
/// gradient orientation and shape; position, size, phase and noise vary per item.
/// Labels cycle `0, 1, …, classes-1`.
pub fn generate_synthetic(
    classes: usize,
    per_class: usize,
    dims: (usize, usize, usize),
    seed: u64,
) -> Result<Dataset> {
    generate_synthetic_styled(classes, per_class, dims, seed, SyntheticStyle::default())
}

pub fn generate_synthetic_styled(
    classes: usize,
    per_class: usize,
    dims: (usize, usize, usize),
    seed: u64,
    style: SyntheticStyle,
) -> Result<Dataset> {
    if !(2..=MAX_SYNTHETIC_CLASSES).contains(&classes) {
        return Err(Error::Config(format!(
            "synthetic data supports 2..={MAX_SYNTHETIC_CLASSES} classes, got {classes}"
        )));
    }
    let (c, h, w) = dims;
    if c != 1 && c != 3 {
        return Err(Error::Config(format!("synthetic data supports 1 or 3 channels, got {c}")));
    }
    let mut rng = DetRng::new(seed);
    let mut items = Vec::with_capacity(classes * per_class);
    let size = h.min(w) as f64;
    for n in 0..classes * per_class {
        let label = n % classes;
        let base: [f64; 3] = std::array::from_fn(|ch| {
            let level = style.low + (style.high - style.low) * PALETTE[label][ch] as f64 / 2.0;
            level + rng.uniform(-style.color_jitter, style.color_jitter)
        });
        let theta = PI * label as f64 / classes as f64 + rng.uniform(-0.15, 0.15);
        let (gx, gy) = (theta.cos(), theta.sin());
        let phase = rng.uniform(-0.2, 0.2);
        let r = size * rng.uniform(0.22, 0.32);
        let cx = w as f64 * rng.uniform(0.35, 0.65);
        let cy = h as f64 * rng.uniform(0.35, 0.65);
        let shape_sign = if rng.bit() { 1.0 } else { -1.0 };
        let mut data = vec![0f32; c * h * w];
        for y in 0..h {
            for x in 0..w {
                let u = (x as f64 + 0.5) / w as f64 - 0.5;
                let v = (y as f64 + 0.5) / h as f64 - 0.5;
                let g = style.gradient * (u * gx + v * gy + phase);
                let inside = in_shape(label, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r);
                let s = if inside { shape_sign * style.shape_contrast } else { 0.0 };
                let rgb = [base[0] + g + s, base[1] + g + s, base[2] + g + s];
                for ch in 0..c {
                    let value = if c == 1 {
                        0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
                    } else {
                        rgb[ch]
                    };
                    let noisy = value + rng.uniform(-style.noise, style.noise);
                    data[(ch * h + y) * w + x] = noisy.clamp(0.0, 1.0) as f32;
                }
            }
        }
        items.push(Sample {
            image: ImageTensor::new(c, h, w, data)?,
            label,
        });
    }
    Dataset::new(classes, dims, items)
}
