//! The secret key set `{alpha, beta, gamma, password}` and its accounting.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::DetRng;

pub const KEY_FILE_VERSION: u32 = 1;
pub const DEFAULT_PASSWORD: &str = "password";

/// One block-wise transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transform {
    #[serde(rename = "SHF")]
    Shf,
    #[serde(rename = "NP")]
    Np,
    #[serde(rename = "FFX")]
    Ffx,
}

impl Transform {
    /// Canonical application order.
    pub const ALL: [Transform; 3] = [Transform::Shf, Transform::Np, Transform::Ffx];

    fn bit(self) -> u8 {
        match self {
            Transform::Shf => 1,
            Transform::Np => 2,
            Transform::Ffx => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Shf => "SHF",
            Transform::Np => "NP",
            Transform::Ffx => "FFX",
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shf" => Ok(Transform::Shf),
            "np" => Ok(Transform::Np),
            "ffx" => Ok(Transform::Ffx),
            other => Err(Error::Config(format!("unknown transform `{other}`"))),
        }
    }
}

/// A non-empty subset of transforms, always iterated SHF, NP, FFX.
/// Serialized as its display form, e.g. `"SHF+NP"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct TransformSet(u8);

impl From<TransformSet> for String {
    fn from(set: TransformSet) -> String {
        set.to_string()
    }
}

impl TryFrom<String> for TransformSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl TransformSet {
    pub fn new(transforms: &[Transform]) -> Result<Self> {
        let mask = transforms.iter().fold(0u8, |m, t| m | t.bit());
        if mask == 0 {
            return Err(Error::Config("transform list is empty".into()));
        }
        Ok(TransformSet(mask))
    }

    pub fn contains(self, t: Transform) -> bool {
        self.0 & t.bit() != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Transform> {
        Transform::ALL.into_iter().filter(move |t| self.contains(*t))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn to_vec(self) -> Vec<Transform> {
        self.iter().collect()
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn from_mask(mask: u8) -> Result<Self> {
        if mask == 0 || mask > 7 {
            return Err(Error::Config(format!("invalid transform mask {mask}")));
        }
        Ok(TransformSet(mask))
    }

    /// The six combinations evaluated in the experiment grid.
    pub fn grid() -> [TransformSet; 6] {
        use Transform::*;
        [
            TransformSet(Shf.bit()),
            TransformSet(Np.bit()),
            TransformSet(Ffx.bit()),
            TransformSet(Shf.bit() | Np.bit()),
            TransformSet(Shf.bit() | Ffx.bit()),
            TransformSet(Shf.bit() | Np.bit() | Ffx.bit()),
        ]
    }
}

impl fmt::Display for TransformSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(Transform::name).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for TransformSet {
    type Err = Error;

    /// Accepts `shf,np` or `SHF+NP`.
    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(Transform::from_str)
            .collect::<Result<Vec<_>>>()?;
        TransformSet::new(&parts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySet {
    block_size: usize,
    channels: usize,
    transforms: TransformSet,
    alpha: Option<Vec<usize>>,
    beta: Option<Vec<bool>>,
    gamma: Option<Vec<bool>>,
    password: Option<Vec<u8>>,
    seed: u64,
}

fn fair_bits(n: usize, seed: u64) -> Vec<bool> {
    let mut rng = DetRng::new(seed);
    (0..n).map(|_| rng.bit()).collect()
}

impl KeySet {
    /// Draws a key set; alpha, beta and gamma come from sub-seeds
    /// `seed+1`, `seed+2` and `seed+3`.
    pub fn generate(
        block_size: usize,
        channels: usize,
        transforms: TransformSet,
        seed: u64,
    ) -> Result<Self> {
        Self::generate_with_password(block_size, channels, transforms, seed, DEFAULT_PASSWORD)
    }

    pub fn generate_with_password(
        block_size: usize,
        channels: usize,
        transforms: TransformSet,
        seed: u64,
        password: impl Into<Vec<u8>>,
    ) -> Result<Self> {
        if block_size == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "block size and channels must be >= 1 (M={block_size}, c={channels})"
            )));
        }
        if transforms.is_empty() {
            return Err(Error::Config("transform list is empty".into()));
        }
        let pb = block_size * block_size * channels;
        let alpha = transforms
            .contains(Transform::Shf)
            .then(|| DetRng::new(seed.wrapping_add(1)).permutation(pb));
        let beta = transforms
            .contains(Transform::Np)
            .then(|| fair_bits(pb, seed.wrapping_add(2)));
        let gamma = transforms
            .contains(Transform::Ffx)
            .then(|| fair_bits(pb, seed.wrapping_add(3)));
        let password = transforms.contains(Transform::Ffx).then(|| password.into());
        Ok(KeySet {
            block_size,
            channels,
            transforms,
            alpha,
            beta,
            gamma,
            password,
            seed,
        })
    }

    /// A forged key: same shape and password, components redrawn from `seed`.
    pub fn random_incorrect(&self, seed: u64) -> KeySet {
        let mut k = Self::generate(self.block_size, self.channels, self.transforms, seed)
            .expect("parameters already validated");
        k.password = self.password.clone();
        k
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn block_pixels(&self) -> usize {
        self.block_size * self.block_size * self.channels
    }

    pub fn transforms(&self) -> TransformSet {
        self.transforms
    }

    pub fn alpha(&self) -> Option<&[usize]> {
        self.alpha.as_deref()
    }

    pub fn beta(&self) -> Option<&[bool]> {
        self.beta.as_deref()
    }

    pub fn gamma(&self) -> Option<&[bool]> {
        self.gamma.as_deref()
    }

    pub fn password(&self) -> Option<&[u8]> {
        self.password.as_deref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Exchanges positions `i` and `j` of one key component. Keeps every
    /// invariant (permutations stay permutations, bit counts are preserved).
    pub fn swap(&mut self, component: Transform, i: usize, j: usize) {
        match component {
            Transform::Shf => self.alpha.as_mut().expect("no alpha").swap(i, j),
            Transform::Np => self.beta.as_mut().expect("no beta").swap(i, j),
            Transform::Ffx => self.gamma.as_mut().expect("no gamma").swap(i, j),
        }
    }

    /// Flips bit `i` of beta or gamma.
    pub fn flip(&mut self, component: Transform, i: usize) {
        let bits = match component {
            Transform::Np => self.beta.as_mut().expect("no beta"),
            Transform::Ffx => self.gamma.as_mut().expect("no gamma"),
            Transform::Shf => panic!("alpha is a permutation, not a bit vector"),
        };
        bits[i] = !bits[i];
    }

    /// Replaces alpha; used by attacks and tests that need a chosen permutation.
    pub fn with_alpha(mut self, alpha: Vec<usize>) -> Result<Self> {
        if !self.transforms.contains(Transform::Shf) {
            return Err(Error::InvalidKey {
                field: "alpha",
                message: "key set does not include SHF".into(),
            });
        }
        check_permutation(&alpha, self.block_pixels())?;
        self.alpha = Some(alpha);
        Ok(self)
    }

    pub fn with_bits(mut self, component: Transform, bits: Vec<bool>) -> Result<Self> {
        let field = match component {
            Transform::Np => "beta",
            Transform::Ffx => "gamma",
            Transform::Shf => {
                return Err(Error::InvalidKey {
                    field: "alpha",
                    message: "alpha is not a bit vector".into(),
                })
            }
        };
        if !self.transforms.contains(component) {
            return Err(Error::InvalidKey {
                field,
                message: format!("key set does not include {component}"),
            });
        }
        if bits.len() != self.block_pixels() {
            return Err(length_error(field, bits.len(), self.block_pixels()));
        }
        match component {
            Transform::Np => self.beta = Some(bits),
            _ => self.gamma = Some(bits),
        }
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.channels == 0 {
            return Err(Error::InvalidKey {
                field: "M",
                message: "block size and channels must be >= 1".into(),
            });
        }
        let pb = self.block_pixels();
        let want = |t: Transform| self.transforms.contains(t);
        match (&self.alpha, want(Transform::Shf)) {
            (Some(a), true) => check_permutation(a, pb)?,
            (None, false) => {}
            (_, w) => return Err(presence_error("alpha", w)),
        }
        for (field, bits, t) in [
            ("beta", &self.beta, Transform::Np),
            ("gamma", &self.gamma, Transform::Ffx),
        ] {
            match (bits, want(t)) {
                (Some(b), true) if b.len() != pb => return Err(length_error(field, b.len(), pb)),
                (Some(_), true) | (None, false) => {}
                (_, w) => return Err(presence_error(field, w)),
            }
        }
        if self.password.is_some() != want(Transform::Ffx) {
            return Err(presence_error("password", want(Transform::Ffx)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = KeyFile {
            version: KEY_FILE_VERSION,
            block_size: self.block_size,
            channels: self.channels,
            transforms: self.transforms.to_vec(),
            alpha: self.alpha.clone(),
            beta: self.beta.as_ref().map(|b| b.iter().map(|&x| u8::from(x)).collect()),
            gamma: self.gamma.as_ref().map(|b| b.iter().map(|&x| u8::from(x)).collect()),
            password: self.password.as_ref().map(|p| BASE64.encode(p)),
            seed: self.seed,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: KeyFile = serde_json::from_str(text)?;
        if file.version != KEY_FILE_VERSION {
            return Err(Error::InvalidKey {
                field: "version",
                message: format!("unsupported version {}", file.version),
            });
        }
        let canonical = TransformSet::new(&file.transforms).map_err(|_| Error::InvalidKey {
            field: "transforms",
            message: "transform list is empty".into(),
        })?;
        if canonical.to_vec() != file.transforms {
            return Err(Error::InvalidKey {
                field: "transforms",
                message: "must be distinct and ordered SHF, NP, FFX".into(),
            });
        }
        let bits = |field: &'static str, v: Option<Vec<u8>>| -> Result<Option<Vec<bool>>> {
            v.map(|v| {
                v.into_iter()
                    .map(|x| match x {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(Error::InvalidKey {
                            field,
                            message: format!("entries must be 0 or 1, found {other}"),
                        }),
                    })
                    .collect()
            })
            .transpose()
        };
        let password = file
            .password
            .map(|p| {
                BASE64.decode(p).map_err(|e| Error::InvalidKey {
                    field: "password",
                    message: e.to_string(),
                })
            })
            .transpose()?;
        let key = KeySet {
            block_size: file.block_size,
            channels: file.channels,
            transforms: canonical,
            alpha: file.alpha,
            beta: bits("beta", file.beta)?,
            gamma: bits("gamma", file.gamma)?,
            password,
            seed: file.seed,
        };
        key.validate()?;
        Ok(key)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}

fn check_permutation(alpha: &[usize], pb: usize) -> Result<()> {
    if alpha.len() != pb {
        return Err(length_error("alpha", alpha.len(), pb));
    }
    let mut seen = vec![false; pb];
    for &a in alpha {
        if a >= pb || std::mem::replace(&mut seen[a], true) {
            return Err(Error::InvalidKey {
                field: "alpha",
                message: "alpha not a permutation".into(),
            });
        }
    }
    Ok(())
}

fn length_error(field: &'static str, got: usize, want: usize) -> Error {
    Error::InvalidKey {
        field,
        message: format!("length {got} does not match p_b = {want}"),
    }
}

fn presence_error(field: &'static str, wanted: bool) -> Error {
    Error::InvalidKey {
        field,
        message: if wanted {
            "missing for the listed transforms".into()
        } else {
            "present but its transform is not listed".into()
        },
    }
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    version: u32,
    #[serde(rename = "M")]
    block_size: usize,
    channels: usize,
    transforms: Vec<Transform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    password: Option<String>,
    seed: u64,
}

fn factorial(n: usize) -> BigUint {
    (2..=n).fold(BigUint::from(1u32), |acc, i| acc * BigUint::from(i))
}

/// Number of distinct key sets: `(cM²)!` for SHF and `2^(cM²)` for each of
/// NP and FFX, multiplied over the selected transforms.
pub fn key_space(block_size: usize, channels: usize, transforms: TransformSet) -> BigUint {
    let n = block_size * block_size * channels;
    transforms
        .iter()
        .map(|t| match t {
            Transform::Shf => factorial(n),
            Transform::Np | Transform::Ffx => BigUint::from(1u32) << n,
        })
        .product()
}

/// Number of index pairs `C(cM², 2)` scanned per key component by the
/// key-estimation attack.
pub fn pair_count(block_size: usize, channels: usize) -> Result<u64> {
    let n = (block_size * block_size * channels) as u64;
    if n < 2 {
        return Err(Error::Domain(format!(
            "pair count needs c·M·M >= 2, got {n}"
        )));
    }
    Ok(n * (n - 1) / 2)
}

/// `log2` of a big integer, accurate to f64 precision.
pub fn log2_big(n: &BigUint) -> f64 {
    let bits = n.bits();
    if bits == 0 {
        return f64::NEG_INFINITY;
    }
    let shift = bits.saturating_sub(64);
    let top = (n >> shift).iter_u64_digits().next().unwrap_or(0);
    (top as f64).log2() + shift as f64
}
