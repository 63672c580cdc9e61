//! Keyed block-wise transformations: pixel shuffling (SHF), negative/positive
//! flipping (NP) and format-preserving encryption (FFX).
//!
//! The single-step operators (`apply_*`) act on a [`BlockTensor`] in the
//! `[0, 1]` domain. [`TransformPipeline::transform`] composes them on 8-bit
//! codes with one quantization at the input and one rescale at the output:
//! `/255` without FFX, `/999` (the cipher domain maximum) with it.

use crate::error::{Error, Result};
use crate::fpe::{FeistelCipher, DOMAIN_MAX};
use crate::keyset::{KeySet, Transform};
use crate::tensor::{block_index_map, quantize, BlockTensor, ImageTensor};

fn check_len(what: &str, len: usize, pb: usize) -> Result<()> {
    if len != pb {
        return Err(Error::Dimension(format!(
            "{what} has length {len}, block has {pb} pixels"
        )));
    }
    Ok(())
}

/// Scatter every block through `alpha`: `out[alpha[k]] = in[k]`.
pub fn apply_shf(blocks: &BlockTensor, alpha: &[usize]) -> Result<BlockTensor> {
    check_len("alpha", alpha.len(), blocks.block_pixels())?;
    let mut out = blocks.clone();
    for (src, dst) in blocks.blocks().zip(out.blocks_mut()) {
        for (k, &a) in alpha.iter().enumerate() {
            dst[a] = src[k];
        }
    }
    Ok(out)
}

/// Complement the 8-bit value (`v XOR 255`) wherever `beta[k]` is set.
pub fn apply_np(blocks: &BlockTensor, beta: &[bool]) -> Result<BlockTensor> {
    check_len("beta", beta.len(), blocks.block_pixels())?;
    let mut out = blocks.clone();
    for block in out.blocks_mut() {
        for (v, &flip) in block.iter_mut().zip(beta) {
            let q = quantize(*v);
            *v = f32::from(if flip { q ^ 0xff } else { q }) / 255.0;
        }
    }
    Ok(out)
}

/// Encrypt the 8-bit value wherever `gamma[k]` is set, then divide every
/// value by 999.
pub fn apply_ffx(
    blocks: &BlockTensor,
    gamma: &[bool],
    cipher: &FeistelCipher,
) -> Result<BlockTensor> {
    check_len("gamma", gamma.len(), blocks.block_pixels())?;
    let mut out = blocks.clone();
    for block in out.blocks_mut() {
        for (v, &enc) in block.iter_mut().zip(gamma) {
            let q = quantize(*v);
            let e = if enc { cipher.encrypt_u8(q) } else { u16::from(q) };
            *v = f32::from(e) / f32::from(DOMAIN_MAX);
        }
    }
    Ok(out)
}

/// A key set bound to its cipher, ready to transform images.
#[derive(Debug, Clone)]
pub struct TransformPipeline {
    keyset: KeySet,
    cipher: Option<FeistelCipher>,
    // per intra-block position k: destination position, NP flag, FFX flag
    dest: Vec<usize>,
    flip: Vec<bool>,
    encrypt: Vec<bool>,
}

impl TransformPipeline {
    pub fn new(keyset: KeySet) -> Self {
        let cipher = keyset.password().map(FeistelCipher::new);
        Self::build(keyset, cipher)
    }

    fn build(keyset: KeySet, cipher: Option<FeistelCipher>) -> Self {
        let pb = keyset.block_pixels();
        let dest = keyset
            .alpha()
            .map(<[usize]>::to_vec)
            .unwrap_or_else(|| (0..pb).collect());
        let flip = keyset.beta().map(<[bool]>::to_vec).unwrap_or_else(|| vec![false; pb]);
        let encrypt = keyset.gamma().map(<[bool]>::to_vec).unwrap_or_else(|| vec![false; pb]);
        TransformPipeline {
            keyset,
            cipher,
            dest,
            flip,
            encrypt,
        }
    }

    /// Pipeline for another key, reusing this cipher when the password matches.
    pub fn rekey(&self, keyset: KeySet) -> Self {
        match (&self.cipher, keyset.password()) {
            (Some(c), Some(pw)) if c.password() == pw => {
                let cipher = self.cipher.clone();
                TransformPipeline { cipher, ..Self::build(keyset, None) }
            }
            _ => Self::new(keyset),
        }
    }

    pub fn keyset(&self) -> &KeySet {
        &self.keyset
    }

    pub fn cipher(&self) -> Option<&FeistelCipher> {
        self.cipher.as_ref()
    }

    fn block_map(&self, image: &ImageTensor) -> Result<Vec<usize>> {
        let (c, h, w) = image.dims();
        if c != self.keyset.channels() {
            return Err(Error::Dimension(format!(
                "key set is for {} channels, image has {c}",
                self.keyset.channels()
            )));
        }
        block_index_map(c, h, w, self.keyset.block_size())
    }

    /// Segment, apply SHF then NP then FFX, integrate.
    pub fn transform(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let map = self.block_map(image)?;
        let codes = image.to_u8();
        let pb = self.keyset.block_pixels();
        let ffx = self.cipher.as_ref();
        let scale = if ffx.is_some() { f32::from(DOMAIN_MAX) } else { 255.0 };
        let mut out = vec![0f32; codes.len()];
        for base in (0..map.len()).step_by(pb) {
            let block = &map[base..base + pb];
            for k in 0..pb {
                let d = self.dest[k];
                let mut v = codes[block[k]];
                if self.flip[d] {
                    v ^= 0xff;
                }
                let v = match ffx {
                    Some(cipher) if self.encrypt[d] => cipher.encrypt_u8(v),
                    _ => u16::from(v),
                };
                out[block[d]] = f32::from(v) / scale;
            }
        }
        let (c, h, w) = image.dims();
        ImageTensor::new(c, h, w, out)
    }

    pub fn transform_all<'a>(
        &self,
        images: impl IntoIterator<Item = &'a ImageTensor>,
    ) -> Result<Vec<ImageTensor>> {
        images.into_iter().map(|im| self.transform(im)).collect()
    }

    /// Undo SHF and NP. Pipelines with FFX are rejected.
    pub fn invert(&self, image: &ImageTensor) -> Result<ImageTensor> {
        if self.keyset.transforms().contains(Transform::Ffx) {
            return Err(Error::Unsupported(
                "FFX output is rescaled by 999 and cannot be inverted".into(),
            ));
        }
        let map = self.block_map(image)?;
        let codes = image.to_u8();
        let pb = self.keyset.block_pixels();
        let mut out = vec![0f32; codes.len()];
        for base in (0..map.len()).step_by(pb) {
            let block = &map[base..base + pb];
            for k in 0..pb {
                let d = self.dest[k];
                let mut v = codes[block[d]];
                if self.flip[d] {
                    v ^= 0xff;
                }
                out[block[k]] = f32::from(v) / 255.0;
            }
        }
        let (c, h, w) = image.dims();
        ImageTensor::new(c, h, w, out)
    }
}

/// Block-tensor route through the single-step operators, in canonical order.
/// Used to cross-check the fused pipeline.
pub fn transform_stepwise(image: &ImageTensor, keyset: &KeySet) -> Result<ImageTensor> {
    let m = keyset.block_size();
    let mut blocks = crate::tensor::segment(&image.quantized(), m)?;
    if let Some(alpha) = keyset.alpha() {
        blocks = apply_shf(&blocks, alpha)?;
    }
    if let Some(beta) = keyset.beta() {
        blocks = apply_np(&blocks, beta)?;
    }
    if let (Some(gamma), Some(pw)) = (keyset.gamma(), keyset.password()) {
        blocks = apply_ffx(&blocks, gamma, &FeistelCipher::new(pw))?;
    }
    crate::tensor::integrate(&blocks, m)
}
