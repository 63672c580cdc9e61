//! Image tensors and the block segmentation / integration pair.
//!
//! Images are stored channel-major (`c × h × w`). A [`BlockTensor`] holds
//! `h/M × w/M` blocks, each flattened to `p_b = M·M·c` values in the
//! canonical order `k = (r·M + q)·c + ch` for intra-block row `r`, column `q`
//! and channel `ch`. Blocks keep their spatial order, row-major.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image from channel-major data, checking length and range.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image dims must be non-zero, got c={channels} h={height} w={width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "expected {} values for c={channels} h={height} w={width}, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!(
                "pixel value {} at index {pos} outside [0, 1]",
                data[pos]
            )));
        }
        Ok(ImageTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Maps 8-bit samples (channel-major) to `[0, 1]` by division by 255.
    pub fn from_u8(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, ch: usize, row: usize, col: usize) -> usize {
        (ch * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, ch: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(ch, row, col)]
    }

    /// Sets one sample, clamping into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, ch: usize, row: usize, col: usize, value: f32) {
        let i = self.index(ch, row, col);
        self.data[i] = value.clamp(0.0, 1.0);
    }

    /// 8-bit codes with round-half-away-from-zero.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// The image after an 8-bit round trip.
    pub fn quantized(&self) -> ImageTensor {
        ImageTensor {
            data: self.data.iter().map(|&v| f32::from(quantize(v)) / 255.0).collect(),
            ..self.clone()
        }
    }
}

/// `[0, 1]` value to an 8-bit code, rounding half away from zero.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockTensor {
    block_rows: usize,
    block_cols: usize,
    block_pixels: usize,
    data: Vec<f32>,
}

impl BlockTensor {
    pub fn new(
        block_rows: usize,
        block_cols: usize,
        block_pixels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != block_rows * block_cols * block_pixels {
            return Err(Error::Dimension(format!(
                "block tensor {block_rows}x{block_cols}x{block_pixels} needs {} values, got {}",
                block_rows * block_cols * block_pixels,
                data.len()
            )));
        }
        Ok(BlockTensor {
            block_rows,
            block_cols,
            block_pixels,
            data,
        })
    }

    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    pub fn block_cols(&self) -> usize {
        self.block_cols
    }

    pub fn block_pixels(&self) -> usize {
        self.block_pixels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// The flattened block at block-row `i`, block-column `j`.
    pub fn block(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.block_cols + j) * self.block_pixels;
        &self.data[start..start + self.block_pixels]
    }

    pub fn blocks(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.block_pixels)
    }

    pub fn blocks_mut(&mut self) -> std::slice::ChunksExactMut<'_, f32> {
        self.data.chunks_exact_mut(self.block_pixels)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[(i * self.block_cols + j) * self.block_pixels + k]
    }
}

/// For each position of the block layout, the channel-major image index it
/// comes from. `map[(i·w_b + j)·p_b + k]` is the source of block element `k`.
pub fn block_index_map(
    channels: usize,
    height: usize,
    width: usize,
    block: usize,
) -> Result<Vec<usize>> {
    check_divisible(height, width, block)?;
    let (hb, wb) = (height / block, width / block);
    let pb = block * block * channels;
    let mut map = vec![0usize; hb * wb * pb];
    for i in 0..hb {
        for j in 0..wb {
            let base = (i * wb + j) * pb;
            for r in 0..block {
                for q in 0..block {
                    for ch in 0..channels {
                        let k = (r * block + q) * channels + ch;
                        map[base + k] = (ch * height + i * block + r) * width + j * block + q;
                    }
                }
            }
        }
    }
    Ok(map)
}

fn check_divisible(height: usize, width: usize, block: usize) -> Result<()> {
    if block == 0 || height % block != 0 || width % block != 0 {
        return Err(Error::Dimension(format!(
            "block size M={block} must divide h={height} and w={width}"
        )));
    }
    Ok(())
}

/// Splits an image into `M×M` blocks and flattens each block.
pub fn segment(image: &ImageTensor, block: usize) -> Result<BlockTensor> {
    let (c, h, w) = image.dims();
    let map = block_index_map(c, h, w, block)?;
    let data = map.iter().map(|&src| image.data[src]).collect();
    BlockTensor::new(h / block, w / block, block * block * c, data)
}

/// Reassembles blocks into a `c × h × w` image; inverse of [`segment`].
pub fn integrate(blocks: &BlockTensor, block: usize) -> Result<ImageTensor> {
    let area = block * block;
    if block == 0 || blocks.block_pixels == 0 || blocks.block_pixels % area != 0 {
        return Err(Error::Dimension(format!(
            "block_pixels={} is not a multiple of M·M={area}",
            blocks.block_pixels
        )));
    }
    let c = blocks.block_pixels / area;
    let (h, w) = (blocks.block_rows * block, blocks.block_cols * block);
    let map = block_index_map(c, h, w, block)?;
    let mut data = vec![0f32; c * h * w];
    for (&dst, &v) in map.iter().zip(&blocks.data) {
        data[dst] = v;
    }
    ImageTensor::new(c, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = DetRng::new(seed);
        let data = (0..c * h * w).map(|_| rng.unit() as f32).collect();
        ImageTensor::new(c, h, w, data).unwrap()
    }

    #[test]
    fn single_block_holds_everything() {
        let img = random_image(3, 2, 2, 1);
        let b = segment(&img, 2).unwrap();
        assert_eq!((b.block_rows(), b.block_cols(), b.block_pixels()), (1, 1, 12));
        let mut a: Vec<f32> = img.data().to_vec();
        let mut bb: Vec<f32> = b.data().to_vec();
        a.sort_by(f32::total_cmp);
        bb.sort_by(f32::total_cmp);
        assert_eq!(a, bb);
        // canonical order: channels fastest
        assert_eq!(b.get(0, 0, 0), img.get(0, 0, 0));
        assert_eq!(b.get(0, 0, 1), img.get(1, 0, 0));
        assert_eq!(b.get(0, 0, 3), img.get(0, 0, 1));
        assert_eq!(b.get(0, 0, 6), img.get(0, 1, 0));
    }

    #[test]
    fn block_0_1_is_columns_2_and_3() {
        let img = random_image(3, 4, 4, 2);
        let b = segment(&img, 2).unwrap();
        assert_eq!((b.block_rows(), b.block_cols(), b.block_pixels()), (2, 2, 12));
        for r in 0..2 {
            for q in 0..2 {
                for ch in 0..3 {
                    let k = (r * 2 + q) * 3 + ch;
                    assert_eq!(b.get(0, 1, k), img.get(ch, r, 2 + q));
                }
            }
        }
    }

    #[test]
    fn cifar_sized_dims() {
        let img = ImageTensor::zeros(3, 32, 32);
        let b = segment(&img, 4).unwrap();
        assert_eq!((b.block_rows(), b.block_cols(), b.block_pixels()), (8, 8, 48));
    }

    #[test]
    fn non_divisible_rejected() {
        let img = ImageTensor::zeros(3, 6, 8);
        let err = segment(&img, 4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("h=6") && msg.contains("w=8") && msg.contains("M=4"), "{msg}");
    }

    #[test]
    fn round_trip_8x8() {
        let img = random_image(3, 8, 8, 3);
        for m in [1, 2, 4, 8] {
            assert_eq!(integrate(&segment(&img, m).unwrap(), m).unwrap(), img);
        }
    }

    #[test]
    fn integrate_single_block() {
        let data: Vec<f32> = (0..12).map(|v| v as f32 / 11.0).collect();
        let b = BlockTensor::new(1, 1, 12, data).unwrap();
        let img = integrate(&b, 2).unwrap();
        assert_eq!(img.dims(), (3, 2, 2));
        assert_eq!(segment(&img, 2).unwrap(), b);
    }

    #[test]
    fn integrate_rejects_inconsistent_block_pixels() {
        let b = BlockTensor::new(1, 1, 10, vec![0.0; 10]).unwrap();
        assert!(matches!(integrate(&b, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn swapping_blocks_changes_image() {
        // Brute force over every swap of the two blocks of a random 4x2x3 image
        // (h=4, w=2, M=2 gives a 2x1 block grid).
        let img = random_image(3, 4, 2, 4);
        let b = segment(&img, 2).unwrap();
        let nblocks = b.block_rows() * b.block_cols();
        for x in 0..nblocks {
            for y in 0..nblocks {
                let mut order: Vec<usize> = (0..nblocks).collect();
                order.swap(x, y);
                let mut data = Vec::new();
                for &src in &order {
                    data.extend_from_slice(&b.data()[src * 12..(src + 1) * 12]);
                }
                let back = integrate(&BlockTensor::new(2, 1, 12, data).unwrap(), 2).unwrap();
                assert_eq!(back == img, x == y, "swap ({x},{y})");
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ImageTensor::new(1, 1, 2, vec![0.5, 1.5]).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn quantize_rounds_half_away() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(100.0 / 255.0), 100);
        assert_eq!(quantize(0.5 / 255.0 + 1e-7), 1);
    }
}
