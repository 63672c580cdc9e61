//! Model checkpoint file.
//!
//! Little-endian throughout:
//!
//! | offset | size | field                                    |
//! |--------|------|------------------------------------------|
//! | 0      | 4    | magic `BKNN`                             |
//! | 4      | 4    | format version (1)                       |
//! | 8      | 4    | architecture id (1 = two-conv network)   |
//! | 12     | 4    | channels                                 |
//! | 16     | 4    | height                                   |
//! | 20     | 4    | width                                    |
//! | 24     | 4    | classes                                  |
//! | 28     | 4    | key block size M (0 = unprotected)       |
//! | 32     | 4    | key transform mask SHF=1 NP=2 FFX=4      |
//! | 36     | 8    | parameter count `n`                      |
//! | 44     | 4·n  | f32 parameters in layout order           |

use std::fs;
use std::path::Path;

use super::{Arch, Classifier, Protection};
use crate::error::{Error, Result};
use crate::keyset::TransformSet;

const MAGIC: &[u8; 4] = b"BKNN";
const VERSION: u32 = 1;
const ARCH_TWO_CONV: u32 = 1;
const HEADER_LEN: usize = 44;

impl Classifier {
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = self.arch;
        let (m, mask) = self
            .protection
            .map_or((0, 0), |p| (p.block_size as u32, u32::from(p.transforms.mask())));
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            ARCH_TWO_CONV,
            a.channels as u32,
            a.height as u32,
            a.width as u32,
            a.classes as u32,
            m,
            mask,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Checkpoint(format!(
                "file is {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        if word(1) != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", word(1))));
        }
        if word(2) != ARCH_TWO_CONV {
            return Err(Error::Checkpoint(format!("unknown architecture id {}", word(2))));
        }
        let dims = (word(3) as usize, word(4) as usize, word(5) as usize);
        let model = Classifier::uniform(dims, word(6) as usize, 0.0)?;
        let arch: Arch = model.arch;
        let protection = match (word(7), word(8)) {
            (0, 0) => None,
            (m, mask) if m > 0 && mask <= u32::from(u8::MAX) => Some(Protection {
                block_size: m as usize,
                transforms: TransformSet::from_mask(mask as u8)?,
            }),
            (m, mask) => {
                return Err(Error::Checkpoint(format!(
                    "inconsistent protection fields M={m} mask={mask}"
                )))
            }
        };
        let n = u64::from_le_bytes(bytes[36..44].try_into().unwrap()) as usize;
        if n != arch.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {n} does not match architecture ({})",
                arch.param_count()
            )));
        }
        let blob = &bytes[HEADER_LEN..];
        if blob.len() != 4 * n {
            return Err(Error::Checkpoint(format!(
                "weight blob is {} bytes, expected {}",
                blob.len(),
                4 * n
            )));
        }
        let params = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Classifier::from_parts(arch, params, protection))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::file(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut m = Classifier::new((3, 8, 8), 5, 3).unwrap();
        m.set_protection(Some(Protection {
            block_size: 4,
            transforms: "shf,ffx".parse().unwrap(),
        }));
        let back = Classifier::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn header_layout() {
        let m = Classifier::new((1, 4, 8), 2, 3).unwrap();
        let b = m.to_bytes();
        assert_eq!(&b[..4], b"BKNN");
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 8);
        assert_eq!(b.len(), 44 + 4 * m.params().len());
    }

    #[test]
    fn corrupt_files_rejected() {
        let m = Classifier::new((3, 8, 8), 4, 3).unwrap();
        let b = m.to_bytes();
        assert!(Classifier::from_bytes(&b[..40]).is_err());
        assert!(Classifier::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Classifier::from_bytes(&bad).is_err());
        let mut bad = b;
        bad[4] = 9;
        assert!(Classifier::from_bytes(&bad).is_err());
    }
}
