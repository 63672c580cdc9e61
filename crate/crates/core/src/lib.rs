//! Block-wise keyed image transformation for protecting image classifiers.
//!
//! A [`KeySet`] drives a [`TransformPipeline`] that scrambles `M×M` blocks of
//! every input image. A classifier trained on transformed images only works
//! when queried with the same key. The crate also carries the toy training
//! harness, the adversary procedures and the analysis instruments used to
//! measure that access-control property.

pub mod analysis;
pub mod attacks;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fpe;
pub mod keyset;
pub mod learner;
pub mod pnm;
pub mod rng;
pub mod tensor;
pub mod transforms;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use fpe::FeistelCipher;
pub use keyset::{key_space, pair_count, KeySet, Transform, TransformSet};
pub use learner::{Classifier, TrainConfig};
pub use tensor::{integrate, segment, BlockTensor, ImageTensor};
pub use transforms::TransformPipeline;
