//! Frequency-regularized network parameters, desk-scale trainers, and
//! caption evaluation tooling.
//!
//! The core idea: keep every trainable tensor in the DCT domain, zero all
//! coefficients outside a zigzag prefix, reconstruct spatial weights with the
//! inverse transform for forward/backward passes, and shrink the prefix over
//! training with a decaying schedule. Storage then needs only the kept
//! prefix, serialized as half-precision values.
//!
//! Modules:
//! - [`tensor`], [`rng`]: dense f64 tensors and deterministic seeded RNG.
//! - [`spectral`]: orthonormal DCT-II/IDCT and zigzag ordering.
//! - [`freqparam`]: frequency-domain parameters, truncation schedules,
//!   compression reports, binary serialization.
//! - [`checkpoint`]: directory checkpoints with a JSON manifest.
//! - [`nn`]: FR conv/linear layers with manual backprop, AlexNet /
//!   EfficientNetB0 / LeNet5 builders, and an SGD trainer.
//! - [`caption`]: a toy encoder-decoder captioner over synthetic scenes.
//! - [`metrics`]: BLEU-1..4, ROUGE-1/2/L, METEOR with 5-reference averaging.
//! - [`dataio`]: COCO-style annotation ingestion, exactly-5-caption
//!   filtering, split emission, prediction files.

pub mod caption;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod freqparam;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod spectral;
mod stem;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
