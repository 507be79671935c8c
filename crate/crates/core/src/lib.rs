//! Conditional random fields over hidden feature maps and body-joint score
//! maps, with message passing among features realized as convolutions.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`ops`], [`tape`], [`params`], [`checkpoint`]: dense tensors,
//!   same-padded convolution, reverse-mode gradients, SGD and the binary
//!   tensor container.
//! - [`graph`]: joint graphs (tree and loopy), factor graphs and message routes.
//! - [`message`]: convolutional message passing under serial or flooding routes.
//! - [`oracle`]: small discrete CRFs with exact inference for verification.
//! - [`model`]: the image-to-score-map pipeline, its loss and training loop.
//! - [`synth`]: synthetic stick-figure data plus PCP/PCK metrics.
//! - [`cli`]: the command implementations behind the `crfcnn` binary.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod graph;
pub mod message;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod params;
pub mod skeleton;
pub mod study;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{ConvKernel, Tensor};
