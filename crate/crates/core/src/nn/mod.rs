// SPDX-License-Identifier: Apache-2.0

//! Dense-tensor network kernels with exact backpropagation.

mod adam;
mod checkpoint;
mod gemm;
mod infer;
pub mod gradcheck;
pub mod layers;
mod loss;
mod model;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub(crate) use checkpoint::Reader;
pub use loss::{l1_batch, l1_loss};
pub use infer::{FoldedCnn, Scratch, INFER_CHUNK};
pub use model::{Arch, BnMode, Cnn, ForwardCache, Grads};
pub use tensor::Tensor;
