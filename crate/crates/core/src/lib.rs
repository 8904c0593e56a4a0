// SPDX-License-Identifier: Apache-2.0

pub mod decompose;
pub mod design;
pub mod error;
pub mod eval;
pub mod heatmap;
pub mod maxcnn;
pub mod mitigate;
pub mod nn;
pub mod oracle;
pub mod pipeline;

pub use error::{Error, Result};
