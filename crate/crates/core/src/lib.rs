//! Object detection as denoising diffusion over bounding boxes.
//!
//! Ground-truth boxes are padded to a fixed count, mapped into a signal
//! space, and corrupted by a cosine-scheduled Gaussian forward process. A
//! small cascaded decoder learns to predict the clean boxes and their
//! classes; at inference time boxes are recovered from pure noise by DDIM
//! stepping with box renewal, and the per-step detections are ensembled by
//! NMS.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, logging
//! sinks and the command-line front end live in the `diffbox` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod corruption;
pub mod denoiser;
mod error;
pub mod evaluation;
pub mod geometry;
mod math;
pub mod neural;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, CornerBox};
pub use schedule::Schedule;
