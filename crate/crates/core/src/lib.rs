//! Trainable RBF warpings of a latent space whose traversal directions are
//! aligned, through a contrastive loss, with the gradient fields that pairs of
//! contrasting embeddings ("semantic dipoles") induce in an embedding space.

pub mod ablation;
pub mod dipole;
pub mod encoder;
pub mod error;
pub mod fieldmap;
pub mod grad;
pub mod io;
pub mod linalg;
pub mod objective;
pub mod optim;
pub mod testbed;
pub mod trainer;
pub mod traversal;
pub mod warp;

pub use error::{Error, Result};
