//! Unsupervised prompt-vector learning for image captioning.
//!
//! The crate implements the full training laboratory around a frozen
//! encoder/decoder/scorer/autoencoder stack: intra-domain attribute
//! transfer in a latent grid, attribute- and semantic-consistency
//! rewards in a joint image–text space, self-critical policy-gradient
//! optimization of a small block of prompt vectors, and the usual
//! caption evaluation battery (BLEU, ROUGE-L, CIDEr, CLIP-S, diversity
//! statistics).
//!
//! Everything runs against the [`backend::Backend`] trait family. The
//! in-repo implementation is [`backend::toy::ToyBackend`], a small,
//! fully deterministic, hand-differentiated model stack that makes
//! every formula testable at desk scale; real model stacks attach by
//! implementing the same traits.
//!
//! Numeric layout: transient math runs in [`Scalar`] (`f64`), while
//! persistent state (prompt checkpoints, optimizer moments, backend
//! parameter blobs, embedding files) is stored as IEEE-754 `f32`, so
//! save/load round-trips are bitwise and runs are reproducible from a
//! single seed.
//!
//! ```
//! use geneic_core::backend::{build_toy_backend, DecodeMode, DimSpec, Grid3, ImageSample};
//! use geneic_core::prompt::{compose_input, init_prompt};
//!
//! let bundle = build_toy_backend(0, DimSpec::default())?;
//! let image = ImageSample::new("demo", Grid3::zeros(8, 8, 1))?;
//! let visual = bundle.model().encode_image(&image)?;
//! let prompt = init_prompt(8, bundle.dims().d_dec, 0)?;
//! let input = compose_input(&visual, &prompt)?;
//! let caption = bundle.model().decode(&input, DecodeMode::Greedy, 5, 1.0, 0)?;
//! assert!(!caption.text.is_empty());
//! # Ok::<(), geneic_core::Error>(())
//! ```
//!
//! The reusable numeric kernels are generic over [`scalar::Real`].

pub mod backend;
pub mod clustering;
pub mod error;
pub mod fsutil;
pub mod interpret;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod prompt;
pub mod rng;
pub mod scalar;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};

/// Scalar type used for all transient pipeline computation.
pub type Scalar = f64;

/// Matrix of pipeline scalars (row-major).
pub type Mat = math::Matrix<Scalar>;
