//! Architecture synthesis for linear input-varying (LIV) sequence models.
//!
//! Backbones are encoded as integer genomes ([`genome`]), compiled into
//! executable operator stacks ([`liv`]) trained with a small reverse-mode
//! engine ([`grad`], [`train`]), scored by static cost models ([`cost`]) and
//! synthetic tasks ([`fitness`]), and evolved with gradient-free optimizers
//! ([`evolve`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! precision used by the evolution pipeline.

pub mod analysis;
pub mod cost;
pub mod evolve;
pub mod fitness;
pub mod genome;
pub mod grad;
pub mod liv;
pub mod rng;
pub mod runlog;
pub mod scalar;
pub mod train;

pub use scalar::Scalar;

// Storage precision for training during evolution.
pub type Real = f32;

pub type Tensor = grad::Tensor<Real>;
pub type Tape = grad::Tape<Real>;
pub type CompiledBackbone = liv::CompiledBackbone<Real>;

// Double precision variants, used by finite-difference checks.
pub type Tensor64 = grad::Tensor<f64>;
pub type Tape64 = grad::Tape<f64>;
pub type CompiledBackbone64 = liv::CompiledBackbone<f64>;
