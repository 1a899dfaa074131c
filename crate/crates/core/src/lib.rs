//! M-PSK over the K-sector phase-quantized block-noncoherent AWGN channel.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`]: system parameters, PSK mapping, the phase quantizer and the
//!   random channel sampler.
//! - [`transition`]: per-symbol sector probabilities and block conditional
//!   probabilities averaged over the unknown phase.
//! - [`combinatorics`]: canonical output classes and group-restricted input
//!   classes with their multiplicities.
//! - [`capacity`]: exact (symmetry-reduced), brute-force and Monte Carlo
//!   mutual information.
//! - [`demod`]: GLRT block demodulation via crossover-angle candidate sweeps.
//! - [`sim`]: seeded, schedule-independent symbol-error-rate experiments.
//! - [`verify`]: the invariant suite used by `phaseq verify`.

pub mod capacity;
pub mod channel;
pub mod cli;
pub mod combinatorics;
pub mod demod;
pub mod error;
pub mod quadrature;
pub mod sim;
pub mod transition;
pub mod verify;

pub use channel::{modulate, quantize, sample_block, ChannelDraw, DitherMode, SystemConfig};
pub use error::{Error, Result};
pub use transition::{DitheredKernel, TransitionKernel};
