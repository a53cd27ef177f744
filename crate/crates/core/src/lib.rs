//! Joint sparse-channel estimation and decoding for coded OFDM.
//!
//! The receiver runs relaxed belief propagation over the channel taps with a
//! Gaussian-mixture measurement model built from soft symbol beliefs, and
//! exchanges extrinsic bit information with an LDPC sum-product decoder in a
//! turbo loop. Baseline pilot-aided receivers and a Monte Carlo harness are
//! included for comparison.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod baselines;
pub mod channel;
pub mod error;
pub mod harness;
pub mod jced;
pub mod ldpc;
pub mod modem;
pub mod numerics;
pub mod oracle;
pub mod rbp;
pub mod rng;

pub use error::{Error, Result};
pub use numerics::C64;
