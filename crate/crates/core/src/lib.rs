//! Underwater acoustic link simulation: doubly-dispersive channel matrices,
//! the ZP-OFDM baseline modem, the worst-case-weighted rate criterion with
//! its analytic gradient, Monte Carlo link evaluation, and binary
//! persistence.

pub mod channel;
pub mod config;
pub mod criterion;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod modem;
pub mod rng;

pub use channel::{ChannelMatrix, PathSet};
pub use config::{Dims, NoiseModel, SystemConfig};
pub use error::{Error, Result};
pub use modem::{EquivalentChannel, Modem};
pub use rng::{spawn_stream, RandomStream};
