//! Statistical-CSI beamforming for multiuser MISO links with dynamic
//! metasurface antennas (DMAs).
//!
//! The crate is `no_std` + `alloc` when the default `std` feature is off.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod channel;
pub mod dma;
pub mod downlink;
pub mod energy;
pub mod error;
pub mod ewr;
pub mod linalg;
pub mod rates;
pub mod rng;
pub mod scenario;
pub mod uplink;

pub use channel::{ChannelFactors, UserStat};
pub use dma::{Constraint, DmaState, MicrostripModel};
pub use energy::Architecture;
pub use error::{Error, Result};
pub use rates::{RateMode, RateReport};
pub use scenario::Scenario;
