//! Pauli channel learning: channel representations, adaptive-scheme
//! simulation, learning protocols and sample-complexity bounds.

pub mod bounds;
pub mod channel;
pub mod cover;
pub mod error;
pub mod linalg;
pub mod pauli;
pub mod protocols;
pub mod random;
pub mod scheme;
pub mod tvd;

pub use channel::{PauliChannel, Partition, Sign};
pub use error::{Error, Result};
pub use pauli::PauliString;
pub use scheme::{Instrument, KrausBranch, Povm, SchemePolicy, SeparableScheme};
