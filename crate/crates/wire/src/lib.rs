//! Chunk transport between machines and scripted fault injection.
//!
//! - [`frame`]: the binary frame layout, with encode and decode;
//! - [`transport`]: length-prefixed frames over any byte stream (TCP);
//! - [`faults`]: fault schedules and their effect on an edge's chunk stream.

pub mod error;
pub mod faults;
pub mod frame;
pub mod transport;

pub use error::{FaultError, WireError};
pub use faults::{
    apply_faults, corrupt_frame, transmit, EdgeAction, EdgeFaults, EdgeId, FaultEvent,
    FaultSchedule,
};
pub use frame::{bit_identical, decode, encode, MAGIC, VERSION};
pub use transport::{FrameReader, FrameWriter, MAX_FRAME};
