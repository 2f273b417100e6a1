//! Conversational floor tracking for small-group talk.

pub mod cues;
pub mod engine;
pub mod error;
pub mod eval;
pub mod io;
pub mod mixer;
pub mod model;
pub mod sim;
pub mod turns;
pub mod vad;

pub use error::{Error, Result};
pub use model::{AffiliationInterval, CueKind, FloorId, ParticipantId, SchismCue, TokenAnnotation, Turn, VadSegment};
