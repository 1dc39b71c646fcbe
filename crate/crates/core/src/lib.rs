//! Human-in-the-loop thematic analysis of interview transcripts.
//!
//! The pipeline runs in three stages: per-statement topic extraction with an
//! LLM ([`extraction`]), density-based clustering of the extracted topics
//! ([`clustering`]) and cluster naming. Every artifact the model produces is
//! kept traceable back to the transcript span it came from ([`project`]) and
//! routed through a human review and edit workflow ([`review`]). Coder
//! agreement statistics live in [`agreement`].

pub mod agreement;
pub mod chat;
pub mod clock;
pub mod clustering;
pub mod extraction;
pub mod gateway;
pub mod ids;
pub mod project;
pub mod review;
pub mod state;
pub mod text;
pub mod transcript;
pub mod workflow;

pub use clock::{Clock, FixedClock, SystemClock};
pub use ids::{AssignmentId, ClusterId, EventId, ProjectId, RunId, TranscriptId};
