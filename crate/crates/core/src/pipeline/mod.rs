//! The live loop: segmentation, inference, dispatch, session logging,
//! replay and the network service.

mod engine;
mod log;
pub mod protocol;
mod queue;
mod replay;
mod runtime;
mod segment;
mod service;
mod source;

use thiserror::Error;

use crate::actions::ActionError;
use crate::classifier::ClassifierError;
use crate::frame::container::ContainerError;
use crate::translator::TranslatorError;

pub use engine::{ActionRecord, Engine, GestureRecord, Models, Record, RejectionRecord, StateSnapshot, StepOutput};
pub use log::{
    decode_record, encode_record, read_session_log, SessionLogWriter, SESSION_MAGIC, TAG_ACTION, TAG_FRAME,
    TAG_GESTURE, TAG_REJECTION,
};
pub use queue::{drop_oldest, DropOldest};
pub use replay::{decision_bytes, diff_decisions, replay, ReplayOutcome};
pub use runtime::{Ingest, Runtime, RuntimeOptions, RuntimeSummary, Stats, StatsSnapshot, Subscription};
pub use segment::{frame_mass, Segment, Segmenter, SegmenterConfig};
pub use service::{Service, ServiceOptions};
pub use source::{spawn_demo, DemoSource, PlacedGesture, TouchSession};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("startup failed: {0}")]
    Startup(String),
    #[error("session log: {0}")]
    Log(String),
    #[error("session log: {0}")]
    Container(ContainerError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Translator(#[from] TranslatorError),
    #[error(transparent)]
    Action(#[from] ActionError),
}
