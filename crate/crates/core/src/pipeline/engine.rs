use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::segment::{Segment, Segmenter, SegmenterConfig};
use super::PipelineError;
use crate::actions::{ActionTable, Dispatch, DogState, Poses, Posture, RejectReason};
use crate::classifier::Classifier;
use crate::frame::TactileCanvas;
use crate::taxonomy::{ClassId, Taxonomy};
use crate::translator::{Translator, MAX_CONTENT_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureRecord {
    /// Tick at which the event closed.
    pub tick: u64,
    pub start_tick: u64,
    pub end_tick: u64,
    pub class: String,
    pub kind: String,
    pub part: Option<String>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub tick: u64,
    pub action: String,
    pub duration_ticks: u32,
    pub motor_params: Poses,
    pub resulting_posture: Posture,
    /// The translator produced no action word and the fallback was used.
    pub fallback: bool,
    pub history: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub tick: u64,
    pub action: String,
    pub reason: RejectReason,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub tick: u64,
    pub posture: Posture,
    pub current_action: Option<String>,
    pub remaining_ticks: u32,
    pub body_part_poses: Poses,
    pub history: Vec<String>,
}

/// One session-log entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Frame(TactileCanvas),
    Gesture(GestureRecord),
    Action(ActionRecord),
    Rejection(RejectionRecord),
}

impl Record {
    pub fn tick(&self) -> u64 {
        match self {
            Record::Frame(c) => c.tick,
            Record::Gesture(g) => g.tick,
            Record::Action(a) => a.tick,
            Record::Rejection(r) => r.tick,
        }
    }

    pub fn is_frame(&self) -> bool {
        matches!(self, Record::Frame(_))
    }
}

/// Result of feeding one canvas.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub records: Vec<Record>,
    pub state: StateSnapshot,
    /// Wall time spent on each closed event, classification through dispatch.
    pub event_latency: Vec<Duration>,
}

/// Trained models and the action table the engine runs with.
#[derive(Debug, Clone)]
pub struct Models {
    pub taxonomy: Arc<Taxonomy>,
    pub classifier: Arc<Classifier>,
    pub translator: Arc<Translator>,
    pub actions: Arc<ActionTable>,
}

impl Models {
    /// Rejects components built for different taxonomies.
    pub fn new(
        taxonomy: Arc<Taxonomy>,
        classifier: Classifier,
        translator: Translator,
        actions: ActionTable,
    ) -> Result<Self, PipelineError> {
        if classifier.config().class_count != taxonomy.classes().len() {
            return Err(PipelineError::Startup(format!(
                "classifier has {} classes, taxonomy has {}",
                classifier.config().class_count,
                taxonomy.classes().len()
            )));
        }
        if actions.taxonomy().vocabulary_fingerprint() != taxonomy.vocabulary_fingerprint() {
            return Err(PipelineError::Startup("action table uses a different taxonomy".into()));
        }
        Ok(Self {
            taxonomy,
            classifier: Arc::new(classifier),
            translator: Arc::new(translator),
            actions: Arc::new(actions),
        })
    }
}

/// The deterministic core of the live loop: segmentation, classification,
/// translation and dispatch, clocked only by frame ticks.
#[derive(Debug, Clone)]
pub struct Engine {
    models: Models,
    segmenter: Segmenter,
    state: DogState,
    history: VecDeque<ClassId>,
    last_tick: Option<u64>,
}

impl Engine {
    pub fn new(models: Models, segmentation: SegmenterConfig) -> Self {
        let state = models.actions.initial_state();
        Self {
            models,
            segmenter: Segmenter::new(segmentation),
            state,
            history: VecDeque::with_capacity(MAX_CONTENT_LEN),
            last_tick: None,
        }
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn state(&self) -> &DogState {
        &self.state
    }

    pub fn history(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.history.iter().copied()
    }

    /// Clears history, dog state and any open touch.
    pub fn reset(&mut self) {
        self.state = self.models.actions.initial_state();
        self.history.clear();
        self.segmenter = Segmenter::new(*self.segmenter.config());
    }

    pub fn snapshot(&self) -> StateSnapshot {
        let tax = &self.models.taxonomy;
        StateSnapshot {
            tick: self.last_tick.unwrap_or(0),
            posture: self.state.posture,
            current_action: self.state.current_action.as_ref().map(|r| r.action.clone()),
            remaining_ticks: self.state.current_action.as_ref().map_or(0, |r| r.remaining_ticks),
            body_part_poses: self.state.body_part_poses.clone(),
            history: self.history.iter().map(|&c| tax.class_token(c)).collect(),
        }
    }

    /// Feeds one canvas. Canvases whose tick does not advance are dropped.
    pub fn process(&mut self, canvas: TactileCanvas) -> Result<StepOutput, PipelineError> {
        let tick = canvas.tick;
        let mut records = Vec::new();
        let mut event_latency = Vec::new();
        if self.last_tick.is_some_and(|last| tick <= last) {
            log::warn!("dropping out-of-order frame for tick {tick}");
            return Ok(StepOutput {
                records,
                state: self.snapshot(),
                event_latency,
            });
        }
        if let Some(last) = self.last_tick {
            let elapsed = u32::try_from(tick - last).unwrap_or(u32::MAX);
            self.state = self.state.step(elapsed);
        }
        self.last_tick = Some(tick);
        records.push(Record::Frame(canvas.clone()));
        for seg in self.segmenter.push(canvas) {
            let started = Instant::now();
            self.handle_event(&seg, &mut records)?;
            event_latency.push(started.elapsed());
        }
        Ok(StepOutput {
            records,
            state: self.snapshot(),
            event_latency,
        })
    }

    /// Closes a touch still open at the end of a stream.
    pub fn finish(&mut self) -> Result<Vec<Record>, PipelineError> {
        let mut records = Vec::new();
        if let Some(seg) = self.segmenter.finish() {
            self.handle_event(&seg, &mut records)?;
        }
        Ok(records)
    }

    fn handle_event(&mut self, seg: &Segment, out: &mut Vec<Record>) -> Result<(), PipelineError> {
        let tax = self.models.taxonomy.clone();
        let pred = self.models.classifier.predict(&seg.window)?;
        let class = tax.class(pred.class).expect("classifier outputs match the taxonomy");
        out.push(Record::Gesture(GestureRecord {
            tick: seg.closed_at,
            start_tick: seg.start_tick,
            end_tick: seg.end_tick,
            class: tax.class_token(pred.class),
            kind: tax.kind(class.kind).name.clone(),
            part: class.part.map(|p| tax.part(p).name.clone()),
            confidence: pred.confidence,
        }));
        if pred.class == tax.none_class() {
            return Ok(());
        }
        if self.history.len() == MAX_CONTENT_LEN {
            self.history.pop_front();
        }
        self.history.push_back(pred.class);
        let history: Vec<ClassId> = self.history.iter().copied().collect();
        let prediction = self.models.translator.predict_action(&history, &tax)?;
        match self.models.actions.dispatch(&self.state, prediction.action)? {
            Dispatch::Command(cmd) => {
                self.state = self.state.begin(&cmd, &self.models.actions);
                out.push(Record::Action(ActionRecord {
                    tick: seg.closed_at,
                    action: cmd.action,
                    duration_ticks: cmd.duration_ticks,
                    motor_params: cmd.motor_params,
                    resulting_posture: cmd.resulting_posture,
                    fallback: prediction.fallback,
                    history: history.iter().map(|&c| tax.class_token(c)).collect(),
                }));
            }
            Dispatch::Rejected(r) => out.push(Record::Rejection(RejectionRecord {
                tick: seg.closed_at,
                action: r.action,
                reason: r.reason,
                fallback: prediction.fallback,
            })),
        }
        Ok(())
    }
}
