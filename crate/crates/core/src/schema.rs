//! Line-delimited record envelope shared by every command.
//!
//! Each line is one JSON object with keys in this order:
//!
//! ```text
//! {"id": .., "schema_version": 1, "task": .., "source": .., "repeat_index": .., "payload": {..}}
//! ```
//!
//! `source` and `repeat_index` are omitted when unset. Payload keys follow
//! the declaration order of the payload type; map-valued fields are sorted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{
    ClassificationRecord, ConversationSample, FormatError, GroundingRecord, MultiViewRecord,
    RegionRecord, VideoRecord, VqaRecord,
};
use crate::metrics::{BenchmarkScores, EvalPair, SignalPair};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unknown schema version {0}, expected {SCHEMA_VERSION}")]
    UnknownVersion(u64),
    #[error("unknown task type {0:?}")]
    UnknownTask(String),
    #[error("record {id}: payload is not a valid {task} record: {reason}")]
    Payload {
        id: String,
        task: TaskType,
        reason: String,
    },
    #[error("envelope id {envelope:?} does not match payload id {payload:?}")]
    IdMismatch { envelope: String, payload: String },
    #[error(transparent)]
    Invalid(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Classification,
    Grounding,
    Region,
    Multiview,
    Video,
    Vqa,
    Conversation,
    EvalPair,
    SignalPair,
    BenchmarkScores,
}

impl TaskType {
    pub const ALL: [TaskType; 10] = [
        TaskType::Classification,
        TaskType::Grounding,
        TaskType::Region,
        TaskType::Multiview,
        TaskType::Video,
        TaskType::Vqa,
        TaskType::Conversation,
        TaskType::EvalPair,
        TaskType::SignalPair,
        TaskType::BenchmarkScores,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Classification => "classification",
            TaskType::Grounding => "grounding",
            TaskType::Region => "region",
            TaskType::Multiview => "multiview",
            TaskType::Video => "video",
            TaskType::Vqa => "vqa",
            TaskType::Conversation => "conversation",
            TaskType::EvalPair => "eval_pair",
            TaskType::SignalPair => "signal_pair",
            TaskType::BenchmarkScores => "benchmark_scores",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| SchemaError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Classification(ClassificationRecord),
    Grounding(GroundingRecord),
    Region(RegionRecord),
    Multiview(MultiViewRecord),
    Video(VideoRecord),
    Vqa(VqaRecord),
    Conversation(ConversationSample),
    EvalPair(EvalPair),
    SignalPair(SignalPair),
    BenchmarkScores(BenchmarkScores),
}

impl Payload {
    pub fn task(&self) -> TaskType {
        match self {
            Payload::Classification(_) => TaskType::Classification,
            Payload::Grounding(_) => TaskType::Grounding,
            Payload::Region(_) => TaskType::Region,
            Payload::Multiview(_) => TaskType::Multiview,
            Payload::Video(_) => TaskType::Video,
            Payload::Vqa(_) => TaskType::Vqa,
            Payload::Conversation(_) => TaskType::Conversation,
            Payload::EvalPair(_) => TaskType::EvalPair,
            Payload::SignalPair(_) => TaskType::SignalPair,
            Payload::BenchmarkScores(_) => TaskType::BenchmarkScores,
        }
    }

    fn from_value(task: TaskType, value: serde_json::Value) -> Result<Self, serde_json::Error> {
        use serde_json::from_value as v;
        Ok(match task {
            TaskType::Classification => Payload::Classification(v(value)?),
            TaskType::Grounding => Payload::Grounding(v(value)?),
            TaskType::Region => Payload::Region(v(value)?),
            TaskType::Multiview => Payload::Multiview(v(value)?),
            TaskType::Video => Payload::Video(v(value)?),
            TaskType::Vqa => Payload::Vqa(v(value)?),
            TaskType::Conversation => Payload::Conversation(v(value)?),
            TaskType::EvalPair => Payload::EvalPair(v(value)?),
            TaskType::SignalPair => Payload::SignalPair(v(value)?),
            TaskType::BenchmarkScores => Payload::BenchmarkScores(v(value)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordEnvelope {
    pub id: String,
    pub source: Option<String>,
    pub repeat_index: Option<u32>,
    pub payload: Payload,
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    id: &'a str,
    schema_version: u32,
    task: TaskType,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    repeat_index: Option<u32>,
    payload: &'a Payload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeIn {
    id: String,
    schema_version: u64,
    task: String,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    repeat_index: Option<u32>,
    payload: serde_json::Value,
}

impl RecordEnvelope {
    pub fn new(id: impl Into<String>, payload: Payload) -> Self {
        RecordEnvelope {
            id: id.into(),
            source: None,
            repeat_index: None,
            payload,
        }
    }

    pub fn task(&self) -> TaskType {
        self.payload.task()
    }

    /// Parses one line. Structural checks only; see [`RecordEnvelope::validate`].
    pub fn from_line(line: &str) -> Result<Self, SchemaError> {
        let raw: EnvelopeIn =
            serde_json::from_str(line).map_err(|e| SchemaError::Malformed(e.to_string()))?;
        if raw.schema_version != u64::from(SCHEMA_VERSION) {
            return Err(SchemaError::UnknownVersion(raw.schema_version));
        }
        let task: TaskType = raw.task.parse()?;
        let mut payload =
            Payload::from_value(task, raw.payload).map_err(|e| SchemaError::Payload {
                id: raw.id.clone(),
                task,
                reason: e.to_string(),
            })?;
        match &mut payload {
            Payload::EvalPair(p) => p.id = raw.id.clone(),
            Payload::SignalPair(p) => p.id = raw.id.clone(),
            _ => {}
        }
        Ok(RecordEnvelope {
            id: raw.id,
            source: raw.source,
            repeat_index: raw.repeat_index,
            payload,
        })
    }

    /// Canonical single-line serialization, without the trailing newline.
    pub fn to_line(&self) -> String {
        let out = EnvelopeOut {
            id: &self.id,
            schema_version: SCHEMA_VERSION,
            task: self.task(),
            source: self.source.as_deref(),
            repeat_index: self.repeat_index,
            payload: &self.payload,
        };
        serde_json::to_string(&out).expect("record types serialize infallibly")
    }

    /// Checks the payload's own invariants.
    pub fn validate(&self) -> Result<(), SchemaError> {
        let id = self.id.as_str();
        if id.is_empty() {
            return Err(FormatError::invalid(id, "empty record id").into());
        }
        match &self.payload {
            Payload::Classification(r) => r.validate(id)?,
            Payload::Grounding(r) => r.validate(id)?,
            Payload::Region(r) => r.validate(id)?,
            Payload::Multiview(r) => r.validate(id)?,
            Payload::Video(r) => r.validate(id)?,
            Payload::Vqa(r) => {
                crate::formats::convert_vqa(id, r)?;
            }
            Payload::Conversation(s) => {
                if s.id != self.id {
                    return Err(SchemaError::IdMismatch {
                        envelope: self.id.clone(),
                        payload: s.id.clone(),
                    });
                }
                s.validate()?;
            }
            Payload::EvalPair(p) => {
                if p.references.is_empty() {
                    return Err(FormatError::invalid(id, "no reference texts").into());
                }
            }
            Payload::SignalPair(p) => {
                if !p.predicted.is_finite() || !p.truth.is_finite() {
                    return Err(FormatError::invalid(id, "non-finite signal value").into());
                }
            }
            Payload::BenchmarkScores(b) => {
                if b.scores.is_empty() {
                    return Err(FormatError::invalid(id, "no benchmark scores").into());
                }
                if let Some((k, _)) = b.scores.iter().find(|(_, v)| !v.is_finite()) {
                    return Err(
                        FormatError::invalid(id, format!("non-finite score for {k}")).into(),
                    );
                }
            }
        }
        Ok(())
    }
}
