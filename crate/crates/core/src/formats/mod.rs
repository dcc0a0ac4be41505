//! Domain record types and their conversion into instruction-tuning
//! conversations.

mod convert;
pub mod grammar;
mod overlay;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::{GeometryError, ImageDims, PixelBox};

pub use convert::{
    convert_classification, convert_grounding, convert_multiview, convert_region, convert_video,
    convert_vqa, ClassificationTemplate, ConvertOptions, Converted, OptionStyle, CTAG_PROMPT,
    DEFAULT_CLASSIFY_PREFIX, DEFAULT_CLASSIFY_SUFFIX, MCQ_INSTRUCTION,
};
pub use grammar::{parse_special_tokens, ParseError, SpecialToken, TokenSpan};
pub use overlay::{render_overlay, OverlaySpec, DEFAULT_STROKE_WIDTH, PALETTE};

/// Literal image placeholder emitted into conversation text.
pub const IMAGE_PLACEHOLDER: &str = "<img><IMG_CONTEXT></img>";
const PLACEHOLDER_OPEN: &str = "<img>";

pub const MAX_VIDEO_FRAMES: usize = 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("record {id}: {source}")]
    Geometry {
        id: String,
        #[source]
        source: GeometryError,
    },
    #[error("record {id}, turn {turn}: {source}")]
    Grammar {
        id: String,
        turn: usize,
        #[source]
        source: ParseError,
    },
    #[error("overlay: {0}")]
    Overlay(String),
}

impl FormatError {
    pub(crate) fn invalid(id: &str, reason: impl Into<String>) -> Self {
        FormatError::InvalidRecord {
            id: id.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn geometry(id: &str) -> impl FnOnce(GeometryError) -> Self + '_ {
        move |source| FormatError::Geometry {
            id: id.to_string(),
            source,
        }
    }
}

/// Reference to an image on disk or at a URI. Serialized as a bare string
/// unless dimensions are known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub uri: String,
    pub dims: Option<ImageDims>,
}

impl ImageRef {
    pub fn new(uri: impl Into<String>) -> Self {
        ImageRef {
            uri: uri.into(),
            dims: None,
        }
    }

    pub fn with_dims(mut self, dims: ImageDims) -> Self {
        self.dims = Some(dims);
        self
    }

    /// Keeps existing dimensions, fills them in otherwise.
    pub(crate) fn or_dims(&self, dims: ImageDims) -> Self {
        ImageRef {
            uri: self.uri.clone(),
            dims: Some(self.dims.unwrap_or(dims)),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageRefObject {
    uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<u32>,
}

impl Serialize for ImageRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.dims {
            None => s.serialize_str(&self.uri),
            Some(d) => ImageRefObject {
                uri: self.uri.clone(),
                width: Some(d.width),
                height: Some(d.height),
            }
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ImageRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Bare(String),
            Object(ImageRefObject),
        }
        match Repr::deserialize(d)? {
            Repr::Bare(uri) => Ok(ImageRef::new(uri)),
            Repr::Object(o) => {
                let dims = match (o.width, o.height) {
                    (None, None) => None,
                    (Some(width), Some(height)) => {
                        Some(ImageDims::new(width, height).map_err(serde::de::Error::custom)?)
                    }
                    _ => {
                        return Err(serde::de::Error::custom(
                            "image width and height must be given together",
                        ))
                    }
                };
                Ok(ImageRef { uri: o.uri, dims })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Turn {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

pub type Meta = BTreeMap<String, String>;

/// One instruction-tuning record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversationSample {
    pub id: String,
    pub images: Vec<ImageRef>,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub meta: Meta,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overlays: Vec<OverlaySpec>,
}

impl ConversationSample {
    /// Checks turn structure, placeholder counts, overlay references and the
    /// special-token grammar of every turn.
    pub fn validate(&self) -> Result<(), FormatError> {
        let id = self.id.as_str();
        if self.turns.len() < 2 {
            return Err(FormatError::invalid(
                id,
                "a conversation needs at least one user and one assistant turn",
            ));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 {
                Role::User
            } else {
                Role::Assistant
            };
            if turn.role != expected {
                return Err(FormatError::invalid(
                    id,
                    format!("turn {i} has role {}, expected {expected}", turn.role),
                ));
            }
        }
        let placeholders: usize = self
            .turns
            .iter()
            .map(|t| t.text.matches(PLACEHOLDER_OPEN).count())
            .sum();
        if placeholders > 0 && placeholders != self.images.len() {
            return Err(FormatError::invalid(
                id,
                format!(
                    "{placeholders} image placeholders for {} images",
                    self.images.len()
                ),
            ));
        }
        for (turn, t) in self.turns.iter().enumerate() {
            parse_special_tokens(&t.text).map_err(|source| FormatError::Grammar {
                id: id.to_string(),
                turn,
                source,
            })?;
        }
        for o in &self.overlays {
            let Some(img) = self.images.get(o.image_index) else {
                return Err(FormatError::invalid(
                    id,
                    format!("overlay references missing image {}", o.image_index),
                ));
            };
            if let Some(dims) = img.dims {
                o.bbox
                    .check_within(dims)
                    .map_err(FormatError::geometry(id))?;
            }
        }
        Ok(())
    }

    /// Every special token across all turns, in order.
    pub fn special_tokens(&self) -> Result<Vec<SpecialToken>, FormatError> {
        let mut out = Vec::new();
        for (turn, t) in self.turns.iter().enumerate() {
            let spans = parse_special_tokens(&t.text).map_err(|source| FormatError::Grammar {
                id: self.id.clone(),
                turn,
                source,
            })?;
            out.extend(spans.into_iter().map(|s| s.token));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationRecord {
    pub image: ImageRef,
    pub candidates: Vec<String>,
    pub truth: String,
    #[serde(default)]
    pub meta: Meta,
}

impl ClassificationRecord {
    pub fn validate(&self, id: &str) -> Result<(), FormatError> {
        if self.candidates.is_empty() {
            return Err(FormatError::invalid(id, "no candidate labels"));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if self.candidates[..i].contains(c) {
                return Err(FormatError::invalid(
                    id,
                    format!("duplicate candidate {c:?}"),
                ));
            }
        }
        if !self.candidates.contains(&self.truth) {
            return Err(FormatError::invalid(
                id,
                format!("ground truth {:?} is not among the candidates", self.truth),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingRecord {
    pub image: ImageRef,
    pub dims: ImageDims,
    pub expression: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    #[serde(default)]
    pub meta: Meta,
}

impl GroundingRecord {
    pub fn validate(&self, id: &str) -> Result<(), FormatError> {
        self.bbox
            .check_within(self.dims)
            .map_err(FormatError::geometry(id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    InlineBox,
    DrawnAnnotation,
}

/// Whether a region answer names the object (and gets the `<ref>` label) or
/// is free-form text passed through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Object,
    #[default]
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionRecord {
    pub image: ImageRef,
    pub dims: ImageDims,
    pub region: PixelBox,
    pub question: String,
    pub answer: String,
    pub mode: RegionMode,
    #[serde(default)]
    pub answer_kind: AnswerKind,
    /// Selects the overlay colour in drawn-annotation mode.
    #[serde(default)]
    pub object_index: usize,
    #[serde(default)]
    pub meta: Meta,
}

impl RegionRecord {
    pub fn validate(&self, id: &str) -> Result<(), FormatError> {
        self.region
            .check_within(self.dims)
            .map_err(FormatError::geometry(id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewImage {
    pub camera: String,
    pub image: ImageRef,
    pub dims: ImageDims,
}

/// Object handle `<c, CAM, [cx, cy]>` with its centre in source-view pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CTag {
    pub id: String,
    pub camera: String,
    pub center: [f64; 2],
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<PixelBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiViewRecord {
    pub views: Vec<ViewImage>,
    pub qa: Vec<QaPair>,
    #[serde(default)]
    pub objects: Vec<CTag>,
    #[serde(default)]
    pub meta: Meta,
}

impl MultiViewRecord {
    pub fn view(&self, camera: &str) -> Option<&ViewImage> {
        self.views.iter().find(|v| v.camera == camera)
    }

    pub fn validate(&self, id: &str) -> Result<(), FormatError> {
        if self.qa.is_empty() {
            return Err(FormatError::invalid(id, "no question/answer pairs"));
        }
        for o in &self.objects {
            let Some(view) = self.view(&o.camera) else {
                return Err(FormatError::invalid(
                    id,
                    format!("object {} references unknown camera {}", o.id, o.camera),
                ));
            };
            let [cx, cy] = o.center;
            PixelBox::new(cx, cy, cx, cy)
                .check_within(view.dims)
                .map_err(FormatError::geometry(id))?;
            if let Some(b) = &o.bbox {
                b.check_within(view.dims)
                    .map_err(FormatError::geometry(id))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub frames: Vec<ImageRef>,
    pub qa: Vec<QaPair>,
    #[serde(default)]
    pub meta: Meta,
}

impl VideoRecord {
    pub fn validate(&self, id: &str) -> Result<(), FormatError> {
        let n = self.frames.len();
        if n == 0 || n > MAX_VIDEO_FRAMES {
            return Err(FormatError::invalid(
                id,
                format!("video must have 1..={MAX_VIDEO_FRAMES} frames, got {n}"),
            ));
        }
        if self.qa.is_empty() {
            return Err(FormatError::invalid(id, "no question/answer pairs"));
        }
        Ok(())
    }
}

/// A record that is already in conversation form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaRecord {
    pub images: Vec<ImageRef>,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub meta: Meta,
}
