//! Per-task converters from domain records to [`ConversationSample`]s.
//!
//! Every converter is a pure function of `(id, record, options)`; option
//! shuffling draws from a seed derived from the options seed and the record id.

use serde::{Deserialize, Serialize};

use super::grammar::{box_token, ref_token};
use super::{
    AnswerKind, ClassificationRecord, ConversationSample, FormatError, GroundingRecord, Meta,
    MultiViewRecord, OverlaySpec, QaPair, RegionMode, RegionRecord, Turn, VideoRecord, VqaRecord,
    DEFAULT_STROKE_WIDTH, IMAGE_PLACEHOLDER,
};
use crate::geometry::{
    default_view_order, multiview_layout_with_order, normalize_box, normalize_point, ImageDims,
};
use crate::rng;

pub const DEFAULT_CLASSIFY_PREFIX: &str = "Classify the image within one of the given classes:";
pub const DEFAULT_CLASSIFY_SUFFIX: &str = "Answer with one word or short phrase.";
pub const MCQ_INSTRUCTION: &str = "Please select the correct answer from the following options:";

/// System prompt explaining the c-tag object encoding for multi-view driving data.
pub const CTAG_PROMPT: &str = "Objects are encoded using <c, CAM, [cx,cy]>, where c is the identifier, CAM indicates the camera where the object's center point is situated, and x, y represent the horizontal and vertical coordinates of the center point of the 2D bounding box.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionStyle {
    /// Comma-separated label list, answer is the bare label.
    #[default]
    FreeLabel,
    /// Lettered options, answer is `"<letter>. <label>"`.
    MultipleChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationTemplate {
    pub style: OptionStyle,
    pub prefix: String,
    pub suffix: String,
    pub shuffle_options: bool,
}

impl Default for ClassificationTemplate {
    fn default() -> Self {
        ClassificationTemplate {
            style: OptionStyle::FreeLabel,
            prefix: DEFAULT_CLASSIFY_PREFIX.into(),
            suffix: DEFAULT_CLASSIFY_SUFFIX.into(),
            shuffle_options: false,
        }
    }
}

impl ClassificationTemplate {
    pub fn multiple_choice(question: impl Into<String>) -> Self {
        ClassificationTemplate {
            style: OptionStyle::MultipleChoice,
            prefix: question.into(),
            suffix: String::new(),
            shuffle_options: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertOptions {
    pub classification: ClassificationTemplate,
    pub view_order: Vec<String>,
    pub overlay_width: u32,
    pub seed: Option<u64>,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        ConvertOptions {
            classification: ClassificationTemplate::default(),
            view_order: default_view_order(),
            overlay_width: DEFAULT_STROKE_WIDTH,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Converted {
    pub sample: ConversationSample,
    /// Zero-area boxes that were accepted and normalized.
    pub degenerate_boxes: usize,
}

impl Converted {
    fn new(sample: ConversationSample) -> Self {
        Converted {
            sample,
            degenerate_boxes: 0,
        }
    }
}

fn task_meta(meta: &Meta, task: &str) -> Meta {
    let mut m = meta.clone();
    m.insert("task".into(), task.into());
    m
}

fn join_nonempty<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    parts
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// User/assistant turns for a QA list, with `header` in front of the first question.
fn qa_turns(header: &str, qa: &[QaPair]) -> Vec<Turn> {
    let mut turns = Vec::with_capacity(qa.len() * 2);
    for (i, pair) in qa.iter().enumerate() {
        let q = if i == 0 {
            format!("{header}\n{}", pair.question)
        } else {
            pair.question.clone()
        };
        turns.push(Turn::user(q));
        turns.push(Turn::assistant(pair.answer.clone()));
    }
    turns
}

pub fn convert_classification(
    id: &str,
    rec: &ClassificationRecord,
    opts: &ConvertOptions,
) -> Result<Converted, FormatError> {
    rec.validate(id)?;
    let tpl = &opts.classification;
    let mut order: Vec<usize> = (0..rec.candidates.len()).collect();
    if tpl.shuffle_options {
        let seed = opts
            .seed
            .ok_or_else(|| FormatError::invalid(id, "option shuffling requires a seed"))?;
        let mut r = rng::rng_from_seed(rng::derive_seed(seed, "convert/classification", id));
        rng::shuffle(&mut r, &mut order);
    }
    let labels: Vec<&str> = order.iter().map(|&i| rec.candidates[i].as_str()).collect();

    let (prompt, answer) = match tpl.style {
        OptionStyle::FreeLabel => {
            let list = format!("{}.", labels.join(", "));
            (
                join_nonempty([tpl.prefix.as_str(), list.as_str(), tpl.suffix.as_str()]),
                rec.truth.clone(),
            )
        }
        OptionStyle::MultipleChoice => {
            if labels.len() > 26 {
                return Err(FormatError::invalid(
                    id,
                    format!("{} options exceed the A-Z letter range", labels.len()),
                ));
            }
            let options: Vec<String> = labels
                .iter()
                .zip('A'..='Z')
                .map(|(l, letter)| format!("{letter}. {l}"))
                .collect();
            let answer = options[labels
                .iter()
                .position(|l| *l == rec.truth)
                .expect("validated")]
            .clone();
            let mut parts = vec![tpl.prefix.as_str(), MCQ_INSTRUCTION];
            parts.extend(options.iter().map(String::as_str));
            parts.push(tpl.suffix.as_str());
            (join_nonempty(parts), answer)
        }
    };

    Ok(Converted::new(ConversationSample {
        id: id.to_string(),
        images: vec![rec.image.clone()],
        turns: vec![
            Turn::user(format!("{IMAGE_PLACEHOLDER}\n{prompt}")),
            Turn::assistant(answer),
        ],
        meta: task_meta(&rec.meta, "classification"),
        overlays: vec![],
    }))
}

pub fn convert_grounding(id: &str, rec: &GroundingRecord) -> Result<Converted, FormatError> {
    rec.validate(id)?;
    let nbox = normalize_box(&rec.bbox, rec.dims).map_err(FormatError::geometry(id))?;
    let expr = ref_token(&rec.expression);
    Ok(Converted {
        sample: ConversationSample {
            id: id.to_string(),
            images: vec![rec.image.or_dims(rec.dims)],
            turns: vec![
                Turn::user(format!("{IMAGE_PLACEHOLDER}\nDetect {expr}")),
                Turn::assistant(format!("{expr}{}", box_token(&nbox))),
            ],
            meta: task_meta(&rec.meta, "grounding"),
            overlays: vec![],
        },
        degenerate_boxes: usize::from(rec.bbox.is_degenerate()),
    })
}

pub fn convert_region(
    id: &str,
    rec: &RegionRecord,
    opts: &ConvertOptions,
) -> Result<Converted, FormatError> {
    rec.validate(id)?;
    let nbox = normalize_box(&rec.region, rec.dims).map_err(FormatError::geometry(id))?;
    let (question, answer, overlays) = match rec.mode {
        RegionMode::InlineBox => {
            let answer = match rec.answer_kind {
                AnswerKind::Object => format!("{}{}", ref_token(&rec.answer), box_token(&nbox)),
                AnswerKind::Free => rec.answer.clone(),
            };
            (
                format!("{}{}", rec.question, box_token(&nbox)),
                answer,
                vec![],
            )
        }
        RegionMode::DrawnAnnotation => (
            rec.question.clone(),
            rec.answer.clone(),
            vec![OverlaySpec::for_object(
                0,
                rec.region,
                rec.object_index,
                opts.overlay_width,
            )],
        ),
    };
    Ok(Converted {
        sample: ConversationSample {
            id: id.to_string(),
            images: vec![rec.image.or_dims(rec.dims)],
            turns: vec![
                Turn::user(format!("{IMAGE_PLACEHOLDER}\n{question}")),
                Turn::assistant(answer),
            ],
            meta: task_meta(&rec.meta, "region"),
            overlays,
        },
        degenerate_boxes: usize::from(rec.region.is_degenerate()),
    })
}

/// A c-tag found in free text: `<c1>` or raw `<c1,CAM_FRONT,812.5,430.0>`.
struct CTagMatch<'a> {
    start: usize,
    end: usize,
    id: &'a str,
    raw: Option<(&'a str, f64, f64)>,
}

fn next_ctag(text: &str, from: usize) -> Option<CTagMatch<'_>> {
    let mut pos = from;
    while let Some(rel) = text[pos..].find("<c") {
        let start = pos + rel;
        pos = start + 2;
        let rest = &text[start + 1..];
        let id_len = 1 + rest[1..].bytes().take_while(u8::is_ascii_digit).count();
        if id_len == 1 {
            continue;
        }
        let id = &rest[..id_len];
        let after = &rest[id_len..];
        if after.starts_with('>') {
            return Some(CTagMatch {
                start,
                end: start + 1 + id_len + 1,
                id,
                raw: None,
            });
        }
        let Some(body) = after.strip_prefix(',') else {
            continue;
        };
        let Some(close) = body.find('>') else {
            continue;
        };
        let fields: Vec<&str> = body[..close].split(',').map(str::trim).collect();
        if let [cam, x, y] = fields[..] {
            if let (Ok(x), Ok(y)) = (x.parse::<f64>(), y.parse::<f64>()) {
                return Some(CTagMatch {
                    start,
                    end: start + 1 + id_len + 1 + close + 1,
                    id,
                    raw: Some((cam, x, y)),
                });
            }
        }
    }
    None
}

fn view_dims(rec: &MultiViewRecord, id: &str, camera: &str) -> Result<ImageDims, FormatError> {
    rec.view(camera).map(|v| v.dims).ok_or_else(|| {
        FormatError::invalid(id, format!("c-tag references unknown camera {camera}"))
    })
}

/// Rewrites c-tags to `<cN, CAM, [x,y]>` on the 0–1000 grid of their view.
/// With `with_boxes`, tags of objects that carry a box are followed by it.
fn rewrite_ctags(
    text: &str,
    rec: &MultiViewRecord,
    id: &str,
    with_boxes: bool,
    degenerate: &mut usize,
) -> Result<String, FormatError> {
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    while let Some(m) = next_ctag(text, pos) {
        out.push_str(&text[pos..m.start]);
        let object = rec.objects.iter().find(|o| o.id == m.id);
        let (camera, cx, cy) = match (m.raw, object) {
            (Some((cam, _, _)), Some(o)) if o.camera != cam => {
                return Err(FormatError::invalid(
                    id,
                    format!("c-tag {} on {cam} but object is on {}", m.id, o.camera),
                ))
            }
            (Some(raw), _) => raw,
            (None, Some(o)) => (o.camera.as_str(), o.center[0], o.center[1]),
            (None, None) => {
                return Err(FormatError::invalid(id, format!("unknown object {}", m.id)))
            }
        };
        let dims = view_dims(rec, id, camera)?;
        let (nx, ny) = normalize_point(cx, cy, dims).map_err(FormatError::geometry(id))?;
        out.push_str(&format!("<{}, {camera}, [{nx},{ny}]>", m.id));
        if with_boxes {
            if let Some(b) = object.and_then(|o| o.bbox.as_ref()) {
                let nb = normalize_box(b, dims).map_err(FormatError::geometry(id))?;
                *degenerate += usize::from(b.is_degenerate());
                out.push_str(&box_token(&nb));
            }
        }
        pos = m.end;
    }
    out.push_str(&text[pos..]);
    Ok(out)
}

pub fn convert_multiview(
    id: &str,
    rec: &MultiViewRecord,
    opts: &ConvertOptions,
) -> Result<Converted, FormatError> {
    rec.validate(id)?;
    let views: Vec<(String, ImageDims)> = rec
        .views
        .iter()
        .map(|v| (v.camera.clone(), v.dims))
        .collect();
    let layout =
        multiview_layout_with_order(&views, &opts.view_order).map_err(FormatError::geometry(id))?;

    let mut images = Vec::with_capacity(layout.view_order.len());
    let mut header = String::from(CTAG_PROMPT);
    for cam in &layout.view_order {
        let view = rec.view(cam).expect("layout checked camera set");
        images.push(view.image.or_dims(view.dims));
        header.push_str(&format!("\n{cam}: {IMAGE_PLACEHOLDER}"));
    }

    let mut degenerate = 0;
    let mut turns = Vec::with_capacity(rec.qa.len() * 2);
    for (i, pair) in rec.qa.iter().enumerate() {
        let q = rewrite_ctags(&pair.question, rec, id, false, &mut degenerate)?;
        let a = rewrite_ctags(&pair.answer, rec, id, true, &mut degenerate)?;
        turns.push(Turn::user(if i == 0 {
            format!("{header}\n{q}")
        } else {
            q
        }));
        turns.push(Turn::assistant(a));
    }
    let mut meta = task_meta(&rec.meta, "multiview");
    meta.insert("canvas".into(), layout.canvas.to_string());
    Ok(Converted {
        sample: ConversationSample {
            id: id.to_string(),
            images,
            turns,
            meta,
            overlays: vec![],
        },
        degenerate_boxes: degenerate,
    })
}

pub fn convert_video(id: &str, rec: &VideoRecord) -> Result<Converted, FormatError> {
    rec.validate(id)?;
    let header = (1..=rec.frames.len())
        .map(|i| format!("Frame{i}: {IMAGE_PLACEHOLDER}"))
        .collect::<Vec<_>>()
        .join(" ");
    let turns = qa_turns(&header, &rec.qa);
    Ok(Converted::new(ConversationSample {
        id: id.to_string(),
        images: rec.frames.clone(),
        turns,
        meta: task_meta(&rec.meta, "video"),
        overlays: vec![],
    }))
}

/// Pass-through for records already in conversation form.
pub fn convert_vqa(id: &str, rec: &VqaRecord) -> Result<Converted, FormatError> {
    let sample = ConversationSample {
        id: id.to_string(),
        images: rec.images.clone(),
        turns: rec.turns.clone(),
        meta: task_meta(&rec.meta, "vqa"),
        overlays: vec![],
    };
    sample.validate()?;
    Ok(Converted::new(sample))
}
