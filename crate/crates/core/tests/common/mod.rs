#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use adaptkit::cli::PipelineConfig;
use adaptkit::formats::{
    convert_classification, convert_grounding, convert_multiview, convert_region, convert_video,
    Converted, FormatError,
};
use adaptkit::schema::{Payload, RecordEnvelope};

pub const GOLDEN_CASES: [&str; 6] = [
    "classification",
    "classification_mcq",
    "grounding",
    "region",
    "multiview",
    "video",
];

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn golden_config(case: &str) -> PipelineConfig {
    let path = golden_dir().join(format!("{case}.config.toml"));
    if path.exists() {
        PipelineConfig::load(&path).expect("golden config loads")
    } else {
        PipelineConfig::default()
    }
}

fn convert_one(env: &RecordEnvelope, cfg: &PipelineConfig) -> Result<Converted, FormatError> {
    let id = env.id.as_str();
    let opts = &cfg.convert;
    match &env.payload {
        Payload::Classification(r) => convert_classification(id, r, opts),
        Payload::Grounding(r) => convert_grounding(id, r),
        Payload::Region(r) => convert_region(id, r, opts),
        Payload::Multiview(r) => convert_multiview(id, r, opts),
        Payload::Video(r) => convert_video(id, r),
        other => panic!("no golden converter for {:?}", other.task()),
    }
}

/// (expected, actual) output bytes for one golden case.
pub fn run_golden(case: &str) -> (String, String) {
    let dir = golden_dir();
    let input = fs::read_to_string(dir.join(format!("{case}.input.jsonl"))).unwrap();
    let expected = fs::read_to_string(dir.join(format!("{case}.expected.jsonl"))).unwrap();
    let cfg = golden_config(case);
    let mut actual = String::new();
    for line in input.lines().filter(|l| !l.trim().is_empty()) {
        let env = RecordEnvelope::from_line(line).unwrap();
        let converted = convert_one(&env, &cfg).unwrap();
        let out = RecordEnvelope {
            payload: Payload::Conversation(converted.sample),
            ..env
        };
        actual.push_str(&out.to_line());
        actual.push('\n');
    }
    (expected, actual)
}
