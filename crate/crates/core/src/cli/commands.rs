use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::{CliError, Command, ConvertTask, EvalMetric, PipelineConfig};
use crate::formats::{
    convert_classification, convert_grounding, convert_multiview, convert_region, convert_video,
    convert_vqa, ConvertOptions, Converted,
};
use crate::geometry::{
    multiview_layout_with_order, plan_tiles, GeometryError, ImageDims, TileConfig, TilePlan,
    TILE_SIZE,
};
use crate::kernels::run_kernel_suite;
use crate::metrics::{
    benchmark_average, bleu_with, control_signal_metrics, mcq_accuracy_with, rouge_l_with,
    MetricReport, TOKENIZER_NAME,
};
use crate::mixer::{mix, MixError, MixManifest};
use crate::par::{map_ordered, Execution};
use crate::schema::{Payload, RecordEnvelope, SchemaError, TaskType};

/// A problem with one input line, reported as a JSON object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineError {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub error: String,
}

impl LineError {
    fn new(line: usize, id: Option<&str>, error: impl ToString) -> Self {
        LineError {
            line,
            id: id.map(str::to_string),
            error: error.to_string(),
        }
    }
}

pub(super) fn dispatch(
    cmd: Command,
    cfg: &PipelineConfig,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let exec = cfg.execution();
    match cmd {
        Command::Convert {
            task,
            input,
            output,
        } => convert(task, input.as_deref(), output.as_deref(), cfg, exec, out),
        Command::Mix { manifest, output } => mix_cmd(&manifest, output.as_deref(), cfg, exec, out),
        Command::Validate { path } => validate(path.as_deref(), exec, out),
        Command::Stats { path } => stats(path.as_deref(), cfg, exec, out),
        Command::Eval {
            metric,
            input,
            output,
        } => eval(metric, input.as_deref(), output.as_deref(), cfg, exec, out),
        Command::PlanTiles {
            width,
            height,
            max_tiles,
            json,
        } => plan_tiles_cmd(width, height, max_tiles, json, cfg, out),
        Command::ValidateKernels { stacks } => {
            let results = run_kernel_suite(cfg.seed.unwrap_or(0), stacks, exec);
            let mut failed = 0;
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                failed += usize::from(!r.passed);
                writeln!(out, "{status} {}: {}", r.name, r.detail).map_err(stdout_err)?;
            }
            if failed > 0 {
                return Err(CliError::Validation(format!(
                    "{failed} kernel checks failed"
                )));
            }
            Ok(())
        }
    }
}

fn stdout_err(e: io::Error) -> CliError {
    CliError::io(Path::new("<stdout>"), e)
}

fn is_stdio(path: Option<&Path>) -> bool {
    path.is_none_or(|p| p == Path::new("-"))
}

fn read_text(path: Option<&Path>) -> Result<String, CliError> {
    match path {
        Some(p) if !is_stdio(Some(p)) => fs::read_to_string(p).map_err(|e| CliError::io(p, e)),
        _ => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::io(Path::new("<stdin>"), e))?;
            Ok(s)
        }
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".partial");
    PathBuf::from(p)
}

/// Writes to `<path>.partial` and renames into place once complete.
fn write_atomic(path: &Path, content: &[u8]) -> Result<(), CliError> {
    let partial = partial_path(path);
    fs::write(&partial, content).map_err(|e| CliError::io(&partial, e))?;
    fs::rename(&partial, path).map_err(|e| CliError::io(path, e))
}

fn emit(path: Option<&Path>, content: &str, out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) if !is_stdio(Some(p)) => write_atomic(p, content.as_bytes()),
        _ => out.write_all(content.as_bytes()).map_err(stdout_err),
    }
}

fn check_distinct(input: Option<&Path>, output: Option<&Path>) -> Result<(), CliError> {
    if let (Some(i), Some(o)) = (input, output) {
        if !is_stdio(Some(i)) && i == o {
            return Err(CliError::Config(format!(
                "input and output are the same path {}",
                i.display()
            )));
        }
    }
    Ok(())
}

/// Non-blank lines with their 1-based line numbers.
fn numbered_lines(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect()
}

fn parse_line(n: usize, line: &str) -> Result<RecordEnvelope, LineError> {
    RecordEnvelope::from_line(line).map_err(|e| LineError::new(n, None, e))
}

fn report_errors(errors: &[LineError], total: usize) -> Result<(), CliError> {
    if errors.is_empty() {
        return Ok(());
    }
    for e in errors {
        eprintln!(
            "{}",
            serde_json::to_string(e).expect("line error serializes")
        );
    }
    Err(CliError::Validation(format!(
        "{} of {total} records failed",
        errors.len()
    )))
}

/// Parses every record, failing with line-addressed errors.
fn load_records(path: Option<&Path>, exec: Execution) -> Result<Vec<RecordEnvelope>, CliError> {
    let text = read_text(path)?;
    let lines = numbered_lines(&text);
    let parsed = map_ordered(&lines, exec, |&(n, l)| parse_line(n, l));
    let mut records = Vec::with_capacity(parsed.len());
    let mut errors = Vec::new();
    for r in parsed {
        match r {
            Ok(env) => records.push(env),
            Err(e) => errors.push(e),
        }
    }
    report_errors(&errors, lines.len())?;
    Ok(records)
}

fn expected_task(task: ConvertTask) -> TaskType {
    match task {
        ConvertTask::Classification => TaskType::Classification,
        ConvertTask::Grounding => TaskType::Grounding,
        ConvertTask::Region => TaskType::Region,
        ConvertTask::Multiview => TaskType::Multiview,
        ConvertTask::Video => TaskType::Video,
        ConvertTask::Vqa => TaskType::Vqa,
    }
}

fn convert_envelope(
    env: &RecordEnvelope,
    task: ConvertTask,
    opts: &ConvertOptions,
) -> Result<(RecordEnvelope, usize), String> {
    let id = env.id.as_str();
    let converted: Converted = match (&env.payload, task) {
        (Payload::Classification(r), ConvertTask::Classification) => {
            convert_classification(id, r, opts)
        }
        (Payload::Grounding(r), ConvertTask::Grounding) => convert_grounding(id, r),
        (Payload::Region(r), ConvertTask::Region) => convert_region(id, r, opts),
        (Payload::Multiview(r), ConvertTask::Multiview) => convert_multiview(id, r, opts),
        (Payload::Video(r), ConvertTask::Video) => convert_video(id, r),
        (Payload::Vqa(r), ConvertTask::Vqa) => convert_vqa(id, r),
        (p, _) => {
            return Err(format!(
                "expected a {} record, found {}",
                expected_task(task),
                p.task()
            ))
        }
    }
    .map_err(|e| e.to_string())?;
    let out = RecordEnvelope {
        id: env.id.clone(),
        source: env.source.clone(),
        repeat_index: env.repeat_index,
        payload: Payload::Conversation(converted.sample),
    };
    out.validate().map_err(|e| e.to_string())?;
    Ok((out, converted.degenerate_boxes))
}

fn convert(
    task: ConvertTask,
    input: Option<&Path>,
    output: Option<&Path>,
    cfg: &PipelineConfig,
    exec: Execution,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    check_distinct(input, output)?;
    let mut opts = cfg.convert.clone();
    opts.seed = cfg.seed;
    if task == ConvertTask::Classification
        && opts.classification.shuffle_options
        && opts.seed.is_none()
    {
        return Err(CliError::Config(
            "option shuffling needs a seed (--seed or config)".into(),
        ));
    }
    let text = read_text(input)?;
    let lines = numbered_lines(&text);
    let results = map_ordered(&lines, exec, |&(n, l)| {
        let env = parse_line(n, l)?;
        convert_envelope(&env, task, &opts).map_err(|e| LineError::new(n, Some(&env.id), e))
    });
    let mut body = String::new();
    let mut errors = Vec::new();
    let mut degenerate = 0;
    let mut converted = 0;
    for r in results {
        match r {
            Ok((env, d)) => {
                body.push_str(&env.to_line());
                body.push('\n');
                degenerate += d;
                converted += 1;
            }
            Err(e) => errors.push(e),
        }
    }
    report_errors(&errors, lines.len())?;
    emit(output, &body, out)?;
    eprintln!(
        "{}",
        json!({
            "task": expected_task(task),
            "converted": converted,
            "degenerate_boxes": degenerate,
        })
    );
    Ok(())
}

fn mix_error(e: MixError) -> CliError {
    match e {
        MixError::InvalidRatio(_) | MixError::InvalidManifest(_) => CliError::Config(e.to_string()),
        MixError::Io { path, err } => CliError::io(&path, err),
        MixError::InsufficientData { .. } | MixError::Record { .. } => {
            CliError::Validation(e.to_string())
        }
    }
}

fn mix_cmd(
    manifest_path: &Path,
    output: Option<&Path>,
    cfg: &PipelineConfig,
    exec: Execution,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut manifest = MixManifest::load(manifest_path).map_err(mix_error)?;
    if let Some(seed) = cfg.seed {
        manifest.seed = seed;
    }
    if let Some(o) = output.filter(|o| !is_stdio(Some(o))) {
        let sources = manifest
            .domain_sources
            .iter()
            .map(|s| &s.path)
            .chain(manifest.general_sources.iter().map(|s| &s.path));
        for p in sources {
            check_distinct(Some(p), Some(o))?;
        }
    }
    let (records, report) = mix(&manifest, exec).map_err(mix_error)?;
    let mut body = String::new();
    for r in &records {
        body.push_str(&r.to_line());
        body.push('\n');
    }
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match output.filter(|o| !is_stdio(Some(o))) {
        Some(o) => {
            write_atomic(o, body.as_bytes())?;
            let mut rp = o.as_os_str().to_owned();
            rp.push(".report.json");
            write_atomic(Path::new(&rp), report_json.as_bytes())?;
            out.write_all(report_json.as_bytes()).map_err(stdout_err)
        }
        None => {
            out.write_all(body.as_bytes()).map_err(stdout_err)?;
            eprint!("{report_json}");
            Ok(())
        }
    }
}

fn validate(path: Option<&Path>, exec: Execution, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_text(path)?;
    let lines = numbered_lines(&text);
    let results = map_ordered(&lines, exec, |&(n, l)| {
        let env = parse_line(n, l)?;
        env.validate()
            .map_err(|e: SchemaError| LineError::new(n, Some(&env.id), e))
    });
    let mut invalid = 0;
    for e in results.iter().filter_map(|r| r.as_ref().err()) {
        invalid += 1;
        writeln!(
            out,
            "{}",
            serde_json::to_string(e).expect("line error serializes")
        )
        .map_err(stdout_err)?;
    }
    writeln!(
        out,
        "{}",
        json!({"records": lines.len(), "invalid": invalid})
    )
    .map_err(stdout_err)?;
    if invalid > 0 {
        return Err(CliError::Validation(format!(
            "{invalid} of {} records are invalid",
            lines.len()
        )));
    }
    Ok(())
}

fn single_tile_plan(use_thumbnail: bool) -> TilePlan {
    let tile = ImageDims::new(TILE_SIZE, TILE_SIZE).expect("tile size is positive");
    plan_tiles(tile, 1, 1, use_thumbnail).expect("1x1 plan always exists")
}

fn plan_images<'a>(
    dims: impl Iterator<Item = Option<ImageDims>> + 'a,
    tiles: &'a TileConfig,
) -> impl Iterator<Item = Result<Option<TilePlan>, GeometryError>> + 'a {
    dims.map(move |d| d.map(|d| tiles.plan(d)).transpose())
}

/// Tile plan for every image a record feeds to the vision encoder; `None`
/// where the image size is unknown.
///
/// Multi-view records are planned once on the stitched canvas and video
/// frames get one tile each; other images are planned individually.
pub fn record_tile_plans(
    env: &RecordEnvelope,
    tiles: &TileConfig,
    view_order: &[String],
) -> Result<Vec<Option<TilePlan>>, GeometryError> {
    match &env.payload {
        Payload::Classification(r) => plan_images(std::iter::once(r.image.dims), tiles).collect(),
        Payload::Grounding(r) => Ok(vec![Some(tiles.plan(r.dims)?)]),
        Payload::Region(r) => Ok(vec![Some(tiles.plan(r.dims)?)]),
        Payload::Multiview(r) => {
            let views: Vec<(String, ImageDims)> =
                r.views.iter().map(|v| (v.camera.clone(), v.dims)).collect();
            let layout = multiview_layout_with_order(&views, view_order)?;
            Ok(vec![Some(tiles.plan(layout.canvas)?)])
        }
        Payload::Video(r) => Ok(vec![
            Some(single_tile_plan(tiles.use_thumbnail));
            r.frames.len()
        ]),
        Payload::Vqa(r) => plan_images(r.images.iter().map(|i| i.dims), tiles).collect(),
        Payload::Conversation(s) => match s.meta.get("task").map(String::as_str) {
            Some("multiview") if s.meta.contains_key("canvas") => {
                let canvas: ImageDims = s.meta["canvas"].parse()?;
                Ok(vec![Some(tiles.plan(canvas)?)])
            }
            Some("video") => Ok(vec![
                Some(single_tile_plan(tiles.use_thumbnail));
                s.images.len()
            ]),
            _ => plan_images(s.images.iter().map(|i| i.dims), tiles).collect(),
        },
        Payload::EvalPair(_) | Payload::SignalPair(_) | Payload::BenchmarkScores(_) => Ok(vec![]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsSummary {
    pub records: u64,
    pub images: u64,
    pub unknown_dims: u64,
    pub total_visual_tokens: u64,
    pub tokens_per_tile: u64,
    /// Images by tiles fed to the encoder (thumbnail included).
    pub tile_histogram: BTreeMap<u32, u64>,
    pub tasks: BTreeMap<TaskType, u64>,
}

fn stats(
    path: Option<&Path>,
    cfg: &PipelineConfig,
    exec: Execution,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let records = load_records(path, exec)?;
    let order = &cfg.convert.view_order;
    let plans = map_ordered(&records, exec, |r| record_tile_plans(r, &cfg.tiles, order));
    let mut summary = StatsSummary {
        records: records.len() as u64,
        images: 0,
        unknown_dims: 0,
        total_visual_tokens: 0,
        tokens_per_tile: cfg.tiles.tokens_per_tile,
        tile_histogram: BTreeMap::new(),
        tasks: BTreeMap::new(),
    };
    let mut errors = Vec::new();
    for (i, (rec, plans)) in records.iter().zip(plans).enumerate() {
        *summary.tasks.entry(rec.task()).or_default() += 1;
        match plans {
            Ok(plans) => {
                for p in plans {
                    summary.images += 1;
                    match p {
                        Some(p) => {
                            summary.total_visual_tokens += cfg.tiles.tokens(&p);
                            *summary.tile_histogram.entry(p.total_tiles()).or_default() += 1;
                        }
                        None => summary.unknown_dims += 1,
                    }
                }
            }
            Err(e) => errors.push(LineError::new(i + 1, Some(&rec.id), e)),
        }
    }
    report_errors(&errors, records.len())?;
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    writeln!(out, "{text}").map_err(stdout_err)
}

fn wrong_task(env: &RecordEnvelope, want: TaskType) -> CliError {
    CliError::Validation(format!(
        "record {}: expected {want}, found {}",
        env.id,
        env.task()
    ))
}

fn eval(
    metric: EvalMetric,
    input: Option<&Path>,
    output: Option<&Path>,
    cfg: &PipelineConfig,
    exec: Execution,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    check_distinct(input, output)?;
    let records = load_records(input, exec)?;
    let ec = &cfg.eval;
    let metric_err = |e: crate::metrics::MetricError| CliError::Validation(e.to_string());
    let mut report = MetricReport::default();
    match metric {
        EvalMetric::Mcq | EvalMetric::Bleu | EvalMetric::Rouge => {
            let pairs = records
                .iter()
                .map(|r| match &r.payload {
                    Payload::EvalPair(p) => Ok(p.clone()),
                    _ => Err(wrong_task(r, TaskType::EvalPair)),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let n = pairs.len();
            match metric {
                EvalMetric::Mcq => {
                    report.insert(
                        "mcq_accuracy",
                        mcq_accuracy_with(&pairs, exec).map_err(metric_err)?,
                        n,
                    );
                }
                EvalMetric::Bleu => {
                    let v = bleu_with(&pairs, ec.bleu_max_n, exec).map_err(metric_err)?;
                    report.insert(format!("bleu{}", ec.bleu_max_n), v, n);
                    report
                        .config
                        .insert("bleu_max_n".into(), json!(ec.bleu_max_n));
                    report
                        .config
                        .insert("tokenizer".into(), json!(TOKENIZER_NAME));
                }
                _ => {
                    let v = rouge_l_with(&pairs, ec.rouge_mode, exec).map_err(metric_err)?;
                    report.insert("rouge_l", v, n);
                    report
                        .config
                        .insert("rouge_mode".into(), json!(ec.rouge_mode));
                    report
                        .config
                        .insert("tokenizer".into(), json!(TOKENIZER_NAME));
                }
            }
        }
        EvalMetric::Signals => {
            let pairs = records
                .iter()
                .map(|r| match &r.payload {
                    Payload::SignalPair(p) => Ok(p.clone()),
                    _ => Err(wrong_task(r, TaskType::SignalPair)),
                })
                .collect::<Result<Vec<_>, _>>()?;
            report = control_signal_metrics(&pairs, &ec.thresholds).map_err(metric_err)?;
        }
        EvalMetric::Avg => {
            if records.is_empty() {
                return Err(CliError::Validation("no benchmark score records".into()));
            }
            for r in &records {
                let Payload::BenchmarkScores(b) = &r.payload else {
                    return Err(wrong_task(r, TaskType::BenchmarkScores));
                };
                let avg = benchmark_average(&b.scores, &ec.ocrbench_key)
                    .map_err(|e| CliError::Validation(format!("record {}: {e}", r.id)))?;
                report.insert(r.id.clone(), avg, b.scores.len());
            }
            report
                .config
                .insert("ocrbench_key".into(), json!(ec.ocrbench_key));
        }
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(output, &text, out)
}

fn plan_tiles_cmd(
    width: u32,
    height: u32,
    max_tiles: Option<u32>,
    as_json: bool,
    cfg: &PipelineConfig,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut tiles = cfg.tiles;
    if let Some(m) = max_tiles {
        tiles.max_tiles = m;
    }
    let dims = ImageDims::new(width, height).map_err(|e| CliError::Config(e.to_string()))?;
    let plan = tiles
        .plan(dims)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let tokens = tiles.tokens(&plan);
    if as_json {
        let v = json!({
            "dims": dims,
            "plan": plan,
            "total_tiles": plan.total_tiles(),
            "tokens": tokens,
        });
        writeln!(out, "{v}").map_err(stdout_err)
    } else {
        writeln!(out, "{plan}, {tokens} tokens").map_err(stdout_err)
    }
}
