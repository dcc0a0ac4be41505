//! Evaluation metrics: MCQ accuracy, corpus BLEU, ROUGE-L, control-signal
//! RMSE / threshold accuracy, and the benchmark-average rule.
//!
//! Per-sample statistics run through [`crate::par::map_ordered`]; every corpus
//! reduction is either integer arithmetic or an in-order float sum, so results
//! do not depend on the thread count.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::par::{map_ordered, Execution};

/// Tokenizer identifier echoed in every text-metric report.
pub const TOKENIZER_NAME: &str = "lowercase-whitespace-ascii-punct-v1";

/// Thresholds used for A_τ when none are given.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.1, 0.5, 1.0, 5.0];

/// Keys reserved for scores computed outside this crate, so they can be
/// merged into a report and weighted into a final score.
pub const RESERVED_EXTERNAL_KEYS: [&str; 3] = ["cider", "match", "chatgpt"];

pub const DEFAULT_OCRBENCH_KEY: &str = "OCRBench";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{0} is undefined on an empty corpus")]
    Empty(&'static str),
    #[error("invalid metric input: {0}")]
    InvalidInput(String),
    #[error("missing score {0:?}")]
    MissingKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPair {
    #[serde(default, skip_serializing)]
    pub id: String,
    pub prediction: String,
    pub references: Vec<String>,
}

impl EvalPair {
    pub fn new(prediction: impl Into<String>, references: &[&str]) -> Self {
        EvalPair {
            id: String::new(),
            prediction: prediction.into(),
            references: references.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalPair {
    #[serde(default, skip_serializing)]
    pub id: String,
    pub predicted: f64,
    pub truth: f64,
}

impl SignalPair {
    pub fn new(predicted: f64, truth: f64) -> Self {
        SignalPair {
            id: String::new(),
            predicted,
            truth,
        }
    }
}

/// One row of benchmark scores, e.g. a model's line in a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkScores {
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricValue>,
    pub count: usize,
    pub config: BTreeMap<String, serde_json::Value>,
}

impl MetricReport {
    pub fn insert(&mut self, name: impl Into<String>, value: f64, count: usize) {
        self.metrics
            .insert(name.into(), MetricValue { value, count });
        self.count = self.count.max(count);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|m| m.value)
    }

    /// Folds another report in; later values win on key collisions.
    pub fn merge(&mut self, other: MetricReport) {
        self.count = self.count.max(other.count);
        self.metrics.extend(other.metrics);
        self.config.extend(other.config);
    }

    /// Adds an externally computed score under one of [`RESERVED_EXTERNAL_KEYS`].
    pub fn merge_external(
        &mut self,
        key: &str,
        value: f64,
        count: usize,
    ) -> Result<(), MetricError> {
        if !RESERVED_EXTERNAL_KEYS.contains(&key) {
            return Err(MetricError::InvalidInput(format!(
                "{key:?} is not a reserved external score key"
            )));
        }
        if !value.is_finite() {
            return Err(MetricError::InvalidInput(format!("{key} is not finite")));
        }
        self.insert(key, value, count);
        Ok(())
    }

    /// Weighted mean `Σ wᵢ·vᵢ / Σ wᵢ` over the named metrics.
    pub fn weighted_score(&self, weights: &BTreeMap<String, f64>) -> Result<f64, MetricError> {
        let mut num = 0.0;
        let mut den = 0.0;
        for (k, &w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(MetricError::InvalidInput(format!(
                    "weight for {k} must be >= 0"
                )));
            }
            let v = self
                .get(k)
                .ok_or_else(|| MetricError::MissingKey(k.clone()))?;
            num += w * v;
            den += w;
        }
        if den <= 0.0 {
            return Err(MetricError::InvalidInput("weights sum to zero".into()));
        }
        Ok(num / den)
    }
}

/// Lowercases, splits on whitespace and emits ASCII punctuation as separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch.is_ascii_punctuation() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Splits a leading option letter (`"B. text"`, `"B."`, `"B"`) from its text.
fn split_option(s: &str) -> (Option<char>, &str) {
    let t = s.trim();
    let mut chars = t.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() => (Some(c), ""),
        (Some(c), Some('.')) if c.is_ascii_uppercase() => (Some(c), t[2..].trim()),
        _ => (None, t),
    }
}

fn option_matches(prediction: &str, reference: &str) -> bool {
    let (pl, pt) = split_option(prediction);
    let (rl, rt) = split_option(reference);
    match (pl, rl) {
        (Some(a), Some(b)) => a == b,
        _ => {
            let pt = if pl.is_some() { pt } else { prediction };
            let rt = if rl.is_some() { rt } else { reference };
            normalize_answer(prediction) == normalize_answer(reference)
                || (!rt.trim().is_empty() && normalize_answer(pt) == normalize_answer(rt))
        }
    }
}

pub fn mcq_accuracy(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    mcq_accuracy_with(pairs, Execution::default())
}

pub fn mcq_accuracy_with(pairs: &[EvalPair], exec: Execution) -> Result<f64, MetricError> {
    check_pairs(pairs, "mcq accuracy")?;
    let hits = map_ordered(pairs, exec, |p| {
        p.references
            .iter()
            .any(|r| option_matches(&p.prediction, r))
    });
    Ok(hits.iter().filter(|&&h| h).count() as f64 / pairs.len() as f64)
}

fn check_pairs(pairs: &[EvalPair], metric: &'static str) -> Result<(), MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty(metric));
    }
    if let Some(p) = pairs.iter().find(|p| p.references.is_empty()) {
        return Err(MetricError::InvalidInput(format!(
            "pair {:?} has no references",
            p.id
        )));
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

#[derive(Debug, Clone, Default)]
struct BleuStats {
    clipped: [u64; 4],
    total: [u64; 4],
    cand_len: u64,
    ref_len: u64,
}

fn bleu_stats(pair: &EvalPair, max_n: usize) -> BleuStats {
    let cand = tokenize(&pair.prediction);
    let refs: Vec<Vec<String>> = pair.references.iter().map(|r| tokenize(r)).collect();
    let mut st = BleuStats {
        cand_len: cand.len() as u64,
        ..Default::default()
    };
    // closest reference length, shorter on ties
    st.ref_len = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(cand.len()), l))
        .unwrap_or(0) as u64;
    for n in 1..=max_n {
        let counts = ngram_counts(&cand, n);
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        for (gram, &c) in &counts {
            let max_ref = ref_counts
                .iter()
                .map(|rc| rc.get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            st.clipped[n - 1] += c.min(max_ref) as u64;
            st.total[n - 1] += c as u64;
        }
    }
    st
}

/// Corpus BLEU with uniform weights over orders `1..=max_n`.
///
/// Orders for which the candidate corpus has no n-grams at all (every
/// prediction shorter than `n`) are left out of the geometric mean.
pub fn bleu(pairs: &[EvalPair], max_n: usize) -> Result<f64, MetricError> {
    bleu_with(pairs, max_n, Execution::default())
}

pub fn bleu_with(pairs: &[EvalPair], max_n: usize, exec: Execution) -> Result<f64, MetricError> {
    if !(1..=4).contains(&max_n) {
        return Err(MetricError::InvalidInput(format!(
            "BLEU order {max_n} not in 1..=4"
        )));
    }
    check_pairs(pairs, "BLEU")?;
    let per_pair = map_ordered(pairs, exec, |p| bleu_stats(p, max_n));
    let mut sum = BleuStats::default();
    for s in &per_pair {
        for n in 0..4 {
            sum.clipped[n] += s.clipped[n];
            sum.total[n] += s.total[n];
        }
        sum.cand_len += s.cand_len;
        sum.ref_len += s.ref_len;
    }
    Ok(bleu_from_stats(&sum, max_n))
}

fn bleu_from_stats(s: &BleuStats, max_n: usize) -> f64 {
    if s.cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..max_n {
        if s.total[n] == 0 {
            continue;
        }
        if s.clipped[n] == 0 {
            return 0.0;
        }
        log_sum += (s.clipped[n] as f64 / s.total[n] as f64).ln();
        orders += 1;
    }
    let bp = if s.cand_len < s.ref_len {
        (1.0 - s.ref_len as f64 / s.cand_len as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / orders as f64).exp()
}

/// F-measure weighting for ROUGE-L.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeMode {
    /// β = 1, F = 2PR / (P + R).
    #[default]
    Balanced,
    /// β → ∞, F = R.
    RecallOnly,
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_pair(pred: &[String], reference: &[String], mode: RougeMode) -> f64 {
    if pred.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let lcs = lcs_len(pred, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / pred.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    match mode {
        RougeMode::Balanced => 2.0 * p * r / (p + r),
        RougeMode::RecallOnly => r,
    }
}

/// Mean per-sample ROUGE-L F; each sample scores against its best reference.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    rouge_l_with(pairs, RougeMode::Balanced, Execution::default())
}

pub fn rouge_l_with(
    pairs: &[EvalPair],
    mode: RougeMode,
    exec: Execution,
) -> Result<f64, MetricError> {
    check_pairs(pairs, "ROUGE-L")?;
    let scores = map_ordered(pairs, exec, |p| {
        let pred = tokenize(&p.prediction);
        p.references
            .iter()
            .map(|r| rouge_l_pair(&pred, &tokenize(r), mode))
            .fold(0.0, f64::max)
    });
    Ok(scores.iter().sum::<f64>() / pairs.len() as f64)
}

pub fn threshold_key(tau: f64) -> String {
    format!("a_{tau:?}")
}

/// RMSE plus A_τ (fraction with |error| < τ) for every threshold.
pub fn control_signal_metrics(
    pairs: &[SignalPair],
    thresholds: &[f64],
) -> Result<MetricReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("control-signal metrics"));
    }
    if let Some(p) = pairs
        .iter()
        .find(|p| !(p.predicted.is_finite() && p.truth.is_finite()))
    {
        return Err(MetricError::InvalidInput(format!(
            "non-finite signal {p:?}"
        )));
    }
    if let Some(t) = thresholds.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(MetricError::InvalidInput(format!(
            "threshold {t} must be positive"
        )));
    }
    let n = pairs.len();
    let errors: Vec<f64> = pairs
        .iter()
        .map(|p| (p.predicted - p.truth).abs())
        .collect();
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / n as f64;

    let mut report = MetricReport::default();
    report.insert("rmse", mse.sqrt(), n);
    for &tau in thresholds {
        let hits = errors.iter().filter(|&&e| e < tau).count();
        report.insert(threshold_key(tau), hits as f64 / n as f64, n);
    }
    report.config.insert("thresholds".into(), json!(thresholds));
    Ok(report)
}

/// Mean of all scores after dividing the OCRBench entry (reported out of
/// 1000) by 10.
pub fn benchmark_average(
    scores: &BTreeMap<String, f64>,
    ocrbench_key: &str,
) -> Result<f64, MetricError> {
    if !scores.contains_key(ocrbench_key) {
        return Err(MetricError::MissingKey(ocrbench_key.to_string()));
    }
    if let Some((k, _)) = scores.iter().find(|(_, v)| !v.is_finite()) {
        return Err(MetricError::InvalidInput(format!(
            "score {k} is not finite"
        )));
    }
    let total: f64 = scores
        .iter()
        .map(|(k, &v)| if k == ocrbench_key { v / 10.0 } else { v })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Report for a text-metric run, echoing the tokenizer and options.
pub fn text_report(
    pairs: &[EvalPair],
    max_n: usize,
    mode: RougeMode,
    exec: Execution,
) -> Result<MetricReport, MetricError> {
    let mut r = MetricReport::default();
    for n in 1..=max_n {
        r.insert(format!("bleu{n}"), bleu_with(pairs, n, exec)?, pairs.len());
    }
    r.insert("rouge_l", rouge_l_with(pairs, mode, exec)?, pairs.len());
    r.config.insert("tokenizer".into(), json!(TOKENIZER_NAME));
    r.config.insert("bleu_max_n".into(), json!(max_n));
    r.config.insert("rouge_mode".into(), json!(mode));
    Ok(r)
}
