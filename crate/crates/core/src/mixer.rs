//! Seeded general/domain dataset mixing.
//!
//! Counts are in records. The general count is `round(r · D)` with halves
//! rounded up, computed exactly on the rational ratio `r`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::par::{map_ordered, Execution};
use crate::rng;
use crate::schema::{RecordEnvelope, SchemaError};

pub const COUNT_UNIT: &str = "records";

#[derive(Debug, Error)]
pub enum MixError {
    #[error("invalid ratio {0:?}: expected \"a:b\" or a non-negative decimal")]
    InvalidRatio(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("general source {source_id} has {available} records but {requested} were requested")]
    InsufficientData {
        source_id: String,
        requested: u64,
        available: u64,
    },
    #[error("cannot read {path}: {err}")]
    Io {
        path: PathBuf,
        #[source]
        err: io::Error,
    },
    #[error("{path}:{line}: {err}")]
    Record {
        path: PathBuf,
        line: usize,
        #[source]
        err: SchemaError,
    },
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// General-to-domain ratio as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let g = gcd(num, den).max(1);
        Some(Ratio {
            num: num / g,
            den: den / g,
        })
    }

    pub fn numer(self) -> u64 {
        self.num
    }

    pub fn denom(self) -> u64 {
        self.den
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(r · d)`, halves rounded up, without floating point.
    pub fn apply(self, d: u64) -> u64 {
        let (n, den, d) = (self.num as u128, self.den as u128, d as u128);
        ((2 * n * d + den) / (2 * den)) as u64
    }
}

fn parse_decimal(s: &str) -> Option<Ratio> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) || frac.len() > 18 {
        return None;
    }
    let scale = 10u64.pow(frac.len() as u32);
    let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac: u64 = if frac.is_empty() {
        0
    } else {
        frac.parse().ok()?
    };
    Ratio::new(int.checked_mul(scale)?.checked_add(frac)?, scale)
}

impl FromStr for Ratio {
    type Err = MixError;

    /// `"a:b"` means `a` general records per `b` domain records; a bare
    /// decimal is `r` itself.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || MixError::InvalidRatio(s.to_string());
        match s.split_once(':') {
            Some((a, b)) => {
                let a = parse_decimal(a.trim()).ok_or_else(bad)?;
                let b = parse_decimal(b.trim()).ok_or_else(bad)?;
                if b.is_zero() {
                    return Err(bad());
                }
                let num = (a.num as u128) * (b.den as u128);
                let den = (a.den as u128) * (b.num as u128);
                let g = {
                    let (mut x, mut y) = (num, den);
                    while y != 0 {
                        (x, y) = (y, x % y);
                    }
                    x.max(1)
                };
                let (num, den) = (num / g, den / g);
                if num > u64::MAX as u128 || den > u64::MAX as u128 {
                    return Err(bad());
                }
                Ok(Ratio::new(num as u64, den as u64).expect("nonzero denominator"))
            }
            None => parse_decimal(s).ok_or_else(bad),
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.num, self.den)
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Int(u64),
            Float(f64),
        }
        let text = match Repr::deserialize(d)? {
            Repr::Text(s) => s,
            Repr::Int(i) => i.to_string(),
            // shortest round-trip decimal, so 0.1 stays 1/10
            Repr::Float(f) => format!("{f}"),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

fn one() -> u32 {
    1
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSource {
    pub id: String,
    pub path: PathBuf,
    #[serde(default = "one")]
    pub repeat: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralSource {
    pub id: String,
    pub path: PathBuf,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

/// Declarative mixture description, loaded from TOML:
///
/// ```toml
/// ratio = "1:4"
/// seed = 7
///
/// [[domain]]
/// id = "drivelm"
/// path = "drivelm.jsonl"
/// repeat = 1
///
/// [[general]]
/// id = "sharegpt4v"
/// path = "general.jsonl"
/// weight = 1.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixManifest {
    pub ratio: Ratio,
    pub seed: u64,
    #[serde(default)]
    pub allow_replacement: bool,
    #[serde(default, rename = "domain")]
    pub domain_sources: Vec<DomainSource>,
    #[serde(default, rename = "general")]
    pub general_sources: Vec<GeneralSource>,
}

impl MixManifest {
    pub fn from_toml(text: &str) -> Result<Self, MixError> {
        let m: MixManifest =
            toml::from_str(text).map_err(|e| MixError::InvalidManifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Loads a manifest file; relative source paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, MixError> {
        let text = fs::read_to_string(path).map_err(|err| MixError::Io {
            path: path.to_path_buf(),
            err,
        })?;
        let mut m = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in m
            .domain_sources
            .iter_mut()
            .map(|s| &mut s.path)
            .chain(m.general_sources.iter_mut().map(|s| &mut s.path))
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MixError> {
        let bad = |msg: String| Err(MixError::InvalidManifest(msg));
        let mut ids = BTreeSet::new();
        for s in &self.domain_sources {
            if s.repeat == 0 {
                return bad(format!("domain source {} has repeat 0", s.id));
            }
            if !ids.insert(s.id.as_str()) {
                return bad(format!("duplicate source id {}", s.id));
            }
        }
        for s in &self.general_sources {
            if !s.weight.is_finite() || s.weight < 0.0 {
                return bad(format!(
                    "general source {} has invalid weight {}",
                    s.id, s.weight
                ));
            }
            if !ids.insert(s.id.as_str()) {
                return bad(format!("duplicate source id {}", s.id));
            }
        }
        if !self.ratio.is_zero()
            && self.general_sources.iter().map(|s| s.weight).sum::<f64>() <= 0.0
        {
            return bad("ratio is positive but general source weights sum to 0".into());
        }
        Ok(())
    }
}

/// Splits `total` across `weights` proportionally: floor of each share,
/// then the leftover units go to the largest remainders (earlier source wins ties).
pub fn allocate_quotas(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let shares: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut quotas: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = quotas.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order
        .iter()
        .cycle()
        .take(total.saturating_sub(assigned) as usize)
    {
        quotas[i] += 1;
    }
    quotas
}

/// Each record `k` times, pass by pass. With `k > 1` every copy carries its
/// pass number in `repeat_index`.
pub fn repeat_dataset(records: &[RecordEnvelope], k: u32) -> Vec<RecordEnvelope> {
    let mut out = Vec::with_capacity(records.len() * k as usize);
    for pass in 0..k {
        out.extend(records.iter().map(|r| {
            let mut r = r.clone();
            if k > 1 {
                r.repeat_index = Some(pass);
            }
            r
        }));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Domain,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCount {
    pub id: String,
    pub kind: SourceKind,
    pub pool: u64,
    pub requested: u64,
    pub emitted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub sources: Vec<SourceCount>,
    pub domain_total: u64,
    pub general_total: u64,
    pub total: u64,
    pub ratio: Ratio,
    pub ratio_value: f64,
    /// `general_total / domain_total`; absent when there are no domain records.
    pub realized_ratio: Option<f64>,
    pub seed: u64,
    pub prng: String,
    pub shuffle: String,
    pub count_unit: String,
    pub allow_replacement: bool,
}

fn draw_general(
    source: &GeneralSource,
    pool: &[RecordEnvelope],
    quota: u64,
    seed: u64,
    allow_replacement: bool,
) -> Result<Vec<RecordEnvelope>, MixError> {
    let n = pool.len() as u64;
    if quota > n && (!allow_replacement || n == 0) {
        return Err(MixError::InsufficientData {
            source_id: source.id.clone(),
            requested: quota,
            available: n,
        });
    }
    let mut r = rng::rng_from_seed(rng::derive_seed(seed, "mix/general", &source.id));
    let mut out = Vec::with_capacity(quota as usize);
    let full_passes = quota.checked_div(n).unwrap_or(0);
    for pass in 0..full_passes {
        out.extend(pool.iter().map(|rec| {
            let mut rec = rec.clone();
            rec.repeat_index = Some(pass as u32);
            rec
        }));
    }
    let rest = (quota - full_passes * n) as usize;
    for i in rng::sample_indices(&mut r, pool.len(), rest) {
        let mut rec = pool[i].clone();
        if full_passes > 0 {
            rec.repeat_index = Some(full_passes as u32);
        }
        out.push(rec);
    }
    Ok(out)
}

/// Mixes in-memory pools. `domain[i]` and `general[j]` hold the records of
/// the manifest's i-th domain and j-th general source.
pub fn mix_records(
    manifest: &MixManifest,
    domain: &[Vec<RecordEnvelope>],
    general: &[Vec<RecordEnvelope>],
) -> Result<(Vec<RecordEnvelope>, MixReport), MixError> {
    manifest.validate()?;
    if domain.len() != manifest.domain_sources.len()
        || general.len() != manifest.general_sources.len()
    {
        return Err(MixError::InvalidManifest(
            "record pools do not match the manifest's sources".into(),
        ));
    }
    let mut out = Vec::new();
    let mut sources = Vec::new();
    for (src, pool) in manifest.domain_sources.iter().zip(domain) {
        let start = out.len();
        out.extend(repeat_dataset(pool, src.repeat));
        for r in &mut out[start..] {
            r.source = Some(src.id.clone());
        }
        let emitted = (out.len() - start) as u64;
        sources.push(SourceCount {
            id: src.id.clone(),
            kind: SourceKind::Domain,
            pool: pool.len() as u64,
            requested: emitted,
            emitted,
        });
    }
    let domain_total = out.len() as u64;
    let general_target = manifest.ratio.apply(domain_total);
    let weights: Vec<f64> = manifest.general_sources.iter().map(|s| s.weight).collect();
    let quotas = allocate_quotas(general_target, &weights);
    for ((src, pool), quota) in manifest.general_sources.iter().zip(general).zip(quotas) {
        let mut drawn = draw_general(src, pool, quota, manifest.seed, manifest.allow_replacement)?;
        for r in &mut drawn {
            r.source = Some(src.id.clone());
        }
        sources.push(SourceCount {
            id: src.id.clone(),
            kind: SourceKind::General,
            pool: pool.len() as u64,
            requested: quota,
            emitted: drawn.len() as u64,
        });
        out.extend(drawn);
    }
    let general_total = out.len() as u64 - domain_total;
    let mut r = rng::rng_from_seed(rng::derive_seed(manifest.seed, "mix/shuffle", ""));
    rng::shuffle(&mut r, &mut out);

    let report = MixReport {
        sources,
        domain_total,
        general_total,
        total: out.len() as u64,
        ratio: manifest.ratio,
        ratio_value: manifest.ratio.as_f64(),
        realized_ratio: (domain_total > 0).then(|| general_total as f64 / domain_total as f64),
        seed: manifest.seed,
        prng: rng::PRNG_NAME.into(),
        shuffle: rng::SHUFFLE_NAME.into(),
        count_unit: COUNT_UNIT.into(),
        allow_replacement: manifest.allow_replacement,
    };
    Ok((out, report))
}

/// Reads a line-delimited record file. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<RecordEnvelope>, MixError> {
    let text = fs::read_to_string(path).map_err(|err| MixError::Io {
        path: path.to_path_buf(),
        err,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            RecordEnvelope::from_line(l).map_err(|err| MixError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                err,
            })
        })
        .collect()
}

/// Reads every source (concurrently under a parallel `exec`) and mixes them.
pub fn mix(
    manifest: &MixManifest,
    exec: Execution,
) -> Result<(Vec<RecordEnvelope>, MixReport), MixError> {
    manifest.validate()?;
    let paths: Vec<&Path> = manifest
        .domain_sources
        .iter()
        .map(|s| s.path.as_path())
        .chain(manifest.general_sources.iter().map(|s| s.path.as_path()))
        .collect();
    let mut pools = map_ordered(&paths, exec, |p| read_records(p))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let general = pools.split_off(manifest.domain_sources.len());
    mix_records(manifest, &pools, &general)
}
