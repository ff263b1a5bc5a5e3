//! Risk flags, composite risk scores and foot-temperature statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ingest::{Complication, ParticipantRecord, ThermalGrid};

/// mTCNS at or above this flags neuropathy.
pub const NEUROPATHY_MTCNS: i32 = 3;
/// TBI at or below this flags peripheral arterial disease.
pub const PAD_TBI: f64 = 0.71;

#[derive(Debug, thiserror::Error)]
pub enum ClinicalError {
    #[error("required field `{0}` is missing")]
    MissingField(&'static str),
    #[error("coefficient table lacks {}", .0.join(", "))]
    MissingCoefficients(Vec<String>),
    #[error("invalid coefficient `{name}`: {detail}")]
    InvalidCoefficient { name: String, detail: String },
    #[error("coefficient file line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("segmented thermograph has no foot pixels")]
    EmptyRegion,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn need<T: Copy>(v: Option<T>, name: &'static str) -> Result<T, ClinicalError> {
    v.ok_or(ClinicalError::MissingField(name))
}

/// `(neuropathy, pad)`; each is `None` when its source field is missing.
pub fn derive_flags(record: &ParticipantRecord) -> (Option<bool>, Option<bool>) {
    (
        record.mtcns.map(|m| m >= NEUROPATHY_MTCNS),
        record.tbi.map(|t| t <= PAD_TBI),
    )
}

/// `name = value` coefficients; `#` starts a comment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    entries: BTreeMap<String, f64>,
}

const DEFAULT_COEFFICIENTS: &str = include_str!("../data/coefficients.txt");

pub const MARTINS_MENDES_KEYS: [&str; 5] = [
    "martins_mendes.intercept",
    "martins_mendes.neuropathy",
    "martins_mendes.pad",
    "martins_mendes.complications",
    "martins_mendes.physical_impairment",
];

const KNOWN_PREFIXES: [&str; 4] = ["martins_mendes.", "podus.", "sign.", "complications."];

impl Default for CoefficientTable {
    fn default() -> Self {
        CoefficientTable::parse(DEFAULT_COEFFICIENTS).expect("shipped coefficient file parses")
    }
}

impl CoefficientTable {
    /// The shipped default file, verbatim.
    pub fn default_text() -> &'static str {
        DEFAULT_COEFFICIENTS
    }

    pub fn parse(text: &str) -> Result<Self, ClinicalError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| ClinicalError::Parse { line: i + 1, detail };
            let (name, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected name=value, got `{line}`")))?;
            let name = name.trim();
            if !KNOWN_PREFIXES.iter().any(|p| name.starts_with(p)) {
                return Err(err(format!("unknown coefficient `{name}`")));
            }
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| err(format!("`{}` is not a number", value.trim())))?;
            if !value.is_finite() {
                return Err(err(format!("`{name}` is not finite")));
            }
            if entries.insert(name.to_string(), value).is_some() {
                return Err(err(format!("duplicate coefficient `{name}`")));
            }
        }
        let table = CoefficientTable { entries };
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, ClinicalError> {
        let text = std::fs::read_to_string(path).map_err(|source| ClinicalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        CoefficientTable::parse(&text)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).copied()
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.entries.insert(name.to_string(), value);
    }

    pub fn remove(&mut self, name: &str) -> Option<f64> {
        self.entries.remove(name)
    }

    fn or(&self, name: &str, default: f64) -> f64 {
        self.get(name).unwrap_or(default)
    }

    fn validate(&self) -> Result<(), ClinicalError> {
        let w = self.podus_weights();
        for (name, v) in PODUS_ITEMS.iter().zip(w) {
            if v < 0 {
                return Err(ClinicalError::InvalidCoefficient {
                    name: format!("podus.{name}"),
                    detail: "must be a non-negative integer".into(),
                });
            }
        }
        for name in PODUS_ITEMS {
            let v = self.or(&format!("podus.{name}"), 1.0);
            if v.fract() != 0.0 {
                return Err(ClinicalError::InvalidCoefficient {
                    name: format!("podus.{name}"),
                    detail: format!("{v} is not an integer"),
                });
            }
        }
        if w.iter().sum::<i64>() > 4 {
            return Err(ClinicalError::InvalidCoefficient {
                name: "podus.*".into(),
                detail: "weights must sum to at most 4".into(),
            });
        }
        Ok(())
    }

    fn podus_weights(&self) -> [i64; 4] {
        PODUS_ITEMS.map(|n| self.or(&format!("podus.{n}"), 1.0) as i64)
    }

    pub fn martins_mendes(&self) -> Result<MartinsMendes, ClinicalError> {
        let missing: Vec<String> = MARTINS_MENDES_KEYS
            .iter()
            .filter(|k| self.get(k).is_none())
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(ClinicalError::MissingCoefficients(missing));
        }
        let g = |k: &str| self.get(k).expect("checked above");
        Ok(MartinsMendes {
            intercept: g(MARTINS_MENDES_KEYS[0]),
            neuropathy: g(MARTINS_MENDES_KEYS[1]),
            pad: g(MARTINS_MENDES_KEYS[2]),
            complications: g(MARTINS_MENDES_KEYS[3]),
            physical_impairment: g(MARTINS_MENDES_KEYS[4]),
        })
    }

    fn counts_complication(&self, c: Complication) -> bool {
        self.or(&format!("complications.{}", c.as_str()), 1.0) != 0.0
    }
}

const PODUS_ITEMS: [&str; 4] = ["monofilament_insensitive", "pad", "prior_ulcer", "prior_amputation"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MartinsMendes {
    pub intercept: f64,
    pub neuropathy: f64,
    pub pad: f64,
    pub complications: f64,
    pub physical_impairment: f64,
}

/// Weighted sum of monofilament insensitivity, PAD flag, prior ulcer and
/// prior amputation (unit weights by default).
pub fn podus_score(record: &ParticipantRecord, coeffs: &CoefficientTable) -> Result<u8, ClinicalError> {
    let items = [
        need(record.monofilament_insensitive, "monofilament_insensitive")?,
        need(derive_flags(record).1, "tbi")?,
        need(record.prior_ulcer, "prior_ulcer")?,
        need(record.prior_amputation, "prior_amputation")?,
    ];
    let total: i64 = items
        .iter()
        .zip(coeffs.podus_weights())
        .map(|(&on, w)| if on { w } else { 0 })
        .sum();
    Ok(total as u8)
}

/// High risk on prior ulcer or amputation, or when at least `threshold`
/// (default 2) of neuropathy, PAD, physical and visual impairment hold.
pub fn sign_high_risk(record: &ParticipantRecord, coeffs: &CoefficientTable) -> Result<bool, ClinicalError> {
    let (neuro, pad) = derive_flags(record);
    let history = need(record.prior_ulcer, "prior_ulcer")? || need(record.prior_amputation, "prior_amputation")?;
    let items = [
        ("neuropathy", need(neuro, "mtcns")?),
        ("pad", need(pad, "tbi")?),
        ("physical_impairment", need(record.physical_impairment, "physical_impairment")?),
        ("visual_impairment", need(record.visual_impairment, "visual_impairment")?),
    ];
    if history && coeffs.or("sign.history", 1.0) != 0.0 {
        return Ok(true);
    }
    let score: f64 = items
        .iter()
        .filter(|(_, on)| *on)
        .map(|(name, _)| coeffs.or(&format!("sign.{name}"), 1.0))
        .sum();
    Ok(score >= coeffs.or("sign.threshold", 2.0))
}

/// Number of recorded complications counted by the table's membership.
pub fn count_complications(record: &ParticipantRecord, coeffs: &CoefficientTable) -> Result<usize, ClinicalError> {
    let set = record.complications.as_ref().ok_or(ClinicalError::MissingField("complications"))?;
    Ok(set.iter().filter(|&&c| coeffs.counts_complication(c)).count())
}

/// Martins-Mendes linear predictor.
pub fn martins_mendes_score(record: &ParticipantRecord, coeffs: &CoefficientTable) -> Result<f64, ClinicalError> {
    let mm = coeffs.martins_mendes()?;
    let (neuro, pad) = derive_flags(record);
    let x = [
        need(neuro, "mtcns")? as u8 as f64,
        need(pad, "tbi")? as u8 as f64,
        count_complications(record, coeffs)? as f64,
        need(record.physical_impairment, "physical_impairment")? as u8 as f64,
    ];
    Ok(mm.intercept + mm.neuropathy * x[0] + mm.pad * x[1] + mm.complications * x[2] + mm.physical_impairment * x[3])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempStats {
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub mean: f64,
}

fn stats_over(values: impl Iterator<Item = f32>) -> Option<TempStats> {
    let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for v in values.filter(|v| !v.is_nan()) {
        let v = v as f64;
        min = min.min(v);
        max = max.max(v);
        sum += v;
        n += 1;
    }
    (n > 0).then(|| TempStats {
        min,
        max,
        range: max - min,
        mean: sum / n as f64,
    })
}

/// Statistics over every foot pixel of both feet; background is ignored.
pub fn foot_temperature_stats(segmented: &ThermalGrid) -> Result<TempStats, ClinicalError> {
    stats_over(segmented.values().iter().copied()).ok_or(ClinicalError::EmptyRegion)
}

/// Statistics of the left and right image halves separately.
pub fn per_foot_stats(segmented: &ThermalGrid) -> (Option<TempStats>, Option<TempStats>) {
    let w = segmented.width();
    let half = w / 2;
    let side = |left: bool| {
        stats_over(
            segmented
                .values()
                .iter()
                .enumerate()
                .filter(move |(i, _)| (i % w < half) == left)
                .map(|(_, &v)| v),
        )
    };
    (side(true), side(false))
}

/// Every derived quantity for one participant; `None` where an input was
/// missing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub participant_id: String,
    pub neuropathy_flag: Option<bool>,
    pub pad_flag: Option<bool>,
    pub podus: Option<u8>,
    pub podus_ge1: Option<bool>,
    pub sign_high_risk: Option<bool>,
    pub martins_mendes: Option<f64>,
    pub n_complications: Option<usize>,
    pub temp: Option<TempStats>,
    pub temp_left: Option<TempStats>,
    pub temp_right: Option<TempStats>,
}

pub fn risk_profile(
    record: &ParticipantRecord,
    segmented: Option<&ThermalGrid>,
    coeffs: &CoefficientTable,
) -> Result<RiskProfile, ClinicalError> {
    // Only missing record fields degrade to `None`; anything else is an error.
    fn optional<T>(r: Result<T, ClinicalError>) -> Result<Option<T>, ClinicalError> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(ClinicalError::MissingField(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
    let (neuropathy_flag, pad_flag) = derive_flags(record);
    let podus = optional(podus_score(record, coeffs))?;
    let (temp, (temp_left, temp_right)) = match segmented {
        Some(g) => (Some(foot_temperature_stats(g)?), per_foot_stats(g)),
        None => (None, (None, None)),
    };
    Ok(RiskProfile {
        participant_id: record.participant_id.clone(),
        neuropathy_flag,
        pad_flag,
        podus,
        podus_ge1: podus.map(|p| p >= 1),
        sign_high_risk: optional(sign_high_risk(record, coeffs))?,
        martins_mendes: optional(martins_mendes_score(record, coeffs))?,
        n_complications: optional(count_complications(record, coeffs))?,
        temp,
        temp_left,
        temp_right,
    })
}

pub const RISK_PROFILE_COLUMNS: [&str; 20] = [
    "participant_id",
    "neuropathy_flag",
    "pad_flag",
    "podus",
    "podus_ge1",
    "sign_high_risk",
    "martins_mendes",
    "n_complications",
    "temp_min",
    "temp_max",
    "temp_range",
    "temp_mean",
    "left_temp_min",
    "left_temp_max",
    "left_temp_range",
    "left_temp_mean",
    "right_temp_min",
    "right_temp_max",
    "right_temp_range",
    "right_temp_mean",
];

/// `risk_profiles.csv` content; missing values are written `NA`.
pub fn risk_profiles_csv(profiles: &[RiskProfile]) -> String {
    fn cell<T: ToString>(v: Option<T>) -> String {
        v.map_or_else(|| "NA".to_string(), |x| x.to_string())
    }
    fn stats(s: Option<TempStats>) -> [String; 4] {
        match s {
            Some(t) => [t.min, t.max, t.range, t.mean].map(|v| format!("{v:.4}")),
            None => ["NA", "NA", "NA", "NA"].map(String::from),
        }
    }
    let mut out = RISK_PROFILE_COLUMNS.join(",");
    out.push('\n');
    for p in profiles {
        let mut cells = vec![
            p.participant_id.clone(),
            cell(p.neuropathy_flag),
            cell(p.pad_flag),
            cell(p.podus),
            cell(p.podus_ge1),
            cell(p.sign_high_risk),
            cell(p.martins_mendes.map(|v| format!("{v:.6}"))),
            cell(p.n_complications),
        ];
        cells.extend(stats(p.temp));
        cells.extend(stats(p.temp_left));
        cells.extend(stats(p.temp_right));
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}
