//! Cluster ↔ clinical-variable association tests and the Table-1 report.
//!
//! Two groups map kinds to tests as follows: normal continuous → Welch t,
//! skewed continuous → Mann-Whitney U (exact permutation distribution for
//! n₁ + n₂ ≤ 20, tie-corrected normal approximation with continuity correction
//! above), categorical → Fisher exact when any expected count is below 5 and
//! Yates-corrected chi-square otherwise. With more than two groups the
//! corresponding omnibus tests are used instead: one-way ANOVA,
//! Kruskal-Wallis and the uncorrected chi-square test of independence.
//!
//! The exact two-sided Mann-Whitney p is `2·min(P(U ≤ u), P(U ≥ u))`, capped
//! at 1. Fisher's two-sided p sums every table at most as likely as the
//! observed one (relative tolerance 1e-7).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use statrs::function::factorial::ln_binomial;

use crate::clinical::{RiskProfile, TempStats};
use crate::ingest::{Complication, ExamResult, ParticipantRecord, Sex};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AssociationError {
    #[error("group {group} has {size} usable values, the {test} needs at least {min}")]
    GroupTooSmall {
        group: usize,
        size: usize,
        min: usize,
        test: &'static str,
    },
    #[error("at least two groups are required, got {0}")]
    TooFewGroups(usize),
    #[error("no non-missing values for {0}")]
    AllMissing(String),
    #[error("categorical values must be 0 or 1, got {0}")]
    NonBinary(f64),
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("participant {0} has no cluster assignment")]
    Unassigned(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    ContinuousNormal,
    ContinuousSkewed,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayForm {
    MeanSd,
    MedianIqr,
    CountPercent,
}

impl VariableKind {
    pub fn display(self) -> DisplayForm {
        match self {
            VariableKind::ContinuousNormal => DisplayForm::MeanSd,
            VariableKind::ContinuousSkewed => DisplayForm::MedianIqr,
            VariableKind::Categorical => DisplayForm::CountPercent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSchema {
    /// Field name understood by [`field_value`].
    pub name: String,
    /// Row label in the rendered table.
    pub label: String,
    pub kind: VariableKind,
}

impl VariableSchema {
    pub fn new(name: &str, label: &str, kind: VariableKind) -> Self {
        VariableSchema {
            name: name.into(),
            label: label.into(),
            kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test_name: String,
    /// May be infinite (perfect separation) or NaN (undefined odds ratio);
    /// JSON carries those as the strings `inf`, `-inf` and `nan`.
    #[serde(with = "nonfinite")]
    pub statistic: f64,
    pub p_value: f64,
}

mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            v if v.is_finite() => Repr::Number(v),
            v if v.is_nan() => Repr::Text("nan".into()),
            v if v > 0.0 => Repr::Text("inf".into()),
            _ => Repr::Text("-inf".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad statistic {other:?}"))),
            },
        }
    }
}

fn outcome(name: &str, statistic: f64, p: f64) -> TestOutcome {
    TestOutcome {
        test_name: name.into(),
        statistic,
        p_value: p.clamp(0.0, 1.0),
    }
}

/// Runs the kind's test on per-group values (missing values already removed;
/// categorical values are 0/1).
pub fn stat_test(groups: &[Vec<f64>], kind: VariableKind) -> Result<TestOutcome, AssociationError> {
    if groups.len() < 2 {
        return Err(AssociationError::TooFewGroups(groups.len()));
    }
    match (kind, groups.len()) {
        (VariableKind::ContinuousNormal, 2) => welch_t(&groups[0], &groups[1]),
        (VariableKind::ContinuousNormal, _) => one_way_anova(groups),
        (VariableKind::ContinuousSkewed, 2) => mann_whitney(&groups[0], &groups[1]),
        (VariableKind::ContinuousSkewed, _) => kruskal_wallis(groups),
        (VariableKind::Categorical, _) => {
            let mut table = Vec::with_capacity(groups.len());
            for (g, vals) in groups.iter().enumerate() {
                require(g, vals.len(), 1, "categorical test")?;
                let mut yes = 0u64;
                for &v in vals {
                    if v == 1.0 {
                        yes += 1;
                    } else if v != 0.0 {
                        return Err(AssociationError::NonBinary(v));
                    }
                }
                table.push([yes, vals.len() as u64 - yes]);
            }
            if table.len() == 2 {
                let t = [table[0], table[1]];
                if min_expected(&table) < 5.0 {
                    Ok(outcome("Fisher exact", odds_ratio(t), fisher_exact(t)))
                } else {
                    let (chi2, p) = chi_square_yates(t);
                    Ok(outcome("chi-square (Yates)", chi2, p))
                }
            } else {
                let (chi2, p) = chi_square_independence(&table);
                Ok(outcome("chi-square", chi2, p))
            }
        }
    }
}

fn require(group: usize, size: usize, min: usize, test: &'static str) -> Result<(), AssociationError> {
    if size < min {
        return Err(AssociationError::GroupTooSmall { group, size, min, test });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n − 1 denominator).
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestOutcome, AssociationError> {
    require(0, a.len(), 2, "Welch t test")?;
    require(1, b.len(), 2, "Welch t test")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = sa + sb;
    if se2 == 0.0 {
        // Both groups constant: either identical or perfectly separated.
        return Ok(if diff == 0.0 {
            outcome("Welch t", 0.0, 1.0)
        } else {
            outcome("Welch t", diff.signum() * f64::INFINITY, 0.0)
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    Ok(outcome("Welch t", t, 2.0 * dist.sf(t.abs())))
}

pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<TestOutcome, AssociationError> {
    for (g, v) in groups.iter().enumerate() {
        require(g, v.len(), 2, "one-way ANOVA")?;
    }
    let k = groups.len() as f64;
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let between: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
    let within: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        })
        .sum();
    let (df1, df2) = (k - 1.0, n as f64 - k);
    if within == 0.0 {
        return Ok(if between == 0.0 {
            outcome("one-way ANOVA", 0.0, 1.0)
        } else {
            outcome("one-way ANOVA", f64::INFINITY, 0.0)
        });
    }
    let f = (between / df1) / (within / df2);
    let dist = FisherSnedecor::new(df1, df2).expect("positive df");
    Ok(outcome("one-way ANOVA", f, dist.sf(f)))
}

/// Midranks (1-based) of the pooled sample and the tie-group sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// Largest pooled size handled by exact enumeration.
pub const MANN_WHITNEY_EXACT_MAX: usize = 20;

pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestOutcome, AssociationError> {
    require(0, a.len(), 1, "Mann-Whitney U test")?;
    require(1, b.len(), 1, "Mann-Whitney U test")?;
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    // Doubled midranks are integers, so the exact distribution lives on them.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let r1_doubled: usize = doubled[..n1].iter().sum();
    let u1 = r1_doubled as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;
    let u = u1.min((n1 * n2) as f64 - u1);
    let n = n1 + n2;
    if n <= MANN_WHITNEY_EXACT_MAX {
        let (le, ge) = rank_sum_tails(&doubled, n1, r1_doubled);
        return Ok(outcome("Mann-Whitney U (exact)", u, (2.0 * le.min(ge)).min(1.0)));
    }
    let mu = (n1 * n2) as f64 / 2.0;
    let nf = n as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term);
    if var <= 0.0 {
        return Ok(outcome("Mann-Whitney U", u, 1.0));
    }
    let z = (((u1 - mu).abs() - 0.5) / var.sqrt()).max(0.0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(outcome("Mann-Whitney U", u, 2.0 * normal.sf(z)))
}

/// `(P(S ≤ s), P(S ≥ s))` for the sum `S` of `k` items drawn without
/// replacement from `weights`, every subset equally likely.
fn rank_sum_tails(weights: &[usize], k: usize, s: usize) -> (f64, f64) {
    let total: usize = weights.iter().sum();
    // counts[j][t]: number of j-subsets of the items seen so far summing to t.
    let mut counts = vec![vec![0.0f64; total + 1]; k + 1];
    counts[0][0] = 1.0;
    for &w in weights {
        for j in (1..=k).rev() {
            for t in (w..=total).rev() {
                let c = counts[j - 1][t - w];
                if c != 0.0 {
                    counts[j][t] += c;
                }
            }
        }
    }
    let all: f64 = counts[k].iter().sum();
    let le: f64 = counts[k][..=s].iter().sum();
    let ge: f64 = counts[k][s..].iter().sum();
    (le / all, ge / all)
}

pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestOutcome, AssociationError> {
    for (g, v) in groups.iter().enumerate() {
        require(g, v.len(), 1, "Kruskal-Wallis test")?;
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = midranks(&pooled);
    let mut h = 0.0;
    let mut start = 0;
    for g in groups {
        let r: f64 = ranks[start..start + g.len()].iter().sum();
        h += r * r / g.len() as f64;
        start += g.len();
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    let correction = 1.0 - ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(outcome("Kruskal-Wallis", 0.0, 1.0));
    }
    h /= correction;
    let dist = ChiSquared::new(groups.len() as f64 - 1.0).expect("positive df");
    Ok(outcome("Kruskal-Wallis", h, dist.sf(h.max(0.0))))
}

fn min_expected(table: &[[u64; 2]]) -> f64 {
    let n: u64 = table.iter().map(|r| r[0] + r[1]).sum();
    let cols = [table.iter().map(|r| r[0]).sum::<u64>(), table.iter().map(|r| r[1]).sum::<u64>()];
    let mut min = f64::INFINITY;
    for r in table {
        for &c in &cols {
            min = min.min(((r[0] + r[1]) * c) as f64 / n as f64);
        }
    }
    min
}

/// Sample odds ratio `ad / bc` (may be 0, ∞ or NaN for degenerate tables).
pub fn odds_ratio(t: [[u64; 2]; 2]) -> f64 {
    (t[0][0] * t[1][1]) as f64 / (t[0][1] * t[1][0]) as f64
}

/// Two-sided Fisher exact p for `[[a, b], [c, d]]`.
pub fn fisher_exact(t: [[u64; 2]; 2]) -> f64 {
    let row1 = t[0][0] + t[0][1];
    let col1 = t[0][0] + t[1][0];
    let n = row1 + t[1][0] + t[1][1];
    let lo = col1.saturating_sub(n - row1);
    let hi = row1.min(col1);
    let denom = ln_binomial(n, col1);
    let ln_p = |a: u64| ln_binomial(row1, a) + ln_binomial(n - row1, col1 - a) - denom;
    let observed = ln_p(t[0][0]);
    let cutoff = observed + (1.0 + 1e-7f64).ln();
    // Normalizing by the enumerated total keeps p exactly 1 when every
    // table qualifies.
    let (mut inside, mut outside) = (0.0, 0.0);
    for lp in (lo..=hi).map(ln_p) {
        if lp <= cutoff {
            inside += lp.exp();
        } else {
            outside += lp.exp();
        }
    }
    inside / (inside + outside)
}

/// Yates-corrected chi-square; the correction never exceeds |O − E|.
pub fn chi_square_yates(t: [[u64; 2]; 2]) -> (f64, f64) {
    let n = (t[0][0] + t[0][1] + t[1][0] + t[1][1]) as f64;
    let rows = [(t[0][0] + t[0][1]) as f64, (t[1][0] + t[1][1]) as f64];
    let cols = [(t[0][0] + t[1][0]) as f64, (t[0][1] + t[1][1]) as f64];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return (0.0, 1.0);
    }
    let e00 = rows[0] * cols[0] / n;
    let correction = (t[0][0] as f64 - e00).abs().min(0.5);
    let mut chi2 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            chi2 += ((t[i][j] as f64 - e).abs() - correction).powi(2) / e;
        }
    }
    let dist = ChiSquared::new(1.0).expect("positive df");
    (chi2, dist.sf(chi2))
}

/// Pearson chi-square test of independence on an r×2 table.
pub fn chi_square_independence(table: &[[u64; 2]]) -> (f64, f64) {
    let n: u64 = table.iter().map(|r| r[0] + r[1]).sum();
    let cols = [table.iter().map(|r| r[0]).sum::<u64>(), table.iter().map(|r| r[1]).sum::<u64>()];
    if cols.contains(&0) {
        return (0.0, 1.0);
    }
    let mut chi2 = 0.0;
    let mut rows = 0usize;
    for r in table {
        let rn = r[0] + r[1];
        if rn == 0 {
            continue;
        }
        rows += 1;
        for (j, &c) in cols.iter().enumerate() {
            let e = (rn * c) as f64 / n as f64;
            chi2 += (r[j] as f64 - e).powi(2) / e;
        }
    }
    if rows < 2 {
        return (0.0, 1.0);
    }
    let dist = ChiSquared::new((rows - 1) as f64).expect("positive df");
    (chi2, dist.sf(chi2))
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n − 1)·q`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Summary {
    MeanSd { mean: f64, sd: f64 },
    MedianIqr { median: f64, q1: f64, q3: f64 },
    CountPercent { count: usize, percent: f64 },
}

pub fn summarize(values: &[f64], form: DisplayForm) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    Some(match form {
        DisplayForm::MeanSd => Summary::MeanSd {
            mean: mean(values),
            sd: if values.len() > 1 { variance(values).sqrt() } else { 0.0 },
        },
        DisplayForm::MedianIqr => {
            let mut s = values.to_vec();
            s.sort_by(f64::total_cmp);
            Summary::MedianIqr {
                median: quantile(&s, 0.5),
                q1: quantile(&s, 0.25),
                q3: quantile(&s, 0.75),
            }
        }
        DisplayForm::CountPercent => {
            let count = values.iter().filter(|&&v| v == 1.0).count();
            Summary::CountPercent {
                count,
                percent: 100.0 * count as f64 / values.len() as f64,
            }
        }
    })
}

fn fmt_num(x: f64) -> String {
    format!("{x:.2}")
}

impl Summary {
    pub fn render(&self) -> String {
        match *self {
            Summary::MeanSd { mean, sd } => format!("{} ± {}", fmt_num(mean), fmt_num(sd)),
            Summary::MedianIqr { median, q1, q3 } => {
                format!("{} ({} – {})", fmt_num(median), fmt_num(q1), fmt_num(q3))
            }
            Summary::CountPercent { count, percent } => format!("{count} ({})", fmt_num(percent)),
        }
    }
}

fn superscript(exp: i32) -> String {
    const DIGITS: [char; 10] = ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'];
    let mut s = String::new();
    if exp < 0 {
        s.push('⁻');
    }
    for c in exp.unsigned_abs().to_string().chars() {
        s.push(DIGITS[c.to_digit(10).unwrap() as usize]);
    }
    s
}

/// `0.55` at or above 0.01, `3.67 x 10⁻⁶` below.
pub fn format_p(p: f64) -> String {
    if p >= 0.01 || p.is_nan() {
        return format!("{p:.2}");
    }
    if p <= 0.0 {
        return "0".into();
    }
    let sci = format!("{p:.2e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    format!("{mantissa} x 10{}", superscript(exp.parse().expect("integer exponent")))
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn temp_field(t: &Option<TempStats>, f: fn(&TempStats) -> f64) -> Option<f64> {
    t.as_ref().map(f)
}

/// Every field name [`field_value`] accepts.
pub const FIELDS: [&str; 35] = [
    "age",
    "sex_male",
    "diabetes_duration",
    "mtcns",
    "tbi",
    "pad_clinical_history",
    "prior_ulcer",
    "prior_amputation",
    "physical_impairment",
    "visual_impairment",
    "monofilament_insensitive",
    "pinprick_impaired",
    "vibration_impaired",
    "light_touch_impaired",
    "position_sense_impaired",
    "temperature_sense_impaired",
    "stroke",
    "renal_disease",
    "eye_disease",
    "neuropathy_complication",
    "pad_complication",
    "neuropathy",
    "pad",
    "n_complications",
    "podus",
    "podus_ge1",
    "sign_high_risk",
    "martins_mendes",
    "temp_min",
    "temp_max",
    "temp_range",
    "temp_mean",
    "temp_left_mean",
    "temp_right_mean",
    "temp_asymmetry",
];

/// Numeric value of `field` for one participant (booleans as 0/1);
/// `Ok(None)` when missing.
pub fn field_value(
    field: &str,
    record: &ParticipantRecord,
    profile: &RiskProfile,
) -> Result<Option<f64>, AssociationError> {
    let exam = |e: &Option<ExamResult>| e.map(|e| flag(e == ExamResult::Impaired));
    let complication = |c: Complication| record.complications.as_ref().map(|s| flag(s.contains(&c)));
    Ok(match field {
        "age" => record.age,
        "sex_male" => record.sex.map(|s| flag(s == Sex::Male)),
        "diabetes_duration" => record.diabetes_duration,
        "mtcns" => record.mtcns.map(f64::from),
        "tbi" => record.tbi,
        "pad_clinical_history" => record.pad_clinical_history.map(flag),
        "prior_ulcer" => record.prior_ulcer.map(flag),
        "prior_amputation" => record.prior_amputation.map(flag),
        "physical_impairment" => record.physical_impairment.map(flag),
        "visual_impairment" => record.visual_impairment.map(flag),
        "monofilament_insensitive" => record.monofilament_insensitive.map(flag),
        "pinprick_impaired" => exam(&record.pinprick),
        "vibration_impaired" => exam(&record.vibration),
        "light_touch_impaired" => exam(&record.light_touch),
        "position_sense_impaired" => exam(&record.position_sense),
        "temperature_sense_impaired" => exam(&record.temperature_sense),
        "stroke" => complication(Complication::Stroke),
        "renal_disease" => complication(Complication::RenalDisease),
        "eye_disease" => complication(Complication::EyeDisease),
        "neuropathy_complication" => complication(Complication::Neuropathy),
        "pad_complication" => complication(Complication::Pad),
        "neuropathy" => profile.neuropathy_flag.map(flag),
        "pad" => profile.pad_flag.map(flag),
        "n_complications" => profile.n_complications.map(|n| n as f64),
        "podus" => profile.podus.map(f64::from),
        "podus_ge1" => profile.podus_ge1.map(flag),
        "sign_high_risk" => profile.sign_high_risk.map(flag),
        "martins_mendes" => profile.martins_mendes,
        "temp_min" => temp_field(&profile.temp, |t| t.min),
        "temp_max" => temp_field(&profile.temp, |t| t.max),
        "temp_range" => temp_field(&profile.temp, |t| t.range),
        "temp_mean" => temp_field(&profile.temp, |t| t.mean),
        "temp_left_mean" => temp_field(&profile.temp_left, |t| t.mean),
        "temp_right_mean" => temp_field(&profile.temp_right, |t| t.mean),
        "temp_asymmetry" => match (&profile.temp_left, &profile.temp_right) {
            (Some(l), Some(r)) => Some((l.mean - r.mean).abs()),
            _ => None,
        },
        other => return Err(AssociationError::UnknownField(other.into())),
    })
}

/// Rows in the order of the published table, followed by the
/// foot-temperature rows.
pub fn default_schema() -> Vec<VariableSchema> {
    use VariableKind::*;
    [
        ("age", "Age (years)", ContinuousSkewed),
        ("sex_male", "Sex (Male)", Categorical),
        ("diabetes_duration", "Diabetes duration (years)", ContinuousSkewed),
        ("light_touch_impaired", "Light touch – Impaired", Categorical),
        ("position_sense_impaired", "Position sense – Impaired", Categorical),
        ("pinprick_impaired", "Pinprick test – Impaired", Categorical),
        ("vibration_impaired", "Vibration sense – Impaired", Categorical),
        ("temperature_sense_impaired", "Temperature sense – Impaired", Categorical),
        ("mtcns", "Modified Toronto Clinical Neuropathy Score (mTCNS)", ContinuousSkewed),
        ("neuropathy", "Neuropathy (as per mTCNS ≥ 3)", Categorical),
        ("pad_clinical_history", "Clinical history suggestive of PAD", Categorical),
        ("tbi", "Toe Brachial Index (TBI)", ContinuousSkewed),
        ("pad", "PAD (as per TBI ≤ 0.71)", Categorical),
        ("stroke", "Stroke", Categorical),
        ("renal_disease", "Diabetic Renal Disease", Categorical),
        ("eye_disease", "Diabetic Eye Disease", Categorical),
        ("n_complications", "Number of Diabetes-Related Complications", ContinuousSkewed),
        ("physical_impairment", "Physical Impairment", Categorical),
        ("visual_impairment", "Visual Impairment", Categorical),
        ("prior_ulcer", "Previous history of foot ulcer", Categorical),
        ("prior_amputation", "Previous history of amputations", Categorical),
        ("podus", "PODUS – 2020 (0 – 4)", ContinuousSkewed),
        ("podus_ge1", "PODUS – 2020, score ≥ 1", Categorical),
        ("sign_high_risk", "SIGN indicative of high-risk foot", Categorical),
        ("martins_mendes", "Martins-Mendes (original)", ContinuousSkewed),
        ("temp_min", "Minimum foot temperature (°C)", ContinuousNormal),
        ("temp_max", "Maximum foot temperature (°C)", ContinuousNormal),
        ("temp_range", "Foot temperature range (°C)", ContinuousNormal),
        ("temp_mean", "Mean foot temperature (°C)", ContinuousNormal),
    ]
    .into_iter()
    .map(|(n, l, k)| VariableSchema::new(n, l, k))
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub cluster: usize,
    /// Non-missing values used for this row.
    pub n: usize,
    pub summary: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub variable: String,
    pub label: String,
    pub kind: VariableKind,
    pub groups: Vec<GroupSummary>,
    /// Participants with a value for this variable (pairwise deletion).
    pub n_effective: usize,
    pub test: Option<TestOutcome>,
    /// Why no test was run, when `test` is `None`.
    pub untested: Option<String>,
}

impl AssociationResult {
    pub fn p_value(&self) -> Option<f64> {
        self.test.as_ref().map(|t| t.p_value)
    }

    pub fn group(&self, cluster: usize) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.cluster == cluster)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableOne {
    pub clusters: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub n_total: usize,
    pub rows: Vec<AssociationResult>,
}

/// One row per schema entry comparing the clusters in `assignments`
/// (participant id → cluster label). Records and profiles are joined on
/// participant id; participants without an assignment are an error.
pub fn table_one(
    records: &[ParticipantRecord],
    profiles: &[RiskProfile],
    assignments: &BTreeMap<String, usize>,
    schema: &[VariableSchema],
) -> Result<TableOne, AssociationError> {
    for s in schema {
        if !FIELDS.contains(&s.name.as_str()) {
            return Err(AssociationError::UnknownField(s.name.clone()));
        }
    }
    let by_id: HashMap<&str, &RiskProfile> = profiles.iter().map(|p| (p.participant_id.as_str(), p)).collect();
    let empty = RiskProfile::default();
    let mut joined = Vec::with_capacity(records.len());
    for r in records {
        let cluster = *assignments
            .get(&r.participant_id)
            .ok_or_else(|| AssociationError::Unassigned(r.participant_id.clone()))?;
        joined.push((r, by_id.get(r.participant_id.as_str()).copied().unwrap_or(&empty), cluster));
    }
    let clusters: Vec<usize> = {
        let mut c: Vec<usize> = joined.iter().map(|j| j.2).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let cluster_sizes = clusters.iter().map(|&c| joined.iter().filter(|j| j.2 == c).count()).collect();

    let mut rows = Vec::with_capacity(schema.len());
    for s in schema {
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); clusters.len()];
        for &(r, p, c) in &joined {
            if let Some(v) = field_value(&s.name, r, p)? {
                if v.is_finite() {
                    let g = clusters.binary_search(&c).expect("cluster listed");
                    groups[g].push(v);
                }
            }
        }
        let n_effective = groups.iter().map(Vec::len).sum();
        let (test, untested) = if n_effective == 0 {
            (None, Some(AssociationError::AllMissing(s.name.clone()).to_string()))
        } else {
            match stat_test(&groups, s.kind) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        rows.push(AssociationResult {
            variable: s.name.clone(),
            label: s.label.clone(),
            kind: s.kind,
            groups: clusters
                .iter()
                .zip(&groups)
                .map(|(&cluster, vals)| GroupSummary {
                    cluster,
                    n: vals.len(),
                    summary: summarize(vals, s.kind.display()),
                })
                .collect(),
            n_effective,
            test,
            untested,
        });
    }
    Ok(TableOne {
        n_total: joined.len(),
        clusters,
        cluster_sizes,
        rows,
    })
}

impl TableOne {
    pub fn row(&self, variable: &str) -> Option<&AssociationResult> {
        self.rows.iter().find(|r| r.variable == variable)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "| Patient characteristics (N = {})", self.n_total);
        for (c, n) in self.clusters.iter().zip(&self.cluster_sizes) {
            let _ = write!(out, " | Cluster {c} (N = {n})");
        }
        out.push_str(" | p value | Test |\n|---");
        for _ in &self.clusters {
            out.push_str("|---");
        }
        out.push_str("|---|---|\n");
        for row in &self.rows {
            let _ = write!(out, "| {}", row.label);
            for g in &row.groups {
                let cell = g.summary.as_ref().map(Summary::render).unwrap_or_else(|| "–".into());
                let _ = write!(out, " | {cell}");
            }
            match &row.test {
                Some(t) => {
                    let _ = writeln!(out, " | {} | {} |", format_p(t.p_value), t.test_name);
                }
                None => out.push_str(" | – | – |\n"),
            }
        }
        out.push_str("\nContinuous rows show mean ± SD or median (IQR); categorical rows show n (%).\n");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}
