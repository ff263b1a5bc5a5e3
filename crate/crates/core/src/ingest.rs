//! On-disk data model: manifests, registered visual/thermal pairs and
//! participant records.
//!
//! Manifest columns (CSV, UTF-8, header required, any order):
//!
//! | column | type |
//! |---|---|
//! | `participant_id` | string, unique |
//! | `visual_path`, `thermal_path` | paths relative to the manifest's directory |
//! | `age`, `diabetes_duration`, `tbi` | float |
//! | `sex` | `male` / `female` |
//! | `mtcns` | integer |
//! | `pad_clinical_history`, `prior_ulcer`, `prior_amputation`, `physical_impairment`, `visual_impairment`, `monofilament_insensitive` | `true` / `false` |
//! | `complications` | `;`-separated names, `none` for the empty set |
//! | `pinprick`, `vibration`, `light_touch`, `position_sense`, `temperature_sense` | `normal` / `impaired` |
//!
//! An empty cell or `NA` marks a value as missing.
//!
//! Thermal grids are either CSV (one image row per line, °C) or raw
//! little-endian `f32` (`.f32`) with a JSON sidecar of the same stem
//! holding `{"height", "width", "units": "C"}`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest row {row}: file {path} does not exist")]
    MissingFile { row: usize, path: PathBuf },
    #[error("duplicate participant id {0}")]
    DuplicateId(String),
    #[error("schema mismatch in column `{column}`: {detail}")]
    SchemaMismatch { column: String, detail: String },
    #[error("unparseable manifest rows: {}", format_row_errors(.0))]
    UnparseableRows(Vec<RowError>),
    #[error("visual image is {visual:?} but thermal grid is {thermal:?} (expected registered pair)")]
    DimensionMismatch {
        visual: (usize, usize),
        thermal: (usize, usize),
    },
    #[error("non-finite temperature at row {row}, column {col}")]
    NonFiniteTemperature { row: usize, col: usize },
    #[error("temperature {value} °C at row {row}, column {col} outside valid range {range:?}")]
    OutOfRange {
        row: usize,
        col: usize,
        value: f32,
        range: (f32, f32),
    },
    #[error("degenerate temperature window ({lo}, {hi}): lo must be below hi")]
    DegenerateWindow { lo: f32, hi: f32 },
    #[error("malformed thermal file {path}: {detail}")]
    ThermalFormat { path: PathBuf, detail: String },
    #[error("image error on {path}: {detail}")]
    Image { path: PathBuf, detail: String },
}

/// A single unparseable manifest cell. `row` is 1-based over data rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RowError {
    pub row: usize,
    pub column: String,
    pub value: String,
}

fn format_row_errors(rows: &[RowError]) -> String {
    rows.iter()
        .map(|e| format!("row {} column `{}` value {:?}", e.row, e.column, e.value))
        .collect::<Vec<_>>()
        .join("; ")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Physiological range accepted for raw thermal grids.
pub const DEFAULT_VALID_RANGE: (f32, f32) = (0.0, 60.0);

/// Temperature grid in °C, row-major. Background pixels of a segmented grid
/// hold [`BACKGROUND`].
#[derive(Clone, Debug, PartialEq)]
pub struct ThermalGrid {
    height: usize,
    width: usize,
    values: Vec<f32>,
    valid_range: (f32, f32),
}

/// Sentinel for pixels excluded from every statistic.
pub const BACKGROUND: f32 = f32::NAN;

impl ThermalGrid {
    /// Builds a grid, rejecting NaN/infinite values and values outside
    /// `valid_range`.
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f32>,
        valid_range: (f32, f32),
    ) -> Result<Self, IngestError> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(IngestError::ThermalFormat {
                path: PathBuf::new(),
                detail: format!("{} values for a {height}×{width} grid", values.len()),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(IngestError::NonFiniteTemperature {
                    row: i / width,
                    col: i % width,
                });
            }
            if v < valid_range.0 || v > valid_range.1 {
                return Err(IngestError::OutOfRange {
                    row: i / width,
                    col: i % width,
                    value: v,
                    range: valid_range,
                });
            }
        }
        Ok(ThermalGrid {
            height,
            width,
            values,
            valid_range,
        })
    }

    /// Builds a grid that may contain [`BACKGROUND`] pixels.
    pub(crate) fn with_background(height: usize, width: usize, values: Vec<f32>, valid_range: (f32, f32)) -> Self {
        assert_eq!(values.len(), height * width);
        ThermalGrid {
            height,
            width,
            values,
            valid_range,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn valid_range(&self) -> (f32, f32) {
        self.valid_range
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// Number of non-background pixels.
    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }
}

/// RGB image, 8 bits per channel, interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisualImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl VisualImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), height * width * 3, "visual image buffer size");
        VisualImage { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn rgb(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub participant_id: String,
    pub visual: VisualImage,
    pub thermal: ThermalGrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExamResult {
    Normal,
    Impaired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complication {
    Stroke,
    RenalDisease,
    EyeDisease,
    Neuropathy,
    Pad,
}

impl Complication {
    pub const ALL: [Complication; 5] = [
        Complication::Stroke,
        Complication::RenalDisease,
        Complication::EyeDisease,
        Complication::Neuropathy,
        Complication::Pad,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Complication::Stroke => "stroke",
            Complication::RenalDisease => "renal_disease",
            Complication::EyeDisease => "eye_disease",
            Complication::Neuropathy => "neuropathy",
            Complication::Pad => "pad",
        }
    }
}

impl FromStr for Complication {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Complication::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or(())
    }
}

/// Clinical fields of one participant. `None` always means "not recorded".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub participant_id: String,
    pub age: Option<f64>,
    pub sex: Option<Sex>,
    pub diabetes_duration: Option<f64>,
    pub mtcns: Option<i32>,
    pub tbi: Option<f64>,
    pub pad_clinical_history: Option<bool>,
    pub prior_ulcer: Option<bool>,
    pub prior_amputation: Option<bool>,
    pub complications: Option<BTreeSet<Complication>>,
    pub physical_impairment: Option<bool>,
    pub visual_impairment: Option<bool>,
    pub monofilament_insensitive: Option<bool>,
    pub pinprick: Option<ExamResult>,
    pub vibration: Option<ExamResult>,
    pub light_touch: Option<ExamResult>,
    pub position_sense: Option<ExamResult>,
    pub temperature_sense: Option<ExamResult>,
}

pub const MTCNS_MAX: i32 = 33;

/// One failed record invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Lists every violated record invariant; empty when the record is valid.
pub fn validate_record(record: &ParticipantRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.participant_id.trim().is_empty() {
        out.push(Violation {
            field: "participant_id",
            rule: "must be non-empty".into(),
        });
    }
    if let Some(m) = record.mtcns {
        if !(0..=MTCNS_MAX).contains(&m) {
            out.push(Violation {
                field: "mtcns",
                rule: format!("out of range: {m} not in [0, {MTCNS_MAX}]"),
            });
        }
    }
    if let Some(t) = record.tbi {
        if !t.is_finite() || t < 0.0 {
            out.push(Violation {
                field: "tbi",
                rule: format!("negative or non-finite: {t}"),
            });
        }
    }
    if let Some(a) = record.age {
        if !a.is_finite() || a < 0.0 {
            out.push(Violation {
                field: "age",
                rule: format!("negative or non-finite: {a}"),
            });
        }
    }
    if let Some(d) = record.diabetes_duration {
        if !d.is_finite() || d < 0.0 {
            out.push(Violation {
                field: "diabetes_duration",
                rule: format!("negative or non-finite: {d}"),
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub visual_path: PathBuf,
    pub thermal_path: PathBuf,
    pub record: ParticipantRecord,
}

impl ManifestRow {
    pub fn participant_id(&self) -> &str {
        &self.record.participant_id
    }
}

/// Parsed manifest. Relative paths resolve against `base_dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &ParticipantRecord> {
        self.rows.iter().map(|r| &r.record)
    }
}

pub const MANIFEST_COLUMNS: [&str; 20] = [
    "participant_id",
    "visual_path",
    "thermal_path",
    "age",
    "sex",
    "diabetes_duration",
    "mtcns",
    "tbi",
    "pad_clinical_history",
    "prior_ulcer",
    "prior_amputation",
    "complications",
    "physical_impairment",
    "visual_impairment",
    "monofilament_insensitive",
    "pinprick",
    "vibration",
    "light_touch",
    "position_sense",
    "temperature_sense",
];

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

fn parse_opt<T>(s: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>, ()> {
    if is_missing(s) {
        Ok(None)
    } else {
        f(s.trim()).map(Some).ok_or(())
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_sex(s: &str) -> Option<Sex> {
    match s.to_ascii_lowercase().as_str() {
        "male" | "m" => Some(Sex::Male),
        "female" | "f" => Some(Sex::Female),
        _ => None,
    }
}

fn parse_exam(s: &str) -> Option<ExamResult> {
    match s.to_ascii_lowercase().as_str() {
        "normal" => Some(ExamResult::Normal),
        "impaired" => Some(ExamResult::Impaired),
        _ => None,
    }
}

fn parse_complications(s: &str) -> Option<BTreeSet<Complication>> {
    if s.eq_ignore_ascii_case("none") {
        return Some(BTreeSet::new());
    }
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.parse().ok())
        .collect()
}

fn fmt_opt<T>(v: &Option<T>, f: impl Fn(&T) -> String) -> String {
    v.as_ref().map(f).unwrap_or_else(|| "NA".to_string())
}

fn exam_str(e: &ExamResult) -> String {
    match e {
        ExamResult::Normal => "normal".into(),
        ExamResult::Impaired => "impaired".into(),
    }
}

fn record_cells(r: &ParticipantRecord) -> Vec<String> {
    let b = |v: &Option<bool>| fmt_opt(v, |x| x.to_string());
    vec![
        fmt_opt(&r.age, |x| x.to_string()),
        fmt_opt(&r.sex, |x| match x {
            Sex::Male => "male".into(),
            Sex::Female => "female".into(),
        }),
        fmt_opt(&r.diabetes_duration, |x| x.to_string()),
        fmt_opt(&r.mtcns, |x| x.to_string()),
        fmt_opt(&r.tbi, |x| x.to_string()),
        b(&r.pad_clinical_history),
        b(&r.prior_ulcer),
        b(&r.prior_amputation),
        fmt_opt(&r.complications, |set| {
            if set.is_empty() {
                "none".into()
            } else {
                set.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(";")
            }
        }),
        b(&r.physical_impairment),
        b(&r.visual_impairment),
        b(&r.monofilament_insensitive),
        fmt_opt(&r.pinprick, exam_str),
        fmt_opt(&r.vibration, exam_str),
        fmt_opt(&r.light_touch, exam_str),
        fmt_opt(&r.position_sense, exam_str),
        fmt_opt(&r.temperature_sense, exam_str),
    ]
}

/// Writes a manifest with the canonical column order. Paths are written as
/// stored (normally relative to the manifest's directory).
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(MANIFEST_COLUMNS).map_err(|e| csv_io(path, e))?;
    for row in &manifest.rows {
        let mut cells = vec![
            row.record.participant_id.clone(),
            row.visual_path.to_string_lossy().into_owned(),
            row.thermal_path.to_string_lossy().into_owned(),
        ];
        cells.extend(record_cells(&row.record));
        w.write_record(&cells).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> IngestError {
    IngestError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Loads and checks a manifest: header columns, cell syntax, unique ids and
/// existence of every referenced file. Files are only read, never modified.
pub fn load_manifest(path: &Path) -> Result<Manifest, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if text.trim().is_empty() {
        return Err(IngestError::SchemaMismatch {
            column: MANIFEST_COLUMNS[0].into(),
            detail: "file is empty; header row required".into(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_io(path, e))?.clone();
    let header_names: Vec<&str> = headers.iter().map(str::trim).collect();
    for col in MANIFEST_COLUMNS {
        if !header_names.contains(&col) {
            return Err(IngestError::SchemaMismatch {
                column: col.into(),
                detail: "required column missing from header".into(),
            });
        }
    }
    if let Some(extra) = header_names.iter().find(|h| !MANIFEST_COLUMNS.contains(h)) {
        return Err(IngestError::SchemaMismatch {
            column: extra.to_string(),
            detail: "unknown column".into(),
        });
    }
    let idx = |name: &str| header_names.iter().position(|h| *h == name).unwrap();
    let cols: Vec<usize> = MANIFEST_COLUMNS.iter().map(|c| idx(c)).collect();

    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row_no = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    row: row_no,
                    column: "*".into(),
                    value: e.to_string(),
                });
                continue;
            }
        };
        let cell = |k: usize| rec.get(cols[k]).unwrap_or("");
        let mut bad = |k: usize| {
            errors.push(RowError {
                row: row_no,
                column: MANIFEST_COLUMNS[k].into(),
                value: cell(k).into(),
            })
        };
        macro_rules! field {
            ($k:expr, $parser:expr) => {
                match parse_opt(cell($k), $parser) {
                    Ok(v) => v,
                    Err(()) => {
                        bad($k);
                        None
                    }
                }
            };
        }
        let id = cell(0).trim().to_string();
        if id.is_empty() {
            bad(0);
        }
        let record = ParticipantRecord {
            participant_id: id,
            age: field!(3, parse_f64),
            sex: field!(4, parse_sex),
            diabetes_duration: field!(5, parse_f64),
            mtcns: field!(6, |s: &str| s.parse::<i32>().ok()),
            tbi: field!(7, parse_f64),
            pad_clinical_history: field!(8, parse_bool),
            prior_ulcer: field!(9, parse_bool),
            prior_amputation: field!(10, parse_bool),
            complications: field!(11, parse_complications),
            physical_impairment: field!(12, parse_bool),
            visual_impairment: field!(13, parse_bool),
            monofilament_insensitive: field!(14, parse_bool),
            pinprick: field!(15, parse_exam),
            vibration: field!(16, parse_exam),
            light_touch: field!(17, parse_exam),
            position_sense: field!(18, parse_exam),
            temperature_sense: field!(19, parse_exam),
        };
        for k in [1, 2] {
            if cell(k).trim().is_empty() {
                bad(k);
            }
        }
        rows.push(ManifestRow {
            visual_path: PathBuf::from(cell(1).trim()),
            thermal_path: PathBuf::from(cell(2).trim()),
            record,
        });
    }
    if !errors.is_empty() {
        return Err(IngestError::UnparseableRows(errors));
    }
    if rows.is_empty() {
        return Err(IngestError::SchemaMismatch {
            column: MANIFEST_COLUMNS[0].into(),
            detail: "no data rows".into(),
        });
    }
    let mut seen = HashSet::new();
    for r in &rows {
        if !seen.insert(r.participant_id()) {
            return Err(IngestError::DuplicateId(r.participant_id().to_string()));
        }
    }
    let manifest = Manifest { base_dir, rows };
    for (i, r) in manifest.rows.iter().enumerate() {
        for p in [&r.visual_path, &r.thermal_path] {
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(IngestError::MissingFile { row: i + 1, path: full });
            }
        }
    }
    Ok(manifest)
}

#[derive(Serialize, Deserialize)]
struct ThermalSidecar {
    height: usize,
    width: usize,
    units: String,
}

fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

/// Writes a raw little-endian `f32` grid plus its JSON sidecar.
pub fn write_thermal_raw(grid: &ThermalGrid, path: &Path) -> Result<(), IngestError> {
    let mut bytes = Vec::with_capacity(grid.values.len() * 4);
    for v in &grid.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))?;
    let side = ThermalSidecar {
        height: grid.height,
        width: grid.width,
        units: "C".into(),
    };
    let sp = sidecar_path(path);
    fs::write(&sp, serde_json::to_vec_pretty(&side).expect("sidecar serializes")).map_err(io_err(&sp))
}

/// Writes a grid as CSV, one image row per line. Background pixels are
/// written as `NaN`.
pub fn write_thermal_csv(grid: &ThermalGrid, path: &Path) -> Result<(), IngestError> {
    let mut out = String::new();
    for r in 0..grid.height {
        let row: Vec<String> = (0..grid.width).map(|c| grid.get(r, c).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads a raw thermal grid without validating values.
fn read_thermal_values(path: &Path) -> Result<(usize, usize, Vec<f32>), IngestError> {
    let fmt_err = |detail: String| IngestError::ThermalFormat {
        path: path.to_path_buf(),
        detail,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "csv" => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let mut values = Vec::new();
            let mut width = None;
            let mut height = 0;
            for (r, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let row: Vec<f32> = line
                    .split(',')
                    .map(|s| {
                        let s = s.trim();
                        s.parse::<f32>()
                            .map_err(|_| fmt_err(format!("row {r}: cannot parse {s:?}")))
                    })
                    .collect::<Result<_, _>>()?;
                match width {
                    None => width = Some(row.len()),
                    Some(w) if w != row.len() => {
                        return Err(fmt_err(format!("row {r} has {} columns, expected {w}", row.len())))
                    }
                    _ => {}
                }
                values.extend(row);
                height += 1;
            }
            let width = width.ok_or_else(|| fmt_err("empty grid".into()))?;
            Ok((height, width, values))
        }
        "f32" | "raw" | "bin" => {
            let sp = sidecar_path(path);
            let side: ThermalSidecar = serde_json::from_slice(&fs::read(&sp).map_err(io_err(&sp))?)
                .map_err(|e| fmt_err(format!("sidecar: {e}")))?;
            if side.units != "C" {
                return Err(fmt_err(format!("unsupported units {:?}", side.units)));
            }
            let bytes = fs::read(path).map_err(io_err(path))?;
            if bytes.len() != side.height * side.width * 4 {
                return Err(fmt_err(format!(
                    "{} bytes for a {}×{} grid",
                    bytes.len(),
                    side.height,
                    side.width
                )));
            }
            let values = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok((side.height, side.width, values))
        }
        other => Err(fmt_err(format!("unknown thermal extension {other:?}"))),
    }
}

/// Loads a raw (unsegmented) thermal grid; every value must be finite and
/// inside `valid_range`.
pub fn load_thermal(path: &Path, valid_range: (f32, f32)) -> Result<ThermalGrid, IngestError> {
    let (h, w, values) = read_thermal_values(path)?;
    ThermalGrid::new(h, w, values, valid_range)
}

/// Loads a segmented grid; `NaN` marks background.
pub fn load_segmented_thermal(path: &Path) -> Result<ThermalGrid, IngestError> {
    let (h, w, values) = read_thermal_values(path)?;
    if values.iter().any(|v| v.is_infinite()) {
        return Err(IngestError::ThermalFormat {
            path: path.to_path_buf(),
            detail: "infinite value".into(),
        });
    }
    Ok(ThermalGrid::with_background(h, w, values, DEFAULT_VALID_RANGE))
}

pub fn load_visual(path: &Path) -> Result<VisualImage, IngestError> {
    let img = image::open(path)
        .map_err(|e| IngestError::Image {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(VisualImage::new(h as usize, w as usize, img.into_raw()))
}

pub fn save_visual(img: &VisualImage, path: &Path) -> Result<(), IngestError> {
    image::RgbImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .expect("buffer matches dimensions")
        .save(path)
        .map_err(|e| IngestError::Image {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

/// Loads both images of a manifest row and enforces registration.
pub fn load_image_pair(manifest: &Manifest, row: &ManifestRow) -> Result<ImagePair, IngestError> {
    let visual = load_visual(&manifest.resolve(&row.visual_path))?;
    let thermal = load_thermal(&manifest.resolve(&row.thermal_path), DEFAULT_VALID_RANGE)?;
    make_pair(row.participant_id().to_string(), visual, thermal)
}

pub fn make_pair(
    participant_id: String,
    visual: VisualImage,
    thermal: ThermalGrid,
) -> Result<ImagePair, IngestError> {
    if visual.dims() != thermal.dims() {
        return Err(IngestError::DimensionMismatch {
            visual: visual.dims(),
            thermal: thermal.dims(),
        });
    }
    Ok(ImagePair {
        participant_id,
        visual,
        thermal,
    })
}

/// Temperature window `(lo, hi)` in °C mapped onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempWindow {
    lo: f32,
    hi: f32,
}

impl TempWindow {
    pub fn new(lo: f32, hi: f32) -> Result<Self, IngestError> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(IngestError::DegenerateWindow { lo, hi });
        }
        Ok(TempWindow { lo, hi })
    }

    pub fn lo(&self) -> f32 {
        self.lo
    }

    pub fn hi(&self) -> f32 {
        self.hi
    }

    /// `clip((v − lo) / (hi − lo), 0, 1)`; NaN passes through.
    pub fn apply(&self, v: f32) -> f32 {
        if v.is_nan() {
            return v;
        }
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

impl Default for TempWindow {
    fn default() -> Self {
        TempWindow { lo: 20.0, hi: 40.0 }
    }
}

/// Maps a grid onto the unit interval; background pixels stay NaN.
pub fn normalize_thermal(grid: &ThermalGrid, window: TempWindow) -> Vec<f32> {
    grid.values.iter().map(|&v| window.apply(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<f32>, h: usize, w: usize) -> ThermalGrid {
        ThermalGrid::new(h, w, values, DEFAULT_VALID_RANGE).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let w = TempWindow::new(20.0, 40.0).unwrap();
        let g = grid(vec![30.0, 20.0, 40.0, 45.0], 2, 2);
        assert_eq!(normalize_thermal(&g, w), vec![0.5, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn degenerate_window_rejected() {
        assert!(matches!(TempWindow::new(30.0, 30.0), Err(IngestError::DegenerateWindow { .. })));
        assert!(matches!(TempWindow::new(40.0, 20.0), Err(IngestError::DegenerateWindow { .. })));
    }

    #[test]
    fn normalize_is_idempotent_on_unit_window() {
        let w = TempWindow::new(0.0, 1.0).unwrap();
        let g = ThermalGrid::new(1, 4, vec![0.0, 0.25, 0.5, 1.0], (0.0, 1.0)).unwrap();
        let once = normalize_thermal(&g, w);
        let g2 = ThermalGrid::new(1, 4, once.clone(), (0.0, 1.0)).unwrap();
        assert_eq!(normalize_thermal(&g2, w), once);
    }

    #[test]
    fn nan_temperature_rejected() {
        let e = ThermalGrid::new(1, 2, vec![30.0, f32::NAN], DEFAULT_VALID_RANGE).unwrap_err();
        assert!(matches!(e, IngestError::NonFiniteTemperature { row: 0, col: 1 }));
    }

    #[test]
    fn registration_enforced() {
        let v = VisualImage::new(224, 224, vec![0; 224 * 224 * 3]);
        let t = grid(vec![30.0; 120 * 160], 120, 160);
        assert!(matches!(
            make_pair("a".into(), v, t),
            Err(IngestError::DimensionMismatch { visual: (224, 224), thermal: (120, 160) })
        ));
    }

    #[test]
    fn record_validation() {
        let mut r = ParticipantRecord {
            participant_id: "P1".into(),
            mtcns: Some(6),
            tbi: Some(0.83),
            ..Default::default()
        };
        assert!(validate_record(&r).is_empty());
        r.mtcns = Some(40);
        let v = validate_record(&r);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "mtcns");
        r.mtcns = Some(6);
        r.tbi = Some(-0.1);
        let v = validate_record(&r);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "tbi");
    }

    #[test]
    fn complications_distinguish_missing_from_empty() {
        assert_eq!(parse_complications("none"), Some(BTreeSet::new()));
        assert_eq!(
            parse_complications("neuropathy;pad"),
            Some([Complication::Neuropathy, Complication::Pad].into())
        );
        assert_eq!(parse_complications("gout"), None);
        assert_eq!(parse_opt("NA", parse_complications), Ok(None));
    }
}
