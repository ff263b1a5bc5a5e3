use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use thermomark::ingest::{
    load_image_pair, load_manifest, load_segmented_thermal, load_thermal, normalize_thermal, validate_record,
    write_manifest, write_thermal_csv, write_thermal_raw, Complication, ExamResult, IngestError, Manifest,
    ManifestRow, ParticipantRecord, Sex, TempWindow, ThermalGrid, VisualImage, DEFAULT_VALID_RANGE,
    MANIFEST_COLUMNS,
};
use thermomark::synthdata::{generate_cohort, CohortSpec};

fn touch(dir: &Path, name: &str) -> PathBuf {
    let p = PathBuf::from(name);
    fs::write(dir.join(&p), b"x").unwrap();
    p
}

fn row(dir: &Path, record: ParticipantRecord) -> ManifestRow {
    let id = record.participant_id.clone();
    ManifestRow {
        visual_path: touch(dir, &format!("{id}.png")),
        thermal_path: touch(dir, &format!("{id}.csv")),
        record,
    }
}

fn exam() -> impl Strategy<Value = Option<ExamResult>> {
    prop::option::of(prop_oneof![Just(ExamResult::Normal), Just(ExamResult::Impaired)])
}

fn finite() -> impl Strategy<Value = Option<f64>> {
    prop::option::of(prop_oneof![0.0..120.0f64, Just(0.0), Just(1e-300), Just(85.25)])
}

prop_compose! {
    fn record()(
        age in finite(),
        sex in prop::option::of(prop_oneof![Just(Sex::Male), Just(Sex::Female)]),
        duration in finite(),
        mtcns in prop::option::of(0..=33i32),
        tbi in finite(),
        flags in prop::collection::vec(prop::option::of(any::<bool>()), 6),
        complications in prop::option::of(prop::collection::btree_set(
            prop::sample::select(Complication::ALL.to_vec()), 0..=5)),
        e1 in exam(), e2 in exam(), e3 in exam(), e4 in exam(), e5 in exam(),
    ) -> ParticipantRecord {
        ParticipantRecord {
            participant_id: String::new(),
            age,
            sex,
            diabetes_duration: duration,
            mtcns,
            tbi,
            pad_clinical_history: flags[0],
            prior_ulcer: flags[1],
            prior_amputation: flags[2],
            complications,
            physical_impairment: flags[3],
            visual_impairment: flags[4],
            monofilament_insensitive: flags[5],
            pinprick: e1,
            vibration: e2,
            light_touch: e3,
            position_sense: e4,
            temperature_sense: e5,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_round_trips_field_for_field(records in prop::collection::vec(record(), 1..8)) {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<ManifestRow> = records
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.participant_id = format!("S{i:03}");
                row(dir.path(), r)
            })
            .collect();
        let manifest = Manifest { base_dir: dir.path().to_path_buf(), rows };
        let path = dir.path().join("manifest.csv");
        write_manifest(&manifest, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        prop_assert_eq!(loaded, manifest);
    }

    #[test]
    fn normalization_is_monotone_and_clipped(a in -10.0f32..70.0, b in -10.0f32..70.0) {
        let w = TempWindow::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(w.apply(lo) <= w.apply(hi));
        prop_assert!((0.0..=1.0).contains(&w.apply(a)));
    }
}

#[test]
fn empty_manifest_is_a_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.csv");
    fs::write(&path, "").unwrap();
    assert!(matches!(load_manifest(&path), Err(IngestError::SchemaMismatch { .. })));
    fs::write(&path, format!("{}\n", MANIFEST_COLUMNS.join(","))).unwrap();
    assert!(matches!(load_manifest(&path), Err(IngestError::SchemaMismatch { .. })));
}

#[test]
fn duplicate_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let rec = ParticipantRecord {
        participant_id: "A".into(),
        ..Default::default()
    };
    let manifest = Manifest {
        base_dir: dir.path().to_path_buf(),
        rows: vec![row(dir.path(), rec.clone()), row(dir.path(), rec)],
    };
    let path = dir.path().join("manifest.csv");
    write_manifest(&manifest, &path).unwrap();
    assert!(matches!(load_manifest(&path), Err(IngestError::DuplicateId(id)) if id == "A"));
}

#[test]
fn unparseable_cells_are_reported_by_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Manifest {
        base_dir: dir.path().to_path_buf(),
        rows: vec![row(
            dir.path(),
            ParticipantRecord {
                participant_id: "A".into(),
                mtcns: Some(4),
                ..Default::default()
            },
        )],
    };
    let path = dir.path().join("manifest.csv");
    write_manifest(&manifest, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap().replace(",4,", ",four,");
    fs::write(&path, text).unwrap();
    match load_manifest(&path) {
        Err(IngestError::UnparseableRows(errs)) => {
            assert_eq!(errs.len(), 1);
            assert_eq!((errs[0].row, errs[0].column.as_str(), errs[0].value.as_str()), (1, "mtcns", "four"));
        }
        other => panic!("expected UnparseableRows, got {other:?}"),
    }
}

#[test]
fn missing_image_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = row(
        dir.path(),
        ParticipantRecord {
            participant_id: "A".into(),
            ..Default::default()
        },
    );
    r.thermal_path = "absent.csv".into();
    let manifest = Manifest {
        base_dir: dir.path().to_path_buf(),
        rows: vec![r],
    };
    let path = dir.path().join("manifest.csv");
    write_manifest(&manifest, &path).unwrap();
    assert!(matches!(load_manifest(&path), Err(IngestError::MissingFile { row: 1, .. })));
}

#[test]
fn full_cohort_manifest_loads_without_touching_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CohortSpec {
        height: 64,
        width: 48,
        n_rated: 0,
        ..CohortSpec::default()
    };
    generate_cohort(&spec, dir.path()).unwrap();
    let path = dir.path().join("manifest.csv");
    let before = fs::read(&path).unwrap();
    let manifest = load_manifest(&path).unwrap();
    assert_eq!(manifest.len(), 282);
    let pair = load_image_pair(&manifest, &manifest.rows[0]).unwrap();
    assert_eq!(pair.visual.dims(), (64, 48));
    assert_eq!(pair.thermal.dims(), (64, 48));
    assert_eq!(fs::read(&path).unwrap(), before);
}

fn write_pair(dir: &Path, visual: (usize, usize), thermal: &str) -> Manifest {
    let img = VisualImage::new(visual.0, visual.1, vec![128; visual.0 * visual.1 * 3]);
    thermomark::ingest::save_visual(&img, &dir.join("v.png")).unwrap();
    fs::write(dir.join("t.csv"), thermal).unwrap();
    Manifest {
        base_dir: dir.to_path_buf(),
        rows: vec![ManifestRow {
            visual_path: "v.png".into(),
            thermal_path: "t.csv".into(),
            record: ParticipantRecord {
                participant_id: "A".into(),
                ..Default::default()
            },
        }],
    }
}

fn csv_grid(h: usize, w: usize, v: &str) -> String {
    (0..h).map(|_| vec![v; w].join(",") + "\n").collect()
}

#[test]
fn registered_pair_loads() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_pair(dir.path(), (224, 224), &csv_grid(224, 224, "30.5"));
    let pair = load_image_pair(&m, &m.rows[0]).unwrap();
    assert_eq!(pair.participant_id, "A");
    assert_eq!(pair.thermal.get(100, 100), 30.5);
}

#[test]
fn unregistered_pair_is_a_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_pair(dir.path(), (224, 224), &csv_grid(120, 160, "30"));
    assert!(matches!(
        load_image_pair(&m, &m.rows[0]),
        Err(IngestError::DimensionMismatch {
            visual: (224, 224),
            thermal: (120, 160)
        })
    ));
}

#[test]
fn nan_temperature_is_rejected_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let mut grid = csv_grid(4, 4, "30");
    grid = grid.replacen("30,30,30,30\n30,30", "30,30,30,30\n30,NaN", 1);
    let m = write_pair(dir.path(), (4, 4), &grid);
    assert!(matches!(
        load_image_pair(&m, &m.rows[0]),
        Err(IngestError::NonFiniteTemperature { row: 1, col: 1 })
    ));
}

#[test]
fn thermal_formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f32> = (0..12).map(|i| 28.0 + 0.37 * i as f32).collect();
    let grid = ThermalGrid::new(3, 4, values, DEFAULT_VALID_RANGE).unwrap();
    write_thermal_raw(&grid, &dir.path().join("g.f32")).unwrap();
    write_thermal_csv(&grid, &dir.path().join("g.csv")).unwrap();
    assert_eq!(load_thermal(&dir.path().join("g.f32"), DEFAULT_VALID_RANGE).unwrap(), grid);
    assert_eq!(load_thermal(&dir.path().join("g.csv"), DEFAULT_VALID_RANGE).unwrap(), grid);

    // Background survives only through the segmented loader.
    fs::write(dir.path().join("s.csv"), "NaN,30\n31,NaN\n").unwrap();
    let seg = load_segmented_thermal(&dir.path().join("s.csv")).unwrap();
    assert_eq!(seg.foreground_count(), 2);
    assert!(load_thermal(&dir.path().join("s.csv"), DEFAULT_VALID_RANGE).is_err());
}

#[test]
fn normalization_examples() {
    let w = TempWindow::new(20.0, 40.0).unwrap();
    let grid = ThermalGrid::new(1, 4, vec![30.0, 20.0, 40.0, 45.0], DEFAULT_VALID_RANGE).unwrap();
    assert_eq!(normalize_thermal(&grid, w), vec![0.5, 0.0, 1.0, 1.0]);
    assert!(matches!(TempWindow::new(40.0, 40.0), Err(IngestError::DegenerateWindow { .. })));

    let unit = TempWindow::new(0.0, 1.0).unwrap();
    let g = ThermalGrid::new(1, 3, vec![0.0, 0.25, 1.0], (0.0, 1.0)).unwrap();
    let once = normalize_thermal(&g, unit);
    let twice = normalize_thermal(&ThermalGrid::new(1, 3, once.clone(), (0.0, 1.0)).unwrap(), unit);
    assert_eq!(once, twice);
}

#[test]
fn record_validation_examples() {
    let ok = ParticipantRecord {
        participant_id: "P1".into(),
        mtcns: Some(6),
        tbi: Some(0.83),
        complications: Some(BTreeSet::new()),
        ..Default::default()
    };
    assert!(validate_record(&ok).is_empty());

    let high = ParticipantRecord { mtcns: Some(40), ..ok.clone() };
    let v = validate_record(&high);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].field, "mtcns");

    let negative = ParticipantRecord { tbi: Some(-0.1), ..ok };
    let v = validate_record(&negative);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].field, "tbi");
    assert!(v[0].rule.contains("negative"));
}
