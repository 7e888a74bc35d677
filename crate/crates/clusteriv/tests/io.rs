use std::io::Cursor;

use clusteriv::io::{load_csv, load_csv_from_reader, InputSpec, IoError, MissingPolicy};

fn spec() -> InputSpec {
    InputSpec::new("unused.csv", "y", "d", "z", "g")
}

fn load(text: &str, spec: &InputSpec) -> Result<clusteriv::io::Loaded, IoError> {
    load_csv_from_reader(Cursor::new(text.to_string()), spec)
}

#[test]
fn four_row_file() {
    let l = load("y,d,z,g\n1,0,0,a\n3,1,1,a\n2,0,0,b\n5,1,1,b\n", &spec()).unwrap();
    assert_eq!(l.dataset.n_units(), 4);
    assert_eq!(l.dataset.n_clusters(), 2);
    assert_eq!(l.rows_read, 4);
}

#[test]
fn clusters_numbered_by_first_appearance() {
    let l = load("y,d,z,g\n1,0,0,B\n3,1,1,A\n2,0,1,B\n5,1,0,A\n", &spec()).unwrap();
    assert_eq!(l.dataset.clusters().group_of(), &[0, 1, 0, 1]);
    assert_eq!(l.dataset.clusters().labels(), &["B".to_string(), "A".to_string()]);
}

#[test]
fn non_binary_treatment_names_the_row() {
    match load("y,d,z,g\n1,0,0,a\n3,2,1,a\n", &spec()) {
        Err(IoError::NonBinaryColumn { column, line, value }) => {
            assert_eq!(column, "d");
            assert_eq!(line, 3);
            assert_eq!(value, "2");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn numeric_binary_spellings_are_accepted() {
    let l = load("y,d,z,g\n1,0.0,0,a\n3,1.0,1,a\n2,0,0,b\n5,1,1e0,b\n", &spec()).unwrap();
    assert_eq!(l.dataset.d(), &[0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn bad_number_is_a_parse_error() {
    match load("y,d,z,g\nabc,0,0,a\n", &spec()) {
        Err(IoError::ParseError { line, column, .. }) => assert_eq!((line, column.as_str()), (2, "y")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_values_follow_the_policy() {
    let text = "y,d,z,g\n1,0,0,a\n,1,1,a\n2,0,0,b\n5,1,1,b\n3,1,0,a\n4,0,1,b\n";
    assert!(matches!(load(text, &spec()), Err(IoError::MissingValue { line: 3, .. })));
    let drop = InputSpec { missing_policy: MissingPolicy::DropRow, ..spec() };
    let l = load(text, &drop).unwrap();
    assert_eq!((l.rows_read, l.rows_dropped, l.dataset.n_units()), (6, 1, 5));
}

#[test]
fn columns_must_exist_and_be_distinct() {
    assert!(matches!(load("y,d,z\n1,0,0\n", &spec()), Err(IoError::MissingColumn(c)) if c == "g"));
    let dup = InputSpec { covariate_cols: vec!["y".into()], ..spec() };
    assert!(matches!(load("y,d,z,g\n1,0,0,a\n", &dup), Err(IoError::DuplicateColumn(_))));
}

#[test]
fn covariates_are_attached_in_order() {
    let s = InputSpec { covariate_cols: vec!["b".into(), "a".into()], ..spec() };
    let l = load("y,d,z,g,a,b\n1,0,0,x,1,10\n3,1,1,x,2,20\n", &s).unwrap();
    let x = l.dataset.x().unwrap();
    assert_eq!(x.col(0), &[10.0, 20.0]);
    assert_eq!(x.col(1), &[1.0, 2.0]);
    assert_eq!(l.dataset.x_names(), &["b".to_string(), "a".to_string()]);
}

#[test]
fn quoted_fields_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    std::fs::write(&path, "\"y\",\"d\",\"z\",\"g\"\n1,0,0,\"a, b\"\n3,1,1,\"a, b\"\n").unwrap();
    let l = load_csv(&InputSpec { path, ..spec() }).unwrap();
    assert_eq!(l.dataset.clusters().labels(), &["a, b".to_string()]);
    assert!(matches!(load_csv(&spec()), Err(IoError::Io { .. })));
}
