use std::fs;
use std::path::Path;

use glt::graphio::{
    edges_related_to_loss, generate_sbm, load_planetoid_dir, write_planetoid_dir, GraphError, SbmConfig,
};

fn write_dir(dir: &Path, edges: &str, features: &str, labels: &str, split: &str) {
    fs::write(dir.join("edges.txt"), edges).unwrap();
    fs::write(dir.join("features.csv"), features).unwrap();
    fs::write(dir.join("labels.csv"), labels).unwrap();
    fs::write(dir.join("split.csv"), split).unwrap();
}

const FEATURES: &str = "1.0,0.0\n0.5,0.5\n0.0,1.0\n-1.0,2.5\n";
const LABELS: &str = "0\n0\n1\n1\n";
const SPLIT: &str = "train,0\ntrain,2\nval,1\ntest,3\n";

#[test]
fn fixture_drops_self_loops_and_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let edges = "# header comment\n0 1\n1 0\n\n1 2\n2 2\n2 3\n0 1\n";
    write_dir(tmp.path(), edges, FEATURES, LABELS, SPLIT);
    let (g, rep) = load_planetoid_dir(tmp.path()).unwrap();
    assert_eq!(rep.edge_lines, 6);
    assert_eq!(rep.self_loops_dropped, 1);
    assert_eq!(rep.duplicates_dropped, 2);
    assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3)]);
    assert_eq!(g.num_nodes(), 4);
    assert_eq!(g.num_features(), 2);
    assert_eq!(g.num_classes(), 2);
    assert_eq!(g.labels(), &[0, 0, 1, 1]);
    assert_eq!(g.split().train, vec![0, 2]);
    assert_eq!(g.split().val, vec![1]);
    assert_eq!(g.split().test, vec![3]);
    assert_eq!(g.features().row(3), &[-1.0, 2.5]);
    assert_eq!(g.degrees(), vec![1, 2, 2, 1]);
}

#[test]
fn missing_directory_and_file() {
    let tmp = tempfile::tempdir().unwrap();
    let err = load_planetoid_dir(tmp.path().join("absent")).unwrap_err();
    assert!(matches!(err, GraphError::MissingFile { .. }), "{err}");

    fs::write(tmp.path().join("features.csv"), FEATURES).unwrap();
    let err = load_planetoid_dir(tmp.path()).unwrap_err();
    match err {
        GraphError::MissingFile { path, .. } => assert!(path.ends_with("labels.csv")),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn malformed_inputs_report_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    write_dir(d, "0 1\n", "1,2\n3\n4,5\n6,7\n", LABELS, SPLIT);
    match load_planetoid_dir(d).unwrap_err() {
        GraphError::Ragged { line, expected, found, .. } => assert_eq!((line, expected, found), (2, 2, 1)),
        e => panic!("unexpected {e}"),
    }

    write_dir(d, "0 1\n1 9\n", FEATURES, LABELS, SPLIT);
    match load_planetoid_dir(d).unwrap_err() {
        GraphError::OutOfRange { line, id, n, .. } => assert_eq!((line, id, n), (2, 9, 4)),
        e => panic!("unexpected {e}"),
    }

    write_dir(d, "0 1 2\n", FEATURES, LABELS, SPLIT);
    assert!(matches!(load_planetoid_dir(d).unwrap_err(), GraphError::Ragged { line: 1, .. }));

    write_dir(d, "0 1\n", FEATURES, "0\n1\n", SPLIT);
    assert!(matches!(load_planetoid_dir(d).unwrap_err(), GraphError::Ragged { expected: 4, found: 2, .. }));

    write_dir(d, "0 1\n", FEATURES, LABELS, "train,0\nholdout,1\n");
    match load_planetoid_dir(d).unwrap_err() {
        GraphError::Parse { line, msg, .. } => {
            assert_eq!(line, 2);
            assert!(msg.contains("holdout"));
        }
        e => panic!("unexpected {e}"),
    }

    write_dir(d, "0 1\n", "1,nan\n0,0\n0,0\n0,0\n", LABELS, SPLIT);
    assert!(matches!(load_planetoid_dir(d).unwrap_err(), GraphError::Parse { line: 1, .. }));

    write_dir(d, "0 x\n", FEATURES, LABELS, SPLIT);
    assert!(matches!(load_planetoid_dir(d).unwrap_err(), GraphError::Parse { line: 1, .. }));
}

#[test]
fn empty_train_split_loads_but_cannot_be_analyzed() {
    let tmp = tempfile::tempdir().unwrap();
    write_dir(tmp.path(), "0 1\n", FEATURES, LABELS, "val,1\ntest,3\n");
    let (g, _) = load_planetoid_dir(tmp.path()).unwrap();
    assert!(g.split().train.is_empty());
    assert!(matches!(edges_related_to_loss(&g, 2), Err(GraphError::EmptyTrainSet)));
}

#[test]
fn sbm_round_trips_through_a_directory() {
    let cfg = SbmConfig {
        blocks: vec![15, 15, 15],
        p_in: 0.2,
        p_out: 0.02,
        feature_dim: 6,
        train_per_class: 3,
        val_per_class: 4,
        seed: 11,
        ..SbmConfig::default()
    };
    let g = generate_sbm(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_planetoid_dir(&g, tmp.path()).unwrap();
    let (h, rep) = load_planetoid_dir(tmp.path()).unwrap();
    assert_eq!(rep.self_loops_dropped + rep.duplicates_dropped, 0);
    assert_eq!(h.edges(), g.edges());
    assert_eq!(h.labels(), g.labels());
    assert_eq!(h.split(), g.split());
    assert_eq!(h.num_classes(), g.num_classes());
    for r in 0..g.num_nodes() {
        assert_eq!(h.features().row(r), g.features().row(r), "row {r}");
    }
}
