//! Every on-disk format survives a write/read cycle through real files.

use ultraot::io::{
    create, open, read_distributions, read_matrix, read_points, read_samples, write_distributions,
    write_matrix, write_points, write_samples,
};
use ultraot::synth::{disjoint_pairs, gen_distributions, gen_gaussian_points};
use ultraot::ultra::TreeFile;
use ultraot::{
    euclidean_matrix, label_pairs, train, Checkpoint, Mode, TrainConfig, TrainState, UltraTree,
};

#[test]
fn formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);

    let pts = gen_gaussian_points(12, 3, 5).unwrap();
    write_points(create(path("p.csv")).unwrap(), &pts).unwrap();
    let pts_back = read_points(open(path("p.csv")).unwrap()).unwrap();
    assert_eq!(pts_back.coords(), pts.coords());

    let d = euclidean_matrix(&pts);
    write_matrix(create(path("m.csv")).unwrap(), d.as_array()).unwrap();
    assert_eq!(read_matrix(open(path("m.csv")).unwrap()).unwrap(), d);

    let dists = gen_distributions(12, 8, 0.5, 6).unwrap();
    write_distributions(create(path("d.csv")).unwrap(), &dists).unwrap();
    let dists_back = read_distributions(open(path("d.csv")).unwrap(), Some(12)).unwrap();
    assert_eq!(dists_back, dists);

    let pairs = label_pairs(&d, dists, &disjoint_pairs(4)).unwrap();
    write_samples(create(path("s.jsonl")).unwrap(), pairs.samples()).unwrap();
    assert_eq!(
        read_samples(open(path("s.jsonl")).unwrap()).unwrap(),
        pairs.samples()
    );

    let cfg = TrainConfig {
        max_iterations: 5,
        ..TrainConfig::default()
    };
    let out = train(&d, &pairs, &cfg).unwrap();
    let json = serde_json::to_string(&out.tree.to_file()).unwrap();
    let file: TreeFile = serde_json::from_str(&json).unwrap();
    let tree = UltraTree::from_file(&file).unwrap();
    assert_eq!(
        tree.to_matrix().unwrap().as_array(),
        out.tree.to_matrix().unwrap().as_array()
    );

    let state = TrainState::new(&d, Mode::Full).unwrap();
    let ck = state.checkpoint(&cfg);
    ck.write(create(path("ck.json")).unwrap()).unwrap();
    assert_eq!(
        Checkpoint::read(open(path("ck.json")).unwrap()).unwrap(),
        ck
    );
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = open(dir.path().join("nope.csv")).unwrap_err();
    assert_eq!(err.kind(), ultraot::ErrorKind::Io);
}
