use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use moegcl::cluster::{accuracy, kmeans, KMeansConfig};
use moegcl::dataio::{
    batch_indices, load_dataset, minmax_normalize, read_matrix_csv, synth_generate, DatasetManifest, SynthSpec,
};
use moegcl::{Error, Matrix};
use proptest::prelude::*;

fn write_int_csv(path: &Path, rows: usize, cols: usize, f: impl Fn(usize, usize) -> u32) {
    let mut s = String::with_capacity(rows * cols * 2);
    for i in 0..rows {
        for j in 0..cols {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", f(i, j));
        }
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

#[test]
fn two_view_manifest_from_files() {
    let dir = tempfile::tempdir().unwrap();
    write_int_csv(&dir.path().join("a.csv"), 4, 3, |i, j| (i * 3 + j) as u32);
    write_int_csv(&dir.path().join("b.csv"), 4, 2, |i, j| (i + j) as u32);
    fs::write(dir.path().join("y.csv"), "0\n1\n0\n1\n").unwrap();
    fs::write(
        dir.path().join("m.txt"),
        "name=tiny\nview1=a.csv\nview2=b.csv\nlabels=y.csv\nclusters=2\n",
    )
    .unwrap();
    let data = load_dataset(&DatasetManifest::read(dir.path().join("m.txt")).unwrap()).unwrap();
    assert_eq!(data.n_samples(), 4);
    assert_eq!(data.n_views(), 2);
    assert_eq!(data.view_dims(), vec![3, 2]);
    assert_eq!(data.labels.as_deref(), Some(&[0, 1, 0, 1][..]));
}

#[test]
fn row_count_mismatch_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    write_int_csv(&dir.path().join("a.csv"), 4, 3, |_, _| 1);
    write_int_csv(&dir.path().join("b.csv"), 5, 2, |_, _| 1);
    fs::write(dir.path().join("m.txt"), "name=bad\nview1=a.csv\nview2=b.csv\nclusters=2\n").unwrap();
    let err = load_dataset(&DatasetManifest::read(dir.path().join("m.txt")).unwrap()).unwrap_err();
    assert!(
        matches!(err, Error::Integrity { view: 2, found: 5, expected: 4 }),
        "{err}"
    );
}

#[test]
fn webkb_shaped_manifest_loads_with_its_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    write_int_csv(&dir.path().join("content.csv"), 1051, 2949, |i, j| ((i * 7 + j * 13) % 5 == 0) as u32);
    write_int_csv(&dir.path().join("links.csv"), 1051, 334, |i, j| ((i + j) % 11 == 0) as u32);
    let labels: String = (0..1051).map(|i| format!("{}\n", i % 2)).collect();
    fs::write(dir.path().join("labels.csv"), labels).unwrap();
    fs::write(
        dir.path().join("webkb.txt"),
        "name=webkb\nview1=content.csv\nview2=links.csv\nlabels=labels.csv\nclusters=2\n",
    )
    .unwrap();
    let data = load_dataset(&DatasetManifest::read(dir.path().join("webkb.txt")).unwrap()).unwrap();
    assert_eq!(data.n_samples(), 1051);
    assert_eq!(data.view_dims(), vec![2949, 334]);
    assert_eq!(data.n_clusters, 2);
}

#[test]
fn parse_errors_carry_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    fs::write(&p, "1,2,3\n4,oops,6\n").unwrap();
    match read_matrix_csv(&p).unwrap_err() {
        Error::Parse { row, col, .. } => assert_eq!((row, col), (2, 2)),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn load_normalize_batch_round_trip() {
    let data = synth_generate(&SynthSpec::new(3, 5, &[4, 6])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (m, v) in data.views.iter().enumerate() {
        let p = dir.path().join(format!("view{}.csv", m + 1));
        moegcl::dataio::write_matrix_csv(&p, v).unwrap();
        files.push(p);
    }
    let lp = dir.path().join("labels.csv");
    moegcl::dataio::write_labels(&lp, data.labels.as_deref().unwrap()).unwrap();
    let manifest = DatasetManifest {
        name: "rt".into(),
        view_files: files,
        labels_file: Some(lp),
        n_clusters: 3,
    };
    manifest.write(dir.path().join("m.txt")).unwrap();
    let loaded = load_dataset(&DatasetManifest::read(dir.path().join("m.txt")).unwrap()).unwrap();
    assert_eq!(loaded.views, data.normalized().views);
    assert_eq!(loaded.labels, data.labels);

    let chunks = batch_indices(loaded.n_samples(), 4, Some(9)).unwrap();
    for idx in &chunks {
        let batch = loaded.batch(idx);
        for (m, v) in batch.views.iter().enumerate() {
            for (r, &i) in idx.iter().enumerate() {
                assert_eq!(v.row(r), loaded.views[m].row(i));
            }
        }
    }
}

#[test]
fn synthetic_views_cluster_well_on_raw_features() {
    let mut spec = SynthSpec::new(4, 100, &[16, 24, 8]);
    spec.seed = 21;
    let data = synth_generate(&spec).unwrap();
    let labels = data.labels.as_deref().unwrap();
    for view in &data.views {
        let res = kmeans(view, &KMeansConfig::new(4, 0)).unwrap();
        let acc = accuracy(labels, &res.assignments).unwrap();
        assert!(acc >= 0.9, "per-view accuracy {acc}");
    }
}

#[test]
fn noiseless_views_sit_nearest_their_own_centroid() {
    let mut spec = SynthSpec::new(3, 20, &[5, 9]);
    spec.noise_scale = 0.0;
    spec.separation = 100.0;
    let data = synth_generate(&spec).unwrap();
    let labels = data.labels.as_deref().unwrap();
    for view in &data.views {
        let centroids: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                (0..view.cols())
                    .map(|j| members.iter().map(|&i| view.get(i, j)).sum::<f64>() / members.len() as f64)
                    .collect()
            })
            .collect();
        for (i, &l) in labels.iter().enumerate() {
            let d = |c: &Vec<f64>| view.row(i).iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let own = d(&centroids[l]);
            assert!(centroids.iter().enumerate().all(|(c, cen)| c == l || own < d(cen)));
        }
    }
}

proptest! {
    #[test]
    fn minmax_hits_exact_bounds(vals in prop::collection::vec(-1e3f64..1e3, 2..60), cols in 1usize..5) {
        let rows = vals.len() / cols;
        prop_assume!(rows >= 1);
        let m = Matrix::new(rows, cols, vals[..rows * cols].to_vec()).unwrap();
        let out = minmax_normalize(&m);
        for j in 0..cols {
            let col = out.column(j);
            let src = m.column(j);
            let constant = src.iter().all(|&v| v == src[0]);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if constant {
                prop_assert!(col.iter().all(|&v| v == 0.0));
            } else {
                prop_assert_eq!((lo, hi), (0.0, 1.0));
            }
        }
    }

    #[test]
    fn every_epoch_is_a_permutation(n in 2usize..500, b in 2usize..64, seed in any::<u64>()) {
        let chunks = batch_indices(n, b, Some(seed)).unwrap();
        let mut all: Vec<usize> = chunks.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(chunks.iter().all(|c| c.len() >= 2));
    }
}
