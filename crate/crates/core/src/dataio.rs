//! Multi-view datasets: manifest and CSV loading, min-max normalisation,
//! synthetic blob generation and minibatching.
//!
//! Manifest format (`key=value`, one per line, `#` comments):
//!
//! ```text
//! name=blobs
//! view1=view1.csv
//! view2=view2.csv
//! labels=labels.csv
//! clusters=4
//! ```
//!
//! View files are headerless CSV with one sample per row; the labels file
//! holds one integer per line. Paths are relative to the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    pub name: String,
    pub views: Vec<Matrix>,
    pub labels: Option<Vec<usize>>,
    pub n_clusters: usize,
}

impl MultiViewDataset {
    /// Validates and assembles a dataset.
    pub fn new(
        name: impl Into<String>,
        views: Vec<Matrix>,
        labels: Option<Vec<usize>>,
        n_clusters: usize,
    ) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(Error::Input("a dataset needs at least one view".into()));
        };
        let n = first.rows();
        for (m, v) in views.iter().enumerate() {
            if v.rows() != n {
                return Err(Error::Integrity {
                    view: m + 1,
                    found: v.rows(),
                    expected: n,
                });
            }
            if !v.is_finite() {
                return Err(Error::Input(format!("view {} has non-finite entries", m + 1)));
            }
        }
        if n_clusters < 1 {
            return Err(Error::Label("cluster count must be positive".into()));
        }
        if let Some(labels) = &labels {
            validate_labels(labels, n, n_clusters)?;
        }
        Ok(Self {
            name: name.into(),
            views,
            labels,
            n_clusters,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].rows()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(Matrix::cols).collect()
    }

    /// Copy with every view min-max normalised per column.
    pub fn normalized(&self) -> Self {
        Self {
            views: self.views.iter().map(minmax_normalize).collect(),
            ..self.clone()
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            indices: indices.to_vec(),
            views: self.views.iter().map(|v| v.select_rows(indices)).collect(),
        }
    }
}

fn validate_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Label(format!("{} labels for {n} samples", labels.len())));
    }
    let mut seen = vec![false; k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Label(format!(
                "label {l} at row {} is outside 0..{}",
                i + 1,
                k - 1
            )));
        }
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Label(format!("cluster id {missing} never occurs in labels")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub view_files: Vec<PathBuf>,
    pub labels_file: Option<PathBuf>,
    pub n_clusters: usize,
}

impl DatasetManifest {
    /// Parses a manifest; relative paths are resolved against its directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut name = None;
        let mut views: Vec<(usize, PathBuf)> = Vec::new();
        let mut labels = None;
        let mut clusters = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "manifest line {}: expected key=value",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "name" => name = Some(value.to_string()),
                "labels" => labels = Some(base.join(value)),
                "clusters" => {
                    clusters = Some(value.parse::<usize>().map_err(|_| {
                        Error::Config(format!("manifest: clusters={value} is not a count"))
                    })?)
                }
                k if k.starts_with("view") => {
                    let idx: usize = k[4..]
                        .parse()
                        .map_err(|_| Error::Config(format!("manifest: bad view key {k}")))?;
                    views.push((idx, base.join(value)));
                }
                other => return Err(Error::Config(format!("manifest: unknown key {other}"))),
            }
        }
        views.sort_by_key(|(i, _)| *i);
        for (pos, (idx, _)) in views.iter().enumerate() {
            if *idx != pos + 1 {
                return Err(Error::Config(format!(
                    "manifest: view keys must be view1..viewM without gaps, found view{idx}"
                )));
            }
        }
        if views.is_empty() {
            return Err(Error::Config("manifest lists no views".into()));
        }
        let n_clusters = clusters.ok_or_else(|| Error::Config("manifest: missing clusters".into()))?;
        if n_clusters < 2 {
            return Err(Error::Config(format!("manifest: clusters={n_clusters} must be >= 2")));
        }
        Ok(Self {
            name: name.unwrap_or_else(|| "dataset".into()),
            view_files: views.into_iter().map(|(_, p)| p).collect(),
            labels_file: labels,
            n_clusters,
        })
    }

    /// Writes the manifest with paths relative to `dir` where possible.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let mut s = format!("name={}\n", self.name);
        for (m, f) in self.view_files.iter().enumerate() {
            let _ = writeln!(s, "view{}={}", m + 1, rel(f));
        }
        if let Some(l) = &self.labels_file {
            let _ = writeln!(s, "labels={}", rel(l));
        }
        let _ = writeln!(s, "clusters={}", self.n_clusters);
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for (c, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                row: rows + 1,
                col: c + 1,
                msg: format!("not a number: {:?}", cell.trim()),
            })?;
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(w) if w != width => {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    row: rows + 1,
                    col: width.min(w) + 1,
                    msg: format!("expected {w} columns, found {width}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(m.rows() * m.cols() * 8);
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                row: i + 1,
                col: 1,
                msg: format!("not a cluster id: {:?}", l.trim()),
            })
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        let _ = writeln!(s, "{l}");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Loads every view and the optional labels, validates alignment, and
/// min-max normalises each view.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<MultiViewDataset> {
    let views = manifest
        .view_files
        .iter()
        .map(read_matrix_csv)
        .collect::<Result<Vec<_>>>()?;
    let labels = manifest.labels_file.as_ref().map(read_labels).transpose()?;
    let raw = MultiViewDataset::new(manifest.name.clone(), views, labels, manifest.n_clusters)?;
    Ok(raw.normalized())
}

/// Maps each column to [0, 1]; constant columns become 0.
pub fn minmax_normalize(view: &Matrix) -> Matrix {
    let mut out = view.clone();
    for j in 0..view.cols() {
        let (lo, hi) = (0..view.rows())
            .map(|i| view.get(i, j))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = hi - lo;
        for i in 0..view.rows() {
            let v = if span > 0.0 { (view.get(i, j) - lo) / span } else { 0.0 };
            out.set(i, j, v);
        }
    }
    out
}

/// Parameters of the synthetic multi-view blob generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_clusters: usize,
    pub per_cluster: usize,
    pub view_dims: Vec<usize>,
    pub noise_scale: f64,
    pub separation: f64,
    /// Latent dimensionality; `None` uses the cluster count.
    pub latent_dim: Option<usize>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n_clusters: usize, per_cluster: usize, view_dims: &[usize]) -> Self {
        Self {
            n_clusters,
            per_cluster,
            view_dims: view_dims.to_vec(),
            noise_scale: 0.1,
            separation: 10.0,
            latent_dim: None,
            seed: 0,
        }
    }
}

/// Gaussian blobs in a latent space, pushed through one random linear map
/// per view plus view noise. Labels are the generating clusters.
pub fn synth_generate(spec: &SynthSpec) -> Result<MultiViewDataset> {
    if spec.n_clusters == 0 || spec.per_cluster == 0 || spec.view_dims.is_empty() {
        return Err(Error::param("synthetic counts must be positive"));
    }
    if spec.view_dims.contains(&0) {
        return Err(Error::param("view dimensions must be positive"));
    }
    let k = spec.n_clusters;
    let latent = spec.latent_dim.unwrap_or(k).max(1);
    let n = k * spec.per_cluster;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };

    let centers = draw_centers(k, latent, spec.separation, &mut gauss);
    let labels: Vec<usize> = (0..n).map(|i| i / spec.per_cluster).collect();
    let z = Matrix::from_fn(n, latent, |i, d| centers[labels[i]][d] + gauss());

    let mut views = Vec::with_capacity(spec.view_dims.len());
    for &dim in &spec.view_dims {
        let scale = 1.0 / (latent as f64).sqrt();
        let map = Matrix::from_fn(latent, dim, |_, _| gauss() * scale);
        let mut x = z.matmul(&map)?;
        for v in x.data_mut() {
            *v += spec.noise_scale * gauss();
        }
        views.push(x);
    }
    MultiViewDataset::new("synthetic", views, Some(labels), k)
}

fn draw_centers(k: usize, dim: usize, separation: f64, gauss: &mut impl FnMut() -> f64) -> Vec<Vec<f64>> {
    let mut spread = separation.max(1.0);
    loop {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut attempts = 0;
        while centers.len() < k && attempts < 1000 {
            attempts += 1;
            let c: Vec<f64> = (0..dim).map(|_| gauss() * spread).collect();
            let ok = centers.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
            });
            if ok {
                centers.push(c);
            }
        }
        if centers.len() == k {
            return centers;
        }
        spread *= 2.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub views: Vec<Matrix>,
}

/// Splits `0..n` into chunks of `batch_size`, shuffled when `seed` is given.
/// A trailing chunk of one sample is merged into its predecessor.
pub fn batch_indices(n: usize, batch_size: usize, seed: Option<u64>) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::param(format!("batch size {batch_size} must be >= 2")));
    }
    if n < 2 {
        return Err(Error::param(format!("{n} samples cannot form a batch of >= 2")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
        let tail = chunks.pop().expect("nonempty");
        chunks.last_mut().expect("nonempty").extend(tail);
    }
    Ok(chunks)
}

/// One epoch of minibatches.
pub fn batch_iter(
    dataset: &MultiViewDataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<impl Iterator<Item = Batch> + '_> {
    let chunks = batch_indices(dataset.n_samples(), batch_size, shuffle_seed)?;
    Ok(chunks.into_iter().map(move |idx| dataset.batch(&idx)))
}
