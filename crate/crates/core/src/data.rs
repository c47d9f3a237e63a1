//! Dataset ingestion (IDX, CSV), synthetic cluster generation, stratified
//! splitting and deterministic epoch batching.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

/// Per-feature affine preprocessing applied at load time:
/// `stored = (raw - offset) * scale`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

/// An immutable labeled dataset: features are n x d, labels in `[0, k)`.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    k: usize,
    pub split: SplitTag,
    pub normalization: Option<NormalizationRecord>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, k: usize, split: SplitTag) -> Result<Dataset> {
        if labels.len() != features.rows() {
            return Err(Error::Usage(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if k == 0 {
            return Err(Error::Domain("class count must be >= 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index {
                what: "label",
                index: bad,
                len: k,
            });
        }
        Ok(Dataset {
            features,
            labels,
            k,
            split,
            normalization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Gather a subset by index into a new dataset (order preserved).
    pub fn subset(&self, indices: &[usize], split: SplitTag) -> Result<Dataset> {
        let d = self.d();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.feature_row(i));
            labels.push(self.labels[i]);
        }
        let mut out = Dataset::new(Tensor::raw(indices.len(), d, data), labels, self.k, split)?;
        out.normalization = self.normalization.clone();
        Ok(out)
    }
}

// ---- IDX ------------------------------------------------------------------

struct Counted<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counted<R> {
    fn new(inner: R) -> Self {
        Counted { inner, offset: 0 }
    }

    fn read_exact(&mut self, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(_) => Err(Error::Format {
                path: path.to_path_buf(),
                offset: self.offset,
                what: format!("truncated file while reading {what}"),
            }),
        }
    }

    fn read_u32_be(&mut self, path: &Path, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, path, what)?;
        Ok(u32::from_be_bytes(b))
    }
}

/// Load an MNIST-style IDX image/label pair. Pixels are scaled to [0, 1]
/// by dividing by 255; batch normalization in the first layer makes further
/// centering redundant.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: SplitTag) -> Result<Dataset> {
    // images: magic, count, rows, cols, then count*rows*cols u8 pixels
    let mut img = Counted::new(BufReader::new(File::open(images_path)?));
    let magic = img.read_u32_be(images_path, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: images_path.to_path_buf(),
            offset: 0,
            what: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = img.read_u32_be(images_path, "image count")? as usize;
    let rows = img.read_u32_be(images_path, "image rows")? as usize;
    let cols = img.read_u32_be(images_path, "image cols")? as usize;
    let d = rows * cols;
    let mut pixels = vec![0u8; count * d];
    img.read_exact(&mut pixels, images_path, "pixel data")?;

    // labels: magic, count, then count u8 labels
    let mut lab = Counted::new(BufReader::new(File::open(labels_path)?));
    let magic = lab.read_u32_be(labels_path, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 0,
            what: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = lab.read_u32_be(labels_path, "label count")? as usize;
    if label_count != count {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            what: format!("{label_count} labels for {count} images"),
        });
    }
    let mut raw_labels = vec![0u8; count];
    lab.read_exact(&mut raw_labels, labels_path, "label data")?;

    let features: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let k = labels.iter().max().map_or(1, |&m| m + 1);
    let mut ds = Dataset::new(Tensor::raw(count, d, features), labels, k, split)?;
    ds.normalization = Some(NormalizationRecord {
        scale: vec![1.0 / 255.0; d],
        offset: vec![0.0; d],
    });
    Ok(ds)
}

// ---- CSV --------------------------------------------------------------------

/// Load a numeric CSV whose last column is the integer class label.
/// Row order is preserved.
pub fn load_csv(path: &Path, has_header: bool, split: SplitTag) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;

    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line_no == 0 && has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row = line_no + 1; // 1-based for messages
        let cells: Vec<&str> = line.split(',').collect();
        match width {
            None => {
                if cells.len() < 2 {
                    return Err(Error::Parse {
                        row,
                        col: 1,
                        what: "need at least one feature column and a label column".into(),
                    });
                }
                width = Some(cells.len());
            }
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    row,
                    col: cells.len(),
                    what: format!("expected {w} columns, found {}", cells.len()),
                });
            }
            _ => {}
        }
        let w = width.unwrap();
        for (c, cell) in cells.iter().enumerate().take(w - 1) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                col: c + 1,
                what: format!("non-numeric cell {cell:?}"),
            })?;
            features.push(v);
        }
        let label_cell = cells[w - 1].trim();
        let label: f64 = label_cell.parse().map_err(|_| Error::Parse {
            row,
            col: w,
            what: format!("non-numeric label {label_cell:?}"),
        })?;
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::Parse {
                row,
                col: w,
                what: format!("label must be a non-negative integer, got {label_cell:?}"),
            });
        }
        labels.push(label as usize);
        rows += 1;
    }

    if rows == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            what: "no data rows".into(),
        });
    }
    let d = width.unwrap() - 1;
    let k = labels.iter().max().map_or(1, |&m| m + 1);
    let features = Tensor::from_vec(rows, d, features)?;
    Dataset::new(features, labels, k, split)
}

/// Write a dataset back out as CSV (features then label), the inverse of
/// [`load_csv`] without a header.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = File::create(path)?;
    for i in 0..ds.n() {
        let mut line = String::new();
        for v in ds.feature_row(i) {
            // RFC-style shortest round-trip formatting keeps save -> load exact
            line.push_str(&format!("{v}"));
            line.push(',');
        }
        line.push_str(&format!("{}\n", ds.label(i)));
        f.write_all(line.as_bytes())?;
    }
    Ok(())
}

// ---- synthetic --------------------------------------------------------------

const SIMPLEX_SCALE: f64 = 3.0;

/// k Gaussian clusters with means on a scaled coordinate simplex and
/// isotropic noise of standard deviation `spread`. Deterministic for a seed;
/// examples are generated class-major.
pub fn synth_blobs(k: usize, per_class: usize, d: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::Domain(format!("need k >= 2 classes, got {k}")));
    }
    if per_class < 1 {
        return Err(Error::Domain("need at least one example per class".into()));
    }
    if d < 1 {
        return Err(Error::Domain("need at least one feature".into()));
    }
    if spread < 0.0 {
        return Err(Error::Domain(format!("spread must be >= 0, got {spread}")));
    }
    let n = k * per_class;
    let mut data = vec![0.0; n * d];
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        // vertex of the scaled simplex; classes beyond d wrap with a larger
        // radius so all means stay distinct
        let axis = c % d;
        let radius = SIMPLEX_SCALE * (1.0 + (c / d) as f64);
        let mut rng = Rng::derive(seed, c as u64);
        for e in 0..per_class {
            let row = (c * per_class + e) * d;
            for j in 0..d {
                let mean = if j == axis { radius } else { 0.0 };
                data[row + j] = mean + spread * rng.normal();
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::from_vec(n, d, data)?, labels, k, SplitTag::Train)
}

/// Seeded stratified split: each class is shuffled independently and
/// `validation_fraction` of it (rounded, clamped so both sides keep at least
/// one example) goes to the validation set.
pub fn split(ds: &Dataset, validation_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "validation fraction must be in (0, 1), got {validation_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.k()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Stratify {
                class: c,
                count: members.len(),
            });
        }
        let mut shuffled = members.clone();
        let mut rng = Rng::derive(seed, c as u64);
        rng.shuffle(&mut shuffled);
        let want = (validation_fraction * members.len() as f64).round() as usize;
        let n_val = want.clamp(1, members.len() - 1);
        val_idx.extend_from_slice(&shuffled[..n_val]);
        train_idx.extend_from_slice(&shuffled[n_val..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((
        ds.subset(&train_idx, SplitTag::Train)?,
        ds.subset(&val_idx, SplitTag::Validation)?,
    ))
}

// ---- batching ---------------------------------------------------------------

/// Deterministic epoch batching: each epoch is a fresh seeded permutation of
/// all indices, emitted in chunks of `batch_size`; the last short batch is
/// kept.
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<BatchSampler> {
        if n == 0 || batch_size == 0 {
            return Err(Error::Domain("sampler needs n >= 1 and batch_size >= 1".into()));
        }
        let mut s = BatchSampler {
            n,
            batch_size,
            seed,
            epoch: 0,
            perm: (0..n).collect(),
            cursor: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        let mut rng = Rng::derive(self.seed, self.epoch);
        self.perm = (0..self.n).collect();
        rng.shuffle(&mut self.perm);
        self.cursor = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Next batch of example indices.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.n {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.n);
        let batch = self.perm[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

// ---- dataset URIs -------------------------------------------------------------

/// Dataset addresses used in configs:
/// `idx:images=PATH,labels=PATH`, `csv:PATH`, or
/// `synth:k=..,n=..,d=..,spread=..,seed=..` (n = examples per class).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DatasetUri {
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf },
    Synth { k: usize, per_class: usize, d: usize, spread: f64, seed: u64 },
}

impl fmt::Display for DatasetUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetUri::Idx { images, labels } => {
                write!(f, "idx:images={},labels={}", images.display(), labels.display())
            }
            DatasetUri::Csv { path } => write!(f, "csv:{}", path.display()),
            DatasetUri::Synth { k, per_class, d, spread, seed } => {
                write!(f, "synth:k={k},n={per_class},d={d},spread={spread},seed={seed}")
            }
        }
    }
}

impl From<DatasetUri> for String {
    fn from(u: DatasetUri) -> String {
        u.to_string()
    }
}

impl TryFrom<String> for DatasetUri {
    type Error = Error;

    fn try_from(s: String) -> Result<DatasetUri> {
        s.parse()
    }
}

impl std::str::FromStr for DatasetUri {
    type Err = Error;

    fn from_str(s: &str) -> Result<DatasetUri> {
        let bad = |what: String| Error::Usage(format!("invalid dataset uri {s:?}: {what}"));
        let (scheme, rest) = s
            .split_once(':')
            .ok_or_else(|| bad("expected scheme:...".into()))?;
        match scheme {
            "csv" => Ok(DatasetUri::Csv { path: PathBuf::from(rest) }),
            "idx" => {
                let mut images = None;
                let mut labels = None;
                for part in rest.split(',') {
                    match part.split_once('=') {
                        Some(("images", v)) => images = Some(PathBuf::from(v)),
                        Some(("labels", v)) => labels = Some(PathBuf::from(v)),
                        _ => return Err(bad(format!("unknown idx field {part:?}"))),
                    }
                }
                Ok(DatasetUri::Idx {
                    images: images.ok_or_else(|| bad("missing images=".into()))?,
                    labels: labels.ok_or_else(|| bad("missing labels=".into()))?,
                })
            }
            "synth" => {
                let (mut k, mut n, mut d) = (None, None, None);
                let (mut spread, mut seed) = (0.5f64, 0u64);
                for part in rest.split(',') {
                    let (key, v) = part
                        .split_once('=')
                        .ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
                    let field = || bad(format!("bad value for {key}: {v:?}"));
                    match key {
                        "k" => k = Some(v.parse().map_err(|_| field())?),
                        "n" => n = Some(v.parse().map_err(|_| field())?),
                        "d" => d = Some(v.parse().map_err(|_| field())?),
                        "spread" => spread = v.parse().map_err(|_| field())?,
                        "seed" => seed = v.parse().map_err(|_| field())?,
                        _ => return Err(bad(format!("unknown synth field {key:?}"))),
                    }
                }
                Ok(DatasetUri::Synth {
                    k: k.ok_or_else(|| bad("missing k=".into()))?,
                    per_class: n.ok_or_else(|| bad("missing n=".into()))?,
                    d: d.ok_or_else(|| bad("missing d=".into()))?,
                    spread,
                    seed,
                })
            }
            other => Err(bad(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Resolve a URI to a loaded dataset.
pub fn load_uri(uri: &DatasetUri, csv_header: bool, split_tag: SplitTag) -> Result<Dataset> {
    match uri {
        DatasetUri::Idx { images, labels } => load_idx(images, labels, split_tag),
        DatasetUri::Csv { path } => load_csv(path, csv_header, split_tag),
        DatasetUri::Synth { k, per_class, d, spread, seed } => {
            synth_blobs(*k, *per_class, *d, *spread, *seed)
        }
    }
}
