//! Desk-scale datasets and the split plan of the membership game.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled samples; a sample's id is its row index and never changes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    image_shape: Option<[usize; 3]>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} labels for features of shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!("label {bad} outside {classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            classes,
            image_shape: None,
        })
    }

    pub fn with_image_shape(mut self, shape: [usize; 3]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.dim() {
            return Err(Error::invalid(format!(
                "image shape {shape:?} does not cover {} features",
                self.dim()
            )));
        }
        self.image_shape = Some(shape);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `[channels, height, width]` when the features are images.
    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.image_shape
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, id: usize) -> (&[f32], usize) {
        (self.features.row(id), self.labels[id])
    }

    /// Features and labels of the listed sample ids.
    pub fn gather(&self, ids: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.features.select_rows(ids),
            ids.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Keeps the first `n` samples.
    pub fn truncate(mut self, n: usize) -> Self {
        if n < self.len() {
            let ids: Vec<usize> = (0..n).collect();
            self.features = self.features.select_rows(&ids);
            self.labels.truncate(n);
        }
        self
    }

    /// `sample_id,label,f0,f1,...` with a leading comment line.
    pub fn write_csv(&self, path: &Path, comment: &str) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("# {comment}\n"));
        out.push_str("sample_id,label");
        for j in 0..self.dim() {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!("{i},{}", self.labels[i]));
            for v in self.features.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            kind: "dataset csv",
            path: path.to_path_buf(),
            reason,
        };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => bad(format!("{other:?}")),
            })?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (expected_id, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(bad("rows need sample_id and label".into()));
            }
            let id: usize = record[0].parse().map_err(|_| bad("bad sample_id".into()))?;
            if id != expected_id {
                return Err(bad(format!("sample ids must be 0..n in order, found {id}")));
            }
            labels.push(record[1].parse().map_err(|_| bad("bad label".into()))?);
            rows.push(
                record
                    .iter()
                    .skip(2)
                    .map(|v| v.parse::<f32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad feature value".into()))?,
            );
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Dataset::new(Tensor::from_rows(&rows)?, labels, classes)
    }
}

/// Isotropic unit-variance Gaussian clusters, `n_per_class` per class.
///
/// With `classes <= dim` the centres sit on scaled coordinate axes so every
/// pair is exactly `separation` apart; otherwise centres are random
/// directions of the same radius. Samples are shuffled once; ids follow the
/// shuffled order.
pub fn make_blobs(
    n_per_class: usize,
    classes: usize,
    dim: usize,
    separation: f32,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || dim == 0 || n_per_class == 0 {
        return Err(Error::invalid("blobs need classes, dim and n_per_class > 0"));
    }
    let mut rng = seeds::rng(seed, "blobs", &[]);
    let radius = separation / std::f32::consts::SQRT_2;
    let centres: Vec<Vec<f32>> = (0..classes)
        .map(|k| {
            if classes <= dim {
                (0..dim).map(|j| if j == k { radius } else { 0.0 }).collect()
            } else {
                let v: Vec<f32> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
                v.iter().map(|x| x / norm * radius).collect()
            }
        })
        .collect();
    let mut samples: Vec<(Vec<f32>, usize)> = Vec::with_capacity(n_per_class * classes);
    for (k, centre) in centres.iter().enumerate() {
        for _ in 0..n_per_class {
            let x = centre
                .iter()
                .map(|&c| c + rng.sample::<f32, _>(StandardNormal))
                .collect();
            samples.push((x, k));
        }
    }
    samples.shuffle(&mut rng);
    let (rows, labels): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    Dataset::new(Tensor::from_rows(&rows)?, labels, classes)
}

/// Two interleaving half circles with Gaussian noise.
pub fn make_moons(n_per_class: usize, noise: f32, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::invalid("moons need n_per_class > 0"));
    }
    let mut rng = seeds::rng(seed, "moons", &[]);
    let mut samples = Vec::with_capacity(2 * n_per_class);
    for k in 0..2 {
        for i in 0..n_per_class {
            let t = std::f32::consts::PI * i as f32 / (n_per_class.max(2) - 1) as f32;
            let (x, y) = if k == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let nx: f32 = rng.sample(StandardNormal);
            let ny: f32 = rng.sample(StandardNormal);
            samples.push((vec![x + noise * nx, y + noise * ny], k));
        }
    }
    samples.shuffle(&mut rng);
    let (rows, labels): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    Dataset::new(Tensor::from_rows(&rows)?, labels, 2)
}

fn idx_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "idx",
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX image/label pair already in memory.
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    images_path: &Path,
    labels_path: &Path,
) -> Result<Dataset> {
    let magic = be_u32(images, 0).ok_or_else(|| idx_error(images_path, "truncated header"))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_error(images_path, format!("bad magic {magic:#010x}")));
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| be_u32(images, 4 + 4 * i).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| idx_error(images_path, "truncated header"))?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = count * rows * cols;
    let payload = &images[16..];
    if payload.len() < pixels {
        return Err(idx_error(
            images_path,
            format!("truncated payload: {} of {pixels} bytes", payload.len()),
        ));
    }

    let magic = be_u32(labels, 0).ok_or_else(|| idx_error(labels_path, "truncated header"))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_error(labels_path, format!("bad magic {magic:#010x}")));
    }
    let label_count =
        be_u32(labels, 4).ok_or_else(|| idx_error(labels_path, "truncated header"))? as usize;
    if label_count != count {
        return Err(idx_error(
            labels_path,
            format!("{label_count} labels for {count} images"),
        ));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < count {
        return Err(idx_error(labels_path, "truncated payload"));
    }

    let features = Tensor::new(
        vec![count, rows * cols],
        payload[..pixels].iter().map(|&b| b as f32 / 255.0).collect(),
    )?;
    let labels: Vec<usize> = label_bytes[..count].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, classes)?.with_image_shape([1, rows, cols])
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels, images_path, labels_path)
}

/// Target split and reference-pair splits over one dataset.
///
/// Each reference pair partitions the dataset into complementary halves, so
/// every sample is IN exactly one model of each pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub seed: u64,
    pub target_train: Vec<usize>,
    pub target_test: Vec<usize>,
    /// `(first model's train ids, second model's train ids)` per pair.
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
    /// `membership[sample][reference]`.
    membership: Vec<Vec<bool>>,
    target_member: Vec<bool>,
}

impl SplitPlan {
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_references(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn len(&self) -> usize {
        self.target_member.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_member.is_empty()
    }

    pub fn reference_train(&self, reference: usize) -> &[usize] {
        let (a, b) = &self.pairs[reference / 2];
        if reference % 2 == 0 {
            a
        } else {
            b
        }
    }

    /// The held-out half of a reference model (its partner's train set).
    pub fn reference_test(&self, reference: usize) -> &[usize] {
        self.reference_train(reference ^ 1)
    }

    pub fn is_member_of_reference(&self, sample: usize, reference: usize) -> bool {
        self.membership[sample][reference]
    }

    pub fn membership(&self) -> &[Vec<bool>] {
        &self.membership
    }

    pub fn is_target_member(&self, sample: usize) -> bool {
        self.target_member[sample]
    }

    pub fn target_membership(&self) -> &[bool] {
        &self.target_member
    }
}

pub fn plan_splits(data: &Dataset, n_pairs: usize, seed: u64) -> Result<SplitPlan> {
    plan_splits_for_len(data.len(), n_pairs, seed)
}

pub fn plan_splits_for_len(len: usize, n_pairs: usize, seed: u64) -> Result<SplitPlan> {
    if len == 0 || len % 2 != 0 {
        return Err(Error::invalid(format!(
            "dataset size must be even and non-zero, got {len}"
        )));
    }
    if n_pairs == 0 {
        return Err(Error::invalid("need at least one reference pair"));
    }
    let half = len / 2;
    let halves = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(rng);
        let mut first = perm[..half].to_vec();
        let mut second = perm[half..].to_vec();
        first.sort_unstable();
        second.sort_unstable();
        (first, second)
    };

    let (target_train, target_test) = halves(&mut seeds::rng(seed, "plan/target", &[]));
    let mut target_member = vec![false; len];
    for &i in &target_train {
        target_member[i] = true;
    }

    let pairs: Vec<(Vec<usize>, Vec<usize>)> = (0..n_pairs)
        .map(|k| halves(&mut seeds::rng(seed, "plan/pair", &[k as u64])))
        .collect();
    let mut membership = vec![vec![false; 2 * n_pairs]; len];
    for (k, (a, b)) in pairs.iter().enumerate() {
        for &i in a {
            membership[i][2 * k] = true;
        }
        for &i in b {
            membership[i][2 * k + 1] = true;
        }
    }
    Ok(SplitPlan {
        seed,
        target_train,
        target_test,
        pairs,
        membership,
        target_member,
    })
}
