//! Datasets, spike encoding and batching.
//!
//! IDX files are read uncompressed. Images use magic `0x00000803` followed by
//! big-endian `u32` dims `[n, rows, cols]` and `n·rows·cols` unsigned bytes;
//! labels use magic `0x00000801`, a `u32` count and one byte per label.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[num_samples, dim]`, every entry in `[0, 1]`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if n != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows vs {} labels",
                n,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Argument(format!(
                "label {} outside [0, {})",
                bad, num_classes
            )));
        }
        if features.data().iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Argument("features must lie in [0, 1]".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Keeps the first `n` samples.
    pub fn truncated(mut self, n: usize) -> Self {
        if n < self.len() {
            let dim = self.dim();
            let data = self.features.data()[..n * dim].to_vec();
            self.features = Tensor::from_vec(&[n, dim], data).expect("prefix of valid tensor");
            self.labels.truncate(n);
        }
        self
    }

    /// Rows `indices` as a `[batch, dim]` tensor plus their labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let dim = self.dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        (
            Tensor::from_vec(&[indices.len(), dim], data).expect("rows of equal width"),
            labels,
        )
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("{}: header truncated", what)))
}

/// Parses an IDX image file into `(n, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: expected magic {:#010x}, found {:#010x}",
            IDX_IMAGES_MAGIC, magic
        )));
    }
    let n = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Length(format!(
            "images: expected {} pixel bytes, found {}",
            need,
            body.len()
        )));
    }
    Ok((n, rows, cols, &body[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: expected magic {:#010x}, found {:#010x}",
            IDX_LABELS_MAGIC, magic
        )));
    }
    let n = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Length(format!(
            "labels: expected {} bytes, found {}",
            n,
            body.len()
        )));
    }
    Ok(&body[..n])
}

/// Loads an image/label IDX pair. Pixels are scaled by 1/255; the class
/// count is one past the largest label.
pub fn idx_load(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            n,
            labels.len()
        )));
    }
    let features = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(
        Tensor::from_vec(&[n, rows * cols], features)?,
        labels,
        num_classes,
        Split::Train,
    )
}

/// Serializes a dataset as an IDX pair, quantizing features to
/// `round(255·f)`. Images are written with shape `[n, rows, cols]`.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != ds.dim() {
        return Err(Error::Argument(format!(
            "{}x{} images do not hold {} features",
            rows,
            cols,
            ds.dim()
        )));
    }
    let n = ds.len() as u32;
    let mut img = Vec::with_capacity(16 + ds.features.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend(ds.features.data().iter().map(|f| (f * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    for &l in &ds.labels {
        let byte = u8::try_from(l).map_err(|_| Error::Argument(format!("label {} exceeds a byte", l)))?;
        lab.push(byte);
    }
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

const PROTO_LO: f64 = 0.05;
const PROTO_HI: f64 = 0.95;
const NOISE: f64 = 0.05;
const MAX_SEPARATION: f64 = 0.9;
const PROTO_RETRIES: usize = 1000;

/// Synthetic rate-pattern classification task.
///
/// Each class gets a prototype rate vector in `[0.05, 0.95]^dim`; every
/// coordinate sits near one end of that range, jittered inward by at most
/// `(0.9 - separation)/2`, so two prototypes that pick different ends on
/// any coordinate are at least `separation` apart in L∞. Samples add uniform
/// noise in `[-0.05, 0.05]` and are clamped to `[0, 1]`. The first 80% of
/// each class (rounded) goes to the training split.
pub fn synth_poisson(
    num_classes: usize,
    dim: usize,
    samples_per_class: usize,
    separation: f64,
    rng: &mut Rng,
) -> Result<(Dataset, Dataset)> {
    if num_classes < 2 {
        return Err(Error::Argument(format!("need at least 2 classes, got {}", num_classes)));
    }
    if dim < num_classes {
        return Err(Error::Argument(format!(
            "dim {} must be >= number of classes {}",
            dim, num_classes
        )));
    }
    if !(0.0..=MAX_SEPARATION).contains(&separation) {
        return Err(Error::Argument(format!(
            "separation must be in [0, {}], got {}",
            MAX_SEPARATION, separation
        )));
    }
    let max_jitter = ((PROTO_HI - PROTO_LO - separation) / 2.0).max(0.0);
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let mut placed = false;
        for _ in 0..PROTO_RETRIES {
            let candidate: Vec<f64> = (0..dim)
                .map(|_| {
                    let jitter = rng.uniform_range(0.0, max_jitter);
                    if rng.bernoulli(0.5) {
                        PROTO_HI - jitter
                    } else {
                        PROTO_LO + jitter
                    }
                })
                .collect();
            let far_enough = prototypes.iter().all(|p| {
                p.iter()
                    .zip(&candidate)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                    >= separation - 1e-12
            });
            if far_enough {
                prototypes.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place prototype {} at separation {} in {} retries",
                class, separation, PROTO_RETRIES
            )));
        }
    }

    let n_train = (samples_per_class as f64 * 0.8).round() as usize;
    let (mut train_x, mut train_y, mut test_x, mut test_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (class, proto) in prototypes.iter().enumerate() {
        for s in 0..samples_per_class {
            let (xs, ys) = if s < n_train {
                (&mut train_x, &mut train_y)
            } else {
                (&mut test_x, &mut test_y)
            };
            xs.extend(
                proto
                    .iter()
                    .map(|&c| (c + rng.uniform_range(-NOISE, NOISE)).clamp(0.0, 1.0)),
            );
            ys.push(class);
        }
    }
    let train = Dataset::new(
        Tensor::from_vec(&[train_y.len(), dim], train_x)?,
        train_y,
        num_classes,
        Split::Train,
    )?;
    let test = Dataset::new(
        Tensor::from_vec(&[test_y.len(), dim], test_x)?,
        test_y,
        num_classes,
        Split::Test,
    )?;
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoder {
    /// Independent Bernoulli(feature) spike at every step.
    Rate,
    /// Feature value injected as current at every step.
    Direct,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikeBatch {
    /// `[T, batch, dim]`.
    pub spikes: Tensor,
    pub labels: Vec<usize>,
}

pub fn encode(
    features: &Tensor,
    labels: Vec<usize>,
    time_steps: usize,
    mode: Encoder,
    rng: &mut Rng,
) -> Result<SpikeBatch> {
    let (batch, dim) = features.dims2()?;
    if labels.len() != batch {
        return Err(Error::dim("encode", format!("{} rows vs {} labels", batch, labels.len())));
    }
    if features.data().iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Argument("encode: features must lie in [0, 1]".into()));
    }
    let mut data = Vec::with_capacity(time_steps * batch * dim);
    for _ in 0..time_steps {
        match mode {
            Encoder::Direct => data.extend_from_slice(features.data()),
            Encoder::Rate => data.extend(
                features
                    .data()
                    .iter()
                    .map(|&f| if rng.bernoulli(f) { 1.0 } else { 0.0 }),
            ),
        }
    }
    Ok(SpikeBatch {
        spikes: Tensor::from_vec(&[time_steps, batch, dim], data)?,
        labels,
    })
}

/// Sample indices grouped into batches; the last one may be short.
pub fn batches(num_samples: usize, batch_size: usize, shuffle: bool, rng: &mut Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..num_samples).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("img");
        let lp = dir.join("lab");
        fs::write(&ip, images).unwrap();
        fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn hand_built_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
        img.extend_from_slice(&[0, 255, 51, 102, 255, 0, 0, 204]);
        let mut lab = header(IDX_LABELS_MAGIC, &[2]);
        lab.extend_from_slice(&[3, 1]);
        let (ip, lp) = idx_pair(dir.path(), &img, &lab);
        let ds = idx_load(&ip, &lp).unwrap();
        assert_eq!(ds.features.shape(), &[2, 4]);
        assert_eq!(ds.features.data(), &[0.0, 1.0, 0.2, 0.4, 1.0, 0.0, 0.0, 0.8]);
        assert_eq!(ds.labels, vec![3, 1]);
        assert_eq!(ds.num_classes, 4);
    }

    #[test]
    fn swapped_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IDX_LABELS_MAGIC, &[1, 1, 1]);
        img.push(0);
        let mut lab = header(IDX_LABELS_MAGIC, &[1]);
        lab.push(0);
        let (ip, lp) = idx_pair(dir.path(), &img, &lab);
        assert!(matches!(idx_load(&ip, &lp), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
        img.extend_from_slice(&[1, 2, 3]);
        let mut lab = header(IDX_LABELS_MAGIC, &[2]);
        lab.extend_from_slice(&[0, 1]);
        let (ip, lp) = idx_pair(dir.path(), &img, &lab);
        assert!(matches!(idx_load(&ip, &lp), Err(Error::Length(_))));

        let mut img = header(IDX_IMAGES_MAGIC, &[1, 1, 2]);
        img.extend_from_slice(&[1, 2]);
        let (ip, lp) = idx_pair(dir.path(), &img, &lab);
        assert!(matches!(idx_load(&ip, &lp), Err(Error::Consistency(_))));

        let (ip, lp) = idx_pair(dir.path(), &[0, 0, 8], &lab);
        assert!(matches!(idx_load(&ip, &lp), Err(Error::Length(_))));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let feats: Vec<f64> = (0..12).map(|i| f64::from(i * 20) / 255.0).collect();
        let ds = Dataset::new(Tensor::from_vec(&[3, 4], feats).unwrap(), vec![0, 2, 1], 3, Split::Train).unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&ds, &ip, &lp, 2, 2).unwrap();
        assert_eq!(idx_load(&ip, &lp).unwrap(), ds);
    }

    /// Perceptron on the generated points; converges iff they are linearly separable.
    fn perceptron_separates(ds: &Dataset) -> bool {
        let dim = ds.dim();
        let mut w = vec![0.0; dim + 1];
        for _ in 0..1000 {
            let mut errors = 0;
            for i in 0..ds.len() {
                let x = ds.features.row(i);
                let y = if ds.labels[i] == 1 { 1.0 } else { -1.0 };
                let s: f64 = w[dim] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                if s * y <= 0.0 {
                    errors += 1;
                    for j in 0..dim {
                        w[j] += y * x[j];
                    }
                    w[dim] += y;
                }
            }
            if errors == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn two_classes_far_apart_are_separable() {
        let (train, test) = synth_poisson(2, 2, 50, 0.9, &mut Rng::new(3)).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        let a = train.features.row(0).to_vec();
        let b = train.features.row(40).to_vec();
        let linf = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(linf >= 0.8, "prototypes too close: {:?} {:?}", a, b);
        assert!(perceptron_separates(&train));
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let a = synth_poisson(4, 16, 25, 0.5, &mut Rng::new(11)).unwrap();
        let b = synth_poisson(4, 16, 25, 0.5, &mut Rng::new(11)).unwrap();
        assert_eq!(a, b);
        assert!(a.0.features.data().iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(a.0.labels.iter().filter(|&&l| l == 3).count(), 20);
    }

    #[test]
    fn synthetic_edge_cases() {
        let (train, test) = synth_poisson(3, 8, 0, 0.5, &mut Rng::new(1)).unwrap();
        assert!(train.is_empty() && test.is_empty());
        assert!(synth_poisson(1, 8, 5, 0.5, &mut Rng::new(1)).is_err());
        assert!(synth_poisson(5, 4, 5, 0.5, &mut Rng::new(1)).is_err());
        assert!(synth_poisson(2, 4, 5, 0.95, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn rate_and_direct_encoding() {
        let f = Tensor::from_rows(&[&[1.0, 0.0, 0.5]]);
        let mut rng = Rng::new(2);
        let rate = encode(&f, vec![0], 1000, Encoder::Rate, &mut rng).unwrap();
        let col = |k: usize| (0..1000).map(|t| rate.spikes.data()[t * 3 + k]).sum::<f64>();
        assert_eq!(col(0), 1000.0);
        assert_eq!(col(1), 0.0);
        assert!((col(2) / 1000.0 - 0.5).abs() < 0.05);
        assert!(rate.spikes.data().iter().all(|s| *s == 0.0 || *s == 1.0));

        let direct = encode(&f, vec![0], 4, Encoder::Direct, &mut rng).unwrap();
        assert_eq!(direct.spikes.shape(), &[4, 1, 3]);
        assert_eq!(&direct.spikes.data()[9..], &[1.0, 0.0, 0.5]);

        let bad = Tensor::from_rows(&[&[1.5]]);
        assert!(encode(&bad, vec![0], 2, Encoder::Direct, &mut rng).is_err());
    }

    #[test]
    fn batching() {
        let mut rng = Rng::new(0);
        let b = batches(10, 4, false, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b.concat(), (0..10).collect::<Vec<_>>());
        let s1 = batches(10, 3, true, &mut Rng::new(5));
        let s2 = batches(10, 3, true, &mut Rng::new(5));
        assert_eq!(s1, s2);
        let mut all = s1.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
