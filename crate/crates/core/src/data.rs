//! Dataset provisioning: deterministic synthetic classification data, the
//! CIFAR-10 binary batch format, splitting and batch iteration.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::digest::Fnv1a64;
use crate::numkernel::Tensor;
use crate::space::InputShape;

/// Bytes per record in the standard CIFAR-10 binary layout:
/// [1 label][1024 R][1024 G][1024 B].
const CIFAR_RECORD: usize = 3073;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("sample count {n} is not divisible by {classes} classes")]
    Unbalanced { n: usize, classes: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("{path}: file size {size} is not a multiple of {CIFAR_RECORD}")]
    BadCifarSize { path: String, size: usize },
    #[error("{path}: record {record} has label {label} > 9")]
    BadCifarLabel { path: String, record: usize, label: u8 },
    #[error("split ratio {0} must be in (0, 1)")]
    BadRatio(f64),
    #[error("split leaves an empty side ({train} train / {val} val)")]
    EmptySplit { train: usize, val: usize },
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Immutable labeled dataset. Examples are stored in one tensor whose first
/// axis is the example index.
#[derive(Debug, Clone)]
pub struct Dataset {
    examples: Tensor,
    labels: Vec<usize>,
    classes: usize,
    tag: String,
}

impl Dataset {
    pub fn new(examples: Tensor, labels: Vec<usize>, classes: usize, tag: &str) -> Self {
        assert_eq!(examples.shape()[0], labels.len());
        assert!(labels.iter().all(|&l| l < classes));
        Self { examples, labels, classes, tag: tag.to_string() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn examples(&self) -> &Tensor {
        &self.examples
    }

    /// Shape of one example (without the leading example axis).
    pub fn example_shape(&self) -> &[usize] {
        &self.examples.shape()[1..]
    }

    pub fn input_shape(&self) -> InputShape {
        match self.example_shape() {
            [h, w, c] => InputShape::Image { height: *h, width: *w, channels: *c },
            [d] => InputShape::Vector { dim: *d },
            other => panic!("unsupported example rank {other:?}"),
        }
    }

    /// Gather a mini-batch by example indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let stride: usize = self.example_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.examples.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.example_shape());
        (Tensor::from_vec(&shape, data), labels)
    }

    /// Index batches for one epoch: seed-shuffled when a seed is given,
    /// in-order otherwise. The trailing short batch is kept.
    pub fn batch_indices(&self, batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Fisher-Yates.
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
        }
        order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }

    /// Stable digest over examples and labels.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a64::new();
        self.examples.digest_into(&mut h);
        for &l in &self.labels {
            h.write_u64(l as u64);
        }
        h.write_u64(self.classes as u64);
        h.finish()
    }

    /// Seed-deterministic disjoint split; `ratio` is the first side's share.
    pub fn split(&self, ratio: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        if !(0.0 < ratio && ratio < 1.0) {
            return Err(DataError::BadRatio(ratio));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let cut = (self.len() as f64 * ratio).round() as usize;
        if cut == 0 || cut == self.len() {
            return Err(DataError::EmptySplit { train: cut, val: self.len() - cut });
        }
        let (a_idx, b_idx) = order.split_at(cut);
        let (a_x, a_y) = self.batch(a_idx);
        let (b_x, b_y) = self.batch(b_idx);
        Ok((
            Dataset::new(a_x, a_y, self.classes, &format!("{}:train", self.tag)),
            Dataset::new(b_x, b_y, self.classes, &format!("{}:val", self.tag)),
        ))
    }
}

/// Seed-derived class templates plus Gaussian noise; balanced classes with
/// labels interleaved (`label = i mod classes`). `n` must divide evenly.
pub fn gen_synthetic(
    classes: usize,
    n: usize,
    shape: InputShape,
    noise: f32,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes < 2 {
        return Err(DataError::TooFewClasses(classes));
    }
    if n % classes != 0 {
        return Err(DataError::Unbalanced { n, classes });
    }
    let feat: usize = shape.feature_count();
    let mut template_rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..feat).map(|_| template_rng.random_range(0.0..1.0)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut data = Vec::with_capacity(n * feat);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        for f in 0..feat {
            data.push(templates[class][f] + noise * gaussian(&mut rng));
        }
        labels.push(class);
    }
    let mut full_shape = vec![n];
    match shape {
        InputShape::Image { height, width, channels } => {
            full_shape.extend_from_slice(&[height, width, channels])
        }
        InputShape::Vector { dim } => full_shape.push(dim),
    }
    Ok(Dataset::new(Tensor::from_vec(&full_shape, data), labels, classes, "synthetic"))
}

/// Box-Muller standard normal.
fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

/// Bit-exact reader for CIFAR-10 binary batch files. Pixels are scaled to
/// [0, 1] as k/255; output layout is NHWC with RGB channel order preserved.
pub fn load_cifar10_binary<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset, DataError> {
    let mut data: Vec<f32> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for p in paths {
        let path_str = p.as_ref().display().to_string();
        let mut bytes = Vec::new();
        std::fs::File::open(p.as_ref())
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| DataError::Io { path: path_str.clone(), source })?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(DataError::BadCifarSize { path: path_str, size: bytes.len() });
        }
        for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            let label = chunk[0];
            if label > 9 {
                return Err(DataError::BadCifarLabel { path: path_str, record, label });
            }
            labels.push(label as usize);
            let planes = &chunk[1..];
            for pix in 0..1024 {
                for ch in 0..3 {
                    data.push(planes[ch * 1024 + pix] as f32 / 255.0);
                }
            }
        }
    }
    let n = labels.len();
    Ok(Dataset::new(
        Tensor::from_vec(&[n, 32, 32, 3], data),
        labels,
        10,
        "cifar10",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_noise_free_is_nearest_template_separable() {
        let ds = gen_synthetic(4, 40, InputShape::Vector { dim: 8 }, 0.0, 9).unwrap();
        // Recover templates from the first occurrence of each class, then
        // nearest-template classify everything.
        let feat = 8;
        let mut templates: Vec<Option<&[f32]>> = vec![None; 4];
        for i in 0..ds.len() {
            let row = &ds.examples().data()[i * feat..(i + 1) * feat];
            templates[ds.labels()[i]].get_or_insert(row);
        }
        for i in 0..ds.len() {
            let row = &ds.examples().data()[i * feat..(i + 1) * feat];
            let pred = (0..4)
                .min_by(|&a, &b| {
                    let da: f32 = templates[a]
                        .unwrap()
                        .iter()
                        .zip(row)
                        .map(|(t, x)| (t - x).powi(2))
                        .sum();
                    let db: f32 = templates[b]
                        .unwrap()
                        .iter()
                        .zip(row)
                        .map(|(t, x)| (t - x).powi(2))
                        .sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(pred, ds.labels()[i]);
        }
    }

    #[test]
    fn synthetic_same_seed_same_digest() {
        let a = gen_synthetic(2, 20, InputShape::Vector { dim: 4 }, 0.3, 5).unwrap();
        let b = gen_synthetic(2, 20, InputShape::Vector { dim: 4 }, 0.3, 5).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = gen_synthetic(2, 20, InputShape::Vector { dim: 4 }, 0.3, 6).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn synthetic_unbalanced_rejected() {
        assert!(matches!(
            gen_synthetic(3, 20, InputShape::Vector { dim: 4 }, 0.1, 0),
            Err(DataError::Unbalanced { n: 20, classes: 3 })
        ));
    }

    #[test]
    fn cifar_fixture_round_trips_exact_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        // Two records with known bytes.
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[0] = 3; // label of record 0
        bytes[1] = 255; // R plane, pixel 0
        bytes[1 + 1024] = 128; // G plane, pixel 0
        bytes[1 + 2048] = 51; // B plane, pixel 0
        bytes[CIFAR_RECORD] = 9; // label of record 1
        bytes[CIFAR_RECORD + 1 + 5] = 17; // R plane, pixel 5
        std::fs::write(&path, &bytes).unwrap();
        let ds = load_cifar10_binary(&[&path]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), &[3, 9]);
        let d = ds.examples().data();
        assert_eq!(d[0], 255.0 / 255.0);
        assert_eq!(d[1], 128.0 / 255.0);
        assert_eq!(d[2], 51.0 / 255.0);
        // Record 1, pixel 5 (h=0, w=5), channel R.
        let base = 1 * 32 * 32 * 3 + 5 * 3;
        assert_eq!(d[base], 17.0 / 255.0);
        assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cifar_truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, vec![0u8; CIFAR_RECORD + 7]).unwrap();
        assert!(matches!(
            load_cifar10_binary(&[&path]),
            Err(DataError::BadCifarSize { .. })
        ));
    }

    #[test]
    fn cifar_bad_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad_label.bin");
        let mut bytes = vec![0u8; CIFAR_RECORD];
        bytes[0] = 10;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_cifar10_binary(&[&path]),
            Err(DataError::BadCifarLabel { label: 10, .. })
        ));
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_deterministic() {
        let ds = gen_synthetic(2, 50, InputShape::Vector { dim: 3 }, 0.2, 1).unwrap();
        let (a, b) = ds.split(0.8, 7).unwrap();
        assert_eq!(a.len(), 40);
        assert_eq!(b.len(), 10);
        let (a2, b2) = ds.split(0.8, 7).unwrap();
        assert_eq!(a.digest(), a2.digest());
        assert_eq!(b.digest(), b2.digest());
        // Union of rows equals the original multiset.
        let feat = 3;
        let mut rows: Vec<Vec<u32>> = Vec::new();
        for side in [&a, &b] {
            for i in 0..side.len() {
                rows.push(
                    side.examples().data()[i * feat..(i + 1) * feat]
                        .iter()
                        .map(|v| v.to_bits())
                        .collect(),
                );
            }
        }
        let mut orig: Vec<Vec<u32>> = (0..ds.len())
            .map(|i| {
                ds.examples().data()[i * feat..(i + 1) * feat]
                    .iter()
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect();
        rows.sort();
        orig.sort();
        assert_eq!(rows, orig);
    }

    #[test]
    fn batch_iteration_is_seed_deterministic() {
        let ds = gen_synthetic(2, 20, InputShape::Vector { dim: 2 }, 0.1, 2).unwrap();
        let a = ds.batch_indices(6, Some(3));
        let b = ds.batch_indices(6, Some(3));
        assert_eq!(a, b);
        assert_eq!(a.iter().map(Vec::len).sum::<usize>(), 20);
        let plain = ds.batch_indices(6, None);
        assert_eq!(plain[0], vec![0, 1, 2, 3, 4, 5]);
    }
}
