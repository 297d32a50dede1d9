//! Datasets: a deterministic synthetic image task, plus a loader for the
//! standard CIFAR-10 binary batch layout for users who have the data.

use crate::scalar::Scalar;
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("file length {len} is not a multiple of the {record}-byte record size")]
    BadLength { len: usize, record: usize },
    #[error("record {index} has label {label}, expected 0..=9")]
    BadLabel { index: usize, label: u8 },
}

/// Labeled image set, NCHW.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    pub images: Array4<F>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<F: Scalar> Dataset<F> {
    pub fn empty(num_classes: usize, (c, h, w): (usize, usize, usize)) -> Self {
        Dataset {
            images: Array4::zeros((0, c, h, w)),
            labels: Vec::new(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the rows at `indices` into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Array4<F>, Vec<usize>) {
        let (_, c, h, w) = self.images.dim();
        let mut out = Array4::zeros((indices.len(), c, h, w));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.images.index_axis(ndarray::Axis(0), i));
            labels.push(self.labels[i]);
        }
        (out, labels)
    }
}

/// Parameters of the procedural image task. Each class gets a smooth random
/// texture prototype; samples are randomly shifted copies with pixel noise,
/// exactly balanced across classes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Std of the additive pixel noise.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            image_size: 12,
            channels: 3,
            num_classes: 4,
            train_per_class: 64,
            test_per_class: 64,
            pixel_noise: 0.25,
            seed: 7,
        }
    }
}

struct Prototype {
    // [c][y][x]
    values: Vec<Vec<Vec<f64>>>,
}

fn make_prototype(rng: &mut ChaCha8Rng, size: usize, channels: usize) -> Prototype {
    let mut values = vec![vec![vec![0.0f64; size]; size]; channels];
    for ch in values.iter_mut() {
        // A few low-frequency sinusoids per channel.
        let terms: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let amp = 0.5 + rng.random::<f64>() * 0.5;
                let fx = rng.random_range(1..=3) as f64;
                let fy = rng.random_range(1..=3) as f64;
                let phase = rng.random::<f64>() * std::f64::consts::TAU;
                (amp, fx, fy, phase)
            })
            .collect();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for y in 0..size {
            for x in 0..size {
                let mut v = 0.0;
                for &(amp, fx, fy, phase) in &terms {
                    let arg = std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / size as f64
                        + phase;
                    v += amp * arg.sin();
                }
                ch[y][x] = v;
                min = min.min(v);
                max = max.max(v);
            }
        }
        let span = (max - min).max(1e-9);
        for row in ch.iter_mut() {
            for v in row.iter_mut() {
                *v = (*v - min) / span;
            }
        }
    }
    Prototype { values }
}

fn render_sample<F: Scalar>(
    proto: &Prototype,
    rng: &mut ChaCha8Rng,
    size: usize,
    channels: usize,
    pixel_noise: f64,
    out: &mut ndarray::ArrayViewMut3<'_, F>,
) {
    let max_shift = (size / 4).max(1);
    let dy = rng.random_range(0..max_shift);
    let dx = rng.random_range(0..max_shift);
    for c in 0..channels {
        for y in 0..size {
            for x in 0..size {
                let sy = (y + dy) % size;
                let sx = (x + dx) % size;
                let z: f64 = StandardNormal.sample(rng);
                let v = (proto.values[c][sy][sx] + pixel_noise * z).clamp(0.0, 1.0);
                out[[c, y, x]] = F::from_f64(v);
            }
        }
    }
}

/// Generates a (train, test) pair from the spec, fully determined by the seed.
pub fn synthetic_pair<F: Scalar>(spec: &SyntheticSpec) -> (Dataset<F>, Dataset<F>) {
    let mut proto_rng = ChaCha8Rng::seed_from_u64(super::derive_seed(spec.seed, "prototypes"));
    let protos: Vec<Prototype> = (0..spec.num_classes)
        .map(|_| make_prototype(&mut proto_rng, spec.image_size, spec.channels))
        .collect();

    let render = |per_class: usize, tag: &str| {
        let mut rng = ChaCha8Rng::seed_from_u64(super::derive_seed(spec.seed, tag));
        let n = per_class * spec.num_classes;
        let mut images = Array4::zeros((n, spec.channels, spec.image_size, spec.image_size));
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for _ in 0..per_class {
            for class in 0..spec.num_classes {
                let mut view = images.index_axis_mut(ndarray::Axis(0), row);
                render_sample(
                    &protos[class],
                    &mut rng,
                    spec.image_size,
                    spec.channels,
                    spec.pixel_noise,
                    &mut view,
                );
                labels.push(class);
                row += 1;
            }
        }
        Dataset {
            images,
            labels,
            num_classes: spec.num_classes,
        }
    };

    let train = render(spec.train_per_class, "train");
    let test = render(spec.test_per_class, "test");
    (train, test)
}

const CIFAR_RECORD: usize = 3073;

/// Loads up to `max_records` examples from one CIFAR-10 binary batch file.
///
/// Layout (byte-exact): the file is a sequence of 3073-byte records with no
/// header or separators. Byte 0 of each record is the label (0..=9); the
/// remaining 3072 bytes are the 32x32 image, one color plane at a time
/// (1024 red, 1024 green, 1024 blue), each plane in row-major order. Pixels
/// are scaled to [0, 1].
pub fn load_cifar10_batch<F: Scalar>(
    path: &Path,
    max_records: usize,
) -> Result<Dataset<F>, DatasetError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(DatasetError::BadLength {
            len: bytes.len(),
            record: CIFAR_RECORD,
        });
    }
    let n = (bytes.len() / CIFAR_RECORD).min(max_records);
    let mut images = Array4::zeros((n, 3, 32, 32));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let rec = &bytes[i * CIFAR_RECORD..(i + 1) * CIFAR_RECORD];
        let label = rec[0];
        if label > 9 {
            return Err(DatasetError::BadLabel { index: i, label });
        }
        labels.push(label as usize);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let v = rec[1 + c * 1024 + y * 32 + x] as f64 / 255.0;
                    images[[i, c, y, x]] = F::from_f64(v);
                }
            }
        }
    }
    Ok(Dataset {
        images,
        labels,
        num_classes: 10,
    })
}
