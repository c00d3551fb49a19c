//! Dataset ingestion: a procedural synthetic task for desk-scale runs and
//! an IDX loader for real image files.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// One split of labelled images, stored flat in NCHW order.
#[derive(Clone, Debug)]
pub struct Split {
    pub channels: usize,
    pub resolution: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

impl Split {
    pub fn new(
        channels: usize,
        resolution: usize,
        pixels: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let per_image = channels * resolution * resolution;
        if labels.is_empty() || pixels.len() != labels.len() * per_image {
            return Err(Error::Dataset(format!(
                "{} pixels for {} labels of {} values each",
                pixels.len(),
                labels.len(),
                per_image
            )));
        }
        Ok(Split {
            channels,
            resolution,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.channels * self.resolution * self.resolution;
        &self.pixels[i * per..(i + 1) * per]
    }

    /// Assemble a batch tensor and label vector from sample indices.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let per = self.channels * self.resolution * self.resolution;
        let mut pixels = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(
            vec![indices.len(), self.channels, self.resolution, self.resolution],
            pixels,
        )
        .expect("consistent batch dims");
        (t, labels)
    }
}

/// Train/val splits plus the class count they encode.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub classes: usize,
    pub train: Split,
    pub val: Split,
}

impl Dataset {
    pub fn resolution(&self) -> usize {
        self.train.resolution
    }

    pub fn channels(&self) -> usize {
        self.train.channels
    }
}

/// Parameters of the procedural oriented-bar task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub resolution: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Class template: a soft ridge through the image center at the class
/// angle `c * pi / classes`.
fn bar_template(classes: usize, class: usize, resolution: usize) -> Vec<f32> {
    let angle = class as f64 * std::f64::consts::PI / classes as f64;
    let (dx, dy) = (angle.cos(), angle.sin());
    let center = (resolution as f64 - 1.0) / 2.0;
    let width = resolution as f64 / 8.0;
    let mut out = Vec::with_capacity(resolution * resolution);
    for y in 0..resolution {
        for x in 0..resolution {
            let px = x as f64 - center;
            let py = y as f64 - center;
            // Perpendicular distance to the line through the center.
            let d = (px * dy - py * dx).abs();
            out.push((-d * d / (2.0 * width * width)).exp() as f32);
        }
    }
    out
}

fn synth_split(spec: &SyntheticSpec, count: usize, noise_rng: &mut ChaCha8Rng) -> Result<Split> {
    if count % spec.classes != 0 {
        return Err(Error::Config {
            field: "dataset.synthetic".into(),
            message: format!(
                "split size {} not divisible by {} classes",
                count, spec.classes
            ),
        });
    }
    let templates: Vec<Vec<f32>> = (0..spec.classes)
        .map(|c| bar_template(spec.classes, c, spec.resolution))
        .collect();
    let normal =
        Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::Config {
            field: "dataset.synthetic.noise".into(),
            message: e.to_string(),
        })?;
    let per_image = spec.resolution * spec.resolution;
    let mut pixels = Vec::with_capacity(count * per_image);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % spec.classes;
        labels.push(class);
        if spec.noise == 0.0 {
            pixels.extend_from_slice(&templates[class]);
        } else {
            pixels.extend(
                templates[class]
                    .iter()
                    .map(|&v| v + normal.sample(noise_rng) as f32),
            );
        }
    }
    Split::new(1, spec.resolution, pixels, labels)
}

/// Generate the deterministic synthetic dataset: balanced classes of noisy
/// oriented-bar images.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::Config {
            field: "dataset.synthetic.classes".into(),
            message: "need at least two classes".into(),
        });
    }
    if spec.resolution == 0 || spec.n_train == 0 || spec.n_val == 0 {
        return Err(Error::Config {
            field: "dataset.synthetic".into(),
            message: "resolution and split sizes must be positive".into(),
        });
    }
    if spec.noise < 0.0 || !spec.noise.is_finite() {
        return Err(Error::Config {
            field: "dataset.synthetic.noise".into(),
            message: "noise must be finite and non-negative".into(),
        });
    }
    let train = synth_split(spec, spec.n_train, &mut rng::stream(spec.seed, "train_noise"))?;
    let val = synth_split(spec, spec.n_val, &mut rng::stream(spec.seed, "val_noise"))?;
    Ok(Dataset {
        classes: spec.classes,
        train,
        val,
    })
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Dataset(format!("truncated idx file reading {}", what)))
}

/// Load one split from an IDX image/label file pair. Pixels are scaled
/// from bytes to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Split> {
    let mut img_bytes = Vec::new();
    File::open(images_path)?.read_to_end(&mut img_bytes)?;
    let mut lbl_bytes = Vec::new();
    File::open(labels_path)?.read_to_end(&mut lbl_bytes)?;

    let img_magic = read_u32_be(&img_bytes, 0, "image magic")?;
    if img_magic != IDX_IMAGE_MAGIC {
        return Err(Error::Dataset(format!(
            "bad image magic {:#010x}, expected {:#010x}",
            img_magic, IDX_IMAGE_MAGIC
        )));
    }
    let lbl_magic = read_u32_be(&lbl_bytes, 0, "label magic")?;
    if lbl_magic != IDX_LABEL_MAGIC {
        return Err(Error::Dataset(format!(
            "bad label magic {:#010x}, expected {:#010x}",
            lbl_magic, IDX_LABEL_MAGIC
        )));
    }
    let n = read_u32_be(&img_bytes, 4, "image count")? as usize;
    let rows = read_u32_be(&img_bytes, 8, "rows")? as usize;
    let cols = read_u32_be(&img_bytes, 12, "cols")? as usize;
    let n_labels = read_u32_be(&lbl_bytes, 4, "label count")? as usize;
    if n != n_labels {
        return Err(Error::Dataset(format!(
            "{} images but {} labels",
            n, n_labels
        )));
    }
    if rows != cols {
        return Err(Error::Dataset(format!(
            "non-square images {}x{} unsupported",
            rows, cols
        )));
    }
    let expected = 16 + n * rows * cols;
    if img_bytes.len() < expected {
        return Err(Error::Dataset(format!(
            "image payload truncated: {} bytes, expected {}",
            img_bytes.len(),
            expected
        )));
    }
    if lbl_bytes.len() < 8 + n {
        return Err(Error::Dataset("label payload truncated".into()));
    }
    let pixels: Vec<f32> = img_bytes[16..expected]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    let labels: Vec<usize> = lbl_bytes[8..8 + n].iter().map(|&b| b as usize).collect();
    Split::new(1, rows, pixels, labels)
}

/// Deterministic validation order: a seeded shuffle of the val indices.
/// Any evaluation subset of size `k` is the prefix of this permutation.
pub fn val_order(n_val: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n_val).collect();
    indices.shuffle(&mut rng::stream(seed, "val_order"));
    indices
}

/// Draw a training batch with replacement.
pub fn draw_batch(
    split: &Split,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> (Tensor<f32>, Vec<usize>) {
    let indices: Vec<usize> = (0..batch_size)
        .map(|_| rng.random_range(0..split.len()))
        .collect();
    split.gather(&indices)
}
