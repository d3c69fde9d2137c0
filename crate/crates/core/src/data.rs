//! Synthetic segmentation data: multi-class ellipse/blob images with exact
//! masks, plus dataset persistence as a directory of STNT pairs.

use crate::error::{CoreError, Result};
use crate::io;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Integer class labels on a (H,W) grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u8>,
}

impl Mask {
    pub fn zeros(h: usize, w: usize) -> Self {
        Mask { h, w, labels: vec![0; h * w] }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[self.h, self.w], self.labels.iter().map(|&v| v as f32).collect())
            .unwrap()
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let sh = t.shape();
        let (h, w) = match sh {
            [h, w] => (*h, *w),
            [1, h, w] => (*h, *w),
            other => return Err(CoreError::shape(format!("mask shape {other:?} not (H,W)"))),
        };
        let labels = t.data().iter().map(|&v| v.round() as u8).collect();
        Ok(Mask { h, w, labels })
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// Grayscale image (1,H,W) in [0,1].
    pub image: Tensor<f32>,
    pub mask: Mask,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub num_images: usize,
    pub object_count_range: (usize, usize),
    /// Semi-axis range in pixels; (1.0, 3.0) is the small-object setting.
    pub radius_range: (f64, f64),
    pub noise_sigma: f64,
    pub num_classes: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn blobs(image_size: usize, num_images: usize, seed: u64) -> Self {
        SyntheticSpec {
            image_size,
            num_images,
            object_count_range: (1, 3),
            radius_range: (image_size as f64 / 10.0, image_size as f64 / 4.0),
            noise_sigma: 0.05,
            num_classes: 2,
            seed,
        }
    }

    pub fn small_objects(image_size: usize, num_images: usize, seed: u64) -> Self {
        SyntheticSpec {
            image_size,
            num_images,
            object_count_range: (2, 5),
            radius_range: (1.0, 3.0),
            noise_sigma: 0.05,
            num_classes: 2,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.radius_range.0 < 1.0 || self.radius_range.1 < self.radius_range.0 {
            return Err(CoreError::InvalidArgument(format!(
                "radius range {:?} invalid",
                self.radius_range
            )));
        }
        if self.radius_range.1 * 2.0 > self.image_size as f64 {
            return Err(CoreError::InvalidArgument(format!(
                "radius {} too large for image size {}",
                self.radius_range.1, self.image_size
            )));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(CoreError::InvalidArgument(format!(
                "num_classes {} out of range",
                self.num_classes
            )));
        }
        if self.object_count_range.0 > self.object_count_range.1 {
            return Err(CoreError::InvalidArgument("empty object count range".into()));
        }
        Ok(())
    }
}

// Box–Muller; `rand_distr` would do, but this keeps the dependency set small
// and the output bit-stable across library versions.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn generate_one(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Sample {
    let n = spec.image_size;
    let mut img = vec![0.15f64; n * n];
    let mut mask = Mask::zeros(n, n);
    let count = rng.gen_range(spec.object_count_range.0..=spec.object_count_range.1);
    for _ in 0..count {
        let class = rng.gen_range(1..spec.num_classes) as u8;
        let a = rng.gen_range(spec.radius_range.0..=spec.radius_range.1);
        let b = rng.gen_range(spec.radius_range.0..=spec.radius_range.1);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let margin = a.max(b);
        let cx = rng.gen_range(margin..(n as f64 - margin));
        let cy = rng.gen_range(margin..(n as f64 - margin));
        // one intensity per class, constant within the object, so noiseless
        // single-object images have exactly two gray levels
        let value = 0.4 + 0.5 * (class as f64 / spec.num_classes as f64);
        let (st, ct) = theta.sin_cos();
        let lo_i = ((cy - margin).floor().max(0.0)) as usize;
        let hi_i = ((cy + margin).ceil().min(n as f64 - 1.0)) as usize;
        let lo_j = ((cx - margin).floor().max(0.0)) as usize;
        let hi_j = ((cx + margin).ceil().min(n as f64 - 1.0)) as usize;
        for i in lo_i..=hi_i {
            for j in lo_j..=hi_j {
                let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                let u = ct * dx + st * dy;
                let v = -st * dx + ct * dy;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    img[i * n + j] = value;
                    mask.labels[i * n + j] = class;
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        for v in img.iter_mut() {
            *v = (*v + spec.noise_sigma * gaussian(rng)).clamp(0.0, 1.0);
        }
    }
    let image = Tensor::from_vec(&[1, n, n], img.into_iter().map(|v| v as f32).collect()).unwrap();
    Sample { image, mask }
}

/// Deterministic dataset generation; each image draws from its own RNG stream
/// derived from (seed, index).
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    Ok((0..spec.num_images)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                spec.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            generate_one(spec, &mut rng)
        })
        .collect())
}

pub fn save_dataset(dir: &Path, spec: &SyntheticSpec, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        io::write_tensor(&dir.join(format!("img_{i:05}.stnt")), &s.image)?;
        io::write_tensor(&dir.join(format!("msk_{i:05}.stnt")), &s.mask.to_tensor())?;
    }
    let manifest = serde_json::json!({ "spec": spec, "num_images": samples.len() });
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(SyntheticSpec, Vec<Sample>)> {
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let spec: SyntheticSpec = serde_json::from_value(manifest["spec"].clone())?;
    let num = manifest["num_images"]
        .as_u64()
        .ok_or_else(|| CoreError::Format("manifest missing num_images".into()))?
        as usize;
    let mut samples = Vec::with_capacity(num);
    for i in 0..num {
        let image: Tensor<f32> = io::read_tensor(&dir.join(format!("img_{i:05}.stnt")))?;
        let mask_t: Tensor<f32> = io::read_tensor(&dir.join(format!("msk_{i:05}.stnt")))?;
        samples.push(Sample { image, mask: Mask::from_tensor(&mask_t)? });
    }
    Ok((spec, samples))
}
