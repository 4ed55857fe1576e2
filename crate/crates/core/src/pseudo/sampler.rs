use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::InputShape;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Perturbation {
    GaussianNoise {
        sigma: f64,
    },
    /// Random rotation in `[-max_rotation_deg, max_rotation_deg]` with
    /// bilinear resampling, then additive Gaussian noise.
    ImageJitter {
        #[serde(default = "default_rotation")]
        max_rotation_deg: f64,
        sigma: f64,
    },
}

fn default_rotation() -> f64 {
    5.0
}

/// How to draw `k` neighbors of an input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub k: usize,
    pub perturbation: Perturbation,
    #[serde(default)]
    pub seed: u64,
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("neighborhood sampler needs K >= 2"));
        }
        let (sigma, deg) = match self.perturbation {
            Perturbation::GaussianNoise { sigma } => (sigma, 0.0),
            Perturbation::ImageJitter {
                max_rotation_deg,
                sigma,
            } => (sigma, max_rotation_deg),
        };
        if !(sigma >= 0.0 && sigma.is_finite() && deg >= 0.0 && deg.is_finite()) {
            return Err(Error::invalid("sampler sigma and rotation must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Rotates every channel of a `C x H x W` image about its center, sampling
/// bilinearly with zero fill outside the frame.
pub fn rotate_bilinear(image: &[f64], channels: usize, height: usize, width: usize, degrees: f64) -> Vec<f64> {
    if degrees == 0.0 {
        return image.to_vec();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; image.len()];
    let at = |ch: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
            0.0
        } else {
            image[ch * height * width + y as usize * width + x as usize]
        }
    };
    for y in 0..height {
        for x in 0..width {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sy = cy + c * dy - s * dx;
            let sx = cx + s * dy + c * dx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            for ch in 0..channels {
                let v = (1.0 - fy) * ((1.0 - fx) * at(ch, y0, x0) + fx * at(ch, y0, x0 + 1))
                    + fy * ((1.0 - fx) * at(ch, y0 + 1, x0) + fx * at(ch, y0 + 1, x0 + 1));
                out[ch * height * width + y * width + x] = v;
            }
        }
    }
    out
}

/// `spec.k` perturbed copies of `input`, deterministic in
/// `(spec.seed, stream)`.
pub fn sample_neighborhood(input: &[f64], shape: InputShape, spec: &SamplerSpec, stream: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if input.len() != shape.len() {
        return Err(Error::Shape(format!(
            "input of {} values for shape of {}",
            input.len(),
            shape.len()
        )));
    }
    let mut r = rng::rng(rng::mix(rng::derive(spec.seed, "neighborhood"), stream));
    let (sigma, max_deg) = match spec.perturbation {
        Perturbation::GaussianNoise { sigma } => (sigma, None),
        Perturbation::ImageJitter {
            max_rotation_deg,
            sigma,
        } => (sigma, Some(max_rotation_deg)),
    };
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(spec.k);
    for _ in 0..spec.k {
        let mut v = match max_deg {
            None => input.to_vec(),
            Some(deg) => {
                let InputShape::Image {
                    channels,
                    height,
                    width,
                } = shape
                else {
                    return Err(Error::invalid("image jitter needs image-shaped inputs"));
                };
                let angle = if deg > 0.0 { r.random_range(-deg..=deg) } else { 0.0 };
                rotate_bilinear(input, channels, height, width, angle)
            }
        };
        if sigma > 0.0 {
            v.iter_mut().for_each(|x| *x += noise.sample(&mut r));
        }
        out.push(v);
    }
    Ok(out)
}
