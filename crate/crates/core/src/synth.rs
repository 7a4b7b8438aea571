//! Gaussian blob data with known Bayes accuracy, emitted in the same schema
//! as processed flow data.
//!
//! Draws come from ChaCha8 seeded with `seed` through standard-normal
//! Box–Muller pairs (see [`crate::rng`]); rows are shuffled so class order
//! carries no signal.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowdata::LabeledDataset;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    pub dim: usize,
    pub n_per_class: usize,
    /// Distance between the class means in units of the shared σ = 1.
    pub mean_separation: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec { dim: 28, n_per_class: 1000, mean_separation: 4.0, label_noise: 0.0, seed: 0 }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_per_class == 0 {
            return Err(Error::Config("blob dim and n_per_class must be positive".into()));
        }
        if !(self.mean_separation >= 0.0) || !self.mean_separation.is_finite() {
            return Err(Error::Config("mean_separation must be finite and non-negative".into()));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::Config(format!("label_noise {} outside [0, 0.5)", self.label_noise)));
        }
        Ok(())
    }

    /// Accuracy of the optimal classifier on clean labels: `Φ(separation / 2)`.
    pub fn bayes_accuracy(&self) -> f64 {
        normal_cdf(self.mean_separation / 2.0)
    }
}

/// Standard normal CDF via the complementary error function (Numerical
/// Recipes `erfcc`, |relative error| < 1.2e-7).
pub fn normal_cdf(x: f64) -> f64 {
    let z = x.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98 + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let erfc = t * poly.exp();
    if x >= 0.0 {
        1.0 - 0.5 * erfc
    } else {
        0.5 * erfc
    }
}

/// Class 0 ~ N(0, I), class 1 ~ N(s·e₀, I); labels then flipped independently
/// with probability `label_noise`.
pub fn gen_gaussian_blobs(spec: &BlobSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let n = 2 * spec.n_per_class;
    let mut r = rng::named(spec.seed, "blobs", 0);
    let mut features = Array2::zeros((n, spec.dim));
    rng::fill_normal(&mut r, features.as_slice_mut().expect("fresh array"));
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i >= spec.n_per_class)).collect();
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            features[[i, 0]] += spec.mean_separation;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::named(spec.seed, "blobs-order", 0), &mut order);
    let features = features.select(ndarray::Axis(0), &order);
    labels = order.iter().map(|&i| labels[i]).collect();
    if spec.label_noise > 0.0 {
        let mut flip = rng::named(spec.seed, "blobs-noise", 0);
        for l in &mut labels {
            if rng::uniform(&mut flip) < spec.label_noise {
                *l ^= 1;
            }
        }
    }
    let names = (0..spec.dim).map(|i| format!("x{i}")).collect();
    Ok(LabeledDataset::new(features, labels, names)?.with_note(format!("gaussian blobs {spec:?}")))
}
