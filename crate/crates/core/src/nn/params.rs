use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::{NetConfig, OutputMode};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
    pub bn_running_mean: Array1<f64>,
    pub bn_running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub attention: Option<Array2<f64>>,
    pub layers: Vec<HiddenLayer>,
    pub head: Option<Head>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub attention: Option<Array2<f64>>,
    pub layers: Vec<LayerGrads>,
    pub head: Option<Head>,
}

/// What a trainable tensor is, for weight-decay purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

fn kaiming(rng: &mut rng::StreamRng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || (2.0 * rng::uniform(rng) - 1.0) * bound)
}

pub fn init_params(cfg: &NetConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.init_seed);
    let attention = cfg.use_attention.then(|| kaiming(&mut rng, cfg.input_dim, cfg.input_dim));
    let mut layers = Vec::with_capacity(cfg.hidden_dims.len());
    let mut fan_in = cfg.input_dim;
    for &width in &cfg.hidden_dims {
        layers.push(HiddenLayer {
            weights: kaiming(&mut rng, fan_in, width),
            biases: Array1::zeros(width),
            bn_gamma: Array1::ones(width),
            bn_beta: Array1::zeros(width),
            bn_running_mean: Array1::zeros(width),
            bn_running_var: Array1::ones(width),
        });
        fan_in = width;
    }
    let head = (cfg.output_mode == OutputMode::Logits)
        .then(|| Head { weights: kaiming(&mut rng, fan_in, 2), biases: Array1::zeros(2) });
    Ok(ModelParams { attention, layers, head })
}

macro_rules! flat {
    ($arr:expr) => {
        $arr.as_slice().expect("parameter arrays are contiguous")
    };
}

macro_rules! flat_mut {
    ($arr:expr) => {
        $arr.as_slice_mut().expect("parameter arrays are contiguous")
    };
}

impl ModelParams {
    /// Checks every shape against `cfg` and that running variances are positive.
    pub fn check(&self, cfg: &NetConfig) -> Result<()> {
        cfg.validate()?;
        let bad = |what: String| Err(Error::Shape(what));
        if cfg.use_attention != self.attention.is_some() {
            return bad("attention presence differs from config".into());
        }
        if let Some(w) = &self.attention {
            if w.dim() != (cfg.input_dim, cfg.input_dim) {
                return bad(format!("attention weights {:?}", w.dim()));
            }
        }
        if self.layers.len() != cfg.hidden_dims.len() {
            return bad(format!("{} hidden layers, config has {}", self.layers.len(), cfg.hidden_dims.len()));
        }
        let mut fan_in = cfg.input_dim;
        for (i, (l, &w)) in self.layers.iter().zip(&cfg.hidden_dims).enumerate() {
            let vecs = [&l.biases, &l.bn_gamma, &l.bn_beta, &l.bn_running_mean, &l.bn_running_var];
            if l.weights.dim() != (fan_in, w) || vecs.iter().any(|v| v.len() != w) {
                return bad(format!("layer {i} shapes inconsistent with {fan_in}x{w}"));
            }
            if l.bn_running_var.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Decode(format!("layer {i} running variance not positive")));
            }
            fan_in = w;
        }
        match (&self.head, cfg.output_mode) {
            (Some(h), OutputMode::Logits) => {
                if h.weights.dim() != (fan_in, 2) || h.biases.len() != 2 {
                    return bad("head shapes".into());
                }
            }
            (None, OutputMode::Embedding) => {}
            _ => return bad("head presence differs from output mode".into()),
        }
        Ok(())
    }

    /// Trainable tensors in canonical order: attention, then per layer
    /// weights / biases / gamma / beta, then head weights / biases.
    pub fn trainable(&self) -> Vec<(ParamRole, &[f64])> {
        let mut out = Vec::new();
        if let Some(w) = &self.attention {
            out.push((ParamRole::Weight, flat!(w)));
        }
        for l in &self.layers {
            out.push((ParamRole::Weight, flat!(l.weights)));
            out.push((ParamRole::Bias, flat!(l.biases)));
            out.push((ParamRole::BnScale, flat!(l.bn_gamma)));
            out.push((ParamRole::BnShift, flat!(l.bn_beta)));
        }
        if let Some(h) = &self.head {
            out.push((ParamRole::Weight, flat!(h.weights)));
            out.push((ParamRole::Bias, flat!(h.biases)));
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<(ParamRole, &mut [f64])> {
        let mut out = Vec::new();
        if let Some(w) = &mut self.attention {
            out.push((ParamRole::Weight, flat_mut!(w)));
        }
        for l in &mut self.layers {
            out.push((ParamRole::Weight, flat_mut!(l.weights)));
            out.push((ParamRole::Bias, flat_mut!(l.biases)));
            out.push((ParamRole::BnScale, flat_mut!(l.bn_gamma)));
            out.push((ParamRole::BnShift, flat_mut!(l.bn_beta)));
        }
        if let Some(h) = &mut self.head {
            out.push((ParamRole::Weight, flat_mut!(h.weights)));
            out.push((ParamRole::Bias, flat_mut!(h.biases)));
        }
        out
    }

    pub fn n_trainable(&self) -> usize {
        self.trainable().iter().map(|(_, s)| s.len()).sum()
    }
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Gradients {
            attention: p.attention.as_ref().map(|w| Array2::zeros(w.raw_dim())),
            layers: p
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.len()),
                    bn_gamma: Array1::zeros(l.bn_gamma.len()),
                    bn_beta: Array1::zeros(l.bn_beta.len()),
                })
                .collect(),
            head: p
                .head
                .as_ref()
                .map(|h| Head { weights: Array2::zeros(h.weights.raw_dim()), biases: Array1::zeros(2) }),
        }
    }

    /// Same order as [`ModelParams::trainable`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some(w) = &self.attention {
            out.push(flat!(w));
        }
        for l in &self.layers {
            out.push(flat!(l.weights));
            out.push(flat!(l.biases));
            out.push(flat!(l.bn_gamma));
            out.push(flat!(l.bn_beta));
        }
        if let Some(h) = &self.head {
            out.push(flat!(h.weights));
            out.push(flat!(h.biases));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(w) = &mut self.attention {
            out.push(flat_mut!(w));
        }
        for l in &mut self.layers {
            out.push(flat_mut!(l.weights));
            out.push(flat_mut!(l.biases));
            out.push(flat_mut!(l.bn_gamma));
            out.push(flat_mut!(l.bn_beta));
        }
        if let Some(h) = &mut self.head {
            out.push(flat_mut!(h.weights));
            out.push(flat_mut!(h.biases));
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_congruent(&self, p: &ModelParams) -> bool {
        let a = self.slices();
        let b = p.trainable();
        a.len() == b.len() && a.iter().zip(&b).all(|(g, (_, p))| g.len() == p.len())
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}
