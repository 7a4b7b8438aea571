//! JSON model documents. Float arrays are stored as base64 of little-endian
//! IEEE-754 doubles together with their shape.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::adam::OptimizerState;
use super::config::NetConfig;
use super::params::{Gradients, Head, HiddenLayer, LayerGrads, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Encoded {
    shape: Vec<usize>,
    data: String,
}

fn encode(shape: &[usize], values: &[f64]) -> Encoded {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    Encoded { shape: shape.to_vec(), data: STANDARD.encode(bytes) }
}

fn decode_raw(e: &Encoded) -> Result<Vec<f64>> {
    let bytes = STANDARD.decode(&e.data).map_err(|err| Error::Decode(err.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Decode("float payload is not a multiple of 8 bytes".into()));
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    if values.len() != e.shape.iter().product::<usize>() {
        return Err(Error::Decode(format!("payload holds {} values, shape {:?}", values.len(), e.shape)));
    }
    Ok(values)
}

fn enc2(a: &Array2<f64>) -> Encoded {
    encode(&[a.nrows(), a.ncols()], a.as_slice().expect("contiguous"))
}

fn enc1(a: &Array1<f64>) -> Encoded {
    encode(&[a.len()], a.as_slice().expect("contiguous"))
}

fn dec2(e: &Encoded) -> Result<Array2<f64>> {
    if e.shape.len() != 2 {
        return Err(Error::Decode(format!("expected a matrix, got shape {:?}", e.shape)));
    }
    Array2::from_shape_vec((e.shape[0], e.shape[1]), decode_raw(e)?).map_err(|err| Error::Decode(err.to_string()))
}

fn dec1(e: &Encoded) -> Result<Array1<f64>> {
    if e.shape.len() != 1 {
        return Err(Error::Decode(format!("expected a vector, got shape {:?}", e.shape)));
    }
    Ok(Array1::from(decode_raw(e)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerDoc {
    weights: Encoded,
    biases: Encoded,
    bn_gamma: Encoded,
    bn_beta: Encoded,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bn_running_mean: Option<Encoded>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bn_running_var: Option<Encoded>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeadDoc {
    weights: Encoded,
    biases: Encoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorTree {
    attention: Option<Encoded>,
    layers: Vec<LayerDoc>,
    head: Option<HeadDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerDoc {
    first_moment: TensorTree,
    second_moment: TensorTree,
    step_count: u64,
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    adam_eps: f64,
}

/// A trained network: its config, parameters and (optionally) optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub net_config: NetConfig,
    params: TensorTree,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerDoc>,
}

fn params_tree(p: &ModelParams) -> TensorTree {
    TensorTree {
        attention: p.attention.as_ref().map(enc2),
        layers: p
            .layers
            .iter()
            .map(|l| LayerDoc {
                weights: enc2(&l.weights),
                biases: enc1(&l.biases),
                bn_gamma: enc1(&l.bn_gamma),
                bn_beta: enc1(&l.bn_beta),
                bn_running_mean: Some(enc1(&l.bn_running_mean)),
                bn_running_var: Some(enc1(&l.bn_running_var)),
            })
            .collect(),
        head: p.head.as_ref().map(|h| HeadDoc { weights: enc2(&h.weights), biases: enc1(&h.biases) }),
    }
}

fn grads_tree(g: &Gradients) -> TensorTree {
    TensorTree {
        attention: g.attention.as_ref().map(enc2),
        layers: g
            .layers
            .iter()
            .map(|l| LayerDoc {
                weights: enc2(&l.weights),
                biases: enc1(&l.biases),
                bn_gamma: enc1(&l.bn_gamma),
                bn_beta: enc1(&l.bn_beta),
                bn_running_mean: None,
                bn_running_var: None,
            })
            .collect(),
        head: g.head.as_ref().map(|h| HeadDoc { weights: enc2(&h.weights), biases: enc1(&h.biases) }),
    }
}

fn head_from(h: &Option<HeadDoc>) -> Result<Option<Head>> {
    h.as_ref().map(|h| Ok(Head { weights: dec2(&h.weights)?, biases: dec1(&h.biases)? })).transpose()
}

fn params_from(t: &TensorTree) -> Result<ModelParams> {
    let missing = || Error::Decode("layer is missing running statistics".into());
    Ok(ModelParams {
        attention: t.attention.as_ref().map(dec2).transpose()?,
        layers: t
            .layers
            .iter()
            .map(|l| {
                Ok(HiddenLayer {
                    weights: dec2(&l.weights)?,
                    biases: dec1(&l.biases)?,
                    bn_gamma: dec1(&l.bn_gamma)?,
                    bn_beta: dec1(&l.bn_beta)?,
                    bn_running_mean: dec1(l.bn_running_mean.as_ref().ok_or_else(missing)?)?,
                    bn_running_var: dec1(l.bn_running_var.as_ref().ok_or_else(missing)?)?,
                })
            })
            .collect::<Result<_>>()?,
        head: head_from(&t.head)?,
    })
}

fn grads_from(t: &TensorTree) -> Result<Gradients> {
    Ok(Gradients {
        attention: t.attention.as_ref().map(dec2).transpose()?,
        layers: t
            .layers
            .iter()
            .map(|l| {
                Ok(LayerGrads {
                    weights: dec2(&l.weights)?,
                    biases: dec1(&l.biases)?,
                    bn_gamma: dec1(&l.bn_gamma)?,
                    bn_beta: dec1(&l.bn_beta)?,
                })
            })
            .collect::<Result<_>>()?,
        head: head_from(&t.head)?,
    })
}

impl ModelDocument {
    pub fn new(cfg: &NetConfig, params: &ModelParams, optimizer: Option<&OptimizerState>) -> Self {
        ModelDocument {
            net_config: cfg.clone(),
            params: params_tree(params),
            optimizer: optimizer.map(|s| OptimizerDoc {
                first_moment: grads_tree(&s.first_moment),
                second_moment: grads_tree(&s.second_moment),
                step_count: s.step_count,
                lr: s.lr,
                weight_decay: s.weight_decay,
                beta1: s.beta1,
                beta2: s.beta2,
                adam_eps: s.adam_eps,
            }),
        }
    }

    /// Decodes and validates every shape against the embedded config.
    pub fn decode(&self) -> Result<(NetConfig, ModelParams, Option<OptimizerState>)> {
        let params = params_from(&self.params)?;
        params.check(&self.net_config)?;
        let optimizer = match &self.optimizer {
            Some(o) => {
                let state = OptimizerState {
                    first_moment: grads_from(&o.first_moment)?,
                    second_moment: grads_from(&o.second_moment)?,
                    step_count: o.step_count,
                    lr: o.lr,
                    weight_decay: o.weight_decay,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    adam_eps: o.adam_eps,
                };
                if !state.first_moment.is_congruent(&params) || !state.second_moment.is_congruent(&params) {
                    return Err(Error::Shape("optimizer moments do not match the model".into()));
                }
                Some(state)
            }
            None => None,
        };
        Ok((self.net_config.clone(), params, optimizer))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::preprocess::save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::preprocess::load_json(path)
    }
}
