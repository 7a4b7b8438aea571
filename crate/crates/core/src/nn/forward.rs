use ndarray::{Array1, Array2, Axis, Zip};

use super::config::NetConfig;
use super::params::{Gradients, Head, LayerGrads, ModelParams};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct AttentionCache {
    tanh: Array2<f64>,
    attn: Array2<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// Batch-norm output before the ReLU.
    pre_relu: Array2<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)); absent when p = 0.
    dropout: Option<Array2<f64>>,
}

/// Everything [`backward`] needs from a train-mode forward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Array2<f64>,
    attention: Option<AttentionCache>,
    layers: Vec<LayerCache>,
    head_input: Option<Array2<f64>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    /// Attention weights of the traced forward, if attention is enabled.
    pub fn attention_weights(&self) -> Option<&Array2<f64>> {
        self.attention.as_ref().map(|a| &a.attn)
    }
}

fn ensure_finite(x: &Array2<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Feature attention per sample: `t = tanh(W x)`, `a = e^t / (sum e^t + eps)`,
/// output `x ⊙ a`. Returns `(weighted, attn)`.
pub fn attention_forward(x: &Array2<f64>, w: &Array2<f64>, eps: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    let (weighted, cache) = attention_cached(x, w, eps)?;
    Ok((weighted, cache.attn))
}

fn attention_cached(x: &Array2<f64>, w: &Array2<f64>, eps: f64) -> Result<(Array2<f64>, AttentionCache)> {
    if w.dim() != (x.ncols(), x.ncols()) {
        return Err(Error::Shape(format!("attention weights {:?} for {} features", w.dim(), x.ncols())));
    }
    ensure_finite(x, "attention input")?;
    // row i of x · Wᵀ is W x_i
    let tanh = x.dot(&w.t()).mapv(f64::tanh);
    let mut attn = tanh.mapv(f64::exp);
    for mut row in attn.outer_iter_mut() {
        let denom = row.sum() + eps;
        row.mapv_inplace(|e| e / denom);
    }
    let weighted = x * &attn;
    Ok((weighted, AttentionCache { tanh, attn }))
}

fn check_input(params: &ModelParams, cfg: &NetConfig, x: &Array2<f64>) -> Result<()> {
    params.check(cfg)?;
    if x.ncols() != cfg.input_dim {
        return Err(Error::Shape(format!("input has {} columns, network expects {}", x.ncols(), cfg.input_dim)));
    }
    if x.nrows() == 0 {
        return Err(Error::Empty("forward on an empty batch".into()));
    }
    ensure_finite(x, "network input")
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut z = x.dot(w);
    z += b;
    z
}

/// Dispatches to [`forward_train`] or [`forward_eval`]; the trace is returned
/// only in train mode.
pub fn forward(
    params: &mut ModelParams,
    cfg: &NetConfig,
    x: &Array2<f64>,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(Array2<f64>, Option<ForwardTrace>)> {
    match mode {
        Mode::Train => forward_train(params, cfg, x, dropout_seed).map(|(y, t)| (y, Some(t))),
        Mode::Eval => forward_eval(params, cfg, x).map(|y| (y, None)),
    }
}

/// Batch statistics, fresh dropout masks from `dropout_seed`, and a
/// momentum update of the running statistics.
pub fn forward_train(
    params: &mut ModelParams,
    cfg: &NetConfig,
    x: &Array2<f64>,
    dropout_seed: u64,
) -> Result<(Array2<f64>, ForwardTrace)> {
    check_input(params, cfg, x)?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Insufficient("train-mode batch norm needs a batch of at least 2".into()));
    }
    let mut rng = rng::stream(dropout_seed);
    let keep_scale = 1.0 / (1.0 - cfg.dropout_p);
    let momentum = cfg.batchnorm_momentum;

    let (mut h, attention) = match &params.attention {
        Some(w) => {
            let (weighted, cache) = attention_cached(x, w, cfg.attention_eps)?;
            (weighted, Some(cache))
        }
        None => (x.clone(), None),
    };

    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &mut params.layers {
        let z = affine(&h, &layer.weights, &layer.biases);
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &z - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + cfg.batchnorm_eps).sqrt());
        let xhat = &centered * &inv_std;
        let pre_relu = &xhat * &layer.bn_gamma + &layer.bn_beta;

        let unbias = n as f64 / (n as f64 - 1.0);
        Zip::from(&mut layer.bn_running_mean).and(&mean).for_each(|r, &m| *r = (1.0 - momentum) * *r + momentum * m);
        Zip::from(&mut layer.bn_running_var)
            .and(&var)
            .for_each(|r, &v| *r = (1.0 - momentum) * *r + momentum * v * unbias);

        let mut out = pre_relu.mapv(|v| v.max(0.0));
        let dropout = (cfg.dropout_p > 0.0).then(|| {
            let mask = Array2::from_shape_simple_fn(out.raw_dim(), || {
                if rng::uniform(&mut rng) < cfg.dropout_p {
                    0.0
                } else {
                    keep_scale
                }
            });
            out *= &mask;
            mask
        });
        caches.push(LayerCache { input: h, xhat, inv_std, pre_relu, dropout });
        h = out;
    }

    let (output, head_input) = match &params.head {
        Some(head) => (affine(&h, &head.weights, &head.biases), Some(h)),
        None => (h, None),
    };
    Ok((output, ForwardTrace { input: x.clone(), attention, layers: caches, head_input }))
}

/// Running statistics, no dropout; never mutates the model.
pub fn forward_eval(params: &ModelParams, cfg: &NetConfig, x: &Array2<f64>) -> Result<Array2<f64>> {
    check_input(params, cfg, x)?;
    let mut h = match &params.attention {
        Some(w) => attention_forward(x, w, cfg.attention_eps)?.0,
        None => x.clone(),
    };
    for layer in &params.layers {
        let z = affine(&h, &layer.weights, &layer.biases);
        let inv_std = layer.bn_running_var.mapv(|v| 1.0 / (v + cfg.batchnorm_eps).sqrt());
        let xhat = (&z - &layer.bn_running_mean) * &inv_std;
        h = (&xhat * &layer.bn_gamma + &layer.bn_beta).mapv(|v| v.max(0.0));
    }
    Ok(match &params.head {
        Some(head) => affine(&h, &head.weights, &head.biases),
        None => h,
    })
}

pub fn backward(params: &ModelParams, trace: &ForwardTrace, upstream: &Array2<f64>) -> Result<Gradients> {
    backward_with_input(params, trace, upstream).map(|(g, _)| g)
}

/// Parameter gradients plus `∂L/∂input`.
pub fn backward_with_input(
    params: &ModelParams,
    trace: &ForwardTrace,
    upstream: &Array2<f64>,
) -> Result<(Gradients, Array2<f64>)> {
    if trace.layers.len() != params.layers.len()
        || trace.attention.is_some() != params.attention.is_some()
        || trace.head_input.is_some() != params.head.is_some()
    {
        return Err(Error::Shape("trace was not produced by this model".into()));
    }
    let n = trace.batch_size();
    let out_dim = match &params.head {
        Some(h) => h.weights.ncols(),
        None => params.layers.last().map_or(0, |l| l.weights.ncols()),
    };
    if upstream.dim() != (n, out_dim) {
        return Err(Error::Shape(format!("upstream gradient {:?}, expected ({n}, {out_dim})", upstream.dim())));
    }

    let mut g = upstream.clone();
    let head = match (&params.head, &trace.head_input) {
        (Some(head), Some(input)) => {
            let grads = Head { weights: input.t().dot(&g), biases: g.sum_axis(Axis(0)) };
            g = g.dot(&head.weights.t());
            Some(grads)
        }
        _ => None,
    };

    let nf = n as f64;
    let mut layer_grads = Vec::with_capacity(params.layers.len());
    for (layer, cache) in params.layers.iter().zip(&trace.layers).rev() {
        if let Some(mask) = &cache.dropout {
            g *= mask;
        }
        Zip::from(&mut g).and(&cache.pre_relu).for_each(|gv, &y| {
            if y <= 0.0 {
                *gv = 0.0
            }
        });
        let d_gamma = (&g * &cache.xhat).sum_axis(Axis(0));
        let d_beta = g.sum_axis(Axis(0));
        let dxhat = &g * &layer.bn_gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mut dz = dxhat * nf - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat;
        dz *= &(&cache.inv_std / nf);

        layer_grads.push(LayerGrads {
            weights: cache.input.t().dot(&dz),
            biases: dz.sum_axis(Axis(0)),
            bn_gamma: d_gamma,
            bn_beta: d_beta,
        });
        g = dz.dot(&layer.weights.t());
    }
    layer_grads.reverse();

    let (attention, input_grad) = match (&params.attention, &trace.attention) {
        (Some(w), Some(cache)) => {
            let x = &trace.input;
            let mut dx = &g * &cache.attn;
            let g_attn = &g * x;
            // softmax-with-eps backward: dT = a ⊙ (gA - <gA, a>)
            let row_dot = (&g_attn * &cache.attn).sum_axis(Axis(1)).insert_axis(Axis(1));
            let d_tanh = &cache.attn * &(&g_attn - &row_dot);
            let d_proj = d_tanh * &cache.tanh.mapv(|t| 1.0 - t * t);
            dx += &d_proj.dot(w);
            (Some(d_proj.t().dot(x)), dx)
        }
        _ => (None, g),
    };

    Ok((Gradients { attention, layers: layer_grads, head }, input_grad))
}
