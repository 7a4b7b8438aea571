//! Central finite-difference verification of every trainable parameter
//! gradient, for both architectures and all three training losses.

use std::fmt;

use ndarray::{s, Array2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fewshot::{self, DualSpaceConfig, Episode, LossKind};
use crate::nn::{self, Gradients, ModelParams, NetConfig, OutputMode};
use crate::rng;
use crate::synth::{gen_gaussian_blobs, BlobSpec};
use crate::training::{cross_entropy_loss, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckLoss {
    CrossEntropy,
    Prototypical,
    DualSpace,
}

impl CheckLoss {
    pub const ALL: [CheckLoss; 3] = [CheckLoss::CrossEntropy, CheckLoss::Prototypical, CheckLoss::DualSpace];

    pub fn name(self) -> &'static str {
        match self {
            CheckLoss::CrossEntropy => "cross_entropy",
            CheckLoss::Prototypical => "prototypical",
            CheckLoss::DualSpace => "dual_space",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub h: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator. Hidden-layer biases
    /// cancel under batch norm, so their exact gradient is zero and the
    /// finite difference is pure rounding noise of order `eps·|L|/h`.
    pub denom_floor: f64,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub batch: usize,
    pub k_support: usize,
    pub k_query: usize,
    pub dropout_p: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tolerance: 1e-4,
            denom_floor: 1e-6,
            input_dim: 6,
            hidden_dims: vec![5, 4],
            batch: 24,
            k_support: 4,
            k_query: 5,
            dropout_p: 0.2,
            alpha: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub model: ModelKind,
    pub loss: CheckLoss,
    pub n_params: usize,
    pub batch_rows: usize,
    pub max_rel_error: f64,
    /// Parameter coordinate with the largest error, e.g. `layers[1].bn_gamma[2]`.
    pub worst: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            writeln!(
                f,
                "{:4} {:14} {:>3} params {:>2} rows  max rel err {:.3e} at {}  {}",
                c.model.name(),
                c.loss.name(),
                c.n_params,
                c.batch_rows,
                c.max_rel_error,
                c.worst,
                if c.passed { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "max relative error {:.3e} (tolerance {:.0e})", self.max_rel_error(), self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn tensor_names(p: &ModelParams) -> Vec<String> {
    let mut names = Vec::new();
    if p.attention.is_some() {
        names.push("attention".to_string());
    }
    for i in 0..p.layers.len() {
        for t in ["weights", "biases", "bn_gamma", "bn_beta"] {
            names.push(format!("layers[{i}].{t}"));
        }
    }
    if p.head.is_some() {
        names.push("head.weights".into());
        names.push("head.biases".into());
    }
    names
}

/// A differentiable scalar objective over the network output.
enum Objective {
    CrossEntropy { x: Array2<f64>, y: Vec<u8> },
    Episode { ep: Episode, kind: LossKind, dual: DualSpaceConfig },
}

impl Objective {
    fn input(&self) -> Array2<f64> {
        match self {
            Objective::CrossEntropy { x, .. } => x.clone(),
            Objective::Episode { ep, .. } => ep.stacked_inputs(),
        }
    }

    /// Loss and its gradient with respect to the network output.
    fn eval(&self, out: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        match self {
            Objective::CrossEntropy { y, .. } => cross_entropy_loss(out, y),
            Objective::Episode { ep, kind, dual } => {
                let m = ep.support_x.nrows();
                let support = out.slice(s![..m, ..]).to_owned();
                let query = out.slice(s![m.., ..]).to_owned();
                let obj = fewshot::episode_objective(&support, &ep.support_y, &query, &ep.query_y, 2, *kind, dual)?;
                let grad = ndarray::concatenate(Axis(0), &[obj.grad_support.view(), obj.grad_query.view()])
                    .expect("matching widths");
                Ok((obj.output.loss, grad))
            }
        }
    }
}

/// Train-mode loss with a fixed dropout mask; running statistics are
/// updated on a scratch copy so every evaluation sees the same parameters.
fn loss_at(
    params: &ModelParams,
    net: &NetConfig,
    obj: &Objective,
    x: &Array2<f64>,
    dropout_seed: u64,
) -> Result<(f64, Array2<f64>, Gradients)> {
    let mut scratch = params.clone();
    let (out, trace) = nn::forward_train(&mut scratch, net, x, dropout_seed)?;
    let (loss, upstream) = obj.eval(&out)?;
    let grads = nn::backward(&scratch, &trace, &upstream)?;
    Ok((loss, out, grads))
}

fn check_case(cfg: &GradCheckConfig, model: ModelKind, loss: CheckLoss) -> Result<CaseResult> {
    let case_seed = rng::derive(cfg.seed, loss.name(), model as u64);
    let net = NetConfig {
        input_dim: cfg.input_dim,
        hidden_dims: cfg.hidden_dims.clone(),
        output_mode: match loss {
            CheckLoss::CrossEntropy => OutputMode::Logits,
            _ => OutputMode::Embedding,
        },
        use_attention: model == ModelKind::MlpAttention,
        dropout_p: cfg.dropout_p,
        init_seed: rng::derive(case_seed, "init", 0),
        ..NetConfig::default()
    };
    let params = nn::init_params(&net)?;
    let obj = match loss {
        CheckLoss::CrossEntropy => {
            let mut r = rng::named(case_seed, "inputs", 0);
            let mut x = Array2::zeros((cfg.batch, cfg.input_dim));
            rng::fill_normal(&mut r, x.as_slice_mut().expect("standard layout"));
            let y = (0..cfg.batch).map(|i| (i % 2) as u8).collect();
            Objective::CrossEntropy { x, y }
        }
        CheckLoss::Prototypical | CheckLoss::DualSpace => {
            let data = gen_gaussian_blobs(&BlobSpec {
                dim: cfg.input_dim,
                n_per_class: cfg.k_support + cfg.k_query + 5,
                mean_separation: 1.0,
                label_noise: 0.0,
                seed: case_seed,
            })?;
            let ep = fewshot::sample_episode(&data, cfg.k_support, cfg.k_query, case_seed)?;
            let kind = if loss == CheckLoss::Prototypical { LossKind::Traditional } else { LossKind::DualSpace };
            let dual = DualSpaceConfig { alpha: cfg.alpha, ..DualSpaceConfig::default() };
            Objective::Episode { ep, kind, dual }
        }
    };
    let x = obj.input();
    let dropout_seed = rng::derive(case_seed, "dropout", 0);
    let (_, _, grads) = loss_at(&params, &net, &obj, &x, dropout_seed)?;
    let analytic = grads.slices();
    let names = tensor_names(&params);
    if analytic.len() != names.len() {
        return Err(Error::Shape("gradient tensors do not match parameter tensors".into()));
    }

    let mut worst = (0.0f64, String::new());
    let mut n_params = 0;
    for (t, (name, g)) in names.iter().zip(&analytic).enumerate() {
        for (k, &a) in g.iter().enumerate() {
            n_params += 1;
            let shifted = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                p.trainable_mut()[t].1[k] += delta;
                Ok(loss_at(&p, &net, &obj, &x, dropout_seed)?.0)
            };
            let numeric = (shifted(cfg.h)? - shifted(-cfg.h)?) / (2.0 * cfg.h);
            let err = relative_error(a, numeric, cfg.denom_floor);
            if !(err <= worst.0) {
                worst = (err, format!("{name}[{k}]"));
            }
        }
    }
    Ok(CaseResult {
        model,
        loss,
        n_params,
        batch_rows: x.nrows(),
        max_rel_error: worst.0,
        worst: worst.1,
        passed: worst.0 < cfg.tolerance,
    })
}

/// Every (architecture, loss) pair.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut cases = Vec::new();
    for model in [ModelKind::Mlp, ModelKind::MlpAttention] {
        for loss in CheckLoss::ALL {
            cases.push(check_case(cfg, model, loss)?);
        }
    }
    Ok(GradCheckReport { tolerance: cfg.tolerance, cases })
}
