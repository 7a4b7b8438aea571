//! The four learning regimes: offline cross-entropy, order-preserving online
//! updates, and episodic training with the traditional prototypical or the
//! dual-space loss.
//!
//! Every regime is a pure function of `(datasets, config)`: all randomness
//! is drawn from named sub-streams of `TrainConfig::seed`.

use std::time::Instant;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fewshot::{self, DualSpaceConfig, Episode, LossKind, Prototypes};
use crate::flowdata::LabeledDataset;
use crate::nn::{self, ModelParams, NetConfig, OptimizerState, OutputMode};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Offline,
    Online,
    Proto,
    Dspace,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Offline, Regime::Online, Regime::Proto, Regime::Dspace];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Offline => "offline",
            Regime::Online => "online",
            Regime::Proto => "proto",
            Regime::Dspace => "dspace",
        }
    }

    pub fn is_episodic(self) -> bool {
        matches!(self, Regime::Proto | Regime::Dspace)
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "offline" => Ok(Regime::Offline),
            "online" => Ok(Regime::Online),
            "proto" | "traditional" => Ok(Regime::Proto),
            "dspace" | "dual-space" | "dual_space" => Ok(Regime::Dspace),
            other => Err(Error::Config(format!("unknown regime {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    #[serde(alias = "mlp-attn")]
    MlpAttention,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::MlpAttention => "mlp_attention",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "mlp-attn" | "mlp_attn" | "mlp-attention" | "mlp_attention" => Ok(ModelKind::MlpAttention),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_online_updates: usize,
    pub episodes_per_epoch: usize,
    pub k_support: usize,
    pub k_query: usize,
    /// Fixed validation episodes scored after every epoch (episodic regimes).
    pub val_episodes: usize,
    pub dual_space: DualSpaceConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden_dims: Vec<usize>,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Dspace,
            model: ModelKind::Mlp,
            epochs: 10,
            batch_size: 32,
            max_online_updates: 50,
            episodes_per_epoch: 20,
            k_support: 5,
            k_query: 15,
            val_episodes: 5,
            dual_space: DualSpaceConfig::default(),
            lr: 1e-3,
            weight_decay: 0.01,
            hidden_dims: vec![64, 32],
            dropout_p: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("max_online_updates", self.max_online_updates),
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("k_support", self.k_support),
            ("k_query", self.k_query),
        ];
        for (name, v) in positive {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        if let Err(e) = self.dual_space.validate() {
            out.push(e.detail());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            out.push(format!("lr {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            out.push(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            out.push(format!("hidden_dims {:?} must be non-empty and positive", self.hidden_dims));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            out.push(format!("dropout_p {} outside [0,1)", self.dropout_p));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn net_config(&self, input_dim: usize) -> NetConfig {
        NetConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            output_mode: if self.regime.is_episodic() { OutputMode::Embedding } else { OutputMode::Logits },
            use_attention: self.model == ModelKind::MlpAttention,
            dropout_p: self.dropout_p,
            init_seed: rng::derive(self.seed, "init", 0),
            ..NetConfig::default()
        }
    }

    /// Distance weighting used at estimation time: the traditional regime
    /// is scored by plain Euclidean nearest prototype, i.e. `alpha = 1`.
    pub fn estimate_config(&self) -> DualSpaceConfig {
        match self.regime {
            Regime::Proto => DualSpaceConfig { alpha: 1.0, ..self.dual_space },
            _ => self.dual_space,
        }
    }
}

/// One point of a loss curve: `[step, train_loss, val_loss]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u64, f64, Option<f64>)", into = "(u64, f64, Option<f64>)")]
pub struct LossPoint {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl From<(u64, f64, Option<f64>)> for LossPoint {
    fn from((step, train_loss, val_loss): (u64, f64, Option<f64>)) -> Self {
        LossPoint { step, train_loss, val_loss }
    }
}

impl From<LossPoint> for (u64, f64, Option<f64>) {
    fn from(p: LossPoint) -> Self {
        (p.step, p.train_loss, p.val_loss)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: TrainConfig,
    pub net_config: NetConfig,
    pub loss_curve: Vec<LossPoint>,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub prototypes: Option<Prototypes>,
    pub updates: u64,
    pub wall_time: f64,
}

impl RunResult {
    pub fn regime(&self) -> Regime {
        self.config.regime
    }

    /// Eval-mode predictions: logits argmax (ties to benign) or nearest
    /// prototype.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<u8>> {
        predict_with(&self.net_config, &self.params, self.prototypes.as_ref(), &self.config.estimate_config(), x)
    }
}

/// JSON form of a run: config echo, loss curve as `[step, train, val]`
/// triples and the names of the model and prototype files written beside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub regime: Regime,
    pub model: ModelKind,
    pub seed: u64,
    /// Balanced subsample size, when the run used one.
    pub train_n: Option<usize>,
    pub train_rows: usize,
    pub config: TrainConfig,
    pub net_config: NetConfig,
    pub updates: u64,
    pub loss_curve: Vec<LossPoint>,
    pub model_file: String,
    pub prototypes_file: Option<String>,
}

impl RunRecord {
    pub fn new(
        run: &RunResult,
        train_n: Option<usize>,
        train_rows: usize,
        model_file: &str,
        prototypes_file: Option<&str>,
    ) -> Self {
        RunRecord {
            regime: run.config.regime,
            model: run.config.model,
            seed: run.config.seed,
            train_n,
            train_rows,
            config: run.config.clone(),
            net_config: run.net_config.clone(),
            updates: run.updates,
            loss_curve: run.loss_curve.clone(),
            model_file: model_file.to_string(),
            prototypes_file: prototypes_file.map(str::to_string),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::preprocess::save_json(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::preprocess::load_json(path)
    }
}

pub fn predict_with(
    net: &NetConfig,
    params: &ModelParams,
    prototypes: Option<&Prototypes>,
    estimate_cfg: &DualSpaceConfig,
    x: &Array2<f64>,
) -> Result<Vec<u8>> {
    let out = nn::forward_eval(params, net, x)?;
    match (net.output_mode, prototypes) {
        (OutputMode::Logits, _) => Ok(out.outer_iter().map(|r| u8::from(r[1] > r[0])).collect()),
        (OutputMode::Embedding, Some(p)) => {
            Ok(fewshot::estimate_with(&out, p, estimate_cfg, Exec::Sequential)?.into_iter().map(|c| c as u8).collect())
        }
        (OutputMode::Embedding, None) => Err(Error::Config("embedding model needs prototypes to predict".into())),
    }
}

/// Mean softmax cross-entropy over rows and its gradient `(softmax − onehot)/n`.
pub fn cross_entropy_loss(logits: &Array2<f64>, labels: &[u8]) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::Empty("cross-entropy over zero rows".into()));
    }
    let nf = n as f64;
    let mut grad = Array2::zeros((n, c));
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.outer_iter().zip(labels).enumerate() {
        let y = y as usize;
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        let top = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        let max = row[top];
        let rest: f64 = (0..c).filter(|&j| j != top).map(|j| (row[j] - max).exp()).sum();
        let lse = max + rest.ln_1p();
        loss += (max - row[y]) + rest.ln_1p();
        for j in 0..c {
            grad[[i, j]] = ((row[j] - lse).exp() - f64::from(u8::from(j == y))) / nf;
        }
    }
    Ok((loss / nf, grad))
}

fn ensure_finite_loss(loss: f64, regime: Regime, step: u64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{} regime produced loss {loss} at update {step}", regime.name())))
    }
}

/// Consecutive batches over `order`; a trailing batch of one row is merged
/// into its predecessor because train-mode batch norm needs two rows.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

struct Learner {
    net: NetConfig,
    params: ModelParams,
    opt: OptimizerState,
    seed: u64,
}

impl Learner {
    fn new(cfg: &TrainConfig, input_dim: usize) -> Result<Self> {
        let net = cfg.net_config(input_dim);
        let params = nn::init_params(&net)?;
        let opt = OptimizerState::with_hyper(&params, cfg.lr, cfg.weight_decay);
        Ok(Learner { net, params, opt, seed: cfg.seed })
    }

    fn dropout_seed(&self) -> u64 {
        rng::derive(self.seed, "dropout", self.opt.step_count)
    }

    /// One CE update on the given rows; returns the batch loss.
    fn ce_step(&mut self, data: &LabeledDataset, rows: &[usize]) -> Result<f64> {
        let x = data.features.select(Axis(0), rows);
        let y: Vec<u8> = rows.iter().map(|&i| data.labels[i]).collect();
        let seed = self.dropout_seed();
        let (logits, trace) = nn::forward_train(&mut self.params, &self.net, &x, seed)?;
        let (loss, grad) = cross_entropy_loss(&logits, &y)?;
        let grads = nn::backward(&self.params, &trace, &grad)?;
        nn::adam_step(&mut self.params, &grads, &mut self.opt)?;
        Ok(loss)
    }

    fn eval_ce(&self, data: &LabeledDataset) -> Result<f64> {
        let logits = nn::forward_eval(&self.params, &self.net, &data.features)?;
        Ok(cross_entropy_loss(&logits, &data.labels)?.0)
    }

    fn finish(
        self,
        cfg: &TrainConfig,
        curve: Vec<LossPoint>,
        prototypes: Option<Prototypes>,
        start: Instant,
    ) -> RunResult {
        RunResult {
            config: cfg.clone(),
            net_config: self.net,
            loss_curve: curve,
            updates: self.opt.step_count,
            params: self.params,
            optimizer: self.opt,
            prototypes,
            wall_time: start.elapsed().as_secs_f64(),
        }
    }
}

fn require_regime(cfg: &TrainConfig, allowed: &[Regime]) -> Result<()> {
    cfg.validate()?;
    if allowed.contains(&cfg.regime) {
        Ok(())
    } else {
        Err(Error::Config(format!("regime {} not valid here", cfg.regime.name())))
    }
}

/// Epochs of seeded shuffles over the full training set, batches of
/// `batch_size`, validation cross-entropy after every epoch.
pub fn train_offline(train: &LabeledDataset, val: &LabeledDataset, cfg: &TrainConfig) -> Result<RunResult> {
    require_regime(cfg, &[Regime::Offline])?;
    if train.n_rows() < 2 {
        return Err(Error::Empty("offline training needs at least two rows".into()));
    }
    let start = Instant::now();
    let mut learner = Learner::new(cfg, train.n_features())?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.n_rows()).collect();
        rng::shuffle(&mut rng::named(cfg.seed, "shuffle", epoch as u64), &mut order);
        let mut total = 0.0;
        let bs = batches(&order, cfg.batch_size);
        for rows in &bs {
            let loss = learner.ce_step(train, rows)?;
            ensure_finite_loss(loss, cfg.regime, learner.opt.step_count)?;
            total += loss;
        }
        let val_loss = learner.eval_ce(val)?;
        ensure_finite_loss(val_loss, cfg.regime, learner.opt.step_count)?;
        curve.push(LossPoint {
            step: learner.opt.step_count,
            train_loss: total / bs.len() as f64,
            val_loss: Some(val_loss),
        });
    }
    Ok(learner.finish(cfg, curve, None, start))
}

/// Rows in their original order, never shuffled, one update per batch,
/// stopping at `max_online_updates` or when the stream runs dry.
pub fn train_online(stream: &LabeledDataset, val: Option<&LabeledDataset>, cfg: &TrainConfig) -> Result<RunResult> {
    require_regime(cfg, &[Regime::Online])?;
    if stream.n_rows() < 2 {
        return Err(Error::Empty("online stream needs at least two rows".into()));
    }
    let start = Instant::now();
    let mut learner = Learner::new(cfg, stream.n_features())?;
    let order: Vec<usize> = (0..stream.n_rows()).collect();
    let mut curve = Vec::new();
    for rows in batches(&order, cfg.batch_size).into_iter().take(cfg.max_online_updates) {
        let loss = learner.ce_step(stream, rows)?;
        ensure_finite_loss(loss, cfg.regime, learner.opt.step_count)?;
        let val_loss = val.map(|v| learner.eval_ce(v)).transpose()?;
        curve.push(LossPoint { step: learner.opt.step_count, train_loss: loss, val_loss });
    }
    Ok(learner.finish(cfg, curve, None, start))
}

fn episode_step(learner: &mut Learner, ep: &Episode, kind: LossKind, dual: &DualSpaceConfig) -> Result<f64> {
    let x = ep.stacked_inputs();
    let m = ep.support_x.nrows();
    let seed = learner.dropout_seed();
    let (emb, trace) = nn::forward_train(&mut learner.params, &learner.net, &x, seed)?;
    let support = emb.slice(s![..m, ..]).to_owned();
    let query = emb.slice(s![m.., ..]).to_owned();
    let obj = fewshot::episode_objective(&support, &ep.support_y, &query, &ep.query_y, 2, kind, dual)?;
    let upstream =
        ndarray::concatenate(Axis(0), &[obj.grad_support.view(), obj.grad_query.view()]).expect("matching widths");
    let grads = nn::backward(&learner.params, &trace, &upstream)?;
    nn::adam_step(&mut learner.params, &grads, &mut learner.opt)?;
    Ok(obj.output.mean)
}

fn episode_eval_loss(learner: &Learner, ep: &Episode, kind: LossKind, dual: &DualSpaceConfig) -> Result<f64> {
    let support = nn::forward_eval(&learner.params, &learner.net, &ep.support_x)?;
    let query = nn::forward_eval(&learner.params, &learner.net, &ep.query_x)?;
    Ok(fewshot::episode_objective(&support, &ep.support_y, &query, &ep.query_y, 2, kind, dual)?.output.mean)
}

/// Prototypes from every training row, embedded in eval mode.
pub fn freeze_prototypes(net: &NetConfig, params: &ModelParams, train: &LabeledDataset) -> Result<Prototypes> {
    let emb = nn::forward_eval(params, net, &train.features)?;
    let labels: Vec<usize> = train.labels.iter().map(|&l| l as usize).collect();
    fewshot::compute_prototypes(&emb, &labels, 2)
}

/// Episodic training. Each episode runs one train-mode forward over
/// support ∪ query; gradients reach the support rows through the prototype
/// means. Loss curve values are per-query means.
pub fn train_prototypical(
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &TrainConfig,
    kind: LossKind,
) -> Result<RunResult> {
    require_regime(cfg, &[Regime::Proto, Regime::Dspace])?;
    let need = cfg.k_support + 1;
    for (name, ds) in [("training", train), ("validation", val)] {
        let counts = ds.class_counts();
        if counts.iter().any(|&c| c < need) {
            return Err(Error::Insufficient(format!(
                "{name} classes {counts:?} too small for {} support rows plus a query",
                cfg.k_support
            )));
        }
    }
    let start = Instant::now();
    let mut learner = Learner::new(cfg, train.n_features())?;
    let val_eps: Vec<Episode> = (0..cfg.val_episodes)
        .map(|i| {
            fewshot::sample_episode(val, cfg.k_support, cfg.k_query, rng::derive(cfg.seed, "val-episode", i as u64))
        })
        .collect::<Result<_>>()?;

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut episode_index = 0u64;
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for _ in 0..cfg.episodes_per_epoch {
            let seed = rng::derive(cfg.seed, "episode", episode_index);
            episode_index += 1;
            let ep = fewshot::sample_episode(train, cfg.k_support, cfg.k_query, seed)?;
            let loss = episode_step(&mut learner, &ep, kind, &cfg.dual_space)?;
            ensure_finite_loss(loss, cfg.regime, learner.opt.step_count)?;
            total += loss;
        }
        let val_loss = if val_eps.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for ep in &val_eps {
                sum += episode_eval_loss(&learner, ep, kind, &cfg.dual_space)?;
            }
            let v = sum / val_eps.len() as f64;
            ensure_finite_loss(v, cfg.regime, learner.opt.step_count)?;
            Some(v)
        };
        curve.push(LossPoint {
            step: learner.opt.step_count,
            train_loss: total / cfg.episodes_per_epoch as f64,
            val_loss,
        });
    }
    let protos = freeze_prototypes(&learner.net, &learner.params, train)?;
    Ok(learner.finish(cfg, curve, Some(protos), start))
}

/// Runs whichever regime `cfg` names.
pub fn train(train: &LabeledDataset, val: &LabeledDataset, cfg: &TrainConfig) -> Result<RunResult> {
    match cfg.regime {
        Regime::Offline => train_offline(train, val, cfg),
        Regime::Online => train_online(train, Some(val), cfg),
        Regime::Proto => train_prototypical(train, val, cfg, LossKind::Traditional),
        Regime::Dspace => train_prototypical(train, val, cfg, LossKind::DualSpace),
    }
}
