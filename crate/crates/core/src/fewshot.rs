//! Episodic prototypical machinery: episode sampling, class prototypes, the
//! plain / row-normalized Euclidean and cosine distance kernels, their
//! weighted combination, softmax-over-negative-distance losses and
//! nearest-prototype estimation.
//!
//! Every kernel has a matching backward function so losses can be pushed
//! back to query and support embeddings.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flowdata::LabeledDataset;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support_x: Array2<f64>,
    pub support_y: Vec<usize>,
    pub query_x: Array2<f64>,
    pub query_y: Vec<usize>,
    /// Source row of every support / query sample.
    pub support_rows: Vec<usize>,
    pub query_rows: Vec<usize>,
}

impl Episode {
    /// Support rows stacked over query rows, the layout used for the single
    /// train-mode forward of an episode.
    pub fn stacked_inputs(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(0), &[self.support_x.view(), self.query_x.view()])
            .expect("support and query share the feature width")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    pub vectors: Array2<f64>,
    pub class_ids: Vec<usize>,
}

impl Prototypes {
    pub fn n_classes(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::preprocess::save_json(&PrototypeDoc::from(self), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: PrototypeDoc = crate::preprocess::load_json(path)?;
        doc.try_into()
    }
}

/// On-disk layout: class ids plus one plain float array per class.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PrototypeDoc {
    class_ids: Vec<usize>,
    vectors: Vec<Vec<f64>>,
}

impl From<&Prototypes> for PrototypeDoc {
    fn from(p: &Prototypes) -> Self {
        PrototypeDoc { class_ids: p.class_ids.clone(), vectors: p.vectors.outer_iter().map(|r| r.to_vec()).collect() }
    }
}

impl TryFrom<PrototypeDoc> for Prototypes {
    type Error = Error;

    fn try_from(doc: PrototypeDoc) -> Result<Self> {
        let dim = doc.vectors.first().map_or(0, Vec::len);
        if doc.vectors.len() != doc.class_ids.len() || doc.vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Decode("prototype rows are ragged or unlabeled".into()));
        }
        let flat: Vec<f64> = doc.vectors.concat();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prototype vector".into()));
        }
        Ok(Prototypes {
            vectors: Array2::from_shape_vec((doc.class_ids.len(), dim), flat)
                .map_err(|e| Error::Decode(e.to_string()))?,
            class_ids: doc.class_ids,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    EuclidPlain,
    EuclidNormalized,
    Cosine,
    Combined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: Array2<f64>,
    pub kind: DistanceKind,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualSpaceConfig {
    /// Weight of the normalized Euclidean term; the cosine term gets `1 - alpha`.
    pub alpha: f64,
    pub norm_eps: f64,
}

impl Default for DualSpaceConfig {
    fn default() -> Self {
        DualSpaceConfig { alpha: 0.5, norm_eps: 1e-12 }
    }
}

impl DualSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if !(self.norm_eps >= 0.0) {
            return Err(Error::Config("norm_eps must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax over negative plain Euclidean distances.
    Traditional,
    /// Softmax over negative combined (normalized Euclidean + cosine) distances.
    DualSpace,
}

/// Sampled per class in ascending class order: `k_support` rows without
/// replacement, then `k_query` rows from the remainder (with replacement only
/// when the remainder is too small).
pub fn sample_episode(train: &LabeledDataset, k_support: usize, k_query: usize, seed: u64) -> Result<Episode> {
    if k_support == 0 || k_query == 0 {
        return Err(Error::Config("episode shot counts must be positive".into()));
    }
    let mut rng = rng::stream(seed);
    let mut support_rows = Vec::new();
    let mut support_y = Vec::new();
    let mut query_rows = Vec::new();
    let mut query_y = Vec::new();
    for (class, mut idx) in train.class_indices().into_iter().enumerate() {
        if idx.len() < k_support {
            return Err(Error::Insufficient(format!(
                "class {class} has {} rows, episode needs {k_support} support rows",
                idx.len()
            )));
        }
        rng::shuffle(&mut rng, &mut idx);
        let (support, rest) = idx.split_at(k_support);
        if rest.is_empty() {
            return Err(Error::Insufficient(format!("class {class} has no rows left for the query set")));
        }
        support_rows.extend_from_slice(support);
        support_y.extend(std::iter::repeat_n(class, k_support));
        if rest.len() >= k_query {
            query_rows.extend_from_slice(&rest[..k_query]);
        } else {
            query_rows.extend((0..k_query).map(|_| rest[rng.gen_range(0..rest.len())]));
        }
        query_y.extend(std::iter::repeat_n(class, k_query));
    }
    Ok(Episode {
        support_x: train.features.select(Axis(0), &support_rows),
        support_y,
        query_x: train.features.select(Axis(0), &query_rows),
        query_y,
        support_rows,
        query_rows,
    })
}

/// Class means for classes `0..n_classes`.
pub fn compute_prototypes(embeddings: &Array2<f64>, labels: &[usize], n_classes: usize) -> Result<Prototypes> {
    if labels.len() != embeddings.nrows() {
        return Err(Error::Shape(format!("{} labels for {} embeddings", labels.len(), embeddings.nrows())));
    }
    let mut sums = Array2::<f64>::zeros((n_classes, embeddings.ncols()));
    let mut counts = vec![0usize; n_classes];
    for (row, &y) in embeddings.outer_iter().zip(labels) {
        if y >= n_classes {
            return Err(Error::LabelOutOfRange { label: y, classes: n_classes });
        }
        let mut acc = sums.row_mut(y);
        acc += &row;
        counts[y] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Insufficient(format!("class {missing} has no support embeddings")));
    }
    for (mut row, &c) in sums.outer_iter_mut().zip(&counts) {
        row /= c as f64;
    }
    Ok(Prototypes { vectors: sums, class_ids: (0..n_classes).collect() })
}

fn check_dims(queries: &Array2<f64>, protos: &Prototypes) -> Result<()> {
    if queries.ncols() != protos.vectors.ncols() {
        return Err(Error::Shape(format!(
            "queries have {} dims, prototypes {}",
            queries.ncols(),
            protos.vectors.ncols()
        )));
    }
    if protos.n_classes() == 0 {
        return Err(Error::Empty("no prototypes".into()));
    }
    Ok(())
}

fn l2(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn euclid(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `‖q_i − p_j‖₂`.
pub fn plain_euclidean(queries: &Array2<f64>, protos: &Prototypes) -> Result<DistanceMatrix> {
    check_dims(queries, protos)?;
    let p = &protos.vectors;
    let values = Array2::from_shape_fn((queries.nrows(), p.nrows()), |(i, j)| euclid(queries.row(i), p.row(j)));
    Ok(DistanceMatrix { values, kind: DistanceKind::EuclidPlain, alpha: None })
}

/// `‖q_i − p_j‖₂ / (Σ_k ‖q_i − p_k‖₂ + eps)`; rows are stochastic.
pub fn normalized_euclidean(queries: &Array2<f64>, protos: &Prototypes, eps: f64) -> Result<DistanceMatrix> {
    let mut d = plain_euclidean(queries, protos)?;
    for mut row in d.values.outer_iter_mut() {
        let denom = row.sum() + eps;
        row.mapv_inplace(|v| v / denom);
    }
    d.kind = DistanceKind::EuclidNormalized;
    Ok(d)
}

/// `1 − q_i·p_j / (‖q_i‖₂ ‖p_j‖₂ + eps)`.
pub fn cosine_distances(queries: &Array2<f64>, protos: &Prototypes, eps: f64) -> Result<DistanceMatrix> {
    check_dims(queries, protos)?;
    let p = &protos.vectors;
    let q_norm: Vec<f64> = queries.outer_iter().map(l2).collect();
    let p_norm: Vec<f64> = p.outer_iter().map(l2).collect();
    let values = Array2::from_shape_fn((queries.nrows(), p.nrows()), |(i, j)| {
        1.0 - queries.row(i).dot(&p.row(j)) / (q_norm[i] * p_norm[j] + eps)
    });
    Ok(DistanceMatrix { values, kind: DistanceKind::Cosine, alpha: None })
}

/// `alpha * d_e + (1 − alpha) * d_c`.
pub fn combined_distances(d_e: &DistanceMatrix, d_c: &DistanceMatrix, cfg: &DualSpaceConfig) -> Result<DistanceMatrix> {
    cfg.validate()?;
    if d_e.kind != DistanceKind::EuclidNormalized || d_c.kind != DistanceKind::Cosine {
        return Err(Error::Shape(format!(
            "combined distance needs (euclid_normalized, cosine), got ({:?}, {:?})",
            d_e.kind, d_c.kind
        )));
    }
    if d_e.values.dim() != d_c.values.dim() {
        return Err(Error::Shape("distance matrices differ in shape".into()));
    }
    let a = cfg.alpha;
    let values = if a == 1.0 {
        d_e.values.clone()
    } else if a == 0.0 {
        d_c.values.clone()
    } else {
        &d_e.values * a + &d_c.values * (1.0 - a)
    };
    Ok(DistanceMatrix { values, kind: DistanceKind::Combined, alpha: Some(a) })
}

pub fn dual_space_distances(
    queries: &Array2<f64>,
    protos: &Prototypes,
    cfg: &DualSpaceConfig,
) -> Result<DistanceMatrix> {
    let d_e = normalized_euclidean(queries, protos, cfg.norm_eps)?;
    let d_c = cosine_distances(queries, protos, cfg.norm_eps)?;
    combined_distances(&d_e, &d_c, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Summed over queries; this is what the optimizer minimizes.
    pub loss: f64,
    /// Per-query mean, for logging.
    pub mean: f64,
    /// `∂loss/∂D`.
    pub grad: Array2<f64>,
}

/// `−Σ_i log softmax(−D_i)[y_i]` with gradient `onehot(y_i) − softmax(−D_i)`.
pub fn softmax_nll(distances: &Array2<f64>, labels: &[usize]) -> Result<LossOutput> {
    let (n, c) = distances.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::Empty("loss over zero queries".into()));
    }
    let mut grad = Array2::zeros((n, c));
    let mut loss = 0.0;
    for (i, (row, &y)) in distances.outer_iter().zip(labels).enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        let max_neg = row.iter().map(|&d| -d).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&d| (-d - max_neg).exp()).sum();
        let lse = max_neg + z.ln();
        loss += row[y] + lse;
        for j in 0..c {
            let soft = (-row[j] - lse).exp();
            grad[[i, j]] = f64::from(u8::from(j == y)) - soft;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("episode loss".into()));
    }
    Ok(LossOutput { loss, mean: loss / n as f64, grad })
}

pub fn dual_space_loss(d_combined: &DistanceMatrix, query_y: &[usize]) -> Result<LossOutput> {
    if d_combined.kind != DistanceKind::Combined {
        return Err(Error::Shape(format!("dual-space loss needs combined distances, got {:?}", d_combined.kind)));
    }
    softmax_nll(&d_combined.values, query_y)
}

pub fn prototypical_loss(queries: &Array2<f64>, protos: &Prototypes, query_y: &[usize]) -> Result<LossOutput> {
    softmax_nll(&plain_euclidean(queries, protos)?.values, query_y)
}

/// Given `∂L/∂d` for plain distances, returns `(∂L/∂q, ∂L/∂p)`.
/// Coincident points contribute zero (subgradient).
pub fn plain_euclidean_backward(
    queries: &Array2<f64>,
    protos: &Prototypes,
    grad_d: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let p = &protos.vectors;
    let mut gq = Array2::zeros(queries.raw_dim());
    let mut gp = Array2::zeros(p.raw_dim());
    for i in 0..queries.nrows() {
        for j in 0..p.nrows() {
            let diff = &queries.row(i) - &p.row(j);
            let dist = l2(diff.view());
            if dist == 0.0 {
                continue;
            }
            let scaled = diff * (grad_d[[i, j]] / dist);
            let mut qi = gq.row_mut(i);
            qi += &scaled;
            let mut pj = gp.row_mut(j);
            pj -= &scaled;
        }
    }
    (gq, gp)
}

pub fn normalized_euclidean_backward(
    queries: &Array2<f64>,
    protos: &Prototypes,
    eps: f64,
    grad_e: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let plain = plain_euclidean(queries, protos)?.values;
    let mut grad_d = Array2::zeros(plain.raw_dim());
    for i in 0..plain.nrows() {
        let denom = plain.row(i).sum() + eps;
        let coupling = grad_e.row(i).dot(&plain.row(i)) / (denom * denom);
        for k in 0..plain.ncols() {
            grad_d[[i, k]] = grad_e[[i, k]] / denom - coupling;
        }
    }
    Ok(plain_euclidean_backward(queries, protos, &grad_d))
}

pub fn cosine_backward(
    queries: &Array2<f64>,
    protos: &Prototypes,
    eps: f64,
    grad_c: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let p = &protos.vectors;
    let q_norm: Vec<f64> = queries.outer_iter().map(l2).collect();
    let p_norm: Vec<f64> = p.outer_iter().map(l2).collect();
    let mut gq = Array2::zeros(queries.raw_dim());
    let mut gp = Array2::zeros(p.raw_dim());
    for i in 0..queries.nrows() {
        for j in 0..p.nrows() {
            let g = grad_c[[i, j]];
            if g == 0.0 {
                continue;
            }
            let (q, pv) = (queries.row(i), p.row(j));
            let (nq, np) = (q_norm[i], p_norm[j]);
            let u = q.dot(&pv);
            let r = nq * np + eps;
            // C = 1 - u / r with r = |q||p| + eps
            let ratio = u / (r * r);
            let mut qi = gq.row_mut(i);
            qi.scaled_add(-g / r, &pv);
            if nq > 0.0 {
                qi.scaled_add(g * ratio * np / nq, &q);
            }
            let mut pj = gp.row_mut(j);
            pj.scaled_add(-g / r, &q);
            if np > 0.0 {
                pj.scaled_add(g * ratio * nq / np, &pv);
            }
        }
    }
    (gq, gp)
}

/// Loss of one episode in embedding space, with gradients pushed back to the
/// support embeddings (through the prototype means) and query embeddings.
#[derive(Debug, Clone)]
pub struct EpisodeObjective {
    pub output: LossOutput,
    pub prototypes: Prototypes,
    pub grad_support: Array2<f64>,
    pub grad_query: Array2<f64>,
}

pub fn episode_objective(
    support_emb: &Array2<f64>,
    support_y: &[usize],
    query_emb: &Array2<f64>,
    query_y: &[usize],
    n_classes: usize,
    kind: LossKind,
    cfg: &DualSpaceConfig,
) -> Result<EpisodeObjective> {
    let protos = compute_prototypes(support_emb, support_y, n_classes)?;
    let (output, grad_query, grad_protos) = match kind {
        LossKind::Traditional => {
            let out = prototypical_loss(query_emb, &protos, query_y)?;
            let (gq, gp) = plain_euclidean_backward(query_emb, &protos, &out.grad);
            (out, gq, gp)
        }
        LossKind::DualSpace => {
            let d = dual_space_distances(query_emb, &protos, cfg)?;
            let out = dual_space_loss(&d, query_y)?;
            let (mut gq, mut gp) =
                normalized_euclidean_backward(query_emb, &protos, cfg.norm_eps, &(&out.grad * cfg.alpha))?;
            let (cq, cp) = cosine_backward(query_emb, &protos, cfg.norm_eps, &(&out.grad * (1.0 - cfg.alpha)));
            gq += &cq;
            gp += &cp;
            (out, gq, gp)
        }
    };
    let mut counts = vec![0usize; n_classes];
    for &y in support_y {
        counts[y] += 1;
    }
    let mut grad_support = Array2::zeros(support_emb.raw_dim());
    for (mut row, &y) in grad_support.outer_iter_mut().zip(support_y) {
        row.assign(&(&grad_protos.row(y) / counts[y] as f64));
    }
    Ok(EpisodeObjective { output, prototypes: protos, grad_support, grad_query })
}

fn argmin_row(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = j;
        }
    }
    best
}

/// Nearest prototype under the combined distance; ties go to the lowest class id.
pub fn estimate(embeddings: &Array2<f64>, protos: &Prototypes, cfg: &DualSpaceConfig) -> Result<Vec<usize>> {
    estimate_with(embeddings, protos, cfg, Exec::Sequential)
}

/// [`estimate`] over row chunks under the given execution policy.
pub fn estimate_with(
    embeddings: &Array2<f64>,
    protos: &Prototypes,
    cfg: &DualSpaceConfig,
    exec: Exec,
) -> Result<Vec<usize>> {
    check_dims(embeddings, protos)?;
    cfg.validate()?;
    const CHUNK: usize = 1024;
    let n = embeddings.nrows();
    let chunks = n.div_ceil(CHUNK);
    let parts = exec.try_map_range(chunks, |c| {
        let rows = embeddings.slice(ndarray::s![c * CHUNK..((c + 1) * CHUNK).min(n), ..]).to_owned();
        let d = dual_space_distances(&rows, protos, cfg)?;
        Ok::<_, Error>(d.values.outer_iter().map(|r| protos.class_ids[argmin_row(r)]).collect::<Vec<_>>())
    })?;
    Ok(parts.concat())
}

/// Row-wise minimum index of a distance matrix (lowest index on ties).
pub fn argmin_rows(d: &Array2<f64>) -> Array1<usize> {
    d.outer_iter().map(argmin_row).collect()
}
