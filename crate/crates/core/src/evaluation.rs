//! Confusion metrics, the multi-run benchmark matrix and its reports.
//!
//! The positive class is DDoS (label 1). Metrics with a zero denominator are
//! reported as 0 and named in [`MetricsReport::undefined`].

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flowdata::{self, LabeledDataset};
use crate::rng;
use crate::training::{self, ModelKind, Regime, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(predicted: &[u8], actual: &[u8]) -> Result<ConfusionCounts> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predicted.len(), actual.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => return Err(Error::LabelOutOfRange { label: usize::from(p.max(a)), classes: 2 }),
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1,
    Precision,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Accuracy, Metric::F1, Metric::Precision, Metric::Recall];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Metric::Accuracy => "Accuracy",
            Metric::F1 => "F-1",
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Metrics whose denominator was zero and were set to 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<Metric>,
}

impl MetricsReport {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::F1 => self.f1,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, m) in Metric::ALL.into_iter().enumerate() {
            if i > 0 {
                f.write_str("  ")?;
            }
            write!(f, "{} {:.2}", m.name(), 100.0 * self.get(m))?;
        }
        Ok(())
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<MetricsReport> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Empty("metrics of zero samples".into()));
    }
    let mut undefined = Vec::new();
    let mut ratio = |num: u64, den: u64, m: Metric| {
        if den == 0 {
            undefined.push(m);
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp, Metric::Precision);
    let recall = ratio(c.tp, c.tp + c.fn_, Metric::Recall);
    let f1 = if precision + recall == 0.0 {
        undefined.push(Metric::F1);
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsReport { accuracy: (c.tp + c.tn) as f64 / total as f64, f1, precision, recall, undefined })
}

pub fn evaluate(predicted: &[u8], actual: &[u8]) -> Result<MetricsReport> {
    metrics(&confusion(predicted, actual)?)
}

/// Training-set size of a benchmark cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TrainSize {
    Full,
    /// Balanced subsample of this many rows.
    Reduced(usize),
}

impl fmt::Display for TrainSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainSize::Full => f.write_str("full"),
            TrainSize::Reduced(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for TrainSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(TrainSize::Full);
        }
        s.parse()
            .map(TrainSize::Reduced)
            .map_err(|_| Error::Config(format!("train size {s:?} is neither \"full\" nor a count")))
    }
}

impl From<TrainSize> for String {
    fn from(t: TrainSize) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for TrainSize {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub model: ModelKind,
    pub regime: Regime,
    pub train_size: TrainSize,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.model.name(), self.regime.name(), self.train_size)
    }
}

/// One grid cell: a config template (its seed is replaced per run) and the
/// training-set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub config: TrainConfig,
    pub train_size: TrainSize,
}

impl GridEntry {
    pub fn key(&self) -> CellKey {
        CellKey { model: self.config.model, regime: self.config.regime, train_size: self.train_size }
    }
}

/// Every model × regime × size combination over a shared template.
pub fn build_grid(template: &TrainConfig, models: &[ModelKind], sizes: &[TrainSize]) -> Vec<GridEntry> {
    let mut out = Vec::new();
    for &train_size in sizes {
        for &model in models {
            for regime in Regime::ALL {
                out.push(GridEntry { config: TrainConfig { model, regime, ..template.clone() }, train_size });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation. The mean is accumulated as offsets
/// from the first value so identical inputs give a std of exactly zero.
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { mean: f64::NAN, std: f64::NAN };
    }
    let x0 = values[0];
    let mean = x0 + values.iter().map(|v| v - x0).sum::<f64>() / n as f64;
    let std =
        if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    Summary { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    #[serde(flatten)]
    pub key: CellKey,
    pub seeds: Vec<u64>,
    pub runs: Vec<MetricsReport>,
}

impl BenchCell {
    pub fn summary(&self, m: Metric) -> Summary {
        summarize(&self.runs.iter().map(|r| r.get(m)).collect::<Vec<_>>())
    }

    pub fn summaries(&self) -> BTreeMap<Metric, Summary> {
        Metric::ALL.into_iter().map(|m| (m, self.summary(m))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMatrix {
    pub n_runs: usize,
    pub base_seed: u64,
    pub seed_stride: u64,
    /// Model order for reports, as configured.
    pub models: Vec<ModelKind>,
    pub cells: Vec<BenchCell>,
}

impl BenchmarkMatrix {
    pub fn cell(&self, key: &CellKey) -> Option<&BenchCell> {
        self.cells.iter().find(|c| &c.key == key)
    }

    pub fn check_complete(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Empty("benchmark matrix has no cells".into()));
        }
        for c in &self.cells {
            if c.runs.len() != self.n_runs {
                return Err(Error::Insufficient(format!(
                    "cell {} has {} of {} runs",
                    c.key,
                    c.runs.len(),
                    self.n_runs
                )));
            }
        }
        Ok(())
    }

    /// Cells in report order: size, then model as configured, then regime.
    fn ordered(&self) -> Vec<&BenchCell> {
        let model_rank = |m: ModelKind| self.models.iter().position(|&x| x == m).unwrap_or(usize::MAX);
        let mut cells: Vec<&BenchCell> = self.cells.iter().collect();
        cells.sort_by_key(|c| (c.key.train_size, model_rank(c.key.model), c.key.model, c.key.regime));
        cells
    }
}

/// Train, validation and test splits shared by every run.
#[derive(Debug, Clone, Copy)]
pub struct BenchData<'a> {
    pub train: &'a LabeledDataset,
    pub val: &'a LabeledDataset,
    pub test: &'a LabeledDataset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub n_runs: usize,
    pub base_seed: u64,
    /// Run `i` uses seed `base_seed + i * seed_stride`; 0 forces one seed.
    pub seed_stride: u64,
    pub exec: Exec,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { n_runs: 30, base_seed: 0, seed_stride: 1, exec: Exec::default() }
    }
}

/// Trains and tests one configuration on one seed.
pub fn run_cell(data: BenchData<'_>, entry: &GridEntry, seed: u64) -> Result<MetricsReport> {
    let cfg = TrainConfig { seed, ..entry.config.clone() };
    let reduced;
    let train = match entry.train_size {
        TrainSize::Full => data.train,
        TrainSize::Reduced(n) => {
            reduced = flowdata::subsample_reduced(data.train, n, rng::derive(seed, "subsample", 0))?;
            &reduced
        }
    };
    let run = training::train(train, data.val, &cfg)?;
    evaluate(&run.predict(&data.test.features)?, &data.test.labels)
}

/// Runs every grid entry `n_runs` times. Runs are independent and may
/// execute concurrently; results are placed by (cell, run index).
pub fn run_benchmark(data: BenchData<'_>, grid: &[GridEntry], opts: &BenchOptions) -> Result<BenchmarkMatrix> {
    if grid.is_empty() {
        return Err(Error::Config("benchmark grid is empty".into()));
    }
    if opts.n_runs < 2 {
        return Err(Error::Config(format!("n_runs {} must be at least 2", opts.n_runs)));
    }
    for (i, a) in grid.iter().enumerate() {
        a.config.validate()?;
        if grid[..i].iter().any(|b| b.key() == a.key()) {
            return Err(Error::Config(format!("duplicate grid cell {}", a.key())));
        }
    }
    let seed_of = |i: usize| opts.base_seed.wrapping_add((i as u64).wrapping_mul(opts.seed_stride));
    let n = opts.n_runs;
    let reports = opts.exec.try_map_range(grid.len() * n, |j| {
        let (entry, run) = (&grid[j / n], j % n);
        run_cell(data, entry, seed_of(run)).map_err(|e| Error::Run {
            cell: entry.key().to_string(),
            run,
            source: Box::new(e),
        })
    })?;
    let mut models = Vec::new();
    for e in grid {
        if !models.contains(&e.config.model) {
            models.push(e.config.model);
        }
    }
    let cells = grid
        .iter()
        .zip(reports.chunks(n))
        .map(|(e, runs)| BenchCell { key: e.key(), seeds: (0..n).map(seed_of).collect(), runs: runs.to_vec() })
        .collect();
    Ok(BenchmarkMatrix { n_runs: n, base_seed: opts.base_seed, seed_stride: opts.seed_stride, models, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

#[derive(Serialize)]
struct JsonCell<'a> {
    #[serde(flatten)]
    key: CellKey,
    seeds: &'a [u64],
    summary: BTreeMap<Metric, Summary>,
    runs: &'a [MetricsReport],
}

#[derive(Serialize)]
struct JsonReport<'a> {
    n_runs: usize,
    base_seed: u64,
    seed_stride: u64,
    cells: Vec<JsonCell<'a>>,
}

pub fn emit_report(m: &BenchmarkMatrix, format: ReportFormat) -> Result<String> {
    m.check_complete()?;
    let cells = m.ordered();
    match format {
        ReportFormat::Markdown => {
            let mut out = String::new();
            let mut current = None;
            for c in cells {
                if current != Some(c.key.train_size) {
                    if current.is_some() {
                        out.push('\n');
                    }
                    current = Some(c.key.train_size);
                    let _ = writeln!(out, "### Training size: {} ({} runs, rates in %)\n", c.key.train_size, m.n_runs);
                    out.push_str("| Model | Regime |");
                    for metric in Metric::ALL {
                        let _ = write!(out, " {} |", metric.title());
                    }
                    out.push_str("\n|---|---|---|---|---|---|\n");
                }
                let _ = write!(out, "| {} | {} |", c.key.model.name(), c.key.regime.name());
                for metric in Metric::ALL {
                    let s = c.summary(metric);
                    let _ = write!(out, " {:.2} ± {:.2} |", 100.0 * s.mean, 100.0 * s.std);
                }
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["model", "regime", "train_size", "metric", "mean", "std"])?;
            for c in cells {
                for metric in Metric::ALL {
                    let s = c.summary(metric);
                    w.write_record([
                        c.key.model.name().to_string(),
                        c.key.regime.name().to_string(),
                        c.key.train_size.to_string(),
                        metric.name().to_string(),
                        s.mean.to_string(),
                        s.std.to_string(),
                    ])?;
                }
            }
            let bytes = w.into_inner().map_err(|e| Error::Decode(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Decode(e.to_string()))
        }
        ReportFormat::Json => {
            let report = JsonReport {
                n_runs: m.n_runs,
                base_seed: m.base_seed,
                seed_stride: m.seed_stride,
                cells: cells
                    .into_iter()
                    .map(|c| JsonCell { key: c.key, seeds: &c.seeds, summary: c.summaries(), runs: &c.runs })
                    .collect(),
            };
            Ok(serde_json::to_string_pretty(&report)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_gaussian_blobs, BlobSpec};
    use proptest::prelude::*;

    fn report(accuracy: f64, f1: f64, precision: f64, recall: f64) -> MetricsReport {
        MetricsReport { accuracy, f1, precision, recall, undefined: vec![] }
    }

    fn matrix(cells: Vec<(CellKey, Vec<MetricsReport>)>, n_runs: usize) -> BenchmarkMatrix {
        BenchmarkMatrix {
            n_runs,
            base_seed: 0,
            seed_stride: 1,
            models: vec![ModelKind::Mlp, ModelKind::MlpAttention],
            cells: cells
                .into_iter()
                .map(|(key, runs)| BenchCell { key, seeds: (0..runs.len() as u64).collect(), runs })
                .collect(),
        }
    }

    fn key(model: ModelKind, regime: Regime) -> CellKey {
        CellKey { model, regime, train_size: TrainSize::Reduced(100) }
    }

    #[test]
    fn confusion_enumerations() {
        let c = confusion(&[1, 1, 0, 0], &[1, 0, 0, 1]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
        let c = confusion(&[0; 5], &[1; 5]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 5 });
        let c = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert!(matches!(confusion(&[1], &[1, 0]), Err(Error::Shape(_))));
        assert!(matches!(confusion(&[2], &[1]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn metric_arithmetic() {
        let r = metrics(&ConfusionCounts { tp: 3, fp: 1, tn: 5, fn_: 1 }).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (0.8, 0.75, 0.75, 0.75));
        let r = evaluate(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        let r = metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 4, fn_: 2 }).unwrap();
        assert_eq!((r.precision, r.f1), (0.0, 0.0));
        assert_eq!(r.undefined, vec![Metric::Precision, Metric::F1]);
        assert!(metrics(&ConfusionCounts::default()).is_err());
    }

    proptest! {
        #[test]
        fn accuracy_is_one_minus_hamming_and_permutation_invariant(
            pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..200),
            rot in 0usize..200,
        ) {
            let (p, a): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let r = evaluate(&p, &a).unwrap();
            let errors = p.iter().zip(&a).filter(|(x, y)| x != y).count();
            prop_assert_eq!(r.accuracy, (p.len() - errors) as f64 / p.len() as f64);
            let k = rot % p.len();
            let (mut p2, mut a2) = (p.clone(), a.clone());
            p2.rotate_left(k);
            a2.rotate_left(k);
            p2.reverse();
            a2.reverse();
            prop_assert_eq!(evaluate(&p2, &a2).unwrap(), r);
        }

        #[test]
        fn summary_matches_two_pass_reference(xs in proptest::collection::vec(0.0f64..1.0, 2..40)) {
            let s = summarize(&xs);
            let n = xs.len() as f64;
            let mean: f64 = xs.iter().sum::<f64>() / n;
            let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            prop_assert!((s.mean - mean).abs() < 1e-12);
            prop_assert!((s.std - var.sqrt()).abs() < 1e-12);
        }

        #[test]
        fn identical_values_have_zero_std(x in 0.0f64..1.0, n in 2usize..40) {
            let s = summarize(&vec![x; n]);
            prop_assert_eq!(s.std, 0.0);
            prop_assert_eq!(s.mean, x);
        }
    }

    #[test]
    fn train_size_round_trips() {
        for t in [TrainSize::Full, TrainSize::Reduced(100)] {
            assert_eq!(t.to_string().parse::<TrainSize>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(serde_json::from_str::<TrainSize>(&json).unwrap(), t);
        }
        assert!("some".parse::<TrainSize>().is_err());
    }

    #[test]
    fn markdown_prints_percentages() {
        let m = matrix(
            vec![(key(ModelKind::MlpAttention, Regime::Dspace), vec![report(0.9485, 0.9471, 0.9730, 0.9231); 2])],
            2,
        );
        let md = emit_report(&m, ReportFormat::Markdown).unwrap();
        let row = md.lines().find(|l| l.starts_with("| mlp_attention")).unwrap();
        assert!(row.contains("| 94.85 ± 0.00 | 94.71 ± 0.00 | 97.30 ± 0.00 | 92.31 ± 0.00 |"), "{row}");
        assert_eq!(md.lines().filter(|l| l.starts_with("| mlp")).count(), 1);
    }

    #[test]
    fn report_ordering_and_consistency() {
        let runs = |a: f64| vec![report(a, a, a, a), report(a / 2.0, a, a, a)];
        let m = matrix(
            vec![
                (key(ModelKind::MlpAttention, Regime::Offline), runs(0.3)),
                (key(ModelKind::Mlp, Regime::Dspace), runs(0.9)),
                (key(ModelKind::Mlp, Regime::Offline), runs(0.7)),
            ],
            2,
        );
        let csv_text = emit_report(&m, ReportFormat::Csv).unwrap();
        let mut lines = csv_text.lines();
        assert_eq!(lines.next(), Some("model,regime,train_size,metric,mean,std"));
        let order: Vec<String> =
            lines.clone().step_by(4).map(|l| l.split(',').take(2).collect::<Vec<_>>().join("/")).collect();
        assert_eq!(order, ["mlp/offline", "mlp/dspace", "mlp_attention/offline"]);

        let json: serde_json::Value = serde_json::from_str(&emit_report(&m, ReportFormat::Json).unwrap()).unwrap();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let s = &json["cells"][i / 4]["summary"][f[3]];
            assert_eq!(s["mean"].as_f64().unwrap(), f[4].parse::<f64>().unwrap());
            assert_eq!(s["std"].as_f64().unwrap(), f[5].parse::<f64>().unwrap());
        }
    }

    #[test]
    fn incomplete_matrix_is_rejected() {
        let m = matrix(vec![(key(ModelKind::Mlp, Regime::Proto), vec![report(1.0, 1.0, 1.0, 1.0)])], 2);
        assert!(emit_report(&m, ReportFormat::Csv).is_err());
    }

    #[test]
    fn grid_shape() {
        let g =
            build_grid(&TrainConfig::default(), &[ModelKind::Mlp, ModelKind::MlpAttention], &[TrainSize::Reduced(100)]);
        assert_eq!(g.len(), 8);
    }

    #[test]
    fn shared_seed_gives_zero_std_and_exec_independence() {
        let blobs = |n, seed| {
            gen_gaussian_blobs(&BlobSpec { dim: 5, n_per_class: n, mean_separation: 2.0, label_noise: 0.0, seed })
                .unwrap()
        };
        let (train, val, test) = (blobs(100, 1), blobs(30, 2), blobs(50, 3));
        let data = BenchData { train: &train, val: &val, test: &test };
        let template = TrainConfig { epochs: 2, episodes_per_epoch: 5, hidden_dims: vec![8, 4], ..Default::default() };
        let grid = build_grid(&template, &[ModelKind::Mlp], &[TrainSize::Reduced(40)]);
        let same = BenchOptions { n_runs: 2, seed_stride: 0, exec: Exec::Parallel, ..Default::default() };
        let m = run_benchmark(data, &grid, &same).unwrap();
        assert_eq!(m.cells.len(), 4);
        for c in &m.cells {
            for metric in Metric::ALL {
                assert_eq!(c.summary(metric).std, 0.0, "{} {}", c.key, metric.name());
            }
        }
        let opts = BenchOptions { n_runs: 2, ..Default::default() };
        let par = run_benchmark(data, &grid, &opts).unwrap();
        let seq = run_benchmark(data, &grid, &BenchOptions { exec: Exec::Sequential, ..opts }).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn failing_run_names_its_cell() {
        let tiny = gen_gaussian_blobs(&BlobSpec { dim: 3, n_per_class: 3, ..Default::default() }).unwrap();
        let data = BenchData { train: &tiny, val: &tiny, test: &tiny };
        let grid = vec![GridEntry {
            config: TrainConfig { regime: Regime::Dspace, ..Default::default() },
            train_size: TrainSize::Full,
        }];
        let err = run_benchmark(data, &grid, &BenchOptions { n_runs: 2, ..Default::default() }).unwrap_err();
        assert!(err.to_string().starts_with("mlp/dspace/full, run 0"), "{err}");
    }
}
