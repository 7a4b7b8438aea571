//! Flow-CSV ingestion, cleaning, label binarization and stratified splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::rng;

/// Identifier columns removed before any learning: the flow decision tuple
/// plus the timestamp.
pub const DEFAULT_DROP_LIST: [&str; 7] =
    ["Flow ID", "Src IP", "Dst IP", "Src Port", "Dst Port", "Protocol", "Timestamp"];

pub const DEFAULT_LABEL_COLUMN: &str = "Label";
pub const DEFAULT_BENIGN_TOKEN: &str = "BENIGN";
/// Name of the label column in processed CSV files.
pub const PROCESSED_LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq)]
pub struct RawFlowTable {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub source_path: String,
}

impl RawFlowTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.column_names
            .iter()
            .position(|c| c == name)
            .or_else(|| self.column_names.iter().position(|c| c.eq_ignore_ascii_case(name)))
    }

    /// Removes the named columns (matched like [`drop_identifier_columns`]).
    /// Returns the names that were not found.
    pub fn drop_columns(&mut self, names: &[String]) -> Vec<String> {
        let (keep, missing) = match_drop_list(&self.column_names, names);
        self.column_names = keep.iter().map(|&i| self.column_names[i].clone()).collect();
        for row in &mut self.rows {
            *row = keep.iter().map(|&i| std::mem::take(&mut row[i])).collect();
        }
        missing
    }
}

/// Numeric feature matrix with binary labels (0 = benign, 1 = DDoS).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
    pub provenance: Vec<String>,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        let ds = LabeledDataset { features, labels, feature_names, provenance: Vec::new() };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.features.nrows() {
            return Err(Error::Shape(format!("{} labels for {} rows", self.labels.len(), self.features.nrows())));
        }
        if self.feature_names.len() != self.features.ncols() {
            return Err(Error::Shape(format!(
                "{} feature names for {} columns",
                self.feature_names.len(),
                self.features.ncols()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::LabelOutOfRange { label: *bad as usize, classes: 2 });
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos / self.features.ncols(), pos % self.features.ncols());
            return Err(Error::NonFinite(format!("row {r}, column {c}")));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - ones, ones]
    }

    /// Row indices per class, in row order.
    pub fn class_indices(&self) -> [Vec<usize>; 2] {
        let mut out = [Vec::new(), Vec::new()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn select_columns(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(1), idx),
            labels: self.labels.clone(),
            feature_names: idx.iter().map(|&i| self.feature_names[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.provenance.push(note.into());
        self
    }

    /// Writes the processed schema: feature header plus a final `label` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(PROCESSED_LABEL_COLUMN);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (row, label) in self.features.outer_iter().zip(&self.labels) {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(label.to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(f))
    }

    /// Reads a file in the processed schema written by [`LabeledDataset::save_csv`].
    pub fn load_processed(path: &Path) -> Result<LabeledDataset> {
        let table = load_csv(path)?;
        let last = table.column_names.last().cloned().unwrap_or_default();
        if last != PROCESSED_LABEL_COLUMN {
            return Err(Error::MissingColumn(format!("{PROCESSED_LABEL_COLUMN} (last column of {})", path.display())));
        }
        let n_feat = table.column_names.len() - 1;
        let mut features = Array2::zeros((table.rows.len(), n_feat));
        let mut labels = Vec::with_capacity(table.rows.len());
        for (r, row) in table.rows.iter().enumerate() {
            for c in 0..n_feat {
                features[[r, c]] = parse_cell(&row[c]).ok_or_else(|| Error::Parse {
                    row: r,
                    column: table.column_names[c].clone(),
                    value: row[c].clone(),
                })?;
            }
            labels.push(match row[n_feat].trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Parse { row: r, column: PROCESSED_LABEL_COLUMN.into(), value: other.into() })
                }
            });
        }
        let names = table.column_names[..n_feat].to_vec();
        Ok(LabeledDataset::new(features, labels, names)?.with_note(format!("loaded from {}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.7, val_fraction: 0.15, test_fraction: 0.15, seed: 0, stratified: true }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config(format!("split fractions must lie in (0,1): {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("split fractions must sum to 1: {fr:?}")));
        }
        Ok(())
    }
}

pub fn load_csv(path: &Path) -> Result<RawFlowTable> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(BufReader::new(f), &path.display().to_string())
}

/// Parses a headed CSV. Row indices in errors are 0-based data rows.
pub fn read_csv<R: Read>(reader: R, source: &str) -> Result<RawFlowTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::Empty(format!("{source} has no header row"))),
    };
    let mut column_names = Vec::with_capacity(header.len());
    let mut seen: HashMap<String, usize> = HashMap::new();
    for name in header.iter() {
        let name = name.trim_start_matches('\u{feff}').trim().to_string();
        // duplicated headers get a pandas-style ".N" suffix
        let count = seen.entry(name.clone()).or_insert(0);
        let unique = if *count == 0 { name.clone() } else { format!("{name}.{count}") };
        *count += 1;
        column_names.push(unique);
    }
    let expected = column_names.len();
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != expected {
            return Err(Error::RaggedRow { row: i, expected, found: rec.len() });
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(RawFlowTable { column_names, rows, source_path: source.to_string() })
}

/// Parses a numeric cell. Sentinels `Infinity`, `-Infinity` and `NaN` parse
/// to their IEEE values; an empty cell reads as NaN.
fn parse_cell(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() {
        return Some(f64::NAN);
    }
    t.parse::<f64>().ok()
}

/// Parses every non-label column, drops rows holding any non-finite value and
/// maps labels to 0 (benign token, case-insensitive) or 1 (anything else).
pub fn clean_and_binarize(table: &RawFlowTable, label_column: &str, benign_token: &str) -> Result<LabeledDataset> {
    let label_idx = table.column_index(label_column).ok_or_else(|| Error::MissingColumn(label_column.to_string()))?;
    let feat_cols: Vec<usize> = (0..table.column_names.len()).filter(|&c| c != label_idx).collect();
    let benign = benign_token.trim();

    let mut data = Vec::with_capacity(table.rows.len() * feat_cols.len());
    let mut labels = Vec::with_capacity(table.rows.len());
    let mut dropped = 0usize;
    let mut row_buf = Vec::with_capacity(feat_cols.len());
    for (r, row) in table.rows.iter().enumerate() {
        row_buf.clear();
        for &c in &feat_cols {
            let v = parse_cell(&row[c]).ok_or_else(|| Error::Parse {
                row: r,
                column: table.column_names[c].clone(),
                value: row[c].clone(),
            })?;
            row_buf.push(v);
        }
        if row_buf.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        data.extend_from_slice(&row_buf);
        labels.push(u8::from(!row[label_idx].trim().eq_ignore_ascii_case(benign)));
    }
    if labels.is_empty() {
        return Err(Error::Empty(format!("no rows survive cleaning of {} ({dropped} dropped)", table.source_path)));
    }
    let features =
        Array2::from_shape_vec((labels.len(), feat_cols.len()), data).map_err(|e| Error::Shape(e.to_string()))?;
    let names = feat_cols.iter().map(|&c| table.column_names[c].clone()).collect();
    Ok(LabeledDataset::new(features, labels, names)?
        .with_note(format!(
            "cleaned {}: {} columns observed, {} rows kept",
            table.source_path,
            table.column_names.len(),
            table.rows.len() - dropped
        ))
        .with_note(format!("dropped_non_finite_rows={dropped}")))
}

/// Canonical key used to match column names across CSV dialects
/// (`" Source IP"` and `"Src IP"` both map to `srcip`).
pub fn column_key(name: &str) -> String {
    let key: String = name.chars().filter(char::is_ascii_alphanumeric).map(|c| c.to_ascii_lowercase()).collect();
    if let Some(rest) = key.strip_prefix("source") {
        format!("src{rest}")
    } else if let Some(rest) = key.strip_prefix("destination") {
        format!("dst{rest}")
    } else {
        key
    }
}

/// Returns (indices to keep, requested names that matched nothing).
fn match_drop_list(columns: &[String], drop_list: &[String]) -> (Vec<usize>, Vec<String>) {
    let col_keys: Vec<String> = columns.iter().map(|c| column_key(c)).collect();
    let drop_keys: Vec<String> = drop_list.iter().map(|d| column_key(d)).collect();
    let keep = (0..columns.len()).filter(|&i| !drop_keys.contains(&col_keys[i])).collect();
    let missing =
        drop_list.iter().zip(&drop_keys).filter(|(_, k)| !col_keys.contains(k)).map(|(d, _)| d.clone()).collect();
    (keep, missing)
}

pub fn default_drop_list() -> Vec<String> {
    DEFAULT_DROP_LIST.iter().map(|s| s.to_string()).collect()
}

pub fn drop_identifier_columns(ds: &LabeledDataset, drop_list: &[String]) -> Result<LabeledDataset> {
    let (keep, missing) = match_drop_list(&ds.feature_names, drop_list);
    if keep.is_empty() {
        return Err(Error::Insufficient("dropping identifiers leaves zero features".into()));
    }
    let removed = ds.n_features() - keep.len();
    let mut out = if removed == 0 { ds.clone() } else { ds.select_columns(&keep) };
    if !drop_list.is_empty() {
        out.provenance.push(format!("dropped {removed} identifier columns"));
    }
    if !missing.is_empty() {
        out.provenance.push(format!("warning: drop-list columns not present: {}", missing.join(", ")));
    }
    Ok(out)
}

/// Row indices of (train, val, test), each ascending.
pub fn stratified_split_indices(ds: &LabeledDataset, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let [neg, pos] = ds.class_indices();
        if neg.is_empty() || pos.is_empty() {
            return Err(Error::Insufficient("stratified split needs both classes".into()));
        }
        vec![neg, pos]
    } else {
        vec![(0..ds.n_rows()).collect()]
    };
    for (c, g) in groups.iter().enumerate() {
        if g.len() < 3 {
            return Err(Error::Insufficient(format!("group {c} has {} rows, fewer than the 3 splits", g.len())));
        }
    }

    // Cumulative rounding: split totals are round(F * N) exactly and every
    // group is within one row of its exact share.
    let fractions = [spec.train_fraction, spec.val_fraction];
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    let mut cum_before = 0usize;
    for (c, group) in groups.iter().enumerate() {
        let mut idx = group.clone();
        rng::shuffle(&mut rng::named(spec.seed, "split", c as u64), &mut idx);
        let cum_after = cum_before + idx.len();
        let mut start = 0;
        for (s, f) in fractions.iter().enumerate() {
            let take = ((f * cum_after as f64).round() - (f * cum_before as f64).round()) as usize;
            let end = (start + take).min(idx.len());
            out[s].extend_from_slice(&idx[start..end]);
            start = end;
        }
        out[2].extend_from_slice(&idx[start..]);
        cum_before = cum_after;
    }
    for part in &mut out {
        part.sort_unstable();
    }
    Ok(out)
}

pub fn stratified_split(
    ds: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let [tr, va, te] = stratified_split_indices(ds, spec)?;
    let note = |name: &str| format!("{name} split (seed {}, {:?})", spec.seed, spec);
    Ok((
        ds.select_rows(&tr).with_note(note("train")),
        ds.select_rows(&va).with_note(note("val")),
        ds.select_rows(&te).with_note(note("test")),
    ))
}

/// `n / 2` rows per class without replacement, returned in ascending row order.
pub fn subsample_indices(ds: &LabeledDataset, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Config(format!("reduced sample size must be even and positive, got {n}")));
    }
    if n > ds.n_rows() {
        return Err(Error::Insufficient(format!("requested {n} rows from {}", ds.n_rows())));
    }
    let half = n / 2;
    let mut out = Vec::with_capacity(n);
    for (c, mut idx) in ds.class_indices().into_iter().enumerate() {
        if idx.len() < half {
            return Err(Error::Insufficient(format!("class {c} has {} rows, need {half}", idx.len())));
        }
        rng::shuffle(&mut rng::named(seed, "subsample", c as u64), &mut idx);
        out.extend_from_slice(&idx[..half]);
    }
    out.sort_unstable();
    Ok(out)
}

pub fn subsample_reduced(ds: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset> {
    let idx = subsample_indices(ds, n, seed)?;
    Ok(ds.select_rows(&idx).with_note(format!("reduced to {n} balanced rows (seed {seed})")))
}
