//! Datasets and client partitioning.
//!
//! Three sources feed the simulator: Gaussian blobs generated on the fly,
//! IDX binaries (the MNIST family) and dense numeric CSV files. Training
//! examples are then split across genuine clients either uniformly or with
//! label skew.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::model::{Batch, ModelError};
use crate::vectors::RngStream;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("idx: bad magic bytes {0:02x} {1:02x}")]
    IdxBadMagic(u8, u8),
    #[error("idx: unsupported element type 0x{0:02x} (only 0x08 is accepted)")]
    IdxUnsupportedType(u8),
    #[error("idx: truncated input, needed {expected} bytes but got {actual}")]
    IdxTruncated { expected: usize, actual: usize },
    #[error("idx: dimension product overflows")]
    IdxDimensionOverflow,
    #[error("idx: {0} unexpected trailing bytes")]
    IdxTrailingBytes(usize),
    #[error("csv row {row}: expected {expected} columns, found {found}")]
    CsvRagged { row: u64, expected: usize, found: usize },
    #[error("csv row {row}, column {column}: cannot parse {cell:?} as a number")]
    CsvNotNumeric { row: u64, column: usize, cell: String },
    #[error("csv: label column {column} out of range for {width} columns")]
    CsvLabelColumn { column: usize, width: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot partition across zero clients")]
    NoClients,
    #[error("non-IID degree q must lie in [0, 1], got {0}")]
    InvalidSkew(f64),
}

/// Examples in row-major order with dense class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    width: usize,
    labels: Vec<usize>,
    num_classes: usize,
    /// Original label values when labels were remapped on load.
    pub label_values: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, width: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self, DataError> {
        if features.len() != width * labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature values do not form {} rows of width {width}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Invalid(format!("label {bad} outside 0..{num_classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite feature value".into()));
        }
        Ok(Self { features, width, labels, num_classes, label_values: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch::new(&self.features, self.width, &self.labels).expect("dataset shape checked on construction")
    }

    /// Copies the listed rows, in the given order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset { features, width: self.width, labels, num_classes: self.num_classes, label_values: self.label_values.clone() }
    }

    /// Number of examples of each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

impl From<ModelError> for DataError {
    fn from(e: ModelError) -> Self {
        DataError::Invalid(e.to_string())
    }
}

/// Gaussian blobs: one unit-norm class mean per class, isotropic noise with
/// standard deviation `spread` around it.
///
/// Each class contributes `per_class` examples; the last `max(1, per_class/5)`
/// of every class form the test split, the rest the training split.
pub fn gen_synthetic(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    stream: &mut RngStream,
) -> Result<(Dataset, Dataset), DataError> {
    if classes < 2 || dim < 1 || per_class < 2 {
        return Err(DataError::Invalid(format!(
            "synthetic data needs classes >= 2, dim >= 1, per_class >= 2 (got {classes}, {dim}, {per_class})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::Invalid(format!("spread {spread}")));
    }

    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| stream.next_gaussian()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();

    let test_per_class = (per_class / 5).max(1);
    let train_per_class = per_class - test_per_class;
    let (mut train_x, mut train_y) = (Vec::new(), Vec::new());
    let (mut test_x, mut test_y) = (Vec::new(), Vec::new());
    for (label, mean) in means.iter().enumerate() {
        for i in 0..per_class {
            let (xs, ys) = if i < train_per_class { (&mut train_x, &mut train_y) } else { (&mut test_x, &mut test_y) };
            xs.extend(mean.iter().map(|m| m + spread * stream.next_gaussian()));
            ys.push(label);
        }
    }
    Ok((Dataset::new(train_x, dim, train_y, classes)?, Dataset::new(test_x, dim, test_y, classes)?))
}

/// An IDX tensor of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_UBYTE: u8 = 0x08;

/// Parses an IDX file: two zero bytes, the element type (only `0x08`,
/// unsigned byte, is accepted), the dimension count `D`, `D` big-endian
/// `u32` sizes, then the row-major payload.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, DataError> {
    if bytes.len() < 4 {
        return Err(DataError::IdxTruncated { expected: 4, actual: bytes.len() });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(DataError::IdxBadMagic(bytes[0], bytes[1]));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(DataError::IdxUnsupportedType(bytes[2]));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(DataError::IdxTruncated { expected: header, actual: bytes.len() });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(DataError::IdxDimensionOverflow)?;
    let total = header.checked_add(count).ok_or(DataError::IdxDimensionOverflow)?;
    if bytes.len() < total {
        return Err(DataError::IdxTruncated { expected: total, actual: bytes.len() });
    }
    if bytes.len() > total {
        return Err(DataError::IdxTrailingBytes(bytes.len() - total));
    }
    Ok(IdxTensor { dims, data: bytes[header..].to_vec() })
}

impl IdxTensor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0, 0, IDX_UBYTE, self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

pub fn read_idx_file(path: &Path) -> Result<IdxTensor, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    parse_idx(&bytes)
}

/// Pairs an image tensor `[N, ...]` with a label tensor `[N]`. Pixels are
/// divided by 255; the class count is one past the largest label.
pub fn idx_dataset(images: &IdxTensor, labels: &IdxTensor) -> Result<Dataset, DataError> {
    let n = *images.dims.first().ok_or_else(|| DataError::Invalid("image tensor has no dimensions".into()))?;
    if labels.dims != [n] {
        return Err(DataError::Invalid(format!("label dims {:?} do not match {n} images", labels.dims)));
    }
    let width: usize = images.dims[1..].iter().product();
    let features = images.data.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(features, width, labels, classes)
}

/// Loads a numeric CSV. The label column is remapped to `0..C` in ascending
/// order of the original values, which are kept in `label_values`. A first
/// row containing any non-numeric cell is treated as a header.
pub fn load_dense_csv(path: &Path, label_column: usize) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io { path: path.display().to_string(), source },
            other => DataError::Invalid(format!("{other:?}")),
        })?;

    let mut rows: Vec<(u64, Vec<f64>)> = Vec::new();
    let mut expected: Option<usize> = None;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record.position().map_or(i as u64 + 1, |p| p.line());
        let parsed: Vec<Result<f64, _>> = record.iter().map(str::parse::<f64>).collect();
        if i == 0 && parsed.iter().any(Result::is_err) {
            continue;
        }
        let width = *expected.get_or_insert(record.len());
        if record.len() != width {
            return Err(DataError::CsvRagged { row, expected: width, found: record.len() });
        }
        let mut values = Vec::with_capacity(width);
        for (column, (cell, value)) in record.iter().zip(parsed).enumerate() {
            match value {
                Ok(v) if v.is_finite() => values.push(v),
                _ => return Err(DataError::CsvNotNumeric { row, column, cell: cell.to_string() }),
            }
        }
        rows.push((row, values));
    }

    let width = expected.unwrap_or(0);
    if label_column >= width {
        return Err(DataError::CsvLabelColumn { column: label_column, width });
    }
    let mut label_values: Vec<f64> = rows.iter().map(|(_, r)| r[label_column]).collect();
    label_values.sort_by(f64::total_cmp);
    label_values.dedup();

    let mut features = Vec::with_capacity(rows.len() * (width - 1));
    let mut labels = Vec::with_capacity(rows.len());
    for (_, r) in &rows {
        let value = r[label_column];
        labels.push(label_values.binary_search_by(|v| v.total_cmp(&value)).expect("label collected above"));
        features.extend(r.iter().enumerate().filter(|&(c, _)| c != label_column).map(|(_, &v)| v));
    }
    let mut ds = Dataset::new(features, width - 1, labels, label_values.len().max(1))?;
    ds.label_values = Some(label_values);
    Ok(ds)
}

/// One index list per client over the training set. Clients may own an empty
/// shard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub shards: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    /// True when every index in `0..len` appears in exactly one shard.
    pub fn is_partition_of(&self, len: usize) -> bool {
        let mut seen = vec![false; len];
        for &i in self.shards.iter().flatten() {
            if i >= len || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Contiguous client ranges for the class groups. With `G` groups of
/// `n / G` clients each, the remainder joins the last group.
fn group_ranges(n_clients: usize, groups: usize) -> Vec<std::ops::Range<usize>> {
    let size = n_clients / groups;
    (0..groups)
        .map(|g| {
            let end = if g + 1 == groups { n_clients } else { (g + 1) * size };
            g * size..end
        })
        .collect()
}

/// Label-skewed partition.
///
/// Clients are split into `G = min(C, n_clients)` groups. An example with
/// label `l` goes to group `l mod G` with probability `q` and to each other
/// group with probability `(1 − q)/(G − 1)`; within the chosen group it lands
/// on a uniformly random client.
pub fn partition_noniid(
    train: &Dataset,
    n_clients: usize,
    q: f64,
    stream: &mut RngStream,
) -> Result<PartitionPlan, DataError> {
    if n_clients == 0 {
        return Err(DataError::NoClients);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(DataError::InvalidSkew(q));
    }
    let groups = train.num_classes().min(n_clients);
    let ranges = group_ranges(n_clients, groups);
    let mut shards = vec![Vec::new(); n_clients];
    for (i, &label) in train.labels().iter().enumerate() {
        let home = label % groups;
        let group = if groups == 1 || stream.next_unit() < q {
            home
        } else {
            let other = stream.gen_range(0..groups - 1);
            if other >= home {
                other + 1
            } else {
                other
            }
        };
        let range = ranges[group].clone();
        shards[stream.gen_range(range)].push(i);
    }
    Ok(PartitionPlan { shards })
}

/// Random permutation split into shards whose sizes differ by at most one.
pub fn partition_uniform(train: &Dataset, n_clients: usize, stream: &mut RngStream) -> Result<PartitionPlan, DataError> {
    if n_clients == 0 {
        return Err(DataError::NoClients);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(stream);
    let base = train.len() / n_clients;
    let extra = train.len() % n_clients;
    let mut shards = Vec::with_capacity(n_clients);
    let mut start = 0;
    for c in 0..n_clients {
        let size = base + usize::from(c < extra);
        let mut shard = order[start..start + size].to_vec();
        shard.sort_unstable();
        shards.push(shard);
        start += size;
    }
    Ok(PartitionPlan { shards })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectors::derive_stream;
    use std::io::Write;

    fn labels_only(labels: Vec<usize>, classes: usize) -> Dataset {
        let n = labels.len();
        Dataset::new(vec![0.0; n], 1, labels, classes).unwrap()
    }

    #[test]
    fn synthetic_split_sizes() {
        let (train, test) = gen_synthetic(10, 20, 120, 0.1, &mut derive_stream(1, -1, 0)).unwrap();
        assert_eq!(train.len(), 960);
        assert_eq!(test.len(), 240);
        assert_eq!(train.class_counts(), vec![96; 10]);
        assert_eq!(test.class_counts(), vec![24; 10]);
        assert!(gen_synthetic(1, 20, 120, 0.1, &mut derive_stream(1, -1, 0)).is_err());
        assert!(gen_synthetic(3, 2, 1, 0.1, &mut derive_stream(1, -1, 0)).is_err());
    }

    #[test]
    fn zero_spread_collapses_onto_means() {
        let (train, test) = gen_synthetic(4, 3, 10, 0.0, &mut derive_stream(2, -1, 0)).unwrap();
        for c in 0..4 {
            let rows: Vec<&[f64]> = (0..train.len()).filter(|&i| train.labels()[i] == c).map(|i| train.row(i)).collect();
            assert!(rows.windows(2).all(|w| w[0] == w[1]));
            let norm: f64 = rows[0].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            let t = (0..test.len()).find(|&i| test.labels()[i] == c).unwrap();
            assert_eq!(test.row(t), rows[0]);
        }
    }

    #[test]
    fn idx_minimal_file() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0x7f];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![1, 1, 1]);
        assert_eq!(t.data, vec![127]);
        assert_eq!(t.to_bytes(), bytes);
    }

    #[test]
    fn idx_rejections() {
        assert!(matches!(parse_idx(&[0, 0, 0x0d, 1, 0, 0, 0, 1, 0]), Err(DataError::IdxUnsupportedType(0x0d))));
        assert!(matches!(parse_idx(&[1, 0, 8, 0]), Err(DataError::IdxBadMagic(1, 0))));
        assert!(matches!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 1, 2]), Err(DataError::IdxTruncated { expected: 11, actual: 10 })));
        assert!(matches!(parse_idx(&[0, 0, 8, 2, 0, 0]), Err(DataError::IdxTruncated { .. })));
        let huge = [0, 0, 8, 3, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff];
        assert!(matches!(parse_idx(&huge), Err(DataError::IdxDimensionOverflow)));
        assert!(matches!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 5, 6]), Err(DataError::IdxTrailingBytes(1))));
    }

    #[test]
    fn idx_dataset_scales_pixels() {
        let images = IdxTensor { dims: vec![2, 2, 1], data: vec![0, 255, 51, 102] };
        let labels = IdxTensor { dims: vec![2], data: vec![3, 1] };
        let ds = idx_dataset(&images, &labels).unwrap();
        assert_eq!(ds.width(), 2);
        assert_eq!(ds.row(0), &[0.0, 1.0]);
        assert_eq!(ds.row(1), &[0.2, 0.4]);
        assert_eq!(ds.num_classes(), 4);
        let bad = IdxTensor { dims: vec![3], data: vec![0, 0, 0] };
        assert!(idx_dataset(&images, &bad).is_err());
    }

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_dense_label_remap() {
        let f = write_csv("0.5,1,5\n1.5,0,9\n2.5,1,5\n");
        let ds = load_dense_csv(f.path(), 2).unwrap();
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.width(), 2);
        assert_eq!(ds.row(1), &[1.5, 0.0]);
        assert_eq!(ds.label_values, Some(vec![5.0, 9.0]));
    }

    #[test]
    fn csv_header_detection_and_label_column() {
        let f = write_csv("label,a,b\n3,1,0\n7,0,1\n");
        let ds = load_dense_csv(f.path(), 0).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.row(0), &[1.0, 0.0]);
        assert_eq!(ds.labels(), &[0, 1]);
    }

    #[test]
    fn csv_wide_rows() {
        let row: Vec<String> = (0..601).map(|i| (i % 2).to_string()).collect();
        let f = write_csv(&format!("{}\n{}\n", row.join(","), row.join(",")));
        assert_eq!(load_dense_csv(f.path(), 600).unwrap().width(), 600);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let f = write_csv("1,2,3\n4,5\n");
        assert!(matches!(load_dense_csv(f.path(), 0), Err(DataError::CsvRagged { row: 2, expected: 3, found: 2 })));
        let f = write_csv("1,2,3\n4,x,6\n");
        assert!(matches!(load_dense_csv(f.path(), 0), Err(DataError::CsvNotNumeric { row: 2, column: 1, .. })));
        let f = write_csv("1,2\n");
        assert!(matches!(load_dense_csv(f.path(), 5), Err(DataError::CsvLabelColumn { .. })));
    }

    #[test]
    fn uniform_partition_sizes() {
        let ds = labels_only(vec![0; 10], 2);
        let plan = partition_uniform(&ds, 3, &mut derive_stream(1, -1, 2)).unwrap();
        let mut sizes: Vec<usize> = plan.shards.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert!(plan.is_partition_of(10));
        let single = partition_uniform(&ds, 1, &mut derive_stream(1, -1, 2)).unwrap();
        assert_eq!(single.shards, vec![(0..10).collect::<Vec<_>>()]);
        assert!(matches!(partition_uniform(&ds, 0, &mut derive_stream(1, -1, 2)), Err(DataError::NoClients)));
    }

    #[test]
    fn noniid_pure_shards_at_q_one() {
        let ds = labels_only((0..500).map(|i| i % 5).collect(), 5);
        let plan = partition_noniid(&ds, 12, 1.0, &mut derive_stream(3, -1, 2)).unwrap();
        assert!(plan.is_partition_of(500));
        let ranges = group_ranges(12, 5);
        assert_eq!(ranges.last().unwrap().clone(), 8..12);
        for (g, range) in ranges.iter().enumerate() {
            for c in range.clone() {
                assert!(plan.shards[c].iter().all(|&i| ds.labels()[i] == g));
            }
        }
    }

    #[test]
    fn noniid_rejects_bad_arguments() {
        let ds = labels_only(vec![0, 1], 2);
        assert!(matches!(partition_noniid(&ds, 0, 0.5, &mut derive_stream(0, 0, 0)), Err(DataError::NoClients)));
        assert!(matches!(partition_noniid(&ds, 2, 1.5, &mut derive_stream(0, 0, 0)), Err(DataError::InvalidSkew(_))));
    }

    #[test]
    fn noniid_fewer_clients_than_classes() {
        let ds = labels_only((0..100).map(|i| i % 10).collect(), 10);
        let plan = partition_noniid(&ds, 3, 0.5, &mut derive_stream(0, -1, 2)).unwrap();
        assert_eq!(plan.num_clients(), 3);
        assert!(plan.is_partition_of(100));
    }
}
