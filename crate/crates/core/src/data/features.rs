//! Feature sets and their on-disk formats.
//!
//! Two encodings are supported:
//!
//! * Binary (little-endian): magic `FSGF`, `u32` version (1), `u64` sample
//!   count, `u32` dimension, `u32` class count, then one record per sample of
//!   `dimension` `f32` values followed by an `i32` label (`-1` = absent).
//! * CSV with a header row `f0,...,f{D-1},label`. Labels may be integers or
//!   arbitrary strings; strings are mapped to dense ids in sorted order and the
//!   mapping is kept in [`FeatureSet::class_names`].

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FSGF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;

/// Dense feature vectors with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    class_count: usize,
    class_names: Option<Vec<String>>,
}

impl FeatureSet {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        class_count: usize,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if d < 2 {
            return Err(Error::InvalidConfig(format!(
                "feature dimension must be at least 2, got {d}"
            )));
        }
        if labels.len() != n {
            return Err(Error::dims(n, labels.len(), "label count"));
        }
        for (row, x) in features.rows().into_iter().enumerate() {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::row(row, "non-finite feature value"));
            }
        }
        for (row, label) in labels.iter().enumerate() {
            if let Some(l) = *label {
                if l >= class_count {
                    return Err(Error::row(
                        row,
                        format!("label {l} is not below class count {class_count}"),
                    ));
                }
            }
        }
        Ok(Self {
            features,
            labels,
            class_count,
            class_names: None,
        })
    }

    /// Attaches the external class names, indexed by dense class id.
    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count {
            return Err(Error::dims(self.class_count, names.len(), "class names"));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, id: usize) -> ArrayView1<'_, f64> {
        self.features.row(id)
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> Option<usize> {
        self.labels[id]
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// Per-class sample ids in ascending order.
    pub fn ids_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (id, label) in self.labels.iter().enumerate() {
            if let Some(l) = *label {
                out[l].push(id);
            }
        }
        out
    }

    /// Root-mean-square of the per-coordinate standard deviations.
    pub fn coordinate_scale(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 1.0;
        }
        let mean = self.features.mean_axis(ndarray::Axis(0)).unwrap();
        let mut acc = 0.0;
        for row in self.features.rows() {
            for (x, m) in row.iter().zip(mean.iter()) {
                acc += (x - m) * (x - m);
            }
        }
        (acc / (n as f64 * self.dim() as f64)).sqrt()
    }
}

/// Loads a feature file, choosing the CSV reader for `.csv` paths.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    if is_csv(path) {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_csv(BufReader::new(file))
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_binary(&bytes)
    }
}

/// Writes a feature file, choosing the CSV writer for `.csv` paths.
pub fn save_features(fs_: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        let mut out = Vec::new();
        write_csv(fs_, &mut out).map_err(|e| Error::io(path, e))?;
        out
    } else {
        encode_binary(fs_)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn encode_binary(fs_: &FeatureSet) -> Vec<u8> {
    let (n, d) = fs_.features.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (d * 4 + 4));
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(fs_.class_count as u32).to_le_bytes());
    for (row, label) in fs_.features.rows().into_iter().zip(&fs_.labels) {
        for &x in row {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        let l = label.map_or(-1i32, |l| l as i32);
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<FeatureSet> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated header".into()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format("bad magic, expected FSGF".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u32_at(16) as usize;
    let class_count = u32_at(20) as usize;
    if d < 2 {
        return Err(Error::Format(format!("dimension {d} in header is below 2")));
    }
    let record = d * 4 + 4;
    let body = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(record)
        .ok_or_else(|| Error::Format("sample count overflows".into()))?;
    if body.len() != expected {
        let row = body.len() / record;
        return Err(Error::row(
            row,
            format!(
                "payload is {} bytes but header promises {n} records of {record} bytes",
                body.len()
            ),
        ));
    }
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (row, chunk) in body.chunks_exact(record).enumerate() {
        for (j, b) in chunk[..d * 4].chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes(b.try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::row(row, format!("non-finite value at column {j}")));
            }
            features[[row, j]] = x as f64;
        }
        let l = i32::from_le_bytes(chunk[d * 4..].try_into().unwrap());
        labels.push(parse_label_id(l.into(), class_count, row)?);
    }
    FeatureSet::new(features, labels, class_count)
}

fn parse_label_id(l: i64, class_count: usize, row: usize) -> Result<Option<usize>> {
    match l {
        -1 => Ok(None),
        l if l < -1 => Err(Error::row(row, format!("invalid label {l}"))),
        l if l as usize >= class_count => Err(Error::row(
            row,
            format!("label {l} is not below class count {class_count}"),
        )),
        l => Ok(Some(l as usize)),
    }
}

pub fn write_csv(fs_: &FeatureSet, mut w: impl Write) -> std::io::Result<()> {
    let d = fs_.dim();
    let header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    writeln!(w, "{},label", header.join(","))?;
    for (row, label) in fs_.features.rows().into_iter().zip(&fs_.labels) {
        for &x in row {
            write!(w, "{},", x)?;
        }
        match (label, &fs_.class_names) {
            (Some(l), Some(names)) => writeln!(w, "{}", names[*l])?,
            (Some(l), None) => writeln!(w, "{l}")?,
            (None, _) => writeln!(w)?,
        }
    }
    Ok(())
}

/// Reads the CSV variant. The label column may be empty or `-1` for
/// unlabeled rows.
pub fn read_csv(r: impl BufRead) -> Result<FeatureSet> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::Format(e.to_string()))?,
        None => return Err(Error::Format("empty CSV".into())),
    };
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let d = cols.len().saturating_sub(1);
    let header_ok = cols.last() == Some(&"label")
        && cols[..d]
            .iter()
            .enumerate()
            .all(|(j, c)| *c == format!("f{j}"));
    if !header_ok || d < 2 {
        return Err(Error::Format(
            "CSV header must be f0,...,f{D-1},label with D >= 2".into(),
        ));
    }

    let mut values = Vec::new();
    let mut raw_labels: Vec<Option<String>> = Vec::new();
    for (i, line) in lines {
        let row = i - 1;
        let line = line.map_err(|e| Error::row(row, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::row(
                row,
                format!(
                    "dimension mismatch: expected {d} features, got {}",
                    fields.len().saturating_sub(1)
                ),
            ));
        }
        for (j, f) in fields[..d].iter().enumerate() {
            let x: f64 = f
                .parse()
                .map_err(|_| Error::row(row, format!("cannot parse column {j}: {f:?}")))?;
            if !x.is_finite() {
                return Err(Error::row(row, format!("non-finite value at column {j}")));
            }
            values.push(x);
        }
        let l = fields[d];
        raw_labels.push(if l.is_empty() || l == "-1" {
            None
        } else {
            Some(l.to_string())
        });
    }
    let n = raw_labels.len();
    let features = Array2::from_shape_vec((n, d), values).expect("row lengths checked");

    let numeric: Option<Vec<Option<i64>>> = raw_labels
        .iter()
        .map(|l| match l {
            None => Some(None),
            Some(s) => s.parse::<i64>().ok().map(Some),
        })
        .collect();
    match numeric {
        Some(ids) => {
            let class_count = ids.iter().flatten().map(|&l| l + 1).max().unwrap_or(0).max(0) as usize;
            let labels = ids
                .iter()
                .enumerate()
                .map(|(row, l)| match l {
                    None => Ok(None),
                    Some(l) => parse_label_id(*l, class_count, row),
                })
                .collect::<Result<Vec<_>>>()?;
            FeatureSet::new(features, labels, class_count)
        }
        None => {
            let names: Vec<String> = raw_labels
                .iter()
                .flatten()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let labels = raw_labels
                .iter()
                .map(|l| l.as_ref().map(|s| names.binary_search(s).unwrap()))
                .collect();
            FeatureSet::new(features, labels, names.len())?.with_class_names(names)
        }
    }
}
