//! Embedding sets and their on-disk formats.
//!
//! An [`EmbeddingSet`] is an `N × K` row-major matrix of `f32` embedding
//! coordinates with optional per-row class labels. Every other module in the
//! crate consumes these values: training data, reference test sets and
//! generated samples all travel as embedding sets.
//!
//! Two file formats are supported:
//!
//! * **EMB1** binary, little-endian: the 4-byte magic `EMB1`, `u32` rows,
//!   `u32` columns, a `u8` label flag, three zero padding bytes, then
//!   `N·K` `f32` values row-major and, when the flag is set, `N` `i32`
//!   labels.
//! * **CSV**: one row per line, comma separated floats, with an optional
//!   trailing integer label column.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::atomic::write_atomic;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 16;

/// File format selector for [`load_embeddings`] and [`save_embeddings`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    /// CSV; `labeled` declares that the last column holds integer labels.
    Csv { labeled: bool },
}

impl Format {
    /// Picks a format from the file extension: `.csv` is CSV, anything else
    /// is EMB1.
    pub fn from_path(path: &Path, labeled: bool) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv { labeled },
            _ => Format::Binary,
        }
    }
}

/// An immutable `N × K` matrix of embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    name: String,
    rows: usize,
    dims: usize,
    data: Vec<f32>,
    labels: Option<Vec<u32>>,
}

impl EmbeddingSet {
    /// Builds a set from row-major data, validating shape and finiteness.
    pub fn new(
        name: impl Into<String>,
        rows: usize,
        dims: usize,
        data: Vec<f32>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if rows == 0 || dims == 0 {
            return Err(Error::usage(format!(
                "embedding set must have at least one row and column, got {rows}x{dims}"
            )));
        }
        if data.len() != rows * dims {
            return Err(Error::usage(format!(
                "data length {} does not match {rows}x{dims}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation {
                row: pos / dims,
                message: format!("non-finite entry in column {}", pos % dims),
            });
        }
        if let Some(l) = &labels {
            if l.len() != rows {
                return Err(Error::usage(format!(
                    "{} labels for {rows} rows",
                    l.len()
                )));
            }
        }
        Ok(EmbeddingSet {
            name: name.into(),
            rows,
            dims,
            data,
            labels,
        })
    }

    /// Builds a set from a slice of equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(name: impl Into<String>, rows: &[R]) -> Result<Self> {
        let dims = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dims);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dims {
                return Err(Error::Validation {
                    row: i,
                    message: format!("expected {dims} columns, found {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(name, rows.len(), dims, data, None)
    }

    /// Attaches labels, replacing any existing ones.
    pub fn with_labels(self, labels: Vec<u32>) -> Result<Self> {
        Self::new(self.name, self.rows, self.dims, self.data, Some(labels))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of rows `N`.
    pub fn len(&self) -> usize {
        self.rows
    }

    /// Always false; sets hold at least one row.
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Embedding dimension `K`.
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dims)
    }

    /// Row-major backing storage.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Rows picked by index, in the given order; labels follow their rows.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(self.name.clone(), indices.len(), self.dims, data, labels)
    }

    /// Index of the first all-zero row, if any.
    pub fn first_zero_row(&self) -> Option<usize> {
        self.rows().position(|r| r.iter().all(|&v| v == 0.0))
    }
}

/// Partitions a labeled set by label. Relative row order is preserved
/// within each part.
pub fn split_by_label(set: &EmbeddingSet) -> Result<BTreeMap<u32, EmbeddingSet>> {
    let labels = set.labels().ok_or_else(|| {
        Error::usage(format!(
            "set '{}' has no labels; use k-means partitioning instead",
            set.name()
        ))
    })?;
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(l, idx)| Ok((l, set.select(&idx)?)))
        .collect()
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "embeddings".to_string())
}

/// Reads an embedding file. The set is named after the file stem.
pub fn load_embeddings(path: &Path, format: Format) -> Result<EmbeddingSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let set = match format {
        Format::Binary => decode_binary(&bytes)?,
        Format::Csv { labeled } => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Format {
                offset: e.valid_up_to() as u64,
                message: "csv file is not valid UTF-8".into(),
            })?;
            decode_csv(text, labeled)?
        }
    };
    Ok(set.with_name(stem(path)))
}

/// Writes an embedding file atomically.
pub fn save_embeddings(set: &EmbeddingSet, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Binary => encode_binary(set),
        Format::Csv { labeled } => encode_csv(set, labeled)?.into_bytes(),
    };
    write_atomic(path, &bytes)
}

pub fn encode_binary(set: &EmbeddingSet) -> Vec<u8> {
    let label_bytes = set.labels.as_ref().map_or(0, |l| l.len() * 4);
    let mut out = Vec::with_capacity(HEADER_LEN + set.data.len() * 4 + label_bytes);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(set.rows as u32).to_le_bytes());
    out.extend_from_slice(&(set.dims as u32).to_le_bytes());
    out.push(u8::from(set.labels.is_some()));
    out.extend_from_slice(&[0, 0, 0]);
    for v in &set.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &set.labels {
        for &l in labels {
            out.extend_from_slice(&(l as i32).to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<EmbeddingSet> {
    let fmt_err = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fmt_err(
            bytes.len(),
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fmt_err(0, "bad magic, expected EMB1".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let rows = u32_at(4) as usize;
    let dims = u32_at(8) as usize;
    let flag = bytes[12];
    if flag > 1 {
        return Err(fmt_err(12, format!("label flag must be 0 or 1, found {flag}")));
    }
    if bytes[13..16] != [0, 0, 0] {
        return Err(fmt_err(13, "non-zero header padding".into()));
    }
    if rows == 0 || dims == 0 {
        return Err(fmt_err(4, format!("empty shape {rows}x{dims}")));
    }
    let payload = rows
        .checked_mul(dims)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| fmt_err(4, "shape overflows".into()))?;
    let label_len = if flag == 1 { rows * 4 } else { 0 };
    let expected = HEADER_LEN + payload + label_len;
    if bytes.len() < expected {
        return Err(fmt_err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(fmt_err(
            expected,
            format!("{} trailing bytes", bytes.len() - expected),
        ));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..HEADER_LEN + payload]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = if flag == 1 {
        let start = HEADER_LEN + payload;
        let mut labels = Vec::with_capacity(rows);
        for (i, c) in bytes[start..].chunks_exact(4).enumerate() {
            let l = i32::from_le_bytes(c.try_into().unwrap());
            if l < 0 {
                return Err(Error::Validation {
                    row: i,
                    message: format!("negative label {l}"),
                });
            }
            labels.push(l as u32);
        }
        Some(labels)
    } else {
        None
    };
    EmbeddingSet::new("embeddings", rows, dims, data, labels)
}

pub fn encode_csv(set: &EmbeddingSet, labeled: bool) -> Result<String> {
    let labels = match (labeled, set.labels()) {
        (true, None) => {
            return Err(Error::usage(format!(
                "set '{}' has no labels to write",
                set.name()
            )))
        }
        (true, Some(l)) => Some(l),
        (false, _) => None,
    };
    let mut out = String::new();
    for (i, row) in set.rows().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // Display for f32 is the shortest string that round-trips.
            write!(out, "{v}").unwrap();
        }
        if let Some(l) = labels {
            write!(out, ",{}", l[i]).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_csv(text: &str, labeled: bool) -> Result<EmbeddingSet> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dims = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let line_err = |message: String| Error::Csv {
            line: lineno + 1,
            message,
        };
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if labeled {
            let raw = fields
                .pop()
                .filter(|_| !fields.is_empty())
                .ok_or_else(|| line_err("labeled row needs at least two columns".into()))?;
            let l: u32 = raw
                .parse()
                .map_err(|_| line_err(format!("bad label '{raw}'")))?;
            labels.push(l);
        }
        match dims {
            None => dims = Some(fields.len()),
            Some(d) if d != fields.len() => {
                return Err(line_err(format!(
                    "expected {d} columns, found {}",
                    fields.len()
                )))
            }
            _ => {}
        }
        for f in fields {
            let v: f32 = f
                .parse()
                .map_err(|_| line_err(format!("bad number '{f}'")))?;
            if !v.is_finite() {
                return Err(Error::Validation {
                    row: rows,
                    message: format!("non-finite entry '{f}'"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    let dims = dims.ok_or_else(|| Error::Csv {
        line: 0,
        message: "no rows".into(),
    })?;
    EmbeddingSet::new(
        "embeddings",
        rows,
        dims,
        data,
        labeled.then_some(labels),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(rows: u32, dims: u32, flag: u8) -> Vec<u8> {
        let mut b = b"EMB1".to_vec();
        b.extend_from_slice(&rows.to_le_bytes());
        b.extend_from_slice(&dims.to_le_bytes());
        b.extend_from_slice(&[flag, 0, 0, 0]);
        b
    }

    #[test]
    fn decodes_hand_built_binary() {
        let mut b = header(2, 3, 0);
        for v in [1f32, 0., 0., 0., 1., 0.] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let s = decode_binary(&b).unwrap();
        assert_eq!((s.len(), s.dims()), (2, 3));
        assert_eq!(s.row(1), &[0.0, 1.0, 0.0]);
        assert!(s.labels().is_none());
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let mut b = header(5, 3, 0);
        for _ in 0..4 * 3 {
            b.extend_from_slice(&1f32.to_le_bytes());
        }
        match decode_binary(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16 + 4 * 3 * 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic_and_flag() {
        let mut b = header(1, 1, 0);
        b.extend_from_slice(&1f32.to_le_bytes());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_binary(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = b.clone();
        bad[12] = 7;
        assert!(matches!(decode_binary(&bad), Err(Error::Format { offset: 12, .. })));
    }

    #[test]
    fn non_finite_entry_names_row() {
        let mut b = header(3, 2, 0);
        for v in [0f32, 1., 2., 3., f32::NAN, 5.] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            decode_binary(&b),
            Err(Error::Validation { row: 2, .. })
        ));
    }

    #[test]
    fn decodes_csv() {
        let s = decode_csv("1.0,2.0\n3.0,4.0", false).unwrap();
        assert_eq!((s.len(), s.dims()), (2, 2));
        assert_eq!(s.row(1), &[3.0, 4.0]);

        let s = decode_csv("1.0,2.0,3\n3.0,4.0,0\n", true).unwrap();
        assert_eq!(s.dims(), 2);
        assert_eq!(s.labels(), Some(&[3, 0][..]));
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(decode_csv("1,2\n3\n", false), Err(Error::Csv { line: 2, .. })));
        assert!(matches!(decode_csv("1,x\n", false), Err(Error::Csv { line: 1, .. })));
        assert!(matches!(decode_csv("1,inf\n", false), Err(Error::Validation { row: 0, .. })));
        assert!(decode_csv("", false).is_err());
    }

    #[test]
    fn split_by_label_partitions() {
        let s = EmbeddingSet::from_rows("s", &[[0f32], [1.], [2.], [3.]])
            .unwrap()
            .with_labels(vec![0, 1, 0, 1])
            .unwrap();
        let parts = split_by_label(&s).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[&0].as_slice(), &[0.0, 2.0]);
        assert_eq!(parts[&1].as_slice(), &[1.0, 3.0]);

        let one = s.clone().with_labels(vec![4; 4]).unwrap();
        let parts = split_by_label(&one).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[&4].as_slice(), one.as_slice());

        let unlabeled = EmbeddingSet::from_rows("u", &[[0f32]]).unwrap();
        let err = split_by_label(&unlabeled).unwrap_err();
        assert!(err.is_usage() && err.to_string().contains("k-means"));
    }

    #[test]
    fn save_to_unwritable_location_names_path() {
        let s = EmbeddingSet::from_rows("s", &[[1f32]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing").join("x.emb");
        let err = save_embeddings(&s, &p, Format::Binary).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("x.emb"));
    }

    fn arb_set() -> impl Strategy<Value = EmbeddingSet> {
        (1usize..12, 1usize..6, any::<bool>()).prop_flat_map(|(n, k, labeled)| {
            (
                proptest::collection::vec(-1e6f32..1e6, n * k),
                proptest::collection::vec(0u32..20, n),
            )
                .prop_map(move |(data, labels)| {
                    EmbeddingSet::new("p", n, k, data, labeled.then_some(labels)).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip(set in arb_set()) {
            let back = decode_binary(&encode_binary(&set)).unwrap().with_name("p");
            prop_assert_eq!(back, set);
        }

        #[test]
        fn csv_round_trip(set in arb_set()) {
            let labeled = set.labels().is_some();
            let back = decode_csv(&encode_csv(&set, labeled).unwrap(), labeled).unwrap();
            prop_assert_eq!(back.labels(), set.labels());
            for (a, b) in back.as_slice().iter().zip(set.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-30));
            }
        }

        #[test]
        fn split_conserves_rows(set in arb_set()) {
            if set.labels().is_some() {
                let parts = split_by_label(&set).unwrap();
                prop_assert_eq!(parts.values().map(EmbeddingSet::len).sum::<usize>(), set.len());
            }
        }
    }
}
