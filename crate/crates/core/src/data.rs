//! Labelled datasets on disk.
//!
//! A CSV dataset has a header row, one numeric column per feature and an
//! integer `label` column in any position. Image datasets may instead be a
//! directory of P5 graymaps listed in a `labels.csv` with columns `file,label`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::preprocess::{normalize, ByteImage, PreprocessError};
use crate::specgen::Sample;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("no `label` column")]
    NoLabel,
    #[error("line {line}, column {column:?}: {value:?} is not a number")]
    BadValue { line: u64, column: String, value: String },
    #[error("line {line}: label {value:?} is not a class index")]
    BadLabel { line: u64, value: String },
    #[error("row {row} has {got} features, expected {expected}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: PreprocessError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, DataError> {
        if rows.len() != labels.len() {
            return Err(DataError::LengthMismatch { rows: rows.len(), labels: labels.len() });
        }
        let d = feature_names.len();
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(DataError::Ragged { row, expected: d, got: r.len() });
        }
        Ok(Self { feature_names, rows, labels })
    }

    /// Features named `f0`, `f1`, ….
    pub fn unnamed(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, DataError> {
        let d = rows.first().map_or(0, Vec::len);
        Self::new((0..d).map(|i| format!("f{i}")).collect(), rows, labels)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn sample(&self, id: usize) -> Option<Sample> {
        Some(Sample { id, x: self.rows.get(id)?.clone(), label: self.labels[id] })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let label_col = headers.iter().position(|h| h == "label").ok_or(DataError::NoLabel)?;
        let feature_names: Vec<String> =
            headers.iter().enumerate().filter(|&(i, _)| i != label_col).map(|(_, h)| h.to_string()).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let mut row = Vec::with_capacity(feature_names.len());
            for (i, field) in rec.iter().enumerate() {
                if i == label_col {
                    let label =
                        field.parse::<usize>().map_err(|_| DataError::BadLabel { line, value: field.to_string() })?;
                    labels.push(label);
                } else {
                    let v = field.parse::<f64>().map_err(|_| DataError::BadValue {
                        line,
                        column: headers.get(i).unwrap_or_default().to_string(),
                        value: field.to_string(),
                    })?;
                    row.push(v);
                }
            }
            rows.push(row);
        }
        Self::new(feature_names, rows, labels)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, DataError> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        Self::read_csv(file)
    }

    /// Features first, `label` last. Values use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        w.write_record(&header)?;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| DataError::Csv(e.into()))?;
        Ok(())
    }

    pub fn to_csv_path(&self, path: &Path) -> Result<(), DataError> {
        let file = fs::File::create(path).map_err(io_err(path))?;
        self.write_csv(file)
    }

    /// Graymaps listed in `dir/labels.csv`, normalized to [0, 1]. All images
    /// must share one size.
    pub fn from_pgm_dir(dir: &Path) -> Result<Self, DataError> {
        let list = dir.join("labels.csv");
        let file = fs::File::open(&list).map_err(io_err(&list))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let name = rec.get(0).unwrap_or_default();
            let raw = rec.get(1).unwrap_or_default();
            let label = raw.parse::<usize>().map_err(|_| DataError::BadLabel { line, value: raw.to_string() })?;
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let img = ByteImage::from_pgm(&bytes).map_err(|source| DataError::Image { path, source })?;
            rows.push(normalize(&img));
            labels.push(label);
        }
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        Self::unnamed(rows, labels)
    }

    /// CSV file, or a graymap directory when `path` is a directory.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        if path.is_dir() {
            Self::from_pgm_dir(path)
        } else {
            Self::from_csv_path(path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let ds =
            Dataset::new(vec!["a".into(), "b".into()], vec![vec![0.1, -3.0e-12], vec![1.0 / 3.0, 2.0]], vec![1, 0])
                .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn label_column_anywhere() {
        let ds = Dataset::read_csv("label,x,y\n2,0.5,1\n0,1.5,-1\n".as_bytes()).unwrap();
        assert_eq!(ds.feature_names, vec!["x", "y"]);
        assert_eq!(ds.rows, vec![vec![0.5, 1.0], vec![1.5, -1.0]]);
        assert_eq!(ds.labels, vec![2, 0]);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.sample(1).unwrap().x, vec![1.5, -1.0]);
    }

    #[test]
    fn bad_csv() {
        assert!(matches!(Dataset::read_csv("x,y\n1,2\n".as_bytes()), Err(DataError::NoLabel)));
        assert!(matches!(Dataset::read_csv("x,label\nabc,0\n".as_bytes()), Err(DataError::BadValue { line: 2, .. })));
        assert!(matches!(Dataset::read_csv("x,label\n1,-1\n".as_bytes()), Err(DataError::BadLabel { .. })));
        assert!(Dataset::read_csv("x,label\n1,0,4\n".as_bytes()).is_err());
    }

    #[test]
    fn pgm_directory() {
        let dir = tempfile::tempdir().unwrap();
        for (name, px) in [("a.pgm", [0u8, 255]), ("b.pgm", [51, 102])] {
            let img = ByteImage::new(2, 1, px.to_vec()).unwrap();
            fs::write(dir.path().join(name), img.to_pgm()).unwrap();
        }
        fs::write(dir.path().join("labels.csv"), "file,label\na.pgm,0\nb.pgm,3\n").unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.rows, vec![vec![0.0, 1.0], vec![0.2, 0.4]]);
        assert_eq!(ds.labels, vec![0, 3]);
    }
}
