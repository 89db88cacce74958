//! Activation ingestion and serialization.
//!
//! Two on-disk formats. CSV: UTF-8, `.` decimal separator, optional header
//! row (detected by any cell in the first row failing to parse as a number),
//! optional label column. RawF64: a 16-byte header — the ASCII magic
//! `USIMMAT0`, then n and d as little-endian u32 — followed by exactly
//! 8·n·d bytes of little-endian f64 in row-major order; labels travel in a
//! sibling file at `<path>.labels`, one integer per line.
//!
//! All writes are atomic (write to a temp file in the target directory, then
//! rename) and numbers are written with 17 significant digits, so a CSV
//! round-trip reproduces every value bit for bit.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::data::RepresentationSet;
use crate::error::{Error, Result};
use crate::numeric::fmt_f64;

pub(crate) const RAW_MAGIC: &[u8; 8] = b"USIMMAT0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    RawF64,
}

/// Where labels live inside a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// Header name; requires a header row.
    Name(String),
    /// Zero-based column index, counted before the column is removed.
    Index(usize),
}

/// A matrix file plus everything needed to interpret it.
#[derive(Debug, Clone)]
pub struct MatrixFile {
    pub path: PathBuf,
    pub format: MatrixFormat,
    /// CSV only; RawF64 reads the `.labels` sibling automatically.
    pub label_col: Option<LabelColumn>,
    /// Expected (n, d) of the loaded matrix (after label extraction),
    /// validated when present.
    pub shape: Option<(usize, usize)>,
}

impl MatrixFile {
    pub fn new(path: impl Into<PathBuf>, format: MatrixFormat) -> Self {
        MatrixFile {
            path: path.into(),
            format,
            label_col: None,
            shape: None,
        }
    }

    /// Construct by sniffing the on-disk format from the magic bytes.
    pub fn sniffed(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let format = sniff_format(&path)?;
        Ok(MatrixFile::new(path, format))
    }

    pub fn with_label_col(mut self, col: LabelColumn) -> Self {
        self.label_col = Some(col);
        self
    }

    pub fn with_shape(mut self, n: usize, d: usize) -> Self {
        self.shape = Some((n, d));
        self
    }
}

/// RawF64 when the file starts with the magic bytes, CSV otherwise.
pub fn sniff_format(path: &Path) -> Result<MatrixFormat> {
    let bytes = std::fs::read(path)?;
    Ok(if bytes.starts_with(RAW_MAGIC) {
        MatrixFormat::RawF64
    } else {
        MatrixFormat::Csv
    })
}

fn set_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("matrix")
        .to_string()
}

fn labels_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".labels");
    PathBuf::from(os)
}

/// Loads a matrix file into a representation set, extracting labels when
/// configured (CSV) or when the sibling file exists (RawF64).
pub fn load_matrix(file: &MatrixFile) -> Result<RepresentationSet> {
    let set = match file.format {
        MatrixFormat::Csv => load_csv(file)?,
        MatrixFormat::RawF64 => load_raw(file)?,
    };
    if let Some((n, d)) = file.shape {
        if set.n() != n || set.d() != d {
            return Err(Error::ShapeMismatch(format!(
                "{} is {}×{} but {}×{} was declared",
                file.path.display(),
                set.n(),
                set.d(),
                n,
                d
            )));
        }
    }
    Ok(set)
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn csv_read_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(path, line, e.to_string())
}

fn load_csv(file: &MatrixFile) -> Result<RepresentationSet> {
    let path = &file.path;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_read_err(path, e))?;
    let mut records = Vec::new();
    for rec in rdr.records() {
        records.push(rec.map_err(|e| csv_read_err(path, e))?);
    }
    if records.is_empty() {
        return Err(parse_err(path, 0, "file has no rows"));
    }

    // Header detection: a first row that is all numbers is data.
    let has_header = records[0]
        .iter()
        .any(|cell| cell.trim().parse::<f64>().is_err());
    let header: Option<Vec<&str>> = has_header.then(|| records[0].iter().collect());
    let data = &records[has_header as usize..];
    if data.is_empty() {
        return Err(parse_err(path, 1, "header row but no data rows"));
    }
    let width = data[0].len();

    let label_idx = match &file.label_col {
        None => None,
        Some(LabelColumn::Index(i)) => {
            if *i >= width {
                return Err(Error::MissingLabels(format!(
                    "label column {i} out of range for {width} columns"
                )));
            }
            Some(*i)
        }
        Some(LabelColumn::Name(name)) => {
            let header = header.as_ref().ok_or_else(|| {
                Error::MissingLabels(format!(
                    "label column '{name}' requested but {} has no header row",
                    path.display()
                ))
            })?;
            Some(header.iter().position(|c| c == name).ok_or_else(|| {
                Error::MissingLabels(format!("no column named '{name}' in {}", path.display()))
            })?)
        }
    };

    let n = data.len();
    let d = width - usize::from(label_idx.is_some());
    let mut values = Vec::with_capacity(n * d);
    let mut labels = label_idx.map(|_| Vec::with_capacity(n));
    for rec in data {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(path, line, format!("cell '{cell}' in column {} is not a number", j + 1))
            })?;
            if Some(j) == label_idx {
                if !v.is_finite() || v.fract() != 0.0 || v < 0.0 {
                    return Err(parse_err(
                        path,
                        line,
                        format!("label '{cell}' in column {} is not a nonnegative integer", j + 1),
                    ));
                }
                labels.as_mut().expect("label buffer").push(v as usize);
            } else {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        location: format!("{}: row {line}, column {}", path.display(), j + 1),
                    });
                }
                values.push(v);
            }
        }
    }
    let matrix = DMatrix::from_row_iterator(n, d, values);
    RepresentationSet::new(set_name(path), matrix, labels)
}

fn load_raw(file: &MatrixFile) -> Result<RepresentationSet> {
    let path = &file.path;
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 {
        return Err(parse_err(path, 0, "shorter than the 16-byte header"));
    }
    if &bytes[..8] != RAW_MAGIC {
        return Err(parse_err(path, 0, "bad magic; not a RawF64 matrix file"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let expected = 16 + 8 * n * d;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            0,
            format!("{}×{} needs exactly {} bytes, found {}", n, d, expected, bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(n * d);
    for (k, chunk) in bytes[16..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::NonFinite {
                location: format!(
                    "{}: row {}, column {}",
                    path.display(),
                    k / d + 1,
                    k % d + 1
                ),
            });
        }
        values.push(v);
    }
    let matrix = DMatrix::from_row_iterator(n, d, values);

    let sibling = labels_path(path);
    let labels = if sibling.exists() {
        Some(load_labels(&sibling, n)?)
    } else if file.label_col.is_some() {
        return Err(Error::MissingLabels(format!(
            "labels requested but {} does not exist",
            sibling.display()
        )));
    } else {
        None
    };
    RepresentationSet::new(set_name(path), matrix, labels)
}

fn load_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::with_capacity(n);
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        labels.push(trimmed.parse::<usize>().map_err(|_| {
            parse_err(
                path,
                i as u64 + 1,
                format!("label '{trimmed}' is not a nonnegative integer"),
            )
        })?);
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} labels for {} rows",
            path.display(),
            labels.len(),
            n
        )));
    }
    Ok(labels)
}

/// Writes a CSV with header columns `c0..c{d-1}` (plus `label` when labels
/// exist), 17 significant digits per value.
pub fn save_csv(set: &RepresentationSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..set.d()).map(|j| format!("c{j}")).collect();
    if set.labels().is_some() {
        header.push("label".to_string());
    }
    w.write_record(&header)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for i in 0..set.n() {
        let mut row: Vec<String> = (0..set.d()).map(|j| fmt_f64(set.data()[(i, j)])).collect();
        if let Some(labels) = set.labels() {
            row.push(labels[i].to_string());
        }
        w.write_record(&row)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    write_atomic(path, &bytes)
}

/// Writes the RawF64 format; labels (when present) go to the `.labels`
/// sibling.
pub fn save_raw(set: &RepresentationSet, path: &Path) -> Result<()> {
    if set.n() > u32::MAX as usize || set.d() > u32::MAX as usize {
        return Err(Error::InvalidData(
            "matrix dimensions exceed the u32 header range".into(),
        ));
    }
    let mut bytes = Vec::with_capacity(16 + 8 * set.n() * set.d());
    bytes.extend_from_slice(RAW_MAGIC);
    bytes.extend_from_slice(&(set.n() as u32).to_le_bytes());
    bytes.extend_from_slice(&(set.d() as u32).to_le_bytes());
    for i in 0..set.n() {
        for j in 0..set.d() {
            bytes.extend_from_slice(&set.data()[(i, j)].to_le_bytes());
        }
    }
    write_atomic(path, &bytes)?;
    if let Some(labels) = set.labels() {
        let mut text = String::new();
        for l in labels {
            text.push_str(&l.to_string());
            text.push('\n');
        }
        write_atomic(&labels_path(path), text.as_bytes())?;
    }
    Ok(())
}

/// Write-temp-then-rename in the destination directory, creating it first
/// when missing; readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    fn awkward_set() -> RepresentationSet {
        let m = DMatrix::from_row_slice(
            3,
            2,
            &[
                0.30000000000000004,
                -0.0,
                1e-300,
                98765.4321098765,
                -1.7976931348623157e308,
                5e-324,
            ],
        );
        RepresentationSet::new("awkward", m, Some(vec![0, 2, 1])).unwrap()
    }

    #[test]
    fn csv_with_header_loads_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "a,b\n1,2\n3,4\n");
        let set = load_matrix(&MatrixFile::new(&p, MatrixFormat::Csv)).unwrap();
        assert_eq!(set.n(), 2);
        assert_eq!(set.d(), 2);
        assert_eq!(set.data()[(0, 0)], 1.0);
        assert_eq!(set.data()[(1, 1)], 4.0);
        assert_eq!(set.name(), "m");
        assert!(set.labels().is_none());
    }

    #[test]
    fn headerless_csv_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "1.5,2\n3,4\n5,6\n");
        let set = load_matrix(&MatrixFile::new(&p, MatrixFormat::Csv)).unwrap();
        assert_eq!((set.n(), set.d()), (3, 2));
        assert_eq!(set.data()[(0, 0)], 1.5);
    }

    #[test]
    fn nan_cell_reports_exact_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "a,b,c\n1,2,3\n4,NaN,6\n");
        let err = load_matrix(&MatrixFile::new(&p, MatrixFormat::Csv)).unwrap_err();
        assert_eq!(err.code(), "E_NONFINITE");
        let msg = err.to_string();
        assert!(msg.contains("row 3"), "message was: {msg}");
        assert!(msg.contains("column 2"), "message was: {msg}");
    }

    #[test]
    fn bad_cell_is_a_parse_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "a,b\n1,2\nx,4\n");
        let err = load_matrix(&MatrixFile::new(&p, MatrixFormat::Csv)).unwrap_err();
        assert_eq!(err.code(), "E_PARSE");
        assert!(err.to_string().contains(":3:"), "message was: {err}");
    }

    #[test]
    fn ragged_rows_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "1,2\n3,4,5\n");
        let err = load_matrix(&MatrixFile::new(&p, MatrixFormat::Csv)).unwrap_err();
        assert_eq!(err.code(), "E_PARSE");
    }

    #[test]
    fn label_column_by_name_and_by_index() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "x,y,label\n0.5,1.5,0\n2.5,3.5,1\n4.5,5.5,0\n");
        let by_name = load_matrix(
            &MatrixFile::new(&p, MatrixFormat::Csv)
                .with_label_col(LabelColumn::Name("label".into())),
        )
        .unwrap();
        assert_eq!((by_name.n(), by_name.d()), (3, 2));
        assert_eq!(by_name.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(by_name.data()[(1, 1)], 3.5);

        let by_index = load_matrix(
            &MatrixFile::new(&p, MatrixFormat::Csv).with_label_col(LabelColumn::Index(2)),
        )
        .unwrap();
        assert_eq!(by_index.data(), by_name.data());
        assert_eq!(by_index.labels(), by_name.labels());
    }

    #[test]
    fn label_by_name_needs_a_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "1,2,0\n3,4,1\n");
        let err = load_matrix(
            &MatrixFile::new(&p, MatrixFormat::Csv)
                .with_label_col(LabelColumn::Name("label".into())),
        )
        .unwrap_err();
        assert_eq!(err.code(), "E_MISSING_LABELS");
    }

    #[test]
    fn fractional_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "x,label\n1,0.5\n2,1\n");
        let err = load_matrix(
            &MatrixFile::new(&p, MatrixFormat::Csv).with_label_col(LabelColumn::Index(1)),
        )
        .unwrap_err();
        assert_eq!(err.code(), "E_PARSE");
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let set = awkward_set();
        let p = dir.path().join("m.bin");
        save_raw(&set, &p).unwrap();
        let back = load_matrix(&MatrixFile::new(&p, MatrixFormat::RawF64)).unwrap();
        for (a, b) in set.data().iter().zip(back.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.labels().unwrap(), set.labels().unwrap());

        // save(load(x)) reproduces the file bytes exactly
        let p2 = dir.path().join("m2.bin");
        save_raw(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(
            std::fs::read(labels_path(&p)).unwrap(),
            std::fs::read(labels_path(&p2)).unwrap()
        );
    }

    #[test]
    fn raw_rejects_bad_magic_and_bad_length() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, b"NOTMAGIC\x01\x00\x00\x00\x01\x00\x00\x00AAAAAAAA").unwrap();
        let err = load_matrix(&MatrixFile::new(&p, MatrixFormat::RawF64)).unwrap_err();
        assert_eq!(err.code(), "E_PARSE");

        let mut bytes = Vec::new();
        bytes.extend_from_slice(RAW_MAGIC);
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8 * 5]); // one value short
        let p = dir.path().join("short.bin");
        std::fs::write(&p, &bytes).unwrap();
        let err = load_matrix(&MatrixFile::new(&p, MatrixFormat::RawF64)).unwrap_err();
        assert_eq!(err.code(), "E_PARSE");
    }

    #[test]
    fn declared_shape_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "1,2\n3,4\n");
        let ok = load_matrix(&MatrixFile::new(&p, MatrixFormat::Csv).with_shape(2, 2));
        assert!(ok.is_ok());
        let err =
            load_matrix(&MatrixFile::new(&p, MatrixFormat::Csv).with_shape(3, 2)).unwrap_err();
        assert_eq!(err.code(), "E_SHAPE_MISMATCH");
    }

    #[test]
    fn csv_round_trip_reproduces_bits() {
        let dir = tempfile::tempdir().unwrap();
        let set = awkward_set();
        let p = dir.path().join("m.csv");
        save_csv(&set, &p).unwrap();
        let back = load_matrix(
            &MatrixFile::new(&p, MatrixFormat::Csv)
                .with_label_col(LabelColumn::Name("label".into())),
        )
        .unwrap();
        assert_eq!((back.n(), back.d()), (3, 2));
        for (a, b) in set.data().iter().zip(back.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
        assert_eq!(back.labels().unwrap(), set.labels().unwrap());
    }

    #[test]
    fn sniffing_tells_the_formats_apart() {
        let dir = tempfile::tempdir().unwrap();
        let set = awkward_set();
        let raw = dir.path().join("m.bin");
        save_raw(&set, &raw).unwrap();
        assert_eq!(sniff_format(&raw).unwrap(), MatrixFormat::RawF64);
        let csv = write(dir.path(), "m.csv", "1,2\n3,4\n");
        assert_eq!(sniff_format(&csv).unwrap(), MatrixFormat::Csv);
    }

    #[test]
    fn atomic_write_replaces_existing_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second");
    }

    #[test]
    fn missing_labels_sibling_with_label_request_fails() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let set = RepresentationSet::new("x", m, None).unwrap();
        let p = dir.path().join("m.bin");
        save_raw(&set, &p).unwrap();
        let err = load_matrix(
            &MatrixFile::new(&p, MatrixFormat::RawF64).with_label_col(LabelColumn::Index(0)),
        )
        .unwrap_err();
        assert_eq!(err.code(), "E_MISSING_LABELS");
    }
}
