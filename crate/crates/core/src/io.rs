//! The project matrix format and small file helpers.
//!
//! Two encodings are accepted and detected by their first bytes:
//!
//! * CSV, one row per volume, with an optional non-numeric header row;
//! * binary: a 24-byte little-endian header followed by `T·V` row-major
//!   `f64` values.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SCRB"
//!      4     4  u32 T (rows)
//!      8     4  u32 V (columns)
//!     12     4  reserved, zero
//!     16     8  f64 tr_seconds
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SCRB";
pub const HEADER_LEN: usize = 24;

/// A matrix read from disk; `tr_seconds` is only known for binary files.
#[derive(Clone, Debug)]
pub struct MatrixFile {
    pub values: DMatrix<f64>,
    pub tr_seconds: Option<f64>,
    pub header: Option<Vec<String>>,
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixFile> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)
    } else {
        decode_csv(&bytes)
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<MatrixFile> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Parse("missing SCRB header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let rows = u32_at(4);
    let cols = u32_at(8);
    let tr = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = HEADER_LEN + rows * cols * 8;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "binary matrix {rows}x{cols} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(MatrixFile {
        values: DMatrix::from_row_slice(rows, cols, &data),
        tr_seconds: Some(tr),
        header: None,
    })
}

pub fn encode_binary(values: &DMatrix<f64>, tr_seconds: f64) -> Vec<u8> {
    let (rows, cols) = values.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(&tr_seconds.to_le_bytes());
    for r in 0..rows {
        for c in 0..cols {
            out.extend_from_slice(&values[(r, c)].to_le_bytes());
        }
    }
    out
}

pub fn decode_csv(bytes: &[u8]) -> Result<MatrixFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => header = Some(rec.iter().map(str::to_owned).collect()),
            Err(e) => return Err(Error::Parse(format!("row {}: {e}", i + 1))),
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Parse(format!("row {} has a different column count", bad + 1)));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(MatrixFile {
        values: DMatrix::from_row_slice(rows.len(), cols, &flat),
        tr_seconds: None,
        header,
    })
}

pub fn encode_csv(values: &DMatrix<f64>, header: Option<&[String]>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h).map_err(|e| Error::Parse(e.to_string()))?;
    }
    for r in 0..values.nrows() {
        let row: Vec<String> = values.row(r).iter().map(|v| format!("{v:?}")).collect();
        w.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

/// Write through a temporary sibling file and rename into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_binary(path: impl AsRef<Path>, values: &DMatrix<f64>, tr_seconds: f64) -> Result<()> {
    write_atomic(path, &encode_binary(values, tr_seconds))
}

pub fn write_csv(path: impl AsRef<Path>, values: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    write_atomic(path, &encode_csv(values, header)?)
}

/// Write `values` as binary when the extension is `.bin`/`.scrb`, CSV otherwise.
pub fn write_matrix(path: impl AsRef<Path>, values: &DMatrix<f64>, tr_seconds: f64) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("scrb") => write_binary(path, values, tr_seconds),
        _ => write_csv(path, values, None),
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
