//! Matrix files and CSV export.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FMMX"
//! 4       4     dtype u32: 1 = real f64, 2 = complex f64 (re, im interleaved)
//! 8       8     rows u64
//! 16      8     cols u64
//! 24      ...   entries in row-major order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::{CMatrix, RMatrix};

pub const MAGIC: &[u8; 4] = b"FMMX";
const DTYPE_REAL: u32 = 1;
const DTYPE_COMPLEX: u32 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum StoredMatrix {
    Real(RMatrix),
    Complex(CMatrix),
}

fn write_header(w: &mut impl Write, dtype: u32, rows: usize, cols: usize) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&dtype.to_le_bytes())?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_cmatrix(path: impl AsRef<Path>, m: &CMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write_header(w, DTYPE_COMPLEX, m.nrows(), m.ncols())?;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        w.flush()
    };
    run(&mut w).map_err(|e| Error::io(path, e))
}

pub fn write_rmatrix(path: impl AsRef<Path>, m: &RMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write_header(w, DTYPE_REAL, m.nrows(), m.ncols())?;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                w.write_all(&m[(r, c)].to_le_bytes())?;
            }
        }
        w.flush()
    };
    run(&mut w).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<StoredMatrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .map(BufReader::new)
        .and_then(|mut r| r.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 {
        return Err(parse_err(path, format!("file is {} bytes, shorter than the 24-byte header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(parse_err(path, format!("bad magic {:?}", &bytes[0..4])));
    }
    let dtype = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let per = match dtype {
        DTYPE_REAL => 1,
        DTYPE_COMPLEX => 2,
        other => return Err(parse_err(path, format!("unknown dtype {other} in header"))),
    };
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8 * per))
        .ok_or_else(|| parse_err(path, format!("header shape {rows}x{cols} overflows")))?;
    let body = &bytes[24..];
    if body.len() != expected {
        return Err(parse_err(
            path,
            format!("{rows}x{cols} dtype {dtype} needs {expected} data bytes, found {}", body.len()),
        ));
    }
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(if per == 1 {
        StoredMatrix::Real(RMatrix::from_row_slice(rows, cols, &vals))
    } else {
        let cvals: Vec<Complex64> = vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        StoredMatrix::Complex(CMatrix::from_row_slice(rows, cols, &cvals))
    })
}

pub fn read_cmatrix(path: impl AsRef<Path>) -> Result<CMatrix> {
    let path = path.as_ref();
    match read_matrix(path)? {
        StoredMatrix::Complex(m) => Ok(m),
        StoredMatrix::Real(_) => Err(parse_err(path, "expected a complex matrix, found real")),
    }
}

pub fn read_rmatrix(path: impl AsRef<Path>) -> Result<RMatrix> {
    let path = path.as_ref();
    match read_matrix(path)? {
        StoredMatrix::Real(m) => Ok(m),
        StoredMatrix::Complex(_) => Err(parse_err(path, "expected a real matrix, found complex")),
    }
}

/// Shortest round-tripping text: plain decimals in the everyday range,
/// exponent form outside it.
fn csv_number(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Write rows of numbers with an optional header line.
pub fn write_csv<I, R>(path: impl AsRef<Path>, header: Option<&[&str]>, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = f64>,
{
    let path = path.as_ref();
    let w = create(path)?;
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    let wrap = |e: csv::Error| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(h) = header {
        out.write_record(h).map_err(wrap)?;
    }
    for row in rows {
        let fields: Vec<String> = row.into_iter().map(csv_number).collect();
        out.write_record(&fields).map_err(wrap)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// A real matrix as CSV, one line per row.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &RMatrix) -> Result<()> {
    write_csv(path, None, m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()))
}

/// A complex matrix as CSV with `re,im` pairs per entry. Meant for small
/// matrices.
pub fn write_cmatrix_csv(path: impl AsRef<Path>, m: &CMatrix) -> Result<()> {
    write_csv(
        path,
        None,
        m.row_iter().map(|r| r.iter().flat_map(|z| [z.re, z.im]).collect::<Vec<_>>()),
    )
}

/// Read a numeric CSV (optional non-numeric header) back into rows.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(path, e.to_string()))?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(parse_err(path, format!("line {}: {e}", line + 1))),
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = CMatrix::from_fn(3, 5, |r, c| Complex64::new((r as f64).sin() / 3.0, -(c as f64) * 1e-300));
        let p = dir.path().join("m.fmx");
        write_cmatrix(&p, &m).unwrap();
        let back = read_cmatrix(&p).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 24 + 3 * 5 * 16);
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.fmx");
        write_rmatrix(&p, &RMatrix::from_row_slice(1, 2, &[1.5, -2.0])).unwrap();
        let b = std::fs::read(&p).unwrap();
        assert_eq!(&b[0..4], b"FMMX");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 1.5);
    }

    #[test]
    fn malformed_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.fmx");
        std::fs::write(&p, b"NOPE0000").unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Parse { .. })));
        let mut good = Vec::new();
        good.extend_from_slice(MAGIC);
        good.extend_from_slice(&2u32.to_le_bytes());
        good.extend_from_slice(&2u64.to_le_bytes());
        good.extend_from_slice(&2u64.to_le_bytes());
        good.extend_from_slice(&[0u8; 16]);
        std::fs::write(&p, &good).unwrap();
        let err = read_matrix(&p).unwrap_err().to_string();
        assert!(err.contains("64 data bytes"), "{err}");
        let r = dir.path().join("r.fmx");
        write_rmatrix(&r, &RMatrix::zeros(1, 1)).unwrap();
        assert!(read_cmatrix(&r).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = RMatrix::from_row_slice(2, 3, &[1.0, 2.5, -3.0, 0.1, 1e-12, 7.0]);
        write_matrix_csv(&p, &m).unwrap();
        let rows = read_csv(&p).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.5, -3.0], vec![0.1, 1e-12, 7.0]]);
        write_csv(&p, Some(&["a", "b"]), vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(read_csv(&p).unwrap(), vec![vec![1.0, 2.0]]);
    }
}
