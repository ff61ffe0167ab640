//! File formats: binary netpbm images, raw matrix files, and CSV tables.
//!
//! Matrix files are `b"DMPSMAT1"`, then `rows` and `cols` as little-endian
//! `u64`, then `rows * cols` little-endian `f64` values in row-major order.
//!
//! Images are P5 (gray) or P6 (RGB) with maxval 255. Pixels map to `p / 255`
//! and are stored planar (`c * H * W + i * W + j`); saving clamps to `[0, 1]`
//! and rounds half away from zero.

use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, DmpsError, Result};
use crate::operators::ImageShape;

pub const MATRIX_MAGIC: &[u8; 8] = b"DMPSMAT1";
const MATRIX_HEADER: usize = 24;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| DmpsError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| DmpsError::io(path, e))
}

pub fn save_matrix(path: impl AsRef<Path>, matrix: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(DmpsError::NonFinite(format!("matrix for {}", path.display())));
    }
    let mut bytes = Vec::with_capacity(MATRIX_HEADER + 8 * matrix.len());
    bytes.extend_from_slice(MATRIX_MAGIC);
    bytes.extend_from_slice(&(matrix.nrows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(matrix.ncols() as u64).to_le_bytes());
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            bytes.extend_from_slice(&matrix[(i, j)].to_le_bytes());
        }
    }
    write_file(path, &bytes)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    if bytes.len() < MATRIX_MAGIC.len() || &bytes[..8] != MATRIX_MAGIC {
        return Err(DmpsError::BadMagic(path.to_path_buf()));
    }
    let size_err = |reason: String| DmpsError::SizeMismatch {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < MATRIX_HEADER {
        return Err(size_err(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(8), word(16));
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| size_err(format!("{rows} x {cols} overflows")))?;
    let found = bytes.len() - MATRIX_HEADER;
    if found != payload {
        return Err(size_err(format!(
            "{rows} x {cols} needs {payload} payload bytes, found {found}"
        )));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let values: Vec<f64> = bytes[MATRIX_HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(DmpsError::NonFinite(format!(
            "entry ({}, {}) of {}",
            pos / cols.max(1),
            pos % cols.max(1),
            path.display()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl HeaderReader<'_> {
    fn malformed(&self, reason: impl Into<String>) -> DmpsError {
        DmpsError::MalformedHeader {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.malformed(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| self.malformed(format!("{what} out of range")))
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<(ImageShape, DVector<f64>)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut reader = HeaderReader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(reader.malformed("expected P5 or P6")),
    };
    reader.pos = 2;
    let width = reader.number("width")? as usize;
    let height = reader.number("height")? as usize;
    let maxval = reader.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(reader.malformed(format!("dimensions {width} x {height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(reader.malformed(format!("maxval {maxval}")));
    }
    if maxval != 255 {
        return Err(DmpsError::UnsupportedMaxval(maxval));
    }
    match bytes.get(reader.pos) {
        Some(b) if b.is_ascii_whitespace() => reader.pos += 1,
        _ => return Err(reader.malformed("no whitespace after maxval")),
    }
    let shape = ImageShape::new(height, width, channels)?;
    let pixels = &bytes[reader.pos..];
    if pixels.len() < shape.len() {
        return Err(DmpsError::TruncatedPayload {
            path: path.to_path_buf(),
            expected: shape.len(),
            found: pixels.len(),
        });
    }
    let plane = shape.plane();
    let x = DVector::from_fn(shape.len(), |k, _| {
        let (c, p) = (k / plane, k % plane);
        f64::from(pixels[p * channels + c]) / 255.0
    });
    Ok((shape, x))
}

/// `[0, 1]` value to a byte: clamp, scale, round half away from zero.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image(path: impl AsRef<Path>, shape: ImageShape, x: &DVector<f64>) -> Result<()> {
    let path = path.as_ref();
    check_len("image", shape.len(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DmpsError::NonFinite(format!("image for {}", path.display())));
    }
    let magic = if shape.channels == 1 { "P5" } else { "P6" };
    let mut bytes = format!("{magic}\n{} {}\n255\n", shape.width, shape.height).into_bytes();
    let plane = shape.plane();
    for p in 0..plane {
        for c in 0..shape.channels {
            bytes.push(to_byte(x[c * plane + p]));
        }
    }
    write_file(path, &bytes)
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvValue {
    Float(f64),
    Int(i64),
    UInt(u64),
    Text(String),
}

impl CsvValue {
    /// Floats use 17 significant digits so they parse back bit-exactly.
    pub fn render(&self) -> String {
        match self {
            CsvValue::Float(v) => format!("{v:.16e}"),
            CsvValue::Int(v) => v.to_string(),
            CsvValue::UInt(v) => v.to_string(),
            CsvValue::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for CsvValue {
    fn from(v: f64) -> Self {
        CsvValue::Float(v)
    }
}

impl From<usize> for CsvValue {
    fn from(v: usize) -> Self {
        CsvValue::UInt(v as u64)
    }
}

impl From<u64> for CsvValue {
    fn from(v: u64) -> Self {
        CsvValue::UInt(v)
    }
}

impl From<i64> for CsvValue {
    fn from(v: i64) -> Self {
        CsvValue::Int(v)
    }
}

impl From<&str> for CsvValue {
    fn from(v: &str) -> Self {
        CsvValue::Text(v.to_string())
    }
}

impl From<String> for CsvValue {
    fn from(v: String) -> Self {
        CsvValue::Text(v)
    }
}

/// Writes a header and rows with RFC 4180 quoting. Every row must match the
/// header width; nothing is written otherwise.
pub fn write_csv<H: AsRef<str>>(path: impl AsRef<Path>, header: &[H], rows: &[Vec<CsvValue>]) -> Result<()> {
    let path = path.as_ref();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(DmpsError::CsvWidth {
                row: i,
                expected: header.len(),
                got: row.len(),
            });
        }
    }
    let file = File::create(path).map_err(|e| DmpsError::io(path, e))?;
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(file);
    writer.write_record(header.iter().map(|h| h.as_ref()))?;
    for row in rows {
        writer.write_record(row.iter().map(CsvValue::render))?;
    }
    writer.flush().map_err(|e| DmpsError::io(path, e))
}

#[cfg(test)]
mod tests;
