//! Bit-exact binary formats for feature matrices and label vectors,
//! with CSV fallbacks accepted on read.
//!
//! Feature file: magic `SFDAFEAT`, u32 LE version = 1, u64 LE N,
//! u64 LE D, then N·D float32 LE values in row-major order.
//!
//! Label file: magic `SFDALABL`, u32 LE version = 1, u64 LE N,
//! u32 LE C, then N u32 LE class ids, each < C.
//!
//! Values are stored as float32; everything is promoted to float64 as it
//! is read. Non-finite payloads are rejected with their byte offset.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"SFDAFEAT";
pub const LABEL_MAGIC: &[u8; 8] = b"SFDALABL";
pub const FORMAT_VERSION: u32 = 1;

const FEATURE_HEADER_LEN: u64 = 8 + 4 + 8 + 8;
const LABEL_HEADER_LEN: u64 = 8 + 4 + 8 + 4;

/// Labels parsed from disk. The binary format carries the class count;
/// the CSV fallback does not, so consumers fall back to the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFile {
    pub labels: Vec<usize>,
    pub declared_classes: Option<usize>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn looks_binary(bytes: &[u8], magic: &[u8; 8]) -> bool {
    bytes.len() >= 8 && &bytes[..8] == magic
}

/// CSV fallback applies to `.csv` / `.txt` files; anything else without
/// the magic is a malformed binary file.
fn is_text_extension(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some(ext) if ext.eq_ignore_ascii_case("csv") || ext.eq_ignore_ascii_case("txt")
    )
}

fn check_header(path: &Path, bytes: &[u8], magic: &'static [u8; 8], header_len: u64) -> Result<()> {
    if (bytes.len() as u64) < header_len {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            expected: header_len,
        });
    }
    if &bytes[..8] != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: std::str::from_utf8(magic).unwrap_or("?"),
            found: bytes[..8].to_vec(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported {
            path: path.to_path_buf(),
            version,
        });
    }
    Ok(())
}

/// Reads a feature matrix; accepts the binary format or a CSV fallback
/// (one comma-separated row per line).
pub fn read_feature_file(path: &Path) -> Result<Array2<f64>> {
    let bytes = read_bytes(path)?;
    if !looks_binary(&bytes, FEATURE_MAGIC) && is_text_extension(path) {
        return read_feature_csv(path, &bytes);
    }
    check_header(path, &bytes, FEATURE_MAGIC, FEATURE_HEADER_LEN)?;

    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let count = n.checked_mul(d).ok_or_else(|| Error::Malformed {
        path: path.to_path_buf(),
        message: format!("implausible shape {n}x{d}"),
    })?;
    let expected = FEATURE_HEADER_LEN + 4 * count;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            offset: actual,
            expected,
        });
    }
    if actual > expected {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            message: format!("{} trailing bytes after payload", actual - expected),
        });
    }

    let mut data = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let offset = FEATURE_HEADER_LEN as usize + 4 * i;
        let value = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        if !value.is_finite() {
            return Err(Error::NonFiniteValue {
                path: path.to_path_buf(),
                offset: offset as u64,
            });
        }
        data.push(value as f64);
    }
    Array2::from_shape_vec((n as usize, d as usize), data).map_err(|_| Error::Malformed {
        path: path.to_path_buf(),
        message: format!("shape {n}x{d} does not match payload"),
    })
}

fn read_feature_csv(path: &Path, bytes: &[u8]) -> Result<Array2<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Malformed {
        path: path.to_path_buf(),
        message: "neither a feature file nor UTF-8 CSV".to_string(),
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_index, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|field| {
                field.trim().parse::<f64>().map_err(|_| Error::Csv {
                    path: path.to_path_buf(),
                    line: line_index + 1,
                    message: format!("bad float '{}'", field.trim()),
                })
            })
            .collect::<Result<_>>()?;
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line: line_index + 1,
                message: "non-finite value".to_string(),
            });
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line: line_index + 1,
                    message: format!("expected {} fields, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            message: "empty feature CSV".to_string(),
        });
    }
    let d = rows[0].len();
    let n = rows.len();
    Ok(Array2::from_shape_vec((n, d), rows.concat()).expect("shape checked per row"))
}

/// Writes the binary feature format. Values are stored as float32 and
/// must be finite and representable at that width.
pub fn write_feature_file(path: &Path, features: &Array2<f64>) -> Result<()> {
    let (n, d) = features.dim();
    let mut bytes =
        Vec::with_capacity(FEATURE_HEADER_LEN as usize + 4 * n * d);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(n as u64).to_le_bytes());
    bytes.extend_from_slice(&(d as u64).to_le_bytes());
    for &value in features.iter() {
        let narrowed = value as f32;
        if !narrowed.is_finite() {
            return Err(Error::InvalidParameter {
                name: "features",
                message: format!("value {value} is not representable as a finite float32"),
            });
        }
        bytes.extend_from_slice(&narrowed.to_le_bytes());
    }
    write_file(path, &bytes)
}

/// Reads labels; accepts the binary format or a CSV fallback (one class
/// id per line).
pub fn read_labels(path: &Path) -> Result<LabelFile> {
    let bytes = read_bytes(path)?;
    if !looks_binary(&bytes, LABEL_MAGIC) && is_text_extension(path) {
        return read_labels_csv(path, &bytes);
    }
    check_header(path, &bytes, LABEL_MAGIC, LABEL_HEADER_LEN)?;

    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let c = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    let expected = LABEL_HEADER_LEN + 4 * n;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            offset: actual,
            expected,
        });
    }
    if actual > expected {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            message: format!("{} trailing bytes after payload", actual - expected),
        });
    }

    let mut labels = Vec::with_capacity(n as usize);
    for i in 0..n as usize {
        let offset = LABEL_HEADER_LEN as usize + 4 * i;
        let id = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        if id >= c {
            return Err(Error::LabelOutOfRange {
                index: i,
                label: id as usize,
                num_classes: c as usize,
            });
        }
        labels.push(id as usize);
    }
    Ok(LabelFile {
        labels,
        declared_classes: Some(c as usize),
    })
}

fn read_labels_csv(path: &Path, bytes: &[u8]) -> Result<LabelFile> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Malformed {
        path: path.to_path_buf(),
        message: "neither a label file nor UTF-8 CSV".to_string(),
    })?;
    let mut labels = Vec::new();
    for (line_index, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id: usize = line.parse().map_err(|_| Error::Csv {
            path: path.to_path_buf(),
            line: line_index + 1,
            message: format!("bad class id '{line}'"),
        })?;
        labels.push(id);
    }
    if labels.is_empty() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            message: "empty label CSV".to_string(),
        });
    }
    Ok(LabelFile {
        labels,
        declared_classes: None,
    })
}

/// Writes the binary label format.
pub fn write_label_file(path: &Path, labels: &[usize], num_classes: usize) -> Result<()> {
    let c = u32::try_from(num_classes).map_err(|_| Error::InvalidParameter {
        name: "num_classes",
        message: format!("{num_classes} exceeds the format's u32 range"),
    })?;
    let mut bytes = Vec::with_capacity(LABEL_HEADER_LEN as usize + 4 * labels.len());
    bytes.extend_from_slice(LABEL_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&c.to_le_bytes());
    for (index, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                num_classes,
            });
        }
        bytes.extend_from_slice(&(label as u32).to_le_bytes());
    }
    write_file(path, &bytes)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}
