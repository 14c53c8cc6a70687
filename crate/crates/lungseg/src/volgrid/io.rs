//! RVOL1: a minimal raw volume format.
//!
//! ASCII header, one field per line, then the payload:
//!
//! ```text
//! RVOL1
//! dtype int16|uint8
//! dims Z Y X
//! spacing SZ SY SX
//! data raw-le
//! <blank line>
//! <Z*Y*X values, little-endian, x-fastest>
//! ```
//!
//! Files written here round-trip bit-exactly: `save(load(f)) == f` and
//! `load(save(v)) == v`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{validate_labels, Dims3, LabelVolume, Spacing3, VolError, Volume3};

const MAGIC: &str = "RVOL1";

struct Header {
    dtype: String,
    dims: Dims3,
    spacing: Spacing3,
    payload_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, VolError> {
    let mut offset = 0usize;
    let mut lines = Vec::new();
    // Header is pure ASCII terminated by a blank line.
    while lines.len() < 6 {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| VolError::MalformedHeader("unterminated header".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| VolError::MalformedHeader("non-ASCII header".into()))?;
        offset += nl + 1;
        lines.push(line.to_string());
    }
    if lines[0] != MAGIC {
        return Err(VolError::MalformedHeader(format!(
            "bad magic {:?}, expected {MAGIC:?}",
            lines[0]
        )));
    }
    let dtype = lines[1]
        .strip_prefix("dtype ")
        .ok_or_else(|| VolError::MalformedHeader("missing dtype line".into()))?
        .to_string();
    if dtype != "int16" && dtype != "uint8" {
        return Err(VolError::MalformedHeader(format!("unknown dtype {dtype:?}")));
    }
    let dims_fields = lines[2]
        .strip_prefix("dims ")
        .ok_or_else(|| VolError::MalformedHeader("missing dims line".into()))?
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| VolError::MalformedHeader(format!("bad dims: {e}")))?;
    if dims_fields.len() != 3 {
        return Err(VolError::MalformedHeader("dims needs 3 fields".into()));
    }
    let dims = Dims3::new(dims_fields[0], dims_fields[1], dims_fields[2])?;
    let sp_fields = lines[3]
        .strip_prefix("spacing ")
        .ok_or_else(|| VolError::MalformedHeader("missing spacing line".into()))?
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| VolError::MalformedHeader(format!("bad spacing: {e}")))?;
    if sp_fields.len() != 3 {
        return Err(VolError::MalformedHeader("spacing needs 3 fields".into()));
    }
    let spacing = Spacing3::new(sp_fields[0], sp_fields[1], sp_fields[2])?;
    if lines[4] != "data raw-le" {
        return Err(VolError::MalformedHeader(format!(
            "bad data line {:?}",
            lines[4]
        )));
    }
    if !lines[5].is_empty() {
        return Err(VolError::MalformedHeader(
            "missing blank line before payload".into(),
        ));
    }
    Ok(Header {
        dtype,
        dims,
        spacing,
        payload_offset: offset,
    })
}

fn write_header(out: &mut Vec<u8>, dtype: &str, dims: Dims3, spacing: Spacing3) {
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    let _ = writeln!(out, "dtype {dtype}");
    let _ = writeln!(out, "dims {} {} {}", dims.z, dims.y, dims.x);
    let _ = writeln!(out, "spacing {} {} {}", spacing.z, spacing.y, spacing.x);
    let _ = writeln!(out, "data raw-le");
    out.push(b'\n');
}

fn check_payload_len(
    bytes: &[u8],
    offset: usize,
    count: usize,
    elem: usize,
) -> Result<(), VolError> {
    let expected = count * elem;
    let found = bytes.len() - offset;
    if found < expected {
        return Err(VolError::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(VolError::TrailingData(found - expected));
    }
    Ok(())
}

/// Load an int16 RVOL1 volume.
pub fn load_volume(path: &Path) -> Result<Volume3, VolError> {
    let bytes = fs::read(path)?;
    decode_volume(&bytes)
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume3, VolError> {
    let header = parse_header(bytes)?;
    if header.dtype != "int16" {
        return Err(VolError::DtypeMismatch {
            expected: "int16",
            found: header.dtype,
        });
    }
    check_payload_len(bytes, header.payload_offset, header.dims.count(), 2)?;
    let values = bytes[header.payload_offset..]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Volume3::new(header.dims, header.spacing, values)
}

/// Save an int16 RVOL1 volume.
pub fn save_volume(v: &Volume3, path: &Path) -> Result<(), VolError> {
    fs::write(path, encode_volume(v))?;
    Ok(())
}

pub fn encode_volume(v: &Volume3) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + v.values().len() * 2);
    write_header(&mut out, "int16", v.dims(), v.spacing());
    for &val in v.values() {
        out.extend_from_slice(&val.to_le_bytes());
    }
    out
}

/// Load a uint8 RVOL1 label volume.
pub fn load_mask(path: &Path) -> Result<LabelVolume, VolError> {
    let bytes = fs::read(path)?;
    decode_mask(&bytes)
}

pub fn decode_mask(bytes: &[u8]) -> Result<LabelVolume, VolError> {
    let header = parse_header(bytes)?;
    if header.dtype != "uint8" {
        return Err(VolError::DtypeMismatch {
            expected: "uint8",
            found: header.dtype,
        });
    }
    check_payload_len(bytes, header.payload_offset, header.dims.count(), 1)?;
    let labels = bytes[header.payload_offset..].to_vec();
    LabelVolume::new(header.dims, header.spacing, labels)
}

/// Save a uint8 RVOL1 label volume. Labels are re-validated before writing
/// so a corrupted mask can never reach disk.
pub fn save_mask(m: &LabelVolume, path: &Path) -> Result<(), VolError> {
    validate_labels(m.labels())?;
    let mut out = Vec::with_capacity(64 + m.labels().len());
    write_header(&mut out, "uint8", m.dims(), m.spacing());
    out.extend_from_slice(m.labels());
    fs::write(path, out)?;
    Ok(())
}

/// Parse only the header, checking magic/dtype/dims/spacing. Used for cheap
/// manifest validation without reading payloads into memory.
pub fn probe_dtype(path: &Path) -> Result<&'static str, VolError> {
    let mut bytes = vec![0u8; 256];
    let file_len = {
        use std::io::Read;
        let mut f = fs::File::open(path)?;
        f.read(&mut bytes)?
    };
    bytes.truncate(file_len);
    // A valid header always fits in 256 bytes; ensure the blank line exists.
    let header = parse_header(&bytes)?;
    Ok(if header.dtype == "int16" {
        "int16"
    } else {
        "uint8"
    })
}
