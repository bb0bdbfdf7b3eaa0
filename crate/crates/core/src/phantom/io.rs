//! Little-endian `USIQ` container for channel data, focused IQ and envelopes.
//!
//! ```text
//! "USIQ" | version u32 | dims u32 x3 | c f0 fs pitch sector_step first_angle (f64 x6)
//! I payload (f32, [transmit][element][time]) | Q payload (same layout)
//! ```
//!
//! Derived products (focused IQ, envelopes) carry an optional trailing
//! `# role: <tag>\n` text comment after the payload.

use std::fs;
use std::path::Path;

use super::{ArrayGeometry, ChannelData, ScanGrid};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"USIQ";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 3 * 4 + 6 * 8;
const ROLE_PREFIX: &[u8] = b"# role: ";

fn encode(data: &ChannelData, role: Option<&str>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in [data.transmits, data.elements, data.samples] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let g = &data.geometry;
    for v in [
        g.speed_of_sound,
        g.carrier_frequency,
        g.sample_rate,
        g.pitch(),
        data.grid.sector_step,
        data.grid.first_angle(),
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in data.i.iter().chain(&data.q) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(tag) = role {
        buf.extend_from_slice(ROLE_PREFIX);
        buf.extend_from_slice(tag.as_bytes());
        buf.push(b'\n');
    }
    buf
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

fn f64_at(bytes: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap())
}

fn decode(bytes: &[u8]) -> Result<(ChannelData, Option<String>)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format("magic", "expected \"USIQ\""));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            "header",
            format!("file holds {} bytes, header needs {HEADER_LEN}", bytes.len()),
        ));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let transmits = u32_at(bytes, 8) as usize;
    let elements = u32_at(bytes, 12) as usize;
    let samples = u32_at(bytes, 16) as usize;
    if transmits == 0 || elements == 0 || samples == 0 {
        return Err(Error::format(
            "dims",
            format!("zero dimension in ({transmits}, {elements}, {samples})"),
        ));
    }
    let c = f64_at(bytes, 20);
    let f0 = f64_at(bytes, 28);
    let fs = f64_at(bytes, 36);
    let pitch = f64_at(bytes, 44);
    let step = f64_at(bytes, 52);
    let first = f64_at(bytes, 60);

    let count = transmits
        .checked_mul(elements)
        .and_then(|n| n.checked_mul(samples))
        .ok_or_else(|| Error::format("dims", "dimension product overflows"))?;
    let payload = 2 * 4 * count;
    let available = bytes.len() - HEADER_LEN;
    if available < payload {
        return Err(Error::format(
            "payload",
            format!("expected {payload} payload bytes for dims ({transmits}, {elements}, {samples}), found {available}"),
        ));
    }
    let trailer = &bytes[HEADER_LEN + payload..];
    let role = if trailer.is_empty() {
        None
    } else if trailer.starts_with(ROLE_PREFIX) && trailer.ends_with(b"\n") {
        let text = &trailer[ROLE_PREFIX.len()..trailer.len() - 1];
        Some(
            String::from_utf8(text.to_vec())
                .map_err(|_| Error::format("role", "role tag is not utf-8"))?,
        )
    } else {
        return Err(Error::format(
            "payload",
            format!("{} unexpected trailing bytes after payload", trailer.len()),
        ));
    };

    let geometry = if elements == 1 {
        let mut g = ArrayGeometry::new(1, 1.0, c, f0, fs, samples)
            .map_err(|e| Error::format("geometry", e.to_string()))?;
        g.element_positions = vec![0.0];
        g
    } else {
        ArrayGeometry::new(elements, pitch, c, f0, fs, samples)
            .map_err(|e| Error::format("geometry", e.to_string()))?
    };
    let grid = ScanGrid::with_first_angle(transmits, step, first)
        .map_err(|e| Error::format("sector_step", e.to_string()))?;

    let body = &bytes[HEADER_LEN..HEADER_LEN + payload];
    let mut values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    let i: Vec<f32> = values.by_ref().take(count).collect();
    let q: Vec<f32> = values.collect();
    let data = ChannelData {
        transmits,
        elements,
        samples,
        i,
        q,
        geometry,
        grid,
    };
    data.validate()
        .map_err(|e| Error::format("payload", e.to_string()))?;
    Ok((data, role))
}

pub fn write_dataset(data: &ChannelData, path: impl AsRef<Path>) -> Result<()> {
    data.validate()?;
    let path = path.as_ref();
    fs::write(path, encode(data, None)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<ChannelData> {
    read_tagged(path).map(|(d, _)| d)
}

/// Writes a derived product with a role tag (e.g. `focused_iq`, `envelope`).
pub fn write_tagged(data: &ChannelData, role: &str, path: impl AsRef<Path>) -> Result<()> {
    if role.contains('\n') {
        return Err(Error::format("role", "role tag must be a single line"));
    }
    data.validate()?;
    let path = path.as_ref();
    fs::write(path, encode(data, Some(role))).map_err(|e| Error::io(path, e))
}

pub fn read_tagged(path: impl AsRef<Path>) -> Result<(ChannelData, Option<String>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
