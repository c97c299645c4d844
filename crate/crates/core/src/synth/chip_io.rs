//! `SICC1` chip container.
//!
//! ```text
//! "SICC1"
//! u32 side | u8 sensor | u32 channels | u32 grids | u32 scene id | u8 split | u64 seed
//! grids x (u32 name length, name, side*side little-endian f32)
//! ```
//!
//! Grids are the channels `ch0..`, then `weak_label`, `class`, `truth` and `coverage`.

use std::path::Path;

use super::dataset::{ChipRecord, Split};
use super::sensors::Sensor;
use crate::container::{put_u32, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::train::ConfidenceClass;

pub const CHIP_MAGIC: &str = "SICC1";

const EXTRA_GRIDS: [&str; 4] = ["weak_label", "class", "truth", "coverage"];

pub fn encode_chip(r: &ChipRecord) -> Vec<u8> {
    let n = r.side * r.side;
    let mut out = Vec::with_capacity(32 + (r.channels.len() + 4) * (n * 4 + 16));
    out.extend_from_slice(CHIP_MAGIC.as_bytes());
    put_u32(&mut out, r.side);
    out.push(r.sensor.code());
    put_u32(&mut out, r.channels.len());
    put_u32(&mut out, r.channels.len() + EXTRA_GRIDS.len());
    put_u32(&mut out, r.scene_id);
    out.push(r.split.code());
    out.extend_from_slice(&r.seed.to_le_bytes());
    let class: Vec<f32> = r.classes.iter().map(|c| c.code() as f32).collect();
    let coverage: Vec<f32> = r.coverage.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    let mut grid = |name: &str, data: &[f32]| {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (i, c) in r.channels.iter().enumerate() {
        grid(&format!("ch{i}"), c);
    }
    grid("weak_label", &r.weak_label);
    grid("class", &class);
    grid("truth", &r.truth);
    grid("coverage", &coverage);
    out
}

pub fn decode_chip(bytes: &[u8], path: &Path) -> Result<ChipRecord> {
    let dim = |detail: String| Error::FormatDimension { path: path.to_path_buf(), detail };
    let mut r = Reader { bytes, pos: 0, path };
    if bytes.len() < CHIP_MAGIC.len() && CHIP_MAGIC.as_bytes().starts_with(bytes) {
        return Err(Error::Truncated { path: path.to_path_buf(), what: "magic".into() });
    }
    if r.take(CHIP_MAGIC.len(), "magic").ok() != Some(CHIP_MAGIC.as_bytes()) {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: CHIP_MAGIC });
    }
    let side = r.u32("chip side")?;
    let sensor_code = r.take(1, "sensor tag")?[0];
    let sensor = Sensor::from_code(sensor_code).ok_or_else(|| r.malformed(&format!("sensor tag {sensor_code}")))?;
    let channels = r.u32("channel count")?;
    let grids = r.u32("grid count")?;
    let scene_id = r.u32("scene id")?;
    let split_code = r.take(1, "split tag")?[0];
    let split = Split::from_code(split_code).ok_or_else(|| r.malformed(&format!("split tag {split_code}")))?;
    let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().expect("8 bytes"));
    if side == 0 || side > 1 << 14 {
        return Err(dim(format!("chip side {side}")));
    }
    if channels != sensor.channels() {
        return Err(dim(format!("{sensor} chips have {} channels, header says {channels}", sensor.channels())));
    }
    if grids != channels + EXTRA_GRIDS.len() {
        return Err(dim(format!("{grids} grids for {channels} channels")));
    }
    let n = side * side;
    let mut data = Vec::with_capacity(grids);
    for g in 0..grids {
        let expected = if g < channels { format!("ch{g}") } else { EXTRA_GRIDS[g - channels].to_string() };
        let name_len = r.u32("grid name length")?;
        let name = r.take(name_len, "grid name")?;
        if name != expected.as_bytes() {
            return Err(r.malformed(&format!("grid {g} is `{}`, expected `{expected}`", String::from_utf8_lossy(name))));
        }
        let raw = r.take(n * 4, &format!("grid `{expected}`"))?;
        let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(r.malformed(&format!("grid `{expected}` holds non-finite values")));
        }
        data.push(values);
    }
    if r.pos != bytes.len() {
        return Err(r.malformed("trailing bytes after last grid"));
    }
    let coverage = data.pop().expect("coverage grid");
    let truth = data.pop().expect("truth grid");
    let class = data.pop().expect("class grid");
    let weak_label = data.pop().expect("label grid");
    let classes = class
        .iter()
        .map(|&c| ConfidenceClass::from_code(c as u8).filter(|_| c.fract() == 0.0 && c >= 0.0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| r.malformed("class grid holds an unknown code"))?;
    if coverage.iter().any(|&c| c != 0.0 && c != 1.0) {
        return Err(r.malformed("coverage grid is not binary"));
    }
    Ok(ChipRecord {
        scene_id,
        split,
        seed,
        sensor,
        side,
        channels: data,
        weak_label,
        classes,
        truth,
        coverage: coverage.iter().map(|&c| c == 1.0).collect(),
    })
}

pub fn write_chip(path: &Path, r: &ChipRecord) -> Result<()> {
    write_atomic(path, &encode_chip(r))
}

pub fn read_chip(path: &Path) -> Result<ChipRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_chip(&bytes, path)
}
