//! On-disk encoding for demand and OD tensors.
//!
//! Binary file: 4 magic bytes (`VGDM` demand, `VGOD` OD), `u32` version,
//! two `u64` dims, then `u64` counts, all little-endian. A sidecar text file
//! `<path>.meta` holds `key=value` lines with the time axis and grid bounds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DemandTensor, GridSpec, IngestError, OdTensor};

const DEMAND_MAGIC: &[u8; 4] = b"VGDM";
const OD_MAGIC: &[u8; 4] = b"VGOD";
const VERSION: u32 = 1;

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn encode(magic: &[u8; 4], d0: usize, d1: usize, values: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + values.len() * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d0 as u64).to_le_bytes());
    out.extend_from_slice(&(d1 as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(magic: &[u8; 4], bytes: &[u8]) -> Result<(usize, usize, Vec<u64>), IngestError> {
    if bytes.len() < 24 || &bytes[..4] != magic {
        return Err(IngestError::Format(format!(
            "expected {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(IngestError::Format(format!("unsupported version {version}")));
    }
    let d0 = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d1 = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    if d0.checked_mul(d1).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(IngestError::Format(format!("{d0}x{d1} does not match {} payload bytes", body.len())));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((d0, d1, values))
}

fn grid_meta(grid: &Option<GridSpec>, out: &mut String) {
    if let Some(g) = grid {
        out.push_str(&format!("grid={}x{}\n", g.rows, g.cols));
        out.push_str(&format!("bounds={},{},{},{}\n", g.lat_min, g.lat_max, g.lon_min, g.lon_max));
    }
}

fn parse_meta(text: &str) -> Result<BTreeMap<String, String>, IngestError> {
    let mut map = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| IngestError::Format(format!("bad metadata line {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn field<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T, IngestError> {
    meta.get(key)
        .ok_or_else(|| IngestError::Format(format!("metadata missing {key}")))?
        .parse()
        .map_err(|_| IngestError::Format(format!("metadata {key} is not valid")))
}

/// Parses `ROWSxCOLS`.
pub fn parse_grid_dims(s: &str) -> Result<(usize, usize), IngestError> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| IngestError::InvalidGrid(format!("{s:?} is not ROWSxCOLS")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| IngestError::InvalidGrid(format!("{s:?} is not ROWSxCOLS")))
    };
    Ok((parse(r)?, parse(c)?))
}

/// Parses `lat_min,lat_max,lon_min,lon_max`.
pub fn parse_bounds(s: &str) -> Result<[f64; 4], IngestError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| IngestError::InvalidGrid(format!("bounds {s:?} are not four numbers")))?;
    parts
        .try_into()
        .map_err(|_| IngestError::InvalidGrid(format!("bounds {s:?} are not four numbers")))
}

fn read_grid(meta: &BTreeMap<String, String>) -> Result<Option<GridSpec>, IngestError> {
    let (Some(dims), Some(bounds)) = (meta.get("grid"), meta.get("bounds")) else {
        return Ok(None);
    };
    let (rows, cols) = parse_grid_dims(dims)?;
    let [a, b, c, d] = parse_bounds(bounds)?;
    Ok(Some(GridSpec::new(a, b, c, d, rows, cols)?))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    fs::write(path, bytes).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, IngestError> {
    fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn demand_meta(d: &DemandTensor) -> String {
    let mut m = format!(
        "kind=demand\nslots={}\nunits={}\nt0={}\nbin_width={}\n",
        d.slots(),
        d.units(),
        d.t0,
        d.bin_width
    );
    grid_meta(&d.grid, &mut m);
    m
}

pub fn write_demand(path: &Path, d: &DemandTensor) -> Result<(), IngestError> {
    write_file(path, &encode(DEMAND_MAGIC, d.slots(), d.units(), d.values()))?;
    write_file(&meta_path(path), demand_meta(d).as_bytes())
}

pub fn read_demand(path: &Path) -> Result<DemandTensor, IngestError> {
    let (slots, units, values) = decode(DEMAND_MAGIC, &read_file(path)?)?;
    let meta = parse_meta(&String::from_utf8_lossy(&read_file(&meta_path(path))?))?;
    let mut d = DemandTensor::new(slots, units, values, field(&meta, "bin_width")?, field(&meta, "t0")?)?;
    d.grid = read_grid(&meta)?;
    Ok(d)
}

pub fn write_od(path: &Path, od: &OdTensor) -> Result<(), IngestError> {
    write_file(path, &encode(OD_MAGIC, od.units(), od.units(), od.counts()))?;
    let mut m = format!("kind=od\nunits={}\nt0={}\nt1={}\n", od.units(), od.t0, od.t1);
    grid_meta(&od.grid, &mut m);
    write_file(&meta_path(path), m.as_bytes())
}

pub fn read_od(path: &Path) -> Result<OdTensor, IngestError> {
    let (units, cols, counts) = decode(OD_MAGIC, &read_file(path)?)?;
    if units != cols {
        return Err(IngestError::Format(format!("OD tensor is {units}x{cols}, not square")));
    }
    let meta = parse_meta(&String::from_utf8_lossy(&read_file(&meta_path(path))?))?;
    let mut od = OdTensor::new(units, counts, field(&meta, "t0")?, field(&meta, "t1")?)?;
    od.grid = read_grid(&meta)?;
    Ok(od)
}
