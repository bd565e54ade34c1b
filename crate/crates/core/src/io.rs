//! Field and trajectory export in CSV and `raw64`.
//!
//! `raw64` layout (all integers little-endian):
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..8   | magic `NLOCOC01`                          |
//! | 8..12  | `u32` spatial dimension (1 or 2)          |
//! | 12..16 | `u32` cells along x                       |
//! | 16..20 | `u32` cells along y (1 for 1D)            |
//! | 20..24 | `u32` snapshot count                      |
//! | 24..32 | `u64` total number of values that follow  |
//!
//! followed by `f64` values, snapshot after snapshot, each in row-major
//! order (x fastest). Domain extents are not stored; readers supply the grid.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::state::{Monitor, Trajectory};

pub const MAGIC: &[u8; 8] = b"NLOCOC01";
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Raw64,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Raw64 => "raw64",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "raw64" => Ok(Format::Raw64),
            _ => Err(Error::InvalidArgument(format!(
                "unknown format `{s}` (expected csv or raw64)"
            ))),
        }
    }
}

/// Decoded `raw64` header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawHeader {
    pub dim: u32,
    pub cells: [u32; 2],
    pub count: u32,
}

impl RawHeader {
    fn for_grid(grid: &GridSpec, count: usize) -> Self {
        let [nx, ny] = grid.cells();
        Self {
            dim: grid.dim() as u32,
            cells: [nx as u32, ny as u32],
            count: count as u32,
        }
    }

    fn cells_per_snapshot(&self) -> usize {
        self.cells[0] as usize * self.cells[1] as usize
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..8].copy_from_slice(MAGIC);
        h[8..12].copy_from_slice(&self.dim.to_le_bytes());
        h[12..16].copy_from_slice(&self.cells[0].to_le_bytes());
        h[16..20].copy_from_slice(&self.cells[1].to_le_bytes());
        h[20..24].copy_from_slice(&self.count.to_le_bytes());
        let total = (self.cells_per_snapshot() * self.count as usize) as u64;
        h[24..32].copy_from_slice(&total.to_le_bytes());
        h
    }

    fn decode(h: &[u8]) -> Result<Self> {
        if h.len() < HEADER_LEN || &h[..8] != MAGIC {
            return Err(Error::Format("missing NLOCOC01 magic".into()));
        }
        let u32_at = |k: usize| u32::from_le_bytes(h[k..k + 4].try_into().expect("4 bytes"));
        let out = Self {
            dim: u32_at(8),
            cells: [u32_at(12), u32_at(16)],
            count: u32_at(20),
        };
        let total = u64::from_le_bytes(h[24..32].try_into().expect("8 bytes"));
        if total != (out.cells_per_snapshot() * out.count as usize) as u64 {
            return Err(Error::Format(format!(
                "header value count {total} disagrees with dims"
            )));
        }
        if !(out.dim == 1 || out.dim == 2) || (out.dim == 1 && out.cells[1] != 1) {
            return Err(Error::Format(format!(
                "bad dimension {} with cells {:?}",
                out.dim, out.cells
            )));
        }
        Ok(out)
    }

    pub fn matches(&self, grid: &GridSpec) -> bool {
        let [nx, ny] = grid.cells();
        self.dim as usize == grid.dim() && self.cells == [nx as u32, ny as u32]
    }
}

fn check_finite(fields: &[&ScalarField]) -> Result<()> {
    if fields.iter().all(|f| f.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("exported data".into()))
    }
}

/// Writes snapshots of one variable as a single `raw64` file.
pub fn write_raw64(path: &Path, fields: &[&ScalarField]) -> Result<()> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to export".into()))?;
    let grid = *first.grid();
    for f in fields {
        f.grid().check_same(&grid)?;
    }
    check_finite(fields)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&RawHeader::for_grid(&grid, fields.len()).encode())?;
    for f in fields {
        for v in f.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every snapshot of a `raw64` file.
pub fn read_raw64(path: &Path) -> Result<(RawHeader, Vec<Vec<f64>>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let header = RawHeader::decode(&bytes)?;
    let body = &bytes[HEADER_LEN..];
    let per = header.cells_per_snapshot();
    let expected = per * header.count as usize * 8;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} data bytes, found {}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let snaps = if per == 0 {
        Vec::new()
    } else {
        values.chunks(per).map(<[f64]>::to_vec).collect()
    };
    Ok((header, snaps))
}

/// Reads a `raw64` file into fields on `grid`.
pub fn read_fields(path: &Path, grid: &GridSpec) -> Result<Vec<ScalarField>> {
    let (header, snaps) = read_raw64(path)?;
    if !header.matches(grid) {
        return Err(Error::GridMismatch(format!(
            "{}: file has dim {} cells {:?}, expected dim {} cells {:?}",
            path.display(),
            header.dim,
            header.cells,
            grid.dim(),
            grid.cells()
        )));
    }
    snaps
        .into_iter()
        .map(|v| ScalarField::from_values(grid, v))
        .collect()
}

/// `x[,y],value` with 17 significant digits.
pub fn write_field_csv(path: &Path, field: &ScalarField) -> Result<()> {
    check_finite(&[field])?;
    let grid = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "{}",
        if grid.dim() == 2 {
            "x,y,value"
        } else {
            "x,value"
        }
    )?;
    for (k, v) in field.values().iter().enumerate() {
        let c = grid.center(k);
        if grid.dim() == 2 {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", c[0], c[1], v)?;
        } else {
            writeln!(w, "{:.16e},{:.16e}", c[0], v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_field(path: &Path, field: &ScalarField, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_field_csv(path, field),
        Format::Raw64 => write_raw64(path, &[field]),
    }
}

/// Writes `phi`, `mu`, `sigma` of every snapshot into `dir`: one `raw64`
/// file per variable, or one CSV per variable and snapshot
/// (`phi_00000.csv`, ...). Returns the files written.
pub fn export_trajectory(dir: &Path, traj: &Trajectory, format: Format) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let vars: [(&str, Vec<&ScalarField>); 3] = [
        ("phi", traj.snapshots.iter().map(|s| &s.phi).collect()),
        ("mu", traj.snapshots.iter().map(|s| &s.mu).collect()),
        ("sigma", traj.snapshots.iter().map(|s| &s.sigma).collect()),
    ];
    let mut written = Vec::new();
    for (name, fields) in &vars {
        match format {
            Format::Raw64 => {
                let p = dir.join(format!("{name}.raw64"));
                write_raw64(&p, fields)?;
                written.push(p);
            }
            Format::Csv => {
                for (n, f) in fields.iter().enumerate() {
                    let p = dir.join(format!("{name}_{n:05}.csv"));
                    write_field_csv(&p, f)?;
                    written.push(p);
                }
            }
        }
    }
    Ok(written)
}

pub fn write_monitors_csv(path: &Path, monitors: &[Monitor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "step,time,mass,mass_ledger,mass_defect,energy,max_abs_phi,newton_iterations"
    )?;
    for (n, m) in monitors.iter().enumerate() {
        writeln!(
            w,
            "{n},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            m.time,
            m.mass,
            m.mass_ledger,
            m.mass_defect,
            m.energy,
            m.max_abs_phi,
            m.newton_iterations
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a CSV table with a header row; values use 17 significant digits.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
