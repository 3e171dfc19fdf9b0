//! Binary grid records and training checkpoints.
//!
//! Grid record (little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic | `b"VXG2"` |
//! | version | `u32` (= 1) |
//! | Nx, Ny, Nz, C | `u32` ×4 |
//! | aabb min xyz, max xyz | `f64` ×6 |
//! | values | `f32` × Nx·Ny·Nz·C, x-major, channels innermost |
//!
//! Checkpoint file: magic `b"VXCK"`, `u32` version, `u64` metadata length,
//! UTF-8 TOML metadata, the density record, the color record, then the
//! optimizer state, then the occupancy mask:
//!
//! - `u8` has-optimizer flag; if set, for density then color: `u64` step,
//!   `u64` length, `f32` first moments, `f32` second moments;
//! - `u8` has-mask flag; if set, `u32` ×3 resolution and one byte per cell.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contraction::ContractionConfig;
use crate::error::{Error, Result};
use crate::grid::{Aabb, VoxelGrid};
use crate::optimizer::{AdamConfig, AdamState};
use crate::rendering::{OccupancyMask, RadianceField};

const GRID_MAGIC: &[u8; 4] = b"VXG2";
const GRID_VERSION: u32 = 1;
const CKPT_MAGIC: &[u8; 4] = b"VXCK";
const CKPT_VERSION: u32 = 1;

pub fn write_grid_record(out: &mut Vec<u8>, grid: &VoxelGrid) {
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    for n in grid.resolution() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(&(grid.channels() as u32).to_le_bytes());
    for v in grid.aabb().min.iter().chain(&grid.aabb().max) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in grid.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl Reader<'_> {
    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.into(),
            reason: reason.into(),
        }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.cur
            .read_exact(&mut b)
            .map_err(|_| self.bad("unexpected end of file"))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        if (n as u64).saturating_mul(4) > remaining {
            return Err(self.bad("unexpected end of file"));
        }
        (0..n)
            .map(|_| Ok(f32::from_le_bytes(self.bytes()?) as f64))
            .collect()
    }

    fn grid(&mut self) -> Result<VoxelGrid> {
        if &self.bytes::<4>()? != GRID_MAGIC {
            return Err(self.bad("missing VXG2 grid record"));
        }
        let version = self.u32()?;
        if version != GRID_VERSION {
            return Err(self.bad(format!("unsupported grid record version {version}")));
        }
        let res = [
            self.u32()? as usize,
            self.u32()? as usize,
            self.u32()? as usize,
        ];
        let c = self.u32()? as usize;
        let min = [self.f64()?, self.f64()?, self.f64()?];
        let max = [self.f64()?, self.f64()?, self.f64()?];
        let n = res
            .iter()
            .try_fold(c, |acc, &r| acc.checked_mul(r))
            .ok_or_else(|| self.bad("grid dimensions overflow"))?;
        let data = self.f32_vec(n)?;
        VoxelGrid::from_data(res, c, Aabb::new(min, max)?, data)
    }

    fn finish(&self) -> Result<()> {
        if self.cur.position() as usize != self.cur.get_ref().len() {
            return Err(self.bad("trailing bytes"));
        }
        Ok(())
    }
}

pub fn save_grid(path: &Path, grid: &VoxelGrid) -> Result<()> {
    let mut buf = Vec::new();
    write_grid_record(&mut buf, grid);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_grid(path: &Path) -> Result<VoxelGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        cur: Cursor::new(&bytes),
        path,
    };
    let g = r.grid()?;
    r.finish()?;
    Ok(g)
}

#[derive(Serialize, Deserialize)]
struct Meta {
    step: u64,
    alpha_init: f64,
    base_voxel: f64,
    contraction: ContractionConfig,
    density_adam: Option<AdamConfig>,
    color_adam: Option<AdamConfig>,
}

/// Field plus optional optimizer state at a training step.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub field: RadianceField,
    /// Density and color optimizer states.
    pub optimizer: Option<(AdamState, AdamState)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            step: self.step,
            alpha_init: self.field.alpha_init,
            base_voxel: self.field.base_voxel,
            contraction: self.field.contraction.clone(),
            density_adam: self.optimizer.as_ref().map(|o| o.0.config),
            color_adam: self.optimizer.as_ref().map(|o| o.1.config),
        };
        let meta = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(meta.as_bytes());
        write_grid_record(&mut buf, &self.field.density);
        write_grid_record(&mut buf, &self.field.color);
        match &self.optimizer {
            Some((d, c)) => {
                buf.push(1);
                for s in [d, c] {
                    buf.extend_from_slice(&s.step.to_le_bytes());
                    buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    for &x in s.m.iter().chain(&s.v) {
                        buf.extend_from_slice(&(x as f32).to_le_bytes());
                    }
                }
            }
            None => buf.push(0),
        }
        match &self.field.occupancy {
            Some(mask) => {
                buf.push(1);
                for n in mask.resolution() {
                    buf.extend_from_slice(&(n as u32).to_le_bytes());
                }
                buf.extend(mask.cells().iter().map(|&o| o as u8));
            }
            None => buf.push(0),
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader {
            cur: Cursor::new(&bytes),
            path,
        };
        if &r.bytes::<4>()? != CKPT_MAGIC {
            return Err(r.bad("missing VXCK header"));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(r.bad(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64()? as usize;
        let start = r.cur.position() as usize;
        let meta_bytes = bytes
            .get(start..start.saturating_add(len))
            .ok_or_else(|| r.bad("truncated metadata"))?;
        let meta_str =
            std::str::from_utf8(meta_bytes).map_err(|_| r.bad("metadata is not UTF-8"))?;
        let meta: Meta = toml::from_str(meta_str).map_err(|e| r.bad(format!("metadata: {e}")))?;
        r.cur.set_position((start + len) as u64);

        let density = r.grid()?;
        let color = r.grid()?;
        let mut field = RadianceField::from_grids(
            density,
            color,
            meta.contraction,
            meta.alpha_init,
            meta.base_voxel,
        )?;

        let optimizer = if r.u8()? == 1 {
            let mut states = Vec::with_capacity(2);
            for cfg in [meta.density_adam, meta.color_adam] {
                let cfg = cfg.ok_or_else(|| r.bad("optimizer state without config"))?;
                let step = r.u64()?;
                let n = r.u64()? as usize;
                let m = r.f32_vec(n)?;
                let v = r.f32_vec(n)?;
                states.push(AdamState {
                    m,
                    v,
                    step,
                    config: cfg,
                });
            }
            let c = states.pop().unwrap();
            let d = states.pop().unwrap();
            if d.len() != field.density.data().len() || c.len() != field.color.data().len() {
                return Err(r.bad("optimizer state does not match grid sizes"));
            }
            Some((d, c))
        } else {
            None
        };

        if r.u8()? == 1 {
            let res = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
            let n: usize = res.iter().product();
            let cells = (0..n)
                .map(|_| Ok(r.u8()? != 0))
                .collect::<Result<Vec<_>>>()?;
            field.occupancy = Some(
                OccupancyMask::from_cells(res, cells).ok_or_else(|| r.bad("bad occupancy mask"))?,
            );
        }
        r.finish()?;
        Ok(Self {
            step: meta.step,
            field,
            optimizer,
        })
    }
}
