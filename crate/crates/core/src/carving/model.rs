//! Carved model container.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! "MSVC"            4 bytes magic
//! version           u32 (currently 1)
//! voxel_size        f64
//! count             u64
//! count x { x f64, y f64, z f64, r u8, g u8, b u8 }
//! ```
//!
//! Scene id and carving parameters are not part of the container; `save`
//! writes them to a JSON sidecar next to it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::CarveParams;

pub const MAGIC: &[u8; 4] = b"MSVC";
pub const FORMAT_VERSION: u32 = 1;
const RECORD_BYTES: usize = 3 * 8 + 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarvedVoxel {
    pub center: [f64; 3],
    pub rgb: [u8; 3],
}

/// Surviving voxels of one carving pass, ordered by grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct CarvedModel {
    pub voxel_size: f64,
    pub voxels: Vec<CarvedVoxel>,
    pub scene_id: String,
    pub params: CarveParams,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    scene_id: String,
    voxel_size: f64,
    voxel_count: usize,
    params: CarveParams,
}

impl CarvedModel {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.voxel_size.to_le_bytes())?;
        w.write_all(&(self.voxels.len() as u64).to_le_bytes())?;
        for v in &self.voxels {
            for c in v.center {
                w.write_all(&c.to_le_bytes())?;
            }
            w.write_all(&v.rgb)?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + RECORD_BYTES * self.voxels.len());
        self.write_binary(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Parses the binary container. Scene id is empty and parameters are the
    /// defaults for the stored voxel size.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 24];
        r.read_exact(&mut header)?;
        if &header[0..4] != MAGIC {
            return Err(Error::Format("not a carved model (bad magic)".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let voxel_size = f64::from_le_bytes(header[8..16].try_into().unwrap());
        let count = u64::from_le_bytes(header[16..24].try_into().unwrap());
        let mut voxels = Vec::with_capacity(count.min(1 << 24) as usize);
        let mut rec = [0u8; RECORD_BYTES];
        for _ in 0..count {
            r.read_exact(&mut rec)?;
            let f = |o: usize| f64::from_le_bytes(rec[o..o + 8].try_into().unwrap());
            voxels.push(CarvedVoxel {
                center: [f(0), f(8), f(16)],
                rgb: [rec[24], rec[25], rec[26]],
            });
        }
        Ok(CarvedModel {
            voxel_size,
            voxels,
            scene_id: String::new(),
            params: CarveParams::for_voxel_size(voxel_size),
        })
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes the binary container plus its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        let meta = Sidecar {
            scene_id: self.scene_id.clone(),
            voxel_size: self.voxel_size,
            voxel_count: self.voxels.len(),
            params: self.params,
        };
        let json = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
        std::fs::write(&side, json).map_err(|e| Error::io(side, e))
    }

    /// Reads a container and, when present, its sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut model = Self::read_binary(BufReader::new(file)).map_err(|e| match e {
            Error::BareIo(io) => Error::io(path, io),
            other => other,
        })?;
        let side = Self::sidecar_path(path);
        if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: Sidecar = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
            model.scene_id = meta.scene_id;
            model.params = meta.params;
        }
        Ok(model)
    }

    /// Debug export, one `x y z r g b` line per voxel.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.voxels {
            let [x, y, z] = v.center;
            let [r, g, b] = v.rgb;
            writeln!(w, "{x} {y} {z} {r} {g} {b}")?;
        }
        w.flush()
    }

    /// Axis-aligned bounds of the voxel centers, `None` when empty.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = self.voxels.first()?.center;
        Some(self.voxels.iter().fold((first, first), |(lo, hi), v| {
            (
                [0, 1, 2].map(|a| lo[a].min(v.center[a])),
                [0, 1, 2].map(|a| hi[a].max(v.center[a])),
            )
        }))
    }
}
