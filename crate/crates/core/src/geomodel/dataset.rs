//! Dataset file format, little-endian throughout:
//! magic "FCDS", u32 version=1, u32 count, u32 nx, u32 ny, u32 K,
//! then count*nx*ny facies codes (u8, row-major, realization-major).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FaciesGrid;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FCDS";
const VERSION: u32 = 1;

/// Write a homogeneous dataset (all grids share nx, ny, K).
pub fn write_dataset(path: &Path, grids: &[FaciesGrid]) -> Result<()> {
    let first = grids
        .first()
        .ok_or_else(|| Error::validation("cannot write an empty dataset".to_string()))?;
    let (nx, ny, k) = (first.nx(), first.ny(), first.num_facies());
    for g in grids {
        if g.nx() != nx || g.ny() != ny || g.num_facies() != k {
            return Err(Error::validation(
                "all grids in a dataset must share nx, ny and facies count".to_string(),
            ));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let put = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    put(&mut w, MAGIC)?;
    put(&mut w, &VERSION.to_le_bytes())?;
    put(&mut w, &(grids.len() as u32).to_le_bytes())?;
    put(&mut w, &(nx as u32).to_le_bytes())?;
    put(&mut w, &(ny as u32).to_le_bytes())?;
    put(&mut w, &(k as u32).to_le_bytes())?;
    for g in grids {
        put(&mut w, g.codes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a dataset written by [`write_dataset`]. Malformed magic, unknown
/// version and truncated payloads are reported as distinct format errors.
pub fn read_dataset(path: &Path) -> Result<Vec<FaciesGrid>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file too short for header"))?;
    if &magic != MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:?}, expected \"FCDS\"")));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>, what: &str| -> Result<u32> {
        r.read_exact(&mut u32buf)
            .map_err(|_| Error::format(path, format!("truncated header field {what}")))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r, "count")? as usize;
    let nx = read_u32(&mut r, "nx")? as usize;
    let ny = read_u32(&mut r, "ny")? as usize;
    let k = read_u32(&mut r, "K")?;
    if k < 2 || k > u8::MAX as u32 {
        return Err(Error::format(path, format!("facies count {k} out of range")));
    }

    let cells = nx
        .checked_mul(ny)
        .ok_or_else(|| Error::format(path, "grid extents overflow"))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let expected = cells
        .checked_mul(count)
        .ok_or_else(|| Error::format(path, "dataset size overflows"))?;
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("length mismatch: expected {expected} code bytes, found {}", payload.len()),
        ));
    }

    let mut grids = Vec::with_capacity(count);
    for i in 0..count {
        let codes = payload[i * cells..(i + 1) * cells].to_vec();
        let grid = FaciesGrid::new(nx, ny, k as u8, codes)
            .map_err(|e| Error::format(path, format!("realization {i}: {e}")))?;
        grids.push(grid);
    }
    Ok(grids)
}
