//! Binary checkpoints: a text header `DGFLOW1 d n L N eps t` and little-endian `f64` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{PhaseField, TorusGrid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub field: PhaseField<T>,
    pub time: f64,
}

pub fn write_checkpoint<T: Scalar>(path: &Path, field: &PhaseField<T>, time: f64) -> Result<()> {
    let g = field.grid();
    let mut bytes = format!(
        "DGFLOW1 {} {} {:e} {} {:e} {:e}\n",
        g.dim(),
        g.n(),
        g.length().to_f64_lossy(),
        field.components(),
        field.epsilon().to_f64_lossy(),
        time
    )
    .into_bytes();
    bytes.reserve(field.values().len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format(format!("{}: missing header", path.display())))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format(format!("{}: header is not text", path.display())))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 7 || parts[0] != "DGFLOW1" {
        return Err(Error::Format(format!("{}: bad header {header:?}", path.display())));
    }
    let bad = |what: &str| Error::Format(format!("{}: bad {what} in header", path.display()));
    let dim: usize = parts[1].parse().map_err(|_| bad("dimension"))?;
    let n: usize = parts[2].parse().map_err(|_| bad("cell count"))?;
    let length: f64 = parts[3].parse().map_err(|_| bad("length"))?;
    let comps: usize = parts[4].parse().map_err(|_| bad("component count"))?;
    let eps: f64 = parts[5].parse().map_err(|_| bad("epsilon"))?;
    let time: f64 = parts[6].parse().map_err(|_| bad("time"))?;
    let grid = TorusGrid::new(dim, n, T::c(length))?;
    let body = &bytes[nl + 1..];
    let expected = grid.cells() * comps * 8;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} data bytes, found {}",
            path.display(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| T::c(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Ok(Checkpoint {
        field: PhaseField::new(grid, comps, values, T::c(eps))?,
        time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = TorusGrid::<f64>::new(2, 8, 1.5).unwrap();
        let f = PhaseField::from_fn(g, 2, 0.03, |x, out| {
            out[0] = x[0].sin();
            out[1] = x[1] * 0.1;
        })
        .unwrap();
        let path = dir.path().join("a.fld");
        write_checkpoint(&path, &f, 0.125).unwrap();
        let back = read_checkpoint::<f64>(&path).unwrap();
        assert_eq!(back.field, f);
        assert_eq!(back.time, 0.125);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.fld");
        fs::write(&path, b"DGFLOW1 2 8 1 1 0.1 0\n\x00\x00").unwrap();
        assert!(matches!(read_checkpoint::<f64>(&path), Err(Error::Format(_))));
    }
}
