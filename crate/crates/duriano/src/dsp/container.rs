//! Flat binary matrix container: magic "DSPC", version u32, rows u64,
//! cols u64, then row-major little-endian 32-bit floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use super::DspError;

pub const MAGIC: &[u8; 4] = b"DSPC";
pub const VERSION: u32 = 1;

fn container_err(path: &Path, reason: impl Into<String>) -> DspError {
    DspError::Container {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn write_matrix_to<W: Write + ?Sized>(w: &mut W, m: &ArrayView2<f64>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for &v in m.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix_from<R: Read + ?Sized>(r: &mut R) -> std::io::Result<Array2<f64>> {
    use std::io::{Error, ErrorKind};
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::new(ErrorKind::InvalidData, "bad magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::new(
            ErrorKind::InvalidData,
            format!("unsupported version {version}"),
        ));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = vec![0u8; cols.max(1) * 4];
    for _ in 0..rows {
        r.read_exact(&mut buf[..cols * 4])?;
        for c in buf[..cols * 4].chunks_exact(4) {
            data.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        }
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::new(ErrorKind::InvalidData, e.to_string()))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &ArrayView2<f64>) -> Result<(), DspError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| container_err(path, e.to_string()))?);
    write_matrix_to(&mut w, m).map_err(|e| container_err(path, e.to_string()))?;
    w.flush().map_err(|e| container_err(path, e.to_string()))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>, DspError> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| container_err(path, e.to_string()))?);
    read_matrix_from(&mut r).map_err(|e| container_err(path, e.to_string()))
}
