//! Binary serialization of form fields.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `G2FF` |
//! | 4     | format version (`u32`, currently 1) |
//! | 4     | form degree (`u32`) |
//! | 28    | grid sizes, 7 × `u32` |
//! | 8     | value count (`u64`) = points × C(7, degree) |
//! | 8·count | `f64` coefficients, point-major, lexicographic basis order |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::exterior::{binomial, DIM};
use crate::torusfield::{FormField, Grid};

pub const MAGIC: &[u8; 4] = b"G2FF";
pub const VERSION: u32 = 1;

fn io(e: std::io::Error) -> Error {
    Error::FieldIo(e.to_string())
}

pub fn write_field<W: Write>(mut w: W, field: &FormField) -> Result<()> {
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(field.degree() as u32).map_err(io)?;
    for n in field.grid().sizes() {
        w.write_u32::<LittleEndian>(n as u32).map_err(io)?;
    }
    w.write_u64::<LittleEndian>(field.data().len() as u64).map_err(io)?;
    for v in field.data() {
        w.write_f64::<LittleEndian>(*v).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_field<R: Read>(mut r: R) -> Result<FormField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::FieldIo("not a field file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(Error::FieldIo(format!("unsupported format version {version}")));
    }
    let degree = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if degree > DIM {
        return Err(Error::FieldIo(format!("invalid degree {degree}")));
    }
    let mut sizes = [0usize; DIM];
    for s in sizes.iter_mut() {
        *s = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    }
    let grid = Grid::new(sizes).map_err(|e| Error::FieldIo(e.to_string()))?;
    let count = r.read_u64::<LittleEndian>().map_err(io)?;
    let expected = sizes
        .iter()
        .try_fold(binomial(degree), |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::FieldIo(format!("grid {sizes:?} is too large")))?;
    if count != expected as u64 {
        return Err(Error::FieldIo(format!("value count {count} does not match grid ({expected})")));
    }
    // Grow with the input so a forged header cannot force a huge allocation.
    let mut data = Vec::with_capacity(expected.min(1 << 20));
    for _ in 0..expected {
        data.push(r.read_f64::<LittleEndian>().map_err(io)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::FieldIo("trailing bytes after field data".into()));
    }
    FormField::from_data(grid, degree, data)
}

pub fn save(path: &Path, field: &FormField) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::FieldIo(format!("{}: {e}", path.display())))?;
    write_field(BufWriter::new(f), field)
}

pub fn load(path: &Path) -> Result<FormField> {
    let f = File::open(path).map_err(|e| Error::FieldIo(format!("{}: {e}", path.display())))?;
    read_field(BufReader::new(f))
}
