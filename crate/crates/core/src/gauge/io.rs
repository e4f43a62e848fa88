use std::io::{Read, Write};

use super::LinkField;
use crate::error::{Error, Result};
use crate::tensor::DType;

/// First four header bytes of a configuration file.
pub const CONFIG_MAGIC: [u8; 4] = *b"U1LF";

/// Writes `u` as an 8-byte header (magic, `L` as `u32` LE) followed by the
/// `[2, L, L]` angles of every configuration as `f64` LE.
pub fn write_configs<W: Write>(mut w: W, u: &LinkField) -> Result<()> {
    w.write_all(&CONFIG_MAGIC)?;
    w.write_all(&(u.l() as u32).to_le_bytes())?;
    for v in u.theta().data().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads every configuration of a file written by [`write_configs`].
pub fn read_configs<R: Read>(mut r: R, dtype: DType) -> Result<LinkField> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header)?;
    if header[..4] != CONFIG_MAGIC {
        return Err(Error::Checkpoint("bad configuration file magic".into()));
    }
    let l = u32::from_le_bytes(header[4..].try_into().expect("4 bytes")) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let per = 2 * l * l * 8;
    if l < 2 || body.len() % per != 0 || body.is_empty() {
        return Err(Error::Checkpoint(format!("{} payload bytes for L = {l}", body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    LinkField::from_vec(values, body.len() / per, l, dtype)
}
