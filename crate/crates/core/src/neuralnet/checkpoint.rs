//! Flat binary checkpoints.
//!
//! Network blob, all integers `u64` and all reals `f64`, little-endian:
//!
//! ```text
//! "DMCE1" | layer_count | dims[layer_count + 1] |
//! for each layer: weights (outputs × inputs, row-major), biases |
//! signal_power | embedding_dim
//! ```
//!
//! Plain networks (codecs) store `signal_power = 0` and `embedding_dim = 0`.
//! A bundle holds several named blobs: `"DMCB1" | count | (name_len | name | blob)*`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::neuralnet::{Dense, Mlp, NoisePredictor};
use crate::scalar::Scalar;

pub const NET_MAGIC: &[u8; 5] = b"DMCE1";
pub const BUNDLE_MAGIC: &[u8; 5] = b"DMCB1";

const MAX_DIM: u64 = 1 << 24;

/// A network plus the two predictor fields carried by every blob.
#[derive(Debug, Clone, PartialEq)]
pub struct NetBlob<T> {
    pub net: Mlp<T>,
    pub signal_power: f64,
    pub embedding_dim: usize,
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("unexpected end of file".into())
    } else {
        Error::Io(e)
    }
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 5]) -> Result<()> {
    let mut b = [0u8; 5];
    r.read_exact(&mut b).map_err(truncated)?;
    if &b != magic {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn write_net<W: Write, T: Scalar>(w: &mut W, blob: &NetBlob<T>) -> Result<()> {
    w.write_all(NET_MAGIC)?;
    let dims = blob.net.dims();
    put_u64(w, blob.net.layers().len() as u64)?;
    for d in dims {
        put_u64(w, d as u64)?;
    }
    for layer in blob.net.layers() {
        for &v in layer.weights.iter().chain(&layer.biases) {
            put_f64(w, v.as_f64())?;
        }
    }
    put_f64(w, blob.signal_power)?;
    put_u64(w, blob.embedding_dim as u64)?;
    Ok(())
}

pub fn read_net<R: Read, T: Scalar>(r: &mut R) -> Result<NetBlob<T>> {
    expect_magic(r, NET_MAGIC)?;
    let count = get_u64(r)?;
    if count == 0 || count > 1024 {
        return Err(Error::Checkpoint(format!("implausible layer count {count}")));
    }
    let mut dims = Vec::with_capacity(count as usize + 1);
    for _ in 0..=count {
        let d = get_u64(r)?;
        if d == 0 || d > MAX_DIM {
            return Err(Error::Checkpoint(format!("implausible layer width {d}")));
        }
        dims.push(d as usize);
    }
    let mut layers = Vec::with_capacity(count as usize);
    for w in dims.windows(2) {
        let mut layer = Dense::<T>::zeros(w[0], w[1]);
        for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            *v = T::lit(get_f64(r)?);
        }
        layers.push(layer);
    }
    let signal_power = get_f64(r)?;
    let embedding_dim = get_u64(r)? as usize;
    Ok(NetBlob {
        net: Mlp::from_layers(layers)?,
        signal_power,
        embedding_dim,
    })
}

pub fn net_to_bytes<T: Scalar>(blob: &NetBlob<T>) -> Vec<u8> {
    let mut out = Vec::new();
    write_net(&mut out, blob).expect("writing to a Vec cannot fail");
    out
}

pub fn predictor_blob<T: Scalar>(p: &NoisePredictor<T>) -> NetBlob<T> {
    NetBlob {
        net: p.net().clone(),
        signal_power: p.signal_power(),
        embedding_dim: p.embedding_dim(),
    }
}

pub fn save_predictor<T: Scalar>(path: &Path, p: &NoisePredictor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_net(&mut w, &predictor_blob(p))?;
    w.flush()?;
    Ok(())
}

pub fn load_predictor<T: Scalar>(path: &Path) -> Result<NoisePredictor<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let blob = read_net::<_, T>(&mut r)?;
    expect_eof(&mut r)?;
    NoisePredictor::from_parts(blob.net, blob.embedding_dim, blob.signal_power)
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::Checkpoint("trailing bytes after checkpoint".into())),
    }
}

pub fn write_bundle<W: Write, T: Scalar>(w: &mut W, sections: &[(&str, &Mlp<T>)]) -> Result<()> {
    w.write_all(BUNDLE_MAGIC)?;
    put_u64(w, sections.len() as u64)?;
    for (name, net) in sections {
        put_u64(w, name.len() as u64)?;
        w.write_all(name.as_bytes())?;
        write_net(
            w,
            &NetBlob {
                net: (*net).clone(),
                signal_power: 0.0,
                embedding_dim: 0,
            },
        )?;
    }
    Ok(())
}

pub fn read_bundle<R: Read, T: Scalar>(r: &mut R) -> Result<Vec<(String, Mlp<T>)>> {
    expect_magic(r, BUNDLE_MAGIC)?;
    let count = get_u64(r)?;
    if count > 1024 {
        return Err(Error::Checkpoint(format!("implausible section count {count}")));
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = get_u64(r)?;
        if len > 256 {
            return Err(Error::Checkpoint(format!("implausible section name length {len}")));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("section name is not utf-8".into()))?;
        out.push((name, read_net::<_, T>(r)?.net));
    }
    expect_eof(r)?;
    Ok(out)
}

pub fn save_bundle<T: Scalar>(path: &Path, sections: &[(&str, &Mlp<T>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bundle(&mut w, sections)?;
    w.flush()?;
    Ok(())
}

pub fn load_bundle<T: Scalar>(path: &Path) -> Result<Vec<(String, Mlp<T>)>> {
    read_bundle(&mut BufReader::new(File::open(path)?))
}
