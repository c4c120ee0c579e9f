//! Binary model format, all integers and floats little-endian:
//!
//! ```text
//! "RLXB" | version u8 = 1 | schema fingerprint [32]
//! | min_order u8 | max_order u8 | buckets u64 | hash seed u64
//! | n_labels u32 | n_features u64
//! | weights f64 x (n_labels * n_features), row-major | bias f64 x n_labels
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::baseline::{BaselineModel, LinearSoftmax};
use super::features::HashingConfig;
use super::ClassifierError;

pub const MAGIC: &[u8; 4] = b"RLXB";
pub const FORMAT_VERSION: u8 = 1;

pub fn write_model<W: Write>(mut w: W, model: &BaselineModel) -> io::Result<()> {
    let lin = &model.linear;
    w.write_all(MAGIC)?;
    w.write_all(&[FORMAT_VERSION])?;
    w.write_all(&model.schema_fingerprint)?;
    w.write_all(&[model.hashing.min_order, model.hashing.max_order])?;
    w.write_all(&model.hashing.buckets.to_le_bytes())?;
    w.write_all(&model.hashing.seed.to_le_bytes())?;
    w.write_all(&(lin.n_labels as u32).to_le_bytes())?;
    w.write_all(&(lin.n_features as u64).to_le_bytes())?;
    for v in lin.weights.iter().chain(&lin.bias) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn save_model(model: &BaselineModel, path: &Path) -> Result<(), ClassifierError> {
    write_model(BufWriter::new(File::create(path)?), model)?;
    Ok(())
}

fn array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn floats<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f64::from_le_bytes(array(r)?));
    }
    Ok(out)
}

pub fn read_model<R: Read>(mut r: R) -> Result<BaselineModel, ClassifierError> {
    let magic: [u8; 4] = array(&mut r)?;
    if &magic != MAGIC {
        return Err(ClassifierError::VersionMismatch(format!("bad magic {magic:?}")));
    }
    let [version] = array(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(ClassifierError::VersionMismatch(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let schema_fingerprint = array(&mut r)?;
    let [min_order, max_order] = array(&mut r)?;
    let hashing = HashingConfig {
        min_order,
        max_order,
        buckets: u64::from_le_bytes(array(&mut r)?),
        seed: u64::from_le_bytes(array(&mut r)?),
    };
    let n_labels = u32::from_le_bytes(array(&mut r)?) as usize;
    let n_features = u64::from_le_bytes(array(&mut r)?) as usize;
    if !hashing.is_valid() || n_features as u64 != hashing.buckets || n_labels == 0 || n_labels > 256 {
        return Err(ClassifierError::VersionMismatch(format!(
            "inconsistent header: {n_labels} labels, {n_features} features, {hashing:?}"
        )));
    }
    let weights = floats(&mut r, n_labels * n_features)?;
    let bias = floats(&mut r, n_labels)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(ClassifierError::VersionMismatch("trailing bytes after model".into()));
    }
    Ok(BaselineModel {
        linear: LinearSoftmax {
            n_labels,
            n_features,
            weights,
            bias,
        },
        hashing,
        schema_fingerprint,
    })
}

pub fn load_model(path: &Path) -> Result<BaselineModel, ClassifierError> {
    read_model(BufReader::new(File::open(path)?))
}
