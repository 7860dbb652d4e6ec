//! Network checkpoints: a `key=value` manifest plus one flat weights array.
//!
//! The manifest lists every parameter as `param.<i>=<name> <d0>x<d1>...`;
//! the weights file holds all parameters concatenated in that order as a
//! single-column array next to the manifest (`<manifest>.weights.roms`).

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ndarray::IxDyn;

use super::graph::Tensor;
use super::params::ParamStore;
use super::NnError;
use crate::io::{self, IoError, Meta};

pub fn weights_path(manifest: &Path) -> PathBuf {
    let mut os = manifest.as_os_str().to_os_string();
    os.push(".weights.roms");
    PathBuf::from(os)
}

fn bad(path: &Path, key: &str, value: &str) -> NnError {
    NnError::Io(IoError::BadValue {
        path: path.to_path_buf(),
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Writes `meta` extended with the parameter table, then the weights.
pub fn save(path: &Path, meta: &Meta, store: &ParamStore) -> Result<(), NnError> {
    let mut meta = meta.clone();
    meta.set("n_params", store.len());
    let mut flat = Vec::with_capacity(store.n_scalars());
    for (i, (name, value)) in store.names().iter().zip(store.values()).enumerate() {
        let dims: Vec<String> = value.shape().iter().map(|d| d.to_string()).collect();
        meta.set(format!("param.{i}"), format!("{name} {}", dims.join("x")));
        flat.extend(value.iter());
    }
    meta.write(path)?;
    io::write_matrix(&weights_path(path), &DMatrix::from_vec(flat.len(), 1, flat))?;
    Ok(())
}

/// Reads a manifest and its weights as a standalone store.
pub fn load(path: &Path) -> Result<(Meta, ParamStore), NnError> {
    let meta = Meta::read(path)?;
    let flat = io::read_matrix(&weights_path(path))?;
    let n: usize = meta.require("n_params", path)?;
    let mut store = ParamStore::new();
    let mut offset = 0;
    for i in 0..n {
        let key = format!("param.{i}");
        let raw = meta.get(&key).unwrap_or_default().to_string();
        let (name, dims) = raw.split_once(' ').ok_or_else(|| bad(path, &key, &raw))?;
        let shape: Vec<usize> = if dims.is_empty() {
            Vec::new()
        } else {
            dims.split('x')
                .map(|d| d.parse().map_err(|_| bad(path, &key, &raw)))
                .collect::<Result<_, _>>()?
        };
        let len: usize = shape.iter().product();
        if offset + len > flat.len() {
            return Err(bad(path, &key, &raw));
        }
        let value = Tensor::from_shape_vec(IxDyn(&shape), flat.as_slice()[offset..offset + len].to_vec())
            .map_err(|_| bad(path, &key, &raw))?;
        store.add(name, value);
        offset += len;
    }
    if offset != flat.len() {
        return Err(bad(path, "n_params", &n.to_string()));
    }
    Ok((meta, store))
}

pub fn expect_kind(meta: &Meta, kind: &str, path: &Path) -> Result<(), NnError> {
    let found: String = meta.require("kind", path)?;
    if found != kind {
        return Err(bad(path, "kind", &found));
    }
    Ok(())
}

/// Copies loaded values into a freshly built network, checking that names
/// and shapes agree.
pub fn restore(target: &mut ParamStore, loaded: ParamStore, path: &Path) -> Result<(), NnError> {
    if target.names() != loaded.names() {
        return Err(NnError::Shape(format!(
            "{}: parameter names do not match the architecture",
            path.display()
        )));
    }
    for (name, (dst, src)) in loaded
        .names()
        .iter()
        .zip(target.values_mut().iter_mut().zip(loaded.values()))
    {
        if dst.shape() != src.shape() {
            return Err(NnError::Shape(format!(
                "{}: parameter {name} has shape {:?}, expected {:?}",
                path.display(),
                src.shape(),
                dst.shape()
            )));
        }
        dst.assign(src);
    }
    Ok(())
}
