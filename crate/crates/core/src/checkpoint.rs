//! Manifest-first binary checkpoints.
//!
//! ```text
//! CSSR1
//! <name> <count> <d0>,<d1>,<d2>,<d3>
//! ...
//! <blank line>
//! <little-endian f32 payload in manifest order>
//! ```

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &str = "CSSR1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Shape,
}

impl ManifestEntry {
    pub fn count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.push((name.into(), t.cast()));
    }

    /// Append every parameter of `store` as `<prefix><name>`.
    pub fn push_store<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for p in store.iter() {
            self.push(format!("{prefix}{}", p.name), &p.value);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.entries
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.clone(),
                shape: t.shape(),
            })
            .collect()
    }

    /// Copy the `<prefix>*` entries into `store`. Names, order and shapes must
    /// match the store exactly; nothing is written on mismatch.
    pub fn restore_store<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let manifest: Vec<_> = self.manifest().into_iter().filter(|e| e.name.starts_with(prefix)).collect();
        check_store(&manifest, prefix, store)?;
        let tensors = self.entries.iter().filter(|(n, _)| n.starts_with(prefix));
        for (p, (_, t)) in store.iter_mut().zip(tensors) {
            p.value = t.cast();
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{MAGIC}\n");
        for e in self.manifest() {
            let dims = e.shape.map(|d| d.to_string()).join(",");
            out.push_str(&format!("{} {} {dims}\n", e.name, e.count()));
        }
        out.push('\n');
        let mut bytes = out.into_bytes();
        for (_, t) in &self.entries {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut reader = bytes;
        let manifest = read_manifest_from(&mut reader)?;
        let expected: usize = manifest.iter().map(|e| e.count() * 4).sum();
        if reader.len() != expected {
            return Err(format!(
                "payload holds {} bytes, manifest requires {expected}",
                reader.len()
            ));
        }
        let mut floats = reader
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut entries = Vec::with_capacity(manifest.len());
        for e in manifest {
            let data: Vec<f32> = floats.by_ref().take(e.count()).collect();
            let t = Tensor::from_vec(e.shape, data).map_err(|err| err.to_string())?;
            entries.push((e.name, t));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|m| Error::io(path, m))
    }
}

fn read_manifest_from<R: BufRead>(reader: &mut R) -> std::result::Result<Vec<ManifestEntry>, String> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> std::result::Result<bool, String> {
        line.clear();
        let n = reader.read_line(line).map_err(|e| e.to_string())?;
        if n == 0 || !line.ends_with('\n') {
            return Err("truncated checkpoint header".into());
        }
        line.pop();
        Ok(!line.is_empty())
    };
    next(&mut line)?;
    if line != MAGIC {
        return Err(format!("not a checkpoint (expected magic {MAGIC})"));
    }
    let mut out = Vec::new();
    while next(&mut line)? {
        let bad = || format!("malformed manifest line '{line}'");
        let mut parts = line.split(' ');
        let (Some(name), Some(count), Some(dims), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let count: usize = count.parse().map_err(|_| bad())?;
        let dims: Vec<usize> = dims
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let shape: Shape = dims.try_into().map_err(|_| bad())?;
        let entry = ManifestEntry {
            name: name.to_string(),
            shape,
        };
        if entry.count() != count {
            return Err(bad());
        }
        out.push(entry);
    }
    Ok(out)
}

/// Read only the manifest of a checkpoint file.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    read_manifest_from(&mut reader).map_err(|m| Error::io(path, m))
}

/// Shape of `<prefix><name>` in a manifest.
pub fn shape_of(manifest: &[ManifestEntry], prefix: &str, name: &str) -> Option<Shape> {
    let full = format!("{prefix}{name}");
    manifest.iter().find(|e| e.name == full).map(|e| e.shape)
}

/// Shape of `<prefix><name>`, or a shape error naming the missing tensor.
pub fn require_shape(manifest: &[ManifestEntry], prefix: &str, name: &str) -> Result<Shape> {
    shape_of(manifest, prefix, name).ok_or_else(|| shape_err!("checkpoint lacks '{prefix}{name}'"))
}

/// Verify that `manifest` (already filtered by `prefix`) describes `store`.
pub fn check_store<T: Scalar>(manifest: &[ManifestEntry], prefix: &str, store: &ParamStore<T>) -> Result<()> {
    if manifest.len() != store.len() {
        return Err(shape_err!(
            "checkpoint has {} '{prefix}' tensors, architecture has {}",
            manifest.len(),
            store.len()
        ));
    }
    for (e, p) in manifest.iter().zip(store.iter()) {
        let want = format!("{prefix}{}", p.name);
        if e.name != want || e.shape != p.value.shape() {
            return Err(shape_err!(
                "checkpoint entry {} {:?} does not match {want} {:?}",
                e.name,
                e.shape,
                p.value.shape()
            ));
        }
    }
    Ok(())
}
