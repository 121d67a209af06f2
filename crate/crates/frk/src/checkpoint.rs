//! Directory checkpoints: one binary file per parameter plus a JSON manifest.
//!
//! Layout:
//! ```text
//! <dir>/manifest.json     {"params": {"<name>": {"file", "shape", "keep"}}}
//! <dir>/<name>.frp        FRP1 payload (see freqparam)
//! ```
//! Model checkpoints add an `architecture.json` next to the manifest; that
//! file is owned by the `nn` module.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqparam::FreqParam;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    params: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    shape: Vec<usize>,
    keep: usize,
}

/// Writes each parameter as `<name>.frp` plus a sorted-key manifest.
pub fn save_params(dir: &Path, params: &[(String, &FreqParam)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest {
        params: BTreeMap::new(),
    };
    for (name, p) in params {
        let file = format!("{name}.frp");
        fs::write(dir.join(&file), p.serialize())?;
        let prev = manifest.params.insert(
            name.clone(),
            ManifestEntry {
                file,
                shape: p.spatial_shape().to_vec(),
                keep: p.keep(),
            },
        );
        if prev.is_some() {
            return Err(Error::Argument(format!("duplicate parameter name {name}")));
        }
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

/// Loads every parameter listed in the manifest, validating that payload
/// headers agree with the manifest entries.
pub fn load_params(dir: &Path) -> Result<Vec<(String, FreqParam)>> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("manifest.json: {e}")))?;
    let mut out = Vec::with_capacity(manifest.params.len());
    for (name, entry) in manifest.params {
        let bytes = fs::read(dir.join(&entry.file))?;
        let p = FreqParam::deserialize(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", entry.file)))?;
        if p.spatial_shape() != entry.shape.as_slice() {
            return Err(Error::Integrity(format!(
                "{name}: manifest shape {:?} but payload has {:?}",
                entry.shape,
                p.spatial_shape()
            )));
        }
        if p.keep() != entry.keep {
            return Err(Error::Integrity(format!(
                "{name}: manifest keep {} but payload has {}",
                entry.keep,
                p.keep()
            )));
        }
        out.push((name, p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::from_seed(1);
        let mut a = FreqParam::init(&[3, 4], 0.3, &mut rng).unwrap();
        a.apply_truncation(5).unwrap();
        let b = FreqParam::init(&[7], 0.3, &mut rng).unwrap();
        save_params(dir.path(), &[("conv.weight".into(), &a), ("conv.bias".into(), &b)])
            .unwrap();
        let loaded = load_params(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        let names: Vec<&str> = loaded.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["conv.bias", "conv.weight"]);
        let (_, la) = loaded.iter().find(|(n, _)| n == "conv.weight").unwrap();
        assert_eq!(la.keep(), 5);
        assert_eq!(la.serialize(), a.serialize());
    }

    #[test]
    fn manifest_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::from_seed(2);
        let a = FreqParam::init(&[2, 2], 0.3, &mut rng).unwrap();
        save_params(dir.path(), &[("w".into(), &a)]).unwrap();
        // swap the payload for one with a different shape
        let other = FreqParam::init(&[4], 0.3, &mut rng).unwrap();
        fs::write(dir.path().join("w.frp"), other.serialize()).unwrap();
        assert!(matches!(
            load_params(dir.path()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_params(dir.path()), Err(Error::Io(_))));
    }
}
