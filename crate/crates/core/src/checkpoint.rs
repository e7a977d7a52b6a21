//! Named parameter arrays on disk: a text manifest plus one raw
//! little-endian blob per array.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Matrix, Parameters};

pub const MANIFEST: &str = "manifest.tsv";
const FORMAT: &str = "graphopt-checkpoint\t1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub config_hash: String,
    /// Free-form scalars needed to rebuild the models, e.g. feature width.
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<(String, Matrix)>,
}

fn blob_name(name: &str) -> String {
    format!("{name}.bin")
}

fn integrity(array: &str, message: impl Into<String>) -> Error {
    Error::Integrity {
        array: array.to_string(),
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn new(epoch: usize, config_hash: impl Into<String>) -> Self {
        Self {
            epoch,
            config_hash: config_hash.into(),
            ..Self::default()
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| integrity(MANIFEST, format!("missing or bad meta entry {key}")))
    }

    /// Stores every parameter of `p` as `prefix.<index>`.
    pub fn insert_params<P: Parameters>(&mut self, prefix: &str, p: &P) {
        for (i, m) in p.params().into_iter().enumerate() {
            self.arrays.push((format!("{prefix}.{i}"), m.clone()));
        }
    }

    /// Overwrites the parameters of `p` from `prefix.<index>` arrays, which
    /// must exist with matching shapes.
    pub fn restore_params<P: Parameters>(&self, prefix: &str, p: &mut P) -> Result<()> {
        for (i, dst) in p.params_mut().into_iter().enumerate() {
            let name = format!("{prefix}.{i}");
            let src = self.get(&name).ok_or_else(|| integrity(&name, "array missing"))?;
            if src.shape() != dst.shape() {
                return Err(integrity(
                    &name,
                    format!("shape {:?} does not match model shape {:?}", src.shape(), dst.shape()),
                ));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn manifest(&self) -> String {
        let mut out = format!("format\t{FORMAT}\nepoch\t{}\nconfig_hash\t{}\n", self.epoch, self.config_hash);
        for (k, v) in &self.meta {
            writeln!(out, "meta\t{k}\t{v}").unwrap();
        }
        for (name, m) in &self.arrays {
            writeln!(out, "array\t{name}\tf64\t{}x{}\t{}", m.rows(), m.cols(), blob_name(name)).unwrap();
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, m) in &self.arrays {
            let path = dir.join(blob_name(name));
            let bytes: Vec<u8> = m.data().iter().flat_map(|x| x.to_le_bytes()).collect();
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, self.manifest()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::load_filtered(dir, |_| true)
    }

    /// Only the arrays whose names start with `prefix`.
    pub fn load_subset(dir: &Path, prefix: &str) -> Result<Self> {
        Self::load_filtered(dir, |name| name.starts_with(prefix))
    }

    fn load_filtered(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut cp = Checkpoint::default();
        let mut format_seen = false;
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Parse {
                line: i + 1,
                message: format!("bad manifest line {line:?}"),
            };
            match fields.as_slice() {
                ["format", name, version] => {
                    if format!("{name}\t{version}") != FORMAT {
                        return Err(bad());
                    }
                    format_seen = true;
                }
                ["epoch", e] => cp.epoch = e.parse().map_err(|_| bad())?,
                ["config_hash", h] => cp.config_hash = h.to_string(),
                ["meta", k, v] => {
                    cp.meta.insert(k.to_string(), v.to_string());
                }
                ["array", name, "f64", shape, file] => {
                    if !keep(name) {
                        continue;
                    }
                    let (r, c) = shape.split_once('x').ok_or_else(bad)?;
                    let (rows, cols): (usize, usize) =
                        (r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?);
                    let blob = dir.join(file);
                    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
                    if bytes.len() != rows * cols * 8 {
                        return Err(integrity(
                            name,
                            format!("blob has {} bytes, manifest needs {}", bytes.len(), rows * cols * 8),
                        ));
                    }
                    let data = bytes
                        .chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                        .collect();
                    cp.arrays.push((name.to_string(), Matrix::from_vec(rows, cols, data)));
                }
                [""] => {}
                _ => return Err(bad()),
            }
        }
        if !format_seen {
            return Err(integrity(MANIFEST, "missing format line"));
        }
        Ok(cp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (Checkpoint, Mlp) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[3, 4, 2], &mut rng);
        let mut cp = Checkpoint::new(7, "abc");
        cp.meta.insert("feature_dim".into(), "3".into());
        cp.insert_params("net", &mlp);
        cp.arrays.push(("reward.0".into(), Matrix::filled(1, 1, 0.1)));
        (cp, mlp)
    }

    #[test]
    fn save_load_save_is_bitwise_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (cp, mlp) = sample();
        cp.save(&dir.path().join("a")).unwrap();
        let back = Checkpoint::load(&dir.path().join("a")).unwrap();
        assert_eq!(back, cp);
        back.save(&dir.path().join("b")).unwrap();
        for f in ["manifest.tsv", "net.0.bin", "net.3.bin"] {
            assert_eq!(
                std::fs::read(dir.path().join("a").join(f)).unwrap(),
                std::fs::read(dir.path().join("b").join(f)).unwrap()
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut other = Mlp::new(&[3, 4, 2], &mut rng);
        back.restore_params("net", &mut other).unwrap();
        assert_eq!(other, mlp);
        assert_eq!(back.meta_usize("feature_dim").unwrap(), 3);
    }

    #[test]
    fn truncated_blob_names_the_array() {
        let dir = tempfile::tempdir().unwrap();
        let (cp, _) = sample();
        cp.save(dir.path()).unwrap();
        let blob = dir.path().join("net.2.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        match Checkpoint::load(dir.path()) {
            Err(Error::Integrity { array, .. }) => assert_eq!(array, "net.2"),
            other => panic!("expected integrity error, got {other:?}"),
        }
        // The subset load never touches the damaged blob.
        let sub = Checkpoint::load_subset(dir.path(), "reward.").unwrap();
        assert_eq!(sub.arrays.len(), 1);
        assert_eq!(sub.get("reward.0").unwrap().data(), &[0.1]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (cp, _) = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut wrong = Mlp::new(&[3, 5, 2], &mut rng);
        assert!(matches!(cp.restore_params("net", &mut wrong), Err(Error::Integrity { .. })));
    }
}
