//! On-disk cache of extracted features, one tensor file per clip.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureInput};
use crate::rng::fnv1a;
use crate::tensor_file::{read_tensor, write_tensor};

pub const CACHE_DIR_ENV: &str = "MCTA_CACHE_DIR";

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    Miss,
    /// An unreadable entry was found and replaced.
    Repaired,
}

#[derive(Clone, Debug)]
pub struct FeatureCache {
    dir: PathBuf,
    key: u64,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>, cfg: &FeatureConfig) -> Self {
        let desc = serde_json::to_string(cfg).expect("feature config serializes");
        Self {
            dir: dir.into(),
            key: fnv1a(desc.as_bytes()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        let safe: String = id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
            .collect();
        self.dir.join(format!("{safe}-{:016x}.feat", self.key ^ fnv1a(id.as_bytes())))
    }

    fn read(&self, id: &str, path: &Path) -> std::io::Result<FeatureInput> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let (shape, data) = read_tensor(&mut r)?;
        if shape.len() != 3 || shape[0] != FeatureInput::CHANNELS {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unexpected feature shape {shape:?}"),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "non-finite feature value"));
        }
        Ok(FeatureInput {
            source_id: id.to_string(),
            frames: shape[1],
            mel_bins: shape[2],
            data,
        })
    }

    /// `Ok(None)` when absent; corrupt entries are reported as `Err`.
    pub fn load(&self, id: &str) -> Result<Option<FeatureInput>> {
        let path = self.path_for(id);
        if !path.exists() {
            return Ok(None);
        }
        self.read(id, &path)
            .map(Some)
            .map_err(|e| Error::parse(&path, format!("corrupt cache entry: {e}")))
    }

    /// Writes via a temporary file and rename so concurrent extractors never
    /// observe a partial entry.
    pub fn store(&self, id: &str, feature: &FeatureInput) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path_for(id);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            write_tensor(&mut w, &feature.shape(), &feature.data)?;
            w.flush()?;
            drop(w);
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(&path, e)
        })
    }

    pub fn get_or_insert_with(
        &self,
        id: &str,
        extract: impl FnOnce() -> Result<FeatureInput>,
    ) -> Result<(FeatureInput, CacheOutcome)> {
        let outcome = match self.load(id) {
            Ok(Some(f)) => return Ok((f, CacheOutcome::Hit)),
            Ok(None) => CacheOutcome::Miss,
            Err(e) => {
                log::warn!("{e}; re-extracting");
                CacheOutcome::Repaired
            }
        };
        let f = extract()?;
        self.store(id, &f)?;
        Ok((f, outcome))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature() -> FeatureInput {
        FeatureInput {
            source_id: "a/b".into(),
            frames: 2,
            mel_bins: 4,
            data: (0..24).map(|i| i as f32 * 0.5).collect(),
        }
    }

    #[test]
    fn store_load_and_repair() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path(), &FeatureConfig::default());
        assert!(cache.load("a/b").unwrap().is_none());
        let (_, o) = cache.get_or_insert_with("a/b", || Ok(feature())).unwrap();
        assert_eq!(o, CacheOutcome::Miss);
        let (f, o) = cache.get_or_insert_with("a/b", || panic!("should hit")).unwrap();
        assert_eq!(o, CacheOutcome::Hit);
        assert_eq!(f, feature());

        fs::write(cache.path_for("a/b"), b"garbage").unwrap();
        assert!(cache.load("a/b").is_err());
        let (f, o) = cache.get_or_insert_with("a/b", || Ok(feature())).unwrap();
        assert_eq!(o, CacheOutcome::Repaired);
        assert_eq!(f, feature());
    }

    #[test]
    fn key_depends_on_config() {
        let a = FeatureCache::new("/tmp/x", &FeatureConfig::default());
        let b = FeatureCache::new(
            "/tmp/x",
            &FeatureConfig {
                n_mels: 64,
                ..FeatureConfig::default()
            },
        );
        assert_ne!(a.path_for("clip"), b.path_for("clip"));
    }
}
