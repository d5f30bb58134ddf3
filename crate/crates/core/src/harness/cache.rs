//! Content-addressed on-disk store of feature vectors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use crate::detector::{self, FeatureVector};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::preprocess::{AugmentConfig, PreprocessConfig};

const FORMAT_TAG: &[u8] = b"freqfuse-cache-v1";

/// Everything that determines a feature vector besides the extractor code.
#[derive(Debug, Clone, Copy)]
pub struct CacheKeyInput<'a> {
    pub image_digest: &'a [u8; 32],
    pub kind: FeatureKind,
    pub preprocess: &'a PreprocessConfig,
    pub dim_side: usize,
    /// Augmentation settings and the sample index they were drawn with.
    pub augment: Option<(&'a AugmentConfig, u64)>,
    /// Label-dependent augmentation steps make the label part of the key.
    pub attack: bool,
}

pub fn image_digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn cache_key(input: &CacheKeyInput<'_>) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(FORMAT_TAG);
    field(input.image_digest);
    field(input.kind.to_string().as_bytes());
    field(
        serde_json::to_string(input.preprocess)
            .expect("config serialises")
            .as_bytes(),
    );
    field(&(input.dim_side as u64).to_le_bytes());
    let pooling: &[u8] = if detector::is_signed_residual(input.kind) {
        b"abs-area"
    } else {
        b"area"
    };
    field(pooling);
    match input.augment {
        None => field(b"none"),
        Some((cfg, index)) => {
            field(serde_json::to_string(cfg).expect("config serialises").as_bytes());
            field(&index.to_le_bytes());
            field(&[u8::from(input.attack)]);
        }
    }
    hex::encode(h.finalize())
}

fn encode(v: &FeatureVector) -> Vec<u8> {
    let kind = v.kind.to_string();
    let mut out = Vec::with_capacity(16 + kind.len() + 8 * v.len());
    out.extend_from_slice(&(kind.len() as u32).to_le_bytes());
    out.extend_from_slice(kind.as_bytes());
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in &v.values {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Option<FeatureVector> {
    let klen = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let kind: FeatureKind = std::str::from_utf8(bytes.get(4..4 + klen)?).ok()?.parse().ok()?;
    let rest = bytes.get(4 + klen..)?;
    let n = u64::from_le_bytes(rest.get(..8)?.try_into().ok()?) as usize;
    let body = rest.get(8..)?;
    if body.len() != n.checked_mul(8)? {
        return None;
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Some(FeatureVector { values, kind })
}

/// Optional on-disk cache. A disabled cache computes every request.
#[derive(Debug, Default)]
pub struct FeatureCache {
    dir: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl FeatureCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            ..Self::default()
        }
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn entry_path(dir: &Path, key: &str) -> PathBuf {
        dir.join(&key[..2]).join(format!("{key}.fv"))
    }

    /// Cached vector for `key`, if present and readable. Corrupt entries
    /// count as absent.
    pub fn get(&self, key: &str) -> Option<FeatureVector> {
        let dir = self.dir.as_deref()?;
        let bytes = std::fs::read(Self::entry_path(dir, key)).ok()?;
        decode(&bytes)
    }

    /// Stores atomically: the entry appears complete or not at all.
    pub fn put(&self, key: &str, v: &FeatureVector) -> Result<()> {
        let Some(dir) = self.dir.as_deref() else {
            return Ok(());
        };
        let path = Self::entry_path(dir, key);
        let parent = path.parent().expect("entry has a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(parent, e))?;
        tmp.write_all(&encode(v)).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }

    /// Looks `key` up, computing and storing the vector on a miss.
    pub fn get_or_compute(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<FeatureVector>,
    ) -> Result<FeatureVector> {
        if let Some(v) = self.get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = compute()?;
        self.put(key, &v)?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector() -> FeatureVector {
        FeatureVector {
            values: vec![0.1, -3.5, f64::MIN_POSITIVE, 1e300],
            kind: FeatureKind::Svd {
                rank: 7,
                output: crate::features::SvdOutput::Residual,
            },
        }
    }

    #[test]
    fn payload_round_trip_is_bit_exact() {
        let v = vector();
        assert_eq!(decode(&encode(&v)), Some(v.clone()));
        let mut bytes = encode(&v);
        bytes.pop();
        assert_eq!(decode(&bytes), None);
    }

    #[test]
    fn keys_separate_every_input() {
        let d1 = image_digest(b"one");
        let d2 = image_digest(b"two");
        let pre = PreprocessConfig::default();
        let aug = AugmentConfig::default();
        let base = CacheKeyInput {
            image_digest: &d1,
            kind: FeatureKind::Srm,
            preprocess: &pre,
            dim_side: 32,
            augment: None,
            attack: false,
        };
        let pre2 = PreprocessConfig {
            target_size: 256,
            ..pre.clone()
        };
        let variants = [
            CacheKeyInput { image_digest: &d2, ..base },
            CacheKeyInput { kind: FeatureKind::Dft, ..base },
            CacheKeyInput { preprocess: &pre2, ..base },
            CacheKeyInput { dim_side: 16, ..base },
            CacheKeyInput { augment: Some((&aug, 0)), ..base },
            CacheKeyInput { augment: Some((&aug, 1)), ..base },
            CacheKeyInput { augment: Some((&aug, 1)), attack: true, ..base },
        ];
        let mut keys: Vec<String> = variants.iter().map(cache_key).collect();
        keys.push(cache_key(&base));
        assert_eq!(cache_key(&base), cache_key(&base));
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
    }

    #[test]
    fn hit_after_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(Some(dir.path().to_owned()));
        let v = vector();
        let got = cache.get_or_compute("ab12", || Ok(v.clone())).unwrap();
        assert_eq!(got, v);
        let again = cache
            .get_or_compute("ab12", || panic!("should be cached"))
            .unwrap();
        assert_eq!(again, v);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));

        let off = FeatureCache::disabled();
        off.get_or_compute("ab12", || Ok(v.clone())).unwrap();
        off.get_or_compute("ab12", || Ok(v.clone())).unwrap();
        assert_eq!((off.hits(), off.misses()), (0, 2));
    }
}
