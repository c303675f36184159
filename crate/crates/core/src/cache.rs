//! On-disk cache of rendered depth maps, addressed by the content hash of
//! the model and the exact bits of pose, intrinsics and supersampling.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::image::DepthMap;

/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "RELOCBENCH_CACHE_DIR";

const MAGIC: &[u8; 8] = b"RBDEPTH1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthCache {
    dir: PathBuf,
}

impl DepthCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(DepthCache { dir })
    }

    /// Cache rooted at `$RELOCBENCH_CACHE_DIR`, if set and non-empty.
    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var_os(CACHE_ENV) {
            Some(d) if !d.is_empty() => DepthCache::new(PathBuf::from(d)).map(Some),
            _ => Ok(None),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(model_hash: &str, pose: &Pose, k: &Intrinsics, supersampling: u32) -> String {
        let mut h = Sha256::new();
        h.update(model_hash.as_bytes());
        for v in pose.to_row_major_3x4() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(k.width.to_le_bytes());
        h.update(k.height.to_le_bytes());
        for v in [k.fx, k.fy, k.cx, k.cy] {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(supersampling.to_le_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.depth"))
    }

    /// Cached map for `key`, or `None` when absent, unreadable or of a
    /// different size.
    pub fn load(&self, key: &str, width: u32, height: u32) -> Option<DepthMap> {
        let bytes = fs::read(self.path(key)).ok()?;
        let body = bytes.strip_prefix(MAGIC.as_slice())?;
        if body.len() < 8 {
            return None;
        }
        let w = u32::from_le_bytes(body[0..4].try_into().ok()?);
        let h = u32::from_le_bytes(body[4..8].try_into().ok()?);
        let data = &body[8..];
        if w != width || h != height || data.len() != w as usize * h as usize * 8 {
            return None;
        }
        let values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        DepthMap::from_vec(w, h, values).ok()
    }

    /// Writes through a temporary file so concurrent readers never see a
    /// partial map.
    pub fn store(&self, key: &str, depth: &DepthMap) -> Result<()> {
        let path = self.path(key);
        let tmp = self.dir.join(format!(
            "{key}.{}.{:?}.tmp",
            std::process::id(),
            std::thread::current().id()
        ));
        let mut buf = Vec::with_capacity(16 + depth.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&depth.width().to_le_bytes());
        buf.extend_from_slice(&depth.height().to_le_bytes());
        for v in depth.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use nalgebra::Vector3;

    #[test]
    fn round_trip_and_keying() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DepthCache::new(dir.path()).unwrap();
        let k = Intrinsics::new(4, 3, 5.0, 5.0, 1.5, 1.0).unwrap();
        let depth = Image::from_fn(4, 3, |x, y| (x * 10 + y) as f64 * 0.1);
        let key = DepthCache::key("abc", &Pose::identity(), &k, 1);
        assert!(cache.load(&key, 4, 3).is_none());
        cache.store(&key, &depth).unwrap();
        assert_eq!(cache.load(&key, 4, 3).unwrap(), depth);
        assert!(cache.load(&key, 3, 4).is_none());
        let moved = Pose::from_translation(Vector3::new(0.0, 0.0, 1e-15));
        assert_ne!(key, DepthCache::key("abc", &moved, &k, 1));
        assert_ne!(key, DepthCache::key("abd", &Pose::identity(), &k, 1));
        assert_ne!(key, DepthCache::key("abc", &Pose::identity(), &k, 2));
    }
}
