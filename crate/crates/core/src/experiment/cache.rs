use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::audio::{canonicalize, load_wav, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::features::{extract, CepstralMatrix, FeatureConfig, FeatureKind};
use crate::perceptual::N_CEPS;
use crate::sdc::{decode_ftr, encode_ftr};

/// Overrides the feature cache directory.
pub const CACHE_DIR_ENV: &str = "DYSFLOW_CACHE_DIR";

const FEATURE_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    /// Served from an intact cache entry.
    Hit,
    Computed,
    /// An entry existed but failed its checksum or did not parse.
    Recomputed,
}

/// Static cepstra stored as FTR1 files named after the SHA-256 of the WAV
/// bytes and of the feature configuration. Each entry has a `.sha256`
/// sidecar holding the digest of the FTR1 bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureCache {
    dir: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn config_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    sha256_hex(&json)[..16].to_string()
}

#[derive(Serialize)]
struct KeyedConfig<'a> {
    /// Bumped whenever extraction output changes for the same settings.
    format: u32,
    kind: FeatureKind,
    features: &'a FeatureConfig,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$DYSFLOW_CACHE_DIR` when set, else `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => Self::new(d),
            _ => Self::new(default),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, wav_bytes: &[u8], kind: FeatureKind, cfg: &FeatureConfig) -> PathBuf {
        let audio = &sha256_hex(wav_bytes)[..32];
        let conf = config_hash(&KeyedConfig {
            format: FEATURE_FORMAT,
            kind,
            features: cfg,
        });
        self.dir.join(format!("{audio}-{}-{conf}.ftr", kind.slug()))
    }

    fn sidecar(entry: &Path) -> PathBuf {
        let mut s = entry.as_os_str().to_owned();
        s.push(".sha256");
        PathBuf::from(s)
    }

    fn read_entry(entry: &Path) -> std::result::Result<Option<Vec<u8>>, String> {
        let bytes = match fs::read(entry) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.to_string()),
        };
        let want =
            fs::read_to_string(Self::sidecar(entry)).map_err(|e| format!("checksum file: {e}"))?;
        if want.trim() != sha256_hex(&bytes) {
            return Err("checksum mismatch".into());
        }
        Ok(Some(bytes))
    }

    fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(format!(".tmp{}", std::process::id()));
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Cepstra of the WAV at `wav`, from the cache when an intact entry
    /// exists. Corrupt entries are logged, recomputed and overwritten.
    pub fn load_or_compute(
        &self,
        wav: &Path,
        kind: FeatureKind,
        cfg: &FeatureConfig,
    ) -> Result<(CepstralMatrix, CacheStatus)> {
        let wav_bytes = fs::read(wav).map_err(|e| Error::io(wav, e))?;
        let entry = self.entry_path(&wav_bytes, kind, cfg);
        let hop_ms = match kind {
            FeatureKind::PeZtwcc | FeatureKind::Ztwcc => cfg.ztw.hop_ms,
            FeatureKind::Mfcc | FeatureKind::Plp => cfg.frame.hop_ms,
        };
        let hop_samples = (hop_ms * f64::from(CANONICAL_RATE) / 1000.0).round();
        let mut status = CacheStatus::Computed;
        match Self::read_entry(&entry).and_then(|b| match b {
            Some(b) => decode_ftr(&b, &entry).map(Some).map_err(|e| e.to_string()),
            None => Ok(None),
        }) {
            Ok(Some(values)) if values.cols() == N_CEPS => {
                log::debug!("skipped {}: cached", wav.display());
                return Ok((
                    CepstralMatrix {
                        values,
                        frame_hop_s: hop_samples / f64::from(CANONICAL_RATE),
                        kind,
                    },
                    CacheStatus::Hit,
                ));
            }
            Ok(None) => {}
            Ok(Some(values)) => {
                log::warn!(
                    "cache entry {} has {} columns; recomputing",
                    entry.display(),
                    values.cols()
                );
                status = CacheStatus::Recomputed;
            }
            Err(why) => {
                log::warn!(
                    "cache entry {} is corrupt ({why}); recomputing",
                    entry.display()
                );
                status = CacheStatus::Recomputed;
            }
        }
        let clip = canonicalize(&load_wav(wav)?)?;
        let cepstra = extract(kind, &clip, cfg)?;
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let bytes = encode_ftr(&cepstra.values)?;
        Self::write_atomic(&entry, &bytes)?;
        Self::write_atomic(
            &Self::sidecar(&entry),
            format!("{}\n", sha256_hex(&bytes)).as_bytes(),
        )?;
        Ok((cepstra, status))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, AudioClip, WavEncoding};

    fn wav(dir: &Path) -> PathBuf {
        let x: Vec<f32> = (0..16000).map(|i| (i as f32 * 0.07).sin() * 0.3).collect();
        let p = dir.join("a.wav");
        write_wav(&AudioClip::mono(x, 16000), &p, WavEncoding::Pcm16).unwrap();
        p
    }

    #[test]
    fn cached_equals_fresh_and_corruption_recomputes() {
        let dir = tempfile::tempdir().unwrap();
        let w = wav(dir.path());
        let cache = FeatureCache::new(dir.path().join("cache"));
        let cfg = FeatureConfig::default();
        for kind in [FeatureKind::PeZtwcc, FeatureKind::Mfcc] {
            let (fresh, s1) = cache.load_or_compute(&w, kind, &cfg).unwrap();
            let (cached, s2) = cache.load_or_compute(&w, kind, &cfg).unwrap();
            assert_eq!((s1, s2), (CacheStatus::Computed, CacheStatus::Hit));
            assert_eq!(fresh, cached);
            let direct =
                extract(kind, &canonicalize(&load_wav(&w).unwrap()).unwrap(), &cfg).unwrap();
            assert_eq!(direct, cached);

            let entry = cache.entry_path(&fs::read(&w).unwrap(), kind, &cfg);
            let mut bytes = fs::read(&entry).unwrap();
            bytes[20] ^= 0x40;
            fs::write(&entry, bytes).unwrap();
            let (again, s3) = cache.load_or_compute(&w, kind, &cfg).unwrap();
            assert_eq!(s3, CacheStatus::Recomputed);
            assert_eq!(again, fresh);
            assert_eq!(
                cache.load_or_compute(&w, kind, &cfg).unwrap().1,
                CacheStatus::Hit
            );
        }
    }

    #[test]
    fn key_depends_on_audio_kind_and_config() {
        let cache = FeatureCache::new("/c");
        let cfg = FeatureConfig::default();
        let mut other = cfg.clone();
        other.ztw.hop_ms = 5.0;
        let a = cache.entry_path(b"x", FeatureKind::PeZtwcc, &cfg);
        assert_eq!(a, cache.entry_path(b"x", FeatureKind::PeZtwcc, &cfg));
        assert_ne!(a, cache.entry_path(b"y", FeatureKind::PeZtwcc, &cfg));
        assert_ne!(a, cache.entry_path(b"x", FeatureKind::Ztwcc, &cfg));
        assert_ne!(a, cache.entry_path(b"x", FeatureKind::PeZtwcc, &other));
    }
}
