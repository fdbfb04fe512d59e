//! Run manifests: the dataset, codebook, schedule, training config, member
//! checkpoints and seed block of one study, with file digests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codebook::Codebook;
use crate::diffusion::{NoiseSchedule, TrainingConfig};
use crate::ensemble::EnsembleDenoiser;
use crate::error::{Error, Result};
use crate::experiments::{GeneratorDescriptor, ToyDataset};
use crate::numerics::{checkpoint, derive_seed};

pub const RUN_MANIFEST_VERSION: u32 = 1;

/// Seed purposes under the master seed.
pub mod seed_purpose {
    pub const CODES: u64 = 10;
    pub const DATA: u64 = 11;
    pub const TRAINING: u64 = 12;
    pub const SAMPLING: u64 = 13;
    pub const EXPERIMENT: u64 = 14;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedBlock {
    pub master: u64,
    pub codes: u64,
    pub data: u64,
    pub training: u64,
    pub sampling: u64,
    pub experiment: u64,
}

impl SeedBlock {
    pub fn from_master(master: u64) -> Self {
        let child = |p| derive_seed(master, p, 0);
        SeedBlock {
            master,
            codes: child(seed_purpose::CODES),
            data: child(seed_purpose::DATA),
            training: child(seed_purpose::TRAINING),
            sampling: child(seed_purpose::SAMPLING),
            experiment: child(seed_purpose::EXPERIMENT),
        }
    }
}

/// A file next to the manifest and its SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub generator: GeneratorDescriptor,
    /// Items kept from the generated sequence (labels are interleaved, so a
    /// prefix stays class-balanced).
    pub items: usize,
}

impl DatasetSpec {
    pub fn build(&self) -> Result<ToyDataset> {
        let mut d = ToyDataset::from_descriptor(&self.generator)?;
        if self.items > d.len() {
            return Err(Error::invalid(format!(
                "dataset spec keeps {} of {} items",
                self.items,
                d.len()
            )));
        }
        d.items.truncate(self.items);
        d.labels.truncate(self.items);
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

impl From<&NoiseSchedule> for ScheduleSpec {
    fn from(s: &NoiseSchedule) -> Self {
        ScheduleSpec {
            steps: s.steps,
            beta_start: s.beta_start,
            beta_end: s.beta_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub dataset: DatasetSpec,
    pub codebook: FileRef,
    pub schedule: ScheduleSpec,
    pub training: TrainingConfig,
    /// Empty until the members are trained.
    pub members: Vec<FileRef>,
    pub seeds: SeedBlock,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes via a temporary sibling and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("no file name in {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: RunManifest,
    pub path: PathBuf,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: RunManifest = read_json(path)?;
        if manifest.version != RUN_MANIFEST_VERSION {
            return Err(Error::Format(format!("manifest version {}", manifest.version)));
        }
        Ok(LoadedManifest {
            manifest,
            path: path.to_path_buf(),
        })
    }

    pub fn dir(&self) -> PathBuf {
        self.path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    }

    pub fn resolve(&self, file: &FileRef) -> PathBuf {
        self.dir().join(&file.path)
    }

    /// Reads a referenced file, failing if its digest differs from the record.
    pub fn read_verified(&self, file: &FileRef) -> Result<Vec<u8>> {
        let path = self.resolve(file);
        let bytes = fs::read(&path).map_err(|e| {
            Error::invalid(format!("cannot read {}: {e}", path.display()))
        })?;
        let actual = sha256_hex(&bytes);
        if actual != file.sha256 {
            return Err(Error::Format(format!(
                "digest mismatch for {}: recorded {}, found {actual}",
                file.path, file.sha256
            )));
        }
        Ok(bytes)
    }

    pub fn codebook(&self) -> Result<Codebook> {
        let bytes = self.read_verified(&self.manifest.codebook)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
        Codebook::from_json(&text)
    }

    pub fn dataset(&self) -> Result<ToyDataset> {
        self.manifest.dataset.build()
    }

    /// Verifies every member digest before loading any of them.
    pub fn ensemble(&self) -> Result<EnsembleDenoiser> {
        if self.manifest.members.is_empty() {
            return Err(Error::invalid("manifest has no trained members; run train first"));
        }
        let blobs = self
            .manifest
            .members
            .iter()
            .map(|m| self.read_verified(m))
            .collect::<Result<Vec<_>>>()?;
        let codebook = self.codebook()?;
        let members = blobs
            .iter()
            .map(|b| checkpoint::read_checkpoint(b.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        EnsembleDenoiser::new(members, codebook, self.manifest.schedule.build()?)
    }

    pub fn save(&self) -> Result<()> {
        write_json(&self.path, &self.manifest)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&fs::read(&self.path)?))
    }
}

/// Writes member checkpoints next to the manifest and records their digests.
pub fn store_members(loaded: &mut LoadedManifest, ens: &EnsembleDenoiser) -> Result<()> {
    let mut refs = Vec::with_capacity(ens.len());
    for (i, m) in ens.members().iter().enumerate() {
        let bytes = checkpoint::to_bytes(m);
        let name = format!("member_{i:03}.ensd");
        atomic_write(&loaded.dir().join(&name), &bytes)?;
        refs.push(FileRef {
            path: name,
            sha256: sha256_hex(&bytes),
        });
    }
    loaded.manifest.members = refs;
    loaded.save()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_block_is_deterministic_and_distinct() {
        let a = SeedBlock::from_master(7);
        assert_eq!(a, SeedBlock::from_master(7));
        let all = [a.codes, a.data, a.training, a.sampling, a.experiment];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn digest_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c.json"), b"{}").unwrap();
        let loaded = LoadedManifest {
            manifest: RunManifest {
                version: RUN_MANIFEST_VERSION,
                dataset: DatasetSpec {
                    generator: GeneratorDescriptor {
                        family: "glyphs".into(),
                        class_count: 7,
                        per_class: 1,
                        jitter: 0.0,
                        seed: 0,
                    },
                    items: 7,
                },
                codebook: FileRef {
                    path: "c.json".into(),
                    sha256: "00".into(),
                },
                schedule: ScheduleSpec {
                    steps: 10,
                    beta_start: 1e-3,
                    beta_end: 0.1,
                },
                training: TrainingConfig::default(),
                members: vec![],
                seeds: SeedBlock::from_master(0),
            },
            path: dir.path().join("manifest.json"),
        };
        assert!(matches!(loaded.codebook(), Err(Error::Format(_))));
        assert!(loaded.ensemble().is_err());
    }
}
