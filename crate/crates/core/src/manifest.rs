//! Dataset manifests: the JSON files that tie pipeline stages together.
//!
//! Every stage reads one manifest and writes another; paths are stored
//! relative to the manifest's own directory so output trees are relocatable.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anatomy::SijBoxes;
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    /// Mask predicted by the segmentation model (written by `segment`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_mask_path: Option<PathBuf>,
    /// SIJ-cropped image (written by `crop`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_path: Option<PathBuf>,
    /// Detected SIJ boxes in full-image coordinates, for audit and Grad-CAM.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sij_boxes: Option<SijBoxes>,
    pub grades: (u8, u8),
    pub label: u8,
    pub cohort_tag: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub schema_version: u32,
    pub generator_version: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(seed: u64) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            generator_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(&e.sample_id) {
                return Err(Error::InvalidSpec(format!(
                    "duplicate sample_id {}",
                    e.sample_id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "manifest schema version {} unsupported (expected {})",
                m.schema_version, MANIFEST_SCHEMA_VERSION
            )));
        }
        m.validate()?;
        Ok(m)
    }

    /// Content hash over the canonical JSON encoding, for determinism checks.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Resolve a stored relative path against the manifest's directory.
    pub fn resolve(manifest_path: &Path, stored: &Path) -> PathBuf {
        if stored.is_absolute() {
            stored.to_path_buf()
        } else {
            manifest_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(stored)
        }
    }

    pub fn prevalence(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().filter(|e| e.label == 1).count() as f64 / self.entries.len() as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FollowUpEntry {
    pub sample_id: String,
    pub baseline_label: u8,
    pub followup_label: u8,
    pub horizon_months: u32,
}

/// Synthetic follow-up labels at a fixed horizon (default 24 months).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FollowUpManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub entries: Vec<FollowUpEntry>,
}

impl FollowUpManifest {
    pub fn new(seed: u64) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            seed,
            entries: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.baseline_label == 1 && e.followup_label != 1 {
                return Err(Error::InvalidSpec(format!(
                    "sample {} regressed from baseline-positive",
                    e.sample_id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: FollowUpManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}
