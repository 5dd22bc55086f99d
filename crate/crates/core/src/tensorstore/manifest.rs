//! JSON manifests describing feature and concept datasets.
//!
//! Tensor paths are relative to the directory holding the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURES_FORMAT: &str = "uibf-features";
pub const CONCEPTS_FORMAT: &str = "uibf-concepts";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureManifest {
    pub format: String,
    pub version: u32,
    pub layer_dim: usize,
    pub images: Vec<FeatureImage>,
    /// Free-form provenance (probe resolution, preprocessing, source layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureImage {
    pub id: String,
    pub path: String,
    pub height: usize,
    pub width: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptManifest {
    pub format: String,
    pub version: u32,
    pub concepts: Vec<ConceptEntry>,
    pub images: Vec<ConceptImage>,
    pub masks: Vec<MaskEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptEntry {
    pub id: u32,
    pub name: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptImage {
    pub id: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskEntry {
    pub image: String,
    pub concept: u32,
    pub path: String,
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::manifest(path, e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::manifest(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl FeatureManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        if m.format != FEATURES_FORMAT {
            return Err(Error::manifest(
                path,
                format!("format is {:?}, expected {:?}", m.format, FEATURES_FORMAT),
            ));
        }
        if m.version != MANIFEST_VERSION {
            return Err(Error::manifest(
                path,
                format!("unsupported manifest version {}", m.version),
            ));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

impl ConceptManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        if m.format != CONCEPTS_FORMAT {
            return Err(Error::manifest(
                path,
                format!("format is {:?}, expected {:?}", m.format, CONCEPTS_FORMAT),
            ));
        }
        if m.version != MANIFEST_VERSION {
            return Err(Error::manifest(
                path,
                format!("unsupported manifest version {}", m.version),
            ));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
