use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{read_feature_matrix, read_labels};
use crate::error::{Error, Result};
use crate::tensor::FeatureMatrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u32,
    pub label: String,
}

/// Dataset description. Paths are resolved relative to the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub classes: Vec<ClassEntry>,
    pub skeleton_features: PathBuf,
    pub skeleton_labels: PathBuf,
    pub text_features: PathBuf,
    pub d_x: usize,
    pub d_y: usize,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        manifest.check_class_table()?;
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Class ids must be `0..n` in order, since they index text feature rows.
    fn check_class_table(&self) -> Result<()> {
        for (i, c) in self.classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::Data(format!(
                    "class table entry {i} has id {}, expected {i}",
                    c.id
                )));
            }
        }
        Ok(())
    }
}

/// A manifest together with its loaded matrices, validated against each other.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub features: FeatureMatrix,
    pub labels: Vec<u32>,
    pub text: FeatureMatrix,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::read(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let features = read_feature_matrix(base.join(&manifest.skeleton_features))?;
        let labels = read_labels(base.join(&manifest.skeleton_labels))?;
        let text = read_feature_matrix(base.join(&manifest.text_features))?;
        Self::new(manifest, features, labels, text)
    }

    pub fn new(
        manifest: DatasetManifest,
        features: FeatureMatrix,
        labels: Vec<u32>,
        text: FeatureMatrix,
    ) -> Result<Self> {
        manifest.check_class_table()?;
        if text.rows() != manifest.num_classes() {
            return Err(Error::Data(format!(
                "text features have {} rows for {} classes",
                text.rows(),
                manifest.num_classes()
            )));
        }
        if features.cols() != manifest.d_x || text.cols() != manifest.d_y {
            return Err(Error::Data(format!(
                "declared dims ({}, {}) but files have ({}, {})",
                manifest.d_x,
                manifest.d_y,
                features.cols(),
                text.cols()
            )));
        }
        if labels.len() != features.rows() {
            return Err(Error::Data(format!(
                "{} labels for {} skeleton samples",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= manifest.num_classes()) {
            return Err(Error::Data(format!(
                "label {bad} outside class table of {}",
                manifest.num_classes()
            )));
        }
        Ok(Self {
            manifest,
            features,
            labels,
            text,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes()
    }

    /// Sample indices whose label is `class`, in file order.
    pub fn indices_of(&self, class: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Text feature rows matching each of the given samples' labels.
    pub fn text_rows_for(&self, samples: &[usize]) -> FeatureMatrix {
        let rows: Vec<usize> = samples.iter().map(|&i| self.labels[i] as usize).collect();
        self.text.select_rows(&rows)
    }
}
