//! Dataset manifests: what is in a dataset, where the files live, and the
//! content hashes that pin them.
//!
//! Paths inside a manifest are relative to the manifest's own directory, so a
//! dataset directory can be moved (or reproduced elsewhere) without changing
//! a byte of the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::Label;
use crate::genclient::mock::EllipseEdit;
use crate::matchfilter::{Decision, FilterReport};
use crate::pipeline::PipelineError;
use crate::rulegen::Provenance;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_id: String,
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub image_path: String,
    pub image_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_normal_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_normal_hash: Option<String>,
    pub provenance: Provenance,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub filter_report: Option<FilterReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub edit_region: Option<EllipseEdit>,
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path)
        .map_err(|e| PipelineError::Io { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn file_name() -> &'static str {
        "manifest.json"
    }

    /// Writes `manifest.json` into `dir` (created if missing).
    pub fn write(&self, dir: &Path) -> Result<PathBuf, PipelineError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| PipelineError::Io { path: dir.to_path_buf(), reason: e.to_string() })?;
        let path = dir.join(Self::file_name());
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| PipelineError::Io { path: path.clone(), reason: e.to_string() })?;
        std::fs::write(&path, json.as_bytes())
            .map_err(|e| PipelineError::Io { path: path.clone(), reason: e.to_string() })?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Io { path: path.to_path_buf(), reason: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::BadManifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Checks that every referenced file exists with its recorded hash and
    /// that every generated entry was accepted as Desired. Returns the list
    /// of violation descriptions (empty means valid).
    pub fn validate(&self, manifest_path: &Path) -> Result<Vec<String>, PipelineError> {
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut violations = Vec::new();
        for entry in &self.entries {
            let mut check = |rel: &str, want: &str, what: &str| {
                let path = base.join(rel);
                if !path.exists() {
                    violations.push(format!("{}: missing {what} file {rel}", entry.sample_id));
                    return;
                }
                match sha256_file(&path) {
                    Ok(got) if got == want => {}
                    Ok(got) => violations.push(format!(
                        "{}: {what} hash mismatch for {rel}: recorded {want}, found {got}",
                        entry.sample_id
                    )),
                    Err(e) => violations.push(format!("{}: {e}", entry.sample_id)),
                }
            };
            check(&entry.image_path, &entry.image_hash, "image");
            if let (Some(p), Some(h)) = (&entry.mask_path, &entry.mask_hash) {
                check(p, h, "mask");
            }
            if let (Some(p), Some(h)) = (&entry.source_normal_path, &entry.source_normal_hash) {
                check(p, h, "source normal");
            }
            if entry.provenance.source.starts_with("gen:") {
                match &entry.filter_report {
                    Some(report) if report.decision == Decision::Desired => {}
                    Some(report) => violations.push(format!(
                        "{}: generated entry persisted with decision {:?}",
                        entry.sample_id, report.decision
                    )),
                    None => violations.push(format!(
                        "{}: generated entry without a filter report",
                        entry.sample_id
                    )),
                }
            }
        }
        Ok(violations)
    }

    /// Validation as a hard error, for callers that need a valid dataset.
    pub fn validate_strict(&self, manifest_path: &Path) -> Result<(), PipelineError> {
        let violations = self.validate(manifest_path)?;
        if violations.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::InvalidManifest {
                path: manifest_path.to_path_buf(),
                violations,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::{save_image, ImageBuffer};

    fn write_sample_dataset(dir: &Path) -> (Manifest, PathBuf) {
        std::fs::create_dir_all(dir.join("images")).unwrap();
        let img = ImageBuffer::filled(8, 8, 1, 50);
        let img_path = dir.join("images/s0.png");
        save_image(&img, &img_path).unwrap();
        let manifest = Manifest {
            dataset_id: "test".into(),
            config_hash: "cafe".into(),
            entries: vec![ManifestEntry {
                sample_id: "s0".into(),
                image_path: "images/s0.png".into(),
                image_hash: sha256_file(&img_path).unwrap(),
                mask_path: None,
                mask_hash: None,
                source_normal_path: None,
                source_normal_hash: None,
                provenance: Provenance::rule("rule:perlin", "00".into()),
                seed: 0,
                label: None,
                prompt: None,
                filter_report: None,
                edit_region: None,
            }],
        };
        let path = manifest.write(dir).unwrap();
        (manifest, path)
    }

    #[test]
    fn round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, path) = write_sample_dataset(dir.path());
        let loaded = Manifest::load(&path).unwrap();
        assert_eq!(loaded.dataset_id, manifest.dataset_id);
        assert!(loaded.validate(&path).unwrap().is_empty());
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, path) = write_sample_dataset(dir.path());
        // Flip one byte of the referenced image.
        let img_path = dir.path().join("images/s0.png");
        let mut bytes = std::fs::read(&img_path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&img_path, &bytes).unwrap();
        let violations = manifest.validate(&path).unwrap();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("hash mismatch"));
    }

    #[test]
    fn missing_file_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, path) = write_sample_dataset(dir.path());
        std::fs::remove_file(dir.path().join("images/s0.png")).unwrap();
        let violations = manifest.validate(&path).unwrap();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("missing"));
    }

    #[test]
    fn gen_entries_must_be_desired() {
        let dir = tempfile::tempdir().unwrap();
        let (mut manifest, path) = write_sample_dataset(dir.path());
        manifest.entries[0].provenance = Provenance::generated("default/scratch", "00".into());
        let violations = manifest.validate(&path).unwrap();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("without a filter report"));
    }
}
