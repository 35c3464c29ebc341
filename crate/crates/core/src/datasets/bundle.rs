use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::build::{DatasetBundle, DesignRecord};
use super::config::{DatasetConfig, Role};
use crate::error::{Error, Result};
use crate::fem::{read_series_binary, write_series_binary, SimulationSeries};
use crate::mesh::Mesh;

pub const BUNDLE_FORMAT: &str = "hybrid-twin-bundle/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEntry {
    pub id: String,
    pub role: Role,
    /// Relative path to SHA-256 of the file contents.
    pub files: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_nodes: Option<Vec<usize>>,
}

/// Human-readable index of a saved bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub generator_version: String,
    pub config_hash: String,
    pub config: DatasetConfig,
    pub designs: Vec<DesignEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn mesh_file(id: &str) -> String {
    format!("mesh_{id}.json")
}

fn series_file(id: &str, which: &str) -> String {
    format!("design_{id}/{which}.bin")
}

fn write_file(dir: &Path, rel: &str, bytes: &[u8]) -> Result<String> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(&path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(sha256_hex(bytes))
}

fn series_bytes(series: &SimulationSeries) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_series_binary(series, &mut buf)?;
    Ok(buf)
}

/// Writes the mesh, both series of every design and the manifest.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut designs = Vec::with_capacity(bundle.designs.len());
    for d in &bundle.designs {
        let mut files = BTreeMap::new();
        let mesh = mesh_file(&d.id);
        files.insert(
            mesh.clone(),
            write_file(dir, &mesh, d.mesh.to_json()?.as_bytes())?,
        );
        for (which, s) in [("linear", &d.linear), ("nonlinear", &d.nonlinear)] {
            let rel = series_file(&d.id, which);
            files.insert(rel.clone(), write_file(dir, &rel, &series_bytes(s)?)?);
        }
        designs.push(DesignEntry {
            id: d.id.clone(),
            role: d.role,
            files,
            parent_nodes: d.parent_nodes.clone(),
        });
    }
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        generator_version: bundle.generator_version.clone(),
        config_hash: bundle.config_hash.clone(),
        config: bundle.config.clone(),
        designs,
    };
    write_file(
        dir,
        MANIFEST_FILE,
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

fn read_checked(dir: &Path, rel: &str, expected: &str) -> Result<Vec<u8>> {
    let path = dir.join(rel);
    if !path.is_file() {
        return Err(Error::MissingArtifact(path));
    }
    let bytes = fs::read(&path)?;
    let found = sha256_hex(&bytes);
    if found != expected {
        return Err(Error::Integrity {
            what: rel.to_string(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(bytes)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingArtifact(path));
    }
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(&path)?))?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(Error::Format(format!(
            "unsupported bundle format {:?}, expected {BUNDLE_FORMAT:?}",
            manifest.format
        )));
    }
    let found = manifest.config.hash()?;
    if found != manifest.config_hash {
        return Err(Error::Integrity {
            what: "dataset configuration".into(),
            expected: manifest.config_hash.clone(),
            found,
        });
    }
    Ok(manifest)
}

/// Reads a bundle back, verifying the configuration hash and the content
/// hash of every file.
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let manifest = load_manifest(dir)?;
    let mut designs = Vec::with_capacity(manifest.designs.len());
    for entry in &manifest.designs {
        let hash = |rel: &str| {
            entry.files.get(rel).cloned().ok_or_else(|| {
                Error::Format(format!("manifest entry {} does not list {rel}", entry.id))
            })
        };
        let mesh_rel = mesh_file(&entry.id);
        let mesh_bytes = read_checked(dir, &mesh_rel, &hash(&mesh_rel)?)?;
        let mesh = Mesh::from_json(
            std::str::from_utf8(&mesh_bytes).map_err(|e| Error::Format(e.to_string()))?,
        )?;
        let mut series = Vec::with_capacity(2);
        for which in ["linear", "nonlinear"] {
            let rel = series_file(&entry.id, which);
            let bytes = read_checked(dir, &rel, &hash(&rel)?)?;
            series.push(read_series_binary(bytes.as_slice())?);
        }
        let nonlinear = series.pop().unwrap();
        let linear = series.pop().unwrap();
        designs.push(DesignRecord {
            id: entry.id.clone(),
            role: entry.role,
            mesh,
            linear,
            nonlinear,
            parent_nodes: entry.parent_nodes.clone(),
        });
    }
    Ok(DatasetBundle {
        config: manifest.config,
        config_hash: manifest.config_hash,
        generator_version: manifest.generator_version,
        designs,
    })
}
