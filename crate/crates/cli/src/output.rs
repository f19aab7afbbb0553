use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use seawater_cascade::eval::{emit_report, Provenance, ReportFormat, Tabular};

use crate::config::sha256_hex;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
struct ManifestEntry {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    files: &'a [ManifestEntry],
}

/// Output directory of one command. Starts with the resolved config and
/// ends with a manifest of every file written, both stamped with the
/// config hash and seed.
pub struct Outputs {
    dir: PathBuf,
    command: &'static str,
    pub provenance: Provenance,
    files: Vec<ManifestEntry>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("cannot write {}: {e}", path.display()))
}

impl Outputs {
    pub fn create(
        dir: &Path,
        command: &'static str,
        resolved_toml: &str,
        seed: u64,
    ) -> Result<Outputs, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut out = Outputs {
            dir: dir.to_path_buf(),
            command,
            provenance: Provenance {
                config_hash: sha256_hex(resolved_toml.as_bytes()),
                seed,
            },
            files: Vec::new(),
        };
        out.write(CONFIG_FILE, resolved_toml.as_bytes())?;
        info!("config hash {}", out.provenance.config_hash);
        Ok(out)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        info!("wrote {}", path.display());
        self.files.push(ManifestEntry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn report<R: Tabular + Serialize>(
        &mut self,
        stem: &str,
        rows: &[R],
        formats: &[ReportFormat],
    ) -> Result<(), CliError> {
        for &f in formats {
            let bytes = emit_report(rows, f, Some(&self.provenance))?;
            self.write(&format!("{stem}.{}", f.extension()), &bytes)?;
        }
        Ok(())
    }

    /// Model JSON with a leading `provenance` object; model loaders ignore it.
    pub fn model(&mut self, name: &str, json: &str) -> Result<(), CliError> {
        let stamp = serde_json::to_string(&self.provenance).expect("provenance serializes");
        let body = json
            .strip_prefix('{')
            .ok_or_else(|| CliError::Config("model JSON is not an object".into()))?;
        self.write(
            name,
            format!("{{\"provenance\":{stamp},{body}\n").as_bytes(),
        )
    }

    pub fn finish(self) -> Result<(), CliError> {
        let manifest = Manifest {
            command: self.command,
            config_hash: &self.provenance.config_hash,
            seed: self.provenance.seed,
            files: &self.files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))
    }
}
