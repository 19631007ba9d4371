//! Output files. Every file carries the config hash and is written through a
//! temporary file and a rename, so readers never see a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use storelight::model::Envelope;
use storelight::pulses::write_csv;

use crate::CliError;

pub struct OutputDir {
    root: PathBuf,
    hash: String,
}

impl OutputDir {
    pub fn create(root: &Path, hash: &str) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::io(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            hash: hash.to_string(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn preamble(&self) -> Vec<String> {
        vec![format!("config_hash={}", self.hash)]
    }

    pub fn write_bytes(&self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.path(rel);
        let dir = target.parent().unwrap_or(&self.root);
        fs::create_dir_all(dir)
            .map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
        let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("out");
        let tmp = dir.join(format!(".{name}.tmp"));
        let result = fs::File::create(&tmp)
            .and_then(|mut f| {
                f.write_all(bytes)?;
                f.sync_all()
            })
            .and_then(|_| fs::rename(&tmp, &target));
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(CliError::io(format!(
                "cannot write {}: {e}",
                target.display()
            )));
        }
        Ok(())
    }

    /// Serializes `value` as a JSON object with a `config_hash` field added.
    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut json = serde_json::to_value(value).map_err(|e| CliError::io(e.to_string()))?;
        if let Value::Object(map) = &mut json {
            map.insert("config_hash".into(), Value::String(self.hash.clone()));
        }
        let mut bytes =
            serde_json::to_vec_pretty(&json).map_err(|e| CliError::io(e.to_string()))?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    pub fn write_envelope(&self, rel: &str, env: &Envelope) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        write_csv(env, &self.preamble(), &mut bytes).map_err(|e| CliError::io(e.to_string()))?;
        self.write_bytes(rel, &bytes)
    }

    /// Writes a CSV table: hash comment, one header line, then `rows`.
    pub fn write_table(&self, rel: &str, header: &str, rows: &[String]) -> Result<(), CliError> {
        let mut text = String::new();
        for line in self.preamble() {
            text.push_str(&format!("# {line}\n"));
        }
        text.push_str(header);
        text.push('\n');
        for row in rows {
            text.push_str(row);
            text.push('\n');
        }
        self.write_bytes(rel, text.as_bytes())
    }
}
