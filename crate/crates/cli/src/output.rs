use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Stage seed derived from the global seed and the stage name, so stages
/// draw independent streams.
pub fn sub_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub format: Format,
    pub config: ExperimentConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Collects output files for one command run.
pub struct RunDir {
    dir: PathBuf,
    format: Format,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunDir {
    pub fn new(dir: &Path, format: Format) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            format,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes a CSV table as `<stem>.csv`, or as JSON lines keyed by the
    /// header when the run asked for `jsonl`.
    pub fn write_table(&mut self, stem: &str, csv: Vec<u8>) -> std::io::Result<()> {
        match self.format {
            Format::Csv => self.write(&format!("{stem}.csv"), &csv),
            Format::Jsonl => self.write(&format!("{stem}.jsonl"), &csv_to_jsonl(&csv)),
        }
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
        self.write(name, text.as_bytes())
    }

    pub fn read_input(&mut self, path: &Path) -> std::io::Result<Vec<u8>> {
        let bytes = fs::read(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> std::io::Result<Manifest> {
        let resolved = cfg.to_json();
        self.write("config.resolved.json", resolved.as_bytes())?;
        let manifest = Manifest {
            command: command.to_string(),
            seed: cfg.seed,
            format: self.format,
            config: cfg.clone(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

/// The tables hold only numeric cells, so a plain split is exact.
fn csv_to_jsonl(csv: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(csv);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
    let mut out = String::new();
    for line in lines {
        let mut obj = serde_json::Map::new();
        for (name, cell) in header.iter().zip(line.split(',')) {
            let value = serde_json::from_str::<serde_json::Number>(cell)
                .map(serde_json::Value::Number)
                .unwrap_or_else(|_| serde_json::Value::String(cell.to_string()));
            obj.insert(name.to_string(), value);
        }
        out.push_str(&serde_json::Value::Object(obj).to_string());
        out.push('\n');
    }
    out.into_bytes()
}
