//! Run manifest: a plain-text record of what produced an output directory.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub command: String,
    pub config_path: String,
    pub config_sha256: String,
    pub seed: u64,
    pub workers: usize,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_path: &Path, config_text: &str, seed: u64, workers: usize) -> Self {
        Self {
            command: command.into(),
            config_path: config_path.display().to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            workers,
            ..Default::default()
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command: {}", self.command);
        let _ = writeln!(s, "config: {}", self.config_path);
        let _ = writeln!(s, "config_sha256: {}", self.config_sha256);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "workers: {}", self.workers);
        let _ = writeln!(s, "eqz-harness: {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "eqz-core: {}", eqz_core::VERSION);
        let _ = writeln!(s, "platform: {}-{}", std::env::consts::ARCH, std::env::consts::OS);
        for o in &self.outputs {
            let _ = writeln!(s, "output: {o}");
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), self.render())?;
        Ok(())
    }
}
