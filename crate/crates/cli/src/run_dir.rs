use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliResult;

/// Outputs are staged next to the target and moved in on [`RunDir::commit`],
/// so a failed command leaves the run directory untouched.
pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    cmd: &'static str,
    started: Instant,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
    committed: bool,
}

impl RunDir {
    pub fn open(target: &Path, cmd: &'static str) -> CliResult<Self> {
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let staging = parent.join(format!(".{name}.{cmd}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            cmd,
            started: Instant::now(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            committed: false,
        })
    }

    /// Path of an output file inside the staging area.
    pub fn file(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        fs::write(self.file(name), contents)?;
        Ok(())
    }

    pub fn seed(&mut self, label: &str, value: u64) {
        self.seeds.insert(label.into(), value);
    }

    pub fn input(&mut self, label: &str, path: &Path) {
        self.inputs.insert(label.into(), path.display().to_string());
    }

    /// Echoes the parsed configuration verbatim.
    pub fn echo_config<T: Serialize>(&self, config: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(config)?;
        self.write(&format!("{}.config.json", self.cmd), text + "\n")
    }

    fn manifest(&self, outputs: &[String]) -> Value {
        json!({
            "cmd": self.cmd,
            "argv": std::env::args().collect::<Vec<_>>(),
            "seeds": self.seeds,
            "versions": {
                "cordonlab": env!("CARGO_PKG_VERSION"),
                "dataset_format": cordonlab_core::dataset::FORMAT_VERSION,
                "checkpoint_format": cordonlab_core::mscn::model::CHECKPOINT_VERSION,
            },
            "inputs": self.inputs,
            "outputs": outputs,
            "wall_seconds": self.started.elapsed().as_secs_f64(),
        })
    }

    pub fn commit(mut self) -> CliResult<PathBuf> {
        let mut outputs: Vec<String> = fs::read_dir(&self.staging)?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()?;
        outputs.sort();
        let manifest = serde_json::to_string_pretty(&self.manifest(&outputs))?;
        self.write(&format!("{}.manifest.json", self.cmd), manifest + "\n")?;
        if !self.target.exists() {
            fs::rename(&self.staging, &self.target)?;
        } else {
            for entry in fs::read_dir(&self.staging)? {
                let entry = entry?;
                fs::rename(entry.path(), self.target.join(entry.file_name()))?;
            }
            fs::remove_dir(&self.staging)?;
        }
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
