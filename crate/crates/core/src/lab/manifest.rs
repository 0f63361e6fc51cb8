use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lab::io::write_json;
use crate::lab::spec::ExperimentSpec;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Paths relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
}

/// Index of everything a run wrote, produced after all seeds finish.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub recipe: String,
    pub config_hash: String,
    pub tool_version: String,
    pub spec: ExperimentSpec,
    pub summary: Vec<PathBuf>,
    pub runs: Vec<RunRecord>,
}

impl RunManifest {
    pub fn new(spec: &ExperimentSpec, config_hash: String, summary: Vec<PathBuf>, runs: Vec<RunRecord>) -> Self {
        RunManifest {
            recipe: spec.recipe.clone(),
            config_hash,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            spec: spec.clone(),
            summary,
            runs,
        }
    }

    pub fn all_outputs(&self) -> impl Iterator<Item = &PathBuf> {
        self.summary.iter().chain(self.runs.iter().flat_map(|r| &r.outputs))
    }

    /// Every listed file must exist under `root`.
    pub fn check_outputs(&self, root: &Path) -> Result<()> {
        match self.all_outputs().find(|p| !root.join(p).is_file()) {
            Some(p) => Err(LabError::Precondition(format!(
                "manifest lists missing file {}",
                p.display()
            ))),
            None => Ok(()),
        }
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        self.check_outputs(root)?;
        write_json(&root.join(MANIFEST_NAME), self)
    }
}
