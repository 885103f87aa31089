//! One module per subcommand plus the shared invocation context.

pub mod analyze;
pub mod detect;
pub mod eval;
pub mod gen_rois;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use crate::errors::{CliError, CliResult};

/// Global flags, resolved once per invocation.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Ctx {
    /// Every command writes files, so `--out` is mandatory.
    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("missing --out <DIR>".into()))
    }

    /// The output directory, created if absent.
    pub fn ensure_out_dir(&self) -> CliResult<PathBuf> {
        let out = self.out_dir()?;
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
        Ok(out.to_path_buf())
    }
}

/// Load a dataset directory, labeling errors with the path.
pub fn load_dataset(dir: &Path) -> CliResult<mexdet_core::dataset::Dataset> {
    mexdet_core::dataset::load_dataset(dir)
        .map_err(|e| CliError::Data(format!("dataset {}: {e}", dir.display())))
}
