pub mod ablate;
pub mod eval;
pub mod gen_data;
pub mod infer;
pub mod train;

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn require(what: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingPrerequisite(vec![(what.to_string(), path.to_path_buf())]))
    }
}
