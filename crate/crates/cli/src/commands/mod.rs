pub mod metrics;
pub mod stabilize;
pub mod synth;
pub mod track;

use std::path::Path;

use serde::Serialize;

use crate::config::Settings;
use crate::dataset::{Dataset, Preprocessor};
use crate::error::CliError;

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    amc::io::save_json(path, value).map_err(CliError::data)
}

pub(crate) fn preprocessor(dataset: &Dataset, settings: &Settings) -> Preprocessor {
    Preprocessor {
        remap: dataset.remap.clone(),
        downsample: settings.downsample,
        width: dataset.meta.width as usize,
        height: dataset.meta.height as usize,
    }
}

pub(crate) fn frame_name(index: usize) -> String {
    format!("{index:06}.png")
}
