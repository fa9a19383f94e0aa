//! File formats and dataset loading.

pub mod checkpoint;
pub mod manifest;
pub mod off;
pub mod point_binary;

use std::path::Path;

pub use apf_core::backbone::synth_pretrained;

use crate::error::AppError;
use point_binary::PointRecord;

/// Reads an `.off` mesh (vertices only, unlabeled) or an `.apfp` point file.
pub fn read_cloud(path: &Path) -> Result<PointRecord, AppError> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let what = || path.display().to_string();
    match ext.as_deref() {
        Some("off") => {
            let text = std::fs::read_to_string(path).map_err(|e| AppError::Data(format!("{}: {e}", what())))?;
            let cloud = off::parse_off(&text).map_err(|e| AppError::Data(format!("{}: {e}", what())))?;
            Ok(PointRecord { cloud, labels: Vec::new() })
        }
        Some("apfp") => point_binary::read_point_binary(path).map_err(|e| AppError::Data(format!("{}: {e}", what()))),
        _ => Err(AppError::Data(format!("{}: unsupported extension (expected .off or .apfp)", what()))),
    }
}
