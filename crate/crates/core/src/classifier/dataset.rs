use std::path::{Path, PathBuf};

use super::Class;
use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::io::read_gray;

/// One labelled grayscale image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Plane,
    pub label: Class,
}

/// Image files directly inside `dir`, sorted by file name.
pub(crate) fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "pgm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads `<root>/damage/*` and `<root>/background/*` (8-bit grayscale PNG
/// or PGM). Damage samples come first, each class in file-name order.
pub fn load_dataset_dir(root: &Path) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for class in [Class::Damage, Class::Background] {
        let dir = root.join(class.dir_name());
        if !dir.is_dir() {
            return Err(Error::data(format!("missing class directory {}", dir.display())));
        }
        for path in image_files(&dir)? {
            samples.push(Sample {
                image: read_gray(&path)?,
                label: class,
            });
        }
    }
    Ok(samples)
}
