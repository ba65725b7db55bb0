use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PATCH_SIZE: u32 = 256;

/// Full-resolution location of one patch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchCoord {
    pub patch_id: u64,
    pub slide_id: String,
    pub x: u64,
    pub y: u64,
}

/// The patches kept after tissue segmentation for one patient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchCoordinateSet {
    patch_size: u32,
    entries: Vec<PatchCoord>,
}

impl PatchCoordinateSet {
    pub fn new(patch_size: u32, entries: Vec<PatchCoord>) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::Validation("patch_size must be positive".into()));
        }
        let mut ids = HashSet::with_capacity(entries.len());
        let mut cells = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !ids.insert(e.patch_id) {
                return Err(Error::Validation(format!("duplicate patch_id {}", e.patch_id)));
            }
            if e.x % u64::from(patch_size) != 0 || e.y % u64::from(patch_size) != 0 {
                return Err(Error::Validation(format!(
                    "patch {} at ({}, {}) is not aligned to the {patch_size}px grid",
                    e.patch_id, e.x, e.y
                )));
            }
            if !cells.insert((e.slide_id.as_str(), e.x, e.y)) {
                return Err(Error::Validation(format!(
                    "duplicate location ({}, {}) on slide {:?}",
                    e.x, e.y, e.slide_id
                )));
            }
        }
        Ok(Self {
            patch_size,
            entries,
        })
    }

    pub fn empty(patch_size: u32) -> Self {
        Self {
            patch_size,
            entries: Vec::new(),
        }
    }

    pub fn patch_size(&self) -> u32 {
        self.patch_size
    }

    pub fn entries(&self) -> &[PatchCoord] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads `patch_id,slide_id,x,y`.
    pub fn read_csv(path: impl AsRef<Path>, patch_size: u32) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        check_header(reader.headers()?, &["patch_id", "slide_id", "x", "y"], path)?;
        let entries = reader
            .deserialize()
            .collect::<std::result::Result<Vec<PatchCoord>, _>>()?;
        Self::new(patch_size, entries)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path)?;
        if self.entries.is_empty() {
            writer.write_record(["patch_id", "slide_id", "x", "y"])?;
        }
        for e in &self.entries {
            writer.serialize(e)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn check_header(found: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord(id: u64, slide: &str, x: u64, y: u64) -> PatchCoord {
        PatchCoord {
            patch_id: id,
            slide_id: slide.into(),
            x,
            y,
        }
    }

    #[test]
    fn rejects_duplicates_and_misalignment() {
        let dup_id = vec![coord(0, "a", 0, 0), coord(0, "a", 256, 0)];
        assert!(PatchCoordinateSet::new(256, dup_id).is_err());
        let dup_loc = vec![coord(0, "a", 0, 0), coord(1, "a", 0, 0)];
        assert!(PatchCoordinateSet::new(256, dup_loc).is_err());
        let other_slide = vec![coord(0, "a", 0, 0), coord(1, "b", 0, 0)];
        assert!(PatchCoordinateSet::new(256, other_slide).is_ok());
        assert!(PatchCoordinateSet::new(256, vec![coord(0, "a", 10, 0)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coords.csv");
        let set = PatchCoordinateSet::new(
            256,
            vec![coord(0, "s1", 0, 256), coord(7, "s2", 512, 0)],
        )
        .unwrap();
        set.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("patch_id,slide_id,x,y\n"));
        assert_eq!(PatchCoordinateSet::read_csv(&path, 256).unwrap(), set);
    }

    #[test]
    fn csv_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coords.csv");
        std::fs::write(&path, "id,slide,x,y\n0,a,0,0\n").unwrap();
        assert!(matches!(
            PatchCoordinateSet::read_csv(&path, 256),
            Err(Error::Format(_))
        ));
    }
}
