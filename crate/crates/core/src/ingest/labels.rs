use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::coords::check_header;

/// Follow-up for one patient. `bin` stays `None` until bin boundaries have
/// been fixed from a training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    pub patient_id: String,
    /// Months of follow-up.
    pub time: f64,
    /// `true` when the event was not observed.
    pub censored: bool,
    #[serde(skip)]
    pub bin: Option<usize>,
}

impl SurvivalLabel {
    pub fn new(patient_id: impl Into<String>, time: f64, censored: bool) -> Result<Self> {
        let patient_id = patient_id.into();
        if !time.is_finite() || time < 0.0 {
            return Err(Error::Validation(format!(
                "patient {patient_id:?}: time must be a non-negative number, got {time}"
            )));
        }
        Ok(Self {
            patient_id,
            time,
            censored,
            bin: None,
        })
    }

    pub fn event(&self) -> bool {
        !self.censored
    }
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    patient_id: String,
    time: f64,
    censored: u8,
}

/// Reads `patient_id,time,censored` with `censored` in `{0, 1}`.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<SurvivalLabel>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    check_header(reader.headers()?, &["patient_id", "time", "censored"], path)?;
    let mut labels = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row?;
        let censored = match row.censored {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Validation(format!(
                    "patient {:?}: censored must be 0 or 1, got {other}",
                    row.patient_id
                )))
            }
        };
        if !seen.insert(row.patient_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate patient_id {:?} in {}",
                row.patient_id,
                path.display()
            )));
        }
        labels.push(SurvivalLabel::new(row.patient_id, row.time, censored)?);
    }
    Ok(labels)
}

pub fn write_labels(labels: &[SurvivalLabel], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    if labels.is_empty() {
        writer.write_record(["patient_id", "time", "censored"])?;
    }
    for l in labels {
        writer.serialize(LabelRow {
            patient_id: l.patient_id.clone(),
            time: l.time,
            censored: u8::from(l.censored),
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let labels = vec![
            SurvivalLabel::new("p0", 12.5, false).unwrap(),
            SurvivalLabel::new("p1", 3.0, true).unwrap(),
        ];
        write_labels(&labels, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "patient_id,time,censored\np0,12.5,0\np1,3.0,1\n"
        );
        assert_eq!(read_labels(&path).unwrap(), labels);

        std::fs::write(&path, "patient_id,time,censored\np0,1.0,2\n").unwrap();
        assert!(matches!(read_labels(&path), Err(Error::Validation(_))));
        std::fs::write(&path, "patient_id,time,censored\np0,-1.0,0\n").unwrap();
        assert!(matches!(read_labels(&path), Err(Error::Validation(_))));
        std::fs::write(&path, "patient_id,time,censored\np0,1,0\np0,2,1\n").unwrap();
        assert!(matches!(read_labels(&path), Err(Error::Validation(_))));
    }
}
