use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    BonaFide,
    Attack,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::BonaFide => "bonafide",
            Label::Attack => "attack",
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::BonaFide => Label::Attack,
            Label::Attack => Label::BonaFide,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = PadError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bonafide" | "bona_fide" | "bona-fide" | "bona fide" | "live" => Ok(Label::BonaFide),
            "attack" | "spoof" | "fake" | "pa" => Ok(Label::Attack),
            other => Err(PadError::InvalidInput(format!("unknown label token `{other}`"))),
        }
    }
}

pub const NO_MATERIAL: &str = "none";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: String,
    pub label: Label,
    pub material: String,
    pub sensor: String,
    pub dataset: String,
}

impl SampleRecord {
    pub fn new(
        path: impl Into<String>,
        label: Label,
        material: impl Into<String>,
        sensor: impl Into<String>,
        dataset: impl Into<String>,
    ) -> Result<Self> {
        let rec = Self {
            path: path.into(),
            label,
            material: material.into(),
            sensor: sensor.into(),
            dataset: dataset.into(),
        };
        rec.validate()?;
        Ok(rec)
    }

    fn validate(&self) -> Result<()> {
        if self.path.is_empty() {
            return Err(PadError::InvalidInput("empty sample path".into()));
        }
        if self.label == Label::BonaFide && !self.material.eq_ignore_ascii_case(NO_MATERIAL) {
            return Err(PadError::InvalidInput(format!(
                "{}: bona fide sample with material `{}`",
                self.path, self.material
            )));
        }
        Ok(())
    }

    /// Resolves the sample path against the directory holding the manifest.
    pub fn resolve(&self, manifest_dir: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_dir.join(p)
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    path: String,
    label: String,
    material: String,
    sensor: String,
    dataset: String,
}

const COLUMNS: [&str; 5] = ["path", "label", "material", "sensor", "dataset"];

/// Reads a CSV manifest (`path,label,material,sensor,dataset`), or a JSON
/// array of objects with the same fields when the file ends in `.json`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PadError::io(path, e))?;
    let raw = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str::<Vec<RawRecord>>(&text)
            .map_err(|e| PadError::format(path, e.to_string()))?
    } else {
        parse_csv(&text).map_err(|m| PadError::format(path, m))?
    };

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(raw.len());
    for (row, r) in raw.into_iter().enumerate() {
        let label = r
            .label
            .parse()
            .map_err(|e: PadError| PadError::format(path, format!("row {}: {e}", row + 1)))?;
        let rec = SampleRecord::new(r.path, label, r.material, r.sensor, r.dataset)
            .map_err(|e| PadError::format(path, format!("row {}: {e}", row + 1)))?;
        if !seen.insert(rec.path.clone()) {
            log::warn!("{}: duplicate sample path `{}` (kept)", path.display(), rec.path);
        }
        records.push(rec);
    }
    Ok(records)
}

fn parse_csv(text: &str) -> std::result::Result<Vec<RawRecord>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    for col in COLUMNS {
        if !headers.iter().any(|h| h.eq_ignore_ascii_case(col)) {
            return Err(format!("missing column `{col}`"));
        }
    }
    let lowered: csv::StringRecord = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    reader.set_headers(lowered);
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| format!("row {}: {e}", i + 1)))
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| PadError::format(path, e.to_string()))?;
    let io = |e: csv::Error| PadError::format(path, e.to_string());
    w.write_record(COLUMNS).map_err(io)?;
    for r in records {
        w.write_record([r.path.as_str(), r.label.as_str(), &r.material, &r.sensor, &r.dataset])
            .map_err(io)?;
    }
    w.flush().map_err(|e| PadError::io(path, e))
}
