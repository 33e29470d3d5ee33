//! JSON Lines dataset files: one scene per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use diffbox_core::synthdata::Scene;
use diffbox_core::BoundingBox;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: {detail}")]
    Invalid { line: usize, detail: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    image_id: u64,
    boxes: Vec<[f64; 4]>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl From<&Scene> for SceneRecord {
    fn from(s: &Scene) -> Self {
        Self { image_id: s.image_id, boxes: s.boxes.iter().map(|b| b.to_array()).collect(), labels: s.labels.clone(), num_classes: s.num_classes }
    }
}

fn to_scene(r: SceneRecord, line: usize) -> Result<Scene, DatasetError> {
    if r.boxes.len() != r.labels.len() {
        return Err(DatasetError::Invalid { line, detail: format!("{} boxes but {} labels", r.boxes.len(), r.labels.len()) });
    }
    if let Some(l) = r.labels.iter().find(|&&l| l >= r.num_classes) {
        return Err(DatasetError::Invalid { line, detail: format!("label {l} outside 0..{}", r.num_classes) });
    }
    if let Some(b) = r.boxes.iter().find(|b| b.iter().any(|v| !v.is_finite())) {
        return Err(DatasetError::Invalid { line, detail: format!("non-finite box {b:?}") });
    }
    Ok(Scene { image_id: r.image_id, boxes: r.boxes.into_iter().map(BoundingBox::from_array).collect(), labels: r.labels, num_classes: r.num_classes })
}

pub fn write_scenes<W: Write>(mut w: W, scenes: &[Scene]) -> io::Result<()> {
    for s in scenes {
        serde_json::to_writer(&mut w, &SceneRecord::from(s))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_scenes<R: BufRead>(r: R) -> Result<Vec<Scene>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord = serde_json::from_str(&line).map_err(|source| DatasetError::Parse { line: i + 1, source })?;
        out.push(to_scene(record, i + 1)?);
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, scenes: &[Scene]) -> Result<(), DatasetError> {
    write_scenes(BufWriter::new(File::create(path)?), scenes)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Scene>, DatasetError> {
    read_scenes(BufReader::new(File::open(path)?))
}
