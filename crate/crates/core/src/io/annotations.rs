//! Face annotations in the WIDER ground-truth layout:
//!
//! ```text
//! path/to/image.ppm
//! 2
//! x y w h [attributes...]
//! x y w h [attributes...]
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::anchors::BoxXYWH;
use crate::error::{Error, Result};
use crate::train::Sample;

use super::pnm::load_image;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationEntry {
    pub path: String,
    pub boxes: Vec<BoxXYWH>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetIndex {
    pub entries: Vec<AnnotationEntry>,
    /// Boxes discarded for non-positive width or height.
    pub dropped: usize,
}

fn numbers(line: &str) -> Option<Vec<f64>> {
    line.split_whitespace().map(|s| s.parse::<f64>().ok()).collect()
}

/// Parses annotation text. Attribute columns after `x y w h` are ignored and
/// degenerate boxes are dropped and counted. A count of 0 may be followed
/// by one all-zero placeholder line, as in the original WIDER files.
pub fn parse_annotations(text: &str) -> Result<DatasetIndex> {
    let lines: Vec<&str> = text.lines().collect();
    let mut index = DatasetIndex::default();
    let mut i = 0;
    while i < lines.len() {
        let path = lines[i].trim();
        if path.is_empty() {
            i += 1;
            continue;
        }
        let count_line = i + 2;
        let count: usize = match lines.get(i + 1) {
            None => return Err(Error::parse(count_line, format!("missing box count for `{path}`"))),
            Some(l) => l.trim().parse().map_err(|_| Error::parse(count_line, format!("malformed box count `{}`", l.trim())))?,
        };
        i += 2;
        let mut boxes = Vec::with_capacity(count);
        for _ in 0..count {
            let line_no = i + 1;
            let line = lines.get(i).ok_or_else(|| {
                Error::parse(line_no, format!("`{path}` is truncated: expected {count} box lines"))
            })?;
            let v = numbers(line).ok_or_else(|| Error::parse(line_no, "non-numeric box field"))?;
            if v.len() < 4 {
                return Err(Error::parse(line_no, format!("expected at least 4 numbers, got {}", v.len())));
            }
            match BoxXYWH::new(v[0], v[1], v[2], v[3]) {
                Ok(b) => boxes.push(b),
                Err(_) if v[..4].iter().all(|x| x.is_finite()) => index.dropped += 1,
                Err(_) => return Err(Error::parse(line_no, "non-finite box field")),
            }
            i += 1;
        }
        if count == 0 {
            if let Some(v) = lines.get(i).and_then(|l| numbers(l)) {
                if v.len() >= 4 && v.iter().all(|&x| x == 0.0) {
                    i += 1;
                }
            }
        }
        index.entries.push(AnnotationEntry { path: path.to_string(), boxes });
    }
    Ok(index)
}

/// Shortest round-tripping decimal for every coordinate.
pub fn serialize_annotations(index: &DatasetIndex) -> String {
    let mut s = String::new();
    for e in &index.entries {
        let _ = writeln!(s, "{}\n{}", e.path, e.boxes.len());
        for b in &e.boxes {
            let _ = writeln!(s, "{} {} {} {}", b.x, b.y, b.w, b.h);
        }
    }
    s
}

pub fn load_annotations(path: &Path) -> Result<DatasetIndex> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

/// Resolves an entry's image path against the annotation file's directory.
pub fn resolve(annotation_file: &Path, entry: &AnnotationEntry) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        annotation_file.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Loads every image of an annotation file. Boxes are clipped to the image;
/// the returned count is the number of boxes clipped away entirely.
pub fn load_dataset(annotation_file: &Path) -> Result<(Vec<Sample>, usize)> {
    let index = load_annotations(annotation_file)?;
    let mut dropped = index.dropped;
    let mut samples = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        let image = load_image(&resolve(annotation_file, e))?;
        let (w, h) = (image.width() as f64, image.height() as f64);
        let boxes: Vec<BoxXYWH> = e.boxes.iter().filter_map(|b| b.clip(w, h)).collect();
        dropped += e.boxes.len() - boxes.len();
        samples.push(Sample::new(image, boxes)?);
    }
    Ok((samples, dropped))
}
