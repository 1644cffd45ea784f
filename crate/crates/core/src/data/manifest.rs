use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result, RowError};
use crate::fusion::{ClassScheme, WoundClass};
use crate::location::BodyMap;

pub const MANIFEST_HEADER: [&str; 3] = ["image_path", "label", "location_id"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    /// Path as written in the manifest, relative to the dataset root.
    pub image_path: PathBuf,
    pub label: WoundClass,
    pub location_id: Option<u16>,
    /// 1-based manifest line (header is line 1).
    pub line: usize,
}

/// Parses manifest rows without touching the file system. All row problems
/// are collected and reported together.
pub fn parse_manifest(input: impl Read, body_map: BodyMap) -> Result<Vec<DatasetRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Load(vec![RowError {
            line: 1,
            message: format!("header must be `{}`, found `{}`", MANIFEST_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        }]));
    }
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&row, line, body_map) {
            Ok(rec) => {
                if !seen.insert(rec.image_path.clone()) {
                    errors.push(RowError {
                        line,
                        message: format!("duplicate image path `{}`", rec.image_path.display()),
                    });
                } else {
                    records.push(rec);
                }
            }
            Err(msgs) => errors.extend(msgs.into_iter().map(|message| RowError { line, message })),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(Error::Load(errors))
    }
}

fn parse_row(row: &csv::StringRecord, line: usize, body_map: BodyMap) -> std::result::Result<DatasetRecord, Vec<String>> {
    let mut problems = Vec::new();
    let path = row.get(0).unwrap_or("");
    if path.is_empty() {
        problems.push("empty image_path".to_string());
    }
    let label = row.get(1).unwrap_or("").parse::<WoundClass>().map_err(|e| problems.push(e.to_string())).ok();
    let loc_text = row.get(2).unwrap_or("");
    let location_id = if loc_text.is_empty() {
        if let Some(l) = label {
            if !l.location_optional() {
                problems.push(format!("class {l} requires a location_id"));
            }
        }
        None
    } else {
        match loc_text.parse::<u16>() {
            Ok(id) if usize::from(id) < body_map.size() => Some(id),
            Ok(id) => {
                problems.push(format!("location_id {id} outside the {body_map} body map (0..{})", body_map.size()));
                None
            }
            Err(_) => {
                problems.push(format!("location_id `{loc_text}` is not a nonnegative integer"));
                None
            }
        }
    };
    match (problems.is_empty(), label) {
        (true, Some(label)) => Ok(DatasetRecord {
            image_path: PathBuf::from(path),
            label,
            location_id,
            line,
        }),
        _ => Err(problems),
    }
}

/// Reads `manifest` and checks that every referenced image exists under
/// `root` and has a readable raster header.
pub fn load_dataset(root: &Path, manifest: &Path, body_map: BodyMap) -> Result<Vec<DatasetRecord>> {
    let records = parse_manifest(std::fs::File::open(manifest)?, body_map)?;
    if records.is_empty() {
        log::warn!("manifest {} lists no images", manifest.display());
    }
    let errors: Vec<RowError> = records
        .iter()
        .filter_map(|r| {
            let full = root.join(&r.image_path);
            if !full.is_file() {
                return Some(RowError {
                    line: r.line,
                    message: format!("image file `{}` not found", full.display()),
                });
            }
            image::image_dimensions(&full).err().map(|e| RowError {
                line: r.line,
                message: format!("image `{}` is not decodable: {e}", full.display()),
            })
        })
        .collect();
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(Error::Load(errors))
    }
}

pub fn class_histogram(records: &[DatasetRecord]) -> BTreeMap<WoundClass, usize> {
    let mut h = BTreeMap::new();
    for r in records {
        *h.entry(r.label).or_insert(0) += 1;
    }
    h
}

/// Records whose label belongs to `scheme`, in their original order, paired
/// with the scheme-local class index.
pub fn filter_scheme(records: &[DatasetRecord], scheme: &ClassScheme) -> Result<Vec<(DatasetRecord, usize)>> {
    let kept: Vec<(DatasetRecord, usize)> = records
        .iter()
        .filter_map(|r| scheme.index_of(r.label).map(|i| (r.clone(), i)))
        .collect();
    let mut counts = vec![0usize; scheme.k()];
    for (_, i) in &kept {
        counts[*i] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::contract(format!(
            "class {} of scheme {scheme} has no records",
            scheme.class(empty)
        )));
    }
    Ok(kept)
}
