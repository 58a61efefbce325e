use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub path: String,
    /// Index into [`Manifest::classes`].
    pub label: usize,
    pub patient_id: String,
}

/// Immutable, validated dataset catalogue.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    classes: Vec<String>,
    records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn new(classes: Vec<String>, records: Vec<SampleRecord>) -> Result<Self> {
        let mut names = HashSet::new();
        for c in &classes {
            if !names.insert(c) {
                return Err(Error::param(format!("duplicate class name `{c}`")));
            }
        }
        let mut ids = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.label >= classes.len() {
                return Err(Error::Manifest {
                    row: i,
                    msg: format!("label {} out of range for {} classes", r.label, classes.len()),
                });
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Manifest {
                    row: i,
                    msg: format!("duplicate id `{}`", r.id),
                });
            }
        }
        Ok(Self { classes, records })
    }

    /// Same classes, subset of records (in the given order).
    pub fn with_records(&self, records: Vec<SampleRecord>) -> Self {
        Self {
            classes: self.classes.clone(),
            records,
        }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn label_index(&self) -> HashMap<&str, usize> {
        self.records.iter().map(|r| (r.id.as_str(), r.label)).collect()
    }

    /// Patient ids in order of first appearance.
    pub fn patients(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.patient_id.as_str()))
            .map(|r| r.patient_id.as_str())
            .collect()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    id: String,
    path: String,
    label: String,
    patient_id: String,
}

/// Parses manifest CSV (`id,path,label,patient_id`, label given by class name).
///
/// With `classes = None` the class list is the distinct labels in order of
/// first appearance. Errors carry the 1-based file line of the offending row.
pub fn read_manifest<R: Read>(reader: R, classes: Option<&[String]>) -> Result<Manifest> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ["id", "path", "label", "patient_id"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Manifest {
                row: 1,
                msg: format!("missing column `{col}`"),
            });
        }
    }
    let mut class_list: Vec<String> = classes.map(<[String]>::to_vec).unwrap_or_default();
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Manifest {
            row: line,
            msg: e.to_string(),
        })?;
        let label = match class_list.iter().position(|c| *c == row.label) {
            Some(l) => l,
            None if classes.is_none() => {
                class_list.push(row.label.clone());
                class_list.len() - 1
            }
            None => {
                return Err(Error::Manifest {
                    row: line,
                    msg: format!("unknown class `{}`", row.label),
                })
            }
        };
        if !ids.insert(row.id.clone()) {
            return Err(Error::Manifest {
                row: line,
                msg: format!("duplicate id `{}`", row.id),
            });
        }
        records.push(SampleRecord {
            id: row.id,
            path: row.path,
            label,
            patient_id: row.patient_id,
        });
    }
    Manifest::new(class_list, records)
}

pub fn load_manifest(path: impl AsRef<Path>, classes: Option<&[String]>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    read_manifest(file, classes)
}

pub fn write_manifest<W: Write>(m: &Manifest, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in m.records() {
        wtr.serialize(Row {
            id: r.id.clone(),
            path: r.path.clone(),
            label: m.classes()[r.label].clone(),
            patient_id: r.patient_id.clone(),
        })?;
    }
    if m.is_empty() {
        wtr.write_record(["id", "path", "label", "patient_id"])?;
    }
    wtr.flush()?;
    Ok(())
}
