use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{AnnotationError, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Visual,
    Blind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Kind {
    type Err = AnnotationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visual" => Ok(Kind::Visual),
            "blind" => Ok(Kind::Blind),
            other => Err(AnnotationError::UnknownKind(other.to_string())),
        }
    }
}

impl FromStr for Split {
    type Err = AnnotationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(AnnotationError::UnknownSplit(other.to_string())),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One grounding episode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub objects: Vec<String>,
    pub target: usize,
    pub text: String,
    pub kind: Kind,
    pub split: Split,
}

fn field<'a>(obj: &'a Map<String, Value>, name: &'static str) -> Result<&'a Value, AnnotationError> {
    obj.get(name).ok_or(AnnotationError::MissingField(name))
}

fn string_field<'a>(obj: &'a Map<String, Value>, name: &'static str) -> Result<&'a str, AnnotationError> {
    field(obj, name)?.as_str().ok_or(AnnotationError::WrongType(name))
}

/// Validates one JSON line.
pub fn parse_record(line: &str) -> Result<AnnotationRecord, AnnotationError> {
    let value: Value = serde_json::from_str(line).map_err(|e| AnnotationError::Syntax(e.to_string()))?;
    let obj = value.as_object().ok_or(AnnotationError::WrongType("record"))?;
    let id = string_field(obj, "id")?.to_string();
    let objects: Vec<String> = field(obj, "objects")?
        .as_array()
        .ok_or(AnnotationError::WrongType("objects"))?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or(AnnotationError::WrongType("objects")))
        .collect::<Result<_, _>>()?;
    let target = field(obj, "target")?.as_u64().ok_or(AnnotationError::WrongType("target"))?;
    let text = string_field(obj, "text")?.to_string();
    let kind: Kind = string_field(obj, "kind")?.parse()?;
    let split: Split = string_field(obj, "split")?.parse()?;
    if objects.len() < 2 {
        return Err(AnnotationError::TooFewObjects);
    }
    if target as usize >= objects.len() {
        return Err(AnnotationError::TargetOutOfRange { target, objects: objects.len() });
    }
    let mut seen = HashSet::new();
    for o in &objects {
        if !seen.insert(o.as_str()) {
            return Err(AnnotationError::DuplicateObject(o.clone()));
        }
    }
    Ok(AnnotationRecord { id, objects, target: target as usize, text, kind, split })
}

/// Parses UTF-8 JSONL, one record per line. Blank lines are skipped; order is preserved.
pub fn parse_annotations<R: BufRead>(reader: R) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line).map_err(|kind| Error::Annotation { line: i + 1, kind })?);
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(mut w: W, records: &[AnnotationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
