//! Dataset files (JSONL and CSV) and the dimension registry.
//!
//! The canonical interchange format is JSONL, one post per line:
//!
//! ```text
//! {"id": "a1", "text": "...", "labels": {"offensive": 1, "lewd": 0}}
//! ```
//!
//! Other layouts are read through a [`Schema`] naming the id and text fields
//! and mapping label fields to dimensions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use atf_core::corpus::DatasetBundle;
use atf_core::definitions::default_dimensions;
use atf_core::{Dimension, Label, Post};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Some(Format::Jsonl),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format {other:?} (expected jsonl or csv)")),
        }
    }
}

fn id_field() -> String {
    "id".into()
}

fn text_field() -> String {
    "text".into()
}

/// Field mapping. `labels` maps a field name in the file to a dimension
/// name. Empty `labels` on JSONL means the canonical `"labels"` object, whose
/// keys are dimension names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "id_field")]
    pub id: String,
    #[serde(default = "text_field")]
    pub text: String,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema { id: id_field(), text: text_field(), labels: BTreeMap::new() }
    }
}

impl Schema {
    /// Identity mapping for the given dimension names.
    pub fn with_dimensions<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        Schema { labels: names.into_iter().map(|n| (n.to_string(), n.to_string())).collect(), ..Schema::default() }
    }
}

/// Accepts 0/1, true/false, "0"/"1", "true"/"false"; null or "" is unlabeled.
fn parse_label(value: &Value) -> std::result::Result<Option<Label>, String> {
    match value {
        Value::Null => Ok(None),
        Value::Bool(b) => Ok(Some(Label::from_bool(*b))),
        Value::Number(n) => match n.as_f64() {
            Some(0.0) => Ok(Some(Label::Negative)),
            Some(1.0) => Ok(Some(Label::Positive)),
            _ => Err(format!("label {n} is not 0 or 1")),
        },
        Value::String(s) => parse_label_str(s),
        other => Err(format!("label {other} is not binary")),
    }
}

fn parse_label_str(s: &str) -> std::result::Result<Option<Label>, String> {
    match s.trim() {
        "" => Ok(None),
        "0" | "0.0" | "false" | "False" => Ok(Some(Label::Negative)),
        "1" | "1.0" | "true" | "True" => Ok(Some(Label::Positive)),
        other => Err(format!("label {other:?} is not binary")),
    }
}

fn value_to_id(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

struct Builder<'r> {
    name: String,
    registry: &'r [Dimension],
    dims: Vec<Dimension>,
    posts: Vec<Post>,
    labels: BTreeMap<(String, String), Label>,
    seen: BTreeMap<String, u64>,
}

impl<'r> Builder<'r> {
    fn new(name: &str, registry: &'r [Dimension]) -> Self {
        Builder {
            name: name.to_string(),
            registry,
            dims: Vec::new(),
            posts: Vec::new(),
            labels: BTreeMap::new(),
            seen: BTreeMap::new(),
        }
    }

    fn register(&mut self, dim: &str) -> Result<()> {
        if self.dims.iter().any(|d| d.name == dim) {
            return Ok(());
        }
        let found = self.registry.iter().find(|d| d.name == dim).ok_or_else(|| Error::UnknownDimension(dim.into()))?;
        self.dims.push(found.clone());
        Ok(())
    }

    fn push(&mut self, row: u64, id: String, text: Option<&str>, labels: Vec<(String, Option<Label>)>) -> Result<()> {
        let text = text.filter(|t| !t.trim().is_empty()).ok_or(Error::MissingText { row })?;
        if self.seen.insert(id.clone(), row).is_some() {
            return Err(Error::DuplicateId(id));
        }
        let post = Post::new(id, text, self.name.clone())?;
        for (dim, label) in labels {
            if let Some(label) = label {
                self.labels.insert((post.id.clone(), dim), label);
            }
        }
        self.posts.push(post);
        Ok(())
    }

    fn finish(mut self) -> Result<DatasetBundle> {
        self.dims.sort_by_key(|d| self.registry.iter().position(|r| r.name == d.name));
        Ok(DatasetBundle::new(self.name, self.posts, self.labels, self.dims)?)
    }
}

/// Loads and validates a dataset. `registry` supplies the definitions of
/// the dimensions the schema names; the bundle exposes exactly those.
pub fn load_dataset(
    path: &Path,
    format: Format,
    schema: &Schema,
    registry: &[Dimension],
    name: &str,
) -> Result<DatasetBundle> {
    let mut builder = Builder::new(name, registry);
    for dim in schema.labels.values() {
        builder.register(dim)?;
    }
    match format {
        Format::Jsonl => load_jsonl(path, schema, &mut builder)?,
        Format::Csv => load_csv(path, schema, &mut builder)?,
    }
    builder.finish()
}

fn load_jsonl(path: &Path, schema: &Schema, builder: &mut Builder<'_>) -> Result<()> {
    let reader = BufReader::new(File::open(path).map_err(Error::io(path))?);
    let malformed = |line: u64, message: String| Error::Malformed { path: path.to_path_buf(), line, message };
    for (i, line) in reader.lines().enumerate() {
        let row = i as u64 + 1;
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Value = serde_json::from_str(&line).map_err(|e| malformed(row, e.to_string()))?;
        let obj = record.as_object().ok_or_else(|| malformed(row, "record is not an object".into()))?;
        let id = obj
            .get(&schema.id)
            .and_then(value_to_id)
            .filter(|id| !id.is_empty())
            .ok_or_else(|| malformed(row, format!("missing id field {:?}", schema.id)))?;
        let text = obj.get(&schema.text).and_then(Value::as_str);
        let nested = obj.get("labels").and_then(Value::as_object);
        let mut labels = Vec::new();
        if schema.labels.is_empty() {
            for (dim, value) in nested.into_iter().flatten() {
                builder.register(dim)?;
                labels.push((dim.clone(), parse_label(value).map_err(|m| malformed(row, m))?));
            }
        } else {
            for (field, dim) in &schema.labels {
                let value = obj.get(field).or_else(|| nested.and_then(|n| n.get(field)));
                let label = match value {
                    Some(v) => parse_label(v).map_err(|m| malformed(row, format!("{field}: {m}")))?,
                    None => None,
                };
                labels.push((dim.clone(), label));
            }
        }
        builder.push(row, id, text, labels)?;
    }
    Ok(())
}

fn load_csv(path: &Path, schema: &Schema, builder: &mut Builder<'_>) -> Result<()> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::Malformed { path: path.to_path_buf(), line: 1, message: format!("no column {name:?}") };
    let id_col = column(&schema.id).ok_or_else(|| missing(&schema.id))?;
    let text_col = column(&schema.text).ok_or_else(|| missing(&schema.text))?;
    if schema.labels.is_empty() {
        return Err(Error::Config("CSV schema must map at least one label column".into()));
    }
    let label_cols = schema
        .labels
        .iter()
        .map(|(field, dim)| Ok((column(field).ok_or_else(|| missing(field))?, field.as_str(), dim.clone())))
        .collect::<Result<Vec<_>>>()?;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Malformed { path: path.to_path_buf(), line, message: "empty id".into() });
        }
        let mut labels = Vec::with_capacity(label_cols.len());
        for (col, field, dim) in &label_cols {
            let label = parse_label_str(record.get(*col).unwrap_or("")).map_err(|m| Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("{field}: {m}"),
            })?;
            labels.push((dim.clone(), label));
        }
        builder.push(line, id, record.get(text_col), labels)?;
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Malformed { path: path.to_path_buf(), line, message: e.to_string() }
}

#[derive(Serialize)]
struct CanonicalRecord<'a> {
    id: &'a str,
    text: &'a str,
    labels: BTreeMap<&'a str, Label>,
}

/// Writes the canonical JSONL form; loading it back with the same registry
/// yields an equal bundle.
pub fn write_jsonl(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    for post in bundle.posts() {
        let record = CanonicalRecord { id: &post.id, text: &post.text, labels: bundle.labels_of(&post.id).collect() };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::io(path)(e.into()))?;
        out.write_all(b"\n").map_err(Error::io(path))?;
    }
    out.flush().map_err(Error::io(path))
}

/// Loads a canonical JSONL file and keeps every registered dimension of the
/// bundle visible even if no post carries a label for it.
pub fn load_canonical(path: &Path, registry: &[Dimension], name: &str) -> Result<DatasetBundle> {
    load_dataset(path, Format::Jsonl, &Schema::default(), registry, name)
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryFile {
    #[serde(rename = "dimension", default)]
    dimensions: Vec<Dimension>,
}

/// Reads a dimension registry:
///
/// ```toml
/// [[dimension]]
/// name = "lewd"
/// definition = "Does this post contain sexual content?"
/// positive_token = "Yes"   # optional
/// negative_token = "No"    # optional
/// ```
pub fn load_registry(path: &Path) -> Result<Vec<Dimension>> {
    let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
    parse_registry(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn parse_registry(raw: &str) -> std::result::Result<Vec<Dimension>, String> {
    let file: RegistryFile = toml::from_str(raw).map_err(|e| e.to_string())?;
    let mut names = std::collections::BTreeSet::new();
    for dim in &file.dimensions {
        dim.validate().map_err(|e| e.to_string())?;
        if !names.insert(dim.name.as_str()) {
            return Err(format!("dimension {:?} registered twice", dim.name));
        }
    }
    Ok(file.dimensions)
}

pub fn registry_to_toml(dimensions: &[Dimension]) -> String {
    toml::to_string(&RegistryFile { dimensions: dimensions.to_vec() }).expect("dimensions serialize")
}

/// The bundled definitions, overridden and extended by `extra`.
pub fn merged_registry(extra: &[Dimension]) -> Vec<Dimension> {
    let mut dims = default_dimensions();
    for d in extra {
        match dims.iter_mut().find(|x| x.name == d.name) {
            Some(slot) => *slot = d.clone(),
            None => dims.push(d.clone()),
        }
    }
    dims
}
