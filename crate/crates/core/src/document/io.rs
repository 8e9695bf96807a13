//! Line-delimited JSON document files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value as Json};

use super::{
    validate, AttrKind, AttributeSpec, Document, DocumentRecord, DocumentSchema, Element, Value, LENGTH_ATTR,
    SCHEMA_VERSION,
};
use crate::error::{Error, Result};

fn value_to_json(spec: &AttributeSpec, value: &Value) -> Json {
    match value {
        Value::Categorical(bins) if spec.dims == 1 && bins.len() == 1 => json!(bins[0]),
        Value::Categorical(bins) => json!(bins),
        Value::Numerical(xs) => json!(xs),
    }
}

fn value_from_json(spec: &AttributeSpec, raw: &Json) -> std::result::Result<Value, String> {
    let bad = || format!("attribute `{}` has a malformed value", spec.name);
    match spec.kind {
        AttrKind::Categorical => {
            let bins = match raw {
                Json::Number(_) => vec![raw.as_u64().ok_or_else(bad)? as usize],
                Json::Array(items) => items
                    .iter()
                    .map(|x| x.as_u64().map(|b| b as usize).ok_or_else(bad))
                    .collect::<std::result::Result<_, _>>()?,
                _ => return Err(bad()),
            };
            Ok(Value::Categorical(bins))
        }
        AttrKind::Numerical => {
            let items = raw.as_array().ok_or_else(bad)?;
            let xs = items.iter().map(|x| x.as_f64().ok_or_else(bad)).collect::<std::result::Result<_, _>>()?;
            Ok(Value::Numerical(xs))
        }
    }
}

impl Document {
    pub fn to_json_line(&self, schema: &DocumentSchema) -> String {
        let mut canvas = Map::new();
        for spec in &schema.canvas_attrs {
            if let Some(v) = self.canvas.get(&spec.name) {
                canvas.insert(spec.name.clone(), value_to_json(spec, v));
            }
        }
        let elements = self
            .elements
            .iter()
            .map(|el| {
                let mut m = Map::new();
                for spec in &schema.element_attrs {
                    if let Some(v) = el.get(&spec.name) {
                        m.insert(spec.name.clone(), value_to_json(spec, v));
                    }
                }
                m
            })
            .collect();
        let record = DocumentRecord { schema_version: SCHEMA_VERSION, id: self.id, canvas, elements };
        serde_json::to_string(&record).expect("document serializes")
    }

    /// Parses one line; values are interpreted against `schema` but not
    /// validated.
    pub fn from_json_line(line: &str, schema: &DocumentSchema) -> std::result::Result<Self, String> {
        let record: DocumentRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", record.schema_version));
        }
        let mut doc = Document { id: record.id, ..Default::default() };
        for (name, raw) in &record.canvas {
            let spec = schema.canvas_attr(name).ok_or_else(|| format!("unknown canvas attribute `{name}`"))?;
            doc.canvas.insert(name.clone(), value_from_json(spec, raw)?);
        }
        for m in &record.elements {
            let mut el = Element::default();
            for (name, raw) in m {
                let spec = schema.element_attr(name).ok_or_else(|| format!("unknown element attribute `{name}`"))?;
                el.set(name.clone(), value_from_json(spec, raw)?);
            }
            doc.elements.push(el);
        }
        if !doc.canvas.contains_key(LENGTH_ATTR) {
            return Err("canvas has no length".into());
        }
        Ok(doc)
    }
}

pub fn write_documents(path: &Path, docs: &[Document], schema: &DocumentSchema) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        writeln!(w, "{}", doc.to_json_line(schema)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates every document in `path`. The first bad record
/// aborts the load with its 1-based line number.
pub fn read_documents(path: &Path, schema: &DocumentSchema) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fail = |message: String| Error::Load { path: path.to_path_buf(), line: i + 1, message };
        if line.trim().is_empty() {
            continue;
        }
        let doc = Document::from_json_line(&line, schema).map_err(fail)?;
        let verdict = validate(&doc, schema);
        if !verdict.is_ok() {
            return Err(fail(format!("invalid document: {verdict}")));
        }
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> Document {
        let mut d = Document { id: 9, ..Default::default() };
        d.canvas.insert("length".into(), Value::Categorical(vec![1]));
        let mut el = Element::default();
        el.set("component", Value::Categorical(vec![2]));
        el.set("position", Value::Categorical(vec![0, 63]));
        el.set("size", Value::Categorical(vec![5, 5]));
        el.set("icon", Value::Categorical(vec![58]));
        el.set("clickable", Value::Categorical(vec![0]));
        d.elements.push(el);
        d
    }

    #[test]
    fn line_format() {
        let schema = DocumentSchema::rico_like();
        let line = doc().to_json_line(&schema);
        assert_eq!(
            line,
            r#"{"schema_version":1,"id":9,"canvas":{"length":1},"elements":[{"clickable":0,"component":2,"icon":58,"position":[0,63],"size":[5,5]}]}"#
        );
        assert_eq!(Document::from_json_line(&line, &schema).unwrap(), doc());
    }

    #[test]
    fn numerical_values_are_arrays() {
        let schema = DocumentSchema::crello_like(2);
        let spec = schema.element_attr("image").unwrap();
        let v = Value::Numerical(vec![1.0, -0.25]);
        let j = value_to_json(spec, &v);
        assert_eq!(j.to_string(), "[1.0,-0.25]");
        assert_eq!(value_from_json(spec, &j).unwrap(), v);
        assert!(value_from_json(spec, &json!(3)).is_err());
    }

    #[test]
    fn truncated_line_names_line() {
        let schema = DocumentSchema::rico_like();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        let line = doc().to_json_line(&schema);
        let text = format!("{line}\n{line}\n{}\n", &line[..line.len() / 2]);
        std::fs::write(&path, text).unwrap();
        let err = read_documents(&path, &schema).unwrap_err();
        match err {
            Error::Load { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        assert!(read_documents(&path, &schema).unwrap_err().to_string().contains(":3:"));
    }

    #[test]
    fn invalid_record_is_rejected() {
        let schema = DocumentSchema::rico_like();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        let mut d = doc();
        d.canvas.insert("length".into(), Value::Categorical(vec![4]));
        write_documents(&path, &[doc(), d], &schema).unwrap();
        let err = read_documents(&path, &schema).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("length mismatch"), "{err}");
    }
}
