//! Vector graphic documents: a canvas attribute map plus a depth-ordered
//! sequence of element records, described by a declarative schema.

mod io;
mod quantize;
mod schema;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use io::{read_documents, write_documents};
pub use quantize::{dequantize, quantize};
pub use schema::{AttrKind, AttributeSpec, DocumentSchema, Owner, SCHEMA_VERSION};

/// Name of the canvas attribute holding the element count.
pub const LENGTH_ATTR: &str = "length";

/// One attribute value. Categorical values hold one bin index per slot,
/// numerical values one real per slot.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Categorical(Vec<usize>),
    Numerical(Vec<f64>),
}

impl Value {
    pub fn bins(&self) -> Option<&[usize]> {
        match self {
            Value::Categorical(b) => Some(b),
            Value::Numerical(_) => None,
        }
    }

    pub fn reals(&self) -> Option<&[f64]> {
        match self {
            Value::Numerical(r) => Some(r),
            Value::Categorical(_) => None,
        }
    }

    /// First slot of a categorical value.
    pub fn bin(&self) -> Option<usize> {
        self.bins().and_then(|b| b.first().copied())
    }
}

/// Attribute map of a single element.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Element {
    pub attrs: BTreeMap<String, Value>,
}

impl Element {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.attrs.get(name)
    }

    pub fn set(&mut self, name: impl Into<String>, value: Value) {
        self.attrs.insert(name.into(), value);
    }
}

/// A document. Element order is depth order: later elements are drawn on top.
///
/// The canvas `length` attribute stores the element count itself (1 to
/// `max_length`); every other categorical value is a bin index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Document {
    pub id: u64,
    pub canvas: BTreeMap<String, Value>,
    pub elements: Vec<Element>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Label (type or component) of element `t` under `schema`.
    pub fn label_of(&self, t: usize, schema: &DocumentSchema) -> Option<usize> {
        self.elements.get(t).and_then(|e| e.get(&schema.label_attr)).and_then(Value::bin)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    LengthOutOfRange { length: usize, max: usize },
    LengthMismatch { declared: Option<usize>, actual: usize },
    UnknownAttribute { owner: Owner, element: Option<usize>, name: String },
    MissingAttribute { owner: Owner, element: Option<usize>, name: String },
    InapplicableAttribute { element: usize, name: String, label: usize },
    KindMismatch { element: Option<usize>, name: String },
    WrongDims { element: Option<usize>, name: String, expected: usize, got: usize },
    BinOutOfRange { element: Option<usize>, name: String, bin: usize, cardinality: usize },
    NonFinite { element: Option<usize>, name: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = |e: &Option<usize>| match e {
            Some(t) => format!("element {t}"),
            None => "canvas".to_string(),
        };
        match self {
            Violation::LengthOutOfRange { length, max } => {
                write!(f, "length out of range: {length} not in [1, {max}]")
            }
            Violation::LengthMismatch { declared, actual } => match declared {
                Some(d) => write!(f, "length mismatch: canvas says {d}, found {actual} elements"),
                None => write!(f, "length mismatch: canvas length missing, found {actual} elements"),
            },
            Violation::UnknownAttribute { owner, element, name } => {
                write!(f, "unknown {owner:?} attribute `{name}` at {}", at(element))
            }
            Violation::MissingAttribute { owner, element, name } => {
                write!(f, "missing {owner:?} attribute `{name}` at {}", at(element))
            }
            Violation::InapplicableAttribute { element, name, label } => {
                write!(f, "attribute `{name}` not applicable to label {label} at element {element}")
            }
            Violation::KindMismatch { element, name } => {
                write!(f, "attribute `{name}` has the wrong kind at {}", at(element))
            }
            Violation::WrongDims { element, name, expected, got } => {
                write!(f, "attribute `{name}` at {} has {got} slots, expected {expected}", at(element))
            }
            Violation::BinOutOfRange { element, name, bin, cardinality } => {
                write!(f, "attribute `{name}` at {} has bin {bin} outside [0, {cardinality})", at(element))
            }
            Violation::NonFinite { element, name } => {
                write!(f, "attribute `{name}` at {} has a non-finite value", at(element))
            }
        }
    }
}

/// Outcome of [`validate`]: empty means the document is well formed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// Checks every document invariant and reports all violations found.
pub fn validate(doc: &Document, schema: &DocumentSchema) -> Verdict {
    let mut out = Vec::new();
    let n = doc.elements.len();
    if n < 1 || n > schema.max_length {
        out.push(Violation::LengthOutOfRange { length: n, max: schema.max_length });
    }
    let declared = doc.canvas.get(LENGTH_ATTR).and_then(Value::bin);
    if declared != Some(n) {
        out.push(Violation::LengthMismatch { declared, actual: n });
    }

    for name in doc.canvas.keys() {
        if schema.canvas_attr(name).is_none() {
            out.push(Violation::UnknownAttribute { owner: Owner::Canvas, element: None, name: name.clone() });
        }
    }
    for spec in &schema.canvas_attrs {
        match doc.canvas.get(&spec.name) {
            None => {
                out.push(Violation::MissingAttribute { owner: Owner::Canvas, element: None, name: spec.name.clone() })
            }
            // length is checked against the element count above
            Some(v) if spec.name == LENGTH_ATTR => {
                if v.bins().map(|b| b.len()) != Some(1) {
                    out.push(Violation::KindMismatch { element: None, name: spec.name.clone() });
                }
            }
            Some(v) => check_value(spec, v, None, &mut out),
        }
    }

    for (t, el) in doc.elements.iter().enumerate() {
        let label = el.get(&schema.label_attr).and_then(Value::bin);
        for name in el.attrs.keys() {
            if schema.element_attr(name).is_none() {
                out.push(Violation::UnknownAttribute { owner: Owner::Element, element: Some(t), name: name.clone() });
            }
        }
        for spec in &schema.element_attrs {
            let applicable = match label {
                Some(l) => spec.applies(l),
                None => spec.applies_to.is_none(),
            };
            match (el.get(&spec.name), applicable) {
                (Some(v), true) => check_value(spec, v, Some(t), &mut out),
                (Some(_), false) => out.push(Violation::InapplicableAttribute {
                    element: t,
                    name: spec.name.clone(),
                    label: label.unwrap_or(usize::MAX),
                }),
                (None, true) => out.push(Violation::MissingAttribute {
                    owner: Owner::Element,
                    element: Some(t),
                    name: spec.name.clone(),
                }),
                (None, false) => {}
            }
        }
    }
    Verdict { violations: out }
}

fn check_value(spec: &AttributeSpec, v: &Value, element: Option<usize>, out: &mut Vec<Violation>) {
    let name = || spec.name.clone();
    match (spec.kind, v) {
        (AttrKind::Categorical, Value::Categorical(bins)) => {
            if bins.len() != spec.dims {
                out.push(Violation::WrongDims { element, name: name(), expected: spec.dims, got: bins.len() });
            }
            for &b in bins {
                if b >= spec.cardinality {
                    out.push(Violation::BinOutOfRange { element, name: name(), bin: b, cardinality: spec.cardinality });
                }
            }
        }
        (AttrKind::Numerical, Value::Numerical(xs)) => {
            if xs.len() != spec.dims {
                out.push(Violation::WrongDims { element, name: name(), expected: spec.dims, got: xs.len() });
            }
            if xs.iter().any(|x| !x.is_finite()) {
                out.push(Violation::NonFinite { element, name: name() });
            }
        }
        _ => out.push(Violation::KindMismatch { element, name: name() }),
    }
}

/// Serialized form of one document line.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct DocumentRecord {
    pub schema_version: u32,
    pub id: u64,
    pub canvas: serde_json::Map<String, serde_json::Value>,
    pub elements: Vec<serde_json::Map<String, serde_json::Value>>,
}
