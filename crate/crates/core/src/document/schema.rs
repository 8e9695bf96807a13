use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LENGTH_ATTR;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Owner {
    Canvas,
    Element,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Categorical,
    Numerical,
}

/// Declarative description of one canvas or element attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub owner: Owner,
    pub kind: AttrKind,
    /// Bins per slot; unused (0) for numerical attributes.
    #[serde(default)]
    pub cardinality: usize,
    pub dims: usize,
    /// Label values (of the schema's label attribute) that carry this
    /// attribute. `None` means every element carries it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applies_to: Option<Vec<usize>>,
    /// Continuous domain that the bins quantize.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    /// Representative value of each bin, e.g. canvas pixel widths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_values: Option<Vec<f64>>,
    /// Human-readable bin names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl AttributeSpec {
    pub fn categorical(owner: Owner, name: &str, cardinality: usize, dims: usize) -> Self {
        AttributeSpec {
            name: name.to_string(),
            owner,
            kind: AttrKind::Categorical,
            cardinality,
            dims,
            applies_to: None,
            range: None,
            bin_values: None,
            labels: None,
        }
    }

    pub fn numerical(owner: Owner, name: &str, dims: usize) -> Self {
        AttributeSpec { kind: AttrKind::Numerical, cardinality: 0, ..Self::categorical(owner, name, 0, dims) }
    }

    fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.range = Some([lo, hi]);
        self
    }

    fn applying_to(mut self, labels: &[usize]) -> Self {
        self.applies_to = Some(labels.to_vec());
        self
    }

    fn with_labels(mut self, names: &[&str]) -> Self {
        self.labels = Some(names.iter().map(|s| s.to_string()).collect());
        self
    }

    fn with_bin_values(mut self, values: Vec<f64>) -> Self {
        self.bin_values = Some(values);
        self
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == AttrKind::Categorical
    }

    /// Whether an element with label `label` carries this attribute.
    pub fn applies(&self, label: usize) -> bool {
        self.applies_to.as_ref().is_none_or(|l| l.contains(&label))
    }

    fn check(&self) -> Result<()> {
        if self.dims < 1 {
            return Err(Error::config(format!("attribute `{}` needs dims >= 1", self.name)));
        }
        match self.kind {
            AttrKind::Categorical if self.cardinality < 2 => {
                Err(Error::config(format!("categorical attribute `{}` needs cardinality >= 2", self.name)))
            }
            AttrKind::Numerical if self.cardinality != 0 => {
                Err(Error::config(format!("numerical attribute `{}` must not declare a cardinality", self.name)))
            }
            _ => Ok(()),
        }?;
        if let Some(v) = &self.bin_values {
            if v.len() != self.cardinality {
                return Err(Error::config(format!("attribute `{}` has {} bin values", self.name, v.len())));
            }
        }
        if let Some([lo, hi]) = self.range {
            if !(lo < hi) {
                return Err(Error::config(format!("attribute `{}` has an empty range", self.name)));
            }
        }
        Ok(())
    }
}

/// Canvas and element attribute sets of one dataset family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentSchema {
    pub schema_version: u32,
    pub family: String,
    pub canvas_attrs: Vec<AttributeSpec>,
    pub element_attrs: Vec<AttributeSpec>,
    pub max_length: usize,
    /// Element attribute used as the element label (type or component).
    pub label_attr: String,
    /// Canvas pixel size used when the schema has no width/height attributes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas_size: Option<[f64; 2]>,
}

// Synthetic stand-ins for the pixel sizes offered by the design service.
const CANVAS_WIDTHS: [f64; 42] = [
    100.0, 120.0, 160.0, 200.0, 250.0, 300.0, 320.0, 336.0, 350.0, 400.0, 468.0, 480.0, 500.0, 512.0, 560.0, 600.0,
    640.0, 700.0, 720.0, 728.0, 750.0, 800.0, 851.0, 900.0, 940.0, 960.0, 1000.0, 1024.0, 1080.0, 1200.0, 1280.0,
    1300.0, 1400.0, 1500.0, 1600.0, 1640.0, 1800.0, 1920.0, 2000.0, 2160.0, 2480.0, 3508.0,
];
const CANVAS_HEIGHTS: [f64; 47] = [
    50.0, 60.0, 90.0, 100.0, 150.0, 200.0, 250.0, 280.0, 300.0, 315.0, 350.0, 400.0, 450.0, 480.0, 500.0, 512.0, 560.0,
    600.0, 628.0, 640.0, 700.0, 720.0, 768.0, 788.0, 800.0, 900.0, 1000.0, 1024.0, 1080.0, 1102.0, 1200.0, 1280.0,
    1350.0, 1400.0, 1500.0, 1600.0, 1800.0, 1920.0, 2000.0, 2160.0, 2400.0, 2480.0, 2550.0, 2700.0, 3000.0, 3300.0,
    3508.0,
];

pub(crate) const CRELLO_TYPES: [&str; 6] =
    ["vector_shape", "image", "text_placeholder", "solid_fill", "svg_element", "mask_element"];

pub(crate) const RICO_COMPONENTS: [&str; 27] = [
    "text",
    "image",
    "icon",
    "text_button",
    "list_item",
    "input",
    "background_image",
    "card",
    "web_view",
    "radio_button",
    "drawer",
    "checkbox",
    "advertisement",
    "modal",
    "pager_indicator",
    "slider",
    "on_off_switch",
    "button_bar",
    "toolbar",
    "number_stepper",
    "multi_tab",
    "date_picker",
    "map_view",
    "video",
    "bottom_navigation",
    "image_button",
    "spinner",
];

impl DocumentSchema {
    /// Crello-like schema: six canvas attributes and six element attributes.
    /// Color applies to text placeholders and solid fills, the image feature
    /// to shapes and images.
    pub fn crello_like(feature_dim: usize) -> Self {
        use Owner::*;
        let max_length = 50;
        let cat = AttributeSpec::categorical;
        DocumentSchema {
            schema_version: SCHEMA_VERSION,
            family: "crello-like".into(),
            canvas_attrs: vec![
                cat(Canvas, LENGTH_ATTR, max_length, 1),
                cat(Canvas, "group", 7, 1),
                cat(Canvas, "format", 68, 1),
                cat(Canvas, "width", 42, 1).with_bin_values(CANVAS_WIDTHS.to_vec()),
                cat(Canvas, "height", 47, 1).with_bin_values(CANVAS_HEIGHTS.to_vec()),
                cat(Canvas, "category", 24, 1),
            ],
            element_attrs: vec![
                cat(Element, "type", 6, 1).with_labels(&CRELLO_TYPES),
                cat(Element, "position", 64, 2).with_range(0.0, 1.0),
                cat(Element, "size", 64, 2).with_range(0.0, 1.0),
                cat(Element, "opacity", 8, 1).with_range(0.0, 1.0),
                cat(Element, "color", 16, 3).with_range(0.0, 1.0).applying_to(&[2, 3]),
                AttributeSpec::numerical(Element, "image", feature_dim).applying_to(&[0, 1, 4, 5]),
            ],
            max_length,
            label_attr: "type".into(),
            canvas_size: None,
        }
    }

    /// RICO-like schema: the canvas carries only the element length.
    pub fn rico_like() -> Self {
        use Owner::*;
        let max_length = 50;
        let cat = AttributeSpec::categorical;
        DocumentSchema {
            schema_version: SCHEMA_VERSION,
            family: "rico-like".into(),
            canvas_attrs: vec![cat(Canvas, LENGTH_ATTR, max_length, 1)],
            element_attrs: vec![
                cat(Element, "component", 27, 1).with_labels(&RICO_COMPONENTS),
                cat(Element, "position", 64, 2).with_range(0.0, 1.0),
                cat(Element, "size", 64, 2).with_range(0.0, 1.0),
                cat(Element, "icon", 59, 1).applying_to(&[2]),
                cat(Element, "button", 25, 1).applying_to(&[3]),
                cat(Element, "clickable", 2, 1),
            ],
            max_length,
            label_attr: "component".into(),
            canvas_size: Some([1440.0, 2560.0]),
        }
    }

    pub fn by_family(family: &str, feature_dim: usize) -> Result<Self> {
        match family {
            "crello-like" => Ok(Self::crello_like(feature_dim)),
            "rico-like" => Ok(Self::rico_like()),
            other => Err(Error::invalid(format!("unknown schema family `{other}`"))),
        }
    }

    pub fn canvas_attr(&self, name: &str) -> Option<&AttributeSpec> {
        self.canvas_attrs.iter().find(|a| a.name == name)
    }

    pub fn element_attr(&self, name: &str) -> Option<&AttributeSpec> {
        self.element_attrs.iter().find(|a| a.name == name)
    }

    pub fn label_spec(&self) -> &AttributeSpec {
        self.element_attr(&self.label_attr).expect("checked schema has its label attribute")
    }

    /// Checks the schema's own invariants.
    pub fn check(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.max_length < 1 {
            return Err(Error::config("max_length must be positive"));
        }
        let lengths: Vec<_> = self.canvas_attrs.iter().filter(|a| a.name == LENGTH_ATTR).collect();
        match lengths.as_slice() {
            [l] if l.is_categorical() && l.cardinality == self.max_length && l.dims == 1 => {}
            _ => {
                return Err(Error::config(
                    "schema needs exactly one categorical canvas `length` attribute with cardinality max_length",
                ))
            }
        }
        for (attrs, owner) in [(&self.canvas_attrs, Owner::Canvas), (&self.element_attrs, Owner::Element)] {
            for (i, a) in attrs.iter().enumerate() {
                a.check()?;
                if a.owner != owner {
                    return Err(Error::config(format!("attribute `{}` listed under the wrong owner", a.name)));
                }
                if attrs[..i].iter().any(|b| b.name == a.name) {
                    return Err(Error::config(format!("duplicate attribute `{}`", a.name)));
                }
            }
        }
        match self.element_attr(&self.label_attr) {
            Some(l) if l.is_categorical() && l.dims == 1 && l.applies_to.is_none() => {}
            _ => {
                return Err(Error::config(format!(
                    "label attribute `{}` must be a single-slot categorical element attribute",
                    self.label_attr
                )))
            }
        }
        Ok(())
    }

    /// Stable content hash used to pair checkpoints with datasets.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Pixel size of the canvas described by `canvas` values.
    pub fn canvas_pixels(&self, canvas: &std::collections::BTreeMap<String, super::Value>) -> [f64; 2] {
        let lookup = |name: &str| {
            let spec = self.canvas_attr(name)?;
            let bin = canvas.get(name)?.bin()?;
            spec.bin_values.as_ref()?.get(bin).copied()
        };
        match (lookup("width"), lookup("height")) {
            (Some(w), Some(h)) => [w, h],
            _ => self.canvas_size.unwrap_or([1.0, 1.0]),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: DocumentSchema = serde_json::from_str(&text)?;
        schema.check()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_well_formed() {
        let c = DocumentSchema::crello_like(256);
        c.check().unwrap();
        assert_eq!(c.canvas_attrs.len(), 6);
        assert_eq!(c.element_attrs.len(), 6);
        assert_eq!(c.element_attr("image").unwrap().dims, 256);
        let r = DocumentSchema::rico_like();
        r.check().unwrap();
        assert_eq!(r.canvas_attrs.len(), 1);
        assert_eq!(r.canvas_attrs[0].name, "length");
    }

    #[test]
    fn rejects_broken_schemas() {
        let mut s = DocumentSchema::rico_like();
        s.canvas_attrs[0].cardinality = 49;
        assert!(s.check().is_err());

        let mut s = DocumentSchema::rico_like();
        s.element_attrs.push(s.element_attrs[1].clone());
        assert!(s.check().is_err());

        let mut s = DocumentSchema::rico_like();
        s.element_attrs[5].cardinality = 1;
        assert!(s.check().is_err());
    }

    #[test]
    fn schema_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        let s = DocumentSchema::crello_like(16);
        s.save(&path).unwrap();
        let back = DocumentSchema::load(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
        assert_ne!(s.hash(), DocumentSchema::crello_like(32).hash());
    }
}
