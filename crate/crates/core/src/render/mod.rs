//! SVG previews of documents: label color maps, textured fills and
//! interpolation strips.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{nearest_neighbor, FeatureIndex};
use crate::document::{dequantize, validate, Document, DocumentSchema, Element, Value};
use crate::error::{Error, Result};
use crate::metrics::{POSITION_ATTR, SIZE_ATTR};

pub const OPACITY_ATTR: &str = "opacity";
pub const COLOR_ATTR: &str = "color";
pub const IMAGE_ATTR: &str = "image";

/// Gap between strip panels, in pixels.
const STRIP_GAP: f64 = 16.0;

pub type Rgb = [u8; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: BTreeMap<usize, Rgb>,
    pub fallback: Rgb,
}

impl Palette {
    pub fn color(&self, label: Option<usize>) -> Rgb {
        label.and_then(|l| self.colors.get(&l)).copied().unwrap_or(self.fallback)
    }

    /// Fixed colors for the crello-like element types, evenly spaced hues for
    /// any other labelled schema.
    pub fn for_schema(schema: &DocumentSchema) -> Self {
        let n = schema.label_spec().cardinality;
        let colors = if schema.family == "crello-like" {
            const TYPES: [Rgb; 6] = [
                [46, 160, 67],  // vector_shape: green
                [214, 40, 190], // image: magenta
                [123, 63, 196], // text_placeholder: purple
                [240, 200, 30], // solid_fill: yellow
                [40, 150, 220], // svg_element
                [235, 110, 40], // mask_element
            ];
            (0..n).map(|l| (l, TYPES[l % TYPES.len()])).collect()
        } else {
            (0..n).map(|l| (l, hsv(l as f64 / n as f64, 0.65, 0.9))).collect()
        };
        Palette { colors, fallback: [160, 160, 160] }
    }
}

fn hsv(h: f64, s: f64, v: f64) -> Rgb {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Colormap,
    Textured,
}

impl RenderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RenderMode::Colormap => "colormap",
            RenderMode::Textured => "textured",
        }
    }
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "colormap" => Ok(RenderMode::Colormap),
            "textured" => Ok(RenderMode::Textured),
            other => Err(Error::invalid(format!("unknown render mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub mode: RenderMode,
    /// Pixel length of the canvas's long side.
    pub canvas_px: u32,
    pub opacity_rendering: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { mode: RenderMode::Colormap, canvas_px: 256, opacity_rendering: true }
    }
}

impl RenderOptions {
    pub fn check(&self) -> Result<()> {
        if self.canvas_px < 64 {
            return Err(Error::invalid(format!("canvas_px must be at least 64, got {}", self.canvas_px)));
        }
        Ok(())
    }
}

/// `<doc-id>.<mode>.svg`
pub fn file_name(doc: &Document, mode: RenderMode) -> String {
    format!("{}.{}.svg", doc.id, mode.as_str())
}

/// Box of an element as fractions of the canvas: the position bin's lower
/// edge and `s + 1` size bins, matching the layout rasterization.
fn frame(el: &Element, schema: &DocumentSchema) -> Option<[f64; 4]> {
    let pos = el.get(POSITION_ATTR)?.bins()?;
    let size = el.get(SIZE_ATTR)?.bins()?;
    let pb = schema.element_attr(POSITION_ATTR)?.cardinality as f64;
    let sb = schema.element_attr(SIZE_ATTR)?.cardinality as f64;
    if pos.len() != 2 || size.len() != 2 {
        return None;
    }
    let axis = |i: usize| {
        let start = (pos[i] as f64 / pb).min(1.0);
        let end = (start + (size[i] as f64 + 1.0) / sb).min(1.0);
        (start, end - start)
    };
    let (x, w) = axis(0);
    let (y, h) = axis(1);
    Some([x, y, w, h])
}

fn dequantized(el: &Element, schema: &DocumentSchema, attr: &str) -> Option<Vec<f64>> {
    let spec = schema.element_attr(attr)?;
    let [lo, hi] = spec.range?;
    el.get(attr)?.bins()?.iter().map(|&b| dequantize(b, lo, hi, spec.cardinality).ok()).collect()
}

fn fill(
    el: &Element,
    schema: &DocumentSchema,
    palette: &Palette,
    mode: RenderMode,
    index: Option<&FeatureIndex>,
) -> Result<Rgb> {
    let label = el.get(&schema.label_attr).and_then(Value::bin);
    if mode == RenderMode::Textured {
        if let (Some(Value::Numerical(f)), Some(index)) = (el.get(IMAGE_ATTR), index) {
            let id = nearest_neighbor(index, f)?;
            return Ok(index.get(id).expect("neighbor ids come from the index").color);
        }
        if let Some(c) = dequantized(el, schema, COLOR_ATTR).filter(|c| c.len() == 3) {
            return Ok([c[0], c[1], c[2]].map(|x| (x * 255.0).round().clamp(0.0, 255.0) as u8));
        }
    }
    Ok(palette.color(label))
}

struct Panel {
    width: f64,
    height: f64,
    body: String,
}

fn panel(
    doc: &Document,
    schema: &DocumentSchema,
    palette: &Palette,
    options: &RenderOptions,
    index: Option<&FeatureIndex>,
) -> Result<Panel> {
    options.check()?;
    let verdict = validate(doc, schema);
    if !verdict.is_ok() {
        return Err(Error::invalid(format!("document {} does not validate: {verdict}", doc.id)));
    }
    if options.mode == RenderMode::Textured && index.is_none() {
        return Err(Error::invalid("textured rendering needs a feature index"));
    }
    let [cw, ch] = schema.canvas_pixels(&doc.canvas);
    let scale = options.canvas_px as f64 / cw.max(ch);
    let (width, height) = ((cw * scale).round().max(1.0), (ch * scale).round().max(1.0));
    let mut body = String::new();
    writeln!(body, r##"<rect class="canvas" x="0" y="0" width="{width}" height="{height}" fill="#ffffff" stroke="#444444" stroke-width="1"/>"##).unwrap();
    for (t, el) in doc.elements.iter().enumerate() {
        let Some([x, y, w, h]) = frame(el, schema) else { continue };
        let [r, g, b] = fill(el, schema, palette, options.mode, index)?;
        let label = el.get(&schema.label_attr).and_then(Value::bin);
        let label_name = label
            .and_then(|l| schema.label_spec().labels.as_ref()?.get(l).cloned())
            .unwrap_or_else(|| label.map_or("none".into(), |l| l.to_string()));
        let opacity = if options.opacity_rendering {
            dequantized(el, schema, OPACITY_ATTR).and_then(|o| o.first().copied()).unwrap_or(1.0)
        } else {
            1.0
        };
        writeln!(
            body,
            r##"<rect class="element" data-index="{t}" data-label="{label_name}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#{r:02x}{g:02x}{b:02x}" fill-opacity="{opacity:.4}"/>"##,
            x * width,
            y * height,
            w * width,
            h * height,
        )
        .unwrap();
    }
    Ok(Panel { width, height, body })
}

fn svg(width: f64, height: f64, inner: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n{inner}</svg>\n"
    )
}

/// One document as an SVG file. Elements are drawn in depth order; the canvas
/// keeps its aspect ratio with the long side at `options.canvas_px`.
pub fn render_svg(
    doc: &Document,
    schema: &DocumentSchema,
    palette: &Palette,
    options: &RenderOptions,
    index: Option<&FeatureIndex>,
) -> Result<String> {
    let p = panel(doc, schema, palette, options, index)?;
    Ok(svg(p.width, p.height, &p.body))
}

/// Documents side by side, left to right in input order.
pub fn render_strip(
    docs: &[Document],
    schema: &DocumentSchema,
    palette: &Palette,
    options: &RenderOptions,
    index: Option<&FeatureIndex>,
) -> Result<String> {
    if docs.len() < 2 {
        return Err(Error::invalid("a strip needs at least two documents"));
    }
    let panels = docs.iter().map(|d| panel(d, schema, palette, options, index)).collect::<Result<Vec<_>>>()?;
    let height = panels.iter().map(|p| p.height).fold(0.0, f64::max);
    let mut inner = String::new();
    let mut x = 0.0;
    for (i, p) in panels.iter().enumerate() {
        writeln!(inner, "<g class=\"panel\" data-index=\"{i}\" transform=\"translate({x},0)\">").unwrap();
        inner.push_str(&p.body);
        inner.push_str("</g>\n");
        x += p.width + STRIP_GAP;
    }
    Ok(svg(x - STRIP_GAP, height, &inner))
}
