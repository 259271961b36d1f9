//! XML topology description: parsing into an unvalidated syntax tree and
//! canonical serialization.
//!
//! ```xml
//! <topology name="tiny">
//!   <input id="in" shape="T:4,B:1,F:8" precision="fp32"/>
//!   <layer id="fc1" type="fc" nodes="16" input="in"/>
//!   <marker type="start" before="fc1"/>
//!   <marker type="end" after="fc1"/>
//!   <group name="front" layers="fc1"/>
//! </topology>
//! ```
//!
//! Attribute values are kept as source text; typing happens in [`crate::graph`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementClass {
    Layer,
    Inlay,
}

impl ElementClass {
    fn tag(self) -> &'static str {
        match self {
            ElementClass::Layer => "layer",
            ElementClass::Inlay => "inlay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerKind {
    Start,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerPosition {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInput {
    pub id: String,
    /// Dims as written, e.g. `["T:100", "B:1", "F:26"]`.
    pub shape: Vec<String>,
    pub precision: Option<String>,
    /// Attributes not understood by the schema; preserved for round-tripping.
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawElement {
    pub id: String,
    pub class: ElementClass,
    pub kind: String,
    /// Every attribute other than `id`, `type` and `input`.
    pub attrs: BTreeMap<String, String>,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMarker {
    pub kind: MarkerKind,
    pub anchor: String,
    pub position: MarkerPosition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawGroup {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawTopologyDoc {
    pub name: String,
    pub inputs: Vec<RawInput>,
    pub elements: Vec<RawElement>,
    pub markers: Vec<RawMarker>,
    pub groups: Vec<RawGroup>,
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

fn required<'a>(node: roxmltree::Node<'a, '_>, attr: &str) -> Result<&'a str, DslError> {
    node.attribute(attr).ok_or_else(|| {
        DslError::Schema(format!(
            "<{}> is missing required attribute `{attr}`",
            node.tag_name().name()
        ))
    })
}

/// Parses raw bytes; invalid UTF-8 is reported as a syntax error.
pub fn parse_topology_bytes(bytes: &[u8]) -> Result<RawTopologyDoc, DslError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let prefix = &bytes[..e.valid_up_to()];
        let line = 1 + prefix.iter().filter(|&&b| b == b'\n').count() as u32;
        DslError::Syntax {
            line,
            column: 0,
            message: format!("invalid UTF-8: {e}"),
        }
    })?;
    parse_topology(text)
}

pub fn parse_topology(xml_text: &str) -> Result<RawTopologyDoc, DslError> {
    let tree = roxmltree::Document::parse(xml_text).map_err(|e| {
        let pos = e.pos();
        DslError::Syntax {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = tree.root_element();
    if root.tag_name().name() != "topology" {
        return Err(DslError::Schema(format!(
            "root element must be <topology>, found <{}>",
            root.tag_name().name()
        )));
    }
    let mut doc = RawTopologyDoc {
        name: required(root, "name")?.to_owned(),
        ..Default::default()
    };

    for child in root.children() {
        if child.is_text() {
            if child.text().is_some_and(|t| !t.trim().is_empty()) {
                return Err(DslError::Schema("unexpected text content".into()));
            }
            continue;
        }
        if !child.is_element() {
            continue;
        }
        match child.tag_name().name() {
            "input" => {
                let mut extra = BTreeMap::new();
                for attr in child.attributes() {
                    if !matches!(attr.name(), "id" | "shape" | "precision") {
                        extra.insert(attr.name().to_owned(), attr.value().to_owned());
                    }
                }
                doc.inputs.push(RawInput {
                    id: required(child, "id")?.to_owned(),
                    shape: split_list(required(child, "shape")?),
                    precision: child.attribute("precision").map(str::to_owned),
                    extra,
                });
            }
            tag @ ("layer" | "inlay") => {
                let class = if tag == "layer" {
                    ElementClass::Layer
                } else {
                    ElementClass::Inlay
                };
                let mut attrs = BTreeMap::new();
                for attr in child.attributes() {
                    if !matches!(attr.name(), "id" | "type" | "input") {
                        attrs.insert(attr.name().to_owned(), attr.value().to_owned());
                    }
                }
                doc.elements.push(RawElement {
                    id: required(child, "id")?.to_owned(),
                    class,
                    kind: required(child, "type")?.to_owned(),
                    attrs,
                    inputs: child.attribute("input").map(split_list).unwrap_or_default(),
                });
            }
            "marker" => {
                let kind = match required(child, "type")? {
                    "start" => MarkerKind::Start,
                    "end" => MarkerKind::End,
                    other => {
                        return Err(DslError::Schema(format!(
                            "marker type must be start or end, got `{other}`"
                        )))
                    }
                };
                let (position, anchor) =
                    match (child.attribute("before"), child.attribute("after")) {
                        (Some(a), None) => (MarkerPosition::Before, a),
                        (None, Some(a)) => (MarkerPosition::After, a),
                        _ => {
                            return Err(DslError::Schema(
                                "marker needs exactly one of `before` or `after`".into(),
                            ))
                        }
                    };
                doc.markers.push(RawMarker {
                    kind,
                    anchor: anchor.trim().to_owned(),
                    position,
                });
            }
            "group" => doc.groups.push(RawGroup {
                name: required(child, "name")?.to_owned(),
                members: split_list(required(child, "layers")?),
            }),
            other => return Err(DslError::Schema(format!("unknown tag <{other}>"))),
        }
    }
    Ok(doc)
}

fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out
}

fn write_tag(out: &mut String, tag: &str, attrs: BTreeMap<&str, String>) {
    let _ = write!(out, "  <{tag}");
    for (k, v) in attrs {
        let _ = write!(out, " {k}=\"{}\"", escape(&v));
    }
    out.push_str("/>\n");
}

/// Canonical XML: inputs, elements, markers, groups; attributes sorted by name.
pub fn serialize_topology(doc: &RawTopologyDoc) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<topology name=\"{}\">", escape(&doc.name));
    for input in &doc.inputs {
        let mut attrs: BTreeMap<&str, String> = input
            .extra
            .iter()
            .map(|(k, v)| (k.as_str(), v.clone()))
            .collect();
        attrs.insert("id", input.id.clone());
        attrs.insert("shape", input.shape.join(","));
        if let Some(p) = &input.precision {
            attrs.insert("precision", p.clone());
        }
        write_tag(&mut out, "input", attrs);
    }
    for el in &doc.elements {
        let mut attrs: BTreeMap<&str, String> =
            el.attrs.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        attrs.insert("id", el.id.clone());
        attrs.insert("type", el.kind.clone());
        if !el.inputs.is_empty() {
            attrs.insert("input", el.inputs.join(","));
        }
        write_tag(&mut out, el.class.tag(), attrs);
    }
    for m in &doc.markers {
        let mut attrs = BTreeMap::new();
        attrs.insert(
            "type",
            match m.kind {
                MarkerKind::Start => "start",
                MarkerKind::End => "end",
            }
            .to_owned(),
        );
        let key = match m.position {
            MarkerPosition::Before => "before",
            MarkerPosition::After => "after",
        };
        attrs.insert(key, m.anchor.clone());
        write_tag(&mut out, "marker", attrs);
    }
    for g in &doc.groups {
        let mut attrs = BTreeMap::new();
        attrs.insert("name", g.name.clone());
        attrs.insert("layers", g.members.join(","));
        write_tag(&mut out, "group", attrs);
    }
    out.push_str("</topology>\n");
    out
}

impl RawTopologyDoc {
    pub fn element(&self, id: &str) -> Option<&RawElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    /// Replaces one existing element attribute addressed as `element_id.attr`.
    /// Every other attribute is left untouched.
    pub fn set_param(&mut self, path: &str, value: &str) -> Result<(), DslError> {
        let (id, attr) = path
            .split_once('.')
            .ok_or_else(|| DslError::UnknownParam(path.to_owned()))?;
        let element = self
            .elements
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or_else(|| DslError::UnknownParam(path.to_owned()))?;
        let slot = element
            .attrs
            .get_mut(attr)
            .ok_or_else(|| DslError::UnknownParam(path.to_owned()))?;
        *slot = value.to_owned();
        Ok(())
    }

    /// Rewrites the extent of the `B` axis of every input that has one.
    pub fn override_batch(&mut self, batch: usize) {
        for input in &mut self.inputs {
            for dim in &mut input.shape {
                if let Some((tag, _)) = dim.split_once(':') {
                    if tag.trim() == "B" {
                        *dim = format!("B:{batch}");
                    }
                }
            }
        }
    }

    /// Drops the start/end markers so the whole graph is the benchmark region.
    pub fn clear_markers(&mut self) {
        self.markers.clear();
    }
}
