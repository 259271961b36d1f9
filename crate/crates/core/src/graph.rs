//! Typed, shape-inferred topology graph built from a [`RawTopologyDoc`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{ElementClass, MarkerKind, MarkerPosition, RawElement, RawTopologyDoc};
use crate::shape::{Axis, Precision, TensorShape};

/// Number of cepstral coefficients emitted by the MFCC inlay.
pub const MFCC_COEFFS: usize = 26;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown {class} kind `{kind}` on `{id}`")]
    UnknownKind {
        id: String,
        class: &'static str,
        kind: String,
    },
    #[error("`{from}` references unknown input `{missing}`")]
    DanglingReference { from: String, missing: String },
    #[error("cycle detected among: {0:?}")]
    Cycle(Vec<String>),
    #[error("marker error: {0}")]
    Marker(String),
    #[error("shape error on `{id}`: {message}")]
    Shape { id: String, message: String },
    #[error("invalid parameter on `{id}`: {message}")]
    InvalidParam { id: String, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("group error: {0}")]
    Group(String),
    #[error("topology has no layers")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "fc")]
    Fc,
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "bilstm")]
    BiLstm,
    #[serde(rename = "conv2d")]
    Conv2d,
    #[serde(rename = "softmax")]
    Softmax,
    #[serde(rename = "mfcc")]
    InlayMfcc,
    #[serde(rename = "memcopy")]
    InlayMemcopy,
    #[serde(rename = "cast")]
    InlayCast,
    #[serde(rename = "ctc_greedy")]
    InlayCtcGreedy,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Fc => "fc",
            NodeKind::Lstm => "lstm",
            NodeKind::BiLstm => "bilstm",
            NodeKind::Conv2d => "conv2d",
            NodeKind::Softmax => "softmax",
            NodeKind::InlayMfcc => "mfcc",
            NodeKind::InlayMemcopy => "memcopy",
            NodeKind::InlayCast => "cast",
            NodeKind::InlayCtcGreedy => "ctc_greedy",
        }
    }

    pub fn is_inlay(self) -> bool {
        matches!(
            self,
            NodeKind::InlayMfcc | NodeKind::InlayMemcopy | NodeKind::InlayCast | NodeKind::InlayCtcGreedy
        )
    }

    pub fn is_parametric(self) -> bool {
        matches!(
            self,
            NodeKind::Fc | NodeKind::Lstm | NodeKind::BiLstm | NodeKind::Conv2d
        )
    }

    fn known_attrs(self) -> &'static [&'static str] {
        match self {
            NodeKind::Fc => &["nodes", "activation", "clip"],
            NodeKind::Lstm => &["nodes", "direction"],
            NodeKind::BiLstm => &["nodes"],
            NodeKind::Conv2d => &["filters", "kernel", "stride", "padding"],
            NodeKind::InlayCast => &["to"],
            NodeKind::InlayCtcGreedy => &["blank"],
            NodeKind::Softmax | NodeKind::InlayMfcc | NodeKind::InlayMemcopy => &[],
        }
    }

    fn lookup(class: ElementClass, kind: &str) -> Option<NodeKind> {
        match (class, kind) {
            (ElementClass::Layer, "fc") => Some(NodeKind::Fc),
            (ElementClass::Layer, "lstm") => Some(NodeKind::Lstm),
            (ElementClass::Layer, "bilstm") => Some(NodeKind::BiLstm),
            (ElementClass::Layer, "conv2d") => Some(NodeKind::Conv2d),
            (ElementClass::Layer, "softmax") => Some(NodeKind::Softmax),
            (ElementClass::Inlay, "mfcc") => Some(NodeKind::InlayMfcc),
            (ElementClass::Inlay, "memcopy") => Some(NodeKind::InlayMemcopy),
            (ElementClass::Inlay, "cast") => Some(NodeKind::InlayCast),
            (ElementClass::Inlay, "ctc_greedy") => Some(NodeKind::InlayCtcGreedy),
            _ => None,
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activation {
    None,
    ReluClip { clip: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvParams {
    /// Output extent and leading pad along one spatial axis.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<(usize, usize)> {
        let s = self.stride;
        match self.padding {
            Padding::Same => {
                let out = input.div_ceil(s);
                let total = ((out - 1) * s + kernel).saturating_sub(input);
                Some((out, total / 2))
            }
            Padding::Valid => {
                if input < kernel {
                    None
                } else {
                    Some(((input - kernel) / s + 1, 0))
                }
            }
        }
    }
}

/// Typed parameters, one variant per node kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerParams {
    Fc { nodes: usize, activation: Activation },
    Lstm { hidden: usize, direction: Direction },
    BiLstm { hidden: usize },
    Conv2d(ConvParams),
    Softmax,
    Mfcc,
    Memcopy,
    Cast { to: Precision },
    CtcGreedy { blank: Option<usize> },
}

impl LayerParams {
    pub fn kind(&self) -> NodeKind {
        match self {
            LayerParams::Fc { .. } => NodeKind::Fc,
            LayerParams::Lstm { .. } => NodeKind::Lstm,
            LayerParams::BiLstm { .. } => NodeKind::BiLstm,
            LayerParams::Conv2d(_) => NodeKind::Conv2d,
            LayerParams::Softmax => NodeKind::Softmax,
            LayerParams::Mfcc => NodeKind::InlayMfcc,
            LayerParams::Memcopy => NodeKind::InlayMemcopy,
            LayerParams::Cast { .. } => NodeKind::InlayCast,
            LayerParams::CtcGreedy { .. } => NodeKind::InlayCtcGreedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: String,
    pub params: LayerParams,
    pub inputs: Vec<String>,
    pub in_shape: TensorShape,
    pub out_shape: TensorShape,
}

impl LayerNode {
    pub fn kind(&self) -> NodeKind {
        self.params.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyGraph {
    pub name: String,
    pub inputs: Vec<(String, TensorShape)>,
    /// Topologically ordered.
    pub nodes: Vec<LayerNode>,
    /// First and last node of the benchmark region, inclusive.
    pub region: Option<(String, String)>,
    pub groups: Vec<Group>,
}

impl TopologyGraph {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn input_shape(&self, id: &str) -> Option<&TensorShape> {
        self.inputs.iter().find(|(i, _)| i == id).map(|(_, s)| s)
    }

    /// Index range of the region in `nodes`; the whole list when no markers were given.
    pub fn region_range(&self) -> Range<usize> {
        match &self.region {
            Some((first, last)) => {
                let a = self.index_of(first).expect("validated region start");
                let b = self.index_of(last).expect("validated region end");
                a..b + 1
            }
            None => 0..self.nodes.len(),
        }
    }

    pub fn in_region(&self, index: usize) -> bool {
        self.region_range().contains(&index)
    }

    pub fn without_region(&self) -> TopologyGraph {
        TopologyGraph {
            region: None,
            ..self.clone()
        }
    }

    /// Node ids that consume `id`.
    pub fn consumers(&self, id: &str) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| n.inputs.iter().any(|i| i == id))
            .map(|n| n.id.as_str())
            .collect()
    }
}

pub fn region_nodes(graph: &TopologyGraph) -> Vec<String> {
    graph.nodes[graph.region_range()]
        .iter()
        .map(|n| n.id.clone())
        .collect()
}

fn invalid(id: &str, message: impl Into<String>) -> GraphError {
    GraphError::InvalidParam {
        id: id.to_owned(),
        message: message.into(),
    }
}

fn shape_err(id: &str, message: impl Into<String>) -> GraphError {
    GraphError::Shape {
        id: id.to_owned(),
        message: message.into(),
    }
}

fn attr_usize(el: &RawElement, name: &str, default: Option<usize>) -> Result<usize, GraphError> {
    match el.attrs.get(name) {
        Some(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| invalid(&el.id, format!("`{name}` must be a positive integer, got `{v}`")))?;
            if n == 0 {
                return Err(invalid(&el.id, format!("`{name}` must be at least 1")));
            }
            Ok(n)
        }
        None => default.ok_or_else(|| invalid(&el.id, format!("missing `{name}`"))),
    }
}

fn parse_params(el: &RawElement, kind: NodeKind) -> Result<LayerParams, GraphError> {
    Ok(match kind {
        NodeKind::Fc => {
            let nodes = attr_usize(el, "nodes", None)?;
            let activation = match el.attrs.get("activation").map(|s| s.trim()) {
                None | Some("none") => Activation::None,
                Some("relu_clip") => {
                    let clip = match el.attrs.get("clip") {
                        Some(v) => v
                            .trim()
                            .parse::<f32>()
                            .map_err(|_| invalid(&el.id, format!("bad clip `{v}`")))?,
                        None => 20.0,
                    };
                    if !(clip > 0.0 && clip.is_finite()) {
                        return Err(invalid(&el.id, "clip must be > 0"));
                    }
                    Activation::ReluClip { clip }
                }
                Some(other) => return Err(invalid(&el.id, format!("unknown activation `{other}`"))),
            };
            LayerParams::Fc { nodes, activation }
        }
        NodeKind::Lstm => LayerParams::Lstm {
            hidden: attr_usize(el, "nodes", None)?,
            direction: match el.attrs.get("direction").map(|s| s.trim()) {
                None | Some("forward") => Direction::Forward,
                Some("reverse") => Direction::Reverse,
                Some(other) => return Err(invalid(&el.id, format!("unknown direction `{other}`"))),
            },
        },
        NodeKind::BiLstm => LayerParams::BiLstm {
            hidden: attr_usize(el, "nodes", None)?,
        },
        NodeKind::Conv2d => {
            let filters = attr_usize(el, "filters", None)?;
            let kernel = el
                .attrs
                .get("kernel")
                .ok_or_else(|| invalid(&el.id, "missing `kernel`"))?;
            let (kh, kw) = match kernel.trim().split_once(['x', 'X']) {
                Some((h, w)) => (h.trim().parse::<usize>(), w.trim().parse::<usize>()),
                None => (kernel.trim().parse::<usize>(), kernel.trim().parse::<usize>()),
            };
            let (kernel_h, kernel_w) = match (kh, kw) {
                (Ok(h), Ok(w)) if h > 0 && w > 0 => (h, w),
                _ => return Err(invalid(&el.id, format!("bad kernel `{kernel}`"))),
            };
            let padding = match el.attrs.get("padding").map(|s| s.trim()) {
                None | Some("same") => Padding::Same,
                Some("valid") => Padding::Valid,
                Some(other) => return Err(invalid(&el.id, format!("unknown padding `{other}`"))),
            };
            LayerParams::Conv2d(ConvParams {
                filters,
                kernel_h,
                kernel_w,
                stride: attr_usize(el, "stride", Some(1))?,
                padding,
            })
        }
        NodeKind::Softmax => LayerParams::Softmax,
        NodeKind::InlayMfcc => LayerParams::Mfcc,
        NodeKind::InlayMemcopy => LayerParams::Memcopy,
        NodeKind::InlayCast => {
            let to = el
                .attrs
                .get("to")
                .ok_or_else(|| invalid(&el.id, "missing `to`"))?
                .parse::<Precision>()
                .map_err(|e| invalid(&el.id, e.0))?;
            LayerParams::Cast { to }
        }
        NodeKind::InlayCtcGreedy => LayerParams::CtcGreedy {
            blank: match el.attrs.get("blank") {
                Some(v) => Some(
                    v.trim()
                        .parse()
                        .map_err(|_| invalid(&el.id, format!("bad blank `{v}`")))?,
                ),
                None => None,
            },
        },
    })
}

fn require_tags(id: &str, shape: &TensorShape, tags: &[Axis], what: &str) -> Result<(), GraphError> {
    if shape.tags() != tags {
        return Err(shape_err(
            id,
            format!("{what} expects axes {tags:?}, got {}", shape.dims_string()),
        ));
    }
    Ok(())
}

/// Output shape of a node given its (single) input shape.
pub fn infer_shape(id: &str, params: &LayerParams, input: &TensorShape) -> Result<TensorShape, GraphError> {
    use Axis::*;
    let out = match *params {
        LayerParams::Fc { nodes, .. } => {
            if input.last().0 != F {
                return Err(shape_err(id, format!("fc needs a trailing F axis, got {}", input.dims_string())));
            }
            input.with_last(F, nodes).with_precision(Precision::Fp32)
        }
        LayerParams::Lstm { hidden, .. } => {
            require_tags(id, input, &[T, B, F], "lstm")?;
            input.with_extent(F, hidden).with_precision(Precision::Fp32)
        }
        LayerParams::BiLstm { hidden } => {
            require_tags(id, input, &[T, B, F], "bilstm")?;
            input.with_extent(F, 2 * hidden).with_precision(Precision::Fp32)
        }
        LayerParams::Conv2d(p) => {
            require_tags(id, input, &[B, C, H, W], "conv2d")?;
            let h = input.extent(H).unwrap_or(0);
            let w = input.extent(W).unwrap_or(0);
            let (ho, _) = p
                .out_extent(h, p.kernel_h)
                .ok_or_else(|| shape_err(id, "kernel taller than input with valid padding"))?;
            let (wo, _) = p
                .out_extent(w, p.kernel_w)
                .ok_or_else(|| shape_err(id, "kernel wider than input with valid padding"))?;
            input
                .with_extent(C, p.filters)
                .with_extent(H, ho)
                .with_extent(W, wo)
                .with_precision(Precision::Fp32)
        }
        LayerParams::Softmax => {
            if input.last().0 != F {
                return Err(shape_err(id, "softmax needs a trailing F axis"));
            }
            input.with_precision(Precision::Fp32)
        }
        LayerParams::Mfcc => {
            require_tags(id, input, &[T, B, F], "mfcc")?;
            let frame = input.extent(F).unwrap_or(0);
            if frame / 2 + 1 < MFCC_COEFFS {
                return Err(shape_err(
                    id,
                    format!("mfcc needs frames of at least {} samples, got {frame}", 2 * (MFCC_COEFFS - 1)),
                ));
            }
            input.with_extent(F, MFCC_COEFFS).with_precision(Precision::Fp32)
        }
        LayerParams::Memcopy => input.clone(),
        LayerParams::Cast { to } => input.with_precision(to),
        LayerParams::CtcGreedy { blank } => {
            require_tags(id, input, &[T, B, F], "ctc_greedy")?;
            let classes = input.extent(F).unwrap_or(0);
            if classes < 2 {
                return Err(shape_err(id, "ctc_greedy needs at least 2 classes"));
            }
            if blank.is_some_and(|b| b >= classes) {
                return Err(invalid(id, format!("blank index out of range for {classes} classes")));
            }
            TensorShape::new(
                vec![(T, input.extent(T).unwrap_or(1)), (B, input.extent(B).unwrap_or(1))],
                Precision::Fp32,
            )
            .expect("extents validated")
        }
    };
    Ok(out)
}

pub fn validate(doc: &RawTopologyDoc) -> Result<TopologyGraph, GraphError> {
    let mut inputs = Vec::with_capacity(doc.inputs.len());
    let mut seen = BTreeSet::new();
    for input in &doc.inputs {
        if !seen.insert(input.id.as_str()) {
            return Err(GraphError::DuplicateId(input.id.clone()));
        }
        let precision = match &input.precision {
            Some(p) => p.parse().map_err(|e: crate::shape::ShapeParseError| shape_err(&input.id, e.0))?,
            None => Precision::Fp32,
        };
        let shape = TensorShape::parse_dims(&input.shape, precision).map_err(|e| shape_err(&input.id, e.0))?;
        for key in input.extra.keys() {
            log::warn!("input `{}`: ignoring unknown attribute `{key}`", input.id);
        }
        inputs.push((input.id.clone(), shape));
    }
    if doc.elements.is_empty() {
        return Err(GraphError::Empty);
    }

    let mut parsed = Vec::with_capacity(doc.elements.len());
    for el in &doc.elements {
        if !seen.insert(el.id.as_str()) {
            return Err(GraphError::DuplicateId(el.id.clone()));
        }
        let kind = NodeKind::lookup(el.class, &el.kind).ok_or_else(|| GraphError::UnknownKind {
            id: el.id.clone(),
            class: match el.class {
                ElementClass::Layer => "layer",
                ElementClass::Inlay => "inlay",
            },
            kind: el.kind.clone(),
        })?;
        for key in el.attrs.keys() {
            if !kind.known_attrs().contains(&key.as_str()) {
                log::warn!("`{}`: ignoring unknown attribute `{key}`", el.id);
            }
        }
        parsed.push((el, parse_params(el, kind)?));
    }

    for (el, _) in &parsed {
        for src in &el.inputs {
            if !seen.contains(src.as_str()) {
                return Err(GraphError::DanglingReference {
                    from: el.id.clone(),
                    missing: src.clone(),
                });
            }
        }
        if el.inputs.len() != 1 {
            return Err(shape_err(
                &el.id,
                format!("expects exactly one input, got {}", el.inputs.len()),
            ));
        }
    }

    // Kahn's algorithm; ties broken by document order.
    let element_index: HashMap<&str, usize> = parsed
        .iter()
        .enumerate()
        .map(|(i, (el, _))| (el.id.as_str(), i))
        .collect();
    let mut indegree = vec![0usize; parsed.len()];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); parsed.len()];
    for (i, (el, _)) in parsed.iter().enumerate() {
        for src in &el.inputs {
            if let Some(&j) = element_index.get(src.as_str()) {
                indegree[i] += 1;
                dependents[j].push(i);
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..parsed.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(parsed.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &d in &dependents[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() != parsed.len() {
        let stuck = (0..parsed.len())
            .filter(|i| indegree[*i] > 0)
            .map(|i| parsed[i].0.id.clone())
            .collect();
        return Err(GraphError::Cycle(stuck));
    }

    let mut shapes: HashMap<String, TensorShape> =
        inputs.iter().map(|(id, s)| (id.clone(), s.clone())).collect();
    let mut nodes = Vec::with_capacity(order.len());
    for i in order {
        let (el, params) = &parsed[i];
        let in_shape = shapes[&el.inputs[0]].clone();
        let out_shape = infer_shape(&el.id, params, &in_shape)?;
        shapes.insert(el.id.clone(), out_shape.clone());
        nodes.push(LayerNode {
            id: el.id.clone(),
            params: *params,
            inputs: el.inputs.clone(),
            in_shape,
            out_shape,
        });
    }

    let mut graph = TopologyGraph {
        name: doc.name.clone(),
        inputs,
        nodes,
        region: None,
        groups: Vec::new(),
    };
    graph.region = resolve_region(doc, &graph)?;
    graph.groups = resolve_groups(doc, &graph)?;
    Ok(graph)
}

fn resolve_region(doc: &RawTopologyDoc, graph: &TopologyGraph) -> Result<Option<(String, String)>, GraphError> {
    if doc.markers.is_empty() {
        return Ok(None);
    }
    let starts: Vec<_> = doc.markers.iter().filter(|m| m.kind == MarkerKind::Start).collect();
    let ends: Vec<_> = doc.markers.iter().filter(|m| m.kind == MarkerKind::End).collect();
    if starts.len() > 1 || ends.len() > 1 {
        return Err(GraphError::Marker("only one start/end region is allowed".into()));
    }
    let (Some(start), Some(end)) = (starts.first(), ends.first()) else {
        return Err(GraphError::Marker("start and end markers must come in pairs".into()));
    };
    let locate = |anchor: &str| {
        graph
            .index_of(anchor)
            .map(|i| i as isize)
            .ok_or_else(|| GraphError::Marker(format!("marker anchor `{anchor}` is not a layer or inlay")))
    };
    let first = match start.position {
        MarkerPosition::Before => locate(&start.anchor)?,
        MarkerPosition::After => locate(&start.anchor)? + 1,
    };
    let last = match end.position {
        MarkerPosition::After => locate(&end.anchor)?,
        MarkerPosition::Before => locate(&end.anchor)? - 1,
    };
    let n = graph.nodes.len() as isize;
    if first >= n || last < 0 {
        return Err(GraphError::Marker("region lies outside the topology".into()));
    }
    if first > last {
        return Err(GraphError::Marker(format!(
            "end marker (`{}`) precedes start marker (`{}`)",
            end.anchor, start.anchor
        )));
    }
    Ok(Some((
        graph.nodes[first as usize].id.clone(),
        graph.nodes[last as usize].id.clone(),
    )))
}

fn resolve_groups(doc: &RawTopologyDoc, graph: &TopologyGraph) -> Result<Vec<Group>, GraphError> {
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    let mut names = BTreeSet::new();
    let mut groups = Vec::with_capacity(doc.groups.len());
    for g in &doc.groups {
        if !names.insert(g.name.as_str()) {
            return Err(GraphError::Group(format!("duplicate group `{}`", g.name)));
        }
        if g.members.is_empty() {
            return Err(GraphError::Group(format!("group `{}` is empty", g.name)));
        }
        for m in &g.members {
            if graph.node(m).is_none() {
                return Err(GraphError::Group(format!("group `{}` names unknown layer `{m}`", g.name)));
            }
            if let Some(prev) = owner.insert(m, &g.name) {
                return Err(GraphError::Group(format!(
                    "layer `{m}` belongs to both `{prev}` and `{}`",
                    g.name
                )));
            }
        }
        groups.push(Group {
            name: g.name.clone(),
            members: g.members.clone(),
        });
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_topology;

    fn graph(xml: &str) -> Result<TopologyGraph, GraphError> {
        validate(&parse_topology(xml).unwrap())
    }

    #[test]
    fn fc_replaces_feature_axis() {
        let g = graph(
            r#"<topology name="t"><input id="in" shape="B:4,F:494"/>
               <layer id="fc" type="fc" nodes="2048" input="in"/></topology>"#,
        )
        .unwrap();
        assert_eq!(g.nodes[0].out_shape.to_string(), "B:4,F:2048");
    }

    #[test]
    fn bilstm_concatenates_directions() {
        let g = graph(
            r#"<topology name="t"><input id="in" shape="T:10,B:2,F:3"/>
               <layer id="b" type="bilstm" nodes="4" input="in"/></topology>"#,
        )
        .unwrap();
        assert_eq!(g.nodes[0].out_shape.to_string(), "T:10,B:2,F:8");
    }

    #[test]
    fn conv_same_padding_keeps_spatial_extent() {
        let g = graph(
            r#"<topology name="t"><input id="in" shape="B:1,C:3,H:8,W:8"/>
               <layer id="c" type="conv2d" filters="16" kernel="3x3" stride="1" padding="same" input="in"/></topology>"#,
        )
        .unwrap();
        assert_eq!(g.nodes[0].out_shape.to_string(), "B:1,C:16,H:8,W:8");
    }

    #[test]
    fn conv_valid_and_strided() {
        let g = graph(
            r#"<topology name="t"><input id="in" shape="B:1,C:3,H:9,W:8"/>
               <layer id="c" type="conv2d" filters="4" kernel="3x2" stride="2" padding="valid" input="in"/>
               <layer id="d" type="conv2d" filters="4" kernel="3" stride="2" input="c"/></topology>"#,
        )
        .unwrap();
        assert_eq!(g.nodes[0].out_shape.to_string(), "B:1,C:4,H:4,W:4");
        assert_eq!(g.nodes[1].out_shape.to_string(), "B:1,C:4,H:2,W:2");
    }

    #[test]
    fn reversed_markers_are_rejected() {
        let err = graph(
            r#"<topology name="t"><input id="in" shape="B:1,F:2"/>
               <layer id="a" type="fc" nodes="2" input="in"/>
               <layer id="b" type="fc" nodes="2" input="a"/>
               <marker type="end" after="a"/><marker type="start" before="b"/></topology>"#,
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Marker(_)), "{err}");
    }

    #[test]
    fn marker_pairing_rules() {
        let base = r#"<topology name="t"><input id="in" shape="B:1,F:2"/>
               <layer id="a" type="fc" nodes="2" input="in"/>
               <layer id="b" type="fc" nodes="2" input="a"/>"#;
        let only_start = format!(r#"{base}<marker type="start" before="a"/></topology>"#);
        assert!(matches!(graph(&only_start), Err(GraphError::Marker(_))));
        let two_regions = format!(
            r#"{base}<marker type="start" before="a"/><marker type="end" after="a"/>
               <marker type="start" before="b"/><marker type="end" after="b"/></topology>"#
        );
        assert!(matches!(graph(&two_regions), Err(GraphError::Marker(_))));
        let after_before = format!(r#"{base}<marker type="start" after="a"/><marker type="end" before="b"/></topology>"#);
        assert!(matches!(graph(&after_before), Err(GraphError::Marker(_))));
        let ok = format!(r#"{base}<marker type="start" after="a"/><marker type="end" after="b"/></topology>"#);
        let g = graph(&ok).unwrap();
        assert_eq!(region_nodes(&g), vec!["b"]);
    }

    #[test]
    fn region_slice_and_default() {
        let xml = r#"<topology name="t"><input id="in" shape="B:1,F:2"/>
            <layer id="n1" type="fc" nodes="2" input="in"/>
            <layer id="n2" type="fc" nodes="2" input="n1"/>
            <layer id="n3" type="fc" nodes="2" input="n2"/>
            <layer id="n4" type="fc" nodes="2" input="n3"/>
            <layer id="n5" type="fc" nodes="2" input="n4"/>
            MARKERS</topology>"#;
        let g = graph(&xml.replace(
            "MARKERS",
            r#"<marker type="start" before="n2"/><marker type="end" after="n4"/>"#,
        ))
        .unwrap();
        assert_eq!(region_nodes(&g), vec!["n2", "n3", "n4"]);
        let g = graph(&xml.replace("MARKERS", "")).unwrap();
        assert_eq!(region_nodes(&g).len(), 5);
    }

    #[test]
    fn dangling_cycle_and_unknown_kind() {
        let dangling = r#"<topology name="t"><layer id="a" type="fc" nodes="2" input="ghost"/></topology>"#;
        assert!(matches!(graph(dangling), Err(GraphError::DanglingReference { .. })));
        let cycle = r#"<topology name="t"><layer id="a" type="fc" nodes="2" input="b"/>
            <layer id="b" type="fc" nodes="2" input="a"/></topology>"#;
        assert!(matches!(graph(cycle), Err(GraphError::Cycle(_))));
        let unknown = r#"<topology name="t"><input id="in" shape="B:1,F:2"/>
            <layer id="a" type="gru" nodes="2" input="in"/></topology>"#;
        assert!(matches!(graph(unknown), Err(GraphError::UnknownKind { .. })));
        let wrong_class = r#"<topology name="t"><input id="in" shape="B:1,F:2"/>
            <layer id="a" type="memcopy" input="in"/></topology>"#;
        assert!(matches!(graph(wrong_class), Err(GraphError::UnknownKind { .. })));
    }

    #[test]
    fn topological_order_respects_edges_despite_document_order() {
        let g = graph(
            r#"<topology name="t"><input id="in" shape="B:1,F:2"/>
               <layer id="late" type="fc" nodes="2" input="early"/>
               <layer id="early" type="fc" nodes="2" input="in"/></topology>"#,
        )
        .unwrap();
        assert_eq!(g.nodes[0].id, "early");
        assert_eq!(g.nodes[1].id, "late");
    }

    #[test]
    fn shape_errors() {
        let lstm_on_2d = r#"<topology name="t"><input id="in" shape="B:1,F:2"/>
            <layer id="a" type="lstm" nodes="2" input="in"/></topology>"#;
        assert!(matches!(graph(lstm_on_2d), Err(GraphError::Shape { .. })));
        let zero_time = r#"<topology name="t"><input id="in" shape="T:0,B:1,F:2"/>
            <layer id="a" type="lstm" nodes="2" input="in"/></topology>"#;
        assert!(matches!(graph(zero_time), Err(GraphError::Shape { .. })));
        let short_frames = r#"<topology name="t"><input id="in" shape="T:2,B:1,F:20"/>
            <inlay id="m" type="mfcc" input="in"/></topology>"#;
        assert!(matches!(graph(short_frames), Err(GraphError::Shape { .. })));
    }

    #[test]
    fn params_are_range_checked() {
        let zero_nodes = r#"<topology name="t"><input id="in" shape="B:1,F:2"/>
            <layer id="a" type="fc" nodes="0" input="in"/></topology>"#;
        assert!(matches!(graph(zero_nodes), Err(GraphError::InvalidParam { .. })));
        let neg_clip = r#"<topology name="t"><input id="in" shape="B:1,F:2"/>
            <layer id="a" type="fc" nodes="2" activation="relu_clip" clip="-1" input="in"/></topology>"#;
        assert!(matches!(graph(neg_clip), Err(GraphError::InvalidParam { .. })));
    }

    #[test]
    fn groups_must_not_overlap() {
        let xml = r#"<topology name="t"><input id="in" shape="B:1,F:2"/>
            <layer id="a" type="fc" nodes="2" input="in"/>
            <layer id="b" type="fc" nodes="2" input="a"/>
            <group name="g1" layers="a,b"/><group name="g2" layers="b"/></topology>"#;
        assert!(matches!(graph(xml), Err(GraphError::Group(_))));
    }

    #[test]
    fn inlays_infer_shapes() {
        let g = graph(
            r#"<topology name="t"><input id="in" shape="T:5,B:2,F:64"/>
               <inlay id="m" type="mfcc" input="in"/>
               <inlay id="c" type="cast" to="fp16" input="m"/>
               <inlay id="k" type="memcopy" input="c"/>
               <layer id="f" type="fc" nodes="29" input="k"/>
               <layer id="s" type="softmax" input="f"/>
               <inlay id="d" type="ctc_greedy" input="s"/></topology>"#,
        )
        .unwrap();
        let shapes: Vec<String> = g.nodes.iter().map(|n| n.out_shape.to_string()).collect();
        assert_eq!(shapes, ["T:5,B:2,F:26", "T:5,B:2,F:26", "T:5,B:2,F:26", "T:5,B:2,F:29", "T:5,B:2,F:29", "T:5,B:2"]);
        assert_eq!(g.nodes[1].out_shape.precision, Precision::Fp16);
        assert_eq!(g.nodes[2].out_shape.precision, Precision::Fp16);
    }
}
