//! XML pipeline descriptions.
//!
//! ```xml
//! <pipeline>
//!   <layout kind="linear" elements="128" pitch_mm="0.3"
//!           center_frequency_hz="7e6" lines="128" multiline="1"
//!           depth_mm="45" focus_mm="20" sample_frequency_hz="40e6"/>
//!   <node id="src" kind="synthetic-input">
//!     <param name="frames" value="10"/>
//!     <param name="wire_depths_mm" value="5,10,15,20,25"/>
//!   </node>
//!   <node id="bf" kind="beamformer">
//!     <param name="f_number" value="1.0"/>
//!   </node>
//!   <edge from="src" to="bf"/>
//! </pipeline>
//! ```
//!
//! In strict mode unknown elements and attributes are errors; the lenient
//! parser downgrades them to warnings.

use std::collections::HashMap;
use std::sync::Arc;

use echopipe_core::envelope::Band;
use echopipe_core::geometry::{
    make_linear_layout_with, make_phased_layout, samples_for_depth, ArrayKind,
    LinearLayoutOptions, MultilineConvention, TransducerGeometry, DEFAULT_SPEED_OF_SOUND,
};
use echopipe_core::synth::Scatterer;
use echopipe_core::WindowKind;
use roxmltree::{Document, Node};

use crate::nodes::{NodeKind, NodeSpec};
use crate::{GraphError, PipelineGraph, Result};

/// What a full edge queue does to the producer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QueuePolicy {
    /// Producer blocks until the consumer catches up (back-pressure).
    #[default]
    Block,
    /// Oldest queued frame is discarded, for live-rate simulation.
    DropOldest,
}

pub const DEFAULT_QUEUE_DEPTH: usize = 4;

struct Ctx<'a> {
    doc: &'a Document<'a>,
    strict: bool,
    warnings: Vec<String>,
}

impl<'a> Ctx<'a> {
    fn at(&self, node: Node) -> String {
        let pos = self.doc.text_pos_at(node.range().start);
        format!("line {}, column {}", pos.row, pos.col)
    }

    fn config(&self, node: Node, message: impl Into<String>) -> GraphError {
        GraphError::Config {
            location: self.at(node),
            message: message.into(),
        }
    }

    fn check_attrs(&mut self, node: Node, allowed: &[&str]) -> Result<()> {
        for attr in node.attributes() {
            if !allowed.contains(&attr.name()) {
                let message = format!(
                    "unknown attribute {:?} on <{}>",
                    attr.name(),
                    node.tag_name().name()
                );
                if self.strict {
                    return Err(self.config(node, message));
                }
                self.warnings.push(format!("{} ({})", message, self.at(node)));
            }
        }
        Ok(())
    }

    fn unknown_element(&mut self, node: Node) -> Result<()> {
        let message = format!("unknown element <{}>", node.tag_name().name());
        if self.strict {
            return Err(self.config(node, message));
        }
        self.warnings.push(format!("{} ({})", message, self.at(node)));
        Ok(())
    }

    fn required<'n>(&self, node: Node<'n, 'n>, name: &str) -> Result<&'n str> {
        node.attribute(name)
            .ok_or_else(|| self.config(node, format!("missing attribute {name:?}")))
    }

    fn required_f64(&self, node: Node, name: &str) -> Result<f64> {
        let raw = self.required(node, name)?;
        raw.parse::<f64>()
            .map_err(|_| self.config(node, format!("attribute {name:?} is not a number: {raw:?}")))
    }

    fn optional_f64(&self, node: Node, name: &str) -> Result<Option<f64>> {
        match node.attribute(name) {
            None => Ok(None),
            Some(raw) => raw.parse::<f64>().map(Some).map_err(|_| {
                self.config(node, format!("attribute {name:?} is not a number: {raw:?}"))
            }),
        }
    }

    fn required_usize(&self, node: Node, name: &str) -> Result<usize> {
        let v = self.required_f64(node, name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(self.config(node, format!("attribute {name:?} must be a nonnegative integer")));
        }
        Ok(v as usize)
    }

    fn optional_usize(&self, node: Node, name: &str) -> Result<Option<usize>> {
        match self.optional_f64(node, name)? {
            None => Ok(None),
            Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(Some(v as usize)),
            Some(_) => {
                Err(self.config(node, format!("attribute {name:?} must be a nonnegative integer")))
            }
        }
    }
}

/// Parse a standalone `<layout .../>` document (the same element a
/// `<pipeline>` embeds).
pub fn parse_layout_xml(
    text: &str,
) -> Result<(TransducerGeometry, echopipe_core::geometry::ScanlineLayout)> {
    let doc = Document::parse(text).map_err(|e| GraphError::Xml(format!("{e}")))?;
    let mut ctx = Ctx {
        doc: &doc,
        strict: true,
        warnings: Vec::new(),
    };
    let root = doc.root_element();
    if root.tag_name().name() != "layout" {
        return Err(ctx.config(root, "root element must be <layout>"));
    }
    parse_layout(&mut ctx, root)
}

pub(crate) fn parse_pipeline(text: &str, strict: bool) -> Result<(PipelineGraph, Vec<String>)> {
    let doc = Document::parse(text).map_err(|e| GraphError::Xml(format!("{e}")))?;
    let mut ctx = Ctx {
        doc: &doc,
        strict,
        warnings: Vec::new(),
    };

    let root = doc.root_element();
    if root.tag_name().name() != "pipeline" {
        return Err(ctx.config(root, "root element must be <pipeline>"));
    }
    ctx.check_attrs(root, &["queue_depth", "queue_policy"])?;
    let queue_depth = ctx.optional_usize(root, "queue_depth")?.unwrap_or(DEFAULT_QUEUE_DEPTH);
    if queue_depth == 0 {
        return Err(ctx.config(root, "queue_depth must be at least 1"));
    }
    let queue_policy = match root.attribute("queue_policy") {
        None | Some("block") => QueuePolicy::Block,
        Some("drop-oldest") => QueuePolicy::DropOldest,
        Some(other) => {
            return Err(ctx.config(root, format!("unknown queue_policy {other:?}")));
        }
    };

    let mut layout = None;
    let mut nodes: Vec<NodeSpec> = Vec::new();
    let mut edges_raw: Vec<(String, String, String)> = Vec::new();

    for child in root.children().filter(Node::is_element) {
        match child.tag_name().name() {
            "layout" => {
                if layout.is_some() {
                    return Err(ctx.config(child, "duplicate <layout> element"));
                }
                layout = Some(parse_layout(&mut ctx, child)?);
            }
            "node" => nodes.push(parse_node(&mut ctx, child)?),
            "edge" => {
                ctx.check_attrs(child, &["from", "to"])?;
                edges_raw.push((
                    ctx.required(child, "from")?.to_string(),
                    ctx.required(child, "to")?.to_string(),
                    ctx.at(child),
                ));
            }
            _ => ctx.unknown_element(child)?,
        }
    }

    let (geometry, layout) = layout.ok_or_else(|| {
        GraphError::Validation("pipeline requires a <layout> element".into())
    })?;

    // Identity and edge resolution.
    let mut index_of: HashMap<&str, usize> = HashMap::new();
    for (i, node) in nodes.iter().enumerate() {
        if index_of.insert(node.id.as_str(), i).is_some() {
            return Err(GraphError::Validation(format!(
                "duplicate node id {:?}",
                node.id
            )));
        }
    }
    let mut edges = Vec::with_capacity(edges_raw.len());
    for (from, to, location) in &edges_raw {
        let a = *index_of.get(from.as_str()).ok_or_else(|| GraphError::Config {
            location: location.clone(),
            message: format!("edge references unknown node {from:?}"),
        })?;
        let b = *index_of.get(to.as_str()).ok_or_else(|| GraphError::Config {
            location: location.clone(),
            message: format!("edge references unknown node {to:?}"),
        })?;
        edges.push((a, b));
    }

    let graph = PipelineGraph {
        geometry,
        layout: Arc::new(layout),
        nodes,
        edges,
        queue_depth,
        queue_policy,
    };
    validate(&graph)?;
    Ok((graph, ctx.warnings))
}

fn parse_layout(
    ctx: &mut Ctx,
    node: Node,
) -> Result<(TransducerGeometry, echopipe_core::geometry::ScanlineLayout)> {
    let kind = ctx.required(node, "kind")?;
    let sound_speed = ctx
        .optional_f64(node, "sound_speed_m_s")?
        .unwrap_or(DEFAULT_SPEED_OF_SOUND);
    let fs = ctx.required_f64(node, "sample_frequency_hz")?;
    let depth = ctx.required_f64(node, "depth_mm")?;
    let focus = ctx.required_f64(node, "focus_mm")?;
    let center = ctx.required_f64(node, "center_frequency_hz")?;
    let samples = match ctx.optional_usize(node, "samples_per_line")? {
        Some(s) => s,
        None => samples_for_depth(depth, fs, sound_speed),
    };

    match kind {
        "linear" => {
            ctx.check_attrs(
                node,
                &[
                    "kind",
                    "elements",
                    "pitch_mm",
                    "center_frequency_hz",
                    "lines",
                    "multiline",
                    "convention",
                    "active_elements",
                    "transmit_window",
                    "depth_mm",
                    "focus_mm",
                    "sample_frequency_hz",
                    "sound_speed_m_s",
                    "samples_per_line",
                ],
            )?;
            let elements = ctx.required_usize(node, "elements")?;
            let pitch = ctx.required_f64(node, "pitch_mm")?;
            let lines = ctx.required_usize(node, "lines")?;
            let multiline = ctx.optional_usize(node, "multiline")?.unwrap_or(1);
            let convention = match node.attribute("convention") {
                None | Some("interleaved") => MultilineConvention::Interleaved,
                Some("block") => MultilineConvention::Block,
                Some(other) => {
                    return Err(ctx.config(node, format!("unknown convention {other:?}")));
                }
            };
            let transmit_window = match node.attribute("transmit_window") {
                None => WindowKind::Hann,
                Some(name) => WindowKind::parse(name).ok_or_else(|| {
                    ctx.config(node, format!("unknown transmit_window {name:?}"))
                })?,
            };
            let geom = TransducerGeometry::linear(elements, pitch, center)
                .map_err(|e| ctx.config(node, format!("{e}")))?;
            let options = LinearLayoutOptions {
                convention,
                active_elements: ctx.optional_usize(node, "active_elements")?,
                transmit_window,
            };
            let layout = make_linear_layout_with(
                &geom, lines, multiline, depth, focus, samples, fs, sound_speed, &options,
            )
            .map_err(|e| ctx.config(node, format!("{e}")))?;
            Ok((geom, layout))
        }
        "phased" | "matrix-phased" => {
            ctx.check_attrs(
                node,
                &[
                    "kind",
                    "elements_x",
                    "elements_y",
                    "pitch_x_mm",
                    "pitch_y_mm",
                    "center_frequency_hz",
                    "lines_x",
                    "lines_y",
                    "fov_x_deg",
                    "fov_y_deg",
                    "depth_mm",
                    "focus_mm",
                    "sample_frequency_hz",
                    "sound_speed_m_s",
                    "samples_per_line",
                ],
            )?;
            let ex = ctx.required_usize(node, "elements_x")?;
            let ey = ctx.optional_usize(node, "elements_y")?.unwrap_or(1);
            let px = ctx.required_f64(node, "pitch_x_mm")?;
            let py = ctx.optional_f64(node, "pitch_y_mm")?.unwrap_or(px);
            let lines_x = ctx.required_usize(node, "lines_x")?;
            let lines_y = ctx.optional_usize(node, "lines_y")?.unwrap_or(1);
            let fov_x = ctx.required_f64(node, "fov_x_deg")?;
            let fov_y = ctx.optional_f64(node, "fov_y_deg")?.unwrap_or(0.0);
            let array_kind = if kind == "phased" {
                ArrayKind::Phased
            } else {
                ArrayKind::MatrixPhased
            };
            let geom = TransducerGeometry::new(ex, ey, px, py, center, array_kind)
                .map_err(|e| ctx.config(node, format!("{e}")))?;
            let layout = make_phased_layout(
                &geom, lines_x, lines_y, fov_x, fov_y, depth, focus, samples, fs, sound_speed,
            )
            .map_err(|e| ctx.config(node, format!("{e}")))?;
            Ok((geom, layout))
        }
        other => Err(ctx.config(node, format!("unknown layout kind {other:?}"))),
    }
}

fn parse_node(ctx: &mut Ctx, node: Node) -> Result<NodeSpec> {
    ctx.check_attrs(node, &["id", "kind"])?;
    let id = ctx.required(node, "id")?;
    let kind_name = ctx.required(node, "kind")?;
    let kind = NodeKind::parse(kind_name).ok_or_else(|| {
        ctx.config(
            node,
            format!("unknown node kind {kind_name:?} (node id {id:?})"),
        )
    })?;
    let mut spec = NodeSpec::new(id, kind);

    for child in node.children().filter(Node::is_element) {
        match child.tag_name().name() {
            "param" => {
                ctx.check_attrs(child, &["name", "value"])?;
                let name = ctx.required(child, "name")?;
                let raw = ctx.required(child, "value")?;
                let param_spec = spec.params.spec(name).ok_or_else(|| {
                    ctx.config(
                        child,
                        format!("node {id:?} ({kind_name}) has no parameter named {name:?}"),
                    )
                })?;
                let value = param_spec.parse(raw).ok_or_else(|| {
                    ctx.config(child, format!("cannot parse {raw:?} for parameter {name:?}"))
                })?;
                spec.params
                    .init(id, name, value)
                    .map_err(|e| ctx.config(child, format!("{e}")))?;
            }
            "band" if kind == NodeKind::Envelope => {
                ctx.check_attrs(child, &["center_hz", "bandwidth_hz", "weight"])?;
                spec.bands.push(Band {
                    center_hz: ctx.required_f64(child, "center_hz")?,
                    bandwidth_hz: ctx.required_f64(child, "bandwidth_hz")?,
                    weight: ctx.optional_f64(child, "weight")?.unwrap_or(1.0),
                });
            }
            "scatterer" if kind == NodeKind::SyntheticInput => {
                ctx.check_attrs(child, &["x", "y", "z", "reflectivity"])?;
                spec.scatterers.push(Scatterer {
                    position_mm: [
                        ctx.required_f64(child, "x")?,
                        ctx.required_f64(child, "y")?,
                        ctx.required_f64(child, "z")?,
                    ],
                    reflectivity: ctx.optional_f64(child, "reflectivity")?.unwrap_or(1.0),
                });
            }
            _ => ctx.unknown_element(child)?,
        }
    }
    Ok(spec)
}

/// Structural validation: unique ids (already enforced), acyclicity, edge
/// type compatibility, fan-in rules, and source/sink degree constraints.
fn validate(graph: &PipelineGraph) -> Result<()> {
    let n = graph.nodes.len();
    if n == 0 {
        return Err(GraphError::Validation("pipeline has no nodes".into()));
    }

    let mut in_degree = vec![0usize; n];
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (from, to) in &graph.edges {
        if from == to {
            return Err(GraphError::Validation(format!(
                "node {:?} feeds itself",
                graph.nodes[*from].id
            )));
        }
        in_degree[*to] += 1;
        adjacency[*from].push(*to);
    }

    for (i, node) in graph.nodes.iter().enumerate() {
        if node.kind.is_source() && in_degree[i] > 0 {
            return Err(GraphError::Validation(format!(
                "source node {:?} cannot have inbound edges",
                node.id
            )));
        }
        if node.kind.is_sink() && !adjacency[i].is_empty() {
            return Err(GraphError::Validation(format!(
                "sink node {:?} cannot have outbound edges",
                node.id
            )));
        }
        if in_degree[i] > 1 && !node.kind.accepts_fan_in() {
            return Err(GraphError::Validation(format!(
                "node {:?} ({}) does not accept fan-in",
                node.id,
                node.kind.name()
            )));
        }
    }

    // Type compatibility per edge.
    for (from, to) in &graph.edges {
        let producer = &graph.nodes[*from];
        let consumer = &graph.nodes[*to];
        let out = producer.output_kind().ok_or_else(|| {
            GraphError::Validation(format!(
                "node {:?} ({}) produces no output but has an outbound edge",
                producer.id,
                producer.kind.name()
            ))
        })?;
        if !consumer.input_kind().accepts(out) {
            return Err(GraphError::Validation(format!(
                "edge {:?} -> {:?} carries {} frames, which {} does not accept",
                producer.id,
                consumer.id,
                out.name(),
                consumer.kind.name()
            )));
        }
    }

    // Kahn's algorithm for cycle detection.
    let mut degree = in_degree.clone();
    let mut queue: Vec<usize> = (0..n).filter(|i| degree[*i] == 0).collect();
    let mut visited = 0usize;
    while let Some(i) = queue.pop() {
        visited += 1;
        for &next in &adjacency[i] {
            degree[next] -= 1;
            if degree[next] == 0 {
                queue.push(next);
            }
        }
    }
    if visited != n {
        let stuck: Vec<&str> = (0..n)
            .filter(|i| degree[*i] > 0)
            .map(|i| graph.nodes[i].id.as_str())
            .collect();
        return Err(GraphError::Validation(format!(
            "pipeline contains a cycle through nodes {stuck:?}"
        )));
    }
    Ok(())
}
