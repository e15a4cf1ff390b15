//! Dataflow-graph runtime for the ultrasound processing chain.
//!
//! Processing steps are nodes on a directed acyclic graph, each running on
//! its own worker thread. Edges are bounded FIFO channels carrying shared
//! handles to immutable frames — passing a frame along an edge never
//! copies the payload, and fanning one output to several consumers shares
//! a single allocation. Parameters carry declared ranges, can be changed
//! while the graph runs, and apply atomically at frame boundaries.
//!
//! Pipelines are described in XML, so the graph shape is pure data: nodes
//! can be added, removed or exchanged without recompiling anything.

mod nodes;
mod params;
mod payload;
mod runtime;
mod xml;

pub use nodes::{NodeKind, NodeSpec};
pub use params::{ParamKind, ParamValue, ParameterSpec, SetOutcome};
pub use payload::{payloads_minted, FramePayload, PayloadData, PayloadKind};
pub use runtime::{GraphController, NodeTiming, RunReport, Runner};
pub use xml::{parse_layout_xml, QueuePolicy};

use echopipe_core::geometry::{ScanlineLayout, TransducerGeometry};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("XML error: {0}")]
    Xml(String),
    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("node {node}: {source}")]
    Node {
        node: String,
        #[source]
        source: echopipe_core::Error,
    },
    #[error("runtime error in node {node} at frame timestamp {timestamp_ns} ns: {message}")]
    Runtime {
        node: String,
        timestamp_ns: u64,
        message: String,
    },
}

impl GraphError {
    /// True for errors in the pipeline description (as opposed to
    /// failures while frames were flowing).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            GraphError::Xml(_) | GraphError::Config { .. } | GraphError::Validation(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Execution state of a pipeline graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionState {
    Idle,
    Running,
    Stopped,
}

/// A validated pipeline: acquisition layout, node specs with their
/// parameter tables, and the edge list. Construction is data-driven from
/// XML; see [`PipelineGraph::from_xml`].
#[derive(Debug)]
pub struct PipelineGraph {
    pub(crate) geometry: TransducerGeometry,
    pub(crate) layout: std::sync::Arc<ScanlineLayout>,
    pub(crate) nodes: Vec<NodeSpec>,
    pub(crate) edges: Vec<(usize, usize)>,
    pub(crate) queue_depth: usize,
    pub(crate) queue_policy: QueuePolicy,
}

impl PipelineGraph {
    /// Parse and validate a pipeline from XML, rejecting unknown elements
    /// and attributes (strict mode).
    pub fn from_xml(text: &str) -> Result<Self> {
        let (graph, warnings) = xml::parse_pipeline(text, true)?;
        debug_assert!(warnings.is_empty());
        Ok(graph)
    }

    /// Like [`PipelineGraph::from_xml`] but unknown attributes only
    /// produce warnings.
    pub fn from_xml_lenient(text: &str) -> Result<(Self, Vec<String>)> {
        xml::parse_pipeline(text, false)
    }

    pub fn layout(&self) -> &ScanlineLayout {
        &self.layout
    }

    pub fn geometry(&self) -> &TransducerGeometry {
        &self.geometry
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.id.as_str())
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    /// Same pipeline with the linear layout rebuilt for a different
    /// transmit-line count and multiline factor. Node parameter tables
    /// are shared with the original.
    pub fn with_linear_config(&self, lines: usize, multiline: usize) -> Result<Self> {
        use echopipe_core::geometry::{
            make_linear_layout_with, samples_for_depth, LayoutKind, LinearLayoutOptions,
        };
        if !matches!(self.layout.kind, LayoutKind::Linear) {
            return Err(GraphError::Validation(
                "scanline configuration override requires a linear layout".into(),
            ));
        }
        let old = &self.layout;
        let reference = &old.scanlines[0];
        let samples = samples_for_depth(
            reference.max_depth_mm,
            old.sample_frequency_hz,
            old.speed_of_sound_m_s,
        )
        .max(old.samples_per_line);
        let options = LinearLayoutOptions {
            convention: old.convention,
            ..Default::default()
        };
        let layout = make_linear_layout_with(
            &self.geometry,
            lines,
            multiline,
            reference.max_depth_mm,
            reference.transmit_focus_depth_mm,
            samples,
            old.sample_frequency_hz,
            old.speed_of_sound_m_s,
            &options,
        )
        .map_err(|e| GraphError::Node {
            node: "<layout>".into(),
            source: e,
        })?;
        Ok(PipelineGraph {
            geometry: self.geometry.clone(),
            layout: std::sync::Arc::new(layout),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            queue_depth: self.queue_depth,
            queue_policy: self.queue_policy,
        })
    }

    /// Spawn the workers for this graph. The runner owns the threads;
    /// frames start flowing on [`Runner::run`].
    pub fn runner(self) -> Result<Runner> {
        Runner::new(self)
    }
}
