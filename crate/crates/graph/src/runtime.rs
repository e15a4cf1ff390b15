//! Worker execution: one thread per node, bounded channels per edge.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TrySendError};
use echopipe_core::metrics::StageTimings;

use crate::nodes::{NodeContext, NodeKind, Processor};
use crate::params::{ParamTable, ParamValue, SetOutcome};
use crate::payload::FramePayload;
use crate::xml::QueuePolicy;
use crate::{ExecutionState, GraphError, PipelineGraph, Result};

/// Timing record of one node over a run.
#[derive(Debug, Clone)]
pub struct NodeTiming {
    pub id: String,
    pub kind: NodeKind,
    pub frames: u64,
    /// Seconds spent inside the node's processing call, one entry per
    /// frame; queue wait is excluded.
    pub seconds: Vec<f64>,
}

/// Outcome of a pipeline run: per-node frame counts and processing times,
/// plus the wall clock of the whole run. Node times do not sum to the
/// wall clock when stages overlap; both are reported.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub nodes: Vec<NodeTiming>,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn node(&self, id: &str) -> Option<&NodeTiming> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Processing-stage samples in the shape the timing-statistics
    /// reduction expects, one entry per core pipeline stage present.
    pub fn stage_timings(&self) -> Vec<StageTimings> {
        self.nodes
            .iter()
            .filter_map(|n| {
                n.kind.stage_label().map(|label| StageTimings {
                    stage: label.to_string(),
                    seconds: n.seconds.clone(),
                })
            })
            .collect()
    }
}

/// Handle for changing node parameters, including while the graph runs.
/// Values are validated against the declared ranges; accepted values take
/// effect atomically at the next frame boundary.
#[derive(Clone)]
pub struct GraphController {
    tables: HashMap<String, Arc<ParamTable>>,
}

impl GraphController {
    pub fn set_parameter(
        &self,
        node_id: &str,
        name: &str,
        value: ParamValue,
    ) -> Result<SetOutcome> {
        let table = self.tables.get(node_id).ok_or_else(|| {
            GraphError::Validation(format!("no node named {node_id:?}"))
        })?;
        table.set(node_id, name, value)
    }
}

enum Inbox {
    /// Source nodes have no input.
    None,
    Queue {
        rx: Receiver<FramePayload>,
        // Senders are created lazily per inbound edge and handed to the
        // producers; this keeps one clone so drop-oldest producers can
        // also pop (crossbeam channels are MPMC).
        _keep_alive: (),
    },
}

struct Worker {
    index: usize,
    id: String,
    kind: NodeKind,
    processor: Processor,
    params: Arc<ParamTable>,
    inbox: Inbox,
    outputs: Vec<Output>,
}

#[derive(Clone)]
struct Output {
    tx: Sender<FramePayload>,
    /// Receiver clone of the consumer's inbox, used to discard the oldest
    /// frame under the drop-oldest policy.
    rx: Option<Receiver<FramePayload>>,
}

struct WorkerResult {
    index: usize,
    frames: u64,
    seconds: Vec<f64>,
    error: Option<GraphError>,
}

/// Owns the spawned pipeline. Frames flow during [`Runner::run`].
pub struct Runner {
    workers: Vec<Worker>,
    context: Arc<NodeContext>,
    node_ids: Vec<(String, NodeKind)>,
    controller: GraphController,
    policy: QueuePolicy,
    state: Arc<AtomicU8>,
}

impl Runner {
    pub fn new(graph: PipelineGraph) -> Result<Self> {
        let context = Arc::new(NodeContext {
            layout: graph.layout.clone(),
            geometry: Arc::new(graph.geometry.clone()),
        });

        // One inbox per node with at least one inbound edge.
        let n = graph.nodes.len();
        let mut inboxes: Vec<Option<(Sender<FramePayload>, Receiver<FramePayload>)>> =
            (0..n).map(|_| None).collect();
        for (_, to) in &graph.edges {
            if inboxes[*to].is_none() {
                inboxes[*to] = Some(bounded(graph.queue_depth));
            }
        }

        let mut outputs: Vec<Vec<Output>> = (0..n).map(|_| Vec::new()).collect();
        for (from, to) in &graph.edges {
            let (tx, rx) = inboxes[*to].as_ref().unwrap();
            outputs[*from].push(Output {
                tx: tx.clone(),
                rx: match graph.queue_policy {
                    QueuePolicy::DropOldest => Some(rx.clone()),
                    QueuePolicy::Block => None,
                },
            });
        }

        let mut workers = Vec::with_capacity(n);
        let mut tables = HashMap::new();
        let mut node_ids = Vec::with_capacity(n);
        for (i, spec) in graph.nodes.iter().enumerate() {
            let processor = Processor::build(spec, &context)?;
            tables.insert(spec.id.clone(), spec.params.clone());
            node_ids.push((spec.id.clone(), spec.kind));
            workers.push(Worker {
                index: i,
                id: spec.id.clone(),
                kind: spec.kind,
                processor,
                params: spec.params.clone(),
                inbox: match inboxes[i].take() {
                    Some((_tx, rx)) => {
                        // The sender clones live in the producers' output
                        // lists; dropping the original here lets the
                        // channel close when all producers finish.
                        Inbox::Queue { rx, _keep_alive: () }
                    }
                    None => Inbox::None,
                },
                outputs: outputs[i].drain(..).collect(),
            });
        }

        Ok(Self {
            workers,
            context,
            node_ids,
            controller: GraphController { tables },
            policy: graph.queue_policy,
            state: Arc::new(AtomicU8::new(0)),
        })
    }

    pub fn controller(&self) -> GraphController {
        self.controller.clone()
    }

    pub fn state(&self) -> ExecutionState {
        match self.state.load(Ordering::SeqCst) {
            0 => ExecutionState::Idle,
            1 => ExecutionState::Running,
            _ => ExecutionState::Stopped,
        }
    }

    /// Attach an observer channel to a node's output. The tap is
    /// unbounded so observers never apply back-pressure.
    pub fn tap(&mut self, node_id: &str) -> Result<Receiver<FramePayload>> {
        let worker = self
            .workers
            .iter_mut()
            .find(|w| w.id == node_id)
            .ok_or_else(|| GraphError::Validation(format!("no node named {node_id:?}")))?;
        if worker.kind.is_sink() {
            return Err(GraphError::Validation(format!(
                "node {node_id:?} is a sink and has no output to tap"
            )));
        }
        let (tx, rx) = unbounded();
        worker.outputs.push(Output { tx, rx: None });
        Ok(rx)
    }

    /// Run the pipeline: sources emit up to `frame_budget` frames (their
    /// own frame count when `None`), every node processes frames in
    /// arrival order, and the call returns when all queues have drained.
    pub fn run(self, frame_budget: Option<u64>) -> Result<RunReport> {
        let state = self.state.clone();
        state.store(1, Ordering::SeqCst);
        let policy = self.policy;
        let context = self.context.clone();
        let started = Instant::now();

        let mut handles = Vec::with_capacity(self.workers.len());
        for worker in self.workers {
            let ctx = context.clone();
            handles.push(std::thread::spawn(move || {
                run_worker(worker, frame_budget, policy, &ctx)
            }));
        }

        let mut results: Vec<WorkerResult> = Vec::with_capacity(handles.len());
        for handle in handles {
            match handle.join() {
                Ok(result) => results.push(result),
                Err(_) => {
                    state.store(2, Ordering::SeqCst);
                    return Err(GraphError::Validation("a node worker panicked".into()));
                }
            }
        }
        let wall_clock_s = started.elapsed().as_secs_f64();
        state.store(2, Ordering::SeqCst);

        results.sort_by_key(|r| r.index);
        if let Some(result) = results.iter_mut().find(|r| r.error.is_some()) {
            return Err(result.error.take().unwrap());
        }

        let nodes = results
            .into_iter()
            .zip(self.node_ids)
            .map(|(r, (id, kind))| NodeTiming {
                id,
                kind,
                frames: r.frames,
                seconds: r.seconds,
            })
            .collect();
        Ok(RunReport {
            nodes,
            wall_clock_s,
        })
    }
}

fn run_worker(
    mut worker: Worker,
    frame_budget: Option<u64>,
    policy: QueuePolicy,
    ctx: &NodeContext,
) -> WorkerResult {
    let mut seconds = Vec::new();
    let mut frames = 0u64;
    let mut error = None;

    match &worker.inbox {
        Inbox::None => {
            // Source: emit frames until the budget or the node's own
            // frame count is exhausted.
            let snapshot = worker.params.snapshot();
            let own = worker.processor.source_frames(&snapshot).unwrap_or(0);
            let total = frame_budget.map_or(own, |b| b.min(own));
            for i in 0..total {
                let snapshot = worker.params.snapshot();
                let begin = Instant::now();
                match worker
                    .processor
                    .generate(&worker.id, i, &snapshot, ctx)
                {
                    Ok(payload) => {
                        seconds.push(begin.elapsed().as_secs_f64());
                        frames += 1;
                        if !send_all(&worker.outputs, payload, policy) {
                            break;
                        }
                    }
                    Err(e) => {
                        error = Some(promote(e, &worker.id, i));
                        break;
                    }
                }
            }
        }
        Inbox::Queue { rx, .. } => {
            let rx = rx.clone();
            while let Ok(payload) = rx.recv() {
                // Parameter changes apply here, between frames: the
                // snapshot is one consistent tuple for this frame.
                let snapshot = worker.params.snapshot();
                let begin = Instant::now();
                match worker.processor.process(&worker.id, &payload, &snapshot, ctx) {
                    Ok(output) => {
                        seconds.push(begin.elapsed().as_secs_f64());
                        frames += 1;
                        if let Some(out) = output {
                            if !send_all(&worker.outputs, out, policy) {
                                break;
                            }
                        }
                    }
                    Err(e) => {
                        error = Some(promote(e, &worker.id, payload.timestamp_ns()));
                        break;
                    }
                }
            }
            if error.is_none() {
                if let Err(e) = worker.processor.finish(&worker.id) {
                    error = Some(promote(e, &worker.id, 0));
                }
            }
        }
    }

    WorkerResult {
        index: worker.index,
        frames,
        seconds,
        error,
    }
}

/// Abort the run with the offending frame's timestamp attached.
fn promote(e: GraphError, node: &str, timestamp_ns: u64) -> GraphError {
    match e {
        GraphError::Runtime { .. } => e,
        other => GraphError::Runtime {
            node: node.to_string(),
            timestamp_ns,
            message: format!("{other}"),
        },
    }
}

/// Fan the payload out to all consumers; clones share the allocation.
/// Returns false when every consumer is gone.
fn send_all(outputs: &[Output], payload: FramePayload, policy: QueuePolicy) -> bool {
    if outputs.is_empty() {
        return true;
    }
    let mut delivered = false;
    for output in outputs {
        let mut message = payload.clone();
        match policy {
            QueuePolicy::Block => {
                if output.tx.send(message).is_ok() {
                    delivered = true;
                }
            }
            QueuePolicy::DropOldest => loop {
                match output.tx.try_send(message) {
                    Ok(()) => {
                        delivered = true;
                        break;
                    }
                    Err(TrySendError::Full(back)) => {
                        message = back;
                        if let Some(rx) = &output.rx {
                            let _ = rx.try_recv();
                        } else {
                            std::thread::yield_now();
                        }
                    }
                    Err(TrySendError::Disconnected(_)) => break,
                }
            },
        }
    }
    delivered
}
