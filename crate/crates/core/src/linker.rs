//! Merges a host trace and a device trace into one dependency graph by
//! reconstructing control, data, and synchronization edges.

use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap as HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    CommAttrs, CorrelationMap, DeviceEventKind, DeviceTrace, HostOpKind, HostTrace, SyncKind,
    TensorRef,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Host,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkedKind {
    HostCall,
    HostLaunch,
    HostSync,
    Kernel,
    MemcpyH2d,
    MemcpyD2h,
    Comm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepType {
    Control,
    Data,
    Sync,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedNode {
    pub id: u64,
    pub origin: Origin,
    pub name: String,
    pub kind: LinkedKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ts: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dur: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<TensorRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<TensorRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comm: Option<CommAttrs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sync_kind: Option<SyncKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_id: Option<u64>,
    /// Launch op this device event was correlated to, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub launched_by: Option<u64>,
    /// Id in the original ingest, carried through canonical renumbering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orig_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: u64,
    pub dst: u64,
    pub dep_type: DepType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedGraph {
    pub rank: u64,
    pub num_ranks: u64,
    pub nodes: Vec<LinkedNode>,
    pub edges: Vec<Edge>,
}

impl LinkedGraph {
    pub fn node(&self, id: u64) -> Option<&LinkedNode> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LinkWarning {
    /// Two writers to one buffer with overlapping intervals.
    WriteWriteRace { buffer: (u64, u64), first: u64, second: u64 },
    /// Kernel launch with no correlated device event; kept as a host node.
    OrphanLaunch { op: u64 },
    /// Device event whose correlation matched no launch.
    OrphanDevice { correlation: u64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("UNMATCHED_EVENT_WAIT: wait on event {0} with no prior record")]
    UnmatchedEventWait(u64),
    #[error("RANK_MISMATCH: host rank {host} vs device rank {device}")]
    RankMismatch { host: u64, device: u64 },
    #[error("DUPLICATE_ID: host op id {0} is not unique")]
    DuplicateHostId(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutcome {
    pub graph: LinkedGraph,
    pub warnings: Vec<LinkWarning>,
}

/// Build the merged node table and the union of control, data, and sync
/// edges. Device events receive fresh ids above the largest host id.
pub fn link(
    host: &HostTrace,
    device: &DeviceTrace,
    cmap: &CorrelationMap,
) -> Result<LinkOutcome, LinkError> {
    if host.rank != device.rank {
        return Err(LinkError::RankMismatch { host: host.rank, device: device.rank });
    }
    let mut warnings = Vec::new();

    let mut seen = BTreeSet::new();
    for op in &host.ops {
        if !seen.insert(op.id) {
            return Err(LinkError::DuplicateHostId(op.id));
        }
    }

    let device_base = host.ops.iter().map(|o| o.id).max().unwrap_or(0) + 1;

    // rf_id → launch op, for ref inheritance.
    let launch_refs: HashMap<u64, (&Vec<TensorRef>, &Vec<TensorRef>)> = host
        .ops
        .iter()
        .filter(|o| o.kind == HostOpKind::KernelLaunch)
        .filter_map(|o| o.rf_id.map(|rf| (rf, (&o.inputs, &o.outputs))))
        .collect();
    let paired_launches: BTreeSet<u64> = cmap.pairs.values().map(|(op, _)| *op).collect();

    let mut nodes = Vec::with_capacity(host.ops.len() + device.events.len());
    for op in &host.ops {
        let kind = match op.kind {
            HostOpKind::Call => LinkedKind::HostCall,
            HostOpKind::KernelLaunch => LinkedKind::HostLaunch,
            HostOpKind::Sync => LinkedKind::HostSync,
        };
        // A launch with correlated device events is only a proxy; the
        // kernels inherit its buffer refs and do the actual touching.
        let proxied = op.kind == HostOpKind::KernelLaunch && paired_launches.contains(&op.id);
        nodes.push(LinkedNode {
            id: op.id,
            origin: Origin::Host,
            name: op.name.clone(),
            kind,
            stream: op.stream,
            ts: Some(op.ts),
            dur: Some(op.dur),
            inputs: if proxied { Vec::new() } else { op.inputs.clone() },
            outputs: if proxied { Vec::new() } else { op.outputs.clone() },
            comm: None,
            parent: op.parent,
            sync_kind: op.sync_kind,
            event_id: op.event_id,
            launched_by: None,
            orig_id: None,
        });
    }

    for (idx, ev) in device.events.iter().enumerate() {
        let kind = match ev.kind {
            DeviceEventKind::Kernel => LinkedKind::Kernel,
            DeviceEventKind::MemcpyH2d => LinkedKind::MemcpyH2d,
            DeviceEventKind::MemcpyD2h => LinkedKind::MemcpyD2h,
            DeviceEventKind::Comm => LinkedKind::Comm,
        };
        let (inputs, outputs) = match launch_refs.get(&ev.correlation) {
            Some((i, o)) => ((*i).clone(), (*o).clone()),
            None => (Vec::new(), Vec::new()),
        };
        let launched_by = cmap.pairs.get(&ev.correlation).map(|(op, _)| *op);
        if launched_by.is_none() {
            warnings.push(LinkWarning::OrphanDevice { correlation: ev.correlation });
        }
        nodes.push(LinkedNode {
            id: device_base + idx as u64,
            origin: Origin::Device,
            name: ev.name.clone(),
            kind,
            stream: Some(ev.stream),
            ts: Some(ev.ts),
            dur: Some(ev.dur),
            inputs,
            outputs,
            comm: ev.comm.clone(),
            parent: None,
            sync_kind: None,
            event_id: None,
            launched_by,
            orig_id: None,
        });
    }
    for op in &cmap.orphans_host {
        warnings.push(LinkWarning::OrphanLaunch { op: *op });
    }

    let mut graph = LinkedGraph { rank: host.rank, num_ranks: host.rank + 1, nodes, edges: Vec::new() };

    let mut edges: BTreeSet<Edge> = BTreeSet::new();
    edges.extend(build_control_edges(&graph));
    let (data_edges, mut data_warnings) = build_data_edges(&graph);
    edges.extend(data_edges);
    warnings.append(&mut data_warnings);
    edges.extend(build_sync_edges(&graph)?);
    edges.retain(|e| e.src != e.dst);
    graph.edges = edges.into_iter().collect();

    Ok(LinkOutcome { graph, warnings })
}

/// Call-stack parent→child edges plus launch→kernel (CPU→GPU) edges.
/// Device→host completion edges are realized by the sync builder.
pub fn build_control_edges(graph: &LinkedGraph) -> Vec<Edge> {
    let mut edges = Vec::new();
    for n in &graph.nodes {
        if let Some(parent) = n.parent {
            edges.push(Edge { src: parent, dst: n.id, dep_type: DepType::Control });
        }
        if let Some(launch) = n.launched_by {
            edges.push(Edge { src: launch, dst: n.id, dep_type: DepType::Control });
        }
    }
    edges
}

/// Timestamp ordering key; ties break by (origin, id) so linking is
/// deterministic without claiming physical meaning.
fn ts_key(n: &LinkedNode) -> (u64, Origin, u64) {
    (n.ts.unwrap_or(0), n.origin, n.id)
}

/// Producer→consumer edges over (storage_id, storage_offset) buffer keys,
/// plus intra-stream chaining of device events.
pub fn build_data_edges(graph: &LinkedGraph) -> (Vec<Edge>, Vec<LinkWarning>) {
    let mut edges = Vec::new();
    let mut warnings = Vec::new();

    // Accesses per buffer, in time order. A node that both reads and writes
    // a buffer reads the previous version first.
    #[derive(Clone, Copy)]
    struct Access {
        key: (u64, Origin, u64),
        node: u64,
        end: u64,
        write: bool,
    }
    let mut by_buffer: BTreeMap<(u64, u64), Vec<Access>> = BTreeMap::new();
    for n in &graph.nodes {
        let end = n.ts.unwrap_or(0) + n.dur.unwrap_or(0);
        for r in &n.inputs {
            by_buffer.entry(r.buffer_key()).or_default().push(Access {
                key: ts_key(n),
                node: n.id,
                end,
                write: false,
            });
        }
        for r in &n.outputs {
            by_buffer.entry(r.buffer_key()).or_default().push(Access {
                key: ts_key(n),
                node: n.id,
                end,
                write: true,
            });
        }
    }
    for (buf, mut accesses) in by_buffer {
        accesses.sort_by_key(|a| (a.key, a.write));
        let mut last_writer: Option<Access> = None;
        for a in &accesses {
            if a.write {
                if let Some(w) = last_writer {
                    if w.node != a.node && a.key.0 < w.end {
                        warnings.push(LinkWarning::WriteWriteRace {
                            buffer: buf,
                            first: w.node,
                            second: a.node,
                        });
                    }
                }
                if last_writer.map(|w| w.node) != Some(a.node) {
                    last_writer = Some(*a);
                }
            } else if let Some(w) = last_writer {
                if w.node != a.node {
                    edges.push(Edge { src: w.node, dst: a.node, dep_type: DepType::Data });
                }
            }
        }
    }

    // Intra-stream chain: device events on one stream form a path.
    let mut streams: BTreeMap<u32, Vec<&LinkedNode>> = BTreeMap::new();
    for n in &graph.nodes {
        if n.origin == Origin::Device {
            streams.entry(n.stream.unwrap_or(0)).or_default().push(n);
        }
    }
    for (_, mut evs) in streams {
        evs.sort_by_key(|n| ts_key(n));
        for pair in evs.windows(2) {
            edges.push(Edge { src: pair[0].id, dst: pair[1].id, dep_type: DepType::Data });
        }
    }

    (edges, warnings)
}

/// Device/stream sync and event record/wait edges.
pub fn build_sync_edges(graph: &LinkedGraph) -> Result<Vec<Edge>, LinkError> {
    let mut edges = Vec::new();

    let mut streams: BTreeMap<u32, Vec<&LinkedNode>> = BTreeMap::new();
    for n in &graph.nodes {
        if n.origin == Origin::Device {
            streams.entry(n.stream.unwrap_or(0)).or_default().push(n);
        }
    }
    for evs in streams.values_mut() {
        evs.sort_by_key(|n| ts_key(n));
    }
    let last_before = |stream: u32, ts: u64| -> Option<u64> {
        streams
            .get(&stream)?
            .iter()
            .take_while(|e| e.ts.unwrap_or(0) < ts)
            .last()
            .map(|e| e.id)
    };
    let first_at_or_after = |stream: u32, ts: u64| -> Option<u64> {
        streams
            .get(&stream)?
            .iter()
            .find(|e| e.ts.unwrap_or(0) >= ts)
            .map(|e| e.id)
    };

    let mut sync_ops: Vec<&LinkedNode> = graph
        .nodes
        .iter()
        .filter(|n| n.kind == LinkedKind::HostSync)
        .collect();
    sync_ops.sort_by_key(|n| ts_key(n));

    // Event registry: event id → device event captured at record time.
    // Record/wait pairs must be processed in timestamp order.
    let mut recorded: HashMap<u64, Option<u64>> = HashMap::default();
    for s in sync_ops {
        let ts = s.ts.unwrap_or(0);
        match s.sync_kind {
            Some(SyncKind::Device) => {
                for &stream in streams.keys().collect::<Vec<_>>() {
                    if let Some(src) = last_before(stream, ts) {
                        edges.push(Edge { src, dst: s.id, dep_type: DepType::Sync });
                    }
                }
            }
            Some(SyncKind::Stream) => {
                if let Some(src) = last_before(s.stream.unwrap_or(0), ts) {
                    edges.push(Edge { src, dst: s.id, dep_type: DepType::Sync });
                }
            }
            Some(SyncKind::EventRecord) => {
                let captured = last_before(s.stream.unwrap_or(0), ts);
                recorded.insert(s.event_id.unwrap_or(0), captured);
            }
            Some(SyncKind::EventWait) => {
                let event = s.event_id.unwrap_or(0);
                match recorded.get(&event) {
                    None => return Err(LinkError::UnmatchedEventWait(event)),
                    Some(None) => {} // record captured nothing; no constraint
                    Some(Some(src)) => {
                        if let Some(dst) = first_at_or_after(s.stream.unwrap_or(0), ts) {
                            edges.push(Edge { src: *src, dst, dep_type: DepType::Sync });
                        }
                    }
                }
            }
            None => {}
        }
    }
    Ok(edges)
}
