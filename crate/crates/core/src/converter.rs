//! Verifies the linked graph (acyclicity, pruning, consistency) and emits a
//! canonical execution trace with typed nodes.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rustc_hash::FxHashMap as HashMap;

use serde_json::{json, Value};
use thiserror::Error;

use crate::ingest::{CommAttrs, Direction, TensorRef};
use crate::linker::{DepType, Edge, LinkedGraph, LinkedKind, LinkedNode, Origin};
use crate::schema::{
    AttrMap, CommType, ExecutionTrace, NodeType, ProcessGroup, StorageDesc, TensorDesc,
};

#[derive(Debug, Clone)]
pub struct ConvertOptions {
    pub full_transitive_reduction: bool,
    pub reduction_node_limit: usize,
    pub keep_host_ops: bool,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        ConvertOptions {
            full_transitive_reduction: false,
            reduction_node_limit: 50_000,
            keep_host_ops: true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConvertError {
    #[error("CYCLE_DETECTED: {0:?}")]
    CycleDetected(Vec<u64>),
    #[error("UNKNOWN_GROUP: comm node {node} references absent group {group}")]
    UnknownGroup { node: u64, group: u64 },
    #[error("GRAPH_TOO_LARGE_FOR_REDUCTION: {nodes} nodes exceeds limit {limit}")]
    GraphTooLargeForReduction { nodes: usize, limit: usize },
    #[error("MISSING_DIRECTION: point-to-point comm node {0} has no direction attr")]
    MissingDirection(u64),
}

/// Returns one witness cycle if the graph has any, else `None`. Iterative;
/// safe on million-node graphs.
pub fn detect_cycle(graph: &LinkedGraph) -> Option<Vec<u64>> {
    let index: HashMap<u64, usize> =
        graph.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let n = graph.nodes.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for e in &graph.edges {
        let (Some(&s), Some(&d)) = (index.get(&e.src), index.get(&e.dst)) else { continue };
        succ[s].push(d);
        indeg[d] += 1;
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0usize;
    while let Some(u) = queue.pop() {
        seen += 1;
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push(v);
            }
        }
    }
    if seen == n {
        return None;
    }
    // The residual subgraph (indeg > 0) holds every cycle plus anything
    // downstream of one; trim residual sinks until only cycle nodes (and
    // nodes feeding back into them) remain, then walk until a repeat.
    let mut residual: Vec<bool> = indeg.iter().map(|&d| d > 0).collect();
    let mut outdeg = vec![0usize; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for u in 0..n {
        if !residual[u] {
            continue;
        }
        for &v in &succ[u] {
            if residual[v] {
                outdeg[u] += 1;
                preds[v].push(u);
            }
        }
    }
    let mut trim: Vec<usize> = (0..n).filter(|&i| residual[i] && outdeg[i] == 0).collect();
    while let Some(u) = trim.pop() {
        residual[u] = false;
        for &p in &preds[u] {
            if residual[p] {
                outdeg[p] -= 1;
                if outdeg[p] == 0 {
                    trim.push(p);
                }
            }
        }
    }
    let start = (0..n).find(|&i| residual[i]).expect("residual node exists");
    let mut pos: HashMap<usize, usize> = HashMap::default();
    let mut path = Vec::new();
    let mut cur = start;
    loop {
        if let Some(&at) = pos.get(&cur) {
            return Some(path[at..].iter().map(|&i: &usize| graph.nodes[i].id).collect());
        }
        pos.insert(cur, path.len());
        path.push(cur);
        cur = *succ[cur]
            .iter()
            .find(|&&v| residual[v])
            .expect("trimmed residual nodes keep a residual successor");
    }
}

fn dep_strength(d: DepType) -> u8 {
    match d {
        DepType::Data => 2,
        DepType::Sync => 1,
        DepType::Control => 0,
    }
}

/// Removes exact duplicates, collapses parallel edges to the strongest
/// dependency type, drops edges already implied by same-stream chains, and
/// optionally computes the full transitive reduction.
pub fn prune_redundant_edges(
    graph: &LinkedGraph,
    opts: &ConvertOptions,
) -> Result<LinkedGraph, ConvertError> {
    let mut out = graph.clone();

    // (a) + (b): one edge per (src, dst), keeping the strongest type.
    let mut strongest: BTreeMap<(u64, u64), DepType> = BTreeMap::new();
    for e in &out.edges {
        strongest
            .entry((e.src, e.dst))
            .and_modify(|t| {
                if dep_strength(e.dep_type) > dep_strength(*t) {
                    *t = e.dep_type;
                }
            })
            .or_insert(e.dep_type);
    }

    // (c) same-stream implied edges: if u and v are device events on one
    // stream with the full consecutive chain present between them, a direct
    // u→v edge adds nothing.
    let mut streams: BTreeMap<u32, Vec<&LinkedNode>> = BTreeMap::new();
    for n in &out.nodes {
        if n.origin == Origin::Device {
            streams.entry(n.stream.unwrap_or(0)).or_default().push(n);
        }
    }
    let mut stream_pos: HashMap<u64, (u32, usize)> = HashMap::default();
    for (s, evs) in streams.iter_mut() {
        evs.sort_by_key(|n| (n.ts.unwrap_or(0), n.id));
        for (i, ev) in evs.iter().enumerate() {
            stream_pos.insert(ev.id, (*s, i));
        }
    }
    let keys: Vec<(u64, u64)> = strongest.keys().copied().collect();
    for (src, dst) in keys {
        let (Some(&(s1, p1)), Some(&(s2, p2))) = (stream_pos.get(&src), stream_pos.get(&dst))
        else {
            continue;
        };
        if s1 != s2 || p2 <= p1 + 1 {
            continue;
        }
        let chain = &streams[&s1];
        let chained = (p1..p2).all(|i| strongest.contains_key(&(chain[i].id, chain[i + 1].id)));
        if chained {
            strongest.remove(&(src, dst));
        }
    }

    // (d) full transitive reduction, opt-in and size-gated.
    if opts.full_transitive_reduction {
        if out.nodes.len() > opts.reduction_node_limit {
            return Err(ConvertError::GraphTooLargeForReduction {
                nodes: out.nodes.len(),
                limit: opts.reduction_node_limit,
            });
        }
        let index: HashMap<u64, usize> =
            out.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let n = out.nodes.len();
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (s, d) in strongest.keys() {
            succ[index[s]].push(index[d]);
        }
        let mut removable: Vec<(u64, u64)> = Vec::new();
        let mut mark = vec![u32::MAX; n];
        for (u, node) in out.nodes.iter().enumerate() {
            // Nodes reachable through ≥2 edges from u.
            let stamp = u as u32;
            for &c in &succ[u] {
                let mut stack: Vec<usize> = succ[c].to_vec();
                while let Some(x) = stack.pop() {
                    if mark[x] == stamp {
                        continue;
                    }
                    mark[x] = stamp;
                    stack.extend(succ[x].iter().copied());
                }
            }
            for &c in &succ[u] {
                if mark[c] == stamp {
                    removable.push((node.id, out.nodes[c].id));
                }
            }
        }
        for key in removable {
            strongest.remove(&key);
        }
    }

    out.edges = strongest
        .into_iter()
        .map(|((src, dst), dep_type)| Edge { src, dst, dep_type })
        .collect();
    Ok(out)
}

fn kind_to_node_type(kind: LinkedKind) -> NodeType {
    match kind {
        LinkedKind::HostCall | LinkedKind::HostLaunch | LinkedKind::HostSync | LinkedKind::Kernel => {
            NodeType::Comp
        }
        LinkedKind::MemcpyH2d => NodeType::MemLoad,
        LinkedKind::MemcpyD2h => NodeType::MemStore,
        LinkedKind::Comm => NodeType::Comp, // refined by comm attrs below
    }
}

fn comm_node_type(node_id: u64, comm: &CommAttrs) -> Result<NodeType, ConvertError> {
    if comm.comm_type == CommType::PointToPoint {
        match comm.direction {
            Some(Direction::Send) => Ok(NodeType::CommSend),
            Some(Direction::Recv) => Ok(NodeType::CommRecv),
            None => Err(ConvertError::MissingDirection(node_id)),
        }
    } else {
        Ok(NodeType::CommColl)
    }
}

/// Contract away host-origin nodes, bridging predecessors to successors so
/// device-only reachability is preserved.
fn drop_host_ops(graph: &LinkedGraph) -> LinkedGraph {
    let mut out = graph.clone();
    let host_ids: BTreeSet<u64> = out
        .nodes
        .iter()
        .filter(|n| n.origin == Origin::Host)
        .map(|n| n.id)
        .collect();
    for &h in &host_ids {
        let preds: Vec<Edge> = out.edges.iter().filter(|e| e.dst == h).cloned().collect();
        let succs: Vec<Edge> = out.edges.iter().filter(|e| e.src == h).cloned().collect();
        out.edges.retain(|e| e.src != h && e.dst != h);
        for p in &preds {
            for s in &succs {
                if p.src != s.dst {
                    let dep_type = if dep_strength(p.dep_type) > dep_strength(s.dep_type) {
                        p.dep_type
                    } else {
                        s.dep_type
                    };
                    out.edges.push(Edge { src: p.src, dst: s.dst, dep_type });
                }
            }
        }
    }
    out.nodes.retain(|n| n.origin != Origin::Host);
    out
}

/// Emit a canonical trace: typed nodes, data deps from data edges, control
/// deps from control and sync edges (sync provenance preserved in attrs),
/// node ids renumbered 1..N in deterministic topological order.
pub fn convert(
    graph: &LinkedGraph,
    groups: &[ProcessGroup],
    opts: &ConvertOptions,
) -> Result<ExecutionTrace, ConvertError> {
    if let Some(witness) = detect_cycle(graph) {
        return Err(ConvertError::CycleDetected(witness));
    }
    let pruned = prune_redundant_edges(graph, opts)?;
    let pruned = if opts.keep_host_ops { pruned } else { drop_host_ops(&pruned) };

    let group_ids: BTreeSet<u64> = groups.iter().map(|g| g.id).collect();
    for n in &pruned.nodes {
        if let Some(comm) = &n.comm {
            if let Some(g) = comm.comm_group {
                if !group_ids.contains(&g) {
                    return Err(ConvertError::UnknownGroup { node: n.id, group: g });
                }
            }
        }
    }

    // Kahn with a min-heap on original id: the unique lexicographically
    // smallest topological order, so renumbering is stable.
    let index: HashMap<u64, usize> =
        pruned.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let n = pruned.nodes.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for e in &pruned.edges {
        succ[index[&e.src]].push(index[&e.dst]);
        indeg[index[&e.dst]] += 1;
    }
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = (0..n)
        .filter(|&i| indeg[i] == 0)
        .map(|i| Reverse((pruned.nodes[i].id, i)))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((_, u))) = heap.pop() {
        order.push(u);
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                heap.push(Reverse((pruned.nodes[v].id, v)));
            }
        }
    }
    debug_assert_eq!(order.len(), n, "cycle check precedes renumbering");

    let mut new_id: HashMap<u64, u64> = HashMap::with_capacity_and_hasher(n, Default::default());
    for (pos, &i) in order.iter().enumerate() {
        new_id.insert(pruned.nodes[i].id, pos as u64 + 1);
    }

    // Incoming edges per node, split by dependency class.
    let mut data_deps: HashMap<u64, Vec<u64>> = HashMap::default();
    let mut ctrl_deps: HashMap<u64, Vec<u64>> = HashMap::default();
    let mut sync_srcs: HashMap<u64, Vec<u64>> = HashMap::default();
    for e in &pruned.edges {
        let (s, d) = (new_id[&e.src], new_id[&e.dst]);
        match e.dep_type {
            DepType::Data => data_deps.entry(d).or_default().push(s),
            DepType::Control => ctrl_deps.entry(d).or_default().push(s),
            DepType::Sync => {
                // Table-driven node schema has only two dep lists; sync
                // constraints land in ctrl_deps with provenance kept.
                ctrl_deps.entry(d).or_default().push(s);
                sync_srcs.entry(d).or_default().push(s);
            }
        }
    }

    let mut trace = ExecutionTrace::new(pruned.rank, pruned.num_ranks);
    trace.process_groups = groups.to_vec();
    trace.num_ranks = trace
        .num_ranks
        .max(pruned.rank + 1)
        .max(groups.iter().flat_map(|g| g.ranks.iter()).max().map_or(0, |m| m + 1));

    let mut tensors: BTreeMap<u64, TensorDesc> = BTreeMap::new();
    let mut storage_size: BTreeMap<u64, u64> = BTreeMap::new();
    let mut storage_device: BTreeMap<u64, Origin> = BTreeMap::new();

    let mut tabulate = |r: &TensorRef, origin: Origin| {
        tensors.entry(r.tensor_id).or_insert_with(|| {
            // Contiguous row-major stride; the host-side ref format does
            // not carry one.
            let mut stride = vec![1i64; r.shape.len()];
            for i in (0..r.shape.len().saturating_sub(1)).rev() {
                stride[i] = stride[i + 1] * r.shape[i + 1].max(1);
            }
            TensorDesc {
                dtype: r.dtype,
                id: r.tensor_id,
                shape: r.shape.clone(),
                size_bytes: r.size_bytes,
                storage_id: r.storage_id,
                storage_offset: r.storage_offset,
                stride,
            }
        });
        let t = &tensors[&r.tensor_id];
        let need = r.storage_offset * r.dtype.width_bytes() + t.extent_bytes().max(r.size_bytes);
        let s = storage_size.entry(r.storage_id).or_insert(0);
        *s = (*s).max(need.max(1));
        let dev = storage_device.entry(r.storage_id).or_insert(origin);
        if origin == Origin::Device {
            *dev = Origin::Device;
        }
    };

    for &i in &order {
        let ln = &pruned.nodes[i];
        for r in ln.inputs.iter().chain(ln.outputs.iter()) {
            tabulate(r, ln.origin);
        }
    }

    for &i in &order {
        let ln = &pruned.nodes[i];
        let id = new_id[&ln.id];
        let node_type = match &ln.comm {
            Some(comm) if ln.kind == LinkedKind::Comm => comm_node_type(ln.id, comm)?,
            _ => kind_to_node_type(ln.kind),
        };
        let mut attrs = AttrMap::new();
        attrs.insert("orig_id".into(), json!(ln.orig_id.unwrap_or(ln.id)));
        attrs.insert("origin".into(), json!(match ln.origin {
            Origin::Host => "host",
            Origin::Device => "device",
        }));
        if let Some(s) = ln.stream {
            attrs.insert("stream".into(), json!(s));
        }
        if let Some(srcs) = sync_srcs.get(&id) {
            let mut v: Vec<u64> = srcs.clone();
            v.sort_unstable();
            v.dedup();
            attrs.insert("dep_sync_srcs".into(), json!(v));
        }
        if let Some(comm) = &ln.comm {
            attrs.insert("comm_type".into(), json!(comm.comm_type.as_str()));
            attrs.insert("comm_size_bytes".into(), json!(comm.comm_size_bytes));
            if let Some(g) = comm.comm_group {
                attrs.insert("comm_group".into(), json!(g));
            }
            if let Some(tag) = &comm.comm_tag {
                attrs.insert("comm_tag".into(), json!(tag));
            }
            if let Some(p) = comm.comm_peer {
                attrs.insert("comm_peer".into(), json!(p));
            }
            if !comm.tensor_ids.is_empty() {
                attrs.insert("tensor_ids".into(), json!(comm.tensor_ids));
            }
            if let Some(d) = comm.direction {
                attrs.insert(
                    "direction".into(),
                    json!(match d {
                        Direction::Send => "send",
                        Direction::Recv => "recv",
                    }),
                );
            }
        }
        trace.nodes.push(crate::schema::TraceNode {
            attrs,
            ctrl_deps: ctrl_deps.remove(&id).unwrap_or_default(),
            data_deps: data_deps.remove(&id).unwrap_or_default(),
            duration_micros: ln.dur,
            id,
            inputs: ln.inputs.iter().map(|r| r.tensor_id).collect(),
            name: ln.name.clone(),
            outputs: ln.outputs.iter().map(|r| r.tensor_id).collect(),
            start_time_micros: ln.ts,
            node_type,
        });
    }

    trace.tensors = tensors.into_values().collect();
    trace.storages = storage_size
        .into_iter()
        .map(|(id, size_bytes)| StorageDesc {
            device: match storage_device[&id] {
                Origin::Device => "gpu:0".to_string(),
                Origin::Host => "cpu".to_string(),
            },
            id,
            size_bytes,
        })
        .collect();
    trace.canonicalize();
    Ok(trace)
}

/// Reinterpret a canonical trace as a linked graph (idempotence path and
/// the converter-side entry point for already-converted inputs).
pub fn linked_from_trace(trace: &ExecutionTrace) -> LinkedGraph {
    let tensor_by_id: HashMap<u64, &TensorDesc> =
        trace.tensors.iter().map(|t| (t.id, t)).collect();
    let to_refs = |ids: &[u64]| -> Vec<TensorRef> {
        ids.iter()
            .filter_map(|id| tensor_by_id.get(id))
            .map(|t| TensorRef {
                tensor_id: t.id,
                storage_id: t.storage_id,
                storage_offset: t.storage_offset,
                shape: t.shape.clone(),
                dtype: t.dtype,
                size_bytes: t.size_bytes,
            })
            .collect()
    };
    let mut nodes = Vec::with_capacity(trace.nodes.len());
    let mut edges = Vec::new();
    for n in &trace.nodes {
        let origin = match n.attrs.get("origin").and_then(Value::as_str) {
            Some("device") => Origin::Device,
            _ => Origin::Host,
        };
        let kind = match n.node_type {
            NodeType::Comp => {
                if origin == Origin::Device {
                    LinkedKind::Kernel
                } else {
                    LinkedKind::HostCall
                }
            }
            NodeType::MemLoad => LinkedKind::MemcpyH2d,
            NodeType::MemStore => LinkedKind::MemcpyD2h,
            NodeType::CommColl | NodeType::CommSend | NodeType::CommRecv => LinkedKind::Comm,
        };
        let comm = if n.node_type.is_comm() {
            n.comm_type().map(|ct| CommAttrs {
                comm_type: ct,
                comm_group: n.comm_group(),
                comm_tag: n.comm_tag().map(str::to_string),
                comm_size_bytes: n.comm_size_bytes().unwrap_or(0),
                comm_peer: n.comm_peer(),
                direction: match n.attrs.get("direction").and_then(Value::as_str) {
                    Some("send") => Some(Direction::Send),
                    Some("recv") => Some(Direction::Recv),
                    _ => match n.node_type {
                        NodeType::CommSend => Some(Direction::Send),
                        NodeType::CommRecv => Some(Direction::Recv),
                        _ => None,
                    },
                },
                tensor_ids: n
                    .attrs
                    .get("tensor_ids")
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(Value::as_u64).collect())
                    .unwrap_or_default(),
            })
        } else {
            None
        };
        let sync_dedup: BTreeSet<u64> = n
            .attrs
            .get("dep_sync_srcs")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_u64).collect())
            .unwrap_or_default();
        for &d in &n.data_deps {
            edges.push(Edge { src: d, dst: n.id, dep_type: DepType::Data });
        }
        for &c in &n.ctrl_deps {
            let dep_type = if sync_dedup.contains(&c) { DepType::Sync } else { DepType::Control };
            edges.push(Edge { src: c, dst: n.id, dep_type });
        }
        nodes.push(LinkedNode {
            id: n.id,
            origin,
            name: n.name.clone(),
            kind,
            stream: n.attrs.get("stream").and_then(Value::as_u64).map(|s| s as u32),
            ts: n.start_time_micros,
            dur: n.duration_micros,
            inputs: to_refs(&n.inputs),
            outputs: to_refs(&n.outputs),
            comm,
            parent: None,
            sync_kind: None,
            event_id: None,
            launched_by: None,
            orig_id: n.attrs.get("orig_id").and_then(Value::as_u64),
        });
    }
    LinkedGraph { rank: trace.rank, num_ranks: trace.num_ranks, nodes, edges }
}
