//! Trace-driven discrete-event simulator. Compute nodes occupy a per-rank
//! compute resource; communication completes per an analytical alpha-beta
//! model over a configurable topology. Collectives synchronize across ranks
//! through the process-group table.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rustc_hash::FxHashMap as HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::feeder::{drain_order, open_feeder, Feeder, FeederConfig, FeederError, Policy};
use crate::schema::{CommType, ExecutionTrace, NodeType, TraceNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Switch,
    Ring,
    FullyConnected,
}

impl Topology {
    pub fn from_name(s: &str) -> Option<Topology> {
        Some(match s {
            "switch" => Topology::Switch,
            "ring" => Topology::Ring,
            "fully_connected" => Topology::FullyConnected,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Topology::Switch => "switch",
            Topology::Ring => "ring",
            Topology::FullyConnected => "fully_connected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coeff {
    /// latency steps, multiplied by alpha and the topology hop factor
    pub lat_steps: f64,
    /// dimensionless multiplier on size_bytes / effective_bandwidth
    pub bw_factor: f64,
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub topology: Topology,
    /// bytes per microsecond
    pub link_bandwidth: f64,
    /// microseconds per hop-step
    pub latency_alpha: f64,
    /// overrides of the built-in coefficient table, keyed (comm_type, n)
    pub coefficients: BTreeMap<(CommType, u64), Coeff>,
}

impl NetworkModel {
    pub fn new(topology: Topology, link_bandwidth: f64, latency_alpha: f64) -> Self {
        NetworkModel { topology, link_bandwidth, latency_alpha, coefficients: BTreeMap::new() }
    }

    pub fn coeff(&self, ct: CommType, n: u64) -> Coeff {
        if let Some(c) = self.coefficients.get(&(ct, n)) {
            return *c;
        }
        default_coeff(ct, n)
    }
}

fn ceil_log2(n: u64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (64 - (n - 1).leading_zeros()) as f64
    }
}

pub fn default_coeff(ct: CommType, n: u64) -> Coeff {
    let nf = n as f64;
    match ct {
        CommType::AllReduce => Coeff { lat_steps: 2.0 * (nf - 1.0), bw_factor: 2.0 * (nf - 1.0) / nf },
        CommType::AllGather | CommType::ReduceScatter | CommType::All2All => {
            Coeff { lat_steps: nf - 1.0, bw_factor: (nf - 1.0) / nf }
        }
        CommType::Broadcast => Coeff { lat_steps: ceil_log2(n), bw_factor: 1.0 },
        CommType::Barrier => Coeff { lat_steps: 2.0 * ceil_log2(n), bw_factor: 0.0 },
        CommType::PointToPoint => Coeff { lat_steps: 1.0, bw_factor: 1.0 },
    }
}

fn is_ring_collective(ct: CommType) -> bool {
    matches!(ct, CommType::AllReduce | CommType::AllGather | CommType::ReduceScatter)
}

pub fn hop_factor(topology: Topology, ct: CommType, n: u64) -> f64 {
    match topology {
        Topology::Switch => 2.0,
        Topology::Ring => {
            if is_ring_collective(ct) {
                1.0
            } else {
                ((n + 1) / 2) as f64
            }
        }
        Topology::FullyConnected => 1.0,
    }
}

pub fn effective_bandwidth(topology: Topology, ct: CommType, n: u64, link_bandwidth: f64) -> f64 {
    match topology {
        Topology::Switch => link_bandwidth,
        Topology::Ring => {
            if is_ring_collective(ct) {
                link_bandwidth
            } else {
                link_bandwidth / ((n + 3) / 4) as f64
            }
        }
        Topology::FullyConnected => {
            if is_ring_collective(ct) {
                link_bandwidth / (n.max(2) - 1) as f64
            } else {
                link_bandwidth
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub network: NetworkModel,
    pub compute_scale: f64,
    pub streams_per_rank: StreamsPerRank,
}

#[derive(Debug, Clone, Copy)]
pub struct StreamsPerRank {
    pub compute: u32,
    pub comm: u32,
}

impl Default for StreamsPerRank {
    fn default() -> Self {
        StreamsPerRank { compute: 1, comm: 1 }
    }
}

impl SimConfig {
    pub fn new(network: NetworkModel) -> Self {
        SimConfig { network, compute_scale: 1.0, streams_per_rank: StreamsPerRank::default() }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("INVALID_GROUP: group size {0} < 1")]
    InvalidGroup(u64),
    #[error("GROUP_SEQUENCE_MISMATCH: group {group} has {a} collectives on rank {rank_a} but {b} on rank {rank_b}")]
    GroupSequenceMismatch { group: u64, rank_a: u64, a: usize, rank_b: u64, b: usize },
    #[error("TAG_MISMATCH: group {group} sequence {sequence}")]
    TagMismatch { group: u64, sequence: usize },
    #[error("UNPAIRED_SEND_RECV: rank {rank} node {node}")]
    UnpairedSendRecv { rank: u64, node: u64 },
    #[error("STALLED: communication deadlock, {pending} nodes never issued")]
    Stalled { pending: usize },
    #[error("feeder: {0}")]
    Feeder(#[from] FeederError),
}

fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor() as u64
}

/// Analytical collective completion time in integer microseconds.
pub fn collective_time(
    ct: CommType,
    n: u64,
    size_bytes: u64,
    net: &NetworkModel,
) -> Result<u64, SimError> {
    if n < 1 {
        return Err(SimError::InvalidGroup(n));
    }
    if n == 1 {
        return Ok(0);
    }
    let c = net.coeff(ct, n);
    let lat = c.lat_steps * net.latency_alpha * hop_factor(net.topology, ct, n);
    let beff = effective_bandwidth(net.topology, ct, n, net.link_bandwidth);
    let bw = c.bw_factor * size_bytes as f64 / beff;
    Ok(round_half_up(lat + bw))
}

#[derive(Debug, Clone, Serialize)]
pub struct CollectiveInstance {
    pub group: u64,
    pub sequence: usize,
    pub comm_type: CommType,
    /// rank -> node id
    pub members: BTreeMap<u64, u64>,
    pub size_bytes: u64,
    /// member payloads disagreed; resolved to the max
    pub payload_mismatch: bool,
}

/// rank -> node id -> node, for O(1) lookups while pairing.
fn node_index(traces: &[ExecutionTrace]) -> HashMap<u64, HashMap<u64, &TraceNode>> {
    traces
        .iter()
        .map(|t| (t.rank, t.nodes.iter().map(|n| (n.id, n)).collect()))
        .collect()
}

/// Pairs the k-th COMM_COLL node per group per rank (fifo emission order)
/// across member ranks; comm_tag, when present, must agree.
pub fn match_collectives(traces: &[ExecutionTrace]) -> Result<Vec<CollectiveInstance>, SimError> {
    let by_rank: HashMap<u64, &ExecutionTrace> = traces.iter().map(|t| (t.rank, t)).collect();
    let nodes_of = node_index(traces);
    // group id -> rank -> ordered collective node ids
    let mut per_group: BTreeMap<u64, BTreeMap<u64, Vec<u64>>> = BTreeMap::new();
    for t in traces {
        if t.nodes.is_empty() {
            continue;
        }
        let order = drain_order(t, Policy::Fifo)?;
        for id in order {
            let node = nodes_of[&t.rank][&id];
            if node.node_type != NodeType::CommColl {
                continue;
            }
            let g = node.comm_group().unwrap_or(u64::MAX);
            per_group.entry(g).or_default().entry(t.rank).or_default().push(id);
        }
    }
    let mut out = Vec::new();
    for (g, ranks) in &per_group {
        let mut iter = ranks.iter();
        let (&r0, v0) = iter.next().unwrap();
        for (&r, v) in iter.clone() {
            if v.len() != v0.len() {
                return Err(SimError::GroupSequenceMismatch {
                    group: *g,
                    rank_a: r0,
                    a: v0.len(),
                    rank_b: r,
                    b: v.len(),
                });
            }
        }
        // group members without any collective at all also mismatch
        if let Some(t0) = by_rank.get(&r0) {
            if let Some(pg) = t0.process_groups.iter().find(|pg| pg.id == *g) {
                for m in &pg.ranks {
                    if by_rank.contains_key(m) && !ranks.contains_key(m) {
                        return Err(SimError::GroupSequenceMismatch {
                            group: *g,
                            rank_a: r0,
                            a: v0.len(),
                            rank_b: *m,
                            b: 0,
                        });
                    }
                }
            }
        }
        for k in 0..v0.len() {
            let mut members = BTreeMap::new();
            let mut size = 0u64;
            let mut sizes = Vec::new();
            let mut tag: Option<&str> = None;
            let mut ct = CommType::AllReduce;
            for (&r, v) in ranks {
                let node = nodes_of[&r][&v[k]];
                members.insert(r, v[k]);
                let s = node.comm_size_bytes().unwrap_or(0);
                sizes.push(s);
                size = size.max(s);
                ct = node.comm_type().unwrap_or(CommType::AllReduce);
                if let Some(t) = node.comm_tag() {
                    match tag {
                        None => tag = Some(t),
                        Some(prev) if prev != t => {
                            return Err(SimError::TagMismatch { group: *g, sequence: k })
                        }
                        _ => {}
                    }
                }
            }
            let mismatch = sizes.iter().any(|&s| s != size);
            out.push(CollectiveInstance {
                group: *g,
                sequence: k,
                comm_type: ct,
                members,
                size_bytes: size,
                payload_mismatch: mismatch,
            });
        }
    }
    Ok(out)
}

/// Pairs the k-th SEND from rank a to rank b with the k-th RECV on rank b
/// from rank a, per direction (fifo emission order).
fn match_p2p(traces: &[ExecutionTrace]) -> Result<Vec<CollectiveInstance>, SimError> {
    let nodes_of = node_index(traces);
    // (sender, receiver) -> ordered send node ids / recv node ids
    let mut sends: BTreeMap<(u64, u64), Vec<u64>> = BTreeMap::new();
    let mut recvs: BTreeMap<(u64, u64), Vec<u64>> = BTreeMap::new();
    for t in traces {
        if t.nodes.is_empty() {
            continue;
        }
        for id in drain_order(t, Policy::Fifo)? {
            let node = nodes_of[&t.rank][&id];
            match node.node_type {
                NodeType::CommSend => {
                    let peer = node.comm_peer().unwrap_or(u64::MAX);
                    sends.entry((t.rank, peer)).or_default().push(id);
                }
                NodeType::CommRecv => {
                    let peer = node.comm_peer().unwrap_or(u64::MAX);
                    recvs.entry((peer, t.rank)).or_default().push(id);
                }
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    for (&(src, dst), s) in &sends {
        let empty = Vec::new();
        let r = recvs.get(&(src, dst)).unwrap_or(&empty);
        if s.len() != r.len() {
            let (rank, node) = if s.len() > r.len() {
                (src, s[r.len()])
            } else {
                (dst, r[s.len()])
            };
            return Err(SimError::UnpairedSendRecv { rank, node });
        }
        for (k, (&sn, &rn)) in s.iter().zip(r.iter()).enumerate() {
            let send = nodes_of[&src][&sn];
            let recv = nodes_of[&dst][&rn];
            if let (Some(a), Some(b)) = (send.comm_tag(), recv.comm_tag()) {
                if a != b {
                    return Err(SimError::TagMismatch { group: u64::MAX, sequence: k });
                }
            }
            let ssz = send.comm_size_bytes().unwrap_or(0);
            let rsz = recv.comm_size_bytes().unwrap_or(0);
            let mut members = BTreeMap::new();
            members.insert(src, sn);
            if dst != src {
                members.insert(dst, rn);
            }
            out.push(CollectiveInstance {
                group: u64::MAX,
                sequence: k,
                comm_type: CommType::PointToPoint,
                members,
                size_bytes: ssz.max(rsz),
                payload_mismatch: ssz != rsz,
            });
        }
    }
    for (&(src, dst), r) in &recvs {
        if !sends.contains_key(&(src, dst)) && !r.is_empty() {
            return Err(SimError::UnpairedSendRecv { rank: dst, node: r[0] });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NodeTiming {
    pub sim_start: u64,
    pub sim_end: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankBreakdown {
    pub rank: u64,
    pub makespan: u64,
    pub compute_busy: u64,
    pub exposed_comm: u64,
    pub idle: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CollectiveReport {
    pub group: u64,
    pub sequence: usize,
    pub comm_type: CommType,
    pub size_bytes: u64,
    pub start: u64,
    pub end: u64,
    pub bus_time: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SimWarnings {
    pub missing_duration: u64,
    pub payload_mismatch: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub total_time: u64,
    pub per_rank: Vec<RankBreakdown>,
    /// rank -> node id -> timing
    pub per_node: BTreeMap<u64, BTreeMap<u64, NodeTiming>>,
    pub per_collective: Vec<CollectiveReport>,
    pub warnings: SimWarnings,
}

impl SimReport {
    pub fn total_comm_time(&self) -> u64 {
        self.per_collective.iter().map(|c| c.end - c.start).sum()
    }
}

struct InstanceState {
    comm_type: CommType,
    group: u64,
    sequence: usize,
    size_bytes: u64,
    n: u64,
    members: BTreeMap<u64, u64>,
    issued: BTreeMap<u64, u64>, // rank -> issue time
}

struct RankState {
    rank: u64,
    feeder: Feeder<std::vec::IntoIter<TraceNode>>,
    compute_free: u64,
    comm_free: u64,
    /// comm nodes whose deps are satisfied, in emission order
    comm_queue: VecDeque<(u64, u64)>, // (node id, ready time)
    comm_blocked: bool,
    compute_intervals: Vec<(u64, u64)>,
    comm_intervals: Vec<(u64, u64)>,
    makespan: u64,
}

fn union_len(intervals: &mut Vec<(u64, u64)>) -> u64 {
    intervals.sort_unstable();
    let mut total = 0u64;
    let mut cur: Option<(u64, u64)> = None;
    for &(s, e) in intervals.iter() {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
                let _ = cs;
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

/// Length of the parts of `a`'s union not covered by `b`'s union.
fn union_minus(a: &mut Vec<(u64, u64)>, b: &mut Vec<(u64, u64)>) -> u64 {
    let both = union_len(&mut a.iter().chain(b.iter()).copied().collect::<Vec<_>>());
    both - union_len(b)
}

pub fn simulate(traces: &[ExecutionTrace], config: &SimConfig) -> Result<SimReport, SimError> {
    // Matching replays each trace in fifo order; skip both passes outright
    // for pure-compute workloads.
    let any_comm = traces.iter().any(|t| t.nodes.iter().any(|n| n.node_type.is_comm()));
    let (collectives, p2ps) = if any_comm {
        (match_collectives(traces)?, match_p2p(traces)?)
    } else {
        (Vec::new(), Vec::new())
    };

    let mut instances: Vec<InstanceState> = Vec::new();
    let mut node_instance: HashMap<(u64, u64), usize> = HashMap::default(); // (rank, node) -> idx
    for inst in collectives.iter().chain(p2ps.iter()) {
        let idx = instances.len();
        for (&r, &nid) in &inst.members {
            node_instance.insert((r, nid), idx);
        }
        let n = if inst.comm_type == CommType::PointToPoint {
            2
        } else {
            traces[0]
                .process_groups
                .iter()
                .find(|g| g.id == inst.group)
                .map(|g| g.ranks.len() as u64)
                .max(Some(inst.members.len() as u64))
                .unwrap()
        };
        instances.push(InstanceState {
            comm_type: inst.comm_type,
            group: inst.group,
            sequence: inst.sequence,
            size_bytes: inst.size_bytes,
            n,
            members: inst.members.clone(),
            issued: BTreeMap::new(),
        });
    }

    let mut warnings = SimWarnings::default();
    warnings.payload_mismatch =
        collectives.iter().chain(p2ps.iter()).filter(|i| i.payload_mismatch).count() as u64;

    let mut ranks: BTreeMap<u64, RankState> = BTreeMap::new();
    let mut per_node: BTreeMap<u64, BTreeMap<u64, NodeTiming>> = BTreeMap::new();
    for t in traces {
        if t.nodes.is_empty() {
            per_node.insert(t.rank, BTreeMap::new());
            continue;
        }
        let feeder = open_feeder(t, FeederConfig { policy: Policy::Fifo, ..Default::default() })?;
        ranks.insert(
            t.rank,
            RankState {
                rank: t.rank,
                feeder,
                compute_free: 0,
                comm_free: 0,
                comm_queue: VecDeque::new(),
                comm_blocked: false,
                compute_intervals: Vec::new(),
                comm_intervals: Vec::new(),
                makespan: 0,
            },
        );
        per_node.insert(t.rank, BTreeMap::new());
    }

    let mut per_collective: Vec<CollectiveReport> = Vec::new();
    // completion events: (time, rank, node id)
    let mut events: BinaryHeap<Reverse<(u64, u64, u64)>> = BinaryHeap::new();

    // Pulls ready nodes from rank r's feeder at time `now`, dispatching
    // compute immediately and queuing comm issues.
    fn pump(
        rs: &mut RankState,
        now: u64,
        config: &SimConfig,
        per_node: &mut BTreeMap<u64, BTreeMap<u64, NodeTiming>>,
        events: &mut BinaryHeap<Reverse<(u64, u64, u64)>>,
        warnings: &mut SimWarnings,
    ) -> Result<(), SimError> {
        while let Some(node) = rs.feeder.next_ready()? {
            if node.node_type.is_comm() {
                rs.comm_queue.push_back((node.id, now));
            } else {
                let dur = match node.duration_micros {
                    Some(d) => round_half_up(d as f64 * config.compute_scale),
                    None => {
                        warnings.missing_duration += 1;
                        0
                    }
                };
                let start = now.max(rs.compute_free);
                let end = start + dur;
                rs.compute_free = end;
                rs.compute_intervals.push((start, end));
                rs.makespan = rs.makespan.max(end);
                per_node
                    .get_mut(&rs.rank)
                    .unwrap()
                    .insert(node.id, NodeTiming { sim_start: start, sim_end: end });
                events.push(Reverse((end, rs.rank, node.id)));
            }
        }
        Ok(())
    }

    // Issues queued comm nodes on rank r while its comm resource is free;
    // returns instance indices that became fully issued.
    fn issue_comm(rs: &mut RankState, node_instance: &HashMap<(u64, u64), usize>, instances: &mut [InstanceState]) -> Vec<usize> {
        let mut resolved = Vec::new();
        while !rs.comm_blocked {
            let Some(&(nid, ready)) = rs.comm_queue.front() else { break };
            rs.comm_queue.pop_front();
            let issue = ready.max(rs.comm_free);
            rs.comm_blocked = true;
            let idx = node_instance[&(rs.rank, nid)];
            let inst = &mut instances[idx];
            inst.issued.insert(rs.rank, issue);
            if inst.issued.len() == inst.members.len() {
                resolved.push(idx);
            }
        }
        resolved
    }

    for rs in ranks.values_mut() {
        pump(rs, 0, config, &mut per_node, &mut events, &mut warnings)?;
    }
    let mut worklist: VecDeque<usize> = VecDeque::new();
    for rs in ranks.values_mut() {
        worklist.extend(issue_comm(rs, &node_instance, &mut instances));
    }

    loop {
        // resolve fully-issued instances first
        while let Some(idx) = worklist.pop_front() {
            let (start, end) = {
                let inst = &instances[idx];
                let start = *inst.issued.values().max().unwrap();
                let t = collective_time(inst.comm_type, inst.n, inst.size_bytes, &config.network)?;
                (start, start + t)
            };
            let inst = &instances[idx];
            per_collective.push(CollectiveReport {
                group: inst.group,
                sequence: inst.sequence,
                comm_type: inst.comm_type,
                size_bytes: inst.size_bytes,
                start,
                end,
                bus_time: end - start,
            });
            let members: Vec<(u64, u64)> = inst.members.iter().map(|(&r, &n)| (r, n)).collect();
            for (r, nid) in members {
                let rs = ranks.get_mut(&r).unwrap();
                rs.comm_free = end;
                rs.comm_blocked = false;
                rs.comm_intervals.push((start, end));
                rs.makespan = rs.makespan.max(end);
                per_node
                    .get_mut(&r)
                    .unwrap()
                    .insert(nid, NodeTiming { sim_start: start, sim_end: end });
                events.push(Reverse((end, r, nid)));
                worklist.extend(issue_comm(rs, &node_instance, &mut instances));
            }
        }

        let Some(Reverse((t, r, nid))) = events.pop() else { break };
        let rs = ranks.get_mut(&r).unwrap();
        rs.feeder.complete(nid)?;
        pump(rs, t, config, &mut per_node, &mut events, &mut warnings)?;
        worklist.extend(issue_comm(rs, &node_instance, &mut instances));
    }

    let pending: usize = ranks
        .values()
        .map(|rs| rs.comm_queue.len() + usize::from(rs.comm_blocked))
        .sum();
    if pending > 0 || ranks.values().any(|rs| !rs.feeder.finished()) {
        return Err(SimError::Stalled { pending: pending.max(1) });
    }

    let mut per_rank = Vec::new();
    let mut total_time = 0u64;
    for rs in ranks.values_mut() {
        let compute_busy = union_len(&mut rs.compute_intervals);
        let exposed_comm = union_minus(&mut rs.comm_intervals, &mut rs.compute_intervals);
        let idle = rs.makespan - compute_busy - exposed_comm;
        total_time = total_time.max(rs.makespan);
        per_rank.push(RankBreakdown {
            rank: rs.rank,
            makespan: rs.makespan,
            compute_busy,
            exposed_comm,
            idle,
        });
    }
    per_collective.sort_by_key(|c| (c.start, c.group, c.sequence));

    Ok(SimReport { total_time, per_rank, per_node, per_collective, warnings })
}

#[derive(Debug, Clone)]
pub enum SweepAxis {
    /// multipliers applied to the base link_bandwidth
    Bandwidth(Vec<f64>),
    Topology(Vec<Topology>),
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub total_time: u64,
    pub total_comm_time: u64,
}

pub fn sweep(
    traces: &[ExecutionTrace],
    base: &SimConfig,
    axis: &SweepAxis,
) -> Result<Vec<SweepRow>, SimError> {
    let mut rows = Vec::new();
    match axis {
        SweepAxis::Bandwidth(mults) => {
            for &m in mults {
                let mut cfg = base.clone();
                cfg.network.link_bandwidth = base.network.link_bandwidth * m;
                let rep = simulate(traces, &cfg)?;
                rows.push(SweepRow {
                    value: format!("{m}"),
                    total_time: rep.total_time,
                    total_comm_time: rep.total_comm_time(),
                });
            }
        }
        SweepAxis::Topology(tops) => {
            for &t in tops {
                let mut cfg = base.clone();
                cfg.network.topology = t;
                let rep = simulate(traces, &cfg)?;
                rows.push(SweepRow {
                    value: t.name().into(),
                    total_time: rep.total_time,
                    total_comm_time: rep.total_comm_time(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,total_time,total_comm_time\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.value, r.total_time, r.total_comm_time));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_micro, generate_transformer, GenSpec, MicroKind};
    use crate::schema::{ProcessGroup, TraceNode};
    use serde_json::json;

    fn net(topology: Topology, bw: f64, alpha: f64) -> NetworkModel {
        NetworkModel::new(topology, bw, alpha)
    }

    #[test]
    fn collective_time_worked_examples() {
        // AllReduce, n=4, S=400, B=100, α=0, switch: 2·(3/4)·400/100 = 6
        let m = net(Topology::Switch, 100.0, 0.0);
        assert_eq!(collective_time(CommType::AllReduce, 4, 400, &m).unwrap(), 6);
        // any collective with n=1 is free
        assert_eq!(collective_time(CommType::All2All, 1, 1 << 30, &m).unwrap(), 0);
        // AllGather, n=2, S=200, B=100, α=1, switch (hop=2): 1·1·2 + (1/2)·200/100 = 3
        let m = net(Topology::Switch, 100.0, 1.0);
        assert_eq!(collective_time(CommType::AllGather, 2, 200, &m).unwrap(), 3);
    }

    #[test]
    fn collective_time_invalid_group() {
        let m = net(Topology::Switch, 100.0, 0.0);
        assert_eq!(
            collective_time(CommType::AllReduce, 0, 100, &m),
            Err(SimError::InvalidGroup(0))
        );
    }

    #[test]
    fn coefficient_override_wins() {
        let mut m = net(Topology::Switch, 100.0, 0.0);
        m.coefficients
            .insert((CommType::AllReduce, 4), Coeff { lat_steps: 0.0, bw_factor: 3.0 });
        assert_eq!(collective_time(CommType::AllReduce, 4, 400, &m).unwrap(), 12);
    }

    #[test]
    fn bandwidth_halving_is_exact_at_zero_alpha() {
        for ct in [CommType::AllReduce, CommType::AllGather, CommType::All2All] {
            for top in [Topology::Switch, Topology::Ring, Topology::FullyConnected] {
                let base = collective_time(ct, 8, 56_000, &net(top, 100.0, 0.0)).unwrap();
                let dbl = collective_time(ct, 8, 56_000, &net(top, 200.0, 0.0)).unwrap();
                assert_eq!(base, dbl * 2, "{ct:?} on {top:?}");
            }
        }
    }

    #[test]
    fn serial_chain_sums() {
        let t = &generate_micro(MicroKind::Chain { n: 2 }).unwrap()[0];
        let cfg = SimConfig::new(net(Topology::Switch, 100.0, 0.0));
        let rep = simulate(std::slice::from_ref(t), &cfg).unwrap();
        assert_eq!(rep.total_time, 20);
        assert_eq!(rep.per_rank[0].compute_busy, 20);
        assert_eq!(rep.per_rank[0].idle, 0);
    }

    #[test]
    fn compute_overlaps_comm() {
        // rank 0: independent 10 µs COMP and an AllReduce; rank 1: just the
        // AllReduce. With S=400, B=100, n=2: T = 2·(1/2)·400/100 = 4 µs,
        // fully hidden behind compute on rank 0.
        let mut t0 = crate::schema::ExecutionTrace::new(0, 2);
        t0.process_groups = vec![ProcessGroup { id: 0, ranks: vec![0, 1] }];
        let mut c = TraceNode::new(1, "comp", crate::schema::NodeType::Comp);
        c.duration_micros = Some(10);
        t0.nodes.push(c);
        let mut ar = TraceNode::new(2, "ar", crate::schema::NodeType::CommColl);
        ar.attrs.insert("comm_type".into(), json!("AllReduce"));
        ar.attrs.insert("comm_group".into(), json!(0));
        ar.attrs.insert("comm_size_bytes".into(), json!(400));
        t0.nodes.push(ar.clone());
        let mut t1 = crate::schema::ExecutionTrace::new(1, 2);
        t1.process_groups = t0.process_groups.clone();
        let mut ar1 = ar;
        ar1.id = 1;
        t1.nodes.push(ar1);

        let cfg = SimConfig::new(net(Topology::Switch, 100.0, 0.0));
        let rep = simulate(&[t0, t1], &cfg).unwrap();
        assert_eq!(rep.total_time, 10);
        let r0 = &rep.per_rank[0];
        assert_eq!((r0.compute_busy, r0.exposed_comm, r0.idle), (10, 0, 0));
        let r1 = &rep.per_rank[1];
        assert_eq!((r1.compute_busy, r1.exposed_comm, r1.idle), (0, 4, 0));
    }

    #[test]
    fn collective_waits_for_slowest_member() {
        // rank 1 has a 5 µs COMP before its AllReduce; rank 0's is dep-free.
        let mut t0 = crate::schema::ExecutionTrace::new(0, 2);
        t0.process_groups = vec![ProcessGroup { id: 0, ranks: vec![0, 1] }];
        let mut ar = TraceNode::new(1, "ar", crate::schema::NodeType::CommColl);
        ar.attrs.insert("comm_type".into(), json!("AllReduce"));
        ar.attrs.insert("comm_group".into(), json!(0));
        ar.attrs.insert("comm_size_bytes".into(), json!(400));
        t0.nodes.push(ar.clone());
        let mut t1 = crate::schema::ExecutionTrace::new(1, 2);
        t1.process_groups = t0.process_groups.clone();
        let mut c = TraceNode::new(1, "comp", crate::schema::NodeType::Comp);
        c.duration_micros = Some(5);
        t1.nodes.push(c);
        let mut ar1 = ar;
        ar1.id = 2;
        ar1.data_deps = vec![1];
        t1.nodes.push(ar1);

        let cfg = SimConfig::new(net(Topology::Switch, 100.0, 0.0));
        let rep = simulate(&[t0, t1], &cfg).unwrap();
        let coll = &rep.per_collective[0];
        assert_eq!(coll.start, 5);
        assert_eq!(coll.end, 9);
        // synchrony: both ranks' node timings match the instance
        assert_eq!(rep.per_node[&0][&1].sim_start, 5);
        assert_eq!(rep.per_node[&1][&2].sim_start, 5);
        assert_eq!(rep.per_node[&0][&1].sim_end, rep.per_node[&1][&2].sim_end);
    }

    #[test]
    fn send_recv_pairing() {
        let mut t0 = crate::schema::ExecutionTrace::new(0, 2);
        let mut s = TraceNode::new(1, "send", crate::schema::NodeType::CommSend);
        s.attrs.insert("comm_type".into(), json!("PointToPoint"));
        s.attrs.insert("comm_peer".into(), json!(1));
        s.attrs.insert("comm_size_bytes".into(), json!(100));
        t0.nodes.push(s);
        let mut t1 = crate::schema::ExecutionTrace::new(1, 2);
        let mut c = TraceNode::new(1, "comp", crate::schema::NodeType::Comp);
        c.duration_micros = Some(7);
        t1.nodes.push(c);
        let mut r = TraceNode::new(2, "recv", crate::schema::NodeType::CommRecv);
        r.attrs.insert("comm_type".into(), json!("PointToPoint"));
        r.attrs.insert("comm_peer".into(), json!(0));
        r.attrs.insert("comm_size_bytes".into(), json!(100));
        r.data_deps = vec![1];
        t1.nodes.push(r);

        // P2P n=2: T = 1·α·hop + 100/100 = 1 at α=0 switch
        let cfg = SimConfig::new(net(Topology::Switch, 100.0, 0.0));
        let rep = simulate(&[t0, t1], &cfg).unwrap();
        let p = &rep.per_collective[0];
        assert_eq!((p.start, p.end), (7, 8));
        assert_eq!(rep.total_time, 8);
    }

    #[test]
    fn unpaired_send_is_an_error() {
        let mut t0 = crate::schema::ExecutionTrace::new(0, 2);
        let mut s = TraceNode::new(1, "send", crate::schema::NodeType::CommSend);
        s.attrs.insert("comm_type".into(), json!("PointToPoint"));
        s.attrs.insert("comm_peer".into(), json!(1));
        s.attrs.insert("comm_size_bytes".into(), json!(100));
        t0.nodes.push(s);
        let t1 = crate::schema::ExecutionTrace::new(1, 2);
        let cfg = SimConfig::new(net(Topology::Switch, 100.0, 0.0));
        assert_eq!(
            simulate(&[t0, t1], &cfg).unwrap_err(),
            SimError::UnpairedSendRecv { rank: 0, node: 1 }
        );
    }

    #[test]
    fn sequence_mismatch_detected() {
        let pair = generate_micro(MicroKind::CommPair { size_bytes: 100 }).unwrap();
        let mut t0 = pair[0].clone();
        let extra = {
            let mut n = t0.nodes[0].clone();
            n.id = 2;
            n
        };
        t0.nodes.push(extra);
        let err = match_collectives(&[t0, pair[1].clone()]).unwrap_err();
        assert!(matches!(err, SimError::GroupSequenceMismatch { group: 0, .. }));
    }

    #[test]
    fn tag_mismatch_detected() {
        let pair = generate_micro(MicroKind::CommPair { size_bytes: 100 }).unwrap();
        let mut t0 = pair[0].clone();
        let mut t1 = pair[1].clone();
        t0.nodes[0].attrs.insert("comm_tag".into(), json!("fwd"));
        t1.nodes[0].attrs.insert("comm_tag".into(), json!("bwd"));
        assert_eq!(
            match_collectives(&[t0, t1]).unwrap_err(),
            SimError::TagMismatch { group: 0, sequence: 0 }
        );
    }

    #[test]
    fn breakdown_identity_on_transformer() {
        let spec = GenSpec { layers: 4, tp: 2, dp: 2, grad_buckets: 2, ..Default::default() };
        let traces = generate_transformer(&spec).unwrap();
        let cfg = SimConfig::new(net(Topology::Ring, 50.0, 0.5));
        let rep = simulate(&traces, &cfg).unwrap();
        for r in &rep.per_rank {
            assert_eq!(r.compute_busy + r.exposed_comm + r.idle, r.makespan, "rank {}", r.rank);
        }
        assert!(rep.total_time > 0);
    }

    #[test]
    fn dependency_safety_on_transformer() {
        let spec = GenSpec { layers: 2, tp: 2, pp: 2, microbatches: 2, ..Default::default() };
        let traces = generate_transformer(&spec).unwrap();
        let cfg = SimConfig::new(net(Topology::Switch, 100.0, 1.0));
        let rep = simulate(&traces, &cfg).unwrap();
        for t in &traces {
            let times = &rep.per_node[&t.rank];
            for n in &t.nodes {
                for d in n.ctrl_deps.iter().chain(n.data_deps.iter()) {
                    assert!(
                        times[d].sim_end <= times[&n.id].sim_start,
                        "rank {} edge {} -> {}",
                        t.rank,
                        d,
                        n.id
                    );
                }
            }
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let spec = GenSpec { layers: 4, tp: 4, dp: 2, grad_buckets: 3, ..Default::default() };
        let traces = generate_transformer(&spec).unwrap();
        let cfg = SimConfig::new(net(Topology::Ring, 80.0, 0.25));
        let a = simulate(&traces, &cfg).unwrap();
        let b = simulate(&traces, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn sweep_bandwidth_ratio_exact_at_zero_alpha() {
        let traces = generate_micro(MicroKind::CommPair { size_bytes: 40_000 }).unwrap();
        let cfg = SimConfig::new(net(Topology::Switch, 100.0, 0.0));
        let rows = sweep(&traces, &cfg, &SweepAxis::Bandwidth(vec![1.0, 2.0])).unwrap();
        assert_eq!(rows[0].total_comm_time, 2 * rows[1].total_comm_time);
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("value,total_time,total_comm_time\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn sweep_bandwidth_monotone_with_alpha() {
        let spec = GenSpec { layers: 4, tp: 4, ..Default::default() };
        let traces = generate_transformer(&spec).unwrap();
        let cfg = SimConfig::new(net(Topology::Switch, 10.0, 1.0));
        let rows =
            sweep(&traces, &cfg, &SweepAxis::Bandwidth(vec![1.0, 4.0, 16.0, 1e6])).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].total_comm_time <= w[0].total_comm_time);
        }
    }

    #[test]
    fn missing_duration_counts_warning() {
        let mut t = crate::schema::ExecutionTrace::new(0, 1);
        t.nodes.push(TraceNode::new(1, "comp", crate::schema::NodeType::Comp));
        let cfg = SimConfig::new(net(Topology::Switch, 100.0, 0.0));
        let rep = simulate(&[t], &cfg).unwrap();
        assert_eq!(rep.warnings.missing_duration, 1);
        assert_eq!(rep.total_time, 0);
    }
}
