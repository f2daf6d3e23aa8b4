//! Dependency-aware windowed node feeder.
//!
//! Reads a trace's nodes in windows, tracks unresolved predecessor counts,
//! and emits ready nodes under a pluggable queue policy. Policies only
//! arbitrate among ready nodes, so emission order always respects the
//! partial order regardless of window size or policy.

use std::collections::BTreeSet;

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};

use thiserror::Error;

use crate::schema::{ExecutionTrace, TraceNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Fifo,
    StartTime,
    CommPriority,
}

#[derive(Debug, Clone)]
pub struct FeederConfig {
    pub window: usize,
    pub policy: Policy,
}

impl Default for FeederConfig {
    fn default() -> Self {
        FeederConfig { window: 4096, policy: Policy::Fifo }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FeederError {
    #[error("EMPTY_TRACE: source yielded no nodes")]
    EmptyTrace,
    #[error("DEADLOCK: {remaining} node(s) can never become ready (cycle or dangling dependency)")]
    Deadlock { remaining: usize },
    #[error("UNKNOWN_ID: {0} was never emitted")]
    UnknownId(u64),
    #[error("DOUBLE_COMPLETE: {0} already completed")]
    DoubleComplete(u64),
}

pub struct Feeder<I: Iterator<Item = TraceNode>> {
    source: I,
    cfg: FeederConfig,
    resident: HashMap<u64, TraceNode>,
    pending: HashMap<u64, usize>,
    children: HashMap<u64, Vec<u64>>,
    /// Policy-keyed ready set; key layout depends on the policy.
    ready: BTreeSet<(u64, u64, u64)>,
    emitted: HashSet<u64>,
    completed: HashSet<u64>,
    /// (child, missing parent) pairs awaiting a later window.
    unresolved: HashSet<(u64, u64)>,
    seen: HashSet<u64>,
    exhausted: bool,
    window: usize,
    arrival: u64,
    in_flight: usize,
    total_read: usize,
    peak_resident: usize,
}

impl<I: Iterator<Item = TraceNode>> Feeder<I> {
    fn enqueue_ready(&mut self, id: u64) {
        let (start, is_comm) = {
            let n = &self.resident[&id];
            (n.start_time_micros, n.node_type.is_comm())
        };
        let arrival = self.arrival;
        self.arrival += 1;
        let key = match self.cfg.policy {
            Policy::Fifo => (0, arrival, id),
            // Missing timestamps sort after all present ones; ties by id.
            Policy::StartTime => (start.unwrap_or(u64::MAX), id, 0),
            Policy::CommPriority => (if is_comm { 0 } else { 1 }, arrival, id),
        };
        self.ready.insert(key);
    }

    fn read_one(&mut self) -> bool {
        let Some(node) = self.source.next() else {
            self.exhausted = true;
            return false;
        };
        let id = node.id;
        self.seen.insert(id);
        self.total_read += 1;
        let mut pending = 0;
        let mut deps: Vec<u64> = node.ctrl_deps.iter().chain(node.data_deps.iter()).copied().collect();
        deps.sort_unstable();
        deps.dedup();
        for dep in deps {
            if self.completed.contains(&dep) {
                continue;
            }
            pending += 1;
            self.children.entry(dep).or_default().push(id);
            if !self.seen.contains(&dep) {
                self.unresolved.insert((id, dep));
            }
        }
        // A parent that arrived earlier clears this child's unresolved marks
        // keyed on it; marks keyed on this node (forward refs) clear now.
        self.unresolved.retain(|&(_, parent)| parent != id);
        self.resident.insert(id, node);
        self.peak_resident = self.peak_resident.max(self.resident.len());
        self.pending.insert(id, pending);
        if pending == 0 {
            self.enqueue_ready(id);
        }
        true
    }

    fn read_window(&mut self, n: usize) {
        for _ in 0..n {
            if !self.read_one() {
                break;
            }
        }
    }

    /// Read windows, doubling the window size, until something is ready or
    /// the input is exhausted ("elastic extension").
    fn fill(&mut self) {
        let mut w = self.window;
        while self.ready.is_empty() && !self.exhausted {
            self.read_window(w);
            w = w.saturating_mul(2);
        }
    }

    pub fn open(source: I, cfg: FeederConfig) -> Result<Self, FeederError> {
        let window = cfg.window.max(1);
        let mut f = Feeder {
            source,
            cfg,
            resident: HashMap::default(),
            pending: HashMap::default(),
            children: HashMap::default(),
            ready: BTreeSet::new(),
            emitted: HashSet::default(),
            completed: HashSet::default(),
            unresolved: HashSet::default(),
            seen: HashSet::default(),
            exhausted: false,
            window,
            arrival: 0,
            in_flight: 0,
            total_read: 0,
            peak_resident: 0,
        };
        f.fill();
        if f.total_read == 0 {
            return Err(FeederError::EmptyTrace);
        }
        if f.ready.is_empty() {
            return Err(FeederError::Deadlock { remaining: f.resident.len() });
        }
        Ok(f)
    }

    /// Pop the next ready node per policy. `None` means nothing is ready
    /// right now: either all nodes were emitted, or emitted nodes are still
    /// awaiting `complete`. Deadlock is reported only when neither reading
    /// further nor completing anything can make progress.
    pub fn next_ready(&mut self) -> Result<Option<TraceNode>, FeederError> {
        loop {
            if let Some(&key) = self.ready.iter().next() {
                self.ready.remove(&key);
                let id = key_node_id(self.cfg.policy, key);
                self.emitted.insert(id);
                self.in_flight += 1;
                // Emission transfers ownership out of the resident buffer.
                return Ok(Some(self.resident.remove(&id).expect("ready node is resident")));
            }
            if !self.exhausted {
                self.fill();
                continue;
            }
            let unemitted = self.total_read - self.emitted.len();
            if unemitted > 0 && self.in_flight == 0 {
                return Err(FeederError::Deadlock { remaining: unemitted });
            }
            return Ok(None);
        }
    }

    /// Mark an emitted node finished, unlocking its children.
    pub fn complete(&mut self, id: u64) -> Result<(), FeederError> {
        if !self.emitted.contains(&id) {
            return Err(FeederError::UnknownId(id));
        }
        if !self.completed.insert(id) {
            return Err(FeederError::DoubleComplete(id));
        }
        self.in_flight -= 1;
        if let Some(kids) = self.children.remove(&id) {
            for child in kids {
                let p = self.pending.get_mut(&child).expect("child was counted");
                *p -= 1;
                if *p == 0 && self.resident.contains_key(&child) && !self.emitted.contains(&child) {
                    self.enqueue_ready(child);
                }
            }
        }
        Ok(())
    }

    pub fn all_emitted(&self) -> bool {
        self.exhausted && self.emitted.len() == self.total_read
    }

    pub fn finished(&self) -> bool {
        self.exhausted && self.completed.len() == self.total_read
    }

    pub fn peak_resident(&self) -> usize {
        self.peak_resident
    }

    pub fn unresolved_len(&self) -> usize {
        self.unresolved.len()
    }
}

fn key_node_id(policy: Policy, key: (u64, u64, u64)) -> u64 {
    match policy {
        Policy::Fifo | Policy::CommPriority => key.2,
        Policy::StartTime => key.1,
    }
}

/// Open a feeder over an in-memory trace (nodes in file order).
pub fn open_feeder(
    trace: &ExecutionTrace,
    cfg: FeederConfig,
) -> Result<Feeder<std::vec::IntoIter<TraceNode>>, FeederError> {
    Feeder::open(trace.nodes.clone().into_iter(), cfg)
}

/// Emit-and-complete loop; the result is a topological order of all ids.
pub fn drain_order(trace: &ExecutionTrace, policy: Policy) -> Result<Vec<u64>, FeederError> {
    drain_order_windowed(trace, policy, FeederConfig::default().window)
}

pub fn drain_order_windowed(
    trace: &ExecutionTrace,
    policy: Policy,
    window: usize,
) -> Result<Vec<u64>, FeederError> {
    let mut feeder = open_feeder(trace, FeederConfig { window, policy })?;
    let mut order = Vec::with_capacity(trace.nodes.len());
    while let Some(node) = feeder.next_ready()? {
        order.push(node.id);
        feeder.complete(node.id)?;
    }
    if !feeder.finished() {
        return Err(FeederError::Deadlock { remaining: trace.nodes.len() - order.len() });
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{NodeType, TraceNode};

    fn node(id: u64, deps: &[u64]) -> TraceNode {
        let mut n = TraceNode::new(id, format!("n{id}"), NodeType::Comp);
        n.data_deps = deps.to_vec();
        n
    }

    fn trace_of(nodes: Vec<TraceNode>) -> ExecutionTrace {
        let mut t = ExecutionTrace::new(0, 1);
        t.nodes = nodes;
        t
    }

    #[test]
    fn chain_window_one() {
        let t = trace_of(vec![node(1, &[]), node(2, &[1]), node(3, &[2])]);
        assert_eq!(drain_order_windowed(&t, Policy::Fifo, 1).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn elastic_extension_resolves_forward_ref() {
        // node 1 depends on node 2, which appears later in the file
        let t = trace_of(vec![node(1, &[2]), node(2, &[])]);
        assert_eq!(drain_order_windowed(&t, Policy::Fifo, 1).unwrap(), vec![2, 1]);
    }

    #[test]
    fn mutual_dependency_deadlocks() {
        let t = trace_of(vec![node(1, &[2]), node(2, &[1])]);
        assert!(matches!(
            drain_order(&t, Policy::Fifo),
            Err(FeederError::Deadlock { remaining: 2 })
        ));
    }

    #[test]
    fn empty_trace_rejected() {
        let t = trace_of(vec![]);
        assert_eq!(
            drain_order(&t, Policy::Fifo).unwrap_err(),
            FeederError::EmptyTrace
        );
    }

    #[test]
    fn fifo_tie_break_by_file_order() {
        let t = trace_of(vec![node(1, &[]), node(2, &[1]), node(3, &[1])]);
        assert_eq!(drain_order(&t, Policy::Fifo).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn start_time_policy_orders_by_timestamp() {
        let mut b = node(2, &[1]);
        b.start_time_micros = Some(9);
        let mut c = node(3, &[1]);
        c.start_time_micros = Some(5);
        let t = trace_of(vec![node(1, &[]), b, c]);
        assert_eq!(drain_order(&t, Policy::StartTime).unwrap(), vec![1, 3, 2]);
    }

    #[test]
    fn start_time_missing_sorts_last() {
        let mut b = node(2, &[1]);
        b.start_time_micros = None;
        let mut c = node(3, &[1]);
        c.start_time_micros = Some(100);
        let t = trace_of(vec![node(1, &[]), b, c]);
        assert_eq!(drain_order(&t, Policy::StartTime).unwrap(), vec![1, 3, 2]);
    }

    #[test]
    fn comm_priority_prefers_comm_nodes() {
        let b = node(2, &[1]);
        let mut c = TraceNode::new(3, "ar", NodeType::CommColl);
        c.data_deps = vec![1];
        let t = trace_of(vec![node(1, &[]), b, c]);
        assert_eq!(drain_order(&t, Policy::CommPriority).unwrap(), vec![1, 3, 2]);
    }

    #[test]
    fn diamond_fifo() {
        let t = trace_of(vec![node(1, &[]), node(2, &[1]), node(3, &[1]), node(4, &[2, 3])]);
        assert_eq!(drain_order(&t, Policy::Fifo).unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn reversed_file_order_chain() {
        let t = trace_of(vec![
            node(5, &[]),
            node(4, &[5]),
            node(3, &[4]),
            node(2, &[3]),
            node(1, &[2]),
        ]);
        for p in [Policy::Fifo, Policy::StartTime, Policy::CommPriority] {
            assert_eq!(drain_order(&t, p).unwrap(), vec![5, 4, 3, 2, 1]);
        }
    }

    #[test]
    fn double_complete_and_unknown_id() {
        let t = trace_of(vec![node(1, &[]), node(2, &[1])]);
        let mut f = open_feeder(&t, FeederConfig::default()).unwrap();
        let a = f.next_ready().unwrap().unwrap();
        assert_eq!(a.id, 1);
        assert_eq!(f.complete(99).unwrap_err(), FeederError::UnknownId(99));
        f.complete(1).unwrap();
        assert_eq!(f.complete(1).unwrap_err(), FeederError::DoubleComplete(1));
        let b = f.next_ready().unwrap().unwrap();
        assert_eq!(b.id, 2);
    }

    #[test]
    fn window_bounds_resident_set_on_forward_trace() {
        // dependency-forward chain: parents precede children
        let nodes: Vec<TraceNode> = (1..=1000u64)
            .map(|i| if i > 1 { node(i, &[i - 1]) } else { node(i, &[]) })
            .collect();
        let t = trace_of(nodes);
        let mut f = open_feeder(&t, FeederConfig { window: 16, policy: Policy::Fifo }).unwrap();
        while let Some(n) = f.next_ready().unwrap() {
            f.complete(n.id).unwrap();
        }
        assert!(f.peak_resident() <= 16 + 1, "peak {} too high", f.peak_resident());
    }
}
