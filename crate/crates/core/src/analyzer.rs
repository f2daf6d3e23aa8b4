//! Per-trace analyses: operation counts, runtime breakdown, duration CDF,
//! dependency histogram, and a storage-lifetime memory timeline. All time
//! arithmetic is integer microseconds.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::schema::{CommType, ExecutionTrace, NodeType};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyzerError {
    #[error("MISSING_TIMING: node {0} has no start/duration")]
    MissingTiming(u64),
}

// ---------------------------------------------------------------------------
// Interval arithmetic

/// Total measure of the union of half-open intervals. Sorts in place.
pub fn union_measure(intervals: &mut Vec<(u64, u64)>) -> u64 {
    intervals.sort_unstable();
    let mut total = 0u64;
    let mut cur: Option<(u64, u64)> = None;
    for &(s, e) in intervals.iter() {
        cur = match cur {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

/// Measure of union(a) not covered by union(b).
pub fn union_difference(a: &[(u64, u64)], b: &mut Vec<(u64, u64)>) -> u64 {
    let mut both: Vec<(u64, u64)> = a.iter().chain(b.iter()).copied().collect();
    union_measure(&mut both) - union_measure(b)
}

// ---------------------------------------------------------------------------
// Operation counts

pub const NAME_CLASSES: [&str; 4] = ["GeMM", "Attn", "ElemWise", "Others"];

/// Ordered case-insensitive substring rules; the first matching class wins,
/// unmatched names fall into the final catch-all class.
#[derive(Debug, Clone, Serialize)]
pub struct NameRules {
    pub classes: Vec<(String, Vec<String>)>,
    pub fallback: String,
}

impl Default for NameRules {
    fn default() -> Self {
        NameRules {
            classes: vec![
                ("GeMM".into(), vec!["gemm".into(), "matmul".into()]),
                ("Attn".into(), vec!["attention".into(), "attn".into(), "flash".into()]),
                (
                    "ElemWise".into(),
                    vec!["add".into(), "mul".into(), "relu".into(), "gelu".into(), "elementwise".into()],
                ),
            ],
            fallback: "Others".into(),
        }
    }
}

impl NameRules {
    pub fn classify(&self, name: &str) -> &str {
        let lower = name.to_ascii_lowercase();
        for (class, subs) in &self.classes {
            if subs.iter().any(|s| lower.contains(s.as_str())) {
                return class;
            }
        }
        &self.fallback
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CountTable {
    pub by_node_type: BTreeMap<NodeType, u64>,
    pub by_comm_type: BTreeMap<CommType, u64>,
    pub by_name_class: BTreeMap<String, u64>,
}

pub fn op_counts(trace: &ExecutionTrace) -> CountTable {
    op_counts_with_rules(trace, &NameRules::default())
}

pub fn op_counts_with_rules(trace: &ExecutionTrace, rules: &NameRules) -> CountTable {
    let mut t = CountTable::default();
    for n in &trace.nodes {
        *t.by_node_type.entry(n.node_type).or_default() += 1;
        if let Some(ct) = n.comm_type() {
            *t.by_comm_type.entry(ct).or_default() += 1;
        }
        if n.node_type == NodeType::Comp {
            *t.by_name_class.entry(rules.classify(&n.name).to_owned()).or_default() += 1;
        }
    }
    t
}

// ---------------------------------------------------------------------------
// Runtime breakdown

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Breakdown {
    pub span: u64,
    pub compute_busy: u64,
    pub exposed_comm: u64,
    pub idle: u64,
}

/// Splits the trace span into compute, exposed communication, and idle.
/// Compute covers COMP and MEM_* nodes regardless of origin; exposed
/// communication is comm time not hidden behind compute.
pub fn runtime_breakdown(trace: &ExecutionTrace) -> Result<Breakdown, AnalyzerError> {
    let mut compute: Vec<(u64, u64)> = Vec::new();
    let mut comm: Vec<(u64, u64)> = Vec::new();
    let mut lo = u64::MAX;
    let mut hi = 0u64;
    for n in &trace.nodes {
        let (Some(s), Some(e)) = (n.start_time_micros, n.end_time_micros()) else {
            return Err(AnalyzerError::MissingTiming(n.id));
        };
        lo = lo.min(s);
        hi = hi.max(e);
        if n.node_type.is_comm() {
            comm.push((s, e));
        } else {
            compute.push((s, e));
        }
    }
    if trace.nodes.is_empty() {
        return Ok(Breakdown { span: 0, compute_busy: 0, exposed_comm: 0, idle: 0 });
    }
    let span = hi - lo;
    let exposed_comm = union_difference(&comm, &mut compute);
    let compute_busy = union_measure(&mut compute);
    let idle = span - compute_busy - exposed_comm;
    Ok(Breakdown { span, compute_busy, exposed_comm, idle })
}

// ---------------------------------------------------------------------------
// Duration CDF

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CdfPoint {
    pub duration_micros: u64,
    /// cumulative count over total, kept as an integer ratio
    pub numer: u64,
    pub denom: u64,
}

impl CdfPoint {
    pub fn fraction(&self) -> f64 {
        self.numer as f64 / self.denom as f64
    }
}

pub fn duration_cdf(trace: &ExecutionTrace) -> Result<Vec<CdfPoint>, AnalyzerError> {
    let mut durations: Vec<u64> = Vec::with_capacity(trace.nodes.len());
    for n in &trace.nodes {
        match n.duration_micros {
            Some(d) => durations.push(d),
            None => return Err(AnalyzerError::MissingTiming(n.id)),
        }
    }
    if durations.is_empty() {
        return Err(AnalyzerError::MissingTiming(0));
    }
    durations.sort_unstable();
    let total = durations.len() as u64;
    let mut out: Vec<CdfPoint> = Vec::new();
    let mut cum = 0u64;
    let mut i = 0;
    while i < durations.len() {
        let d = durations[i];
        let mut j = i;
        while j < durations.len() && durations[j] == d {
            j += 1;
        }
        cum += (j - i) as u64;
        out.push(CdfPoint { duration_micros: d, numer: cum, denom: total });
        i = j;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dependency histogram

/// In-degree over data_deps only.
pub fn dependency_histogram(trace: &ExecutionTrace) -> BTreeMap<usize, u64> {
    let mut hist = BTreeMap::new();
    for n in &trace.nodes {
        *hist.entry(n.data_deps.len()).or_insert(0u64) += 1;
    }
    hist
}

// ---------------------------------------------------------------------------
// Memory timeline

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryTimeline {
    /// piecewise-constant live-byte samples at every change point
    pub samples: Vec<(u64, u64)>,
    pub peak_bytes: u64,
}

/// Storage lifetimes: a storage is live from the start of the first node
/// producing one of its tensors to the end of the last node touching one.
/// This approximates allocator behavior from the trace alone.
pub fn memory_timeline(trace: &ExecutionTrace) -> Result<MemoryTimeline, AnalyzerError> {
    let tensor_storage: BTreeMap<u64, u64> =
        trace.tensors.iter().map(|t| (t.id, t.storage_id)).collect();
    let storage_size: BTreeMap<u64, u64> =
        trace.storages.iter().map(|s| (s.id, s.size_bytes)).collect();

    // storage -> (first producer start, last toucher end)
    let mut life: BTreeMap<u64, (Option<u64>, u64)> = BTreeMap::new();
    for n in &trace.nodes {
        if n.inputs.is_empty() && n.outputs.is_empty() {
            continue;
        }
        let (Some(s), Some(e)) = (n.start_time_micros, n.end_time_micros()) else {
            return Err(AnalyzerError::MissingTiming(n.id));
        };
        for tid in &n.outputs {
            if let Some(&sid) = tensor_storage.get(tid) {
                let entry = life.entry(sid).or_insert((None, 0));
                entry.0 = Some(entry.0.map_or(s, |p: u64| p.min(s)));
                entry.1 = entry.1.max(e);
            }
        }
        for tid in &n.inputs {
            if let Some(&sid) = tensor_storage.get(tid) {
                let entry = life.entry(sid).or_insert((None, 0));
                entry.1 = entry.1.max(e);
            }
        }
    }

    // deltas at lifetime boundaries
    let mut deltas: BTreeMap<u64, i128> = BTreeMap::new();
    for (sid, (start, end)) in &life {
        let Some(start) = start else { continue }; // never produced: untracked
        let size = storage_size.get(sid).copied().unwrap_or(0) as i128;
        *deltas.entry(*start).or_insert(0) += size;
        *deltas.entry(*end).or_insert(0) -= size;
    }

    let mut samples = Vec::with_capacity(deltas.len());
    let mut live: i128 = 0;
    let mut peak: u64 = 0;
    for (t, d) in deltas {
        live += d;
        let bytes = live.max(0) as u64;
        peak = peak.max(bytes);
        samples.push((t, bytes));
    }
    Ok(MemoryTimeline { samples, peak_bytes: peak })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_transformer, GenSpec};
    use crate::schema::{Dtype, StorageDesc, TensorDesc, TraceNode};

    fn timed(id: u64, ty: NodeType, start: u64, dur: u64) -> TraceNode {
        let mut n = TraceNode::new(id, format!("n{id}"), ty);
        n.start_time_micros = Some(start);
        n.duration_micros = Some(dur);
        n
    }

    #[test]
    fn counts_on_transformer_match_closed_form() {
        let spec = GenSpec { layers: 4, tp: 8, ..Default::default() };
        let traces = generate_transformer(&spec).unwrap();
        let t = op_counts(&traces[0]);
        assert_eq!(t.by_comm_type[&CommType::AllReduce], 16);
        let total: u64 = t.by_node_type.values().sum();
        assert_eq!(total, traces[0].nodes.len() as u64);
        let comps: u64 = t.by_name_class.values().sum();
        assert_eq!(comps, t.by_node_type[&NodeType::Comp]);
        // generator names route to the right class
        assert!(t.by_name_class["GeMM"] > 0);
        assert!(t.by_name_class["Attn"] > 0);
        assert!(t.by_name_class["ElemWise"] > 0);
    }

    #[test]
    fn empty_trace_counts_are_zero() {
        let t = op_counts(&ExecutionTrace::new(0, 1));
        assert!(t.by_node_type.is_empty());
        assert!(t.by_comm_type.is_empty());
    }

    #[test]
    fn name_rules_order_and_case() {
        let r = NameRules::default();
        assert_eq!(r.classify("MatMul_16"), "GeMM");
        assert_eq!(r.classify("FlashAttention"), "Attn");
        assert_eq!(r.classify("gelu_fw"), "ElemWise");
        assert_eq!(r.classify("layernorm"), "Others");
        // gemm beats add even if both substrings appear
        assert_eq!(r.classify("gemm_add_fused"), "GeMM");
    }

    #[test]
    fn breakdown_partial_overlap() {
        let mut t = ExecutionTrace::new(0, 1);
        t.nodes.push(timed(1, NodeType::Comp, 0, 10));
        t.nodes.push(timed(2, NodeType::CommColl, 5, 7)); // [5,12]
        let b = runtime_breakdown(&t).unwrap();
        assert_eq!(b, Breakdown { span: 12, compute_busy: 10, exposed_comm: 2, idle: 0 });
    }

    #[test]
    fn breakdown_fully_hidden_comm() {
        let mut t = ExecutionTrace::new(0, 1);
        t.nodes.push(timed(1, NodeType::Comp, 0, 10));
        t.nodes.push(timed(2, NodeType::CommColl, 2, 6));
        let b = runtime_breakdown(&t).unwrap();
        assert_eq!(b, Breakdown { span: 10, compute_busy: 10, exposed_comm: 0, idle: 0 });
    }

    #[test]
    fn breakdown_span_is_min_to_max() {
        let mut t = ExecutionTrace::new(0, 1);
        t.nodes.push(timed(1, NodeType::Comp, 5, 5));
        let b = runtime_breakdown(&t).unwrap();
        assert_eq!(b, Breakdown { span: 5, compute_busy: 5, exposed_comm: 0, idle: 0 });
    }

    #[test]
    fn breakdown_missing_timing_errors() {
        let mut t = ExecutionTrace::new(0, 1);
        t.nodes.push(TraceNode::new(1, "x", NodeType::Comp));
        assert_eq!(runtime_breakdown(&t), Err(AnalyzerError::MissingTiming(1)));
    }

    #[test]
    fn cdf_examples() {
        let mut t = ExecutionTrace::new(0, 1);
        for (i, d) in [1u64, 2, 4].iter().enumerate() {
            t.nodes.push(timed(i as u64 + 1, NodeType::Comp, 0, *d));
        }
        let cdf = duration_cdf(&t).unwrap();
        assert_eq!(
            cdf,
            vec![
                CdfPoint { duration_micros: 1, numer: 1, denom: 3 },
                CdfPoint { duration_micros: 2, numer: 2, denom: 3 },
                CdfPoint { duration_micros: 4, numer: 3, denom: 3 },
            ]
        );

        let mut t = ExecutionTrace::new(0, 1);
        for i in 0..3 {
            t.nodes.push(timed(i + 1, NodeType::Comp, 0, 5));
        }
        let cdf = duration_cdf(&t).unwrap();
        assert_eq!(cdf, vec![CdfPoint { duration_micros: 5, numer: 3, denom: 3 }]);
        assert_eq!(cdf.last().unwrap().fraction(), 1.0);
    }

    #[test]
    fn cdf_matches_sort_and_rank_oracle() {
        let trace = crate::generator::generate_random_dag(10_000, 0.0, 3).unwrap();
        let cdf = duration_cdf(&trace).unwrap();
        let mut sorted: Vec<u64> =
            trace.nodes.iter().map(|n| n.duration_micros.unwrap()).collect();
        sorted.sort_unstable();
        for p in &cdf {
            // rank of last occurrence of this duration, 1-based
            let rank = sorted.partition_point(|&d| d <= p.duration_micros) as u64;
            assert_eq!(p.numer, rank);
            assert_eq!(p.denom, sorted.len() as u64);
        }
        for w in cdf.windows(2) {
            assert!(w[0].numer < w[1].numer);
        }
        assert_eq!(cdf.last().unwrap().fraction(), 1.0);
    }

    #[test]
    fn dep_histogram_shapes() {
        let diamond = &crate::generator::generate_micro(crate::generator::MicroKind::Diamond)
            .unwrap()[0];
        let h = dependency_histogram(diamond);
        assert_eq!(h[&0], 1);
        assert_eq!(h[&1], 2);
        assert_eq!(h[&2], 1);

        let mut t = ExecutionTrace::new(0, 1);
        for i in 1..=5 {
            t.nodes.push(TraceNode::new(i, "x", NodeType::Comp));
        }
        assert_eq!(dependency_histogram(&t)[&0], 5);
    }

    fn tensor(id: u64, storage_id: u64) -> TensorDesc {
        TensorDesc {
            dtype: Dtype::Fp32,
            id,
            shape: vec![25],
            size_bytes: 100,
            storage_id,
            storage_offset: 0,
            stride: vec![1],
        }
    }

    fn storage(id: u64, size: u64) -> StorageDesc {
        StorageDesc { device: "gpu:0".into(), id, size_bytes: size }
    }

    #[test]
    fn memory_lifetime_producer_to_last_consumer() {
        let mut t = ExecutionTrace::new(0, 1);
        t.tensors = vec![tensor(1, 10)];
        t.storages = vec![storage(10, 100)];
        let mut p = timed(1, NodeType::Comp, 0, 5);
        p.outputs = vec![1];
        let mut c = timed(2, NodeType::Comp, 10, 2);
        c.inputs = vec![1];
        t.nodes.push(p);
        t.nodes.push(c);
        let m = memory_timeline(&t).unwrap();
        assert_eq!(m.peak_bytes, 100);
        assert_eq!(m.samples, vec![(0, 100), (12, 0)]);
    }

    #[test]
    fn disjoint_lifetimes_do_not_stack() {
        let mut t = ExecutionTrace::new(0, 1);
        t.tensors = vec![tensor(1, 10), tensor(2, 11)];
        t.storages = vec![storage(10, 100), storage(11, 100)];
        let mut a = timed(1, NodeType::Comp, 0, 5);
        a.outputs = vec![1];
        let mut b = timed(2, NodeType::Comp, 10, 5);
        b.outputs = vec![2];
        t.nodes.push(a);
        t.nodes.push(b);
        assert_eq!(memory_timeline(&t).unwrap().peak_bytes, 100);
    }

    #[test]
    fn aliased_storage_counted_once() {
        let mut t = ExecutionTrace::new(0, 1);
        t.tensors = vec![tensor(1, 10), tensor(2, 10)];
        t.storages = vec![storage(10, 100)];
        let mut a = timed(1, NodeType::Comp, 0, 5);
        a.outputs = vec![1];
        let mut b = timed(2, NodeType::Comp, 2, 5);
        b.outputs = vec![2];
        t.nodes.push(a);
        t.nodes.push(b);
        assert_eq!(memory_timeline(&t).unwrap().peak_bytes, 100);
    }

    #[test]
    fn memory_peak_invariant_under_node_order() {
        let mut t = ExecutionTrace::new(0, 1);
        t.tensors = vec![tensor(1, 10), tensor(2, 11)];
        t.storages = vec![storage(10, 100), storage(11, 50)];
        let mut a = timed(1, NodeType::Comp, 0, 5);
        a.outputs = vec![1];
        let mut b = timed(2, NodeType::Comp, 3, 5);
        b.outputs = vec![2];
        t.nodes.push(a);
        t.nodes.push(b);
        let p1 = memory_timeline(&t).unwrap().peak_bytes;
        t.nodes.reverse();
        let p2 = memory_timeline(&t).unwrap().peak_bytes;
        assert_eq!(p1, p2);
        assert_eq!(p1, 150);
    }
}
