//! Synthetic per-rank trace generation: transformer-style distributed
//! workloads with closed-form operation counts, micro test graphs, random
//! DAGs, and paired host/device fixture files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::ingest::{
    CommAttrs, DeviceEvent, DeviceEventKind, Direction, HostOp, HostOpKind, SyncKind, TensorRef,
};
use crate::schema::{
    CommType, Dtype, ExecutionTrace, NodeType, ProcessGroup, TraceNode,
};

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("INVALID_SPEC: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone)]
pub struct GenSpec {
    pub layers: u64,
    pub tp: u64,
    pub dp: u64,
    pub pp: u64,
    pub microbatches: u64,
    pub grad_buckets: u64,
    pub gemm_us: u64,
    pub attn_us: u64,
    pub elem_us: u64,
    pub hidden_bytes: u64,
    pub seed: u64,
    /// Replace each tensor-parallel AllReduce with AllGather+ReduceScatter.
    pub sequence_parallel: bool,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            layers: 4,
            tp: 1,
            dp: 1,
            pp: 1,
            microbatches: 1,
            grad_buckets: 0,
            gemm_us: 10,
            attn_us: 8,
            elem_us: 2,
            hidden_bytes: 1 << 20,
            seed: 0,
            sequence_parallel: false,
        }
    }
}

impl GenSpec {
    pub fn world(&self) -> u64 {
        self.tp * self.dp * self.pp
    }

    fn check(&self) -> Result<(), GenError> {
        if self.layers == 0 || self.tp == 0 || self.dp == 0 || self.pp == 0 || self.microbatches == 0
        {
            return Err(GenError::InvalidSpec("layers/tp/dp/pp/microbatches must be >= 1".into()));
        }
        if self.layers % self.pp != 0 {
            return Err(GenError::InvalidSpec(format!(
                "layers {} not divisible by pp {}",
                self.layers, self.pp
            )));
        }
        Ok(())
    }

    fn rank_of(&self, tp_idx: u64, dp_idx: u64, pp_idx: u64) -> u64 {
        (pp_idx * self.dp + dp_idx) * self.tp + tp_idx
    }

    /// Closed form: AllReduce nodes per rank.
    pub fn expected_allreduce(&self, _rank: u64) -> u64 {
        let tp_ars = if self.tp > 1 && !self.sequence_parallel { 4 * (self.layers / self.pp) } else { 0 };
        let dp_ars = if self.dp > 1 { self.grad_buckets } else { 0 };
        tp_ars + dp_ars
    }

    /// Closed form: AllGather (== ReduceScatter) nodes per rank under SP.
    pub fn expected_allgather(&self, _rank: u64) -> u64 {
        if self.tp > 1 && self.sequence_parallel { 4 * (self.layers / self.pp) } else { 0 }
    }

    fn stage_of(&self, rank: u64) -> u64 {
        rank / (self.dp * self.tp)
    }

    /// Closed form: SEND nodes per rank (== RECV nodes per rank).
    pub fn expected_send(&self, rank: u64) -> u64 {
        if self.pp == 1 {
            return 0;
        }
        let s = self.stage_of(rank);
        let fwd = if s < self.pp - 1 { self.microbatches } else { 0 };
        let bwd = if s > 0 { self.microbatches } else { 0 };
        fwd + bwd
    }
}

struct RankBuilder {
    trace: ExecutionTrace,
    next_id: u64,
    prev: Option<u64>,
}

impl RankBuilder {
    fn new(rank: u64, num_ranks: u64, groups: Vec<ProcessGroup>) -> Self {
        let mut trace = ExecutionTrace::new(rank, num_ranks);
        trace.process_groups = groups;
        RankBuilder { trace, next_id: 1, prev: None }
    }

    fn push(&mut self, mut node: TraceNode) -> u64 {
        let id = self.next_id;
        node.id = id;
        self.next_id += 1;
        if let Some(p) = self.prev {
            node.data_deps.push(p);
        }
        self.prev = Some(id);
        self.trace.nodes.push(node);
        id
    }

    fn comp(&mut self, name: &str, dur: u64) -> u64 {
        let mut n = TraceNode::new(0, name, NodeType::Comp);
        n.duration_micros = Some(dur);
        self.push(n)
    }

    fn coll(&mut self, name: &str, ct: CommType, group: u64, size: u64) -> u64 {
        let mut n = TraceNode::new(0, name, NodeType::CommColl);
        n.attrs.insert("comm_type".into(), json!(ct.as_str()));
        n.attrs.insert("comm_group".into(), json!(group));
        n.attrs.insert("comm_size_bytes".into(), json!(size));
        self.push(n)
    }

    fn p2p(&mut self, name: &str, dir: Direction, peer: u64, size: u64) -> u64 {
        let ty = match dir {
            Direction::Send => NodeType::CommSend,
            Direction::Recv => NodeType::CommRecv,
        };
        let mut n = TraceNode::new(0, name, ty);
        n.attrs.insert("comm_type".into(), json!(CommType::PointToPoint.as_str()));
        n.attrs.insert("comm_peer".into(), json!(peer));
        n.attrs.insert("comm_size_bytes".into(), json!(size));
        self.push(n)
    }
}

/// One trace per rank. Every rank's nodes form a chain, so cross-rank
/// communication order is unambiguous; collectives line up by sequence on
/// identical process-group tables.
pub fn generate_transformer(spec: &GenSpec) -> Result<Vec<ExecutionTrace>, GenError> {
    spec.check()?;
    let world = spec.world();

    // Group table, identical on all ranks: one per tensor-parallel row,
    // one per data-parallel row.
    let mut groups = Vec::new();
    let mut tp_group = vec![vec![0u64; 0]; 0];
    let mut next_gid = 0u64;
    let mut tp_gid = std::collections::HashMap::new();
    let mut dp_gid = std::collections::HashMap::new();
    if spec.tp > 1 {
        for pp_idx in 0..spec.pp {
            for dp_idx in 0..spec.dp {
                let ranks: Vec<u64> =
                    (0..spec.tp).map(|t| spec.rank_of(t, dp_idx, pp_idx)).collect();
                groups.push(ProcessGroup { id: next_gid, ranks });
                tp_gid.insert((dp_idx, pp_idx), next_gid);
                next_gid += 1;
            }
        }
    }
    if spec.dp > 1 {
        for pp_idx in 0..spec.pp {
            for tp_idx in 0..spec.tp {
                let ranks: Vec<u64> =
                    (0..spec.dp).map(|d| spec.rank_of(tp_idx, d, pp_idx)).collect();
                groups.push(ProcessGroup { id: next_gid, ranks });
                dp_gid.insert((tp_idx, pp_idx), next_gid);
                next_gid += 1;
            }
        }
    }
    tp_group.clear();

    let local_layers = spec.layers / spec.pp;
    let mut traces = Vec::with_capacity(world as usize);
    for pp_idx in 0..spec.pp {
        for dp_idx in 0..spec.dp {
            for tp_idx in 0..spec.tp {
                let rank = spec.rank_of(tp_idx, dp_idx, pp_idx);
                let mut b = RankBuilder::new(rank, world, groups.clone());
                let tpg = tp_gid.get(&(dp_idx, pp_idx)).copied();
                let s = spec.hidden_bytes;

                let tp_comm = |b: &mut RankBuilder, tag: &str| {
                    if let Some(g) = tpg {
                        if spec.sequence_parallel {
                            b.coll(&format!("AG_{tag}"), CommType::AllGather, g, s);
                            b.coll(&format!("RS_{tag}"), CommType::ReduceScatter, g, s);
                        } else {
                            b.coll(&format!("AR_{tag}"), CommType::AllReduce, g, s);
                        }
                    }
                };

                // forward
                if pp_idx > 0 {
                    let peer = spec.rank_of(tp_idx, dp_idx, pp_idx - 1);
                    for m in 0..spec.microbatches {
                        b.p2p(&format!("RECV_fwd_mb{m}"), Direction::Recv, peer, s);
                    }
                }
                for l in 0..local_layers {
                    b.comp(&format!("GEMM_qkv_l{l}"), spec.gemm_us);
                    b.comp(&format!("ATTN_l{l}"), spec.attn_us);
                    b.comp(&format!("GEMM_proj_l{l}"), spec.gemm_us);
                    tp_comm(&mut b, &format!("fwd_attn_l{l}"));
                    b.comp(&format!("GEMM_ffn1_l{l}"), spec.gemm_us);
                    b.comp(&format!("GEMM_ffn2_l{l}"), spec.gemm_us);
                    tp_comm(&mut b, &format!("fwd_mlp_l{l}"));
                    b.comp(&format!("ELEM_residual_add_l{l}"), spec.elem_us);
                }
                if pp_idx < spec.pp - 1 {
                    let peer = spec.rank_of(tp_idx, dp_idx, pp_idx + 1);
                    for m in 0..spec.microbatches {
                        b.p2p(&format!("SEND_fwd_mb{m}"), Direction::Send, peer, s);
                    }
                }

                // backward (mirrored)
                if pp_idx < spec.pp - 1 {
                    let peer = spec.rank_of(tp_idx, dp_idx, pp_idx + 1);
                    for m in 0..spec.microbatches {
                        b.p2p(&format!("RECV_bwd_mb{m}"), Direction::Recv, peer, s);
                    }
                }
                for l in (0..local_layers).rev() {
                    b.comp(&format!("BWD_ELEM_residual_add_l{l}"), spec.elem_us);
                    b.comp(&format!("BWD_GEMM_ffn2_l{l}"), spec.gemm_us);
                    b.comp(&format!("BWD_GEMM_ffn1_l{l}"), spec.gemm_us);
                    tp_comm(&mut b, &format!("bwd_mlp_l{l}"));
                    b.comp(&format!("BWD_GEMM_proj_l{l}"), spec.gemm_us);
                    b.comp(&format!("BWD_ATTN_l{l}"), spec.attn_us);
                    tp_comm(&mut b, &format!("bwd_attn_l{l}"));
                }
                if pp_idx > 0 {
                    let peer = spec.rank_of(tp_idx, dp_idx, pp_idx - 1);
                    for m in 0..spec.microbatches {
                        b.p2p(&format!("SEND_bwd_mb{m}"), Direction::Send, peer, s);
                    }
                }

                // data-parallel gradient buckets
                if spec.dp > 1 {
                    let g = dp_gid[&(tp_idx, pp_idx)];
                    for k in 0..spec.grad_buckets {
                        b.coll(&format!("AR_grad_bucket{k}"), CommType::AllReduce, g, s);
                    }
                }

                let mut t = b.trace;
                t.canonicalize();
                traces.push(t);
            }
        }
    }
    traces.sort_by_key(|t| t.rank);
    Ok(traces)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicroKind {
    Chain { n: u64 },
    Diamond,
    Fanout { k: u64 },
    CommPair { size_bytes: u64 },
}

pub fn generate_micro(kind: MicroKind) -> Result<Vec<ExecutionTrace>, GenError> {
    match kind {
        MicroKind::Chain { n } => {
            if n == 0 {
                return Err(GenError::InvalidSpec("chain needs n >= 1".into()));
            }
            let mut t = ExecutionTrace::new(0, 1);
            let mut clock = 0u64;
            for i in 1..=n {
                let mut node = TraceNode::new(i, format!("comp_{i}"), NodeType::Comp);
                node.duration_micros = Some(10);
                node.start_time_micros = Some(clock);
                clock += 10;
                if i > 1 {
                    node.data_deps = vec![i - 1];
                }
                t.nodes.push(node);
            }
            Ok(vec![t])
        }
        MicroKind::Diamond => {
            let mut t = ExecutionTrace::new(0, 1);
            let deps: [(u64, Vec<u64>, u64); 4] =
                [(1, vec![], 0), (2, vec![1], 10), (3, vec![1], 10), (4, vec![2, 3], 20)];
            for (id, d, start) in deps {
                let mut node = TraceNode::new(id, format!("comp_{id}"), NodeType::Comp);
                node.duration_micros = Some(10);
                node.start_time_micros = Some(start);
                node.data_deps = d;
                t.nodes.push(node);
            }
            Ok(vec![t])
        }
        MicroKind::Fanout { k } => {
            if k == 0 {
                return Err(GenError::InvalidSpec("fanout needs k >= 1".into()));
            }
            let mut t = ExecutionTrace::new(0, 1);
            let mut root = TraceNode::new(1, "comp_1", NodeType::Comp);
            root.duration_micros = Some(10);
            root.start_time_micros = Some(0);
            t.nodes.push(root);
            for i in 0..k {
                let id = 2 + i;
                let mut node = TraceNode::new(id, format!("comp_{id}"), NodeType::Comp);
                node.duration_micros = Some(10);
                node.start_time_micros = Some(10);
                node.data_deps = vec![1];
                t.nodes.push(node);
            }
            Ok(vec![t])
        }
        MicroKind::CommPair { size_bytes } => {
            if size_bytes == 0 {
                return Err(GenError::InvalidSpec("comm_pair needs size_bytes >= 1".into()));
            }
            let group = ProcessGroup { id: 0, ranks: vec![0, 1] };
            let mut traces = Vec::new();
            for rank in 0..2u64 {
                let mut t = ExecutionTrace::new(rank, 2);
                t.process_groups = vec![group.clone()];
                let mut n = TraceNode::new(1, "AR_pair", NodeType::CommColl);
                n.attrs.insert("comm_type".into(), json!("AllReduce"));
                n.attrs.insert("comm_group".into(), json!(0));
                n.attrs.insert("comm_size_bytes".into(), json!(size_bytes));
                t.nodes.push(n);
                traces.push(t);
            }
            Ok(traces)
        }
    }
}

/// Random DAG over nodes 1..=n: each pair (i, j), i < j, becomes a data edge
/// with probability p. Pair space is walked with geometric skips, so cost is
/// O(V + E) rather than O(V^2). Start times follow file order, which is a
/// topological order by construction.
pub fn generate_random_dag(n: u64, p: f64, seed: u64) -> Result<ExecutionTrace, GenError> {
    if n == 0 {
        return Err(GenError::InvalidSpec("n must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(GenError::InvalidSpec("p must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = ExecutionTrace::new(0, 1);
    let mut clock = 0u64;
    let mut durations = Vec::with_capacity(n as usize);
    for i in 1..=n {
        let dur = rng.gen_range(1..=100u64);
        let mut node = TraceNode::new(i, format!("comp_{i}"), NodeType::Comp);
        node.duration_micros = Some(dur);
        node.start_time_micros = Some(clock);
        clock += dur;
        durations.push(dur);
        t.nodes.push(node);
    }
    if p >= 1.0 {
        for j in 2..=n {
            t.nodes[(j - 1) as usize].data_deps = (1..j).collect();
        }
        return Ok(t);
    }
    if p > 0.0 {
        let ln_q = (1.0 - p).ln();
        for j in 2..=n {
            // geometric skip-sampling within row j (candidates i in 1..j)
            let row = j - 1;
            let mut pos = 0u64;
            loop {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                let skip = (u.ln() / ln_q).floor() as u64;
                pos = pos.saturating_add(skip);
                if pos >= row {
                    break;
                }
                t.nodes[(j - 1) as usize].data_deps.push(pos + 1);
                pos += 1;
            }
        }
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// Host/device fixture files

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    /// A calls B calls C, host only.
    CallStack,
    /// call → launch → kernel.
    LaunchKernel,
    /// one launch correlated to two kernels on one stream.
    MultiKernelLaunch,
    /// host op writes a buffer later read by a kernel.
    ProducerConsumer,
    /// two kernels on one stream.
    IntraStream,
    /// producer kernel on stream 0, consumer kernel on stream 1.
    InterStreamBuffer,
    /// kernels on two streams followed by a device-wide sync.
    DeviceSync,
    /// kernels on two streams, sync on stream 0 only.
    StreamSync,
    /// event recorded after a kernel on stream 1, waited on stream 2.
    RecordWait,
    /// launch with no matching device event.
    OrphanLaunch,
    /// device event with no matching launch.
    OrphanDevice,
    /// compute kernel feeding a collective on another stream.
    CommAfterCompute,
    /// two kernels writing one buffer with overlapping intervals.
    WriteWriteRace,
    /// wait on an event that was never recorded (link must fail).
    UnmatchedWait,
}

impl FixtureKind {
    pub const ALL: &'static [FixtureKind] = &[
        FixtureKind::CallStack,
        FixtureKind::LaunchKernel,
        FixtureKind::MultiKernelLaunch,
        FixtureKind::ProducerConsumer,
        FixtureKind::IntraStream,
        FixtureKind::InterStreamBuffer,
        FixtureKind::DeviceSync,
        FixtureKind::StreamSync,
        FixtureKind::RecordWait,
        FixtureKind::OrphanLaunch,
        FixtureKind::OrphanDevice,
        FixtureKind::CommAfterCompute,
        FixtureKind::WriteWriteRace,
    ];

    pub fn from_name(name: &str) -> Option<FixtureKind> {
        Some(match name {
            "call_stack" => FixtureKind::CallStack,
            "launch_kernel" => FixtureKind::LaunchKernel,
            "multi_kernel_launch" => FixtureKind::MultiKernelLaunch,
            "producer_consumer" => FixtureKind::ProducerConsumer,
            "intra_stream" => FixtureKind::IntraStream,
            "inter_stream_buffer" => FixtureKind::InterStreamBuffer,
            "device_sync" => FixtureKind::DeviceSync,
            "stream_sync" => FixtureKind::StreamSync,
            "record_wait" => FixtureKind::RecordWait,
            "orphan_launch" => FixtureKind::OrphanLaunch,
            "orphan_device" => FixtureKind::OrphanDevice,
            "comm_after_compute" => FixtureKind::CommAfterCompute,
            "write_write_race" => FixtureKind::WriteWriteRace,
            "unmatched_wait" => FixtureKind::UnmatchedWait,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FixtureKind::CallStack => "call_stack",
            FixtureKind::LaunchKernel => "launch_kernel",
            FixtureKind::MultiKernelLaunch => "multi_kernel_launch",
            FixtureKind::ProducerConsumer => "producer_consumer",
            FixtureKind::IntraStream => "intra_stream",
            FixtureKind::InterStreamBuffer => "inter_stream_buffer",
            FixtureKind::DeviceSync => "device_sync",
            FixtureKind::StreamSync => "stream_sync",
            FixtureKind::RecordWait => "record_wait",
            FixtureKind::OrphanLaunch => "orphan_launch",
            FixtureKind::OrphanDevice => "orphan_device",
            FixtureKind::CommAfterCompute => "comm_after_compute",
            FixtureKind::WriteWriteRace => "write_write_race",
            FixtureKind::UnmatchedWait => "unmatched_wait",
        }
    }
}

fn buf(tensor_id: u64, storage_id: u64) -> TensorRef {
    TensorRef {
        tensor_id,
        storage_id,
        storage_offset: 0,
        shape: vec![16],
        dtype: Dtype::Fp32,
        size_bytes: 64,
    }
}

fn call(id: u64, name: &str, parent: Option<u64>, ts: u64, dur: u64) -> HostOp {
    HostOp {
        id,
        name: name.into(),
        parent,
        kind: HostOpKind::Call,
        rf_id: None,
        sync_kind: None,
        stream: None,
        event_id: None,
        ts,
        dur,
        inputs: vec![],
        outputs: vec![],
    }
}

fn launch(id: u64, rf: u64, parent: Option<u64>, ts: u64) -> HostOp {
    HostOp {
        id,
        name: format!("launch_{rf}"),
        parent,
        kind: HostOpKind::KernelLaunch,
        rf_id: Some(rf),
        sync_kind: None,
        stream: None,
        event_id: None,
        ts,
        dur: 2,
        inputs: vec![],
        outputs: vec![],
    }
}

fn sync(id: u64, kind: SyncKind, stream: Option<u32>, event_id: Option<u64>, ts: u64) -> HostOp {
    HostOp {
        id,
        name: format!("sync_{id}"),
        parent: None,
        kind: HostOpKind::Sync,
        rf_id: None,
        sync_kind: Some(kind),
        stream,
        event_id,
        ts,
        dur: 1,
        inputs: vec![],
        outputs: vec![],
    }
}

fn kernel(correlation: u64, name: &str, stream: u32, ts: u64, dur: u64) -> DeviceEvent {
    DeviceEvent {
        correlation,
        name: name.into(),
        stream,
        ts,
        dur,
        kind: DeviceEventKind::Kernel,
        comm: None,
    }
}

/// Paired host/device trace files whose linked graph is known in closed form.
pub fn host_device_fixture(kind: FixtureKind) -> (Vec<u8>, Vec<u8>) {
    let (ops, events): (Vec<HostOp>, Vec<DeviceEvent>) = match kind {
        FixtureKind::CallStack => (
            vec![call(1, "A", None, 0, 30), call(2, "B", Some(1), 5, 20), call(3, "C", Some(2), 8, 10)],
            vec![],
        ),
        FixtureKind::LaunchKernel => (
            vec![call(1, "A", None, 0, 20), launch(2, 7, Some(1), 5)],
            vec![kernel(7, "K", 0, 100, 50)],
        ),
        FixtureKind::MultiKernelLaunch => (
            vec![launch(1, 7, None, 0)],
            vec![kernel(7, "K1", 0, 100, 10), kernel(7, "K2", 0, 120, 10)],
        ),
        FixtureKind::ProducerConsumer => {
            let mut h = call(1, "H_write", None, 0, 10);
            h.outputs = vec![buf(1, 5)];
            let mut l = launch(2, 7, None, 12);
            l.inputs = vec![buf(1, 5)];
            (vec![h, l], vec![kernel(7, "K_read", 0, 100, 20)])
        }
        FixtureKind::IntraStream => (
            vec![launch(1, 7, None, 0), launch(2, 8, None, 5)],
            vec![kernel(7, "K1", 3, 100, 20), kernel(8, "K2", 3, 130, 20)],
        ),
        FixtureKind::InterStreamBuffer => {
            let mut l1 = launch(1, 7, None, 0);
            l1.outputs = vec![buf(1, 5)];
            let mut l2 = launch(2, 8, None, 5);
            l2.inputs = vec![buf(1, 5)];
            (
                vec![l1, l2],
                vec![kernel(7, "K1", 0, 100, 20), kernel(8, "K2", 1, 140, 20)],
            )
        }
        FixtureKind::DeviceSync => (
            vec![
                launch(1, 7, None, 0),
                launch(2, 8, None, 2),
                launch(3, 9, None, 4),
                sync(4, SyncKind::Device, None, None, 200),
            ],
            vec![
                kernel(7, "K1", 0, 100, 10),
                kernel(8, "K2", 0, 120, 10),
                kernel(9, "K3", 1, 110, 10),
            ],
        ),
        FixtureKind::StreamSync => (
            vec![
                launch(1, 7, None, 0),
                launch(2, 8, None, 2),
                sync(3, SyncKind::Stream, Some(0), None, 200),
            ],
            vec![kernel(7, "K1", 0, 100, 10), kernel(8, "K2", 1, 110, 10)],
        ),
        FixtureKind::RecordWait => (
            vec![
                launch(1, 7, None, 0),
                sync(2, SyncKind::EventRecord, Some(1), Some(42), 150),
                sync(3, SyncKind::EventWait, Some(2), Some(42), 160),
                launch(4, 8, None, 165),
            ],
            vec![kernel(7, "K1", 1, 100, 10), kernel(8, "K3", 2, 200, 10)],
        ),
        FixtureKind::OrphanLaunch => (
            vec![call(1, "A", None, 0, 20), launch(2, 7, Some(1), 5)],
            vec![],
        ),
        FixtureKind::OrphanDevice => (
            vec![call(1, "A", None, 0, 20)],
            vec![kernel(9, "K_orphan", 0, 100, 10)],
        ),
        FixtureKind::CommAfterCompute => {
            let mut l1 = launch(1, 7, None, 0);
            l1.outputs = vec![buf(1, 5)];
            let mut l2 = launch(2, 8, None, 5);
            l2.inputs = vec![buf(1, 5)];
            let comm = DeviceEvent {
                correlation: 8,
                name: "nccl_all_reduce".into(),
                stream: 1,
                ts: 140,
                dur: 30,
                kind: DeviceEventKind::Comm,
                comm: Some(CommAttrs {
                    comm_type: CommType::AllReduce,
                    comm_group: Some(0),
                    comm_tag: None,
                    comm_size_bytes: 64,
                    comm_peer: None,
                    direction: None,
                    tensor_ids: vec![1],
                }),
            };
            (vec![l1, l2], vec![kernel(7, "G", 0, 100, 20), comm])
        }
        FixtureKind::WriteWriteRace => {
            let mut l1 = launch(1, 7, None, 0);
            l1.outputs = vec![buf(1, 5)];
            let mut l2 = launch(2, 8, None, 5);
            l2.outputs = vec![buf(2, 5)];
            (
                vec![l1, l2],
                // overlapping on different streams, same storage+offset
                vec![kernel(7, "W1", 0, 100, 50), kernel(8, "W2", 1, 120, 50)],
            )
        }
        FixtureKind::UnmatchedWait => (
            vec![
                launch(1, 7, None, 0),
                sync(2, SyncKind::EventWait, Some(0), Some(42), 150),
            ],
            vec![kernel(7, "K1", 0, 100, 10)],
        ),
    };
    let host = serde_json::to_vec(&serde_json::json!({"rank": 0, "ops": ops})).unwrap();
    let device = serde_json::to_vec(&serde_json::json!({"rank": 0, "events": events})).unwrap();
    (host, device)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::{detect_cycle, linked_from_trace};
    use crate::schema::validate_trace;

    #[test]
    fn transformer_counts_match_closed_forms() {
        let spec = GenSpec { layers: 4, tp: 8, ..Default::default() };
        let traces = generate_transformer(&spec).unwrap();
        assert_eq!(traces.len(), 8);
        for t in &traces {
            let ar = t
                .nodes
                .iter()
                .filter(|n| n.comm_type() == Some(CommType::AllReduce))
                .count() as u64;
            assert_eq!(ar, 16); // 4·L with tp>1, pp=1
            assert_eq!(ar, spec.expected_allreduce(t.rank));
            assert_eq!(
                t.nodes.iter().filter(|n| n.node_type == NodeType::CommSend).count(),
                0
            );
        }
    }

    #[test]
    fn dp_grad_buckets_only() {
        let spec = GenSpec { layers: 4, dp: 2, grad_buckets: 4, ..Default::default() };
        let traces = generate_transformer(&spec).unwrap();
        for t in &traces {
            let ar = t
                .nodes
                .iter()
                .filter(|n| n.comm_type() == Some(CommType::AllReduce))
                .count() as u64;
            assert_eq!(ar, 4);
        }
    }

    #[test]
    fn pp_send_recv_counts() {
        let spec = GenSpec { layers: 4, pp: 2, microbatches: 3, ..Default::default() };
        let traces = generate_transformer(&spec).unwrap();
        let stage0 = &traces[0];
        let sends =
            stage0.nodes.iter().filter(|n| n.node_type == NodeType::CommSend).count() as u64;
        let recvs =
            stage0.nodes.iter().filter(|n| n.node_type == NodeType::CommRecv).count() as u64;
        assert_eq!(sends, 3); // forward only for stage 0
        assert_eq!(recvs, 3); // backward only for stage 0
        assert_eq!(sends, spec.expected_send(0));
    }

    #[test]
    fn generated_traces_are_valid_and_acyclic() {
        let spec = GenSpec { layers: 4, tp: 2, dp: 2, pp: 2, microbatches: 2, grad_buckets: 2, ..Default::default() };
        for t in generate_transformer(&spec).unwrap() {
            let r = validate_trace(&t);
            assert!(r.is_valid(), "{:?}", r.errors);
            assert_eq!(detect_cycle(&linked_from_trace(&t)), None);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GenSpec { layers: 2, tp: 2, ..Default::default() };
        let a = generate_transformer(&spec).unwrap();
        let b = generate_transformer(&spec).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(
                crate::schema::serialize_trace(x).unwrap(),
                crate::schema::serialize_trace(y).unwrap()
            );
        }
    }

    #[test]
    fn micro_shapes() {
        let chain = &generate_micro(MicroKind::Chain { n: 3 }).unwrap()[0];
        assert_eq!(chain.nodes.len(), 3);
        assert_eq!(chain.nodes.iter().map(|n| n.data_deps.len()).sum::<usize>(), 2);

        let fan = &generate_micro(MicroKind::Fanout { k: 4 }).unwrap()[0];
        assert_eq!(fan.nodes.len(), 5);
        assert_eq!(fan.nodes.iter().map(|n| n.data_deps.len()).sum::<usize>(), 4);

        let pair = generate_micro(MicroKind::CommPair { size_bytes: 400 }).unwrap();
        assert_eq!(pair.len(), 2);
        assert!(validate_trace(&pair[0]).is_valid());
        assert!(validate_trace(&pair[1]).is_valid());
    }

    #[test]
    fn random_dag_single_node_and_complete() {
        let t = generate_random_dag(1, 0.5, 1).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert!(t.nodes[0].data_deps.is_empty());

        let t = generate_random_dag(5, 1.0, 1).unwrap();
        let edges: usize = t.nodes.iter().map(|n| n.data_deps.len()).sum();
        assert_eq!(edges, 10);
    }

    #[test]
    fn random_dag_edge_count_within_binomial_bound() {
        let n = 10_000u64;
        let p = 0.001;
        let t = generate_random_dag(n, p, 42).unwrap();
        let edges: f64 = t.nodes.iter().map(|n| n.data_deps.len()).sum::<usize>() as f64;
        let trials = (n * (n - 1) / 2) as f64;
        let mean = p * trials;
        let sigma = (trials * p * (1.0 - p)).sqrt();
        assert!(
            (edges - mean).abs() <= 4.0 * sigma,
            "edges {edges} outside 4σ of {mean} ± {sigma}"
        );
    }

    #[test]
    fn random_dag_is_valid_and_deterministic() {
        let a = generate_random_dag(500, 0.01, 7).unwrap();
        let b = generate_random_dag(500, 0.01, 7).unwrap();
        assert_eq!(a, b);
        assert!(validate_trace(&a).is_valid());
        assert_eq!(detect_cycle(&linked_from_trace(&a)), None);
    }

    #[test]
    fn fixtures_parse() {
        for kind in FixtureKind::ALL {
            let (h, d) = host_device_fixture(*kind);
            crate::ingest::parse_host_trace(&h).unwrap();
            crate::ingest::parse_device_trace(&d).unwrap();
        }
    }
}
