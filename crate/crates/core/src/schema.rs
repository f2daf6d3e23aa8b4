//! Canonical execution-trace data model and its bit-exact JSON form.
//!
//! A trace is one rank's DAG of typed operations (compute / memory /
//! communication) plus the tensor, storage, and process-group tables the
//! nodes reference. The canonical byte form sorts object keys
//! lexicographically, sorts every id-keyed array ascending, deduplicates
//! dependency lists, uses no insignificant whitespace, and ends with a
//! single newline.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Extensible per-node metadata. Values keep whatever JSON shape the
/// producer wrote; nested objects serialize with sorted keys.
pub type AttrMap = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeType {
    #[serde(rename = "COMP")]
    Comp,
    #[serde(rename = "MEM_LOAD")]
    MemLoad,
    #[serde(rename = "MEM_STORE")]
    MemStore,
    #[serde(rename = "COMM_COLL")]
    CommColl,
    #[serde(rename = "COMM_SEND")]
    CommSend,
    #[serde(rename = "COMM_RECV")]
    CommRecv,
}

impl NodeType {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeType::Comp => "COMP",
            NodeType::MemLoad => "MEM_LOAD",
            NodeType::MemStore => "MEM_STORE",
            NodeType::CommColl => "COMM_COLL",
            NodeType::CommSend => "COMM_SEND",
            NodeType::CommRecv => "COMM_RECV",
        }
    }

    pub fn from_str(s: &str) -> Option<NodeType> {
        Some(match s {
            "COMP" => NodeType::Comp,
            "MEM_LOAD" => NodeType::MemLoad,
            "MEM_STORE" => NodeType::MemStore,
            "COMM_COLL" => NodeType::CommColl,
            "COMM_SEND" => NodeType::CommSend,
            "COMM_RECV" => NodeType::CommRecv,
            _ => return None,
        })
    }

    pub fn is_comm(&self) -> bool {
        matches!(self, NodeType::CommColl | NodeType::CommSend | NodeType::CommRecv)
    }

    /// Compute-side for breakdown purposes: COMP and MEM_*.
    pub fn is_compute(&self) -> bool {
        !self.is_comm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CommType {
    AllReduce,
    AllGather,
    ReduceScatter,
    Broadcast,
    PointToPoint,
    All2All,
    Barrier,
}

impl CommType {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommType::AllReduce => "AllReduce",
            CommType::AllGather => "AllGather",
            CommType::ReduceScatter => "ReduceScatter",
            CommType::Broadcast => "Broadcast",
            CommType::PointToPoint => "PointToPoint",
            CommType::All2All => "All2All",
            CommType::Barrier => "Barrier",
        }
    }

    pub fn from_str(s: &str) -> Option<CommType> {
        Some(match s {
            "AllReduce" => CommType::AllReduce,
            "AllGather" => CommType::AllGather,
            "ReduceScatter" => CommType::ReduceScatter,
            "Broadcast" => CommType::Broadcast,
            "PointToPoint" => CommType::PointToPoint,
            "All2All" => CommType::All2All,
            "Barrier" => CommType::Barrier,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "fp16")]
    Fp16,
    #[serde(rename = "bf16")]
    Bf16,
    #[serde(rename = "fp32")]
    Fp32,
    #[serde(rename = "int8")]
    Int8,
    #[serde(rename = "int32")]
    Int32,
    #[serde(rename = "int64")]
    Int64,
}

impl Dtype {
    pub fn width_bytes(&self) -> u64 {
        match self {
            Dtype::Fp16 | Dtype::Bf16 => 2,
            Dtype::Fp32 | Dtype::Int32 => 4,
            Dtype::Int64 => 8,
            Dtype::Int8 => 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Dtype::Fp16 => "fp16",
            Dtype::Bf16 => "bf16",
            Dtype::Fp32 => "fp32",
            Dtype::Int8 => "int8",
            Dtype::Int32 => "int32",
            Dtype::Int64 => "int64",
        }
    }

    pub fn from_str(s: &str) -> Option<Dtype> {
        Some(match s {
            "fp16" => Dtype::Fp16,
            "bf16" => Dtype::Bf16,
            "fp32" => Dtype::Fp32,
            "int8" => Dtype::Int8,
            "int32" => Dtype::Int32,
            "int64" => Dtype::Int64,
            _ => return None,
        })
    }
}

// Struct fields are declared in lexicographic key order so that derived
// Serialize emits canonically sorted objects without an intermediate Value.

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceNode {
    pub attrs: AttrMap,
    pub ctrl_deps: Vec<u64>,
    pub data_deps: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_micros: Option<u64>,
    pub id: u64,
    pub inputs: Vec<u64>,
    pub name: String,
    pub outputs: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_time_micros: Option<u64>,
    #[serde(rename = "type")]
    pub node_type: NodeType,
}

impl TraceNode {
    pub fn new(id: u64, name: impl Into<String>, node_type: NodeType) -> Self {
        TraceNode {
            attrs: AttrMap::new(),
            ctrl_deps: Vec::new(),
            data_deps: Vec::new(),
            duration_micros: None,
            id,
            inputs: Vec::new(),
            name: name.into(),
            outputs: Vec::new(),
            start_time_micros: None,
            node_type,
        }
    }

    fn attr_u64(&self, key: &str) -> Option<u64> {
        self.attrs.get(key).and_then(Value::as_u64)
    }

    fn attr_str(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).and_then(Value::as_str)
    }

    pub fn comm_type(&self) -> Option<CommType> {
        self.attr_str("comm_type").and_then(CommType::from_str)
    }

    pub fn comm_group(&self) -> Option<u64> {
        self.attr_u64("comm_group")
    }

    pub fn comm_size_bytes(&self) -> Option<u64> {
        self.attr_u64("comm_size_bytes")
    }

    pub fn comm_peer(&self) -> Option<u64> {
        self.attr_u64("comm_peer")
    }

    pub fn comm_tag(&self) -> Option<&str> {
        self.attr_str("comm_tag")
    }

    pub fn end_time_micros(&self) -> Option<u64> {
        match (self.start_time_micros, self.duration_micros) {
            (Some(s), Some(d)) => Some(s + d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorDesc {
    pub dtype: Dtype,
    pub id: u64,
    pub shape: Vec<i64>,
    pub size_bytes: u64,
    pub storage_id: u64,
    pub storage_offset: u64,
    pub stride: Vec<i64>,
}

impl TensorDesc {
    /// Byte extent touched by this tensor within its storage, from the
    /// storage offset onward. Any zero-length dimension means nothing is
    /// touched; an empty shape is a scalar occupying one element.
    pub fn extent_bytes(&self) -> u64 {
        if self.shape.iter().any(|&d| d == 0) {
            return 0;
        }
        let mut last: i64 = 0;
        for (d, s) in self.shape.iter().zip(self.stride.iter()) {
            last += (d - 1) * s;
        }
        (last as u64 + 1) * self.dtype.width_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageDesc {
    pub device: String,
    pub id: u64,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessGroup {
    pub id: u64,
    pub ranks: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionTrace {
    #[serde(skip_serializing_if = "AttrMap::is_empty")]
    pub attrs: AttrMap,
    pub nodes: Vec<TraceNode>,
    pub num_ranks: u64,
    pub process_groups: Vec<ProcessGroup>,
    pub rank: u64,
    pub schema_version: String,
    pub storages: Vec<StorageDesc>,
    pub tensors: Vec<TensorDesc>,
}

pub const SCHEMA_VERSION: &str = "1.0";

impl ExecutionTrace {
    pub fn new(rank: u64, num_ranks: u64) -> Self {
        ExecutionTrace {
            attrs: AttrMap::new(),
            nodes: Vec::new(),
            num_ranks,
            process_groups: Vec::new(),
            rank,
            schema_version: SCHEMA_VERSION.to_string(),
            storages: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn node(&self, id: u64) -> Option<&TraceNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// In-place canonicalization: id-sorted tables, sorted + deduped deps.
    pub fn canonicalize(&mut self) {
        self.nodes.sort_by_key(|n| n.id);
        self.tensors.sort_by_key(|t| t.id);
        self.storages.sort_by_key(|s| s.id);
        self.process_groups.sort_by_key(|g| g.id);
        for g in &mut self.process_groups {
            g.ranks.sort_unstable();
            g.ranks.dedup();
        }
        for n in &mut self.nodes {
            n.ctrl_deps.sort_unstable();
            n.ctrl_deps.dedup();
            n.data_deps.sort_unstable();
            n.data_deps.dedup();
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("MALFORMED_JSON: {0}")]
    MalformedJson(String),
    #[error("MISSING_FIELD: {0}")]
    MissingField(String),
    #[error("TYPE_MISMATCH: {0}")]
    TypeMismatch(String),
    #[error("UNKNOWN_NODE_TYPE: {0}")]
    UnknownNodeType(String),
    #[error("INVALID_TRACE: {0} validation error(s), first: {1}")]
    InvalidTrace(usize, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum IssueCode {
    DanglingDep,
    SelfDep,
    DuplicateId,
    DanglingTensor,
    DanglingStorage,
    MissingCommAttr,
    UnknownGroup,
    StorageOverflow,
    RankOutOfRange,
    GroupRanksInvalid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub code: IssueCode,
    pub subject: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Parsing

fn as_obj<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, SchemaError> {
    v.as_object()
        .ok_or_else(|| SchemaError::TypeMismatch(format!("{path}: expected object")))
}

fn as_arr<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, SchemaError> {
    v.as_array()
        .ok_or_else(|| SchemaError::TypeMismatch(format!("{path}: expected array")))
}

fn req<'a>(m: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, SchemaError> {
    m.get(key)
        .ok_or_else(|| SchemaError::MissingField(format!("{path}.{key}")))
}

fn req_u64(m: &Map<String, Value>, key: &str, path: &str) -> Result<u64, SchemaError> {
    req(m, key, path)?
        .as_u64()
        .ok_or_else(|| SchemaError::TypeMismatch(format!("{path}.{key}: expected unsigned integer")))
}

fn req_str<'a>(m: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a str, SchemaError> {
    req(m, key, path)?
        .as_str()
        .ok_or_else(|| SchemaError::TypeMismatch(format!("{path}.{key}: expected string")))
}

fn opt_u64(m: &Map<String, Value>, key: &str, path: &str) -> Result<Option<u64>, SchemaError> {
    match m.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| SchemaError::TypeMismatch(format!("{path}.{key}: expected unsigned integer"))),
    }
}

fn u64_list(m: &Map<String, Value>, key: &str, path: &str) -> Result<Vec<u64>, SchemaError> {
    let Some(v) = m.get(key) else { return Ok(Vec::new()) };
    let arr = as_arr(v, &format!("{path}.{key}"))?;
    arr.iter()
        .enumerate()
        .map(|(i, e)| {
            e.as_u64()
                .ok_or_else(|| SchemaError::TypeMismatch(format!("{path}.{key}[{i}]: expected unsigned integer")))
        })
        .collect()
}

fn i64_list(m: &Map<String, Value>, key: &str, path: &str) -> Result<Vec<i64>, SchemaError> {
    let arr = as_arr(req(m, key, path)?, &format!("{path}.{key}"))?;
    arr.iter()
        .enumerate()
        .map(|(i, e)| {
            e.as_i64()
                .ok_or_else(|| SchemaError::TypeMismatch(format!("{path}.{key}[{i}]: expected integer")))
        })
        .collect()
}

const NODE_KEYS: &[&str] = &[
    "id", "name", "type", "ctrl_deps", "data_deps", "start_time_micros", "duration_micros",
    "inputs", "outputs", "attrs",
];

const TOP_KEYS: &[&str] = &[
    "schema_version", "rank", "num_ranks", "process_groups", "tensors", "storages", "nodes",
    "attrs",
];

fn parse_node(v: &Value, path: &str) -> Result<TraceNode, SchemaError> {
    let m = as_obj(v, path)?;
    let id = req_u64(m, "id", path)?;
    let name = req_str(m, "name", path)?.to_string();
    let ty = req_str(m, "type", path)?;
    let node_type =
        NodeType::from_str(ty).ok_or_else(|| SchemaError::UnknownNodeType(ty.to_string()))?;
    let mut attrs = AttrMap::new();
    if let Some(a) = m.get("attrs") {
        let am = as_obj(a, &format!("{path}.attrs"))?;
        for (k, v) in am {
            attrs.insert(k.clone(), v.clone());
        }
    }
    // Keys outside the schema are kept verbatim for forward compatibility.
    for (k, v) in m {
        if !NODE_KEYS.contains(&k.as_str()) {
            attrs.insert(k.clone(), v.clone());
        }
    }
    Ok(TraceNode {
        attrs,
        ctrl_deps: u64_list(m, "ctrl_deps", path)?,
        data_deps: u64_list(m, "data_deps", path)?,
        duration_micros: opt_u64(m, "duration_micros", path)?,
        id,
        inputs: u64_list(m, "inputs", path)?,
        name,
        outputs: u64_list(m, "outputs", path)?,
        start_time_micros: opt_u64(m, "start_time_micros", path)?,
        node_type,
    })
}

fn parse_tensor(v: &Value, path: &str) -> Result<TensorDesc, SchemaError> {
    let m = as_obj(v, path)?;
    let dt = req_str(m, "dtype", path)?;
    let dtype = Dtype::from_str(dt)
        .ok_or_else(|| SchemaError::TypeMismatch(format!("{path}.dtype: unknown dtype {dt:?}")))?;
    Ok(TensorDesc {
        dtype,
        id: req_u64(m, "id", path)?,
        shape: i64_list(m, "shape", path)?,
        size_bytes: req_u64(m, "size_bytes", path)?,
        storage_id: req_u64(m, "storage_id", path)?,
        storage_offset: req_u64(m, "storage_offset", path)?,
        stride: i64_list(m, "stride", path)?,
    })
}

fn parse_storage(v: &Value, path: &str) -> Result<StorageDesc, SchemaError> {
    let m = as_obj(v, path)?;
    Ok(StorageDesc {
        device: req_str(m, "device", path)?.to_string(),
        id: req_u64(m, "id", path)?,
        size_bytes: req_u64(m, "size_bytes", path)?,
    })
}

fn parse_group(v: &Value, path: &str) -> Result<ProcessGroup, SchemaError> {
    let m = as_obj(v, path)?;
    Ok(ProcessGroup {
        id: req_u64(m, "id", path)?,
        ranks: {
            let arr = as_arr(req(m, "ranks", path)?, &format!("{path}.ranks"))?;
            arr.iter()
                .enumerate()
                .map(|(i, e)| {
                    e.as_u64().ok_or_else(|| {
                        SchemaError::TypeMismatch(format!("{path}.ranks[{i}]: expected unsigned integer"))
                    })
                })
                .collect::<Result<_, _>>()?
        },
    })
}

/// Parse a trace document. Never panics on arbitrary bytes: anything that is
/// not well-formed JSON yields `MalformedJson`, structural problems yield the
/// typed errors.
pub fn parse_trace(bytes: &[u8]) -> Result<ExecutionTrace, SchemaError> {
    let v: Value =
        serde_json::from_slice(bytes).map_err(|e| SchemaError::MalformedJson(e.to_string()))?;
    let m = as_obj(&v, "$")?;
    let schema_version = req_str(m, "schema_version", "$")?.to_string();
    let rank = req_u64(m, "rank", "$")?;
    let num_ranks = req_u64(m, "num_ranks", "$")?;

    let mut attrs = AttrMap::new();
    if let Some(a) = m.get("attrs") {
        for (k, v) in as_obj(a, "$.attrs")? {
            attrs.insert(k.clone(), v.clone());
        }
    }
    for (k, v) in m {
        if !TOP_KEYS.contains(&k.as_str()) {
            attrs.insert(k.clone(), v.clone());
        }
    }

    let groups = as_arr(req(m, "process_groups", "$")?, "$.process_groups")?
        .iter()
        .enumerate()
        .map(|(i, e)| parse_group(e, &format!("process_groups[{i}]")))
        .collect::<Result<_, _>>()?;
    let tensors = as_arr(req(m, "tensors", "$")?, "$.tensors")?
        .iter()
        .enumerate()
        .map(|(i, e)| parse_tensor(e, &format!("tensors[{i}]")))
        .collect::<Result<_, _>>()?;
    let storages = as_arr(req(m, "storages", "$")?, "$.storages")?
        .iter()
        .enumerate()
        .map(|(i, e)| parse_storage(e, &format!("storages[{i}]")))
        .collect::<Result<_, _>>()?;
    let nodes = as_arr(req(m, "nodes", "$")?, "$.nodes")?
        .iter()
        .enumerate()
        .map(|(i, e)| parse_node(e, &format!("nodes[{i}]")))
        .collect::<Result<_, _>>()?;

    Ok(ExecutionTrace {
        attrs,
        nodes,
        num_ranks,
        process_groups: groups,
        rank,
        schema_version,
        storages,
        tensors,
    })
}

/// Canonical byte serialization. The trace must be structurally valid.
pub fn serialize_trace(trace: &ExecutionTrace) -> Result<Vec<u8>, SchemaError> {
    let report = validate_trace(trace);
    if !report.is_valid() {
        let first = &report.errors[0];
        return Err(SchemaError::InvalidTrace(
            report.errors.len(),
            format!("{:?} on {}: {}", first.code, first.subject, first.message),
        ));
    }
    let mut t = trace.clone();
    t.canonicalize();
    let mut out = serde_json::to_vec(&t).expect("trace serialization cannot fail");
    out.push(b'\n');
    Ok(out)
}

// ---------------------------------------------------------------------------
// Validation

pub fn validate_trace(trace: &ExecutionTrace) -> ValidationReport {
    let mut report = ValidationReport::default();
    let err = |code, subject, message: String| Issue { code, subject, message };

    let mut node_ids: HashSet<u64> = HashSet::with_capacity(trace.nodes.len());
    for n in &trace.nodes {
        if !node_ids.insert(n.id) {
            report.errors.push(err(IssueCode::DuplicateId, n.id, format!("duplicate node id {}", n.id)));
        }
    }
    let mut tensor_ids: HashMap<u64, &TensorDesc> = HashMap::new();
    for t in &trace.tensors {
        if tensor_ids.insert(t.id, t).is_some() {
            report.errors.push(err(IssueCode::DuplicateId, t.id, format!("duplicate tensor id {}", t.id)));
        }
    }
    let mut storage_ids: HashMap<u64, &StorageDesc> = HashMap::new();
    for s in &trace.storages {
        if storage_ids.insert(s.id, s).is_some() {
            report.errors.push(err(IssueCode::DuplicateId, s.id, format!("duplicate storage id {}", s.id)));
        }
    }
    let mut group_ids: HashMap<u64, &ProcessGroup> = HashMap::new();
    for g in &trace.process_groups {
        if group_ids.insert(g.id, g).is_some() {
            report.errors.push(err(IssueCode::DuplicateId, g.id, format!("duplicate group id {}", g.id)));
        }
    }

    if trace.num_ranks == 0 || trace.rank >= trace.num_ranks {
        report.errors.push(err(
            IssueCode::RankOutOfRange,
            trace.rank,
            format!("rank {} out of range for num_ranks {}", trace.rank, trace.num_ranks),
        ));
    }

    for g in &trace.process_groups {
        let mut seen = HashSet::new();
        if g.ranks.is_empty() {
            report.errors.push(err(IssueCode::GroupRanksInvalid, g.id, "group has no ranks".into()));
        }
        for &r in &g.ranks {
            if r >= trace.num_ranks {
                report.errors.push(err(
                    IssueCode::GroupRanksInvalid,
                    g.id,
                    format!("group rank {} >= num_ranks {}", r, trace.num_ranks),
                ));
            }
            if !seen.insert(r) {
                report.errors.push(err(IssueCode::GroupRanksInvalid, g.id, format!("duplicate rank {r} in group")));
            }
        }
    }

    for t in &trace.tensors {
        if t.shape.len() != t.stride.len() {
            report.errors.push(err(
                IssueCode::StorageOverflow,
                t.id,
                format!("tensor {}: shape/stride length mismatch", t.id),
            ));
            continue;
        }
        match storage_ids.get(&t.storage_id) {
            None => report.errors.push(err(
                IssueCode::DanglingStorage,
                t.id,
                format!("tensor {} references missing storage {}", t.id, t.storage_id),
            )),
            Some(s) => {
                let need = t.storage_offset * t.dtype.width_bytes() + t.extent_bytes();
                if need > s.size_bytes {
                    report.errors.push(err(
                        IssueCode::StorageOverflow,
                        t.id,
                        format!("tensor {} needs {} bytes past offset, storage {} has {}", t.id, need, s.id, s.size_bytes),
                    ));
                }
            }
        }
    }

    for n in &trace.nodes {
        for dep in n.ctrl_deps.iter().chain(n.data_deps.iter()) {
            if *dep == n.id {
                report.errors.push(err(IssueCode::SelfDep, n.id, format!("node {} depends on itself", n.id)));
            } else if !node_ids.contains(dep) {
                report.errors.push(err(
                    IssueCode::DanglingDep,
                    n.id,
                    format!("node {} depends on missing node {}", n.id, dep),
                ));
            }
        }
        for t in n.inputs.iter().chain(n.outputs.iter()) {
            if !tensor_ids.contains_key(t) {
                report.errors.push(err(
                    IssueCode::DanglingTensor,
                    n.id,
                    format!("node {} references missing tensor {}", n.id, t),
                ));
            }
        }
        if n.node_type.is_comm() {
            match n.comm_type() {
                None => report.errors.push(err(
                    IssueCode::MissingCommAttr,
                    n.id,
                    format!("comm node {} lacks a valid comm_type attr", n.id),
                )),
                Some(ct) => match n.comm_size_bytes() {
                    None => report.errors.push(err(
                        IssueCode::MissingCommAttr,
                        n.id,
                        format!("comm node {} lacks comm_size_bytes attr", n.id),
                    )),
                    Some(0) if ct != CommType::Barrier => report.errors.push(err(
                        IssueCode::MissingCommAttr,
                        n.id,
                        format!("comm node {}: comm_size_bytes must be > 0 for {}", n.id, ct.as_str()),
                    )),
                    _ => {}
                },
            }
            if n.node_type == NodeType::CommColl {
                match n.comm_group() {
                    None => report.errors.push(err(
                        IssueCode::MissingCommAttr,
                        n.id,
                        format!("COMM_COLL node {} lacks comm_group attr", n.id),
                    )),
                    Some(g) => match group_ids.get(&g) {
                        None => report.errors.push(err(
                            IssueCode::UnknownGroup,
                            n.id,
                            format!("node {} references missing group {}", n.id, g),
                        )),
                        Some(pg) => {
                            if !pg.ranks.contains(&trace.rank) {
                                report.errors.push(err(
                                    IssueCode::GroupRanksInvalid,
                                    g,
                                    format!("group {} referenced by node {} does not contain rank {}", g, n.id, trace.rank),
                                ));
                            }
                        }
                    },
                }
            }
            if matches!(n.node_type, NodeType::CommSend | NodeType::CommRecv)
                && n.comm_peer().is_none()
            {
                report.warnings.push(err(
                    IssueCode::MissingCommAttr,
                    n.id,
                    format!("{} node {} has no comm_peer attr; it cannot be paired", n.node_type.as_str(), n.id),
                ));
            }
        }
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const MINIMAL: &str = r#"{"schema_version":"1.0","rank":0,"num_ranks":1,"process_groups":[],"tensors":[],"storages":[],"nodes":[]}"#;

    #[test]
    fn parses_minimal_document() {
        let t = parse_trace(MINIMAL.as_bytes()).unwrap();
        assert_eq!(t.rank, 0);
        assert_eq!(t.num_ranks, 1);
        assert!(t.nodes.is_empty());
    }

    #[test]
    fn missing_node_id_reports_path() {
        let doc = r#"{"schema_version":"1.0","rank":0,"num_ranks":1,"process_groups":[],"tensors":[],"storages":[],"nodes":[{"name":"x","type":"COMP"}]}"#;
        assert_eq!(
            parse_trace(doc.as_bytes()).unwrap_err(),
            SchemaError::MissingField("nodes[0].id".into())
        );
    }

    #[test]
    fn data_dep_becomes_edge() {
        let doc = r#"{"schema_version":"1.0","rank":0,"num_ranks":1,"process_groups":[],"tensors":[],"storages":[],"nodes":[
            {"id":1,"name":"a","type":"COMP","ctrl_deps":[],"data_deps":[],"inputs":[],"outputs":[],"attrs":{}},
            {"id":2,"name":"b","type":"COMP","ctrl_deps":[],"data_deps":[1],"inputs":[],"outputs":[],"attrs":{}}]}"#;
        let t = parse_trace(doc.as_bytes()).unwrap();
        assert_eq!(t.nodes[1].data_deps, vec![1]);
        assert!(t.nodes[0].data_deps.is_empty());
    }

    #[test]
    fn unknown_node_type_rejected() {
        let doc = r#"{"schema_version":"1.0","rank":0,"num_ranks":1,"process_groups":[],"tensors":[],"storages":[],"nodes":[{"id":1,"name":"a","type":"FOO"}]}"#;
        assert_eq!(
            parse_trace(doc.as_bytes()).unwrap_err(),
            SchemaError::UnknownNodeType("FOO".into())
        );
    }

    #[test]
    fn unknown_keys_preserved_in_attrs() {
        let doc = r#"{"schema_version":"1.0","rank":0,"num_ranks":1,"process_groups":[],"tensors":[],"storages":[],"custom_top":7,"nodes":[{"id":1,"name":"a","type":"COMP","vendor_hint":"x"}]}"#;
        let t = parse_trace(doc.as_bytes()).unwrap();
        assert_eq!(t.attrs.get("custom_top"), Some(&json!(7)));
        assert_eq!(t.nodes[0].attrs.get("vendor_hint"), Some(&json!("x")));
    }

    #[test]
    fn canonical_fixpoint_on_minimal() {
        let t = parse_trace(MINIMAL.as_bytes()).unwrap();
        let s1 = serialize_trace(&t).unwrap();
        let t2 = parse_trace(&s1).unwrap();
        let s2 = serialize_trace(&t2).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t, t2);
    }

    #[test]
    fn canonical_ordering_and_dep_dedup() {
        let mut t = ExecutionTrace::new(0, 1);
        let mut n2 = TraceNode::new(2, "b", NodeType::Comp);
        n2.ctrl_deps = vec![3, 1, 1];
        t.nodes.push(n2);
        t.nodes.push(TraceNode::new(1, "a", NodeType::Comp));
        t.nodes.push(TraceNode::new(3, "c", NodeType::Comp));
        let bytes = serialize_trace(&t).unwrap();
        let back = parse_trace(&bytes).unwrap();
        assert_eq!(back.nodes[0].id, 1);
        assert_eq!(back.nodes[1].id, 2);
        assert_eq!(back.nodes[1].ctrl_deps, vec![1, 3]);
    }

    #[test]
    fn validate_flags_dangling_and_self_deps() {
        let mut t = ExecutionTrace::new(0, 1);
        let mut n = TraceNode::new(1, "a", NodeType::Comp);
        n.data_deps = vec![99];
        t.nodes.push(n);
        let r = validate_trace(&t);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].code, IssueCode::DanglingDep);

        let mut t2 = ExecutionTrace::new(0, 1);
        let mut n = TraceNode::new(1, "a", NodeType::Comp);
        n.ctrl_deps = vec![1];
        t2.nodes.push(n);
        assert_eq!(validate_trace(&t2).errors[0].code, IssueCode::SelfDep);
    }

    #[test]
    fn validate_flags_missing_comm_attrs() {
        let mut t = ExecutionTrace::new(0, 1);
        t.nodes.push(TraceNode::new(1, "ar", NodeType::CommColl));
        let r = validate_trace(&t);
        assert!(r.errors.iter().any(|e| e.code == IssueCode::MissingCommAttr));
    }

    #[test]
    fn validate_ok_on_chain() {
        let mut t = ExecutionTrace::new(0, 1);
        for i in 1..=3u64 {
            let mut n = TraceNode::new(i, format!("n{i}"), NodeType::Comp);
            if i > 1 {
                n.data_deps = vec![i - 1];
            }
            t.nodes.push(n);
        }
        assert!(validate_trace(&t).is_valid());
    }

    #[test]
    fn storage_overflow_detected() {
        let mut t = ExecutionTrace::new(0, 1);
        t.storages.push(StorageDesc { device: "gpu:0".into(), id: 1, size_bytes: 8 });
        t.tensors.push(TensorDesc {
            dtype: Dtype::Fp32,
            id: 1,
            shape: vec![4],
            size_bytes: 16,
            storage_id: 1,
            storage_offset: 0,
            stride: vec![1],
        });
        let r = validate_trace(&t);
        assert!(r.errors.iter().any(|e| e.code == IssueCode::StorageOverflow));
    }

    #[test]
    fn parse_never_panics_on_garbage() {
        for bytes in [&b"\xff\xfe"[..], b"{", b"[1,2]", b"null", b"{\"rank\":0}"] {
            let _ = parse_trace(bytes);
        }
    }
}
