//! Host-side (observer-style) and device-side (kernel-timeline-style) trace
//! parsing, plus launch/kernel correlation across the two sources.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::schema::{CommType, Dtype};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostOpKind {
    Call,
    KernelLaunch,
    Sync,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncKind {
    Device,
    Stream,
    EventRecord,
    EventWait,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Send,
    Recv,
}

/// A tensor access as recorded on the host side. Buffer identity for data
/// dependency matching is the (storage_id, storage_offset) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRef {
    pub tensor_id: u64,
    pub storage_id: u64,
    pub storage_offset: u64,
    pub shape: Vec<i64>,
    pub dtype: Dtype,
    pub size_bytes: u64,
}

impl TensorRef {
    pub fn buffer_key(&self) -> (u64, u64) {
        (self.storage_id, self.storage_offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostOp {
    pub id: u64,
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent: Option<u64>,
    pub kind: HostOpKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rf_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sync_kind: Option<SyncKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_id: Option<u64>,
    pub ts: u64,
    pub dur: u64,
    pub inputs: Vec<TensorRef>,
    pub outputs: Vec<TensorRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostTrace {
    pub rank: u64,
    pub ops: Vec<HostOp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceEventKind {
    Kernel,
    MemcpyH2d,
    MemcpyD2h,
    Comm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommAttrs {
    pub comm_type: CommType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comm_group: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comm_tag: Option<String>,
    pub comm_size_bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comm_peer: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tensor_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceEvent {
    pub correlation: u64,
    pub name: String,
    pub stream: u32,
    pub ts: u64,
    pub dur: u64,
    pub kind: DeviceEventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comm: Option<CommAttrs>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceTrace {
    pub rank: u64,
    pub events: Vec<DeviceEvent>,
}

/// rf_id → (launch op id, device event indices), plus both orphan sides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrelationMap {
    pub pairs: BTreeMap<u64, (u64, Vec<usize>)>,
    pub orphans_host: Vec<u64>,
    pub orphans_device: Vec<u64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("MALFORMED_JSON: {0}")]
    MalformedJson(String),
    #[error("MISSING_FIELD: {0}")]
    MissingField(String),
    #[error("TYPE_MISMATCH: {0}")]
    TypeMismatch(String),
    #[error("DANGLING_PARENT: op {child} has unknown or self parent {parent}")]
    DanglingParent { child: u64, parent: u64 },
    #[error("DUPLICATE_RF_ID: rf_id {0} used by more than one kernel launch")]
    DuplicateRfId(u64),
}

fn as_obj<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, IngestError> {
    v.as_object()
        .ok_or_else(|| IngestError::TypeMismatch(format!("{path}: expected object")))
}

fn req<'a>(m: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, IngestError> {
    m.get(key)
        .ok_or_else(|| IngestError::MissingField(format!("{path}.{key}")))
}

fn req_u64(m: &Map<String, Value>, key: &str, path: &str) -> Result<u64, IngestError> {
    req(m, key, path)?
        .as_u64()
        .ok_or_else(|| IngestError::TypeMismatch(format!("{path}.{key}: expected unsigned integer")))
}

fn req_str<'a>(m: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a str, IngestError> {
    req(m, key, path)?
        .as_str()
        .ok_or_else(|| IngestError::TypeMismatch(format!("{path}.{key}: expected string")))
}

fn opt_u64(m: &Map<String, Value>, key: &str, path: &str) -> Result<Option<u64>, IngestError> {
    match m.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| IngestError::TypeMismatch(format!("{path}.{key}: expected unsigned integer"))),
    }
}

fn tensor_refs(m: &Map<String, Value>, key: &str, path: &str) -> Result<Vec<TensorRef>, IngestError> {
    let Some(v) = m.get(key) else { return Ok(Vec::new()) };
    let arr = v
        .as_array()
        .ok_or_else(|| IngestError::TypeMismatch(format!("{path}.{key}: expected array")))?;
    arr.iter()
        .enumerate()
        .map(|(i, e)| {
            let p = format!("{path}.{key}[{i}]");
            let m = as_obj(e, &p)?;
            let dt = req_str(m, "dtype", &p)?;
            Ok(TensorRef {
                tensor_id: req_u64(m, "tensor_id", &p)?,
                storage_id: req_u64(m, "storage_id", &p)?,
                storage_offset: req_u64(m, "storage_offset", &p)?,
                shape: {
                    let arr = req(m, "shape", &p)?
                        .as_array()
                        .ok_or_else(|| IngestError::TypeMismatch(format!("{p}.shape: expected array")))?;
                    arr.iter()
                        .map(|e| {
                            e.as_i64().ok_or_else(|| {
                                IngestError::TypeMismatch(format!("{p}.shape: expected integers"))
                            })
                        })
                        .collect::<Result<_, _>>()?
                },
                dtype: Dtype::from_str(dt)
                    .ok_or_else(|| IngestError::TypeMismatch(format!("{p}.dtype: unknown dtype {dt:?}")))?,
                size_bytes: req_u64(m, "size_bytes", &p)?,
            })
        })
        .collect()
}

pub fn parse_host_trace(bytes: &[u8]) -> Result<HostTrace, IngestError> {
    let v: Value =
        serde_json::from_slice(bytes).map_err(|e| IngestError::MalformedJson(e.to_string()))?;
    let m = as_obj(&v, "$")?;
    let rank = req_u64(m, "rank", "$")?;
    let ops_v = req(m, "ops", "$")?
        .as_array()
        .ok_or_else(|| IngestError::TypeMismatch("$.ops: expected array".into()))?;
    let mut ops = Vec::with_capacity(ops_v.len());
    for (i, e) in ops_v.iter().enumerate() {
        let p = format!("ops[{i}]");
        let m = as_obj(e, &p)?;
        let kind_s = req_str(m, "kind", &p)?;
        let kind = match kind_s {
            "call" => HostOpKind::Call,
            "kernel_launch" => HostOpKind::KernelLaunch,
            "sync" => HostOpKind::Sync,
            other => return Err(IngestError::TypeMismatch(format!("{p}.kind: unknown kind {other:?}"))),
        };
        let sync_kind = match m.get("sync_kind").and_then(Value::as_str) {
            None => None,
            Some("device") => Some(SyncKind::Device),
            Some("stream") => Some(SyncKind::Stream),
            Some("event_record") => Some(SyncKind::EventRecord),
            Some("event_wait") => Some(SyncKind::EventWait),
            Some(other) => {
                return Err(IngestError::TypeMismatch(format!("{p}.sync_kind: unknown kind {other:?}")))
            }
        };
        let op = HostOp {
            id: req_u64(m, "id", &p)?,
            name: req_str(m, "name", &p)?.to_string(),
            parent: opt_u64(m, "parent", &p)?,
            kind,
            rf_id: opt_u64(m, "rf_id", &p)?,
            sync_kind,
            stream: opt_u64(m, "stream", &p)?.map(|s| s as u32),
            event_id: opt_u64(m, "event_id", &p)?,
            ts: req_u64(m, "ts", &p)?,
            dur: req_u64(m, "dur", &p)?,
            inputs: tensor_refs(m, "inputs", &p)?,
            outputs: tensor_refs(m, "outputs", &p)?,
        };
        // Kind-specific invariants from the host op schema.
        if op.kind == HostOpKind::KernelLaunch && op.rf_id.is_none() {
            return Err(IngestError::MissingField(format!("{p}.rf_id")));
        }
        if op.kind == HostOpKind::Sync {
            match op.sync_kind {
                None => return Err(IngestError::MissingField(format!("{p}.sync_kind"))),
                Some(SyncKind::Stream) if op.stream.is_none() => {
                    return Err(IngestError::MissingField(format!("{p}.stream")))
                }
                Some(SyncKind::EventRecord | SyncKind::EventWait) => {
                    if op.event_id.is_none() {
                        return Err(IngestError::MissingField(format!("{p}.event_id")));
                    }
                    if op.stream.is_none() {
                        return Err(IngestError::MissingField(format!("{p}.stream")));
                    }
                }
                _ => {}
            }
        }
        ops.push(op);
    }
    // Parent references must resolve within the file and never self-refer.
    let ids: HashMap<u64, ()> = ops.iter().map(|o| (o.id, ())).collect();
    for op in &ops {
        if let Some(parent) = op.parent {
            if parent == op.id || !ids.contains_key(&parent) {
                return Err(IngestError::DanglingParent { child: op.id, parent });
            }
        }
    }
    Ok(HostTrace { rank, ops })
}

pub fn parse_device_trace(bytes: &[u8]) -> Result<DeviceTrace, IngestError> {
    let v: Value =
        serde_json::from_slice(bytes).map_err(|e| IngestError::MalformedJson(e.to_string()))?;
    let m = as_obj(&v, "$")?;
    let rank = req_u64(m, "rank", "$")?;
    let events_v = req(m, "events", "$")?
        .as_array()
        .ok_or_else(|| IngestError::TypeMismatch("$.events: expected array".into()))?;
    let mut events = Vec::with_capacity(events_v.len());
    for (i, e) in events_v.iter().enumerate() {
        let p = format!("events[{i}]");
        let m = as_obj(e, &p)?;
        let kind_s = req_str(m, "kind", &p)?;
        let kind = match kind_s {
            "kernel" => DeviceEventKind::Kernel,
            "memcpy_h2d" => DeviceEventKind::MemcpyH2d,
            "memcpy_d2h" => DeviceEventKind::MemcpyD2h,
            "comm" => DeviceEventKind::Comm,
            other => return Err(IngestError::TypeMismatch(format!("{p}.kind: unknown kind {other:?}"))),
        };
        let comm = match m.get("comm") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                serde_json::from_value::<CommAttrs>(v.clone())
                    .map_err(|e| IngestError::TypeMismatch(format!("{p}.comm: {e}")))?,
            ),
        };
        if kind == DeviceEventKind::Comm && comm.is_none() {
            return Err(IngestError::MissingField(format!("{p}.comm")));
        }
        events.push(DeviceEvent {
            correlation: req_u64(m, "correlation", &p)?,
            name: req_str(m, "name", &p)?.to_string(),
            stream: req_u64(m, "stream", &p)? as u32,
            ts: req_u64(m, "ts", &p)?,
            dur: req_u64(m, "dur", &p)?,
            kind,
            comm,
        });
    }
    Ok(DeviceTrace { rank, events })
}

/// Match kernel launches to device events via rf_id == correlation.
///
/// Unmatched launches and events are reported as orphans, not errors: real
/// traces drop events under buffer pressure, and degraded inputs must still
/// link. Two launches sharing an rf_id is a hard error.
pub fn correlate(host: &HostTrace, device: &DeviceTrace) -> Result<CorrelationMap, IngestError> {
    let mut launches: BTreeMap<u64, u64> = BTreeMap::new();
    for op in &host.ops {
        if op.kind == HostOpKind::KernelLaunch {
            let rf = op.rf_id.expect("validated at parse");
            if launches.insert(rf, op.id).is_some() {
                return Err(IngestError::DuplicateRfId(rf));
            }
        }
    }
    let mut map = CorrelationMap::default();
    let mut orphan_correlations: BTreeMap<u64, ()> = BTreeMap::new();
    for (idx, ev) in device.events.iter().enumerate() {
        match launches.get(&ev.correlation) {
            Some(&op_id) => {
                map.pairs
                    .entry(ev.correlation)
                    .or_insert_with(|| (op_id, Vec::new()))
                    .1
                    .push(idx);
            }
            None => {
                orphan_correlations.insert(ev.correlation, ());
            }
        }
    }
    for (rf, op_id) in &launches {
        if !map.pairs.contains_key(rf) {
            map.orphans_host.push(*op_id);
        }
    }
    map.orphans_device = orphan_correlations.into_keys().collect();
    Ok(map)
}
