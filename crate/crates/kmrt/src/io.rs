//! File formats: IR text, JSON inputs/outputs/traces/manifests/cost
//! models, and CSV reports. Every artifact is written atomically.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use kmrt_core::analysis::{key_liveness, merge_candidates, rotation_chain_depth, rotation_index_set};
use kmrt_core::bench::{CellFailure, Comparison, ReportRow};
use kmrt_core::interp::{Inputs, LevelProfile, Value};
use kmrt_core::ir::{CryptoParams, Module};
use kmrt_core::runtime::{key_size_bytes, makespan, peak_memory, CostModel, Event, ExecTrace, MemSample, Peak};

/// Writes `bytes` to a temporary file beside `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_atomic(path, to_json(v)?.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_inputs(path: &Path) -> Result<Inputs> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing inputs {}", path.display()))
}

pub fn read_cost_model(path: &Path) -> Result<CostModel> {
    let cm: CostModel =
        serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing cost model {}", path.display()))?;
    cm.validate().map_err(anyhow::Error::msg)?;
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutputValue {
    Ct { level: u32, slots: Vec<i64> },
    Pt { slots: Vec<i64> },
    Key { index: u32 },
    Index { value: i64 },
}

impl From<&Value> for OutputValue {
    fn from(v: &Value) -> Self {
        match v {
            Value::Ct(c) => OutputValue::Ct { level: c.level, slots: c.slots.clone() },
            Value::Pt(p) => OutputValue::Pt { slots: p.clone() },
            Value::Key(i) => OutputValue::Key { index: *i },
            Value::Index(i) => OutputValue::Index { value: *i },
        }
    }
}

pub fn outputs_json(values: &[Value]) -> Vec<OutputValue> {
    values.iter().map(OutputValue::from).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceFile {
    pub events: Vec<Event>,
    pub samples: Vec<MemSample>,
    pub peak: Peak,
    pub makespan: u64,
}

impl From<&ExecTrace> for TraceFile {
    fn from(t: &ExecTrace) -> Self {
        Self { events: t.events.clone(), samples: t.samples.clone(), peak: peak_memory(t), makespan: makespan(t) }
    }
}

/// Keys a compiled module may request, with the parameters that size them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub params: CryptoParams,
    pub key_size_bytes: u64,
    pub indices: BTreeSet<u32>,
}

impl Manifest {
    pub fn of(m: &Module) -> Self {
        Self { params: m.params.clone(), key_size_bytes: key_size_bytes(&m.params), indices: rotation_index_set(m) }
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing manifest {}", path.display()))
}

#[derive(Clone, Debug, Serialize)]
pub struct LiveRange {
    pub value: String,
    pub index: u32,
    pub def: usize,
    pub last_use: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MergePair {
    pub index: u32,
    pub clear_pos: usize,
    pub load_pos: usize,
    pub distance: u64,
}

/// `kmrt analyze` output.
#[derive(Clone, Debug, Serialize)]
pub struct Analysis {
    pub index_set: BTreeSet<u32>,
    pub key_count: usize,
    pub key_size_bytes: u64,
    pub chain_depth: u32,
    pub op_count: usize,
    pub live_ranges: Vec<LiveRange>,
    pub intervals: BTreeMap<u32, Vec<(usize, usize)>>,
    pub merge_candidates: Vec<MergePair>,
    pub levels: Option<LevelProfile>,
}

pub fn analysis(m: &Module, window: u64, levels: Option<LevelProfile>) -> Analysis {
    let index_set = rotation_index_set(m);
    let (live_ranges, intervals, merges, chain_depth, op_count) = match m.main() {
        Some(f) => {
            let live = key_liveness(f);
            let ranges = live
                .values
                .iter()
                .map(|r| LiveRange { value: f.value_name(r.value), index: r.index, def: r.def, last_use: r.last_use })
                .collect();
            let merges = merge_candidates(f, window)
                .into_iter()
                .map(|c| MergePair { index: c.index, clear_pos: c.clear_pos, load_pos: c.load_pos, distance: c.distance })
                .collect();
            (ranges, live.intervals, merges, rotation_chain_depth(f), f.op_count())
        }
        None => Default::default(),
    };
    Analysis {
        key_count: index_set.len(),
        index_set,
        key_size_bytes: key_size_bytes(&m.params),
        chain_depth,
        op_count,
        live_ranges,
        intervals,
        merge_candidates: merges,
        levels,
    }
}

pub fn report_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureRow {
    pub program: String,
    pub strategy: String,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<FailureRow>,
}

impl From<&Comparison> for Report {
    fn from(c: &Comparison) -> Self {
        let failures = c
            .failures
            .iter()
            .map(|CellFailure { program, strategy, message }| FailureRow {
                program: program.clone(),
                strategy: strategy.clone(),
                message: message.clone(),
            })
            .collect();
        Self { rows: c.rows.clone(), failures }
    }
}
