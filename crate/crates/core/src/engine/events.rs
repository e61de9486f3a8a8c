//! Append-only event log of one accelerated inference.
//!
//! CSV form: optional `# key=value` metadata lines, then a header
//! `seq,stage,bytes,flops,unit` and one row per event.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FLOPs of one full `32 x 32 x 32` tile outer-product step.
pub const TILE_FLOPS: u64 = 2 * 32 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Setup,
    Idx,
    Emb,
    Dnf,
    BottomMlp,
    Interaction,
    TopMlp,
    Output,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Setup,
        Stage::Idx,
        Stage::Emb,
        Stage::Dnf,
        Stage::BottomMlp,
        Stage::Interaction,
        Stage::TopMlp,
        Stage::Output,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Setup => "setup",
            Stage::Idx => "idx",
            Stage::Emb => "emb",
            Stage::Dnf => "dnf",
            Stage::BottomMlp => "bottom_mlp",
            Stage::Interaction => "interaction",
            Stage::TopMlp => "top_mlp",
            Stage::Output => "output",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown stage `{s}`")))
    }
}

/// Hardware block that produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unit {
    Bpr,
    Spid,
    Ebgu,
    Ebru,
    /// Dense-feature fetch over the link.
    Dma,
    MlpPe(u8),
    IntPe(u8),
    Sigmoid,
    /// Stage transition marker.
    Control,
    /// One GEMM launch on the dense unit.
    Dispatch,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Bpr => f.write_str("bpr"),
            Unit::Spid => f.write_str("spid"),
            Unit::Ebgu => f.write_str("ebgu"),
            Unit::Ebru => f.write_str("ebru"),
            Unit::Dma => f.write_str("dma"),
            Unit::MlpPe(i) => write!(f, "mlp_pe{i}"),
            Unit::IntPe(i) => write!(f, "int_pe{i}"),
            Unit::Sigmoid => f.write_str("sigmoid"),
            Unit::Control => f.write_str("control"),
            Unit::Dispatch => f.write_str("dispatch"),
        }
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let pe = |rest: &str| {
            rest.parse::<u8>()
                .map_err(|_| Error::Format(format!("bad PE number in unit `{s}`")))
        };
        Ok(match s {
            "bpr" => Unit::Bpr,
            "spid" => Unit::Spid,
            "ebgu" => Unit::Ebgu,
            "ebru" => Unit::Ebru,
            "dma" => Unit::Dma,
            "sigmoid" => Unit::Sigmoid,
            "control" => Unit::Control,
            "dispatch" => Unit::Dispatch,
            _ => {
                if let Some(rest) = s.strip_prefix("mlp_pe") {
                    Unit::MlpPe(pe(rest)?)
                } else if let Some(rest) = s.strip_prefix("int_pe") {
                    Unit::IntPe(pe(rest)?)
                } else {
                    return Err(Error::Format(format!("unknown unit `{s}`")));
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub seq: u64,
    pub stage: Stage,
    pub bytes: u64,
    pub flops: u64,
    pub unit: Unit,
}

/// Shape facts the timing model needs beyond the per-event counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LogMeta {
    pub model: String,
    pub batch: u64,
    pub tables: u64,
    pub row_bytes: u64,
    pub max_inflight: u64,
}

impl LogMeta {
    /// Bytes of all reduced embeddings, `B x T x row_bytes`.
    pub fn reduced_bytes(&self) -> u64 {
        self.batch * self.tables * self.row_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub meta: LogMeta,
    events: Vec<Event>,
}

/// Totals over a log, grouped the way the timing model consumes them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LogSummary {
    pub index_bytes: u64,
    pub gather_bytes: u64,
    pub dense_bytes: u64,
    pub gather_requests: u64,
    pub mlp_tiles: u64,
    pub mlp_flops: u64,
    pub interaction_tiles: u64,
    pub interaction_flops: u64,
    pub reduce_flops: u64,
    pub gemm_calls: u64,
}

impl LogSummary {
    pub fn total_bytes(&self) -> u64 {
        self.index_bytes + self.gather_bytes + self.dense_bytes
    }

    /// Unpadded GEMM FLOPs (MLP plus interaction).
    pub fn gemm_flops(&self) -> u64 {
        self.mlp_flops + self.interaction_flops
    }

    pub fn padded_mlp_flops(&self) -> u64 {
        self.mlp_tiles * TILE_FLOPS
    }

    pub fn padded_interaction_flops(&self) -> u64 {
        self.interaction_tiles * TILE_FLOPS
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    seq: u64,
    stage: String,
    bytes: u64,
    flops: u64,
    unit: String,
}

const META_KEYS: [&str; 5] = ["model", "batch", "tables", "row_bytes", "max_inflight"];

impl EventLog {
    pub fn new(meta: LogMeta) -> Self {
        EventLog { meta, events: Vec::new() }
    }

    pub fn push(&mut self, stage: Stage, unit: Unit, bytes: u64, flops: u64) {
        let seq = self.events.len() as u64;
        self.events.push(Event { seq, stage, bytes, flops, unit });
    }

    /// Marks entry into `stage`.
    pub fn enter(&mut self, stage: Stage) {
        self.push(stage, Unit::Control, 0, 0);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn has_stage(&self, stage: Stage) -> bool {
        self.events.iter().any(|e| e.stage == stage)
    }

    /// Errors unless every stage of a full inference has a transition marker.
    pub fn require_complete(&self) -> Result<()> {
        for stage in Stage::ALL {
            if !self
                .events
                .iter()
                .any(|e| e.stage == stage && e.unit == Unit::Control)
            {
                return Err(Error::MissingStage(stage.to_string()));
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> LogSummary {
        let mut s = LogSummary::default();
        for e in &self.events {
            match (e.stage, e.unit) {
                (Stage::Idx, _) => s.index_bytes += e.bytes,
                (Stage::Emb, Unit::Ebgu) => {
                    s.gather_bytes += e.bytes;
                    s.gather_requests += 1;
                }
                (Stage::Emb, Unit::Ebru) => s.reduce_flops += e.flops,
                (Stage::Dnf, _) => s.dense_bytes += e.bytes,
                (_, Unit::MlpPe(_)) => {
                    s.mlp_tiles += 1;
                    s.mlp_flops += e.flops;
                }
                (_, Unit::IntPe(_)) => {
                    s.interaction_tiles += 1;
                    s.interaction_flops += e.flops;
                }
                (_, Unit::Dispatch) => s.gemm_calls += 1,
                _ => {}
            }
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let m = &self.meta;
        writeln!(out, "# model={}", m.model)?;
        writeln!(out, "# batch={}", m.batch)?;
        writeln!(out, "# tables={}", m.tables)?;
        writeln!(out, "# row_bytes={}", m.row_bytes)?;
        writeln!(out, "# max_inflight={}", m.max_inflight)?;
        // Header written by hand so an empty log still has one.
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(["seq", "stage", "bytes", "flops", "unit"])?;
        for e in &self.events {
            w.serialize(Row {
                seq: e.seq,
                stage: e.stage.to_string(),
                bytes: e.bytes,
                flops: e.flops,
                unit: e.unit.to_string(),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    /// Parses the CSV form. Sequence numbers must run 0, 1, 2, ...
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut meta = LogMeta::default();
        let mut body_start = 0usize;
        for line in text.split_inclusive('\n') {
            let Some(rest) = line.trim_end().strip_prefix('#') else {
                break;
            };
            body_start += line.len();
            let Some((k, v)) = rest.trim().split_once('=') else {
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            let num = || {
                v.parse::<u64>()
                    .map_err(|_| Error::Format(format!("metadata `{k}`: bad value `{v}`")))
            };
            match k {
                "model" => meta.model = v.to_string(),
                "batch" => meta.batch = num()?,
                "tables" => meta.tables = num()?,
                "row_bytes" => meta.row_bytes = num()?,
                "max_inflight" => meta.max_inflight = num()?,
                _ => {
                    return Err(Error::Format(format!(
                        "unknown metadata key `{k}` (expected one of {})",
                        META_KEYS.join(", ")
                    )))
                }
            }
        }
        Self::read_rows(meta, &text.as_bytes()[body_start..])
    }

    fn read_rows<R: Read>(meta: LogMeta, body: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(body);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["seq", "stage", "bytes", "flops", "unit"] {
            return Err(Error::Format(format!(
                "expected header seq,stage,bytes,flops,unit, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut log = EventLog::new(meta);
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row?;
            if row.seq != i as u64 {
                return Err(Error::Format(format!(
                    "event {i} has sequence number {}",
                    row.seq
                )));
            }
            log.push(row.stage.parse()?, row.unit.parse()?, row.bytes, row.flops);
        }
        Ok(log)
    }
}
