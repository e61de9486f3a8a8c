use std::fmt;
use std::str::FromStr;

use super::params::PlatformParams;
use crate::engine::{EventLog, LogSummary};
use crate::error::{Error, Result};

const GB: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DesignPoint {
    CpuOnly,
    CpuGpu,
    Centaur,
}

impl DesignPoint {
    pub const ALL: [DesignPoint; 3] = [DesignPoint::CpuOnly, DesignPoint::CpuGpu, DesignPoint::Centaur];

    pub fn as_str(self) -> &'static str {
        match self {
            DesignPoint::CpuOnly => "cpu_only",
            DesignPoint::CpuGpu => "cpu_gpu",
            DesignPoint::Centaur => "centaur",
        }
    }
}

impl fmt::Display for DesignPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesignPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cpu_only" | "cpu" => Ok(DesignPoint::CpuOnly),
            "cpu_gpu" | "gpu" => Ok(DesignPoint::CpuGpu),
            "centaur" => Ok(DesignPoint::Centaur),
            other => Err(Error::config("design_points", format!("unknown design point `{other}`"))),
        }
    }
}

/// Per-stage latency of one batched inference, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyBreakdown {
    pub idx: f64,
    pub emb: f64,
    pub dnf: f64,
    pub mlp: f64,
    pub others: f64,
    /// `idx + emb + dnf + mlp + others`, summed in that order.
    pub total: f64,
}

impl LatencyBreakdown {
    pub fn new(idx: f64, emb: f64, dnf: f64, mlp: f64, others: f64) -> Self {
        LatencyBreakdown { idx, emb, dnf, mlp, others, total: idx + emb + dnf + mlp + others }
    }
}

/// Gather time on the accelerator: link-bandwidth bound, floored by the
/// round trips needed with `max_inflight` requests outstanding.
pub fn centaur_emb_time(gather_bytes: u64, requests: u64, max_inflight: u64, p: &PlatformParams) -> f64 {
    let streaming = gather_bytes as f64 / (p.centaur_gather_bw() * GB);
    let fill = requests.div_ceil(max_inflight.max(1)) as f64 * p.link_round_trip;
    streaming.max(fill)
}

/// Dense-unit time: padded tiles on their unit's PEs at `tile_cycles` each.
pub fn centaur_mlp_time(s: &LogSummary, p: &PlatformParams) -> f64 {
    let cycles = p.tile_cycles();
    let mlp = s.mlp_tiles as f64 * cycles / (p.pe_clock * f64::from(p.mlp_pes));
    let inter = s.interaction_tiles as f64 * cycles / (p.pe_clock * f64::from(p.interaction_pes));
    mlp + inter
}

pub fn time_centaur(log: &EventLog, p: &PlatformParams) -> Result<LatencyBreakdown> {
    log.require_complete()?;
    let s = log.summary();
    let link = p.link_bw_eff * GB;
    Ok(LatencyBreakdown::new(
        s.index_bytes as f64 / link,
        centaur_emb_time(s.gather_bytes, s.gather_requests, log.meta.max_inflight, p),
        s.dense_bytes as f64 / link,
        centaur_mlp_time(&s, p),
        p.other_overhead,
    ))
}

/// CPU gather time from the effective-bandwidth curve.
pub fn cpu_emb_time(gather_bytes: u64, p: &PlatformParams) -> f64 {
    if gather_bytes == 0 {
        return 0.0;
    }
    let bytes = gather_bytes as f64;
    bytes / (p.cpu_eff_bw_curve.at(bytes) * GB)
}

pub fn time_cpu_only(log: &EventLog, p: &PlatformParams) -> Result<LatencyBreakdown> {
    log.require_complete()?;
    let s = log.summary();
    let mlp = s.gemm_flops() as f64 / p.cpu_gemm_flops + s.gemm_calls as f64 * p.cpu_gemm_call_overhead;
    Ok(LatencyBreakdown::new(0.0, cpu_emb_time(s.gather_bytes, p), 0.0, mlp, p.other_overhead))
}

pub fn time_cpu_gpu(log: &EventLog, p: &PlatformParams) -> Result<LatencyBreakdown> {
    log.require_complete()?;
    let s = log.summary();
    let reduced = log.meta.reduced_bytes();
    let transfer = if reduced == 0 {
        0.0
    } else {
        reduced as f64 / (p.pcie_bw * GB) + p.pcie_latency
    };
    let mlp = s.gemm_flops() as f64 / p.gpu_gemm_flops + s.gemm_calls as f64 * p.gpu_gemm_call_overhead;
    Ok(LatencyBreakdown::new(0.0, cpu_emb_time(s.gather_bytes, p), transfer, mlp, p.other_overhead))
}

pub fn time(design: DesignPoint, log: &EventLog, p: &PlatformParams) -> Result<LatencyBreakdown> {
    match design {
        DesignPoint::CpuOnly => time_cpu_only(log, p),
        DesignPoint::CpuGpu => time_cpu_gpu(log, p),
        DesignPoint::Centaur => time_centaur(log, p),
    }
}
