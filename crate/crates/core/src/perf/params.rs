use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{fmt_f64, split_list, KvDoc};

/// Piecewise-linear map from gathered bytes to effective bandwidth (GB/s).
///
/// Anchors are strictly increasing in bytes and non-decreasing in bandwidth.
/// Queries outside the anchor range clamp to the end values.
#[derive(Debug, Clone, PartialEq)]
pub struct BwCurve {
    points: Vec<(f64, f64)>,
}

impl BwCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("cpu_eff_bw_curve", "curve has no points"));
        }
        for &(x, y) in &points {
            if !(x.is_finite() && y.is_finite() && x >= 0.0 && y > 0.0) {
                return Err(Error::config(
                    "cpu_eff_bw_curve",
                    format!("point {x}:{y} must have bytes >= 0 and bandwidth > 0"),
                ));
            }
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 || w[1].1 < w[0].1 {
                return Err(Error::config(
                    "cpu_eff_bw_curve",
                    "points must increase in bytes and not decrease in bandwidth",
                ));
            }
        }
        Ok(BwCurve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn max_gbps(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    /// Bandwidth in GB/s at `bytes`.
    pub fn at(&self, bytes: f64) -> f64 {
        let first = self.points[0];
        if bytes <= first.0 {
            return first.1;
        }
        for w in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if bytes <= x1 {
                return y0 + (y1 - y0) * (bytes - x0) / (x1 - x0);
            }
        }
        self.max_gbps()
    }

    fn scaled(&self, c: f64) -> BwCurve {
        BwCurve { points: self.points.iter().map(|&(x, y)| (x, y * c)).collect() }
    }
}

impl fmt::Display for BwCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .points
            .iter()
            .map(|&(x, y)| format!("{}:{}", fmt_f64(x), fmt_f64(y)))
            .collect();
        f.write_str(&parts.join(", "))
    }
}

impl FromStr for BwCurve {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let points = split_list(s)
            .map(|item| {
                let (x, y) = item.split_once(':').ok_or_else(|| {
                    Error::config("cpu_eff_bw_curve", format!("expected bytes:gbps, got `{item}`"))
                })?;
                let parse = |v: &str| {
                    v.trim().parse::<f64>().map_err(|_| {
                        Error::config("cpu_eff_bw_curve", format!("cannot parse `{v}`"))
                    })
                };
                Ok((parse(x)?, parse(y)?))
            })
            .collect::<Result<Vec<_>>>()?;
        BwCurve::new(points)
    }
}

/// Calibration constants for the three design points.
///
/// Bandwidths are decimal GB/s, times are seconds, power is watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformParams {
    pub cpu_peak_mem_bw: f64,
    pub cpu_eff_bw_curve: BwCurve,
    pub link_bw_raw: f64,
    pub link_bw_eff: f64,
    pub centaur_gather_eff: f64,
    /// Latency of one gather round trip over the link; with `max_inflight`
    /// outstanding requests it bounds the gather time from below.
    pub link_round_trip: f64,
    pub pe_peak_flops: f64,
    pub pe_clock: f64,
    pub mlp_pes: u32,
    pub interaction_pes: u32,
    pub cpu_gemm_flops: f64,
    pub cpu_gemm_call_overhead: f64,
    pub gpu_gemm_flops: f64,
    pub gpu_gemm_call_overhead: f64,
    pub pcie_bw: f64,
    pub pcie_latency: f64,
    pub power_cpu_only: f64,
    pub power_cpu_gpu_cpu: f64,
    pub power_cpu_gpu_gpu: f64,
    pub power_centaur: f64,
    pub other_overhead: f64,
    pub llc_bytes: u64,
    pub llc_ways: u32,
    pub line_bytes: u32,
}

/// Shipped CPU effective-bandwidth anchors (bytes, GB/s).
pub const DEFAULT_CPU_CURVE: [(f64, f64); 7] = [
    (12_800.0, 0.3),
    (51_200.0, 0.4),
    (512_000.0, 0.5),
    (16_384_000.0, 2.6),
    (65_536_000.0, 10.0),
    (1_048_576_000.0, 50.0),
    (4_194_304_000.0, 77.0),
];

impl Default for PlatformParams {
    fn default() -> Self {
        PlatformParams {
            cpu_peak_mem_bw: 77.0,
            cpu_eff_bw_curve: BwCurve { points: DEFAULT_CPU_CURVE.to_vec() },
            link_bw_raw: 28.8,
            link_bw_eff: 17.5,
            centaur_gather_eff: 0.68,
            link_round_trip: 0.5e-6,
            pe_peak_flops: 3.13e11,
            pe_clock: 2e8,
            mlp_pes: 16,
            interaction_pes: 4,
            cpu_gemm_flops: 7.2e9,
            cpu_gemm_call_overhead: 10e-6,
            gpu_gemm_flops: 1e11,
            gpu_gemm_call_overhead: 30e-6,
            pcie_bw: 12.0,
            pcie_latency: 50e-6,
            power_cpu_only: 80.0,
            power_cpu_gpu_cpu: 91.0,
            power_cpu_gpu_gpu: 56.0,
            power_centaur: 74.0,
            other_overhead: 5e-6,
            llc_bytes: 32 << 20,
            llc_ways: 16,
            line_bytes: 64,
        }
    }
}

macro_rules! float_fields {
    ($m:ident) => {
        $m!(
            cpu_peak_mem_bw,
            link_bw_raw,
            link_bw_eff,
            centaur_gather_eff,
            link_round_trip,
            pe_peak_flops,
            pe_clock,
            cpu_gemm_flops,
            cpu_gemm_call_overhead,
            gpu_gemm_flops,
            gpu_gemm_call_overhead,
            pcie_bw,
            pcie_latency,
            power_cpu_only,
            power_cpu_gpu_cpu,
            power_cpu_gpu_gpu,
            power_centaur,
            other_overhead
        )
    };
}

impl PlatformParams {
    pub const KEYS: &'static [&'static str] = &[
        "cpu_peak_mem_bw",
        "cpu_eff_bw_curve",
        "link_bw_raw",
        "link_bw_eff",
        "centaur_gather_eff",
        "link_round_trip",
        "pe_peak_flops",
        "pe_clock",
        "mlp_pes",
        "interaction_pes",
        "cpu_gemm_flops",
        "cpu_gemm_call_overhead",
        "gpu_gemm_flops",
        "gpu_gemm_call_overhead",
        "pcie_bw",
        "pcie_latency",
        "power_cpu_only",
        "power_cpu_gpu_cpu",
        "power_cpu_gpu_gpu",
        "power_centaur",
        "other_overhead",
        "llc_bytes",
        "llc_ways",
        "line_bytes",
    ];

    pub fn validate(&self) -> Result<()> {
        macro_rules! positive {
            ($($f:ident),*) => {$(
                if !(self.$f.is_finite() && self.$f > 0.0) {
                    return Err(Error::config(stringify!($f), format!("must be positive, got {}", self.$f)));
                }
            )*};
        }
        float_fields!(positive);
        for (key, v) in [
            ("mlp_pes", u64::from(self.mlp_pes)),
            ("interaction_pes", u64::from(self.interaction_pes)),
            ("llc_bytes", self.llc_bytes),
            ("llc_ways", u64::from(self.llc_ways)),
            ("line_bytes", u64::from(self.line_bytes)),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.link_bw_eff > self.link_bw_raw {
            return Err(Error::config("link_bw_eff", "must not exceed link_bw_raw"));
        }
        if self.centaur_gather_eff > 1.0 {
            return Err(Error::config("centaur_gather_eff", "is a fraction and must be <= 1"));
        }
        if self.cpu_eff_bw_curve.max_gbps() > self.cpu_peak_mem_bw {
            return Err(Error::config("cpu_eff_bw_curve", "values must not exceed cpu_peak_mem_bw"));
        }
        Ok(())
    }

    /// Defaults overridden by whatever keys `doc` sets.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.deny_unknown(Self::KEYS)?;
        let mut p = PlatformParams::default();
        macro_rules! read {
            ($($f:ident),*) => {$(
                if let Some(v) = doc.parse_value(stringify!($f))? {
                    p.$f = v;
                }
            )*};
        }
        float_fields!(read);
        read!(mlp_pes, interaction_pes, llc_bytes, llc_ways, line_bytes);
        if let Some(v) = doc.get("cpu_eff_bw_curve") {
            p.cpu_eff_bw_curve = v.parse()?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvDoc::parse(text)?)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        macro_rules! put {
            ($($f:ident),*) => {$(
                doc.set(stringify!($f), fmt_f64(self.$f));
            )*};
        }
        float_fields!(put);
        doc.set("cpu_eff_bw_curve", &self.cpu_eff_bw_curve);
        doc.set("mlp_pes", self.mlp_pes);
        doc.set("interaction_pes", self.interaction_pes);
        doc.set("llc_bytes", self.llc_bytes);
        doc.set("llc_ways", self.llc_ways);
        doc.set("line_bytes", self.line_bytes);
        doc
    }

    pub fn total_pes(&self) -> u32 {
        self.mlp_pes + self.interaction_pes
    }

    /// Cycles one PE spends on a full tile, sized so that all PEs together
    /// deliver `pe_peak_flops`.
    pub fn tile_cycles(&self) -> f64 {
        let per_pe_flops_per_cycle = self.pe_peak_flops / self.pe_clock / f64::from(self.total_pes());
        crate::engine::TILE_FLOPS as f64 / per_pe_flops_per_cycle
    }

    /// Centaur gather bandwidth in GB/s.
    pub fn centaur_gather_bw(&self) -> f64 {
        self.centaur_gather_eff * self.link_bw_eff
    }

    /// The same platform running `c` times faster: every rate multiplied by
    /// `c`, every fixed time divided by `c`. Power is unchanged.
    pub fn scaled(&self, c: f64) -> PlatformParams {
        PlatformParams {
            cpu_peak_mem_bw: self.cpu_peak_mem_bw * c,
            cpu_eff_bw_curve: self.cpu_eff_bw_curve.scaled(c),
            link_bw_raw: self.link_bw_raw * c,
            link_bw_eff: self.link_bw_eff * c,
            link_round_trip: self.link_round_trip / c,
            pe_peak_flops: self.pe_peak_flops * c,
            pe_clock: self.pe_clock * c,
            cpu_gemm_flops: self.cpu_gemm_flops * c,
            cpu_gemm_call_overhead: self.cpu_gemm_call_overhead / c,
            gpu_gemm_flops: self.gpu_gemm_flops * c,
            gpu_gemm_call_overhead: self.gpu_gemm_call_overhead / c,
            pcie_bw: self.pcie_bw * c,
            pcie_latency: self.pcie_latency / c,
            other_overhead: self.other_overhead / c,
            ..self.clone()
        }
    }
}
