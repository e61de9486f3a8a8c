use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::energy::{energy, EnergyReport};
use super::params::PlatformParams;
use super::throughput::effective_embedding_throughput;
use super::timing::{time, DesignPoint, LatencyBreakdown};
use crate::engine::{infer_accelerated_with, LogSummary, SparseOptions};
use crate::error::{Error, Result};
use crate::workload::{build_model, generate_batch, IndexDistribution, ModelConfig};

/// One CSV row: a (model, batch, design point) cell. Times in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub batch: usize,
    pub design_point: String,
    pub idx_us: f64,
    pub emb_us: f64,
    pub dnf_us: f64,
    pub mlp_us: f64,
    pub other_us: f64,
    /// Sum of the five components above, in column order.
    pub total_us: f64,
    pub eff_gbps: f64,
    pub energy_j: f64,
    pub speedup_vs_cpu: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub seed: u64,
    pub distribution: IndexDistribution,
    pub design_points: Vec<DesignPoint>,
    pub sparse: SparseOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            seed: 0,
            distribution: IndexDistribution::Uniform,
            design_points: DesignPoint::ALL.to_vec(),
            sparse: SparseOptions::default(),
        }
    }
}

/// Timing of one design point in one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointResult {
    pub design_point: DesignPoint,
    pub latency: LatencyBreakdown,
    pub energy: EnergyReport,
    pub eff_gbps: f64,
}

/// One (model, batch) pair, timed for every requested design point.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub model: String,
    pub batch: usize,
    pub summary: LogSummary,
    pub cpu_only: LatencyBreakdown,
    pub points: Vec<PointResult>,
}

fn cell_seed(base: u64, model: usize, batch: usize) -> u64 {
    base ^ ((model as u64) << 40) ^ (batch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Times every (model, batch) cell on the accelerator model. Output order is
/// models, then batches, as given.
pub fn sweep_cells(
    models: &[ModelConfig],
    batches: &[usize],
    params: &PlatformParams,
    opts: &SweepOptions,
) -> Result<Vec<SweepCell>> {
    if models.is_empty() || batches.is_empty() || opts.design_points.is_empty() {
        return Err(Error::Invalid("sweep needs at least one model, batch and design point".into()));
    }
    if batches.contains(&0) {
        return Err(Error::config("batches", "batch sizes must be at least 1"));
    }
    let built = models
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| build_model(cfg, opts.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| batches.iter().map(move |&b| (m, b)))
        .collect();
    jobs.par_iter()
        .map(|&(m, b)| {
            let model = &built[m];
            let batch = generate_batch(&model.config, b, opts.distribution, cell_seed(opts.seed, m, b))?;
            let run = infer_accelerated_with(model, &batch, &opts.sparse)?;
            let summary = run.log.summary();
            let cpu_only = time(DesignPoint::CpuOnly, &run.log, params)?;
            let points = opts
                .design_points
                .iter()
                .map(|&d| {
                    let latency = time(d, &run.log, params)?;
                    let eff_gbps = if latency.emb > 0.0 {
                        effective_embedding_throughput(summary.gather_bytes, latency.emb)?
                    } else {
                        0.0
                    };
                    Ok(PointResult { design_point: d, latency, energy: energy(&latency, params, d)?, eff_gbps })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepCell { model: model.config.name.clone(), batch: b, summary, cpu_only, points })
        })
        .collect()
}

pub fn rows(cells: &[SweepCell]) -> Vec<ResultRow> {
    let mut out = Vec::new();
    for c in cells {
        for p in &c.points {
            let l = &p.latency;
            let (idx_us, emb_us, dnf_us, mlp_us, other_us) =
                (l.idx * 1e6, l.emb * 1e6, l.dnf * 1e6, l.mlp * 1e6, l.others * 1e6);
            out.push(ResultRow {
                model: c.model.clone(),
                batch: c.batch,
                design_point: p.design_point.to_string(),
                idx_us,
                emb_us,
                dnf_us,
                mlp_us,
                other_us,
                total_us: idx_us + emb_us + dnf_us + mlp_us + other_us,
                eff_gbps: p.eff_gbps,
                energy_j: p.energy.energy,
                speedup_vs_cpu: c.cpu_only.total / l.total,
            });
        }
    }
    out
}

/// `sweep_cells` flattened to result rows.
pub fn sweep(
    models: &[ModelConfig],
    batches: &[usize],
    params: &PlatformParams,
    opts: &SweepOptions,
) -> Result<Vec<ResultRow>> {
    Ok(rows(&sweep_cells(models, batches, params, opts)?))
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows back; `#` lines are skipped.
pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Band statistics across a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepSummary {
    pub cells: usize,
    /// Centaur speedup over CPU-only (min, max).
    pub speedup: Option<(f64, f64)>,
    /// Centaur energy efficiency over CPU-only (min, max).
    pub efficiency: Option<(f64, f64)>,
    /// Mean CPU-GPU latency over CPU-only latency.
    pub cpu_gpu_latency_ratio: Option<f64>,
    /// Mean CPU-GPU energy over CPU-only energy.
    pub cpu_gpu_energy_ratio: Option<f64>,
    /// Highest Centaur effective gather throughput, GB/s.
    pub centaur_peak_gbps: Option<f64>,
    /// Highest CPU-only effective gather throughput, GB/s.
    pub cpu_peak_gbps: Option<f64>,
}

fn band(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    Some(v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x))))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn max(v: &[f64]) -> Option<f64> {
    band(v).map(|b| b.1)
}

pub fn summarize(rows: &[ResultRow]) -> SweepSummary {
    let mut cells: BTreeMap<(&str, usize), BTreeMap<&str, &ResultRow>> = BTreeMap::new();
    for r in rows {
        cells.entry((&r.model, r.batch)).or_default().insert(&r.design_point, r);
    }
    let (mut speedup, mut eff, mut lat, mut en, mut cen_tp, mut cpu_tp) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (cpu_key, gpu_key, cen_key) =
        (DesignPoint::CpuOnly.as_str(), DesignPoint::CpuGpu.as_str(), DesignPoint::Centaur.as_str());
    for points in cells.values() {
        let cpu = points.get(cpu_key);
        if let Some(c) = cpu {
            cpu_tp.push(c.eff_gbps);
        }
        if let Some(a) = points.get(cen_key) {
            cen_tp.push(a.eff_gbps);
            if let Some(c) = cpu {
                speedup.push(c.total_us / a.total_us);
                eff.push(c.energy_j / a.energy_j);
            }
        }
        if let (Some(c), Some(g)) = (cpu, points.get(gpu_key)) {
            lat.push(g.total_us / c.total_us);
            en.push(g.energy_j / c.energy_j);
        }
    }
    SweepSummary {
        cells: cells.len(),
        speedup: band(&speedup),
        efficiency: band(&eff),
        cpu_gpu_latency_ratio: mean(&lat),
        cpu_gpu_energy_ratio: mean(&en),
        centaur_peak_gbps: max(&cen_tp),
        cpu_peak_gbps: max(&cpu_tp),
    }
}

impl SweepSummary {
    /// Human-readable block; absent statistics are omitted.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cells: {}", self.cells);
        if let Some((lo, hi)) = self.speedup {
            let _ = writeln!(s, "centaur speedup vs cpu_only: min {lo:.3}x, max {hi:.3}x");
        }
        if let Some((lo, hi)) = self.efficiency {
            let _ = writeln!(s, "centaur energy efficiency vs cpu_only: min {lo:.3}x, max {hi:.3}x");
        }
        if let Some(v) = self.cpu_gpu_latency_ratio {
            let _ = writeln!(s, "mean cpu_only speedup over cpu_gpu: {v:.3}x");
        }
        if let Some(v) = self.cpu_gpu_energy_ratio {
            let _ = writeln!(s, "mean cpu_only energy efficiency over cpu_gpu: {v:.3}x");
        }
        if let Some(v) = self.centaur_peak_gbps {
            let _ = writeln!(s, "peak centaur gather throughput: {v:.3} GB/s");
        }
        if let Some(v) = self.cpu_peak_gbps {
            let _ = writeln!(s, "peak cpu_only gather throughput: {v:.3} GB/s");
        }
        s
    }
}
