//! Latency, throughput and energy for the CPU-only, CPU-GPU and accelerator
//! design points, computed from accelerator event logs.

mod energy;
mod params;
mod sweep;
mod throughput;
mod timing;

pub use energy::{energy, power, EnergyReport};
pub use params::{BwCurve, PlatformParams, DEFAULT_CPU_CURVE};
pub use sweep::{
    read_rows, rows, summarize, sweep, sweep_cells, write_rows, PointResult, ResultRow, SweepCell, SweepOptions,
    SweepSummary,
};
pub use throughput::effective_embedding_throughput;
pub use timing::{
    centaur_emb_time, centaur_mlp_time, cpu_emb_time, time, time_centaur, time_cpu_gpu, time_cpu_only, DesignPoint,
    LatencyBreakdown,
};
