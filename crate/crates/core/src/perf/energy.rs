use super::params::PlatformParams;
use super::timing::{DesignPoint, LatencyBreakdown};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub design_point: DesignPoint,
    pub latency: f64,
    pub power: f64,
    /// `power * latency`.
    pub energy: f64,
}

/// Average power drawn while a design point serves an inference. CPU-GPU
/// draws both devices for the whole inference.
pub fn power(design: DesignPoint, p: &PlatformParams) -> f64 {
    match design {
        DesignPoint::CpuOnly => p.power_cpu_only,
        DesignPoint::CpuGpu => p.power_cpu_gpu_cpu + p.power_cpu_gpu_gpu,
        DesignPoint::Centaur => p.power_centaur,
    }
}

pub fn energy(t: &LatencyBreakdown, p: &PlatformParams, design: DesignPoint) -> Result<EnergyReport> {
    if !(t.total.is_finite() && t.total >= 0.0) {
        return Err(Error::Invalid(format!("latency {} is not a valid duration", t.total)));
    }
    let power = power(design, p);
    Ok(EnergyReport { design_point: design, latency: t.total, power, energy: power * t.total })
}
