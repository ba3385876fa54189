//! Deployment arithmetic: sampling plans under an overhead budget, the
//! accelerator analytic throughput model, and energy-efficiency comparison.
//!
//! Plans are computed in exact rational arithmetic so that round decimal
//! inputs (e.g. a 0.1% budget) produce exact outputs (0.025 s, 25 s,
//! 75e9 instructions) rather than binary-float approximations.

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive};
use thiserror::Error;

pub type Rational = Ratio<i128>;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("cannot parse decimal number {0:?}")]
    BadDecimal(String),
}

/// Parses a decimal literal ("0.001", "5.916", "3000") into an exact
/// rational.
pub fn parse_decimal_ratio(s: &str) -> Result<Rational, SystemError> {
    let s = s.trim();
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1i128, rest),
        None => (1i128, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(SystemError::BadDecimal(s.to_string()));
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i128 = digits.parse().map_err(|_| SystemError::BadDecimal(s.to_string()))?;
    let denom = 10i128
        .checked_pow(frac_part.len() as u32)
        .ok_or_else(|| SystemError::BadDecimal(s.to_string()))?;
    Ok(Ratio::new(sign * numer, denom))
}

/// Inputs to the sampling planner.
#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentParams {
    /// Instructions per sampled epoch.
    pub epoch_len: u64,
    /// Inference throughput of the engine, million instructions per second.
    pub engine_mips: Rational,
    /// Host execution rate, million instructions per second.
    pub host_mips: Rational,
    /// Allowed system-overhead fraction in (0, 1].
    pub overhead_budget: Rational,
}

impl DeploymentParams {
    pub fn validate(&self) -> Result<(), SystemError> {
        if self.epoch_len == 0 {
            return Err(SystemError::InvalidParam("epoch_len must be positive".into()));
        }
        for (name, v) in [("engine_mips", &self.engine_mips), ("host_mips", &self.host_mips)] {
            if !v.is_positive() {
                return Err(SystemError::InvalidParam(format!("{name} must be positive")));
            }
        }
        if !self.overhead_budget.is_positive() || self.overhead_budget > Ratio::from_integer(1) {
            return Err(SystemError::InvalidParam("overhead_budget must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Analytic model of the on-chip inference accelerator.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceleratorSpec {
    pub lanes: u32,
    pub tiles: u32,
    pub clock_hz: Rational,
    /// Cycles for one LSTM layer to process one timestep.
    pub cycles_per_layer_step: u64,
    pub layers: u32,
    /// Cycles for one (1,256) x (256,256) vector-matrix product.
    pub matvec_cycles: u32,
    pub power_w: f64,
    pub area_mm2: f64,
}

impl AcceleratorSpec {
    pub fn validate(&self) -> Result<(), SystemError> {
        if self.tiles < 1 {
            return Err(SystemError::InvalidParam("tiles must be >= 1".into()));
        }
        if !self.clock_hz.is_positive() {
            return Err(SystemError::InvalidParam("clock_hz must be positive".into()));
        }
        if self.layers < 1 || self.cycles_per_layer_step == 0 {
            return Err(SystemError::InvalidParam("layers and cycles_per_layer_step must be >= 1".into()));
        }
        Ok(())
    }
}

/// The clock (Hz) at which a single tile sustains exactly 0.02 million
/// instructions per second: 0.02e6 * layers * cycles_per_layer_step with the
/// default 2 layers and 8264 cycles per layer step.
pub const REFERENCE_TILE_CLOCK_HZ: i128 = 330_560_000;

fn accel_base(tiles: u32, power_w: f64, area_mm2: f64) -> AcceleratorSpec {
    AcceleratorSpec {
        lanes: 256,
        tiles,
        clock_hz: Ratio::from_integer(REFERENCE_TILE_CLOCK_HZ),
        cycles_per_layer_step: 8264,
        layers: 2,
        matvec_cycles: 256,
        power_w,
        area_mm2,
    }
}

/// Named parameter presets for the `plan` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Measured desktop-GPU engine rate (5.916 MIPS).
    Gpu4090,
    /// Nominal GPU rate used in the overhead walkthrough (4 MIPS).
    Gpu4090Nominal,
    Neutrino1T,
    Neutrino8T,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Preset> {
        Some(match s {
            "gpu-4090" => Preset::Gpu4090,
            "gpu-4090-nominal" => Preset::Gpu4090Nominal,
            "neutrino-1t" => Preset::Neutrino1T,
            "neutrino-8t" => Preset::Neutrino8T,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Gpu4090 => "gpu-4090",
            Preset::Gpu4090Nominal => "gpu-4090-nominal",
            Preset::Neutrino1T => "neutrino-1t",
            Preset::Neutrino8T => "neutrino-8t",
        }
    }

    pub fn accelerator(&self) -> Option<AcceleratorSpec> {
        match self {
            Preset::Neutrino1T => Some(accel_base(1, 0.028, 2.04)),
            Preset::Neutrino8T => Some(accel_base(8, 0.226, 3.15)),
            _ => None,
        }
    }

    /// Engine throughput in MIPS for this preset.
    pub fn engine_mips(&self) -> Rational {
        match self {
            Preset::Gpu4090 => Ratio::new(5916, 1000),
            Preset::Gpu4090Nominal => Ratio::from_integer(4),
            p => accel_throughput(&p.accelerator().unwrap()),
        }
    }

    pub fn deployment(&self, epoch_len: u64) -> DeploymentParams {
        DeploymentParams {
            epoch_len,
            engine_mips: self.engine_mips(),
            host_mips: Ratio::from_integer(3000),
            overhead_budget: Ratio::new(1, 1000),
        }
    }
}

/// A budget-respecting sampling schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub seconds_per_epoch_inference: Rational,
    pub epoch_period_seconds: Rational,
    /// Epochs sampled per epoch executed, in (0, 1].
    pub sampling_ratio: Rational,
    pub instructions_between_samples: Rational,
}

/// Derives the sampling schedule from a deployment's throughput and overhead
/// budget:
/// seconds_per_epoch = epoch_len / (engine_mips * 1e6);
/// epoch_period = seconds_per_epoch / budget;
/// instructions_between_samples = host_mips * 1e6 * epoch_period;
/// sampling_ratio = epoch_len / instructions_between_samples.
pub fn sampling_plan(p: &DeploymentParams) -> Result<SamplingPlan, SystemError> {
    p.validate()?;
    let million = Ratio::from_integer(1_000_000i128);
    let epoch_len = Ratio::from_integer(p.epoch_len as i128);
    let seconds_per_epoch = epoch_len / (p.engine_mips * million);
    let epoch_period = seconds_per_epoch / p.overhead_budget;
    let instructions_between = p.host_mips * million * epoch_period;
    let sampling_ratio = epoch_len / instructions_between;
    Ok(SamplingPlan {
        seconds_per_epoch_inference: seconds_per_epoch,
        epoch_period_seconds: epoch_period,
        sampling_ratio,
        instructions_between_samples: instructions_between,
    })
}

/// Engine throughput in million instructions per second:
/// tiles * clock_hz / (layers * cycles_per_layer_step) / 1e6.
/// Tiles scale linearly (no inter-tile communication).
pub fn accel_throughput(spec: &AcceleratorSpec) -> Rational {
    spec.validate().expect("invalid accelerator spec");
    let cycles_per_inst =
        Ratio::from_integer(spec.layers as i128 * spec.cycles_per_layer_step as i128);
    Ratio::from_integer(spec.tiles as i128) * spec.clock_hz
        / cycles_per_inst
        / Ratio::from_integer(1_000_000)
}

/// Continuous-mode sampling ratio: the accelerator is always busy, so the
/// sampled fraction is engine throughput over host throughput.
pub fn accel_sampling_ratio(spec: &AcceleratorSpec, host_mips: Rational) -> Rational {
    accel_throughput(spec) / host_mips
}

/// (accel_mips / accel_power) / (gpu_mips / gpu_power).
pub fn energy_efficiency_ratio(
    accel: &AcceleratorSpec,
    gpu_mips: f64,
    gpu_power_w: f64,
) -> Result<f64, SystemError> {
    if gpu_mips <= 0.0 || gpu_power_w <= 0.0 || accel.power_w <= 0.0 {
        return Err(SystemError::InvalidParam("throughputs and powers must be positive".into()));
    }
    let accel_mips = accel_throughput(accel).to_f64().unwrap();
    Ok((accel_mips / accel.power_w) / (gpu_mips / gpu_power_w))
}
