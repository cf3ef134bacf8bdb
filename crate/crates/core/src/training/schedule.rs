use crate::error::{Error, Result};

/// Learning-rate schedule, evaluated per step within a phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    /// `peak * min(step / warmup, sqrt(warmup / step))`.
    InverseSqrt { peak: f64, warmup: u64 },
    /// Linear interpolation from `start` to `end` over `total` steps.
    Linear { start: f64, end: f64, total: u64 },
}

/// Learning rate at 1-based `step`.
pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    let s = step.max(1) as f64;
    match *schedule {
        LrSchedule::InverseSqrt { peak, warmup } => {
            let w = warmup.max(1) as f64;
            peak * (s / w).min((w / s).sqrt())
        }
        LrSchedule::Linear { start, end, total } => {
            let frac = (s / total.max(1) as f64).min(1.0);
            start + (end - start) * frac
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::InverseSqrt { peak, .. } => peak > 0.0,
            LrSchedule::Linear { start, end, .. } => start > 0.0 && end > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("learning rates must be positive"))
        }
    }
}

/// Fraction of prediction errors revealed by glancing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GlancingSchedule {
    Off,
    /// Ratio annealed linearly from `start` to `end` across the NAT phase.
    Linear { start: f64, end: f64 },
}

impl GlancingSchedule {
    /// Ratio at 0-based `step` of a phase lasting `total` steps.
    pub fn ratio_at(&self, step: u64, total: u64) -> f64 {
        match *self {
            GlancingSchedule::Off => 0.0,
            GlancingSchedule::Linear { start, end } => {
                let frac = if total <= 1 { 0.0 } else { step as f64 / (total - 1) as f64 };
                start + (end - start) * frac.min(1.0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let GlancingSchedule::Linear { start, end } = *self {
            if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) {
                return Err(Error::config("glancing ratios must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}
