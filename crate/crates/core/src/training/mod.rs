//! Curriculum training: phase batches, schedules, losses and the training loops.

mod glancing;
mod loss;
mod phases;
mod schedule;
mod trainer;

pub use glancing::{glance_node, glancing_index, glancing_positions, glancing_sample};
pub use loss::{filtered_targets, nat_loss, phase_loss, StepNodes, StepOptions};
pub use phases::{make_phase_batch, make_teacher_batch, CurriculumSchedule, DecoderInput, PhaseBatch, PhaseKind, PRESETS};
pub use schedule::{lr_at, GlancingSchedule, LrSchedule};
pub use trainer::{train_at_teacher, train_curriculum, train_curriculum_until, LogRow, TrainData, TrainOutcome, LOG_HEADER};

use crate::config::{parse_bool, KeyValues};
use crate::error::{Error, Result};

/// Optimization settings shared by teacher and student runs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub schedule: CurriculumSchedule,
    pub lr: LrSchedule,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub seed: u64,
    pub glancing: GlancingSchedule,
    pub length_weight: f64,
    /// Steps between log rows and checkpoints (phase ends always log).
    pub checkpoint_interval: u64,
    pub batch_tokens: usize,
    /// Fresh Adam moments at every phase boundary.
    pub reset_optimizer: bool,
    /// Apply the input transformation in causal phases too.
    pub it_in_pretraining: bool,
    /// Validation pairs scored per log row (0 = all).
    pub valid_limit: usize,
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "schedule",
        "steps_per_phase",
        "lr_schedule",
        "lr_peak",
        "warmup",
        "lr_start",
        "lr_end",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "seed",
        "glancing",
        "glancing_start",
        "glancing_end",
        "length_weight",
        "checkpoint_interval",
        "batch_tokens",
        "reset_optimizer",
        "it_in_pretraining",
        "valid_limit",
    ];

    /// Defaults with the given schedule and seed.
    pub fn new(schedule: CurriculumSchedule, seed: u64) -> Self {
        TrainConfig {
            schedule,
            lr: LrSchedule::InverseSqrt { peak: 1e-3, warmup: 200 },
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            seed,
            glancing: GlancingSchedule::Off,
            length_weight: 0.1,
            checkpoint_interval: 500,
            batch_tokens: 1024,
            reset_optimizer: true,
            it_in_pretraining: false,
            valid_limit: 0,
        }
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let steps: u64 = kv.parse_or("steps_per_phase", 2000)?;
        let schedule = CurriculumSchedule::preset(kv.get("schedule").unwrap_or("NAT"), steps)?;
        let mut c = TrainConfig::new(schedule, kv.require("seed")?);
        c.lr = match kv.get("lr_schedule").unwrap_or("inverse_sqrt") {
            "inverse_sqrt" => LrSchedule::InverseSqrt {
                peak: kv.parse_or("lr_peak", 1e-3)?,
                warmup: kv.parse_or("warmup", 200)?,
            },
            "linear" => LrSchedule::Linear {
                start: kv.parse_or("lr_start", 3e-4)?,
                end: kv.parse_or("lr_end", 1e-5)?,
                total: steps,
            },
            other => {
                return Err(Error::config(format!(
                    "unknown lr_schedule `{other}` (expected inverse_sqrt or linear)"
                )))
            }
        };
        c.adam_beta1 = kv.parse_or("adam_beta1", c.adam_beta1)?;
        c.adam_beta2 = kv.parse_or("adam_beta2", c.adam_beta2)?;
        c.adam_eps = kv.parse_or("adam_eps", c.adam_eps)?;
        c.glancing = match kv.get("glancing").unwrap_or("off") {
            "off" => GlancingSchedule::Off,
            "linear" => GlancingSchedule::Linear {
                start: kv.parse_or("glancing_start", 0.5)?,
                end: kv.parse_or("glancing_end", 0.3)?,
            },
            other => return Err(Error::config(format!("unknown glancing `{other}` (expected off or linear)"))),
        };
        c.length_weight = kv.parse_or("length_weight", c.length_weight)?;
        c.checkpoint_interval = kv.parse_or("checkpoint_interval", c.checkpoint_interval)?;
        c.batch_tokens = kv.parse_or("batch_tokens", c.batch_tokens)?;
        c.reset_optimizer = parse_bool(kv, "reset_optimizer", c.reset_optimizer)?;
        c.it_in_pretraining = parse_bool(kv, "it_in_pretraining", c.it_in_pretraining)?;
        c.valid_limit = kv.parse_or("valid_limit", c.valid_limit)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("schedule", self.schedule.name());
        kv.set("steps_per_phase", self.schedule.steps_per_phase);
        match self.lr {
            LrSchedule::InverseSqrt { peak, warmup } => {
                kv.set("lr_schedule", "inverse_sqrt");
                kv.set("lr_peak", peak);
                kv.set("warmup", warmup);
            }
            LrSchedule::Linear { start, end, .. } => {
                kv.set("lr_schedule", "linear");
                kv.set("lr_start", start);
                kv.set("lr_end", end);
            }
        }
        kv.set("adam_beta1", self.adam_beta1);
        kv.set("adam_beta2", self.adam_beta2);
        kv.set("adam_eps", self.adam_eps);
        kv.set("seed", self.seed);
        match self.glancing {
            GlancingSchedule::Off => kv.set("glancing", "off"),
            GlancingSchedule::Linear { start, end } => {
                kv.set("glancing", "linear");
                kv.set("glancing_start", start);
                kv.set("glancing_end", end);
            }
        }
        kv.set("length_weight", self.length_weight);
        kv.set("checkpoint_interval", self.checkpoint_interval);
        kv.set("batch_tokens", self.batch_tokens);
        kv.set("reset_optimizer", self.reset_optimizer);
        kv.set("it_in_pretraining", self.it_in_pretraining);
        kv.set("valid_limit", self.valid_limit);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        self.glancing.validate()?;
        if !(self.length_weight >= 0.0) {
            return Err(Error::config("length_weight must be non-negative"));
        }
        if self.checkpoint_interval == 0 || self.batch_tokens == 0 {
            return Err(Error::config("checkpoint_interval and batch_tokens must be positive"));
        }
        let b = |x: f32| (0.0..1.0).contains(&x);
        if !b(self.adam_beta1) || !b(self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("adam betas must lie in [0, 1) and adam_eps must be positive"));
        }
        Ok(())
    }
}
