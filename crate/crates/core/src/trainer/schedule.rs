use serde::{Deserialize, Serialize};

/// Linear warmup, constant hold, then exponential decay to `final_lr_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriStageSchedule {
    pub warmup_steps: u64,
    pub hold_steps: u64,
    pub decay_steps: u64,
    pub peak_lr: f64,
    pub init_lr_scale: f64,
    pub final_lr_scale: f64,
}

impl Default for TriStageSchedule {
    fn default() -> Self {
        Self {
            warmup_steps: 10_000,
            hold_steps: 40_000,
            decay_steps: 50_000,
            peak_lr: 1e-4,
            init_lr_scale: 0.01,
            final_lr_scale: 0.05,
        }
    }
}

impl TriStageSchedule {
    /// Scales all three stage lengths by `factor` (rounded), keeping the lr
    /// constants.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |n: u64| (n as f64 * factor).round() as u64;
        Self {
            warmup_steps: s(self.warmup_steps),
            hold_steps: s(self.hold_steps),
            decay_steps: s(self.decay_steps),
            ..*self
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.warmup_steps + self.hold_steps + self.decay_steps
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let peak = self.peak_lr;
        if step < self.warmup_steps {
            let frac = step as f64 / self.warmup_steps as f64;
            return peak * (self.init_lr_scale + (1.0 - self.init_lr_scale) * frac);
        }
        let step = step - self.warmup_steps;
        if step < self.hold_steps {
            return peak;
        }
        let step = step - self.hold_steps;
        if step < self.decay_steps {
            let frac = step as f64 / self.decay_steps as f64;
            return peak * self.final_lr_scale.powf(frac);
        }
        peak * self.final_lr_scale
    }
}

/// Linear warmup followed by a half cosine down to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CosineSchedule {
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub peak_lr: f64,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self {
            warmup_steps: 500,
            total_steps: 10_000,
            peak_lr: 1e-4,
        }
    }
}

impl CosineSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return 0.0;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let frac = (step - self.warmup_steps) as f64 / span;
        self.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    TriStage(TriStageSchedule),
    Cosine(CosineSchedule),
}

impl Schedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        match self {
            Schedule::TriStage(s) => s.lr_at(step),
            Schedule::Cosine(s) => s.lr_at(step),
        }
    }

    pub fn total_steps(&self) -> u64 {
        match self {
            Schedule::TriStage(s) => s.total_steps(),
            Schedule::Cosine(s) => s.total_steps,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Schedule::TriStage(s) if s.peak_lr.is_nan() || s.peak_lr <= 0.0 => Err("peak_lr must be positive".into()),
            Schedule::Cosine(s) if s.peak_lr.is_nan() || s.peak_lr <= 0.0 => Err("peak_lr must be positive".into()),
            Schedule::Cosine(s) if s.warmup_steps >= s.total_steps => {
                Err("cosine warmup_steps must be below total_steps".into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> TriStageSchedule {
        TriStageSchedule {
            warmup_steps: 100,
            hold_steps: 400,
            decay_steps: 500,
            peak_lr: 1e-3,
            init_lr_scale: 0.01,
            final_lr_scale: 0.05,
        }
    }

    #[test]
    fn tri_stage_boundaries() {
        let s = tri();
        assert_eq!(s.lr_at(0), 1e-3 * 0.01);
        assert_eq!(s.lr_at(100), 1e-3);
        assert_eq!(s.lr_at(499), 1e-3);
        assert_eq!(s.lr_at(500), 1e-3);
        let mid = s.lr_at(750);
        assert!((mid - 1e-3 * 0.05f64.sqrt()).abs() < 1e-15);
        assert!((s.lr_at(1000) - 5e-5).abs() < 1e-18);
        assert!((s.lr_at(5000) - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn tri_stage_is_continuous_at_stage_edges() {
        let s = tri();
        assert!((s.lr_at(99) - s.lr_at(100)).abs() < 1e-3 / 100.0 + 1e-15);
        assert!((s.lr_at(501) - s.lr_at(500)).abs() < 1e-5);
    }

    #[test]
    fn scale_factor_matches_desk_recipe() {
        let s = TriStageSchedule::default().scaled(0.01);
        assert_eq!((s.warmup_steps, s.hold_steps, s.decay_steps), (100, 400, 500));
    }

    #[test]
    fn cosine_endpoints() {
        let c = CosineSchedule {
            warmup_steps: 10,
            total_steps: 110,
            peak_lr: 2.0,
        };
        assert_eq!(c.lr_at(0), 0.0);
        assert_eq!(c.lr_at(10), 2.0);
        assert!((c.lr_at(60) - 1.0).abs() < 1e-12);
        assert_eq!(c.lr_at(110), 0.0);
        assert!(Schedule::Cosine(CosineSchedule { warmup_steps: 5, total_steps: 5, peak_lr: 1.0 })
            .validate()
            .is_err());
    }
}
