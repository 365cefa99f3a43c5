//! Exponentially decaying learning-rate schedule.

/// Geometric interpolation from `lr_start` at step 0 to `lr_end` at
/// `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpDecaySchedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_steps: u64,
}

impl ExpDecaySchedule {
    pub fn new(lr_start: f64, lr_end: f64, total_steps: u64) -> Self {
        assert!(
            lr_start > 0.0 && lr_end > 0.0,
            "geometric schedule needs positive endpoints"
        );
        assert!(total_steps > 0, "schedule needs at least one step");
        Self {
            lr_start,
            lr_end,
            total_steps,
        }
    }

    /// `lr_start * (lr_end/lr_start)^(step/total_steps)`, clamped to the
    /// endpoints outside `[0, total_steps]`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let s = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(s)
    }
}
