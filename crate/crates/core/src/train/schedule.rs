use super::TrainError;

/// Linear warmup from `init_lr` to `max_lr`, then exponential decay that
/// lands on `final_lr` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoamSchedule {
    init_lr: f64,
    max_lr: f64,
    final_lr: f64,
    warmup_steps: usize,
    total_steps: usize,
}

impl NoamSchedule {
    pub fn new(init_lr: f64, max_lr: f64, final_lr: f64, warmup_steps: usize, total_steps: usize) -> Result<Self, TrainError> {
        let bad = |why: &str| Err(TrainError::InvalidSchedule(why.to_string()));
        if !(init_lr.is_finite() && max_lr.is_finite() && final_lr.is_finite()) {
            return bad("learning rates must be finite");
        }
        if !(init_lr > 0.0 && init_lr <= max_lr) {
            return bad("need 0 < init_lr <= max_lr");
        }
        if !(final_lr > 0.0 && final_lr <= max_lr) {
            return bad("need 0 < final_lr <= max_lr");
        }
        if warmup_steps >= total_steps {
            return bad("warmup must end before the last step");
        }
        Ok(Self { init_lr, max_lr, final_lr, warmup_steps, total_steps })
    }

    /// Schedule derived from epoch counts.
    pub fn from_epochs(
        init_lr: f64,
        max_lr: f64,
        final_lr: f64,
        warmup_epochs: usize,
        epochs: usize,
        steps_per_epoch: usize,
    ) -> Result<Self, TrainError> {
        Self::new(init_lr, max_lr, final_lr, warmup_epochs * steps_per_epoch, epochs * steps_per_epoch)
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_steps
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Per-step decay factor after warmup.
    pub fn gamma(&self) -> f64 {
        (self.final_lr / self.max_lr).powf(1.0 / (self.total_steps - self.warmup_steps) as f64)
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            let frac = step as f64 / self.warmup_steps as f64;
            self.init_lr + (self.max_lr - self.init_lr) * frac
        } else if step >= self.total_steps {
            self.final_lr
        } else {
            let frac = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
            self.max_lr * (self.final_lr / self.max_lr).powf(frac)
        }
    }
}

/// Learning rate at `step` for a warmup-then-decay run.
pub fn noam_lr(
    step: usize,
    init_lr: f64,
    max_lr: f64,
    final_lr: f64,
    warmup_steps: usize,
    total_steps: usize,
) -> Result<f64, TrainError> {
    Ok(NoamSchedule::new(init_lr, max_lr, final_lr, warmup_steps, total_steps)?.lr(step))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn anchors() {
        let s = NoamSchedule::new(1e-4, 1e-3, 1e-4, 20, 200).unwrap();
        assert_eq!(s.lr(0), 1e-4);
        assert_eq!(s.lr(20), 1e-3);
        assert!(rel(s.lr(200), 1e-4) < 1e-12);
        assert!(rel(s.lr(199) * s.gamma(), 1e-4) < 1e-12);
        assert!(s.lr(10) > s.lr(5) && s.lr(100) < s.lr(50));
    }

    #[test]
    fn continuity_at_warmup_boundary() {
        let s = NoamSchedule::new(1e-5, 2e-3, 1e-5, 1_000_000, 2_000_000).unwrap();
        let before = s.lr(999_999);
        let after = s.lr(1_000_000);
        assert!(rel(before, after) < 1e-5);
        // Extrapolating the ramp formula to the boundary lands on max_lr.
        assert!(rel(1e-5 + (2e-3 - 1e-5) * 1.0, after) < 1e-12);
    }

    #[test]
    fn zero_warmup_starts_at_max() {
        let s = NoamSchedule::new(1e-4, 1e-3, 1e-5, 0, 10).unwrap();
        assert_eq!(s.lr(0), 1e-3);
    }

    #[test]
    fn invalid_rates() {
        assert!(NoamSchedule::new(2e-3, 1e-3, 1e-4, 1, 10).is_err());
        assert!(NoamSchedule::new(0.0, 1e-3, 1e-4, 1, 10).is_err());
        assert!(NoamSchedule::new(1e-4, 1e-3, 2e-3, 1, 10).is_err());
        assert!(NoamSchedule::new(1e-4, 1e-3, 1e-4, 10, 10).is_err());
        assert!(noam_lr(0, 1e-4, f64::NAN, 1e-4, 1, 10).is_err());
    }
}
