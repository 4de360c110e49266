/// Reduce-on-plateau learning-rate schedule driven by a validation loss
/// (lower is better).
///
/// After `patience` consecutive epochs without a strict improvement over the
/// best loss seen so far, the learning rate is multiplied by `factor` and
/// clamped to `min_lr`, and the counter resets. NaN losses count as
/// non-improving.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best_metric: f64,
    epochs_since_improve: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(0.5, 2, 1e-6)
    }
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        assert!(factor > 0.0 && factor < 1.0, "factor must lie in (0, 1)");
        assert!(min_lr >= 0.0, "min_lr must be nonnegative");
        Self {
            factor,
            patience,
            min_lr,
            best_metric: f64::INFINITY,
            epochs_since_improve: 0,
        }
    }

    pub fn best_metric(&self) -> f64 {
        self.best_metric
    }

    pub fn epochs_since_improve(&self) -> usize {
        self.epochs_since_improve
    }

    /// Records one epoch's metric and returns the learning rate to use next.
    pub fn update(&mut self, epoch_metric: f64, current_lr: f64) -> f64 {
        if epoch_metric < self.best_metric {
            self.best_metric = epoch_metric;
            self.epochs_since_improve = 0;
            return current_lr;
        }
        self.epochs_since_improve += 1;
        if self.epochs_since_improve >= self.patience {
            self.epochs_since_improve = 0;
            // Never raise a rate that is already below the floor.
            return (current_lr * self.factor).max(self.min_lr).min(current_lr);
        }
        current_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stagnation_halves_after_patience() {
        let mut s = PlateauScheduler::new(0.5, 2, 1e-6);
        let mut lr = 0.1;
        let mut trace = vec![];
        for _ in 0..3 {
            lr = s.update(1.0, lr);
            trace.push(lr);
        }
        assert_eq!(trace, vec![0.1, 0.1, 0.05]);
    }

    #[test]
    fn decreasing_losses_keep_lr() {
        let mut s = PlateauScheduler::default();
        let mut lr = 0.1;
        for i in 0..20 {
            lr = s.update(1.0 / (i + 1) as f64, lr);
        }
        assert_eq!(lr, 0.1);
    }

    #[test]
    fn floor_clamp() {
        let mut s = PlateauScheduler::new(0.5, 0, 0.01);
        assert_eq!(s.update(1.0, 0.015), 0.015);
        assert_eq!(s.update(1.0, 0.015), 0.01);
        assert_eq!(s.update(1.0, 0.01), 0.01);
    }

    #[test]
    fn nan_counts_as_no_improvement() {
        let mut s = PlateauScheduler::new(0.5, 1, 0.0);
        s.update(1.0, 0.1);
        assert_eq!(s.update(f64::NAN, 0.1), 0.05);
        assert_eq!(s.best_metric(), 1.0);
    }
}
