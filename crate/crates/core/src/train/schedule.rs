//! Learning-rate plateau schedule.

/// Halves the learning rate whenever the best loss has not improved for
/// `patience` consecutive steps, at most `max_halvings` times.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    patience: usize,
    max_halvings: usize,
    halvings: usize,
    best: f64,
    since_best: usize,
}

impl PlateauSchedule {
    pub fn new(lr0: f64, patience: usize, max_halvings: usize) -> Self {
        Self { lr: lr0, patience, max_halvings, halvings: 0, best: f64::INFINITY, since_best: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn halvings(&self) -> usize {
        self.halvings
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Record one step's loss; returns the learning rate for the next step.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience && self.halvings < self.max_halvings {
                self.lr *= 0.5;
                self.halvings += 1;
                self.since_best = 0;
            }
        }
        self.lr
    }

    /// State for checkpoints: `(lr, halvings, best, since_best)`.
    pub fn state(&self) -> (f64, usize, f64, usize) {
        (self.lr, self.halvings, self.best, self.since_best)
    }

    pub fn restore(&mut self, lr: f64, halvings: usize, best: f64, since_best: usize) {
        self.lr = lr;
        self.halvings = halvings;
        self.best = best;
        self.since_best = since_best;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_improving_loss_halves_four_times() {
        let mut s = PlateauSchedule::new(1e-3, 2500, 4);
        let mut seen = vec![s.lr()];
        for _ in 0..20 * 2500 {
            let lr = s.observe(1.0);
            if lr != *seen.last().unwrap() {
                seen.push(lr);
            }
        }
        assert_eq!(seen, vec![1e-3, 5e-4, 2.5e-4, 1.25e-4, 6.25e-5]);
    }

    #[test]
    fn halving_happens_after_full_patience() {
        let mut s = PlateauSchedule::new(1.0, 3, 4);
        s.observe(1.0);
        assert_eq!(s.observe(1.0), 1.0);
        assert_eq!(s.observe(2.0), 1.0);
        assert_eq!(s.observe(1.0), 0.5);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = PlateauSchedule::new(1.0, 3, 4);
        for i in 0..100 {
            s.observe(1.0 / (i + 1) as f64);
        }
        assert_eq!(s.lr(), 1.0);
    }
}
