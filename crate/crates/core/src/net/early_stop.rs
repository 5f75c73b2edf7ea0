use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stalled,
    Stop,
}

/// Stops after `patience` consecutive epochs without an improvement larger than `min_delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub goal: Goal,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64, goal: Goal) -> Self {
        Self {
            patience: patience.max(1),
            min_delta,
            goal,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Record the metric of `epoch`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> Verdict {
        let better = match (self.best, self.goal) {
            (None, _) => !value.is_nan(),
            (Some(b), Goal::Minimize) => value < b - self.min_delta,
            (Some(b), Goal::Maximize) => value > b + self.min_delta,
        };
        if better {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.stale = 0;
            Verdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Stalled
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn stale_epochs(&self) -> usize {
        self.stale
    }
}
