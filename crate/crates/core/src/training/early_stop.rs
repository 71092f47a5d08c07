/// Patience-based stopping on a validation metric (higher is better).
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    bad_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: None, bad_epochs: 0 }
    }

    /// `(epoch, metric)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    /// Records `metric` for `epoch`. Returns whether it improved on the best
    /// (ties do not) and whether to stop.
    pub fn update(&mut self, epoch: usize, metric: f64) -> (bool, StopDecision) {
        let improved = self.best.is_none_or(|(_, b)| metric > b);
        if improved {
            self.best = Some((epoch, metric));
            self.bad_epochs = 0;
            return (true, StopDecision::Continue);
        }
        self.bad_epochs += 1;
        let d = if self.bad_epochs >= self.patience.max(1) { StopDecision::Stop } else { StopDecision::Continue };
        (false, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: usize, metrics: &[f64]) -> (Option<usize>, usize) {
        let mut s = EarlyStopper::new(p);
        for (i, &m) in metrics.iter().enumerate() {
            if s.update(i + 1, m).1 == StopDecision::Stop {
                return (Some(i + 1), s.best().unwrap().0);
            }
        }
        (None, s.best().unwrap().0)
    }

    #[test]
    fn plateau_stops_after_patience() {
        assert_eq!(run(2, &[0.5, 0.6, 0.6, 0.6]), (Some(4), 2));
    }

    #[test]
    fn increasing_never_stops() {
        assert_eq!(run(1, &[0.1, 0.2, 0.3, 0.4, 0.5]), (None, 5));
    }

    #[test]
    fn zero_patience_stops_at_first_non_improvement() {
        assert_eq!(run(0, &[0.3, 0.5, 0.4, 0.9]), (Some(3), 2));
    }
}
