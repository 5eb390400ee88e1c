//! Per-step training log shared by ELF and the baseline optimizers.

use std::fmt;

/// What produced a log row. Every row accounts for the batches loaded since
/// the previous row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Event {
    /// One probe pass of the initial step-size grid search (or its baseline pass).
    GridSearch,
    /// One complete line search.
    LineSearch,
    /// One SGD update with the current step size.
    Sgd,
    /// One Adam update.
    Adam,
}

impl Event {
    pub fn as_str(self) -> &'static str {
        match self {
            Event::GridSearch => "grid_search",
            Event::LineSearch => "line_search",
            Event::Sgd => "sgd",
            Event::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Event::GridSearch, Event::LineSearch, Event::Sgd, Event::Adam]
            .into_iter()
            .find(|e| e.as_str() == s)
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    /// Batches loaded so far, including this row's.
    pub step: u64,
    pub event: Event,
    pub train_loss: Option<f64>,
    pub update_step: Option<f64>,
    pub expected_improvement: Option<f64>,
    pub real_improvement: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn push(&mut self, row: LogRow) {
        debug_assert!(self.rows.last().is_none_or(|last| last.step <= row.step));
        self.rows.push(row);
    }

    /// Batches loaded over the whole run.
    pub fn total_steps(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.step)
    }

    /// Batches attributed to `event`, reconstructed from consecutive `step`
    /// values.
    pub fn batches_for(&self, event: Event) -> u64 {
        self.deltas().filter(|(e, _)| *e == event).map(|(_, d)| d).sum()
    }

    /// `(event, batches)` per row.
    pub fn deltas(&self) -> impl Iterator<Item = (Event, u64)> + '_ {
        let mut prev = 0;
        self.rows.iter().map(move |r| {
            let d = r.step - prev;
            prev = r.step;
            (r.event, d)
        })
    }

    pub fn count(&self, event: Event) -> usize {
        self.rows.iter().filter(|r| r.event == event).count()
    }

    /// Training loss of the last `window` rows that carry one.
    pub fn recent_train_loss(&self, window: usize) -> Option<f64> {
        let recent: Vec<f64> = self
            .rows
            .iter()
            .rev()
            .filter(|r| matches!(r.event, Event::Sgd | Event::Adam))
            .filter_map(|r| r.train_loss)
            .take(window)
            .collect();
        (!recent.is_empty()).then(|| recent.iter().sum::<f64>() / recent.len() as f64)
    }
}
