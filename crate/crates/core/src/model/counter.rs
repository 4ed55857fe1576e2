use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Where a pass is spent. `Acquisition` and `Training` are the two columns of
/// the per-iteration complexity accounting; `Screening` holds the validation
/// forward used to find misclassified points, kept apart so the acquisition
/// column can be checked against its closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Screening,
    Acquisition,
    Training,
    Evaluation,
    Pretraining,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Screening,
        Phase::Acquisition,
        Phase::Training,
        Phase::Evaluation,
        Phase::Pretraining,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

/// Per-sample forward/backward pass counts, by phase.
#[derive(Debug, Default)]
pub struct PassCounter {
    forward: [AtomicU64; 5],
    backward: [AtomicU64; 5],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passes {
    pub forward: u64,
    pub backward: u64,
}

impl Passes {
    pub fn total(&self) -> u64 {
        self.forward + self.backward
    }
}

impl std::ops::Sub for Passes {
    type Output = Passes;
    fn sub(self, rhs: Passes) -> Passes {
        Passes {
            forward: self.forward - rhs.forward,
            backward: self.backward - rhs.backward,
        }
    }
}

impl PassCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_forward(&self, phase: Phase, n: u64) {
        self.forward[phase.slot()].fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_backward(&self, phase: Phase, n: u64) {
        self.backward[phase.slot()].fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self, phase: Phase) -> Passes {
        Passes {
            forward: self.forward[phase.slot()].load(Ordering::Relaxed),
            backward: self.backward[phase.slot()].load(Ordering::Relaxed),
        }
    }

    /// Zeroes all counters. Only called between iterations.
    pub fn reset(&self) {
        for a in self.forward.iter().chain(self.backward.iter()) {
            a.store(0, Ordering::Relaxed);
        }
    }
}

/// A counter bound to the phase that is currently running.
#[derive(Debug, Clone, Copy)]
pub struct Tally<'a> {
    counter: Option<&'a PassCounter>,
    phase: Phase,
}

impl<'a> Tally<'a> {
    pub fn new(counter: &'a PassCounter, phase: Phase) -> Self {
        Tally {
            counter: Some(counter),
            phase,
        }
    }

    /// Counts nothing.
    pub fn none() -> Tally<'static> {
        Tally {
            counter: None,
            phase: Phase::Evaluation,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn with_phase(self, phase: Phase) -> Self {
        Tally { phase, ..self }
    }

    pub(crate) fn forward(&self, n: usize) {
        if let Some(c) = self.counter {
            c.add_forward(self.phase, n as u64);
        }
    }

    pub(crate) fn backward(&self, n: usize) {
        if let Some(c) = self.counter {
            c.add_backward(self.phase, n as u64);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_are_separate_and_monotone() {
        let c = PassCounter::new();
        let t = Tally::new(&c, Phase::Training);
        t.forward(5);
        t.backward(5);
        t.with_phase(Phase::Acquisition).forward(3);
        assert_eq!(
            c.get(Phase::Training),
            Passes {
                forward: 5,
                backward: 5
            }
        );
        assert_eq!(c.get(Phase::Acquisition).total(), 3);
        assert_eq!(c.get(Phase::Screening).total(), 0);
        c.reset();
        assert_eq!(c.get(Phase::Training).total(), 0);
        Tally::none().forward(10);
    }
}
