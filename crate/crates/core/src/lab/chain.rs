//! A synthetic chain environment that isolates early-progress credit assignment.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainAction {
    Probe,
    Unlock,
    Solve,
    Noop,
}

impl ChainAction {
    pub const ALL: [ChainAction; 4] = [ChainAction::Probe, ChainAction::Unlock, ChainAction::Solve, ChainAction::Noop];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> ChainAction {
        Self::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            ChainAction::Probe => "probe",
            ChainAction::Unlock => "unlock",
            ChainAction::Solve => "solve",
            ChainAction::Noop => "noop",
        }
    }
}

/// `solve` pays 1 and ends the episode once `unlock` has been taken;
/// `probe` pays 0.1 for its first two uses; everything else pays 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainGym {
    pub horizon: usize,
}

impl Default for ChainGym {
    fn default() -> Self {
        Self { horizon: 8 }
    }
}

pub const PROBE_REWARD: f64 = 0.1;
pub const PROBE_LIMIT: u32 = 2;
pub const SOLVE_REWARD: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChainState {
    pub turn: usize,
    pub unlocked: bool,
    pub probes: u32,
    pub solved: bool,
}

impl ChainGym {
    pub const TASK_ID: &'static str = "chain";

    pub fn max_return(&self) -> f64 {
        PROBE_REWARD * PROBE_LIMIT as f64 + SOLVE_REWARD
    }

    pub fn is_done(&self, s: &ChainState) -> bool {
        s.solved || s.turn >= self.horizon
    }

    /// Apply `action` and return the turn reward.
    pub fn step(&self, s: &mut ChainState, action: ChainAction) -> f64 {
        debug_assert!(!self.is_done(s));
        s.turn += 1;
        match action {
            ChainAction::Probe if s.probes < PROBE_LIMIT => {
                s.probes += 1;
                PROBE_REWARD
            }
            ChainAction::Unlock => {
                s.unlocked = true;
                0.0
            }
            ChainAction::Solve if s.unlocked => {
                s.solved = true;
                SOLVE_REWARD
            }
            _ => 0.0,
        }
    }

    /// Rewards of a fixed action sequence, stopping early at termination.
    pub fn run(&self, actions: &[ChainAction]) -> Vec<f64> {
        let mut s = ChainState::default();
        let mut out = Vec::new();
        for &a in actions {
            if self.is_done(&s) {
                break;
            }
            out.push(self.step(&mut s, a));
        }
        out
    }
}
