use serde::{Deserialize, Serialize};

/// Step schedule: the base rate is multiplied by `factor` at every milestone,
/// each given as a fraction of the total epoch count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<f64>,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 1e-3,
            milestones: vec![0.5, 0.75],
            factor: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize, total_epochs: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch >= (m * total_epochs as f64).round() as usize)
            .count();
        self.base * self.factor.powi(passed as i32)
    }
}
