//! Per-client, per-round local-step counts modeling computational
//! heterogeneity.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FedsimError, Result};
use crate::numeric::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    /// K_i drawn once per client at round 1 and reused every round.
    Fixed,
    /// K_i redrawn independently each round.
    Random,
}

/// Gaussian step-count schedule, optionally overridden per client.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSchedule {
    pub mean: f64,
    pub variance: f64,
    pub mode: StepMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit_overrides: Option<Vec<usize>>,
}

impl StepSchedule {
    pub fn gaussian(mean: f64, variance: f64, mode: StepMode) -> Result<Self> {
        if mean < 1.0 {
            return Err(FedsimError::config("step mean must be >= 1"));
        }
        if variance < 0.0 {
            return Err(FedsimError::config("step variance must be >= 0"));
        }
        Ok(StepSchedule {
            mean,
            variance,
            mode,
            explicit_overrides: None,
        })
    }

    pub fn explicit(steps: Vec<usize>) -> Result<Self> {
        if steps.contains(&0) {
            return Err(FedsimError::config("explicit step counts must be >= 1"));
        }
        Ok(StepSchedule {
            mean: 0.0,
            variance: 0.0,
            mode: StepMode::Fixed,
            explicit_overrides: Some(steps),
        })
    }
}

/// One round's step counts with the omega-weighted average K-bar.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round: usize,
    pub steps: Vec<usize>,
    pub kbar: f64,
    pub kmax: usize,
    pub kmin: usize,
}

impl RoundPlan {
    fn new(round: usize, steps: Vec<usize>, weights: &[f64]) -> Self {
        let kbar = weights.iter().zip(&steps).map(|(w, &k)| w * k as f64).sum();
        let kmax = *steps.iter().max().expect("nonempty steps");
        let kmin = *steps.iter().min().expect("nonempty steps");
        RoundPlan {
            round,
            steps,
            kbar,
            kmax,
            kmin,
        }
    }

    pub fn has_step_asynchronism(&self) -> bool {
        self.kmax != self.kmin
    }
}

fn draw_raw(schedule: &StepSchedule, m: usize, stream: &mut RngStream) -> Vec<usize> {
    if schedule.variance == 0.0 {
        return vec![schedule.mean.round().max(1.0) as usize; m];
    }
    let normal = Normal::new(schedule.mean, schedule.variance.sqrt()).expect("valid normal");
    (0..m)
        .map(|_| {
            let k = normal.sample(stream.rng()).round();
            k.max(1.0) as usize
        })
        .collect()
}

/// Draws the RoundPlan for `round` (1-based). Fixed mode always reuses the
/// round-1 draws, so the plan for any round is derived from the round-1
/// stream.
pub fn draw_steps(
    schedule: &StepSchedule,
    round: usize,
    m: usize,
    weights: &[f64],
    seed: u64,
) -> Result<RoundPlan> {
    if m == 0 || weights.len() != m {
        return Err(FedsimError::config("need M >= 1 and one weight per client"));
    }
    if let Some(overrides) = &schedule.explicit_overrides {
        if overrides.len() != m {
            return Err(FedsimError::config("override count must equal M"));
        }
        return Ok(RoundPlan::new(round, overrides.clone(), weights));
    }
    let draw_round = match schedule.mode {
        StepMode::Fixed => 1,
        StepMode::Random => round,
    };
    let mut stream = RngStream::for_steps(seed, draw_round);
    Ok(RoundPlan::new(round, draw_raw(schedule, m, &mut stream), weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_is_constant() {
        let s = StepSchedule::gaussian(100.0, 0.0, StepMode::Fixed).unwrap();
        let plan = draw_steps(&s, 1, 3, &[0.3, 0.3, 0.4], 1).unwrap();
        assert_eq!(plan.steps, vec![100, 100, 100]);
        assert_eq!(plan.kbar, 100.0);
        assert!(!plan.has_step_asynchronism());
    }

    #[test]
    fn explicit_overrides_kbar() {
        let s = StepSchedule::explicit(vec![1, 20]).unwrap();
        let plan = draw_steps(&s, 1, 2, &[0.5, 0.5], 1).unwrap();
        assert_eq!(plan.kbar, 10.5);
        assert_eq!(plan.kmin, 1);
        assert_eq!(plan.kmax, 20);
    }

    #[test]
    fn fixed_mode_repeats_round_one() {
        let s = StepSchedule::gaussian(500.0, 10000.0, StepMode::Fixed).unwrap();
        let w = vec![1.0 / 20.0; 20];
        let first = draw_steps(&s, 1, 20, &w, 9).unwrap();
        for round in 2..=50 {
            let plan = draw_steps(&s, round, 20, &w, 9).unwrap();
            assert_eq!(plan.steps, first.steps);
        }
    }

    #[test]
    fn random_mode_reproducible_and_varying() {
        let s = StepSchedule::gaussian(50.0, 400.0, StepMode::Random).unwrap();
        let w = vec![0.25; 4];
        let a: Vec<_> = (1..=20).map(|r| draw_steps(&s, r, 4, &w, 7).unwrap().steps).collect();
        let b: Vec<_> = (1..=20).map(|r| draw_steps(&s, r, 4, &w, 7).unwrap().steps).collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|steps| steps != &a[0]));
    }

    #[test]
    fn clamped_at_one_under_huge_variance() {
        let s = StepSchedule::gaussian(2.0, 1e6, StepMode::Random).unwrap();
        let w = vec![0.01; 100];
        for round in 1..=50 {
            let plan = draw_steps(&s, round, 100, &w, 3).unwrap();
            assert!(plan.steps.iter().all(|&k| k >= 1));
        }
    }

    #[test]
    fn empirical_mean_matches() {
        let mean = 50.0;
        let variance = 100.0;
        let s = StepSchedule::gaussian(mean, variance, StepMode::Random).unwrap();
        let m = 100;
        let w = vec![1.0 / m as f64; m];
        let mut total = 0.0;
        let mut count = 0usize;
        for round in 1..=100 {
            let plan = draw_steps(&s, round, m, &w, 21).unwrap();
            total += plan.steps.iter().sum::<usize>() as f64;
            count += m;
        }
        let empirical = total / count as f64;
        let bound = 3.0 * (variance / count as f64).sqrt() + 0.5;
        assert!((empirical - mean).abs() < bound, "empirical {empirical}");
    }
}
