// SPDX-License-Identifier: MIT OR Apache-2.0

//! Gaussian multi-armed bandit.
//!
//! Each arm draws from its own ChaCha8 stream derived from the config seed,
//! so the `n`-th pull of arm `a` yields the same value no matter how pulls
//! of other arms are interleaved.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::ScenarioKind;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    pub horizon: u32,
    #[serde(default)]
    pub seed: u64,
}

impl BanditConfig {
    pub fn new(means: Vec<f64>, stddevs: Vec<f64>, horizon: u32, seed: u64) -> Self {
        Self {
            means,
            stddevs,
            horizon,
            seed,
        }
    }

    pub fn n_arms(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() != self.stddevs.len() {
            return Err(Error::Config(format!(
                "bandit has {} means but {} stddevs",
                self.means.len(),
                self.stddevs.len()
            )));
        }
        if self.means.len() < 2 {
            return Err(Error::Config(format!(
                "bandit needs at least 2 arms, got {}",
                self.means.len()
            )));
        }
        if let Some(m) = self.means.iter().find(|m| !m.is_finite()) {
            return Err(Error::Config(format!("arm mean {m} is not finite")));
        }
        if let Some(s) = self.stddevs.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Config(format!("arm stddev {s} must be positive")));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one pull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
    pub arm: usize,
    pub timestep: u32,
}

#[derive(Debug, Clone)]
pub struct BanditEnv {
    config: BanditConfig,
    arms: Vec<(Normal<f64>, ChaCha8Rng)>,
    t: u32,
}

impl BanditEnv {
    pub fn new(config: BanditConfig) -> Result<Self> {
        config.validate()?;
        let arms = config
            .means
            .iter()
            .zip(&config.stddevs)
            .enumerate()
            .map(|(a, (&mu, &sd))| {
                let normal = Normal::new(mu, sd).expect("validated");
                (normal, seed::rng(seed::split(config.seed, seed::stream::ARM, a as u64)))
            })
            .collect();
        Ok(Self { config, arms, t: 0 })
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    /// Pulls taken so far.
    pub fn timestep(&self) -> u32 {
        self.t
    }

    pub fn pull(&mut self, arm: usize) -> Result<Reward> {
        let n_arms = self.arms.len();
        if arm >= n_arms {
            return Err(Error::ArmOutOfRange { arm, n_arms });
        }
        if self.t >= self.config.horizon {
            return Err(Error::HorizonExceeded {
                horizon: self.config.horizon,
            });
        }
        self.t += 1;
        let (normal, rng) = &mut self.arms[arm];
        Ok(Reward {
            value: normal.sample(rng),
            arm,
            timestep: self.t,
        })
    }
}

/// One Gaussian draw; a zero stddev returns `mean` exactly.
pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, stddev: f64) -> Result<f64> {
    let normal = Normal::new(mean, stddev)
        .map_err(|e| Error::InvalidArgument(format!("gaussian({mean}, {stddev}): {e}")))?;
    Ok(normal.sample(rng))
}

/// Feedback line shown to the agent after a pull, e.g.
/// `Result: You received 101.28 points.`
///
/// Values are rendered with two decimals from the exact binary value, with
/// exact ties going to even. Negative values keep their sign.
pub fn feedback_text(reward: &Reward, scenario: ScenarioKind) -> String {
    let mut amount = format!("{:.2}", reward.value);
    if amount == "-0.00" {
        amount = "0.00".to_owned();
    }
    format!("Result: You received {amount} {}.", scenario.unit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use regex::Regex;

    fn cfg(means: &[f64], sd: f64) -> BanditConfig {
        BanditConfig::new(means.to_vec(), vec![sd; means.len()], 50, 7)
    }

    #[test]
    fn valid_configs_from_the_experiments() {
        assert!(BanditEnv::new(cfg(&[100.0, 100.0], 10.0)).is_ok());
        assert!(BanditEnv::new(cfg(&[95.0, 105.0], 10.0)).is_ok());
    }

    #[test]
    fn invalid_configs() {
        assert!(BanditEnv::new(cfg(&[100.0], 10.0)).is_err());
        assert!(BanditEnv::new(BanditConfig::new(vec![1.0, 2.0], vec![1.0], 5, 0)).is_err());
        assert!(BanditEnv::new(cfg(&[1.0, 2.0], 0.0)).is_err());
        assert!(BanditEnv::new(cfg(&[1.0, 2.0], -1.0)).is_err());
        assert!(BanditEnv::new(BanditConfig::new(vec![1.0, 2.0], vec![1.0, 1.0], 0, 0)).is_err());
    }

    #[test]
    fn zero_variance_draw_is_exact() {
        let mut rng = seed::rng(3);
        for _ in 0..100 {
            assert_eq!(sample_gaussian(&mut rng, 100.0, 0.0).unwrap(), 100.0);
        }
    }

    #[test]
    fn pull_errors() {
        let mut env = BanditEnv::new(BanditConfig::new(vec![0.0, 1.0], vec![1.0, 1.0], 2, 0)).unwrap();
        assert!(matches!(env.pull(2), Err(Error::ArmOutOfRange { arm: 2, n_arms: 2 })));
        let r = env.pull(0).unwrap();
        assert_eq!(r.timestep, 1);
        env.pull(1).unwrap();
        assert!(matches!(env.pull(0), Err(Error::HorizonExceeded { horizon: 2 })));
    }

    #[test]
    fn same_seed_same_stream() {
        let seq = [0usize, 1, 1, 0, 1, 0, 0, 0];
        let run = || {
            let mut env = BanditEnv::new(cfg(&[95.0, 105.0], 10.0)).unwrap();
            seq.iter().map(|&a| env.pull(a).unwrap().value.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn arms_have_independent_streams() {
        let mut a = BanditEnv::new(cfg(&[0.0, 0.0], 1.0)).unwrap();
        let mut b = BanditEnv::new(cfg(&[0.0, 0.0], 1.0)).unwrap();
        let a0: Vec<f64> = [0, 0, 1, 0].iter().map(|&x| a.pull(x).unwrap().value).collect();
        let b0: Vec<f64> = [1, 1, 0, 0, 0].iter().map(|&x| b.pull(x).unwrap().value).collect();
        // Arm-0 draws agree in order regardless of interleaving.
        assert_eq!([a0[0], a0[1], a0[3]], [b0[2], b0[3], b0[4]]);
    }

    #[test]
    fn sample_moments_converge() {
        for (n, mu) in [(10_000u32, 100.0), (100_000u32, 100.0)] {
            let mut env = BanditEnv::new(BanditConfig::new(vec![mu, 0.0], vec![10.0, 1.0], n, 11)).unwrap();
            let xs: Vec<f64> = (0..n).map(|_| env.pull(0).unwrap().value).collect();
            let mean = xs.iter().sum::<f64>() / f64::from(n);
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / f64::from(n - 1);
            let se = 10.0 / f64::from(n).sqrt();
            assert!((mean - mu).abs() < 5.0 * se, "n={n} mean={mean}");
            // stddev of the sample stddev is about sigma / sqrt(2n).
            let se_sd = 10.0 / (2.0 * f64::from(n)).sqrt();
            assert!((var.sqrt() - 10.0).abs() < 5.0 * se_sd, "n={n} sd={}", var.sqrt());
        }
    }

    #[test]
    fn feedback_formatting() {
        let r = |value| Reward {
            value,
            arm: 0,
            timestep: 1,
        };
        assert_eq!(
            feedback_text(&r(101.28), ScenarioKind::Buttons),
            "Result: You received 101.28 points."
        );
        assert_eq!(
            feedback_text(&r(100.0), ScenarioKind::Buttons),
            "Result: You received 100.00 points."
        );
        // 84.725 is stored as 84.72499999999999431566..., so it rounds down.
        assert_eq!(
            feedback_text(&r(84.725), ScenarioKind::SlotMachines),
            "Result: You received 84.72 dollars."
        );
        // Exactly representable ties go to even.
        assert_eq!(feedback_text(&r(0.125), ScenarioKind::Buttons), "Result: You received 0.12 points.");
        assert_eq!(feedback_text(&r(0.375), ScenarioKind::Buttons), "Result: You received 0.38 points.");
        assert_eq!(feedback_text(&r(-3.1), ScenarioKind::Buttons), "Result: You received -3.10 points.");
        assert_eq!(feedback_text(&r(-0.001), ScenarioKind::Buttons), "Result: You received 0.00 points.");
    }

    proptest! {
        #[test]
        fn feedback_always_matches_pattern(v in 0.0f64..1e7, slot in any::<bool>()) {
            let re = Regex::new(r"^Result: You received [0-9]+\.[0-9]{2} (points|dollars)\.$").unwrap();
            let scenario = if slot { ScenarioKind::SlotMachines } else { ScenarioKind::Buttons };
            let text = feedback_text(&Reward { value: v, arm: 0, timestep: 1 }, scenario);
            prop_assert!(re.is_match(&text), "{}", text);
        }
    }
}
