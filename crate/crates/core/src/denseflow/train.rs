//! Desk-scale training loop for the toy policy, comparing image-level and
//! pixel-level advantages on the same reward.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{
    dense_advantages, denseflow_objective, flow_grpo_objective, kl_penalty, DenseRewardField, KlPenalty,
};
use super::policy::{sample_group, Condition, ToyFlowPolicy, Trajectory};
use crate::error::{Error, Result};
use crate::grpo::{group_advantages, RewardGroup};

/// Target pattern plus the "local detail" region that receives pixel rewards.
///
/// * image reward `R = 1 - |mean(x_0) - mean(target)|`
/// * pixel reward `R_P(h, w) = (1 - |x_0(h, w) - target(h, w)|) * region(h, w)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub target: Vec<f64>,
    pub region: Vec<bool>,
}

impl RewardSpec {
    pub fn new(name: impl Into<String>, height: usize, width: usize, target: Vec<f64>, region: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if n == 0 || target.len() != n || region.len() != n {
            return Err(Error::InvalidArgument(format!(
                "reward spec needs {n} target and region entries, got {} and {}",
                target.len(),
                region.len()
            )));
        }
        if target.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("reward target".into()));
        }
        Ok(Self {
            name: name.into(),
            height,
            width,
            target,
            region,
        })
    }

    /// Constant target `value`, no pixel rewards.
    pub fn mean_intensity(height: usize, width: usize, value: f64) -> Result<Self> {
        let n = height * width;
        Self::new("mean_intensity", height, width, vec![value; n], vec![false; n])
    }

    /// `value` inside the half-open rectangle `rows x cols`, 0 elsewhere; the
    /// rectangle is also the rewarded region.
    pub fn region_target(
        height: usize,
        width: usize,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
        value: f64,
    ) -> Result<Self> {
        if rows.is_empty() || cols.is_empty() || rows.end > height || cols.end > width {
            return Err(Error::InvalidArgument(format!(
                "region {rows:?} x {cols:?} does not fit a {height}x{width} grid"
            )));
        }
        let region: Vec<bool> = (0..height * width)
            .map(|j| rows.contains(&(j / width)) && cols.contains(&(j % width)))
            .collect();
        let target = region.iter().map(|&r| if r { value } else { 0.0 }).collect();
        Self::new("region_target", height, width, target, region)
    }

    pub fn condition(&self) -> Condition {
        Condition::new(self.name.clone())
    }

    pub fn target_mean(&self) -> f64 {
        self.target.iter().sum::<f64>() / self.target.len() as f64
    }

    fn check_len(&self, x0: &[f64]) -> Result<()> {
        if x0.len() != self.target.len() {
            return Err(Error::LengthMismatch(x0.len(), self.target.len()));
        }
        Ok(())
    }

    pub fn image_reward(&self, x0: &[f64]) -> Result<f64> {
        self.check_len(x0)?;
        let mean = x0.iter().sum::<f64>() / x0.len() as f64;
        Ok(1.0 - (mean - self.target_mean()).abs())
    }

    pub fn pixel_rewards(&self, x0: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x0)?;
        Ok(x0
            .iter()
            .zip(&self.target)
            .zip(&self.region)
            .map(|((x, t), &r)| if r { 1.0 - (x - t).abs() } else { 0.0 })
            .collect())
    }

    pub fn field(&self, x0: &[f64]) -> Result<DenseRewardField> {
        Ok(DenseRewardField {
            image_reward: self.image_reward(x0)?,
            pixel_rewards: self.pixel_rewards(x0)?,
        })
    }

    /// Squared error against the target over the region, or over the whole
    /// grid when the region is empty.
    pub fn region_mse(&self, x0: &[f64]) -> Result<f64> {
        self.check_len(x0)?;
        let whole = !self.region.iter().any(|&r| r);
        let (sum, count) = x0
            .iter()
            .zip(&self.target)
            .zip(&self.region)
            .filter(|(_, &r)| r || whole)
            .fold((0.0, 0usize), |(s, c), ((x, t), _)| (s + (x - t).powi(2), c + 1));
        Ok(sum / count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Dense,
    ImageOnly,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "image_only" | "image-only" => Ok(Self::ImageOnly),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub group_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub sigma: f64,
    /// Weight of the image-level Gaussian KL towards the initial policy; 0 disables it.
    pub beta: f64,
    pub sigma_floor: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Trajectories drawn from the final policy to estimate `region_mse`.
    pub eval_samples: usize,
    /// Gradient steps taken on each sampled group.
    pub updates_per_group: usize,
    pub reward: RewardSpec,
}

impl TrainConfig {
    /// 16x16 grid with target 1.0 on rows and columns `5..11`.
    pub fn region_demo(mode: TrainMode, seed: u64) -> Self {
        Self {
            steps: 2,
            group_size: 8,
            iterations: 300,
            learning_rate: 0.03,
            epsilon: 0.2,
            sigma: 0.3,
            beta: 0.0,
            sigma_floor: crate::grpo::DEFAULT_SIGMA_FLOOR,
            seed,
            mode,
            eval_samples: 64,
            updates_per_group: 1,
            reward: RewardSpec::region_target(16, 16, 5..11, 5..11, 1.0).expect("static region fits"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.steps == 0 || self.iterations == 0 {
            return bad("steps and iterations must be positive".into());
        }
        if self.group_size < 2 {
            return bad(format!("group size must be at least 2, got {}", self.group_size));
        }
        if self.eval_samples < 2 {
            return bad(format!("eval samples must be at least 2, got {}", self.eval_samples));
        }
        if self.updates_per_group == 0 {
            return bad("updates per group must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be nonnegative, got {}", self.learning_rate));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.sigma_floor > 0.0) {
            return bad(format!("sigma floor must be positive, got {}", self.sigma_floor));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_image_reward: f64,
    pub mean_pixel_reward: f64,
    pub mean_intensity: f64,
    pub region_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub mode: TrainMode,
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    /// Mean region MSE over `eval_samples` trajectories of the final policy.
    pub region_mse: f64,
    /// Region MSE of the noise-free rollout of the final policy.
    pub region_bias_mse: f64,
    pub final_policy: ToyFlowPolicy,
    /// Final state of the first evaluation trajectory.
    pub sample_final_state: Vec<f64>,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

fn evaluate_group(spec: &RewardSpec, trajs: &[Trajectory]) -> Result<(Vec<DenseRewardField>, Vec<f64>)> {
    let per: Vec<(DenseRewardField, f64)> = trajs
        .par_iter()
        .map(|t| Ok((spec.field(t.final_state())?, spec.region_mse(t.final_state())?)))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().unzip())
}

/// Runs `iterations` rounds of sampling, reward evaluation, advantage
/// computation and plain gradient ascent from a zero-drift policy.
///
/// In dense mode the gradient is multiplied by `H * W`, so that with zero
/// pixel rewards both modes take identical steps at the same learning rate.
pub fn train_toy(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let spec = &config.reward;
    let mut policy = ToyFlowPolicy::new(spec.height, spec.width, config.steps, config.sigma)?;
    let reference = policy.clone();
    let kl = (config.beta > 0.0).then_some(KlPenalty {
        beta: config.beta,
        reference: &reference,
    });
    let cond = spec.condition();
    let pixels = policy.pixels() as f64;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut curve = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let at = |e: Error| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {iteration}")),
            other => other,
        };
        let trajs = sample_group(&policy, &cond, config.group_size, master.next_u64())?;
        let (fields, mses) = evaluate_group(spec, &trajs).map_err(at)?;
        curve.push(CurvePoint {
            iteration,
            mean_image_reward: mean(fields.iter().map(|f| f.image_reward)),
            mean_pixel_reward: mean(fields.iter().map(|f| mean(f.pixel_rewards.iter().copied()))),
            mean_intensity: mean(trajs.iter().map(|t| mean(t.final_state().iter().copied()))),
            region_mse: mean(mses.into_iter()),
        });

        let old = policy.clone();
        let image_adv = match config.mode {
            TrainMode::ImageOnly => {
                let group = RewardGroup::new(fields.iter().map(|f| f.image_reward).collect())?;
                Some(group_advantages(&group, config.sigma_floor))
            }
            TrainMode::Dense => None,
        };
        let dense_adv = match config.mode {
            TrainMode::Dense => Some(dense_advantages(&fields, config.sigma_floor)?),
            TrainMode::ImageOnly => None,
        };
        for _ in 0..config.updates_per_group {
            let grad = match (&image_adv, &dense_adv) {
                (Some(adv), _) => flow_grpo_objective(&policy, &old, &trajs, adv, config.epsilon, kl).map_err(at)?.1,
                (_, Some(adv)) => {
                    let mut g = denseflow_objective(&policy, &old, &trajs, adv, config.epsilon, None)
                        .map_err(at)?
                        .1
                        .scaled(pixels);
                    if let Some(penalty) = kl {
                        g.add(&kl_penalty(&policy, penalty)?.1);
                    }
                    g
                }
                _ => unreachable!("one advantage kind is always computed"),
            };
            for (p, g) in policy.drift_mut().iter_mut().zip(&grad.values) {
                *p += config.learning_rate * g;
            }
            if policy.drift().iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "policy parameters diverged at iteration {iteration}"
                )));
            }
        }
    }

    let eval = sample_group(&policy, &cond, config.eval_samples, master.next_u64())?;
    let (_, mses) = evaluate_group(spec, &eval)?;
    Ok(TrainOutcome {
        mode: config.mode,
        seed: config.seed,
        curve,
        region_mse: mean(mses.into_iter()),
        region_bias_mse: spec.region_mse(&policy.mean_final_state())?,
        sample_final_state: eval[0].final_state().to_vec(),
        final_policy: policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_spec_shapes() {
        let spec = RewardSpec::region_target(4, 4, 1..3, 1..3, 1.0).unwrap();
        assert_eq!(spec.region.iter().filter(|&&r| r).count(), 4);
        assert!((spec.target_mean() - 0.25).abs() < 1e-15);
        let x = spec.target.clone();
        assert_eq!(spec.region_mse(&x).unwrap(), 0.0);
        assert_eq!(spec.image_reward(&x).unwrap(), 1.0);
        assert_eq!(spec.pixel_rewards(&x).unwrap().iter().sum::<f64>(), 4.0);
        assert!(RewardSpec::region_target(4, 4, 2..5, 0..1, 1.0).is_err());
        assert!(spec.image_reward(&[0.0; 3]).is_err());

        let flat = RewardSpec::mean_intensity(2, 2, 0.8).unwrap();
        assert!(flat.pixel_rewards(&[0.0; 4]).unwrap().iter().all(|&p| p == 0.0));
        assert!((flat.region_mse(&[0.0; 4]).unwrap() - 0.64).abs() < 1e-15);
    }

    fn small(mode: TrainMode) -> TrainConfig {
        let mut c = TrainConfig::region_demo(mode, 3);
        c.reward = RewardSpec::region_target(6, 6, 2..4, 2..4, 1.0).unwrap();
        c.iterations = 20;
        c.eval_samples = 8;
        c
    }

    #[test]
    fn zero_learning_rate_keeps_initial_policy() {
        let mut c = small(TrainMode::Dense);
        c.learning_rate = 0.0;
        let out = train_toy(&c).unwrap();
        assert!(out.final_policy.drift().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        for mode in [TrainMode::Dense, TrainMode::ImageOnly] {
            let a = train_toy(&small(mode)).unwrap();
            let b = train_toy(&small(mode)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.curve.len(), 20);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut c = small(TrainMode::ImageOnly);
        c.learning_rate = 1e300;
        let err = train_toy(&c).unwrap_err().to_string();
        assert!(err.contains("iteration"), "{err}");
    }

    #[test]
    fn image_only_moves_mean_intensity_towards_target() {
        let mut c = TrainConfig::region_demo(TrainMode::ImageOnly, 11);
        c.reward = RewardSpec::mean_intensity(8, 8, 0.8).unwrap();
        c.iterations = 400;
        let out = train_toy(&c).unwrap();
        let window = |r: std::ops::Range<usize>| mean(out.curve[r].iter().map(|p| p.mean_intensity));
        let gaps: Vec<f64> = (0..4).map(|w| (window(w * 100..(w + 1) * 100) - 0.8).abs()).collect();
        for pair in gaps.windows(2) {
            assert!(pair[1] < pair[0], "{gaps:?}");
        }
        assert!((window(350..400) - 0.8).abs() < 0.1, "{gaps:?}");
    }
}
