use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Selects the reward field (target pattern) a trajectory is scored against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition(pub String);

impl Condition {
    pub fn new(label: impl Into<String>) -> Self {
        Self(label.into())
    }
}

/// Gaussian reverse-time kernel with a learned per-step, per-pixel drift:
///
/// ```text
/// x_T ~ N(0, I)
/// x_{t-1}(h, w) ~ N(x_t(h, w) + drift(k, h, w), sigma^2)
/// ```
///
/// Step `k` in `0..steps` maps state `k` to state `k + 1`; state 0 is `x_T`
/// and state `steps` is the final image `x_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFlowPolicy {
    height: usize,
    width: usize,
    steps: usize,
    sigma: f64,
    drift: Vec<f64>,
}

impl ToyFlowPolicy {
    pub fn new(height: usize, width: usize, steps: usize, sigma: f64) -> Result<Self> {
        Self::with_drift(height, width, steps, sigma, vec![0.0; height * width * steps])
    }

    pub fn with_drift(height: usize, width: usize, steps: usize, sigma: f64, drift: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "policy needs a nonempty grid and at least one step, got {height}x{width}, T={steps}"
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if drift.len() != height * width * steps {
            return Err(Error::InvalidArgument(format!(
                "drift has {} entries, expected {}",
                drift.len(),
                height * width * steps
            )));
        }
        if drift.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("policy drift".into()));
        }
        Ok(Self {
            height,
            width,
            steps,
            sigma,
            drift,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn num_params(&self) -> usize {
        self.drift.len()
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn drift_mut(&mut self) -> &mut [f64] {
        &mut self.drift
    }

    pub fn step_drift(&self, k: usize) -> &[f64] {
        let n = self.pixels();
        &self.drift[k * n..(k + 1) * n]
    }

    pub fn same_shape(&self, other: &ToyFlowPolicy) -> bool {
        self.height == other.height && self.width == other.width && self.steps == other.steps
    }

    pub(crate) fn check_same_shape(&self, other: &ToyFlowPolicy) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "policy shapes differ: {}x{}xT{} vs {}x{}xT{}",
                self.height, self.width, self.steps, other.height, other.width, other.steps
            )))
        }
    }

    pub(crate) fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        let n = self.pixels();
        if traj.states.len() != self.steps + 1 || traj.states.iter().any(|s| s.len() != n) {
            return Err(Error::InvalidArgument(format!(
                "trajectory does not match a {}x{} policy with {} steps",
                self.height, self.width, self.steps
            )));
        }
        Ok(())
    }

    /// Per-pixel log-density of transition `k` of `traj` under this policy.
    pub fn step_log_density(&self, traj: &Trajectory, k: usize) -> Vec<f64> {
        let (prev, next) = (&traj.states[k], &traj.states[k + 1]);
        let drift = self.step_drift(k);
        let ln_sigma = self.sigma.ln();
        prev.iter()
            .zip(next)
            .zip(drift)
            .map(|((x, y), mu)| {
                let z = (y - x - mu) / self.sigma;
                -0.5 * z * z - ln_sigma - HALF_LN_2PI
            })
            .collect()
    }

    /// `d log p / d drift` for transition `k`, pixel by pixel: `(y - x - mu) / sigma^2`.
    pub fn step_score(&self, traj: &Trajectory, k: usize) -> Vec<f64> {
        let (prev, next) = (&traj.states[k], &traj.states[k + 1]);
        let var = self.sigma * self.sigma;
        prev.iter()
            .zip(next)
            .zip(self.step_drift(k))
            .map(|((x, y), mu)| (y - x - mu) / var)
            .collect()
    }

    /// Final state of the noise-free rollout (`x_T = 0`, no transition noise).
    pub fn mean_final_state(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.pixels()];
        for k in 0..self.steps {
            for (xi, mu) in x.iter_mut().zip(self.step_drift(k)) {
                *xi += mu;
            }
        }
        x
    }

    /// Draws one trajectory from the stream `stream` of `seed`.
    pub fn sample(&self, condition: &Condition, seed: u64, stream: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let n = self.pixels();
        let mut states = Vec::with_capacity(self.steps + 1);
        states.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>());
        for k in 0..self.steps {
            let prev = &states[k];
            let next: Vec<f64> = prev
                .iter()
                .zip(self.step_drift(k))
                .map(|(x, mu)| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    x + mu + self.sigma * noise
                })
                .collect();
            states.push(next);
        }
        let mut traj = Trajectory {
            condition: condition.clone(),
            states,
            log_probs: Vec::new(),
        };
        traj.log_probs = (0..self.steps)
            .flat_map(|k| self.step_log_density(&traj, k))
            .collect();
        traj
    }
}

/// States `x_T .. x_0` of one rollout and the per-step, per-pixel
/// log-likelihoods under the policy that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub condition: Condition,
    pub states: Vec<Vec<f64>>,
    /// `steps x height x width`, row-major.
    pub log_probs: Vec<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Samples `group_size` trajectories; trajectory `i` uses stream `i` of `seed`.
pub fn sample_group(policy: &ToyFlowPolicy, condition: &Condition, group_size: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if group_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "group size must be at least 2, got {group_size}"
        )));
    }
    Ok((0..group_size as u64)
        .map(|i| policy.sample(condition, seed, i))
        .collect())
}
