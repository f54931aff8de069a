//! Image-level and pixel-level clipped objectives over toy-policy trajectories.
//!
//! For trajectory `i` and step `k` the image ratio is
//! `r = exp(sum_{h,w} [log p_new - log p_old])`. The pixel surrogate
//!
//! ```text
//! s(h, w) = sg[r] * p_new(h, w) / sg[p_new(h, w)]
//! ```
//!
//! has the numeric value `r` at every pixel, while its derivative flows only
//! through the pixel's own likelihood: `ds(h, w)/d drift(k, h, w) = r * score(h, w)`.

use serde::{Deserialize, Serialize};

use super::policy::{ToyFlowPolicy, Trajectory};
use crate::error::{Error, Result};
use crate::grpo::{clipped_surrogate, normalize, unclipped_selected};

/// Image reward `R` and per-pixel reward `R_P` of one final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRewardField {
    pub image_reward: f64,
    pub pixel_rewards: Vec<f64>,
}

impl DenseRewardField {
    /// `R_D(h, w) = R + R_P(h, w)`.
    pub fn dense(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixel_rewards.iter().map(move |p| self.image_reward + p)
    }
}

/// Partial derivatives with respect to every drift parameter, laid out like
/// [`ToyFlowPolicy::drift`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGradient {
    pub values: Vec<f64>,
}

impl PolicyGradient {
    pub fn zeros(policy: &ToyFlowPolicy) -> Self {
        Self {
            values: vec![0.0; policy.num_params()],
        }
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn add(&mut self, other: &PolicyGradient) {
        self.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("policy gradient".into()))
        }
    }
}

/// Optional KL penalty towards a reference policy, averaged over pixels and steps.
#[derive(Debug, Clone, Copy)]
pub struct KlPenalty<'a> {
    pub beta: f64,
    pub reference: &'a ToyFlowPolicy,
}

fn check_inputs(new: &ToyFlowPolicy, old: &ToyFlowPolicy, trajs: &[Trajectory], epsilon: f64) -> Result<()> {
    new.check_same_shape(old)?;
    if trajs.is_empty() {
        return Err(Error::InvalidArgument("no trajectories".into()));
    }
    for t in trajs {
        new.check_trajectory(t)?;
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

fn log_ratio_sum(new: &ToyFlowPolicy, old: &ToyFlowPolicy, traj: &Trajectory, k: usize) -> f64 {
    new.step_log_density(traj, k)
        .iter()
        .zip(old.step_log_density(traj, k))
        .map(|(a, b)| a - b)
        .sum()
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Likelihood ratio of step `k`: the product of the per-pixel density ratios.
pub fn image_ratio(new: &ToyFlowPolicy, old: &ToyFlowPolicy, traj: &Trajectory, k: usize) -> Result<f64> {
    new.check_same_shape(old)?;
    new.check_trajectory(traj)?;
    finite(log_ratio_sum(new, old, traj, k).exp(), "image likelihood ratio")
}

/// Pixel surrogate evaluated at `eval` with the stop-gradient quantities taken
/// from `frozen`: `s(h, w) = r(frozen) * p_eval(h, w) / p_frozen(h, w)`.
/// With `eval == frozen` this is the surrogate's value; perturbing `eval`
/// alone traces its stop-gradient sensitivity.
pub fn pixel_surrogate_at(
    eval: &ToyFlowPolicy,
    frozen: &ToyFlowPolicy,
    old: &ToyFlowPolicy,
    traj: &Trajectory,
    k: usize,
) -> Result<Vec<f64>> {
    eval.check_same_shape(frozen)?;
    let r = image_ratio(frozen, old, traj, k)?;
    Ok(eval
        .step_log_density(traj, k)
        .iter()
        .zip(frozen.step_log_density(traj, k))
        .map(|(le, lf)| r * (le - lf).exp())
        .collect())
}

/// Numeric value of the pixel surrogate; every entry equals [`image_ratio`].
pub fn pixel_surrogate_value(new: &ToyFlowPolicy, old: &ToyFlowPolicy, traj: &Trajectory, k: usize) -> Result<Vec<f64>> {
    pixel_surrogate_at(new, new, old, traj, k)
}

/// `d s(h, w) / d drift(k, h, w) = r * (y - x - mu) / sigma^2`; all other partials are zero.
pub fn pixel_surrogate_grad(new: &ToyFlowPolicy, old: &ToyFlowPolicy, traj: &Trajectory, k: usize) -> Result<Vec<f64>> {
    let r = image_ratio(new, old, traj, k)?;
    Ok(new.step_score(traj, k).into_iter().map(|g| r * g).collect())
}

/// Per-pixel group normalization of `R_D = R + R_P` across the group.
pub fn dense_advantages(fields: &[DenseRewardField], sigma_floor: f64) -> Result<Vec<Vec<f64>>> {
    if fields.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "group size must be at least 2, got {}",
            fields.len()
        )));
    }
    let n = fields[0].pixel_rewards.len();
    if fields.iter().any(|f| f.pixel_rewards.len() != n) {
        return Err(Error::InvalidArgument("pixel reward grids differ in shape".into()));
    }
    let dense: Vec<Vec<f64>> = fields.iter().map(|f| f.dense().collect()).collect();
    let mut out = vec![vec![0.0; n]; fields.len()];
    let mut column = vec![0.0; fields.len()];
    for j in 0..n {
        for (c, d) in column.iter_mut().zip(&dense) {
            *c = d[j];
        }
        for (o, a) in out.iter_mut().zip(normalize(&column, sigma_floor)) {
            o[j] = a;
        }
    }
    Ok(out)
}

/// Closed-form `KL(N(m_new, s_new^2) || N(m_ref, s_ref^2))` averaged over the
/// pixels of step `k`. The state cancels from the mean difference.
fn step_kl(new: &ToyFlowPolicy, reference: &ToyFlowPolicy, k: usize) -> f64 {
    let (sn, sr) = (new.sigma(), reference.sigma());
    let base = (sr / sn).ln() + sn * sn / (2.0 * sr * sr) - 0.5;
    let sum: f64 = new
        .step_drift(k)
        .iter()
        .zip(reference.step_drift(k))
        .map(|(a, b)| base + (a - b).powi(2) / (2.0 * sr * sr))
        .sum();
    sum / new.pixels() as f64
}

/// Value `-beta * mean_k KL_k` of the penalty and its gradient.
pub fn kl_penalty(new: &ToyFlowPolicy, penalty: KlPenalty<'_>) -> Result<(f64, PolicyGradient)> {
    let KlPenalty { beta, reference } = penalty;
    new.check_same_shape(reference)?;
    let steps = new.steps() as f64;
    let scale = beta / (steps * new.pixels() as f64 * reference.sigma().powi(2));
    let value = -(0..new.steps()).map(|k| beta * step_kl(new, reference, k)).sum::<f64>() / steps;
    let values = new
        .drift()
        .iter()
        .zip(reference.drift())
        .map(|(a, b)| -scale * (a - b))
        .collect();
    Ok((value, PolicyGradient { values }))
}

fn apply_kl(new: &ToyFlowPolicy, kl: Option<KlPenalty<'_>>, value: &mut f64, grad: &mut PolicyGradient) -> Result<()> {
    if let Some(penalty) = kl {
        let (v, g) = kl_penalty(new, penalty)?;
        *value += v;
        grad.add(&g);
    }
    Ok(())
}

/// Image-level clipped objective
/// `(1/GT) sum_{i,k} [min(r A_i, clip(r) A_i) - beta KL_k]` and its exact gradient.
pub fn flow_grpo_objective(
    new: &ToyFlowPolicy,
    old: &ToyFlowPolicy,
    trajs: &[Trajectory],
    advantages: &[f64],
    epsilon: f64,
    kl: Option<KlPenalty<'_>>,
) -> Result<(f64, PolicyGradient)> {
    check_inputs(new, old, trajs, epsilon)?;
    if advantages.len() != trajs.len() {
        return Err(Error::LengthMismatch(advantages.len(), trajs.len()));
    }
    let n = new.pixels();
    let norm = 1.0 / (trajs.len() * new.steps()) as f64;
    let mut value = 0.0;
    let mut grad = PolicyGradient::zeros(new);
    for (traj, &adv) in trajs.iter().zip(advantages) {
        for k in 0..new.steps() {
            let r = image_ratio(new, old, traj, k)?;
            value += norm * clipped_surrogate(r, adv, epsilon);
            if unclipped_selected(r, adv, epsilon) {
                let coeff = norm * adv * r;
                for (g, s) in grad.values[k * n..(k + 1) * n].iter_mut().zip(new.step_score(traj, k)) {
                    *g += coeff * s;
                }
            }
        }
    }
    apply_kl(new, kl, &mut value, &mut grad)?;
    grad.check_finite()?;
    Ok((finite(value, "objective value")?, grad))
}

fn check_advantage_grids(new: &ToyFlowPolicy, trajs: &[Trajectory], grids: &[Vec<f64>]) -> Result<()> {
    if grids.len() != trajs.len() {
        return Err(Error::LengthMismatch(grids.len(), trajs.len()));
    }
    if grids.iter().any(|g| g.len() != new.pixels()) {
        return Err(Error::InvalidArgument("advantage grid does not match the policy grid".into()));
    }
    Ok(())
}

/// Value of the pixel-wise objective with the surrogate evaluated at `eval`
/// and stop-gradient quantities frozen at `frozen` (see [`pixel_surrogate_at`]).
pub fn denseflow_surrogate_value(
    eval: &ToyFlowPolicy,
    frozen: &ToyFlowPolicy,
    old: &ToyFlowPolicy,
    trajs: &[Trajectory],
    advantage_grids: &[Vec<f64>],
    epsilon: f64,
) -> Result<f64> {
    check_inputs(frozen, old, trajs, epsilon)?;
    check_advantage_grids(frozen, trajs, advantage_grids)?;
    let norm = 1.0 / (trajs.len() * frozen.steps() * frozen.pixels()) as f64;
    let mut value = 0.0;
    for (traj, adv) in trajs.iter().zip(advantage_grids) {
        for k in 0..frozen.steps() {
            let s = pixel_surrogate_at(eval, frozen, old, traj, k)?;
            value += norm * s.iter().zip(adv).map(|(&s, &a)| clipped_surrogate(s, a, epsilon)).sum::<f64>();
        }
    }
    finite(value, "objective value")
}

/// Pixel-wise clipped objective
/// `(1/GTHW) sum_{i,k,h,w} min(s A(h,w), clip(s) A(h,w))` and its gradient
/// under stop-gradient semantics. The clip branch is chosen from numeric values.
pub fn denseflow_objective(
    new: &ToyFlowPolicy,
    old: &ToyFlowPolicy,
    trajs: &[Trajectory],
    advantage_grids: &[Vec<f64>],
    epsilon: f64,
    kl: Option<KlPenalty<'_>>,
) -> Result<(f64, PolicyGradient)> {
    check_inputs(new, old, trajs, epsilon)?;
    check_advantage_grids(new, trajs, advantage_grids)?;
    let n = new.pixels();
    let norm = 1.0 / (trajs.len() * new.steps() * n) as f64;
    let mut value = 0.0;
    let mut grad = PolicyGradient::zeros(new);
    for (traj, adv) in trajs.iter().zip(advantage_grids) {
        for k in 0..new.steps() {
            let s = pixel_surrogate_value(new, old, traj, k)?;
            let score = new.step_score(traj, k);
            let step_grad = &mut grad.values[k * n..(k + 1) * n];
            for j in 0..n {
                value += norm * clipped_surrogate(s[j], adv[j], epsilon);
                if unclipped_selected(s[j], adv[j], epsilon) {
                    step_grad[j] += norm * adv[j] * s[j] * score[j];
                }
            }
        }
    }
    apply_kl(new, kl, &mut value, &mut grad)?;
    grad.check_finite()?;
    Ok((finite(value, "objective value")?, grad))
}

#[cfg(test)]
mod tests {
    use super::super::policy::{sample_group, Condition};
    use super::*;
    use crate::grpo::{group_advantages, RewardGroup};
    use rand::{Rng, SeedableRng};

    fn perturbed(p: &ToyFlowPolicy, scale: f64, seed: u64) -> ToyFlowPolicy {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let drift = p.drift().iter().map(|d| d + rng.gen_range(-scale..scale)).collect();
        ToyFlowPolicy::with_drift(p.height(), p.width(), p.steps(), p.sigma(), drift).unwrap()
    }

    fn setup(h: usize, w: usize, t: usize, g: usize) -> (ToyFlowPolicy, Vec<Trajectory>) {
        let old = perturbed(&ToyFlowPolicy::new(h, w, t, 0.8).unwrap(), 0.5, 1);
        let trajs = sample_group(&old, &Condition::new("c"), g, 3).unwrap();
        (old, trajs)
    }

    #[test]
    fn ratio_of_identical_policies_is_one() {
        let (old, trajs) = setup(3, 3, 2, 2);
        assert_eq!(image_ratio(&old, &old, &trajs[0], 1).unwrap(), 1.0);
        assert!(pixel_surrogate_value(&old, &old, &trajs[0], 0).unwrap().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn single_pixel_ratio_is_density_ratio() {
        let old = ToyFlowPolicy::with_drift(1, 1, 1, 0.5, vec![0.2]).unwrap();
        let new = ToyFlowPolicy::with_drift(1, 1, 1, 0.5, vec![0.3]).unwrap();
        let traj = old.sample(&Condition::new("c"), 4, 0);
        let (x, y) = (traj.states[0][0], traj.states[1][0]);
        let dens = |mu: f64| (-(y - x - mu).powi(2) / (2.0 * 0.25)).exp();
        let expected = dens(0.3) / dens(0.2);
        assert!((image_ratio(&new, &old, &traj, 0).unwrap() / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn surrogate_equals_ratio_everywhere() {
        let (old, trajs) = setup(4, 4, 2, 3);
        let new = perturbed(&old, 0.05, 9);
        for traj in &trajs {
            for k in 0..2 {
                let r = image_ratio(&new, &old, traj, k).unwrap();
                for s in pixel_surrogate_value(&new, &old, traj, k).unwrap() {
                    assert!((s - r).abs() <= 1e-12 * r);
                }
            }
        }
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let (old, trajs) = setup(4, 4, 2, 2);
        let new = perturbed(&old, 0.05, 11);
        let h = 1e-4;
        let k = 1;
        let analytic = pixel_surrogate_grad(&new, &old, &trajs[0], k).unwrap();
        for j in 0..16 {
            let bump = |delta: f64| {
                let mut p = new.clone();
                p.drift_mut()[k * 16 + j] += delta;
                pixel_surrogate_at(&p, &new, &old, &trajs[0], k).unwrap()[j]
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let rel = (fd - analytic[j]).abs() / analytic[j].abs().max(1e-8);
            assert!(rel < 1e-5, "pixel {j}: fd {fd} analytic {}", analytic[j]);
        }
    }

    #[test]
    fn dense_advantages_reduce_to_image_advantages() {
        let rewards = [0.3, 0.9, 0.1];
        let fields: Vec<_> = rewards
            .iter()
            .map(|&r| DenseRewardField {
                image_reward: r,
                pixel_rewards: vec![0.0; 6],
            })
            .collect();
        let grids = dense_advantages(&fields, 1e-8).unwrap();
        let image = group_advantages(&RewardGroup::new(rewards.to_vec()).unwrap(), 1e-8);
        for (grid, a) in grids.iter().zip(image) {
            assert!(grid.iter().all(|&g| g == a));
        }
    }

    #[test]
    fn dense_advantages_two_point() {
        let fields = vec![
            DenseRewardField { image_reward: 0.5, pixel_rewards: vec![0.0, 0.2] },
            DenseRewardField { image_reward: 0.5, pixel_rewards: vec![0.0, 0.7] },
        ];
        let grids = dense_advantages(&fields, 1e-8).unwrap();
        assert_eq!((grids[0][0], grids[1][0]), (0.0, 0.0));
        assert_eq!((grids[0][1], grids[1][1]), (-1.0, 1.0));
        let bad = vec![fields[0].clone(), DenseRewardField { image_reward: 0.0, pixel_rewards: vec![0.0] }];
        assert!(dense_advantages(&bad, 1e-8).is_err());
    }

    #[test]
    fn identical_policies_give_mean_advantage() {
        let (old, trajs) = setup(3, 3, 2, 2);
        let grids = vec![vec![0.7; 9]; 2];
        let (v, _) = denseflow_objective(&old, &old, &trajs, &grids, 0.2, None).unwrap();
        assert!((v - 0.7).abs() < 1e-15);
        let (v, _) = flow_grpo_objective(&old, &old, &trajs, &[0.5, -0.1], 0.2, None).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
        let kl = KlPenalty { beta: 100.0, reference: &old };
        let (v, _) = flow_grpo_objective(&old, &old, &trajs, &[0.5, -0.1], 0.2, Some(kl)).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_epsilon_and_shapes() {
        let (old, trajs) = setup(3, 3, 2, 2);
        assert!(flow_grpo_objective(&old, &old, &trajs, &[0.0, 0.0], 1.0, None).is_err());
        assert!(flow_grpo_objective(&old, &old, &trajs, &[0.0], 0.2, None).is_err());
        assert!(denseflow_objective(&old, &old, &trajs, &[vec![0.0; 4], vec![0.0; 4]], 0.2, None).is_err());
        let other = ToyFlowPolicy::new(3, 3, 1, 0.8).unwrap();
        assert!(image_ratio(&other, &old, &trajs[0], 0).is_err());
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let (old, trajs) = setup(2, 3, 2, 2);
        let new = perturbed(&old, 0.05, 2);
        let reference = perturbed(&old, 0.3, 5);
        let adv = [0.0, 0.0];
        let kl = Some(KlPenalty { beta: 0.7, reference: &reference });
        let (_, grad) = flow_grpo_objective(&new, &old, &trajs, &adv, 0.2, kl).unwrap();
        for j in 0..new.num_params() {
            let eval = |d: f64| {
                let mut p = new.clone();
                p.drift_mut()[j] += d;
                flow_grpo_objective(&p, &old, &trajs, &adv, 0.2, kl).unwrap().0
            };
            let fd = (eval(1e-4) - eval(-1e-4)) / 2e-4;
            assert!((fd - grad.values[j]).abs() < 1e-8 * grad.values[j].abs().max(1.0));
        }
    }
}
