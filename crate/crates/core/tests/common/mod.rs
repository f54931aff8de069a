//! Brute-force reference implementations written straight from the metric and
//! objective definitions, sharing no code with the library.
#![allow(dead_code)]

pub mod fixtures;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation from raw moment sums.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let cov = sxy / n - (sx / n) * (sy / n);
    let vx = sxx / n - (sx / n).powi(2);
    let vy = syy / n - (sy / n).powi(2);
    cov / (vx * vy).sqrt()
}

/// Rank of each element: one plus the number of smaller elements, plus half
/// the number of other elements equal to it.
pub fn count_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&count_ranks(xs), &count_ranks(ys))
}

pub fn mse(p: &[f64], g: &[f64]) -> f64 {
    p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
}

fn normalized(xs: &[f64], extra: f64) -> Vec<f64> {
    let s: f64 = xs.iter().sum();
    xs.iter().map(|x| x / (s + extra)).collect()
}

pub const EPS: f64 = 1e-12;

pub fn kld(p: &[f64], g: &[f64]) -> f64 {
    let (p, g) = (normalized(p, EPS), normalized(g, 0.0));
    let mut total = 0.0;
    for i in 0..p.len() {
        total += g[i] * (EPS + g[i] / (EPS + p[i])).ln();
    }
    total
}

pub fn sim(p: &[f64], g: &[f64]) -> f64 {
    let (p, g) = (normalized(p, 0.0), normalized(g, 0.0));
    p.iter().zip(&g).map(|(a, b)| a.min(*b)).sum()
}

pub fn nss(p: &[f64], fix: &[bool]) -> f64 {
    let m = mean(p);
    let sd = (p.iter().map(|x| (x - m).powi(2)).sum::<f64>() / p.len() as f64).sqrt();
    let z: Vec<f64> = p
        .iter()
        .zip(fix)
        .filter(|(_, &f)| f)
        .map(|(x, _)| (x - m) / sd)
        .collect();
    mean(&z)
}

/// Probability that a fixation pixel outscores a non-fixation pixel, ties 1/2.
pub fn auc_pairwise(p: &[f64], fix: &[bool]) -> f64 {
    let pos: Vec<f64> = p.iter().zip(fix).filter(|(_, &f)| f).map(|(x, _)| *x).collect();
    let neg: Vec<f64> = p.iter().zip(fix).filter(|(_, &f)| !f).map(|(x, _)| *x).collect();
    let mut wins = 0.0;
    for a in &pos {
        for b in &neg {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Population-std group normalization.
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    let m = mean(xs);
    let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
    xs.iter().map(|x| (x - m) / sd).collect()
}

/// Gaussian log-density.
pub fn log_normal(v: f64, mean: f64, sigma: f64) -> f64 {
    let z = (v - mean) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Flat description of a toy-policy problem, independent of the library types.
#[derive(Clone, Debug)]
pub struct ToyProblem {
    pub pixels: usize,
    pub steps: usize,
    pub sigma: f64,
    /// `states[i][k]` for trajectory `i`, `k` in `0..=steps`.
    pub states: Vec<Vec<Vec<f64>>>,
    pub epsilon: f64,
}

impl ToyProblem {
    fn step_logp(&self, drift: &[f64], i: usize, k: usize, j: usize) -> f64 {
        let n = self.pixels;
        let (x, y) = (self.states[i][k][j], self.states[i][k + 1][j]);
        log_normal(y, x + drift[k * n + j], self.sigma)
    }

    pub fn ratio(&self, new: &[f64], old: &[f64], i: usize, k: usize) -> f64 {
        let mut log_ratio = 0.0;
        for j in 0..self.pixels {
            log_ratio += self.step_logp(new, i, k, j) - self.step_logp(old, i, k, j);
        }
        log_ratio.exp()
    }

    fn clip_term(&self, r: f64, a: f64) -> f64 {
        let c = r.max(1.0 - self.epsilon).min(1.0 + self.epsilon);
        (r * a).min(c * a)
    }

    /// Image-level clipped objective without KL.
    pub fn flow_value(&self, new: &[f64], old: &[f64], adv: &[f64]) -> f64 {
        let g = self.states.len();
        let mut total = 0.0;
        for i in 0..g {
            for k in 0..self.steps {
                total += self.clip_term(self.ratio(new, old, i, k), adv[i]);
            }
        }
        total / (g * self.steps) as f64
    }

    /// Pixel-level objective with the per-pixel surrogate
    /// `ratio(frozen) * p_eval(pixel) / p_frozen(pixel)`.
    pub fn dense_value(&self, eval: &[f64], frozen: &[f64], old: &[f64], adv: &[Vec<f64>]) -> f64 {
        let g = self.states.len();
        let mut total = 0.0;
        for i in 0..g {
            for k in 0..self.steps {
                let r = self.ratio(frozen, old, i, k);
                for j in 0..self.pixels {
                    let s = r * (self.step_logp(eval, i, k, j) - self.step_logp(frozen, i, k, j)).exp();
                    total += self.clip_term(s, adv[i][j]);
                }
            }
        }
        total / (g * self.steps * self.pixels) as f64
    }
}

/// Central differences of `f` around `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
