use serde::{Deserialize, Serialize};

use super::PolicyError;

/// Forward-process variances `β_t`, `t = 0..num_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self, PolicyError> {
        if betas.is_empty() {
            return Err(PolicyError::InvalidSchedule(
                "at least one step is required",
            ));
        }
        if !betas.iter().all(|b| *b > 0.0 && *b < 1.0) {
            return Err(PolicyError::InvalidSchedule("betas must lie in (0, 1)"));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(PolicyError::InvalidSchedule("betas must be nondecreasing"));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    /// Evenly spaced betas from `start` to `end` inclusive.
    pub fn linear(num_steps: usize, start: f64, end: f64) -> Result<Self, PolicyError> {
        if num_steps == 0 {
            return Err(PolicyError::InvalidSchedule(
                "at least one step is required",
            ));
        }
        let betas = (0..num_steps)
            .map(|i| {
                if num_steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (num_steps - 1) as f64
                }
            })
            .collect();
        Self::new(betas)
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `ᾱ_t = Π_{s ≤ t} (1 − β_s)`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }
}

/// What the denoiser network's raw output `f` represents. The noise estimate
/// is always `ε̂ = a·x_t + b·f`, so the training loss stays a noise MSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    /// `f` is the noise itself.
    Epsilon,
    /// `f = (√(1−ᾱ)·x_t − ε)/√ᾱ`, a unit-variance target at every step.
    Velocity,
    /// `f` is the clean action.
    Clean,
}

/// Affine maps from `(x_t, f)` to the noise and clean-action estimates at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputMap {
    pub eps_x: f64,
    pub eps_f: f64,
    pub clean_x: f64,
    pub clean_f: f64,
}

impl OutputMap {
    pub fn new(prediction: Prediction, alpha_bar: f64) -> Self {
        let (s, c) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
        let (eps_x, eps_f) = match prediction {
            Prediction::Epsilon => (0.0, 1.0),
            Prediction::Velocity => (c, -s),
            Prediction::Clean => (1.0 / c, -s / c),
        };
        // x̂0 = (x_t − √(1−ᾱ)·ε̂)/√ᾱ
        Self {
            eps_x,
            eps_f,
            clean_x: (1.0 - c * eps_x) / s,
            clean_f: -c * eps_f / s,
        }
    }

    pub fn noise(&self, x: f64, f: f64) -> f64 {
        self.eps_x * x + self.eps_f * f
    }

    pub fn clean(&self, x: f64, f: f64) -> f64 {
        self.clean_x * x + self.clean_f * f
    }
}

/// Sinusoidal embedding of a diffusion step: `dim/2` sines then `dim/2` cosines
/// at geometrically spaced frequencies.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t as f64 * freq).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_endpoints_and_products() {
        let s = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
        assert_eq!(s.num_steps(), 100);
        assert_eq!(s.beta(0), 1e-4);
        assert!((s.beta(99) - 2e-2).abs() < 1e-15);
        let manual: f64 = (0..100).map(|t| 1.0 - s.beta(t)).product();
        assert!((s.alpha_bar(99) - manual).abs() < 1e-15);
        assert!(s.alpha_bar(99) > 0.0 && s.alpha_bar(0) <= 1.0);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(NoiseSchedule::new(vec![]).is_err());
        assert!(NoiseSchedule::new(vec![0.1, 0.05]).is_err());
        assert!(NoiseSchedule::new(vec![0.0, 0.1]).is_err());
        assert!(NoiseSchedule::new(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn embedding_at_zero() {
        let e = timestep_embedding(0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
