use serde::{Deserialize, Serialize};

use super::SurrogateError;

pub const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Constant-scaled Matérn ν = 3/2 kernel with additive white noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn from_log(theta: [f64; 3]) -> Self {
        KernelParams {
            signal_variance: theta[0].exp(),
            length_scale: theta[1].exp(),
            noise_variance: theta[2].exp(),
        }
    }

    pub fn to_log(self) -> [f64; 3] {
        [self.signal_variance.ln(), self.length_scale.ln(), self.noise_variance.ln()]
    }

    pub fn is_valid(&self) -> bool {
        [self.signal_variance, self.length_scale, self.noise_variance]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }

    /// Noise-free correlation part `σf²(1 + a)e^{-a}`, `a = √3 r / ℓ`.
    #[inline]
    pub fn matern(&self, r: f64) -> f64 {
        let a = SQRT_3 * r / self.length_scale;
        self.signal_variance * (1.0 + a) * (-a).exp()
    }
}

#[inline]
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Kernel value between two points; `same_point` adds the noise variance.
pub fn kernel_eval(p: &KernelParams, x1: &[f64], x2: &[f64], same_point: bool) -> Result<f64, SurrogateError> {
    if x1.len() != x2.len() {
        return Err(SurrogateError::DimensionMismatch {
            expected: x1.len(),
            found: x2.len(),
        });
    }
    let k = p.matern(distance(x1, x2));
    Ok(if same_point { k + p.noise_variance } else { k })
}
