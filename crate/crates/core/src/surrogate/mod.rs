//! Gaussian-process regression with a constant-scaled Matérn ν = 3/2 kernel
//! and learnable white noise. Hyperparameters are fitted by maximizing the
//! log marginal likelihood from several seeded starting points.

mod kernel;
mod optimize;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};

pub use kernel::{kernel_eval, KernelParams};
use kernel::{distance, SQRT_3};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("need at least 2 training points, got {0}")]
    InsufficientData(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite training data")]
    NonFinite,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("unsupported posterior snapshot version {0}")]
    SnapshotVersion(u32),
}

/// Log-space search box for (log σf², log ℓ, log σn²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBounds {
    pub signal_variance: (f64, f64),
    pub length_scale: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl Default for LogBounds {
    fn default() -> Self {
        LogBounds {
            signal_variance: (-9.2, 9.2),
            length_scale: (-4.6, 6.9),
            noise_variance: (-18.4, 4.6),
        }
    }
}

impl LogBounds {
    fn as_bounds(&self) -> optimize::Bounds {
        optimize::Bounds {
            lo: [self.signal_variance.0, self.length_scale.0, self.noise_variance.0],
            hi: [self.signal_variance.1, self.length_scale.1, self.noise_variance.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Total optimizer starts: the default point plus `restarts - 1` seeded draws.
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub bounds: LogBounds,
    /// Subtract the training mean from y before fitting.
    pub center_y: bool,
    /// Add the noise variance to predictive σ used for acquisition.
    pub predictive_noise: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 5,
            seed: 0,
            max_iter: 200,
            bounds: LogBounds::default(),
            center_y: false,
            predictive_noise: false,
            execution: Execution::default(),
        }
    }
}

/// Default optimizer start in log space.
pub const DEFAULT_START: [f64; 3] = [0.0, 0.0, -4.6];

impl FitConfig {
    /// The deterministic list of optimizer starting points.
    pub fn starts(&self) -> Vec<[f64; 3]> {
        let b = self.bounds.as_bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = vec![DEFAULT_START];
        for _ in 1..self.restarts.max(1) {
            out.push(std::array::from_fn(|i| rng.random_range(b.lo[i]..b.hi[i])));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mu: f64,
    pub sigma: f64,
}

/// Fitted surrogate. Immutable; safe to share across threads.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    params: KernelParams,
    x: DMatrix<f64>,
    y: DVector<f64>,
    y_offset: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_marginal_likelihood: f64,
    jitter: f64,
}

/// Serialized posterior; the Cholesky factor is recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub version: u32,
    pub params: KernelParams,
    pub n: usize,
    pub d: usize,
    /// Row-major training inputs.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_offset: f64,
    pub log_marginal_likelihood: f64,
}

const SNAPSHOT_VERSION: u32 = 1;

fn kernel_matrix(x: &DMatrix<f64>, p: &KernelParams) -> DMatrix<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = p.signal_variance + p.noise_variance;
        for j in 0..i {
            let v = p.matern(distance(&rows[i], &rows[j]));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky with escalating diagonal jitter (0, then 1e-10 up to 1e-4).
fn robust_cholesky(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), SurrogateError> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut kj = k.clone();
        for i in 0..k.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(SurrogateError::NumericalFailure(
        "kernel matrix not positive definite after jitter 1e-4".into(),
    ))
}

fn lml_from_chol(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> (f64, DVector<f64>) {
    let alpha = chol.solve(y);
    let n = y.len() as f64;
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let lml = -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n * LN_2PI;
    (lml, alpha)
}

fn validate(x: &DMatrix<f64>, y: &[f64]) -> Result<(), SurrogateError> {
    if x.nrows() != y.len() {
        return Err(SurrogateError::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(SurrogateError::InsufficientData(y.len()));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(SurrogateError::NonFinite);
    }
    Ok(())
}

/// Log marginal likelihood `-½yᵀK⁻¹y - ½log|K| - (n/2)log 2π` at fixed
/// parameters, with K = K_f + σn²I (plus jitter only if needed).
pub fn log_marginal_likelihood(x: &DMatrix<f64>, y: &[f64], params: &KernelParams) -> Result<f64, SurrogateError> {
    validate(x, y)?;
    let k = kernel_matrix(x, params);
    let (chol, _) = robust_cholesky(&k)?;
    Ok(lml_from_chol(&chol, &DVector::from_column_slice(y)).0)
}

/// LML and its gradient with respect to (log σf², log ℓ, log σn²).
pub fn lml_with_gradient(x: &DMatrix<f64>, y: &[f64], theta: [f64; 3]) -> Result<(f64, [f64; 3]), SurrogateError> {
    validate(x, y)?;
    lml_grad_unchecked(x, &DVector::from_column_slice(y), theta)
}

fn lml_grad_unchecked(x: &DMatrix<f64>, y: &DVector<f64>, theta: [f64; 3]) -> Result<(f64, [f64; 3]), SurrogateError> {
    let p = KernelParams::from_log(theta);
    if !p.is_valid() {
        return Err(SurrogateError::NumericalFailure("invalid kernel parameters".into()));
    }
    let n = x.nrows();
    let k = kernel_matrix(x, &p);
    let (chol, _) = robust_cholesky(&k)?;
    let (lml, alpha) = lml_from_chol(&chol, y);
    if !lml.is_finite() {
        return Err(SurrogateError::NumericalFailure("non-finite log marginal likelihood".into()));
    }
    let kinv = chol.inverse();
    // W = ααᵀ - K⁻¹ ; dLML/dθ = ½ tr(W dK/dθ)
    let mut g = [0.0; 3];
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let r = if i == j { 0.0 } else { distance(&rows[i], &rows[j]) };
            let a = SQRT_3 * r / p.length_scale;
            let e = (-a).exp();
            g[0] += w * p.signal_variance * (1.0 + a) * e;
            g[1] += w * p.signal_variance * a * a * e;
            if i == j {
                g[2] += w * p.noise_variance;
            }
        }
    }
    Ok((lml, [0.5 * g[0], 0.5 * g[1], 0.5 * g[2]]))
}

impl GpPosterior {
    /// Fits hyperparameters by multi-start LML maximization. Restarts may run
    /// in parallel; the best LML wins with ties going to the lower restart index.
    pub fn fit(x: &DMatrix<f64>, y: &[f64], cfg: &FitConfig) -> Result<Self, SurrogateError> {
        validate(x, y)?;
        let y_offset = if cfg.center_y {
            y.iter().sum::<f64>() / y.len() as f64
        } else {
            0.0
        };
        let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_offset));
        let bounds = cfg.bounds.as_bounds();
        let starts = cfg.starts();
        let outcomes = par::map(cfg.execution, &starts, |&s| {
            optimize::maximize(|t| lml_grad_unchecked(x, &yc, t).ok(), s, &bounds, cfg.max_iter)
        });
        let mut best: Option<&optimize::Outcome> = None;
        for o in &outcomes {
            if o.value.is_finite() && best.is_none_or(|b| o.value > b.value) {
                best = Some(o);
            }
        }
        let best = best.ok_or_else(|| {
            SurrogateError::NumericalFailure("log marginal likelihood non-finite at every restart".into())
        })?;
        Self::with_params_offset(x.clone(), y, y_offset, KernelParams::from_log(best.x))
    }

    /// Posterior at fixed hyperparameters (no optimization).
    pub fn with_params(x: DMatrix<f64>, y: &[f64], params: KernelParams) -> Result<Self, SurrogateError> {
        validate(&x, y)?;
        Self::with_params_offset(x, y, 0.0, params)
    }

    fn with_params_offset(x: DMatrix<f64>, y: &[f64], y_offset: f64, params: KernelParams) -> Result<Self, SurrogateError> {
        if !params.is_valid() {
            return Err(SurrogateError::NumericalFailure("invalid kernel parameters".into()));
        }
        let k = kernel_matrix(&x, &params);
        let (chol, jitter) = robust_cholesky(&k)?;
        let yv = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_offset));
        let (lml, alpha) = lml_from_chol(&chol, &yv);
        if !lml.is_finite() {
            return Err(SurrogateError::NumericalFailure("non-finite log marginal likelihood".into()));
        }
        Ok(GpPosterior {
            params,
            x,
            y: DVector::from_column_slice(y),
            y_offset,
            chol,
            alpha,
            log_marginal_likelihood: lml,
            jitter,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn train_y(&self) -> &[f64] {
        self.y.as_slice()
    }

    pub fn train_x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Lower Cholesky factor of the (jittered) training covariance.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Training covariance the factor was computed from, jitter included.
    pub fn training_covariance(&self) -> DMatrix<f64> {
        let mut k = kernel_matrix(&self.x, &self.params);
        for i in 0..k.nrows() {
            k[(i, i)] += self.jitter;
        }
        k
    }

    fn predict_one(&self, q: &[f64], rows: &[Vec<f64>], include_noise: bool) -> Prediction {
        let kstar = DVector::from_iterator(rows.len(), rows.iter().map(|r| self.params.matern(distance(r, q))));
        let mu = kstar.dot(&self.alpha) + self.y_offset;
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("cholesky factor has a positive diagonal");
        let mut var = self.params.signal_variance - v.dot(&v);
        var = var.max(0.0);
        if include_noise {
            var += self.params.noise_variance;
        }
        Prediction { mu, sigma: var.sqrt() }
    }

    /// Predictive mean and standard deviation for each row of `xq`.
    pub fn predict(&self, xq: &DMatrix<f64>, include_noise: bool) -> Result<Vec<Prediction>, SurrogateError> {
        self.predict_with(Execution::default(), xq, include_noise)
    }

    pub fn predict_with(&self, exec: Execution, xq: &DMatrix<f64>, include_noise: bool) -> Result<Vec<Prediction>, SurrogateError> {
        if xq.ncols() != self.dim() {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.dim(),
                found: xq.ncols(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..self.n_train()).map(|i| self.x.row(i).iter().copied().collect()).collect();
        let queries: Vec<Vec<f64>> = (0..xq.nrows()).map(|i| xq.row(i).iter().copied().collect()).collect();
        Ok(par::map(exec, &queries, |q| self.predict_one(q, &rows, include_noise)))
    }

    pub fn predict_point(&self, q: &[f64], include_noise: bool) -> Result<Prediction, SurrogateError> {
        if q.len() != self.dim() {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.dim(),
                found: q.len(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..self.n_train()).map(|i| self.x.row(i).iter().copied().collect()).collect();
        Ok(self.predict_one(q, &rows, include_noise))
    }

    pub fn snapshot(&self) -> GpSnapshot {
        let (n, d) = self.x.shape();
        let mut x = Vec::with_capacity(n * d);
        for i in 0..n {
            x.extend(self.x.row(i).iter());
        }
        GpSnapshot {
            version: SNAPSHOT_VERSION,
            params: self.params,
            n,
            d,
            x,
            y: self.y.iter().copied().collect(),
            y_offset: self.y_offset,
            log_marginal_likelihood: self.log_marginal_likelihood,
        }
    }

    pub fn from_snapshot(s: &GpSnapshot) -> Result<Self, SurrogateError> {
        if s.version != SNAPSHOT_VERSION {
            return Err(SurrogateError::SnapshotVersion(s.version));
        }
        if s.x.len() != s.n * s.d || s.y.len() != s.n {
            return Err(SurrogateError::DimensionMismatch {
                expected: s.n * s.d,
                found: s.x.len(),
            });
        }
        let x = DMatrix::from_row_slice(s.n, s.d, &s.x);
        validate(&x, &s.y)?;
        Self::with_params_offset(x, &s.y, s.y_offset, s.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x1(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn lml_matches_explicit_two_by_two() {
        let p = KernelParams {
            signal_variance: 1.0,
            length_scale: 1.0,
            noise_variance: 0.1,
        };
        let x = x1(&[0.0, 1.0]);
        let y = [0.3, -0.7];
        // explicit 2x2 inverse and determinant
        let a = 1.0 + 0.1;
        let b = (1.0 + SQRT_3) * (-SQRT_3).exp();
        let det = a * a - b * b;
        let quad = (a * y[0] * y[0] - 2.0 * b * y[0] * y[1] + a * y[1] * y[1]) / det;
        let expected = -0.5 * quad - 0.5 * det.ln() - LN_2PI;
        let got = log_marginal_likelihood(&x, &y, &p).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 0.1, 0.5, -0.3, 1.1, 0.9, -0.7, 0.2, 0.3, 1.5]);
        let y = [0.1, -0.2, 0.4, 0.0, 0.25];
        for theta in [[0.0, 0.0, -2.0], [0.5, -0.3, -4.6], [-1.0, 1.0, -1.0]] {
            let (_, g) = lml_with_gradient(&x, &y, theta).unwrap();
            for k in 0..3 {
                let h = 1e-5;
                let mut tp = theta;
                let mut tm = theta;
                tp[k] += h;
                tm[k] -= h;
                let fd = (lml_with_gradient(&x, &y, tp).unwrap().0 - lml_with_gradient(&x, &y, tm).unwrap().0) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-4 * fd.abs().max(1e-3), "k={k} fd={fd} g={}", g[k]);
            }
        }
    }

    #[test]
    fn fit_improves_on_default_start() {
        let x = x1(&[0.0, 1.0]);
        let y = [0.0, 0.0];
        let gp = GpPosterior::fit(&x, &y, &FitConfig::default()).unwrap();
        let at_default = log_marginal_likelihood(&x, &y, &KernelParams::from_log(DEFAULT_START)).unwrap();
        assert!(gp.log_marginal_likelihood() >= at_default);
    }

    #[test]
    fn fit_is_deterministic_and_beats_every_start() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.4).collect();
        let y: Vec<f64> = xs.iter().map(|v| (v * 1.3).sin() * 0.1).collect();
        let x = x1(&xs);
        let cfg = FitConfig {
            seed: 11,
            ..FitConfig::default()
        };
        let a = GpPosterior::fit(&x, &y, &cfg).unwrap();
        let b = GpPosterior::fit(&x, &y, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.log_marginal_likelihood().to_bits(), b.log_marginal_likelihood().to_bits());
        let seq = GpPosterior::fit(&x, &y, &FitConfig { execution: Execution::Sequential, ..cfg }).unwrap();
        assert_eq!(a.params(), seq.params());
        for s in cfg.starts() {
            let clipped = [
                s[0].clamp(-9.2, 9.2),
                s[1].clamp(-4.6, 6.9),
                s[2].clamp(-18.4, 4.6),
            ];
            if let Ok(l) = log_marginal_likelihood(&x, &y, &KernelParams::from_log(clipped)) {
                assert!(a.log_marginal_likelihood() >= l - 1e-9);
            }
        }
    }

    #[test]
    fn interpolates_noise_free_sinusoid() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 * 0.8).collect();
        let y: Vec<f64> = xs.iter().map(|v| v.sin()).collect();
        let x = x1(&xs);
        let gp = GpPosterior::fit(&x, &y, &FitConfig::default()).unwrap();
        let pred = gp.predict(&x, false).unwrap();
        for (p, t) in pred.iter().zip(&y) {
            assert!((p.mu - t).abs() < 1e-4, "{} vs {t}", p.mu);
        }
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let p = KernelParams {
            signal_variance: 0.7,
            length_scale: 0.5,
            noise_variance: 0.01,
        };
        let gp = GpPosterior::with_params(x1(&[0.0, 1.0, 2.0]), &[0.1, 0.2, -0.1], p).unwrap();
        let far = x1(&[200.0]);
        let a = gp.predict(&far, false).unwrap()[0];
        let b = gp.predict(&far, true).unwrap()[0];
        assert!((a.sigma.powi(2) - 0.7).abs() < 1e-6);
        assert!((b.sigma.powi(2) - 0.71).abs() < 1e-6);
        assert!(a.mu.abs() < 1e-6);
        let near = gp.predict(&x1(&[1.0]), false).unwrap()[0];
        assert!((near.sigma.powi(2) + 0.01 - (gp.predict(&x1(&[1.0]), true).unwrap()[0].sigma.powi(2))).abs() < 1e-12);
        assert!(near.sigma <= a.sigma);
    }

    #[test]
    fn training_point_interpolation_with_tiny_noise() {
        let p = KernelParams {
            signal_variance: 1.0,
            length_scale: 1.0,
            noise_variance: 1e-8,
        };
        let gp = GpPosterior::with_params(x1(&[0.0, 0.7, 2.0]), &[0.1, 0.3, -0.2], p).unwrap();
        let pred = gp.predict(&x1(&[0.7]), false).unwrap()[0];
        assert!((pred.mu - 0.3).abs() < 1e-3);
    }

    #[test]
    fn cholesky_reconstructs_kernel() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.1, 0.0, 1.0, 1.0, -1.0, 0.5]);
        let gp = GpPosterior::fit(&x, &[0.0, 0.1, 0.3, -0.2], &FitConfig::default()).unwrap();
        let l = gp.cholesky_factor();
        let k = gp.training_covariance();
        let rel = (&l * l.transpose() - &k).norm() / k.norm();
        assert!(rel < 1e-8);
        assert!(gp.jitter() <= 1e-4);
    }

    #[test]
    fn snapshot_roundtrip() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.5, 1.0, 1.0, -1.0]);
        let gp = GpPosterior::fit(&x, &[0.0, 0.1, 0.3], &FitConfig::default()).unwrap();
        let s = gp.snapshot();
        let back = GpPosterior::from_snapshot(&s).unwrap();
        assert_eq!(back.snapshot(), s);
        let q = DMatrix::from_row_slice(1, 2, &[0.2, 0.2]);
        assert_eq!(gp.predict(&q, false).unwrap(), back.predict(&q, false).unwrap());
    }

    #[test]
    fn errors() {
        assert_eq!(
            GpPosterior::fit(&x1(&[0.0]), &[1.0], &FitConfig::default()).unwrap_err(),
            SurrogateError::InsufficientData(1)
        );
        assert_eq!(
            GpPosterior::fit(&x1(&[0.0, 1.0]), &[1.0, f64::NAN], &FitConfig::default()).unwrap_err(),
            SurrogateError::NonFinite
        );
        let gp = GpPosterior::fit(&x1(&[0.0, 1.0]), &[1.0, 0.0], &FitConfig::default()).unwrap();
        assert!(matches!(
            gp.predict(&DMatrix::zeros(1, 2), false),
            Err(SurrogateError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn huge_targets_fail_numerically() {
        let r = GpPosterior::fit(&x1(&[0.0, 1.0, 2.0]), &[1e300, -1e300, 1e300], &FitConfig::default());
        assert!(matches!(r, Err(SurrogateError::NumericalFailure(_))));
    }
}
