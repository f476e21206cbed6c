//! Binomial and t-based tests: Wilson interval, exact McNemar, Holm step-down
//! adjustment, Welch's two-sample t-test.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::StatsError;
use crate::normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub estimate: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub df: Option<f64>,
    pub method: String,
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, conf: f64) -> Result<(f64, f64), StatsError> {
    if n == 0 || k > n {
        return Err(StatsError::InvalidInput(format!("need 0 <= k <= n and n >= 1, got k={k}, n={n}")));
    }
    if !(conf > 0.0 && conf < 1.0) {
        return Err(StatsError::InvalidInput(format!("confidence must be in (0, 1), got {conf}")));
    }
    let z = normal::quantile((1.0 + conf) / 2.0);
    let (kf, nf) = (k as f64, n as f64);
    let z2 = z * z;
    let denom = nf + z2;
    let center = (kf + z2 / 2.0) / denom;
    let half = z / denom * (kf * (nf - kf) / nf + z2 / 4.0).sqrt();
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Lower binomial tail `P(X <= m)` for X ~ Bin(n, 1/2).
fn half_binomial_cdf(n: u64, m: u64) -> f64 {
    if n <= 1000 {
        // exact enough in f64: C(1000, 500) and 2^-1000 are both representable
        let scale = 0.5f64.powi(n as i32);
        let mut c = 1.0f64;
        let mut total = 0.0;
        for i in 0..=m {
            if i > 0 {
                c = c * (n - i + 1) as f64 / i as f64;
            }
            total += c * scale;
        }
        total
    } else {
        let ln_half = -(n as f64) * std::f64::consts::LN_2;
        (0..=m).map(|i| (ln_choose(n, i) + ln_half).exp()).sum()
    }
}

/// Exact two-sided McNemar test on discordant counts `b` and `c`
/// (doubled binomial tail, capped at 1).
pub fn mcnemar_exact(b: u64, c: u64) -> TestResult {
    let n = b + c;
    let p = if n == 0 {
        1.0
    } else {
        (2.0 * half_binomial_cdf(n, b.min(c))).min(1.0)
    };
    TestResult {
        statistic: b as f64 - c as f64,
        p_value: p,
        estimate: None,
        ci: None,
        df: None,
        method: "exact McNemar (two-sided binomial)".into(),
    }
}

/// Holm step-down adjusted p-values, returned in input order.
pub fn holm_bonferroni(ps: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidInput(format!("p-value out of range: {p}")));
    }
    let m = ps.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (j, &i) in order.iter().enumerate() {
        running = running.max((m - j) as f64 * ps[i]);
        out[i] = running.min(1.0);
    }
    Ok(out)
}

/// Continued fraction for the regularized incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Student's t CDF.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * t_two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t for p in (0.5, 1), by bisection on the CDF.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.5 && p < 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Welch's unequal-variance t-test from summary statistics, with a 95%
/// confidence interval on `m1 - m2`.
pub fn welch_t(m1: f64, s1: f64, n1: u64, m2: f64, s2: f64, n2: u64) -> Result<TestResult, StatsError> {
    if n1 < 2 || n2 < 2 {
        return Err(StatsError::InvalidInput("each group needs n >= 2".into()));
    }
    if !(s1 >= 0.0 && s2 >= 0.0) || ![m1, s1, m2, s2].iter().all(|v| v.is_finite()) {
        return Err(StatsError::InvalidInput("means and standard deviations must be finite, sds >= 0".into()));
    }
    let v1 = s1 * s1 / n1 as f64;
    let v2 = s2 * s2 / n2 as f64;
    let se2 = v1 + v2;
    if se2 <= 0.0 {
        return Err(StatsError::ZeroStandardError);
    }
    let se = se2.sqrt();
    let diff = m1 - m2;
    let t = diff / se;
    let df = se2 * se2 / (v1 * v1 / (n1 - 1) as f64 + v2 * v2 / (n2 - 1) as f64);
    let crit = t_quantile(0.975, df);
    Ok(TestResult {
        statistic: t,
        p_value: t_two_sided_p(t, df),
        estimate: Some(diff),
        ci: Some((diff - crit * se, diff + crit * se)),
        df: Some(df),
        method: "Welch two-sample t-test (two-sided)".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_benchmark_accuracy() {
        let (lo, hi) = wilson_interval(25, 32, 0.95).unwrap();
        assert!((lo - 0.612).abs() < 1e-3, "{lo}");
        assert!((hi - 0.890).abs() < 1e-3, "{hi}");
    }

    #[test]
    fn wilson_boundaries_and_symmetry() {
        assert_eq!(wilson_interval(0, 10, 0.95).unwrap().0, 0.0);
        let (_, hi) = wilson_interval(10, 10, 0.95).unwrap();
        let (_, hi0) = wilson_interval(0, 10, 0.95).unwrap();
        let (lo10, _) = wilson_interval(10, 10, 0.95).unwrap();
        assert_eq!(hi, 1.0);
        assert!((lo10 - (1.0 - hi0)).abs() < 1e-12);
        for k in 0..=17 {
            let (lo, hi) = wilson_interval(k, 17, 0.9).unwrap();
            let p = k as f64 / 17.0;
            assert!(lo <= p && p <= hi);
        }
        assert!(wilson_interval(3, 2, 0.95).is_err());
    }

    #[test]
    fn mcnemar_by_hand() {
        assert_eq!(mcnemar_exact(5, 1).p_value, 0.21875);
        assert_eq!(mcnemar_exact(1, 5).p_value, 0.21875);
        assert_eq!(mcnemar_exact(3, 3).p_value, 1.0);
        assert_eq!(mcnemar_exact(0, 0).p_value, 1.0);
        assert_eq!(mcnemar_exact(5, 1).statistic, 4.0);
        // large counts take the log-space route
        let big = mcnemar_exact(1100, 900).p_value;
        assert!(big > 0.0 && big < 1e-5);
    }

    #[test]
    fn holm_fixtures() {
        assert_eq!(holm_bonferroni(&[0.01, 0.04, 0.03]).unwrap(), [0.03, 0.06, 0.06]);
        assert_eq!(holm_bonferroni(&[0.2]).unwrap(), [0.2]);
        assert_eq!(holm_bonferroni(&[0.02; 5]).unwrap(), [0.1; 5]);
        assert_eq!(holm_bonferroni(&[0.5, 0.9]).unwrap(), [1.0, 1.0]);
        assert!(holm_bonferroni(&[1.5]).is_err());
    }

    #[test]
    fn t_distribution_reference_values() {
        // scipy.stats.t.sf(2.0, 10) * 2 = 0.0733880347707...
        assert!((t_two_sided_p(2.0, 10.0) - 0.073_388_034_770_740_8).abs() < 1e-10);
        // t.ppf(0.975, 30) = 2.0422724563012373
        assert!((t_quantile(0.975, 30.0) - 2.042_272_456_301_237).abs() < 1e-9);
        assert!((t_cdf(-1.0, 1.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn welch_identical_groups() {
        let r = welch_t(19.25, 0.28, 24, 19.25, 0.28, 24).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(welch_t(1.0, 0.0, 5, 2.0, 0.0, 5).is_err());
    }
}
