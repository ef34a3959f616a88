//! McNemar's test for paired binary verdicts.

use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    /// Two-sided exact binomial test on the discordant pairs.
    Exact,
    /// Chi-squared with continuity correction, one degree of freedom.
    Chi2Cc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub b: u64,
    pub c: u64,
    /// `min(b, c)` for the exact branch, the corrected chi-squared otherwise.
    pub statistic: f64,
    pub p_value: f64,
    pub method: McNemarMethod,
}

/// Discordant totals below this use the exact binomial branch.
pub const EXACT_THRESHOLD: u64 = 25;

/// 2x2 agreement table of two aligned verdict vectors.
///
/// `a`: both true, `b`: first true only, `c`: second true only, `d`: both false.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcomes {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl PairedOutcomes {
    pub fn from_verdicts(first: &[bool], second: &[bool]) -> Result<Self, MetricsError> {
        if first.len() != second.len() {
            return Err(MetricsError::KeyMismatch(format!(
                "verdict vectors differ in length ({} vs {})",
                first.len(),
                second.len()
            )));
        }
        let mut t = PairedOutcomes {
            a: 0,
            b: 0,
            c: 0,
            d: 0,
        };
        for (x, y) in first.iter().zip(second) {
            match (x, y) {
                (true, true) => t.a += 1,
                (true, false) => t.b += 1,
                (false, true) => t.c += 1,
                (false, false) => t.d += 1,
            }
        }
        Ok(t)
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn swapped(&self) -> Self {
        PairedOutcomes {
            a: self.a,
            b: self.c,
            c: self.b,
            d: self.d,
        }
    }
}

pub fn mcnemar(t: &PairedOutcomes) -> McNemarResult {
    let (b, c) = (t.b, t.c);
    let n = b + c;
    if n < EXACT_THRESHOLD {
        let k = b.min(c);
        // sum_{i<=k} C(n,i) / 2^n, accumulated in floating point; n < 25 keeps it exact enough
        let mut term = 0.5f64.powi(n as i32);
        let mut tail = term;
        for i in 0..k {
            term *= (n - i) as f64 / (i + 1) as f64;
            tail += term;
        }
        McNemarResult {
            b,
            c,
            statistic: k as f64,
            p_value: (2.0 * tail).min(1.0),
            method: McNemarMethod::Exact,
        }
    } else {
        let diff = b.abs_diff(c) as f64 - 1.0;
        let stat = diff.max(0.0).powi(2) / n as f64;
        McNemarResult {
            b,
            c,
            statistic: stat,
            p_value: chi2_sf_1df(stat),
            method: McNemarMethod::Chi2Cc,
        }
    }
}

/// Survival function of chi-squared with one degree of freedom:
/// `Q(1/2, x/2)`, the regularized upper incomplete gamma.
pub fn chi2_sf_1df(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5, x / 2.0)
}

const LN_SQRT_PI: f64 = 0.572_364_942_924_700_1;

/// ln Gamma(a) via Lanczos (g = 7, n = 9).
pub fn ln_gamma(a: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if a == 0.5 {
        return LN_SQRT_PI;
    }
    if a < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * a).sin()).ln() - ln_gamma(1.0 - a);
    }
    let a = a - 1.0;
    let mut x = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        x += c / (a + i as f64);
    }
    let t = a + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (a + 0.5) * t.ln() - t + x.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`: series for `x < a + 1`,
/// Lentz continued fraction otherwise.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 1.0;
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        1.0 - sum * log_prefactor.exp()
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        log_prefactor.exp() * h
    }
}
