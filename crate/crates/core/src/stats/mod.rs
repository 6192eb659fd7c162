//! Two-sample tests and p-value arithmetic.
//!
//! All tests are two-sided. Zero-variance samples follow one convention
//! everywhere: equal means (or both variances zero for the F test) give
//! `p = 1`, anything else gives `p = 0`. Tree leaves can hold constant
//! residuals, so this case is routine rather than an error.

pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A probability in `[0, 1]`. Construction clamps; NaN maps to 1.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PValue(f64);

impl PValue {
    pub const ONE: PValue = PValue(1.0);
    pub const ZERO: PValue = PValue(0.0);

    pub fn new(p: f64) -> Self {
        if p.is_nan() {
            PValue(1.0)
        } else {
            PValue(p.clamp(0.0, 1.0))
        }
    }

    /// Like [`PValue::new`] but rejects values outside `[0, 1]`; for user input.
    pub fn checked(p: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&p) {
            Ok(PValue(p))
        } else {
            Err(Error::InvalidParameter(format!("probability {p} is outside [0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<PValue> for f64 {
    fn from(p: PValue) -> f64 {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    KolmogorovSmirnov,
    WelchT,
    FVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p: PValue,
    pub method: TestMethod,
    pub sample_sizes: (usize, usize),
}

/// Sample moments that merge exactly across disjoint groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Sum of squared deviations from the mean.
    pub m2: f64,
}

impl Moments {
    pub fn from_slice(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Moments { n, mean: 0.0, m2: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let m2 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        Moments { n, mean, m2 }
    }

    /// Pools two disjoint samples (Chan et al. update).
    pub fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        Moments { n, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

fn require(test: &'static str, a: usize, b: usize, min: usize) -> Result<()> {
    if a < min || b < min {
        return Err(Error::InvalidSample {
            test,
            reason: format!("need at least {min} observations per sample, got {a} and {b}"),
        });
    }
    Ok(())
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov p-value
/// at effective size `n_a·n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestReport> {
    require("ks_two_sample", a.len(), b.len(), 1)?;
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidSample {
            test: "ks_two_sample",
            reason: "NaN in sample".into(),
        });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let d = ks_statistic_sorted(&a, &b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let effective = na * nb / (na + nb);
    Ok(TestReport {
        statistic: d,
        p: PValue::new(special::kolmogorov_sf(effective.sqrt() * d)),
        method: TestMethod::KolmogorovSmirnov,
        sample_sizes: (a.len(), b.len()),
    })
}

fn ks_statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Welch's unequal-variance t test.
pub fn t_two_sample(a: &[f64], b: &[f64]) -> Result<TestReport> {
    require("t_two_sample", a.len(), b.len(), 2)?;
    Ok(welch_from_moments(Moments::from_slice(a), Moments::from_slice(b)))
}

pub fn welch_from_moments(a: Moments, b: Moments) -> TestReport {
    let (na, nb) = (a.n as f64, b.n as f64);
    let qa = a.variance() / na;
    let qb = b.variance() / nb;
    let se2 = qa + qb;
    let diff = a.mean - b.mean;
    let (statistic, p) = if se2 == 0.0 {
        if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = diff / se2.sqrt();
        let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
        (t, special::student_t_two_sided(t, df))
    };
    TestReport {
        statistic,
        p: PValue::new(p),
        method: TestMethod::WelchT,
        sample_sizes: (a.n, b.n),
    }
}

/// Two-sided F test for equal variances, `F = var(a) / var(b)`.
pub fn f_variance_test(a: &[f64], b: &[f64]) -> Result<TestReport> {
    require("f_variance_test", a.len(), b.len(), 2)?;
    Ok(f_from_moments(Moments::from_slice(a), Moments::from_slice(b)))
}

pub fn f_from_moments(a: Moments, b: Moments) -> TestReport {
    let (va, vb) = (a.variance(), b.variance());
    let (statistic, p) = match (va == 0.0, vb == 0.0) {
        (true, true) => (1.0, 1.0),
        (true, false) => (0.0, 0.0),
        (false, true) => (f64::INFINITY, 0.0),
        (false, false) => {
            let f = va / vb;
            let (d1, d2) = ((a.n - 1) as f64, (b.n - 1) as f64);
            let lower = special::f_cdf(f, d1, d2);
            let upper = special::f_sf(f, d1, d2);
            (f, 2.0 * lower.min(upper))
        }
    };
    TestReport {
        statistic,
        p: PValue::new(p),
        method: TestMethod::FVariance,
        sample_sizes: (a.n, b.n),
    }
}

/// `min(1, m · min(p))` over `m` p-values.
pub fn bonferroni(ps: &[PValue]) -> Result<PValue> {
    let smallest = ps
        .iter()
        .map(|p| p.get())
        .min_by(f64::total_cmp)
        .ok_or(Error::EmptyPValues)?;
    Ok(PValue::new(ps.len() as f64 * smallest))
}

/// Merges a mean test and a variance test: `min(1, 2 · min(p_mean, p_var))`.
pub fn combine_min_double(p_mean: PValue, p_var: PValue) -> PValue {
    PValue::new(2.0 * p_mean.get().min(p_var.get()))
}
