//! Smoothing kernels and the kernel-smoothed event rate.
//!
//! The smoothed rate of cell `(i, j)` at time `t` is
//!
//! ```text
//!   y_ij(t) = sum_e K_h(t - e) / D(t),   D(t) = int_0^1 K_h(t - s) ds,
//! ```
//!
//! with `K_h(x) = K(x / h) / h`. `D` is evaluated in closed form.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::event_data::EventPanel;
use crate::numeric;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Past this many bandwidths the Gaussian kernel underflows to zero in `f64`.
const GAUSSIAN_SUPPORT_RADIUS: f64 = 38.6;

/// Slack when checking a time against the evaluation interval.
const INTERVAL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Epanechnikov,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub order: u32,
    pub bandwidth: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    KernelSpec::DEFAULT_EPSILON
}

impl KernelSpec {
    pub const DEFAULT_EPSILON: f64 = 0.05;

    pub fn epanechnikov(bandwidth: f64) -> Self {
        Self {
            family: KernelFamily::Epanechnikov,
            order: 2,
            bandwidth,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn gaussian(bandwidth: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            order: 2,
            bandwidth,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.bandwidth;
        if !(h > 0.0 && h < 0.5) {
            return Err(Error::InvalidConfig(format!("bandwidth {h} not in (0, 1/2)")));
        }
        match self.family {
            KernelFamily::Epanechnikov if self.order != 2 => Err(Error::InvalidConfig(format!(
                "Epanechnikov kernel has order 2, got {}",
                self.order
            ))),
            KernelFamily::Gaussian if self.order < 2 || self.order % 2 != 0 => Err(
                Error::InvalidConfig(format!("Gaussian order must be even and >= 2, got {}", self.order)),
            ),
            KernelFamily::Gaussian if !(self.epsilon > 0.0 && self.epsilon < 1.0) => Err(
                Error::InvalidConfig(format!("epsilon {} not in (0, 1)", self.epsilon)),
            ),
            KernelFamily::Gaussian if h.powf(1.0 - self.epsilon) >= 0.5 => Err(Error::InvalidConfig(
                format!("Gaussian evaluation interval is empty for h = {h}"),
            )),
            _ => Ok(()),
        }
    }

    /// `[h, 1-h]` for compact kernels, `[h^(1-eps), 1-h^(1-eps)]` for Gaussian.
    pub fn evaluation_interval(&self) -> (f64, f64) {
        let margin = match self.family {
            KernelFamily::Epanechnikov => self.bandwidth,
            KernelFamily::Gaussian => self.bandwidth.powf(1.0 - self.epsilon),
        };
        (margin, 1.0 - margin)
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = self.evaluation_interval();
        t >= lo - INTERVAL_SLACK && t <= hi + INTERVAL_SLACK
    }

    pub(crate) fn check_in_interval(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            let (lo, hi) = self.evaluation_interval();
            Err(Error::OutsideEvaluationInterval { t, lo, hi })
        }
    }

    /// Half-width of the support of `K` (unscaled).
    pub fn support_radius(&self) -> f64 {
        match self.family {
            KernelFamily::Epanechnikov => 1.0,
            KernelFamily::Gaussian => GAUSSIAN_SUPPORT_RADIUS,
        }
    }

    /// `K(x)`.
    pub fn value(&self, x: f64) -> f64 {
        kernel_value(self, x)
    }

    /// `K_h(x) = K(x/h)/h`.
    pub fn scaled(&self, x: f64) -> f64 {
        kernel_value(self, x / self.bandwidth) / self.bandwidth
    }

    /// `D(t) = int_0^1 K_h(t - s) ds` in closed form.
    pub fn denominator(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        self.cdf(t / h) - self.cdf((t - 1.0) / h)
    }

    /// Antiderivative of `K` normalized to `cdf(-inf) = 0`.
    fn cdf(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Epanechnikov => {
                let u = u.clamp(-1.0, 1.0);
                0.75 * (u - u * u * u / 3.0) + 0.5
            }
            KernelFamily::Gaussian => 0.5 * (1.0 + erf(u / std::f64::consts::SQRT_2)),
        }
    }

    /// Kernel sum `sum_e K_h(t - e)` over a sorted event slice.
    pub(crate) fn kernel_sum(&self, events: &[f64], t: f64) -> f64 {
        let reach = self.support_radius() * self.bandwidth;
        let lo = events.partition_point(|&e| e < t - reach);
        let hi = events.partition_point(|&e| e <= t + reach);
        events[lo..hi].iter().map(|&e| self.scaled(t - e)).sum()
    }
}

/// `K(x)` for the given kernel family.
pub fn kernel_value(spec: &KernelSpec, x: f64) -> f64 {
    match spec.family {
        KernelFamily::Epanechnikov => {
            if x.abs() <= 1.0 {
                0.75 * (1.0 - x * x)
            } else {
                0.0
            }
        }
        KernelFamily::Gaussian => INV_SQRT_2PI * (-0.5 * x * x).exp(),
    }
}

/// Kernel-smoothed event rate of cell `(i, j)` at `t`. Ignores the mask.
pub fn smoothed_rate(panel: &EventPanel, i: usize, j: usize, t: f64, spec: &KernelSpec) -> Result<f64> {
    spec.check_in_interval(t)?;
    let events = panel.cell(i, j)?;
    Ok(spec.kernel_sum(events, t) / spec.denominator(t))
}

/// Evaluates `int K_h(t-s) f(s) ds / D(t)` by adaptive quadrature alongside
/// `f(t)`, so the smoothing bias can be compared against `C_m h^m`.
pub fn kernel_bias_bound_check<F>(f: F, spec: &KernelSpec, t: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    spec.check_in_interval(t)?;
    let reach = spec.support_radius() * spec.bandwidth;
    let a = (t - reach).max(0.0);
    let b = (t + reach).min(1.0);
    let integrand = |s: f64| spec.scaled(t - s) * f(s);
    let left = numeric::integrate(integrand, a, t, 1e-13)?;
    let right = numeric::integrate(integrand, t, b, 1e-13)?;
    Ok(((left + right) / spec.denominator(t), f(t)))
}

/// `C_m = (B / m!) int |K(x)| |x|^m dx`, where `B` bounds `|f^(m)|`.
pub fn bias_constant(spec: &KernelSpec, derivative_bound: f64) -> Result<f64> {
    let m = spec.order as i32;
    let r = spec.support_radius();
    let moment = numeric::integrate(|x| kernel_value(spec, x).abs() * x.abs().powi(m), -r, r, 1e-12)?;
    let factorial: f64 = (1..=spec.order).map(f64::from).product();
    Ok(derivative_bound / factorial * moment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn kernel_values() {
        let e = KernelSpec::epanechnikov(0.1);
        assert_eq!(e.value(0.0), 0.75);
        assert_eq!(e.value(1.2), 0.0);
        assert_eq!(e.value(-1.2), 0.0);
        let g = KernelSpec::gaussian(0.1);
        assert!((g.value(0.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!((g.value(0.0) - 0.39894).abs() < 1e-5);
    }

    #[test]
    fn validation() {
        assert!(KernelSpec::epanechnikov(0.1).validate().is_ok());
        assert!(KernelSpec::epanechnikov(0.6).validate().is_err());
        assert!(KernelSpec::epanechnikov(0.0).validate().is_err());
        let mut e = KernelSpec::epanechnikov(0.1);
        e.order = 4;
        assert!(e.validate().is_err());
        let mut g = KernelSpec::gaussian(0.1);
        g.order = 3;
        assert!(g.validate().is_err());
        g.order = 4;
        assert!(g.validate().is_ok());
        g.epsilon = 1.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn evaluation_intervals() {
        let (lo, hi) = KernelSpec::epanechnikov(0.1).evaluation_interval();
        assert!((lo - 0.1).abs() < 1e-15 && (hi - 0.9).abs() < 1e-15);
        let (lo, _) = KernelSpec::gaussian(0.1).evaluation_interval();
        assert!((lo - 0.1f64.powf(0.95)).abs() < 1e-15);
    }

    #[test]
    fn smoothed_rate_fixtures() {
        let spec = KernelSpec::epanechnikov(0.1);
        let empty = EventPanel::empty(1, 1);
        assert_eq!(smoothed_rate(&empty, 0, 0, 0.5, &spec).unwrap(), 0.0);

        let single = EventPanel::from_triples(1, 1, vec![(0, 0, 0.5)]).unwrap();
        let v = smoothed_rate(&single, 0, 0, 0.5, &spec).unwrap();
        assert!((v - 7.5).abs() < 1e-12);

        // 0.40 sits on the support edge and contributes 0; 0.55 gives 0.75*0.75/0.1
        let two = EventPanel::from_triples(1, 1, vec![(0, 0, 0.40), (0, 0, 0.55)]).unwrap();
        let v = smoothed_rate(&two, 0, 0, 0.5, &spec).unwrap();
        assert!((v - 5.625).abs() < 1e-9, "{v}");

        assert!(smoothed_rate(&single, 0, 0, 0.05, &spec).is_err());
    }

    #[test]
    fn denominator_matches_quadrature() {
        for spec in [KernelSpec::epanechnikov(0.1), KernelSpec::gaussian(0.1)] {
            let (lo, hi) = spec.evaluation_interval();
            for k in 0..=10 {
                let t = lo + (hi - lo) * k as f64 / 10.0;
                let reach = spec.support_radius() * spec.bandwidth;
                let k = |s: f64| spec.scaled(t - s);
                let quad = numeric::integrate(k, (t - reach).max(0.0), t, 1e-13).unwrap()
                    + numeric::integrate(k, t, (t + reach).min(1.0), 1e-13).unwrap();
                assert!((quad - spec.denominator(t)).abs() < 1e-9);
            }
        }
        // outside [h, 1-h] the Epanechnikov denominator drops below 1
        let e = KernelSpec::epanechnikov(0.1);
        assert!((e.denominator(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bias_check_constant_and_linear() {
        let spec = KernelSpec::epanechnikov(0.1);
        let (s, e) = kernel_bias_bound_check(|_| 3.0, &spec, 0.3).unwrap();
        assert!((s - 3.0).abs() < 1e-12 && e == 3.0);
        let (s, e) = kernel_bias_bound_check(|x| x, &spec, 0.37).unwrap();
        assert!((s - e).abs() < 1e-12);
    }

    #[test]
    fn bias_constant_epanechnikov() {
        // int 0.75(1-x^2)x^2 dx over [-1,1] = 0.2
        let c = bias_constant(&KernelSpec::epanechnikov(0.1), 2.0).unwrap();
        assert!((c - 0.2).abs() < 1e-10);
    }
}
