//! Static Poisson factor model fitted to total counts.
//!
//! Maximizes `Σ_ij [Y_ij(1) X_ij − exp(X_ij)]` over constant `Θ`, `A` with the
//! same projected-gradient loop as the dynamic estimator. The fitted `X̂(t)`
//! is constant in time.

use crate::error::Result;
use crate::estimator::{self, FitConfig, Init};
use crate::event_data::EventPanel;
use crate::factor_model::FactorModel;
use crate::likelihood::count_weights;

#[derive(Debug, Clone, PartialEq)]
pub struct StaticFit {
    /// Static model: one sentinel grid time, `X̂(t) = ΘAᵀ` for all `t`.
    pub model: FactorModel,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
}

impl StaticFit {
    /// `Θ`, `N × r` row-major.
    pub fn theta(&self) -> &[f64] {
        self.model.theta()
    }

    pub fn loadings(&self) -> &[f64] {
        self.model.loadings()
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }
}

/// Fits the static model. `knobs` supplies the line-search and stopping
/// settings and the initialization; its rank, bound and bandwidth fields are
/// ignored in favor of `rank` and `bound_m`.
pub fn fit_static(panel: &EventPanel, rank: usize, bound_m: f64, knobs: &FitConfig) -> Result<StaticFit> {
    let config = FitConfig {
        rank,
        bound_m,
        ..knobs.clone()
    };
    config.validate()?;
    let weights = count_weights(panel);
    let result = estimator::fit_weights(&weights, &config)?;
    Ok(StaticFit {
        model: result.model,
        objective_trace: result.objective_trace,
        iterations: result.iterations,
        converged: result.converged,
        final_gradient_norm: result.final_gradient_norm,
    })
}

/// [`fit_static`] with default optimizer settings and the SVD warm start.
pub fn fit_static_default(panel: &EventPanel, rank: usize, bound_m: f64) -> Result<StaticFit> {
    fit_static(
        panel,
        rank,
        bound_m,
        &FitConfig {
            init: Init::SvdWarmStart,
            ..FitConfig::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_matches_log_count() {
        let panel = EventPanel::from_triples(1, 1, vec![(0, 0, 0.2), (0, 0, 0.5), (0, 0, 0.7)]).unwrap();
        let fit = fit_static_default(&panel, 1, 36.0).unwrap();
        assert!(fit.model.is_static());
        let x = fit.theta()[0] * fit.loadings()[0];
        // scalar grid-search oracle over the product x = θa ∈ [-M, M]
        let best = (0..=720_000)
            .map(|k| -36.0 + k as f64 * 1e-4)
            .max_by(|a, b| (3.0 * a - a.exp()).total_cmp(&(3.0 * b - b.exp())))
            .unwrap();
        assert!((x - best).abs() < 1e-3, "{x} vs {best}");
        assert!((x - 3f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn zero_counts_ascend_monotonically() {
        let panel = EventPanel::empty(3, 2);
        let fit = fit_static_default(&panel, 1, 36.0).unwrap();
        assert!(fit.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(fit.objective() >= -6.0);
        fit.model.check_feasible(1e-12).unwrap();
    }
}
