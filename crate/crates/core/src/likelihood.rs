//! Discretized kernel-smoothed pseudo-likelihood and its gradient.
//!
//! ```text
//!   L(Θ, A) = Σ_{i,j: ω_ij = 1} Σ_l [ y_ij(t_l) log f(X_ij(t_l)) - f(X_ij(t_l)) ]
//! ```
//!
//! The smoothed rates `y_ij(t_l)` do not depend on the parameters, so they are
//! computed once into [`SmoothedWeights`] and every objective evaluation is a
//! pass over `q × N × J` cells with no kernel work.
//!
//! Evaluation is parallel over fixed chunks of units and the partial results
//! are combined in a fixed pairwise order, so values are bit-identical for any
//! number of threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event_data::EventPanel;
use crate::factor_model::{dot, FactorModel, LinkSpec};
use crate::kernel::KernelSpec;
use crate::numeric::{pairwise_sum, pairwise_vec_sum, REDUCTION_CHUNK};

/// Smoothed rates on the grid, laid out unit-major: `((i * q) + l) * J + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedWeights {
    grid: Vec<f64>,
    n_units: usize,
    n_types: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
    kernel: Option<KernelSpec>,
}

impl SmoothedWeights {
    /// Wraps precomputed values given in `[l][i][j]` order (row-major). Masked
    /// cells are given by `observed[i * J + j] == false`.
    pub fn from_grid_values(
        grid: Vec<f64>,
        n_units: usize,
        n_types: usize,
        values_lij: &[f64],
        observed: Option<Vec<bool>>,
    ) -> Result<Self> {
        let q = grid.len();
        if values_lij.len() != q * n_units * n_types {
            return Err(Error::DimensionMismatch(format!(
                "expected {} weights, got {}",
                q * n_units * n_types,
                values_lij.len()
            )));
        }
        if values_lij.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig("weights must be finite and nonnegative".into()));
        }
        let observed = observed.unwrap_or_else(|| vec![true; n_units * n_types]);
        if observed.len() != n_units * n_types {
            return Err(Error::DimensionMismatch("mask length".into()));
        }
        let mut values = vec![0.0; values_lij.len()];
        for l in 0..q {
            for i in 0..n_units {
                for j in 0..n_types {
                    let v = if observed[i * n_types + j] {
                        values_lij[(l * n_units + i) * n_types + j]
                    } else {
                        f64::NAN
                    };
                    values[(i * q + l) * n_types + j] = v;
                }
            }
        }
        Ok(Self {
            grid,
            n_units,
            n_types,
            values,
            observed,
            kernel: None,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    pub fn n_units(&self) -> usize {
        self.n_units
    }
    pub fn n_types(&self) -> usize {
        self.n_types
    }
    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.n_types + j]
    }

    /// `y_ij(t_l)`, or `None` for a masked cell.
    pub fn get(&self, l: usize, i: usize, j: usize) -> Option<f64> {
        self.is_observed(i, j)
            .then(|| self.values[(i * self.grid.len() + l) * self.n_types + j])
    }

    /// The `J` weights of unit `i` at grid index `l` (NaN where masked).
    #[inline]
    pub(crate) fn slab(&self, l: usize, i: usize) -> &[f64] {
        let start = (i * self.grid.len() + l) * self.n_types;
        &self.values[start..start + self.n_types]
    }

    /// Time-average of each cell's weights, `N × J` row-major; masked cells give NaN.
    pub fn time_average(&self) -> Vec<f64> {
        let q = self.grid.len() as f64;
        let mut out = vec![0.0; self.n_units * self.n_types];
        for i in 0..self.n_units {
            for l in 0..self.grid.len() {
                for (o, v) in out[i * self.n_types..(i + 1) * self.n_types]
                    .iter_mut()
                    .zip(self.slab(l, i))
                {
                    *o += v / q;
                }
            }
        }
        out
    }

    fn check_model(&self, model: &FactorModel) -> Result<()> {
        if model.n_units() != self.n_units || model.n_types() != self.n_types {
            return Err(Error::DimensionMismatch(format!(
                "weights are {}x{}, model is {}x{}",
                self.n_units,
                self.n_types,
                model.n_units(),
                model.n_types()
            )));
        }
        if model.grid() != self.grid.as_slice() {
            return Err(Error::DimensionMismatch("model grid differs from weights grid".into()));
        }
        Ok(())
    }
}

/// Smoothed rates `y_ij(t_l)` for every cell and grid point.
pub fn precompute_weights(panel: &EventPanel, spec: &KernelSpec, grid: &[f64]) -> Result<SmoothedWeights> {
    spec.validate()?;
    for &t in grid {
        spec.check_in_interval(t)?;
    }
    let (n, jn, q) = (panel.n_units(), panel.n_types(), grid.len());
    let denominators: Vec<f64> = grid.iter().map(|&t| spec.denominator(t)).collect();
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut block = vec![0.0; q * jn];
            for j in 0..jn {
                let observed = panel.is_observed(i, j);
                let events = panel.cell_unchecked(i, j);
                for l in 0..q {
                    block[l * jn + j] = if observed {
                        spec.kernel_sum(events, grid[l]) / denominators[l]
                    } else {
                        f64::NAN
                    };
                }
            }
            block
        })
        .collect();
    Ok(SmoothedWeights {
        grid: grid.to_vec(),
        n_units: n,
        n_types: jn,
        values,
        observed: (0..n * jn).map(|c| panel.is_observed(c / jn, c % jn)).collect(),
        kernel: Some(*spec),
    })
}

/// Raw totals `Y_ij(1)` on a single sentinel grid time, for the static model.
pub fn count_weights(panel: &EventPanel) -> SmoothedWeights {
    let (n, jn) = (panel.n_units(), panel.n_types());
    let observed: Vec<bool> = (0..n * jn).map(|c| panel.is_observed(c / jn, c % jn)).collect();
    let values = (0..n * jn)
        .map(|c| {
            if observed[c] {
                panel.cell_unchecked(c / jn, c % jn).len() as f64
            } else {
                f64::NAN
            }
        })
        .collect();
    SmoothedWeights {
        grid: vec![0.5],
        n_units: n,
        n_types: jn,
        values,
        observed,
        kernel: None,
    }
}

/// Gradient of the objective with respect to Θ (flat `q × N × r`) and A (flat `J × r`).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub theta: Vec<f64>,
    pub loadings: Vec<f64>,
    /// Per-row curvature blocks `Σ_j f(X) a_j a_jᵀ` for each `θ_i(t_l)`
    /// (flat `q × N × r × r`) and `Σ_{i,l} f(X) θ θᵀ` for each `a_j`.
    pub(crate) theta_curvature: Vec<f64>,
    pub(crate) loading_curvature: Vec<f64>,
}

impl Gradients {
    pub fn norm_squared(&self) -> f64 {
        pairwise_sum(&[
            self.theta.iter().map(|g| g * g).sum(),
            self.loadings.iter().map(|g| g * g).sum(),
        ])
    }
}

#[inline]
/// Objective term, score residual and rate `f(x)` of one cell.
fn cell_term(link: LinkSpec, y: f64, x: f64) -> (f64, f64, f64) {
    match link {
        LinkSpec::Exp => {
            let ex = x.exp();
            (y * x - ex, y - ex, ex)
        }
    }
}

/// Objective and (optionally) gradient in a single pass.
pub(crate) fn evaluate(weights: &SmoothedWeights, model: &FactorModel, with_gradient: bool) -> (f64, Option<Gradients>) {
    let (n, jn, q, r) = (model.n_units(), model.n_types(), model.n_grid(), model.rank());
    let link = model.link();
    let n_chunks = n.div_ceil(REDUCTION_CHUNK);

    struct Partial {
        value: f64,
        d_theta: Vec<f64>,
        d_loadings: Vec<f64>,
        c_theta: Vec<f64>,
        c_loadings: Vec<f64>,
    }

    let partials: Vec<Partial> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCTION_CHUNK;
            let hi = (lo + REDUCTION_CHUNK).min(n);
            let mut value = 0.0;
            let mut d_theta = if with_gradient { vec![0.0; q * (hi - lo) * r] } else { Vec::new() };
            let mut d_loadings = if with_gradient { vec![0.0; jn * r] } else { Vec::new() };
            let rr = r * r;
            let mut c_theta = if with_gradient { vec![0.0; q * (hi - lo) * rr] } else { Vec::new() };
            let mut c_loadings = if with_gradient { vec![0.0; jn * rr] } else { Vec::new() };
            let mut h = vec![0.0; rr];
            let mut g = vec![0.0; r];
            for i in lo..hi {
                let mut unit_value = 0.0;
                for l in 0..q {
                    let theta = model.theta_row(l, i);
                    let ys = weights.slab(l, i);
                    let mut slab_value = 0.0;
                    g.fill(0.0);
                    h.fill(0.0);
                    for (j, &y) in ys.iter().enumerate() {
                        if !weights.observed[i * jn + j] {
                            continue;
                        }
                        let a = model.loading_row(j);
                        let x = dot(theta, a);
                        let (term, resid, rate) = cell_term(link, y, x);
                        slab_value += term;
                        if with_gradient {
                            for k in 0..r {
                                g[k] += resid * a[k];
                                d_loadings[j * r + k] += resid * theta[k];
                            }
                            let cl = &mut c_loadings[j * rr..(j + 1) * rr];
                            for k in 0..r {
                                for m in 0..r {
                                    h[k * r + m] += rate * a[k] * a[m];
                                    cl[k * r + m] += rate * theta[k] * theta[m];
                                }
                            }
                        }
                    }
                    unit_value += slab_value;
                    if with_gradient {
                        let start = (l * (hi - lo) + (i - lo)) * r;
                        d_theta[start..start + r].copy_from_slice(&g);
                        let start = (l * (hi - lo) + (i - lo)) * rr;
                        c_theta[start..start + rr].copy_from_slice(&h);
                    }
                }
                value += unit_value;
            }
            Partial {
                value,
                d_theta,
                d_loadings,
                c_theta,
                c_loadings,
            }
        })
        .collect();

    let value = pairwise_sum(&partials.iter().map(|p| p.value).collect::<Vec<_>>());
    if !with_gradient {
        return (value, None);
    }
    let mut theta = vec![0.0; q * n * r];
    let rr = r * r;
    let mut theta_curvature = vec![0.0; q * n * rr];
    for (c, p) in partials.iter().enumerate() {
        let lo = c * REDUCTION_CHUNK;
        let width = p.d_theta.len() / (q * r);
        for l in 0..q {
            let src = &p.d_theta[l * width * r..(l + 1) * width * r];
            let dst = (l * n + lo) * r;
            theta[dst..dst + width * r].copy_from_slice(src);
            let src = &p.c_theta[l * width * rr..(l + 1) * width * rr];
            let dst = (l * n + lo) * rr;
            theta_curvature[dst..dst + width * rr].copy_from_slice(src);
        }
    }
    let (loading_parts, curvature_parts): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
        partials.into_iter().map(|p| (p.d_loadings, p.c_loadings)).unzip();
    let loadings = pairwise_vec_sum(&loading_parts, jn * r);
    let loading_curvature = pairwise_vec_sum(&curvature_parts, jn * rr);
    (
        value,
        Some(Gradients {
            theta,
            loadings,
            theta_curvature,
            loading_curvature,
        }),
    )
}

/// Fitted rates `f(X_ij(t_l))` in the weights' layout, zero on masked cells.
pub(crate) fn fitted_rates(weights: &SmoothedWeights, model: &FactorModel) -> Vec<f64> {
    let (n, jn, q) = (model.n_units(), model.n_types(), model.n_grid());
    let link = model.link();
    let mut out = vec![0.0; n * q * jn];
    out.par_chunks_mut(q * jn).enumerate().for_each(|(i, unit)| {
        for l in 0..q {
            let theta = model.theta_row(l, i);
            for j in 0..jn {
                if weights.observed[i * jn + j] {
                    unit[l * jn + j] = link.f(dot(theta, model.loading_row(j)));
                }
            }
        }
    });
    out
}

/// Product of the Fisher information `Jᵀ diag(f(X)) J` with a parameter
/// direction, where `J` maps `(δΘ, δA)` to `δX`. Uses the same fixed-chunk
/// reduction as [`evaluate`].
pub(crate) fn fisher_product(
    model: &FactorModel,
    rates: &[f64],
    v_theta: &[f64],
    v_loadings: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (n, jn, q, r) = (model.n_units(), model.n_types(), model.n_grid(), model.rank());
    let n_chunks = n.div_ceil(REDUCTION_CHUNK);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCTION_CHUNK;
            let hi = (lo + REDUCTION_CHUNK).min(n);
            let mut out_theta = vec![0.0; q * (hi - lo) * r];
            let mut out_loadings = vec![0.0; jn * r];
            for i in lo..hi {
                for l in 0..q {
                    let theta = model.theta_row(l, i);
                    let dt = &v_theta[(l * n + i) * r..(l * n + i + 1) * r];
                    let ws = &rates[(i * q + l) * jn..(i * q + l + 1) * jn];
                    let start = (l * (hi - lo) + (i - lo)) * r;
                    let acc = &mut out_theta[start..start + r];
                    for (j, &w) in ws.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let a = model.loading_row(j);
                        let da = &v_loadings[j * r..(j + 1) * r];
                        let u = w * (dot(dt, a) + dot(theta, da));
                        for k in 0..r {
                            acc[k] += u * a[k];
                            out_loadings[j * r + k] += u * theta[k];
                        }
                    }
                }
            }
            (out_theta, out_loadings)
        })
        .collect();
    let mut theta = vec![0.0; q * n * r];
    for (c, (part, _)) in parts.iter().enumerate() {
        let lo = c * REDUCTION_CHUNK;
        let width = part.len() / (q * r);
        for l in 0..q {
            let dst = (l * n + lo) * r;
            theta[dst..dst + width * r].copy_from_slice(&part[l * width * r..(l + 1) * width * r]);
        }
    }
    let loading_parts: Vec<Vec<f64>> = parts.into_iter().map(|p| p.1).collect();
    (theta, pairwise_vec_sum(&loading_parts, jn * r))
}

/// The discretized pseudo-likelihood `L(Θ, A)`.
pub fn log_pseudo_likelihood(weights: &SmoothedWeights, model: &FactorModel) -> Result<f64> {
    weights.check_model(model)?;
    Ok(evaluate(weights, model, false).0)
}

/// Analytic gradient of [`log_pseudo_likelihood`].
pub fn gradients(weights: &SmoothedWeights, model: &FactorModel) -> Result<Gradients> {
    weights.check_model(model)?;
    Ok(evaluate(weights, model, true).1.expect("gradient requested"))
}

pub(crate) fn check_compatible(weights: &SmoothedWeights, model: &FactorModel) -> Result<()> {
    weights.check_model(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_model::uniform_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64, n: usize, jn: usize, r: usize, q: usize) -> (SmoothedWeights, FactorModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = uniform_grid(0.1, 0.9, q);
        let ys: Vec<f64> = (0..q * n * jn).map(|_| rng.random_range(0.0..5.0)).collect();
        let w = SmoothedWeights::from_grid_values(grid.clone(), n, jn, &ys, None).unwrap();
        let theta = (0..q * n * r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loadings = (0..jn * r).map(|_| rng.random_range(-1.0..1.0)).collect();
        (w, FactorModel::new(grid, n, jn, r, theta, loadings, 36.0).unwrap())
    }

    /// Independent triple loop over `[l][i][j]`.
    fn naive_objective(ys_lij: &[f64], model: &FactorModel) -> f64 {
        let (n, jn, q) = (model.n_units(), model.n_types(), model.n_grid());
        let mut total = 0.0;
        for l in 0..q {
            for i in 0..n {
                for j in 0..jn {
                    let x: f64 = (0..model.rank())
                        .map(|k| model.theta()[(l * n + i) * model.rank() + k] * model.loadings()[j * model.rank() + k])
                        .sum();
                    total += ys_lij[(l * n + i) * jn + j] * x - x.exp();
                }
            }
        }
        total
    }

    #[test]
    fn zero_weights_zero_model() {
        let grid = uniform_grid(0.1, 0.9, 3);
        let w = SmoothedWeights::from_grid_values(grid.clone(), 2, 3, &[0.0; 18], None).unwrap();
        let m = FactorModel::zeros(grid, 2, 3, 1, 36.0).unwrap();
        assert_eq!(log_pseudo_likelihood(&w, &m).unwrap(), -18.0);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = uniform_grid(0.1, 0.9, 3);
        let ys: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..4.0)).collect();
        let w = SmoothedWeights::from_grid_values(grid.clone(), 2, 2, &ys, None).unwrap();
        let theta = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loadings = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = FactorModel::new(grid, 2, 2, 1, theta, loadings, 36.0).unwrap();
        let got = log_pseudo_likelihood(&w, &m).unwrap();
        assert!((got - naive_objective(&ys, &m)).abs() < 1e-12);
    }

    #[test]
    fn plug_in_identity_and_stationarity() {
        let (_, m) = random_instance(9, 3, 4, 2, 3);
        let (n, jn, q) = (3, 4, 3);
        let mut ys = vec![0.0; q * n * jn];
        let mut expected = 0.0;
        for l in 0..q {
            for i in 0..n {
                for j in 0..jn {
                    let fx = m.x_unchecked(l, i, j).exp();
                    ys[(l * n + i) * jn + j] = fx;
                    expected += fx * (fx.ln() - 1.0);
                }
            }
        }
        let w = SmoothedWeights::from_grid_values(m.grid().to_vec(), n, jn, &ys, None).unwrap();
        assert!((log_pseudo_likelihood(&w, &m).unwrap() - expected).abs() < 1e-10);
        let g = gradients(&w, &m).unwrap();
        assert!(g.theta.iter().chain(&g.loadings).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn scalar_gradient_fixture() {
        let grid = vec![0.3, 0.7];
        let w = SmoothedWeights::from_grid_values(grid.clone(), 1, 1, &[2.0, 2.0], None).unwrap();
        let m = FactorModel::new(grid, 1, 1, 1, vec![0.0, 0.0], vec![1.0], 36.0).unwrap();
        let g = gradients(&w, &m).unwrap();
        assert_eq!(g.theta, vec![1.0, 1.0]);
        assert_eq!(g.loadings, vec![0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (w, m) = random_instance(11, 4, 3, 2, 4);
        let g = gradients(&w, &m).unwrap();
        let step = 1e-6;
        let fd = |theta: bool, idx: usize| {
            let mut plus = m.clone();
            let mut minus = m.clone();
            if theta {
                plus.theta_mut()[idx] += step;
                minus.theta_mut()[idx] -= step;
            } else {
                plus.loadings_mut()[idx] += step;
                minus.loadings_mut()[idx] -= step;
            }
            (log_pseudo_likelihood(&w, &plus).unwrap() - log_pseudo_likelihood(&w, &minus).unwrap()) / (2.0 * step)
        };
        for (idx, &an) in g.theta.iter().enumerate() {
            let num = fd(true, idx);
            assert!((an - num).abs() <= 1e-6 * an.abs().max(1.0), "theta {idx}: {an} vs {num}");
        }
        for (idx, &an) in g.loadings.iter().enumerate() {
            let num = fd(false, idx);
            assert!((an - num).abs() <= 1e-6 * an.abs().max(1.0), "a {idx}: {an} vs {num}");
        }
    }

    #[test]
    fn masking_removes_exactly_the_cell_terms() {
        let (w, m) = random_instance(3, 3, 3, 1, 3);
        let full = log_pseudo_likelihood(&w, &m).unwrap();
        let mut ys = vec![0.0; 27];
        for l in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    ys[(l * 3 + i) * 3 + j] = w.get(l, i, j).unwrap();
                }
            }
        }
        let mut mask = vec![true; 9];
        mask[4] = false; // cell (1, 1)
        let masked = SmoothedWeights::from_grid_values(m.grid().to_vec(), 3, 3, &ys, Some(mask)).unwrap();
        assert_eq!(masked.get(0, 1, 1), None);
        let cell: f64 = (0..3)
            .map(|l| {
                let x = m.x_unchecked(l, 1, 1);
                ys[(l * 3 + 1) * 3 + 1] * x - x.exp()
            })
            .sum();
        let got = log_pseudo_likelihood(&masked, &m).unwrap();
        assert!((full - got - cell).abs() < 1e-10);
    }

    #[test]
    fn precompute_matches_pointwise_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let triples: Vec<_> = (0..200)
            .map(|_| (rng.random_range(0..3), rng.random_range(0..2), rng.random_range(0.0..1.0)))
            .collect();
        let panel = EventPanel::from_triples(3, 2, triples).unwrap();
        let spec = KernelSpec::epanechnikov(0.1);
        let grid = uniform_grid(0.1, 0.9, 9);
        let w = precompute_weights(&panel, &spec, &grid).unwrap();
        for l in 0..9 {
            for i in 0..3 {
                for j in 0..2 {
                    let direct = crate::kernel::smoothed_rate(&panel, i, j, grid[l], &spec).unwrap();
                    assert_eq!(w.get(l, i, j).unwrap(), direct);
                }
            }
        }
        assert!(precompute_weights(&panel, &spec, &[0.05, 0.5]).is_err());
    }

    #[test]
    fn single_event_on_grid_point() {
        let spec = KernelSpec::epanechnikov(0.1);
        let grid = uniform_grid(0.1, 0.9, 9);
        let panel = EventPanel::from_triples(1, 1, vec![(0, 0, 0.1)]).unwrap();
        let w = precompute_weights(&panel, &spec, &grid).unwrap();
        assert!((w.get(0, 0, 0).unwrap() - 7.5).abs() < 1e-12);
        assert_eq!(w.get(1, 0, 0).unwrap(), 0.0);
        let empty = precompute_weights(&EventPanel::empty(2, 2), &spec, &grid).unwrap();
        assert!((0..9).all(|l| empty.get(l, 1, 1) == Some(0.0)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (w, _) = random_instance(1, 2, 2, 1, 3);
        let other = FactorModel::zeros(uniform_grid(0.1, 0.9, 3), 3, 2, 1, 36.0).unwrap();
        assert!(log_pseudo_likelihood(&w, &other).is_err());
        let other = FactorModel::zeros(uniform_grid(0.1, 0.9, 4), 2, 2, 1, 36.0).unwrap();
        assert!(gradients(&w, &other).is_err());
    }
}
