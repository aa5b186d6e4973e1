//! Projected gradient ascent on the discretized pseudo-likelihood.
//!
//! Every iteration moves all rows `θ_i(t_l)` and `a_j` along the gradient with
//! one shared step `ρ`, projects each row back into the `√M` ball and accepts
//! the step once the Armijo condition holds. The step found at one iteration,
//! enlarged by `1/β`, seeds the search at the next.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_data::EventPanel;
use crate::factor_model::{project_row_in_place, uniform_grid, validate_bound, FactorModel};
use crate::kernel::KernelSpec;
use crate::likelihood::{self, precompute_weights, Gradients, SmoothedWeights};
use crate::numeric::pairwise_sum;

/// Additive floor inside the log of the warm start.
pub const WARM_START_FLOOR: f64 = 1e-3;

/// Largest step the line search will try.
const MAX_STEP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Regime {
    Independent,
    Dependent { phi: f64 },
}

/// Data-driven bandwidth rule: `c((N∧J)/log²(N∧J))^(-0.2)` for independent
/// event types, `c(J/φ)^(-0.19)` under blockwise dependence, clipped to
/// `(0, 0.25]`. `c` defaults to 0.1.
pub fn auto_bandwidth(n_units: usize, n_types: usize, regime: Regime) -> f64 {
    auto_bandwidth_with(n_units, n_types, regime, 0.1)
}

pub fn auto_bandwidth_with(n_units: usize, n_types: usize, regime: Regime, prefactor: f64) -> f64 {
    let h = match regime {
        Regime::Independent => {
            let m = n_units.min(n_types).max(2) as f64;
            let ln = m.ln();
            prefactor * (m / (ln * ln)).powf(-0.2)
        }
        Regime::Dependent { phi } => prefactor * (n_types as f64 / phi.max(1.0)).powf(-0.19),
    };
    h.min(0.25)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    SvdWarmStart,
    RandomUniform { seed: u64 },
}

/// Scaling applied to the gradient before the projected step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// Plain gradient.
    Identity,
    /// Each row's gradient divided by the trace of its curvature block
    /// (`Σ_j f(X_ij) a_j a_jᵀ` for `θ_i(t_l)`, `Σ_{i,l} f(X_ij) θθᵀ` for
    /// `a_j`). A row-wise scalar metric keeps the radial projection exact.
    RowCurvature,
    /// Each row's gradient multiplied by the inverse of its curvature block.
    /// Falls back to `RowCurvature`, then `Identity`, on iterations where it
    /// finds no ascent.
    RowBlock,
    /// Gradient multiplied by the inverse of the damped Fisher information,
    /// by conjugate gradients. Falls back like `RowBlock`.
    Fisher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub rank: usize,
    pub bandwidth: Bandwidth,
    /// Regime used when `bandwidth` is `"auto"`.
    pub regime: Regime,
    pub bandwidth_prefactor: f64,
    pub grid_size: usize,
    pub bound_m: f64,
    pub max_iters: usize,
    /// Stop once the relative objective improvement falls below this.
    pub tol: f64,
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    pub preconditioner: Preconditioner,
    pub init: Init,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rank: 3,
            bandwidth: Bandwidth::Auto(AutoTag::Auto),
            regime: Regime::Independent,
            bandwidth_prefactor: 0.1,
            grid_size: 31,
            bound_m: 36.0,
            max_iters: 2000,
            tol: 1e-7,
            initial_step: 1e-2,
            shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 50,
            preconditioner: Preconditioner::Fisher,
            init: Init::SvdWarmStart,
            threads: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.rank == 0 {
            return bad("rank must be positive".into());
        }
        if self.grid_size < 2 {
            return bad(format!("grid_size must be >= 2, got {}", self.grid_size));
        }
        validate_bound(self.bound_m)?;
        if self.max_iters == 0 || self.max_backtracks == 0 {
            return bad("max_iters and max_backtracks must be positive".into());
        }
        if !(self.tol > 0.0 && self.initial_step > 0.0 && self.bandwidth_prefactor > 0.0) {
            return bad("tol, initial_step and bandwidth_prefactor must be positive".into());
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad(format!("shrink {} not in (0, 1)", self.shrink));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad(format!("armijo {} not in (0, 1)", self.armijo));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h < 0.5) {
                return bad(format!("bandwidth {h} not in (0, 1/2)"));
            }
        }
        if let Regime::Dependent { phi } = self.regime {
            if !(phi >= 1.0) {
                return bad(format!("phi must be >= 1, got {phi}"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        Ok(())
    }

    /// The bandwidth this config resolves to for an `N × J` panel.
    pub fn resolve_bandwidth(&self, n_units: usize, n_types: usize) -> f64 {
        match self.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Auto(_) => auto_bandwidth_with(n_units, n_types, self.regime, self.bandwidth_prefactor),
        }
    }

    /// Epanechnikov kernel at the resolved bandwidth.
    pub fn kernel_for(&self, n_units: usize, n_types: usize) -> KernelSpec {
        KernelSpec::epanechnikov(self.resolve_bandwidth(n_units, n_types))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: FactorModel,
    /// Objective at the initial point followed by one value per accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the line search could not improve the objective at all.
    pub stalled: bool,
    /// Norm of the projected-gradient residual at the final point.
    pub final_gradient_norm: f64,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }
}

/// Runs `f` on a dedicated pool when a thread count is given.
pub(crate) fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
    }
}

/// Starting point for the optimizer.
pub fn initialize(weights: &SmoothedWeights, config: &FitConfig) -> Result<FactorModel> {
    let (n, jn, r) = (weights.n_units(), weights.n_types(), config.rank);
    let grid = weights.grid().to_vec();
    let q = grid.len();
    let radius = config.bound_m.sqrt();
    let (theta, loadings) = match config.init {
        Init::RandomUniform { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = (0..q * n * r).map(|_| rng.random_range(-0.5..0.5)).collect();
            let loadings = (0..jn * r).map(|_| rng.random_range(-0.5..0.5)).collect();
            (theta, loadings)
        }
        Init::SvdWarmStart => {
            let (scores, loads) = log_svd_factors(weights, r)?;
            let theta = (0..q).flat_map(|_| scores.iter().copied()).collect();
            (theta, loads)
        }
    };
    let mut model = if weights.kernel().is_none() && q == 1 {
        FactorModel::new_static(n, jn, r, theta, loadings, config.bound_m)?
    } else {
        FactorModel::new(grid, n, jn, r, theta, loadings, config.bound_m)?
    };
    debug_assert!((model.radius() - radius).abs() < 1e-15);
    model.project();
    Ok(model)
}

/// Rank-`r` SVD of `log(ȳ + δ)`, split as `UΣ^½` and `VΣ^½` (flat row-major).
fn log_svd_factors(weights: &SmoothedWeights, r: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, jn) = (weights.n_units(), weights.n_types());
    let avg = weights.time_average();
    let logs: Vec<f64> = avg.iter().map(|v| (v + WARM_START_FLOOR).ln()).collect();
    let observed: Vec<f64> = logs.iter().copied().filter(|v| v.is_finite()).collect();
    let fill = if observed.is_empty() {
        WARM_START_FLOOR.ln()
    } else {
        pairwise_sum(&observed) / observed.len() as f64
    };
    let z = DMatrix::from_fn(n, jn, |i, j| {
        let v = logs[i * jn + j];
        if v.is_finite() {
            v
        } else {
            fill
        }
    });
    let svd = z.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut scores = vec![0.0; n * r];
    let mut loads = vec![0.0; jn * r];
    for (k, &idx) in order.iter().take(r).enumerate() {
        let s = svd.singular_values[idx].sqrt();
        for i in 0..n {
            scores[i * r + k] = u[(i, idx)] * s;
        }
        for j in 0..jn {
            loads[j * r + k] = vt[(idx, j)] * s;
        }
    }
    Ok((scores, loads))
}

/// Line-search and stopping knobs shared by the dynamic and static fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AscentOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    pub preconditioner: Preconditioner,
}

impl From<&FitConfig> for AscentOptions {
    fn from(c: &FitConfig) -> Self {
        Self {
            max_iters: c.max_iters,
            tol: c.tol,
            initial_step: c.initial_step,
            shrink: c.shrink,
            armijo: c.armijo,
            max_backtracks: c.max_backtracks,
            preconditioner: c.preconditioner,
        }
    }
}

/// Called after every accepted iteration with the iteration number and the
/// current model; used by tests to audit feasibility.
pub type IterationHook<'a> = &'a mut (dyn FnMut(usize, &FactorModel) + Send);

/// Smallest curvature scale used when dividing.
const CURVATURE_FLOOR: f64 = 1e-12;

/// Search direction: the gradient, optionally scaled row by row.
fn direction(grad: &Gradients, r: usize, preconditioner: Preconditioner) -> (Vec<f64>, Vec<f64>) {
    let rr = r * r;
    let scaled = |g: &[f64], c: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(g.len());
        for (row, block) in g.chunks(r).zip(c.chunks(rr)) {
            match preconditioner {
                Preconditioner::Identity => out.extend_from_slice(row),
                Preconditioner::RowCurvature => {
                    let trace: f64 = (0..r).map(|k| block[k * r + k]).sum();
                    out.extend(row.iter().map(|v| v / trace.max(CURVATURE_FLOOR)));
                }
                Preconditioner::RowBlock | Preconditioner::Fisher => out.extend(solve_block(block, row, r)),
            }
        }
        out
    };
    (
        scaled(&grad.theta, &grad.theta_curvature),
        scaled(&grad.loadings, &grad.loading_curvature),
    )
}

/// Levenberg damping on the Fisher system, relative to its diagonal blocks.
const FISHER_DAMPING: f64 = 1e-4;
const CG_MAX_ITERS: usize = 60;
const CG_REL_TOL: f64 = 1e-2;

fn dot_pair(a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>)) -> f64 {
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
    d(&a.0, &b.0) + d(&a.1, &b.1)
}

fn axpy_pair(y: &mut (Vec<f64>, Vec<f64>), alpha: f64, x: &(Vec<f64>, Vec<f64>)) {
    y.0.iter_mut().zip(&x.0).for_each(|(u, v)| *u += alpha * v);
    y.1.iter_mut().zip(&x.1).for_each(|(u, v)| *u += alpha * v);
}

/// Approximately solves `(F + μD) d = g`, `D` the diagonal blocks of `F`, by
/// conjugate gradients preconditioned with `D`.
fn fisher_direction(weights: &SmoothedWeights, model: &FactorModel, grad: &Gradients) -> (Vec<f64>, Vec<f64>) {
    let r = model.rank();
    let rr = r * r;
    let rates = likelihood::fitted_rates(weights, model);
    let block_apply = |v: &(Vec<f64>, Vec<f64>)| -> (Vec<f64>, Vec<f64>) {
        let apply = |x: &[f64], c: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(x.len());
            for (row, block) in x.chunks(r).zip(c.chunks(rr)) {
                for a in 0..r {
                    out.push((0..r).map(|b| block[a * r + b] * row[b]).sum::<f64>());
                }
            }
            out
        };
        (apply(&v.0, &grad.theta_curvature), apply(&v.1, &grad.loading_curvature))
    };
    let precondition = |v: &(Vec<f64>, Vec<f64>)| direction(
        &Gradients {
            theta: v.0.clone(),
            loadings: v.1.clone(),
            theta_curvature: grad.theta_curvature.clone(),
            loading_curvature: grad.loading_curvature.clone(),
        },
        r,
        Preconditioner::RowBlock,
    );
    let operator = |v: &(Vec<f64>, Vec<f64>)| {
        let mut out = likelihood::fisher_product(model, &rates, &v.0, &v.1);
        let diag = block_apply(v);
        axpy_pair(&mut out, FISHER_DAMPING, &diag);
        out
    };
    let b = (grad.theta.clone(), grad.loadings.clone());
    let mut x = (vec![0.0; b.0.len()], vec![0.0; b.1.len()]);
    let mut res = b.clone();
    let mut z = precondition(&res);
    let mut p = z.clone();
    let mut rz = dot_pair(&res, &z);
    let target = CG_REL_TOL * CG_REL_TOL * rz;
    for _ in 0..CG_MAX_ITERS {
        if !(rz > target) {
            break;
        }
        let ap = operator(&p);
        let pap = dot_pair(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        axpy_pair(&mut x, alpha, &p);
        axpy_pair(&mut res, -alpha, &ap);
        z = precondition(&res);
        let rz_next = dot_pair(&res, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.0.iter_mut().zip(&z.0).for_each(|(pv, zv)| *pv = zv + beta * *pv);
        p.1.iter_mut().zip(&z.1).for_each(|(pv, zv)| *pv = zv + beta * *pv);
    }
    if x.0.iter().chain(&x.1).all(|v| *v == 0.0) {
        return precondition(&b);
    }
    x
}

/// `(H + λI)⁻¹ g` for a small symmetric PSD block `H`, with `λ` a tiny
/// multiple of its trace so the solve never breaks down.
fn solve_block(block: &[f64], g: &[f64], r: usize) -> Vec<f64> {
    let trace: f64 = (0..r).map(|k| block[k * r + k]).sum();
    let ridge = (trace * 1e-8).max(CURVATURE_FLOOR);
    let h = DMatrix::from_fn(r, r, |a, b| block[a * r + b] + if a == b { ridge } else { 0.0 });
    match h.cholesky() {
        Some(ch) => ch.solve(&nalgebra::DVector::from_column_slice(g)).iter().copied().collect(),
        None => g.iter().map(|v| v / trace.max(CURVATURE_FLOOR)).collect(),
    }
}

fn projected_step(model: &FactorModel, grad: &Gradients, step: f64) -> FactorModel {
    projected_move(model, (&grad.theta, &grad.loadings), step)
}

fn projected_move(model: &FactorModel, dir: (&[f64], &[f64]), step: f64) -> FactorModel {
    let radius = model.radius();
    let r = model.rank();
    let mut theta: Vec<f64> = model.theta().iter().zip(dir.0).map(|(x, g)| x + step * g).collect();
    let mut loadings: Vec<f64> = model
        .loadings()
        .iter()
        .zip(dir.1)
        .map(|(x, g)| x + step * g)
        .collect();
    theta.chunks_mut(r).for_each(|row| project_row_in_place(row, radius));
    loadings.chunks_mut(r).for_each(|row| project_row_in_place(row, radius));
    model.with_parameters(theta, loadings)
}

/// `⟨g, new − old⟩`.
fn directional_gain(grad: &Gradients, new: &FactorModel, old: &FactorModel) -> f64 {
    let d = |g: &[f64], x: &[f64], y: &[f64]| g.iter().zip(x.iter().zip(y)).map(|(g, (u, v))| g * (u - v)).sum::<f64>();
    pairwise_sum(&[
        d(&grad.theta, new.theta(), old.theta()),
        d(&grad.loadings, new.loadings(), old.loadings()),
    ])
}

fn squared_distance(a: &FactorModel, b: &FactorModel) -> f64 {
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    pairwise_sum(&[d(a.theta(), b.theta()), d(a.loadings(), b.loadings())])
}

/// `‖P(x + ρg) − x‖ / ρ` at a small `ρ`: zero exactly at critical points.
pub fn projected_gradient_norm(model: &FactorModel, grad: &Gradients, step: f64) -> f64 {
    squared_distance(&projected_step(model, grad, step), model).sqrt() / step
}

type Candidate = (FactorModel, f64, Gradients, f64);

/// Directions tried in order until one yields an improving step.
fn fallback_chain(p: Preconditioner) -> &'static [Preconditioner] {
    use Preconditioner::*;
    match p {
        Fisher => &[Fisher, RowBlock, RowCurvature, Identity],
        RowBlock => &[RowBlock, RowCurvature, Identity],
        RowCurvature => &[RowCurvature, Identity],
        Identity => &[Identity],
    }
}

/// Largest step tried: the full step for the Fisher direction.
fn max_step(p: Preconditioner) -> f64 {
    match p {
        Preconditioner::Fisher => 1.0,
        _ => MAX_STEP,
    }
}

/// Backtracks from `step` along `dir`. Returns the first point meeting the
/// Armijo condition, else the best improving point tried, with its step.
fn line_search(
    weights: &SmoothedWeights,
    model: &FactorModel,
    value: f64,
    grad: &Gradients,
    dir: &(Vec<f64>, Vec<f64>),
    step: f64,
    opts: &AscentOptions,
) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    let mut trial = step;
    for _ in 0..opts.max_backtracks {
        let candidate = projected_move(model, (&dir.0, &dir.1), trial);
        let gain = directional_gain(grad, &candidate, model);
        if !(gain > 0.0) {
            break;
        }
        let (cand_value, cand_grad) = likelihood::evaluate(weights, &candidate, true);
        if cand_value.is_finite() {
            // Armijo along the projection arc; equals c ρ ‖g‖² for an
            // unpreconditioned step that stays inside the ball.
            if cand_value >= value + opts.armijo * gain {
                return Some((candidate, cand_value, cand_grad.expect("gradient"), trial));
            }
            if cand_value > value && best.as_ref().is_none_or(|b| cand_value > b.1) {
                best = Some((candidate, cand_value, cand_grad.expect("gradient"), trial));
            }
        }
        trial *= opts.shrink;
    }
    best
}

pub(crate) fn ascend(
    weights: &SmoothedWeights,
    start: FactorModel,
    opts: AscentOptions,
    mut hook: Option<IterationHook<'_>>,
) -> Result<FitResult> {
    likelihood::check_compatible(weights, &start)?;
    let mut model = start;
    let (mut value, grad) = likelihood::evaluate(weights, &model, true);
    let mut grad = grad.expect("gradient requested");
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0, value });
    }
    let mut trace = vec![value];
    let mut steps: Vec<f64> = fallback_chain(opts.preconditioner)
        .iter()
        .map(|&p| opts.initial_step.min(max_step(p)))
        .collect();
    if opts.preconditioner == Preconditioner::Fisher {
        steps[0] = 1.0;
    }
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let chain = fallback_chain(opts.preconditioner);
        let threshold = opts.tol * value.abs().max(1.0);
        // A direction whose gain is below the stopping threshold hands over to
        // the rest of the chain, so convergence is only declared once every
        // direction stalls. This matters near saddles where a curvature block
        // degenerates and the preconditioned step collapses.
        let mut best: Option<(usize, Candidate)> = None;
        for (slot, &p) in chain.iter().enumerate() {
            let dir = if p == Preconditioner::Fisher {
                fisher_direction(weights, &model, &grad)
            } else {
                direction(&grad, model.rank(), p)
            };
            if let Some(hit) = line_search(weights, &model, value, &grad, &dir, steps[slot], &opts) {
                let decisive = hit.1 - value > threshold;
                if best.as_ref().is_none_or(|(_, b)| hit.1 > b.1) {
                    best = Some((slot, hit));
                }
                if decisive {
                    break;
                }
            }
        }
        let Some((slot, (next, next_value, next_grad, used))) = best else {
            stalled = true;
            converged = true;
            break;
        };
        steps[slot] = (used / opts.shrink).min(max_step(chain[slot]));
        if !next_value.is_finite() {
            return Err(Error::NonFiniteObjective {
                iteration: iterations + 1,
                value: next_value,
            });
        }
        let improvement = next_value - value;
        model = next;
        value = next_value;
        grad = next_grad;
        iterations += 1;
        trace.push(value);
        if let Some(h) = hook.as_mut() {
            h(iterations, &model);
        }
        if improvement <= threshold {
            converged = true;
            break;
        }
    }

    let final_gradient_norm = projected_gradient_norm(&model, &grad, 1e-6);
    Ok(FitResult {
        model,
        objective_trace: trace,
        iterations,
        converged,
        stalled,
        final_gradient_norm,
    })
}

/// `q` evenly spaced grid points spanning the kernel's evaluation interval.
pub fn fit_grid(kernel: &KernelSpec, grid_size: usize) -> Result<Vec<f64>> {
    kernel.validate()?;
    if grid_size < 2 {
        return Err(Error::InvalidConfig(format!("grid_size must be >= 2, got {grid_size}")));
    }
    let (lo, hi) = kernel.evaluation_interval();
    let grid = uniform_grid(lo, hi, grid_size);
    grid.iter().try_for_each(|&t| kernel.check_in_interval(t))?;
    Ok(grid)
}

/// Fits the dynamic factor model with `q` grid points spanning the kernel's
/// evaluation interval.
pub fn fit(panel: &EventPanel, kernel: &KernelSpec, config: &FitConfig) -> Result<FitResult> {
    fit_with_hook(panel, kernel, config, None)
}

pub fn fit_with_hook(
    panel: &EventPanel,
    kernel: &KernelSpec,
    config: &FitConfig,
    hook: Option<IterationHook<'_>>,
) -> Result<FitResult> {
    config.validate()?;
    let grid = fit_grid(kernel, config.grid_size)?;
    with_threads(config.threads, || {
        let weights = precompute_weights(panel, kernel, &grid)?;
        fit_weights_inner(&weights, config, hook)
    })
}

/// Fits against precomputed weights (shared across candidate ranks).
pub fn fit_weights(weights: &SmoothedWeights, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    with_threads(config.threads, || fit_weights_inner(weights, config, None))
}

pub fn fit_weights_with_hook(
    weights: &SmoothedWeights,
    config: &FitConfig,
    hook: Option<IterationHook<'_>>,
) -> Result<FitResult> {
    config.validate()?;
    with_threads(config.threads, || fit_weights_inner(weights, config, hook))
}

fn fit_weights_inner(weights: &SmoothedWeights, config: &FitConfig, hook: Option<IterationHook<'_>>) -> Result<FitResult> {
    let start = initialize(weights, config)?;
    ascend(weights, start, config.into(), hook)
}

/// Continues optimizing from a given model.
pub fn fit_from(weights: &SmoothedWeights, start: FactorModel, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let mut start = start;
    start.project();
    with_threads(config.threads, || ascend(weights, start, config.into(), None))
}
