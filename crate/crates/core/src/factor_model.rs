//! Parameter container for the dynamic factor model `X(t) = Θ(t) Aᵀ`.
//!
//! Θ is stored on a grid `t_1 < ... < t_q` as a flat `q × N × r` array and the
//! loadings as a flat `J × r` array. Every row (each `θ_i(t_l)` and each `a_j`)
//! lives in the Euclidean ball of radius `√M`, so `|X_ij(t_l)| ≤ M`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest admissible bound `M`; beyond this `exp` overflows `f64`.
pub const MAX_BOUND_M: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkSpec {
    #[default]
    Exp,
}

impl LinkSpec {
    #[inline]
    pub fn f(self, x: f64) -> f64 {
        match self {
            LinkSpec::Exp => x.exp(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            LinkSpec::Exp => x.exp(),
        }
    }

    #[inline]
    pub fn log_f(self, x: f64) -> f64 {
        match self {
            LinkSpec::Exp => x,
        }
    }

    /// `f'(x)/f(x)`, the factor multiplying `y` in the score.
    #[inline]
    pub fn score_ratio(self, _x: f64) -> f64 {
        match self {
            LinkSpec::Exp => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    grid: Vec<f64>,
    n_units: usize,
    n_types: usize,
    rank: usize,
    theta: Vec<f64>,
    loadings: Vec<f64>,
    link: LinkSpec,
    bound_m: f64,
    is_static: bool,
}

/// `q` evenly spaced points on `[lo, hi]`, endpoints included.
pub fn uniform_grid(lo: f64, hi: f64, q: usize) -> Vec<f64> {
    match q {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (q - 1) as f64;
            (0..q)
                .map(|l| if l == q - 1 { hi } else { lo + step * l as f64 })
                .collect()
        }
    }
}

/// Euclidean projection of `v` onto the ball of radius `radius`.
pub fn project_row(v: &[f64], radius: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    project_row_in_place(&mut out, radius);
    out
}

/// Norms within a few ulps of the radius are left alone, which makes the
/// projection exactly idempotent despite rounding in the rescale.
#[inline]
pub fn project_row_in_place(v: &mut [f64], radius: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > radius * (1.0 + 4.0 * f64::EPSILON) {
        let s = radius / norm;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl FactorModel {
    /// Builds a model, validating dimensions and the grid. Rows are not
    /// projected; use [`FactorModel::project`] or [`FactorModel::check_feasible`].
    pub fn new(
        grid: Vec<f64>,
        n_units: usize,
        n_types: usize,
        rank: usize,
        theta: Vec<f64>,
        loadings: Vec<f64>,
        bound_m: f64,
    ) -> Result<Self> {
        Self::build(grid, n_units, n_types, rank, theta, loadings, bound_m, false)
    }

    /// A static model: a single sentinel grid time and `X(t)` constant.
    pub fn new_static(
        n_units: usize,
        n_types: usize,
        rank: usize,
        theta: Vec<f64>,
        loadings: Vec<f64>,
        bound_m: f64,
    ) -> Result<Self> {
        Self::build(vec![0.5], n_units, n_types, rank, theta, loadings, bound_m, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        grid: Vec<f64>,
        n_units: usize,
        n_types: usize,
        rank: usize,
        theta: Vec<f64>,
        loadings: Vec<f64>,
        bound_m: f64,
        is_static: bool,
    ) -> Result<Self> {
        let q = grid.len();
        if is_static && q != 1 {
            return Err(Error::DimensionMismatch("static model needs exactly one grid time".into()));
        }
        if !is_static && q < 2 {
            return Err(Error::DimensionMismatch(format!("grid needs q >= 2 points, got {q}")));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidConfig("grid must be finite and strictly increasing".into()));
        }
        if rank == 0 || n_units == 0 || n_types == 0 {
            return Err(Error::DimensionMismatch("N, J and r must be positive".into()));
        }
        if theta.len() != q * n_units * rank {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} entries, expected q*N*r = {}",
                theta.len(),
                q * n_units * rank
            )));
        }
        if loadings.len() != n_types * rank {
            return Err(Error::DimensionMismatch(format!(
                "loadings has {} entries, expected J*r = {}",
                loadings.len(),
                n_types * rank
            )));
        }
        validate_bound(bound_m)?;
        Ok(Self {
            grid,
            n_units,
            n_types,
            rank,
            theta,
            loadings,
            link: LinkSpec::Exp,
            bound_m,
            is_static,
        })
    }

    pub fn zeros(grid: Vec<f64>, n_units: usize, n_types: usize, rank: usize, bound_m: f64) -> Result<Self> {
        let q = grid.len();
        Self::new(
            grid,
            n_units,
            n_types,
            rank,
            vec![0.0; q * n_units * rank],
            vec![0.0; n_types * rank],
            bound_m,
        )
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    pub fn n_grid(&self) -> usize {
        self.grid.len()
    }
    pub fn n_units(&self) -> usize {
        self.n_units
    }
    pub fn n_types(&self) -> usize {
        self.n_types
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn link(&self) -> LinkSpec {
        self.link
    }
    pub fn bound_m(&self) -> f64 {
        self.bound_m
    }
    pub fn is_static(&self) -> bool {
        self.is_static
    }
    /// Row radius `√M`.
    pub fn radius(&self) -> f64 {
        self.bound_m.sqrt()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
    pub fn loadings(&self) -> &[f64] {
        &self.loadings
    }
    pub fn loadings_mut(&mut self) -> &mut [f64] {
        &mut self.loadings
    }

    #[inline]
    pub fn theta_row(&self, l: usize, i: usize) -> &[f64] {
        let start = (l * self.n_units + i) * self.rank;
        &self.theta[start..start + self.rank]
    }

    #[inline]
    pub fn loading_row(&self, j: usize) -> &[f64] {
        &self.loadings[j * self.rank..(j + 1) * self.rank]
    }

    /// Θ(t_l) as an `N × r` matrix.
    pub fn theta_at(&self, l: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_units, self.rank, |i, k| self.theta_row(l, i)[k])
    }

    /// A as a `J × r` matrix.
    pub fn loadings_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_types, self.rank, |j, k| self.loading_row(j)[k])
    }

    #[inline]
    pub(crate) fn x_unchecked(&self, l: usize, i: usize, j: usize) -> f64 {
        dot(self.theta_row(l, i), self.loading_row(j))
    }

    /// `X(t_l) = Θ(t_l) Aᵀ`.
    pub fn x_at_grid(&self, l: usize) -> Result<DMatrix<f64>> {
        if l >= self.n_grid() {
            return Err(Error::IndexOutOfRange {
                what: "grid index",
                index: l,
                limit: self.n_grid(),
            });
        }
        Ok(DMatrix::from_fn(self.n_units, self.n_types, |i, j| self.x_unchecked(l, i, j)))
    }

    /// Piecewise-linear interpolation of `X_ij` at `t`, flat outside the grid.
    pub fn x_interp(&self, i: usize, j: usize, t: f64) -> f64 {
        let (l, w) = self.locate(t);
        let x0 = self.x_unchecked(l, i, j);
        if w == 0.0 {
            x0
        } else {
            let x1 = self.x_unchecked(l + 1, i, j);
            x0 + w * (x1 - x0)
        }
    }

    /// Interpolated `X(t)` as an `N × J` matrix.
    pub fn x_interp_matrix(&self, t: f64) -> DMatrix<f64> {
        let (l, w) = self.locate(t);
        let x0 = self.x_at_grid(l).expect("located index is valid");
        if w == 0.0 {
            x0
        } else {
            let x1 = self.x_at_grid(l + 1).expect("located index is valid");
            &x0 + (x1 - &x0) * w
        }
    }

    /// Interval index and weight: `t` lies between `grid[l]` and `grid[l+1]`
    /// with fraction `w`, clamped to the grid ends.
    fn locate(&self, t: f64) -> (usize, f64) {
        let g = &self.grid;
        let q = g.len();
        if q == 1 || t <= g[0] {
            return (0, 0.0);
        }
        if t >= g[q - 1] {
            return (q - 1, 0.0);
        }
        let l = g.partition_point(|&s| s <= t) - 1;
        let w = (t - g[l]) / (g[l + 1] - g[l]);
        (l, w)
    }

    /// Projects every row into the `√M` ball.
    pub fn project(&mut self) {
        let radius = self.radius();
        let r = self.rank;
        self.theta.chunks_mut(r).for_each(|row| project_row_in_place(row, radius));
        self.loadings.chunks_mut(r).for_each(|row| project_row_in_place(row, radius));
    }

    /// Largest row norm over all `θ_i(t_l)` and `a_j`.
    pub fn max_row_norm(&self) -> f64 {
        self.theta
            .chunks(self.rank)
            .chain(self.loadings.chunks(self.rank))
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Errors if any row leaves the `√M` ball by more than `tol`.
    pub fn check_feasible(&self, tol: f64) -> Result<()> {
        let norm = self.max_row_norm();
        if norm <= self.radius() + tol && self.theta.iter().chain(&self.loadings).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "row norm {norm} exceeds sqrt(M) = {}",
                self.radius()
            )))
        }
    }

    /// Same shape, new parameters.
    pub(crate) fn with_parameters(&self, theta: Vec<f64>, loadings: Vec<f64>) -> Self {
        debug_assert_eq!(theta.len(), self.theta.len());
        debug_assert_eq!(loadings.len(), self.loadings.len());
        Self {
            theta,
            loadings,
            grid: self.grid.clone(),
            ..*self
        }
    }

    pub fn to_json(&self) -> ModelJson {
        ModelJson {
            grid: self.grid.clone(),
            theta: (0..self.n_grid())
                .map(|l| (0..self.n_units).map(|i| self.theta_row(l, i).to_vec()).collect())
                .collect(),
            loadings: (0..self.n_types).map(|j| self.loading_row(j).to_vec()).collect(),
            link: self.link,
            bound_m: self.bound_m,
            is_static: self.is_static,
        }
    }

    pub fn from_json(doc: ModelJson) -> Result<Self> {
        let n_units = doc.theta.first().map_or(0, Vec::len);
        let rank = doc.loadings.first().map_or(0, Vec::len);
        let n_types = doc.loadings.len();
        if doc.theta.iter().any(|slab| slab.len() != n_units)
            || doc.theta.iter().flatten().any(|row| row.len() != rank)
            || doc.loadings.iter().any(|row| row.len() != rank)
        {
            return Err(Error::DimensionMismatch("ragged theta or loadings".into()));
        }
        let theta = doc.theta.into_iter().flatten().flatten().collect();
        let loadings = doc.loadings.into_iter().flatten().collect();
        Self::build(doc.grid, n_units, n_types, rank, theta, loadings, doc.bound_m, doc.is_static)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = serde_json::to_string_pretty(&self.to_json())?;
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(serde_json::from_str(&s)?)
    }
}

pub(crate) fn validate_bound(bound_m: f64) -> Result<()> {
    if bound_m > 0.0 && bound_m <= MAX_BOUND_M {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "bound M = {bound_m} must lie in (0, {MAX_BOUND_M}]"
        )))
    }
}

/// On-disk model document. Floats are written in shortest round-trip form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub grid: Vec<f64>,
    /// `[q][N][r]`
    pub theta: Vec<Vec<Vec<f64>>>,
    /// `[J][r]`
    pub loadings: Vec<Vec<f64>>,
    pub link: LinkSpec,
    pub bound_m: f64,
    #[serde(rename = "static", default, skip_serializing_if = "std::ops::Not::not")]
    pub is_static: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(theta: f64, a: f64) -> FactorModel {
        FactorModel::new(vec![0.1, 0.9], 1, 1, 1, vec![theta, theta], vec![a], 36.0).unwrap()
    }

    #[test]
    fn x_at_grid_fixtures() {
        assert_eq!(scalar_model(2.0, 3.0).x_at_grid(0).unwrap()[(0, 0)], 6.0);
        assert_eq!(scalar_model(0.0, 3.0).x_at_grid(1).unwrap()[(0, 0)], 0.0);
        let m = FactorModel::new(vec![0.1, 0.9], 1, 1, 2, vec![1.0, -1.0, 1.0, -1.0], vec![0.5, 0.5], 36.0)
            .unwrap();
        assert_eq!(m.x_at_grid(0).unwrap()[(0, 0)], 0.0);
        assert!(m.x_at_grid(2).is_err());
    }

    #[test]
    fn x_interp_fixtures() {
        // X = 1 at t=0.2 and 3 at t=0.4
        let m = FactorModel::new(vec![0.2, 0.4], 1, 1, 1, vec![1.0, 3.0], vec![1.0], 36.0).unwrap();
        assert_eq!(m.x_interp(0, 0, 0.2), 1.0);
        assert_eq!(m.x_interp(0, 0, 0.4), 3.0);
        assert!((m.x_interp(0, 0, 0.3) - 2.0).abs() < 1e-12);
        assert_eq!(m.x_interp(0, 0, 0.0), 1.0);
        assert_eq!(m.x_interp(0, 0, 1.0), 3.0);
    }

    #[test]
    fn projection_fixtures() {
        let p = project_row(&[3.0, 4.0], 1.0);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(project_row(&[0.1, 0.2], 6.0), vec![0.1, 0.2]);
        assert_eq!(project_row(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn grid_construction() {
        let g = uniform_grid(0.1, 0.9, 31);
        assert_eq!(g.len(), 31);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[30], 0.9);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn construction_errors() {
        assert!(FactorModel::new(vec![0.5], 1, 1, 1, vec![0.0], vec![0.0], 36.0).is_err());
        assert!(FactorModel::new(vec![0.5, 0.4], 1, 1, 1, vec![0.0; 2], vec![0.0], 36.0).is_err());
        assert!(FactorModel::new(vec![0.1, 0.9], 1, 1, 1, vec![0.0; 3], vec![0.0], 36.0).is_err());
        assert!(FactorModel::new(vec![0.1, 0.9], 1, 1, 1, vec![0.0; 2], vec![0.0], 800.0).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = FactorModel::new(
            vec![0.1, 0.5, 0.9],
            2,
            1,
            2,
            vec![0.1, 1.0 / 3.0, -2.5, 1e-17, 0.7, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            vec![std::f64::consts::PI, -0.1],
            36.0,
        )
        .unwrap();
        let s = serde_json::to_string(&m.to_json()).unwrap();
        let back = FactorModel::from_json(serde_json::from_str(&s).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(s.contains("\"link\":\"exp\""));
        assert!(s.contains("\"bound_m\""));
    }

    #[test]
    fn static_model_is_constant() {
        let m = FactorModel::new_static(1, 1, 1, vec![2.0], vec![0.5], 36.0).unwrap();
        assert_eq!(m.x_interp(0, 0, 0.0), 1.0);
        assert_eq!(m.x_interp(0, 0, 0.7), 1.0);
        let s = serde_json::to_string(&m.to_json()).unwrap();
        assert!(s.contains("\"static\":true"));
        assert!(FactorModel::from_json(serde_json::from_str(&s).unwrap()).unwrap().is_static());
    }
}
