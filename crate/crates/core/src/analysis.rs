//! Accuracy metrics against a known truth, trajectory variability and the
//! factor-score regression.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::factor_model::{dot, FactorModel};
use crate::numeric::pairwise_sum;
use crate::rotation::principal_angles;
use crate::simulator::TrueModel;

pub const DEFAULT_EVAL_POINTS: usize = 901;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// `(1 − 2h) Σ_k ‖X*(t_k) − X̂(t_k)‖²_F / (n_eval N J)`.
    pub mse_integral: f64,
    pub n_eval: usize,
    pub eval_times: Vec<f64>,
    /// `‖X*(t_k) − X̂(t_k)‖²_F / (N J)` at each evaluation time.
    pub per_point: Vec<f64>,
}

/// Evaluation times: `n_eval` evenly spaced points of `[h, 1 − h]`.
pub fn evaluation_times(h: f64, n_eval: usize) -> Vec<f64> {
    if n_eval == 1 {
        return vec![0.5];
    }
    (0..n_eval)
        .map(|k| h + (1.0 - 2.0 * h) * k as f64 / (n_eval - 1) as f64)
        .collect()
}

/// Integrated squared error of the fitted `X̂` (linearly interpolated
/// between grid points, flat beyond them) against the exact truth.
pub fn estimation_error(truth: &TrueModel, fitted: &FactorModel, h: f64, n_eval: usize) -> Result<ErrorReport> {
    if truth.n_units != fitted.n_units() || truth.n_types != fitted.n_types() {
        return Err(Error::DimensionMismatch(format!(
            "truth is {}x{}, fitted model is {}x{}",
            truth.n_units,
            truth.n_types,
            fitted.n_units(),
            fitted.n_types()
        )));
    }
    if n_eval == 0 || !(h >= 0.0 && h < 0.5) {
        return Err(Error::InvalidConfig(format!("need n_eval > 0 and h in [0, 1/2), got {n_eval}, {h}")));
    }
    let (n, jn) = (truth.n_units, truth.n_types);
    let times = evaluation_times(h, n_eval);
    let per_point: Vec<f64> = times
        .par_iter()
        .map(|&t| squared_error_at(truth, fitted, t) / (n * jn) as f64)
        .collect();
    let mse_integral = (1.0 - 2.0 * h) * pairwise_sum(&per_point) / n_eval as f64;
    Ok(ErrorReport {
        mse_integral,
        n_eval,
        eval_times: times,
        per_point,
    })
}

fn squared_error_at(truth: &TrueModel, fitted: &FactorModel, t: f64) -> f64 {
    let (r_true, r_fit) = (truth.rank, fitted.rank());
    let mut theta_true = vec![0.0; r_true];
    let mut theta_fit = vec![0.0; r_fit];
    let grid = fitted.grid();
    let (l, w) = locate(grid, t);
    let rows: Vec<f64> = (0..truth.n_units)
        .map(|i| {
            truth.theta_into(i, t, &mut theta_true);
            let lo = fitted.theta_row(l, i);
            if w == 0.0 {
                theta_fit.copy_from_slice(lo);
            } else {
                let hi = fitted.theta_row(l + 1, i);
                for k in 0..r_fit {
                    theta_fit[k] = lo[k] + w * (hi[k] - lo[k]);
                }
            }
            (0..truth.n_types)
                .map(|j| {
                    let d = dot(&theta_true, truth.loading_row(j)) - dot(&theta_fit, fitted.loading_row(j));
                    d * d
                })
                .sum()
        })
        .collect();
    pairwise_sum(&rows)
}

/// Interval index and weight for linear interpolation on `grid`, flat outside.
fn locate(grid: &[f64], t: f64) -> (usize, f64) {
    let q = grid.len();
    if q == 1 || t <= grid[0] {
        return (0, 0.0);
    }
    if t >= grid[q - 1] {
        return (q - 1, 0.0);
    }
    let l = grid.partition_point(|&g| g <= t) - 1;
    (l, (t - grid[l]) / (grid[l + 1] - grid[l]))
}

/// `‖sin ∠(A*, Â)‖_F`.
pub fn loading_error(true_loadings: &DMatrix<f64>, fitted_loadings: &DMatrix<f64>) -> Result<f64> {
    Ok(principal_angles(true_loadings, fitted_loadings)?.sin_frobenius())
}

/// `Σ_l |X̂_ij(t_{l+1}) − X̂_ij(t_l)|`.
pub fn total_variation(fitted: &FactorModel, i: usize, j: usize) -> Result<f64> {
    if i >= fitted.n_units() {
        return Err(Error::IndexOutOfRange {
            what: "unit",
            index: i,
            limit: fitted.n_units(),
        });
    }
    if j >= fitted.n_types() {
        return Err(Error::IndexOutOfRange {
            what: "type",
            index: j,
            limit: fitted.n_types(),
        });
    }
    let xs: Vec<f64> = (0..fitted.n_grid()).map(|l| fitted.x_unchecked(l, i, j)).collect();
    Ok(xs.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

/// Sample quantile with linear interpolation between order statistics
/// (`(n − 1)p` positioning). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupQuartiles {
    pub group: String,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub n_values: usize,
}

/// Quartiles of total variation pooled over all units and the types of each
/// group. Groups come back in label order.
pub fn variability_quartiles(fitted: &FactorModel, groups: &BTreeMap<usize, String>) -> Result<Vec<GroupQuartiles>> {
    if groups.is_empty() {
        return Err(Error::EmptyGroup("no types assigned to any group".into()));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (&j, label) in groups {
        if j >= fitted.n_types() {
            return Err(Error::IndexOutOfRange {
                what: "type",
                index: j,
                limit: fitted.n_types(),
            });
        }
        members.entry(label.as_str()).or_default().push(j);
    }
    members
        .into_iter()
        .map(|(label, types)| {
            let mut values = Vec::with_capacity(types.len() * fitted.n_units());
            for &j in &types {
                for i in 0..fitted.n_units() {
                    values.push(total_variation(fitted, i, j)?);
                }
            }
            if values.is_empty() {
                return Err(Error::EmptyGroup(label.to_string()));
            }
            values.sort_by(f64::total_cmp);
            Ok(GroupQuartiles {
                group: label.to_string(),
                q25: quantile_sorted(&values, 0.25),
                q50: quantile_sorted(&values, 0.5),
                q75: quantile_sorted(&values, 0.75),
                n_values: values.len(),
            })
        })
        .collect()
}

/// Long-format CSV `quartile,position,group,value`; within each quartile the
/// groups are sorted by descending value.
pub fn quartiles_csv(rows: &[GroupQuartiles]) -> String {
    let mut out = String::from("quartile,position,group,value\n");
    let pick: [(&str, fn(&GroupQuartiles) -> f64); 3] = [("q25", |g| g.q25), ("q50", |g| g.q50), ("q75", |g| g.q75)];
    for (name, get) in pick {
        let mut sorted: Vec<&GroupQuartiles> = rows.iter().collect();
        sorted.sort_by(|a, b| get(b).total_cmp(&get(a)).then_with(|| a.group.cmp(&b.group)));
        for (pos, g) in sorted.iter().enumerate() {
            let _ = writeln!(out, "{name},{},{},{}", pos + 1, csv_field(&g.group), get(g));
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Unit-level covariates for the factor-score regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demographics {
    pub age: f64,
    pub income1: f64,
    pub income2: f64,
    pub child: f64,
}

pub const DEMOGRAPHIC_TERMS: [&str; 6] = ["age", "income1", "income2", "child", "income1:child", "income2:child"];

/// Design with columns `DEMOGRAPHIC_TERMS` (no intercept) for units that
/// have demographics; returns the design and the kept unit indices.
pub fn demographic_design(rows: &[Option<Demographics>]) -> (DMatrix<f64>, Vec<usize>) {
    let kept: Vec<usize> = rows.iter().enumerate().filter_map(|(i, d)| d.map(|_| i)).collect();
    let design = DMatrix::from_fn(kept.len(), DEMOGRAPHIC_TERMS.len(), |row, col| {
        let d = rows[kept[row]].expect("kept rows have demographics");
        match col {
            0 => d.age,
            1 => d.income1,
            2 => d.income2,
            3 => d.child,
            4 => d.income1 * d.child,
            _ => d.income2 * d.child,
        }
    });
    (design, kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    /// Intercept first, then one per design column.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub n_obs: usize,
    pub residuals: Vec<f64>,
}

/// OLS of `response` on an intercept plus `design` by Householder QR, with
/// two-sided t-test p-values. `R² = 1 − RSS/TSS`, taken as 0 when the
/// response is constant.
pub fn factor_regression(response: &[f64], design: &DMatrix<f64>) -> Result<Regression> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::DimensionMismatch(format!("{} responses for {n} design rows", response.len())));
    }
    let k = p + 1;
    if n < k {
        return Err(Error::RankDeficient(format!("{n} observations for {k} coefficients")));
    }
    let x = DMatrix::from_fn(n, k, |i, c| if c == 0 { 1.0 } else { design[(i, c - 1)] });
    let y = DVector::from_column_slice(response);
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|c| x.column(c).norm()).fold(0.0, f64::max);
    if (0..k).any(|c| r[(c, c)].abs() <= 1e-10 * scale) {
        return Err(Error::RankDeficient("design columns are linearly dependent".into()));
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))?;
    let residuals = &y - &x * &beta;
    let rss = residuals.norm_squared();
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
    let df = (n - k) as f64;
    let sigma2 = if df > 0.0 { rss / df } else { f64::NAN };
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("R is singular".into()))?;
    let std_errors: Vec<f64> = (0..k).map(|c| (sigma2 * r_inv.row(c).norm_squared()).sqrt()).collect();
    let t_values: Vec<f64> = beta.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = t_values
        .iter()
        .zip(beta.iter())
        .map(|(&t, &b)| {
            if df == 0.0 {
                f64::NAN
            } else if t.is_nan() {
                if b == 0.0 { 1.0 } else { 0.0 }
            } else {
                let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
                (2.0 * dist.sf(t.abs())).min(1.0)
            }
        })
        .collect();
    Ok(Regression {
        coefficients: beta.iter().copied().collect(),
        std_errors,
        t_values,
        p_values,
        r_squared,
        n_obs: n,
        residuals: residuals.iter().copied().collect(),
    })
}

/// CSV with one row per term: `term,estimate,std_error,t_value,p_value`,
/// followed by `r_squared` and `n_obs` rows.
pub fn regression_csv(reg: &Regression, terms: &[&str]) -> String {
    let mut out = String::from("term,estimate,std_error,t_value,p_value\n");
    let names = std::iter::once("intercept").chain(terms.iter().copied());
    for (c, name) in names.enumerate().take(reg.coefficients.len()) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(name),
            reg.coefficients[c],
            reg.std_errors[c],
            reg.t_values[c],
            reg.p_values[c]
        );
    }
    let _ = writeln!(out, "r_squared,{},,,", reg.r_squared);
    let _ = writeln!(out, "n_obs,{},,,", reg.n_obs);
    out
}
