//! Rank selection by information criterion `IC(r) = −2L + v(N, J, r)`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, fit_grid, FitConfig, FitResult, Init};
use crate::event_data::EventPanel;
use crate::factor_model::FactorModel;
use crate::kernel::KernelSpec;
use crate::likelihood::{precompute_weights, SmoothedWeights};

/// ICs closer than this count as tied; ties go to the smaller rank.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Relative slack when checking that `L` does not drop as the rank grows.
const NESTING_TOLERANCE: f64 = 1e-6;

/// Random restarts tried when a larger rank fits worse than a smaller one.
const RESTARTS: u64 = 2;

/// Penalty `v(N, J, r) = c r N J h^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Penalty {
    /// `c = 40`, `p = 1.99`, for blockwise-dependent event types.
    DependentDefault,
    /// `c = 4000`, `p = 3.99`, for independent event types.
    IndependentDefault,
    Custom { c: f64, p: f64 },
}

impl Penalty {
    pub fn constants(self) -> (f64, f64) {
        match self {
            Penalty::DependentDefault => (40.0, 1.99),
            Penalty::IndependentDefault => (4000.0, 3.99),
            Penalty::Custom { c, p } => (c, p),
        }
    }

    pub fn value(self, n_units: usize, n_types: usize, rank: usize, h: f64) -> f64 {
        let (c, p) = self.constants();
        c * rank as f64 * n_units as f64 * n_types as f64 * h.powf(p)
    }
}

/// `−2 L + v(N, J, r)` for a fit on the discretized objective.
pub fn information_criterion(fit: &FitResult, penalty: Penalty, n_units: usize, n_types: usize, h: f64) -> f64 {
    -2.0 * fit.objective() + penalty.value(n_units, n_types, fit.model.rank(), h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    #[serde(default = "default_candidates")]
    pub candidates: Vec<usize>,
    pub penalty: Penalty,
    /// Template; its rank is replaced by each candidate.
    #[serde(default)]
    pub fit: FitConfig,
}

fn default_candidates() -> Vec<usize> {
    (1..=5).collect()
}

impl SelectConfig {
    pub fn new(penalty: Penalty, fit: FitConfig) -> Self {
        Self {
            candidates: default_candidates(),
            penalty,
            fit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidConfig("candidate set is empty".into()));
        }
        if self.candidates.contains(&0) || self.candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "candidates must be positive and strictly ascending, got {:?}",
                self.candidates
            )));
        }
        let (c, p) = self.penalty.constants();
        if !(c >= 0.0 && c.is_finite() && p.is_finite()) {
            return Err(Error::InvalidConfig(format!("penalty constants ({c}, {p}) invalid")));
        }
        self.fit.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRow {
    pub rank: usize,
    pub penalty: f64,
    /// `Ok((L, IC))` or the failure message.
    pub outcome: std::result::Result<(f64, f64), String>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub rank: usize,
    pub table: Vec<CandidateRow>,
    /// Successful fits by candidate, in candidate order.
    pub fits: Vec<Option<FitResult>>,
}

impl Selection {
    /// `r,logL,penalty,IC`; failed candidates leave `logL` and `IC` empty.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("r,logL,penalty,IC\n");
        for row in &self.table {
            match &row.outcome {
                Ok((l, ic)) => {
                    let _ = writeln!(out, "{},{l},{},{ic}", row.rank, row.penalty);
                }
                Err(_) => {
                    let _ = writeln!(out, "{},,{},", row.rank, row.penalty);
                }
            }
        }
        out
    }

    pub fn fit_for(&self, rank: usize) -> Option<&FitResult> {
        self.table
            .iter()
            .position(|row| row.rank == rank)
            .and_then(|k| self.fits[k].as_ref())
    }
}

/// Fits every candidate rank on shared smoothed weights and returns the
/// minimizer of IC.
pub fn select_rank(panel: &EventPanel, kernel: &KernelSpec, config: &SelectConfig) -> Result<Selection> {
    config.validate()?;
    let grid = fit_grid(kernel, config.fit.grid_size)?;
    estimator::with_threads(config.fit.threads, || {
        let weights = precompute_weights(panel, kernel, &grid)?;
        select_rank_weights(&weights, kernel.bandwidth, config)
    })
}

/// [`select_rank`] against precomputed weights smoothed at bandwidth `h`.
pub fn select_rank_weights(weights: &SmoothedWeights, h: f64, config: &SelectConfig) -> Result<Selection> {
    config.validate()?;
    let (n, jn) = (weights.n_units(), weights.n_types());
    let single = FitConfig {
        threads: None,
        ..config.fit.clone()
    };
    let results: Vec<Result<FitResult>> = config
        .candidates
        .par_iter()
        .map(|&rank| estimator::fit_weights(weights, &FitConfig { rank, ..single.clone() }))
        .collect();
    let (mut fits, mut errors): (Vec<Option<FitResult>>, Vec<Option<String>>) = results
        .into_iter()
        .map(|r| match r {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        })
        .unzip();
    enforce_nesting(weights, &single, &config.candidates, &mut fits, &mut errors);

    let table: Vec<CandidateRow> = config
        .candidates
        .iter()
        .zip(&fits)
        .zip(&errors)
        .map(|((&rank, fit), err)| CandidateRow {
            rank,
            penalty: config.penalty.value(n, jn, rank, h),
            outcome: match fit {
                Some(f) => Ok((f.objective(), information_criterion(f, config.penalty, n, jn, h))),
                None => Err(err.clone().unwrap_or_else(|| "fit failed".into())),
            },
        })
        .collect();
    let rank = argmin_ic(&table).ok_or(Error::AllCandidatesFailed)?;
    Ok(Selection { rank, table, fits })
}

/// Smallest rank whose IC is within [`TIE_TOLERANCE`] of the minimum.
fn argmin_ic(table: &[CandidateRow]) -> Option<usize> {
    let ok = || table.iter().filter_map(|row| row.outcome.as_ref().ok().map(|(_, ic)| (row.rank, *ic)));
    let best = ok().map(|(_, ic)| ic).fold(f64::INFINITY, f64::min);
    ok().find(|&(_, ic)| ic <= best + TIE_TOLERANCE).map(|(r, _)| r)
}

/// Larger ranks nest smaller ones, so a larger-rank fit ending below a
/// smaller-rank one is an optimizer failure. Such candidates are refitted
/// from the smaller solution padded with a small extra component and from
/// random starts, keeping the best.
fn enforce_nesting(
    weights: &SmoothedWeights,
    config: &FitConfig,
    candidates: &[usize],
    fits: &mut [Option<FitResult>],
    errors: &mut [Option<String>],
) {
    for k in 1..candidates.len() {
        let Some((donor, donor_value)) = (0..k)
            .filter_map(|p| fits[p].as_ref().map(|f| (p, f.objective())))
            .max_by(|a, b| a.1.total_cmp(&b.1))
        else {
            continue;
        };
        let current = fits[k].as_ref().map(|f| f.objective());
        let short = current.is_none_or(|v| v < donor_value - NESTING_TOLERANCE * donor_value.abs());
        if !short {
            continue;
        }
        let rank = candidates[k];
        let cfg = FitConfig { rank, ..config.clone() };
        let mut best = fits[k].take();
        let padded = fits[donor]
            .as_ref()
            .and_then(|f| pad_rank(&f.model, rank, k as u64).ok())
            .and_then(|start| estimator::fit_from(weights, start, &cfg).ok());
        let restarts = (0..RESTARTS).filter_map(|s| {
            let init = Init::RandomUniform { seed: s + 1 };
            estimator::fit_weights(weights, &FitConfig { init, ..cfg.clone() }).ok()
        });
        for candidate in padded.into_iter().chain(restarts) {
            if best.as_ref().is_none_or(|b| candidate.objective() > b.objective()) {
                best = Some(candidate);
            }
        }
        if best.is_some() {
            errors[k] = None;
        }
        fits[k] = best;
    }
}

/// Embeds a rank-`r₀` model in rank `rank` with small random extra columns.
fn pad_rank(model: &FactorModel, rank: usize, seed: u64) -> Result<FactorModel> {
    let r0 = model.rank();
    if rank < r0 {
        return Err(Error::InvalidConfig(format!("cannot pad rank {r0} down to {rank}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widen = |flat: &[f64]| -> Vec<f64> {
        flat.chunks(r0)
            .flat_map(|row| {
                let extra: Vec<f64> = (r0..rank).map(|_| rng.random_range(-1e-3..1e-3)).collect();
                row.iter().copied().chain(extra).collect::<Vec<_>>()
            })
            .collect()
    };
    let theta = widen(model.theta());
    let loadings = widen(model.loadings());
    let (n, jn, m) = (model.n_units(), model.n_types(), model.bound_m());
    if model.is_static() {
        FactorModel::new_static(n, jn, rank, theta, loadings, m)
    } else {
        FactorModel::new(model.grid().to_vec(), n, jn, rank, theta, loadings, m)
    }
}
