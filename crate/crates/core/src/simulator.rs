//! Ground-truth generation and event simulation by thinning.
//!
//! # Random streams
//!
//! All randomness comes from ChaCha8 seeded with the caller's 64-bit seed.
//! Each independent piece of work draws from its own stream of that seed:
//!
//! * stream `0` — the truth coefficients (in the order Θ(0), A, then B or S, W);
//! * stream `(i << 32) | (k + 1)` — unit `i`, cell/block `k` of a panel.
//!
//! Streams never overlap, so the output does not depend on how units are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_data::EventPanel;
use crate::factor_model::{dot, LinkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    S1,
    S2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    C1,
    C2,
    C3,
}

impl std::str::FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S1" | "s1" => Ok(Setting::S1),
            "S2" | "s2" => Ok(Setting::S2),
            _ => Err(Error::InvalidConfig(format!("unknown setting {s:?}"))),
        }
    }
}

impl std::str::FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C1" | "c1" => Ok(Case::C1),
            "C2" | "c2" => Ok(Case::C2),
            "C3" | "c3" => Ok(Case::C3),
            _ => Err(Error::InvalidConfig(format!("unknown case {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub setting: Setting,
    pub case: Case,
    pub n_units: usize,
    pub n_types: usize,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_period")]
    pub period: f64,
    pub seed: u64,
}

fn default_rank() -> usize {
    3
}
fn default_period() -> f64 {
    1.0
}

impl TruthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.n_units == 0 || self.n_types == 0 {
            return Err(Error::InvalidConfig("N, J and r must be positive".into()));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::InvalidConfig(format!("period {} must be positive", self.period)));
        }
        Ok(())
    }
}

/// Uniform half-ranges for (Θ(0), A, B-or-S) by case.
fn ranges(case: Case) -> (f64, f64, f64) {
    match case {
        Case::C1 => (1.8, 1.8, 0.0),
        Case::C2 => (1.6, 1.6, 3.6),
        Case::C3 => (1.7, 1.7, 1.2),
    }
}

/// How Θ*(t) evolves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "form")]
pub enum Dynamics {
    Constant,
    /// `Θ(t) = Θ(0) + B t`; `slope` is `N × r` row-major.
    Linear { slope: Vec<f64> },
    /// `Θ(t) = Θ(0) + S sin(2π(t − W)/T₀)`; both `N × r` row-major.
    Periodic {
        amplitude: Vec<f64>,
        phase: Vec<f64>,
        period: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueModel {
    pub n_units: usize,
    pub n_types: usize,
    pub rank: usize,
    /// `Θ(0)`, `N × r` row-major.
    pub theta0: Vec<f64>,
    /// `A*`, `J × r` row-major.
    pub loadings: Vec<f64>,
    pub dynamics: Dynamics,
    pub link: LinkSpec,
}

/// Draws the coefficient arrays of a simulation truth.
pub fn generate_truth(spec: &TruthSpec) -> Result<TrueModel> {
    spec.validate()?;
    let (n, jn, r) = (spec.n_units, spec.n_types, spec.rank);
    let (theta_range, load_range, dyn_range) = ranges(spec.case);
    let mut rng = stream_rng(spec.seed, 0);
    let theta0: Vec<f64> = (0..n * r).map(|_| uniform(&mut rng, theta_range)).collect();
    let loadings: Vec<f64> = (0..jn * r)
        .map(|idx| {
            let last_column = idx % r == r - 1;
            let range = if spec.setting == Setting::S2 && last_column {
                0.5 * load_range
            } else {
                load_range
            };
            uniform(&mut rng, range)
        })
        .collect();
    let dynamics = match spec.case {
        Case::C1 => Dynamics::Constant,
        Case::C2 => Dynamics::Linear {
            slope: (0..n * r).map(|_| uniform(&mut rng, dyn_range)).collect(),
        },
        Case::C3 => {
            let amplitude = (0..n * r).map(|_| uniform(&mut rng, dyn_range)).collect();
            let phase = (0..n * r).map(|_| rng.random_range(0.0..spec.period)).collect();
            Dynamics::Periodic {
                amplitude,
                phase,
                period: spec.period,
            }
        }
    };
    Ok(TrueModel {
        n_units: n,
        n_types: jn,
        rank: r,
        theta0,
        loadings,
        dynamics,
        link: LinkSpec::Exp,
    })
}

fn uniform(rng: &mut ChaCha8Rng, half_range: f64) -> f64 {
    rng.random_range(-half_range..half_range)
}

/// ChaCha8 generator for `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream index for unit `i` and cell or block `k`.
pub fn panel_stream(i: usize, k: usize) -> u64 {
    ((i as u64) << 32) | (k as u64 + 1)
}

impl TrueModel {
    /// `θ_i(t)` written into `out` (length `r`).
    pub fn theta_into(&self, i: usize, t: f64, out: &mut [f64]) {
        let r = self.rank;
        let base = &self.theta0[i * r..(i + 1) * r];
        match &self.dynamics {
            Dynamics::Constant => out.copy_from_slice(base),
            Dynamics::Linear { slope } => {
                for k in 0..r {
                    out[k] = base[k] + slope[i * r + k] * t;
                }
            }
            Dynamics::Periodic {
                amplitude,
                phase,
                period,
            } => {
                for k in 0..r {
                    let arg = 2.0 * std::f64::consts::PI * (t - phase[i * r + k]) / period;
                    out[k] = base[k] + amplitude[i * r + k] * arg.sin();
                }
            }
        }
    }

    pub fn theta_at(&self, i: usize, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rank];
        self.theta_into(i, t, &mut out);
        out
    }

    pub fn loading_row(&self, j: usize) -> &[f64] {
        &self.loadings[j * self.rank..(j + 1) * self.rank]
    }

    /// `X*_ij(t)`.
    pub fn x(&self, i: usize, j: usize, t: f64) -> f64 {
        dot(&self.theta_at(i, t), self.loading_row(j))
    }

    /// `X*(t)` as a row-major `N × J` vector.
    pub fn x_matrix(&self, t: f64) -> Vec<f64> {
        let mut theta = vec![0.0; self.rank];
        let mut out = Vec::with_capacity(self.n_units * self.n_types);
        for i in 0..self.n_units {
            self.theta_into(i, t, &mut theta);
            out.extend((0..self.n_types).map(|j| dot(&theta, self.loading_row(j))));
        }
        out
    }

    /// Mean rate `f(X*_ij(t))`.
    pub fn rate(&self, i: usize, j: usize, t: f64) -> f64 {
        self.link.f(self.x(i, j, t))
    }

    /// An upper bound on `sup_{t∈[0,1]} f(X*_ij(t))`.
    pub fn rate_envelope(&self, i: usize, j: usize) -> f64 {
        let r = self.rank;
        let a = self.loading_row(j);
        let base = dot(&self.theta0[i * r..(i + 1) * r], a);
        let x_max = match &self.dynamics {
            Dynamics::Constant => base,
            Dynamics::Linear { slope } => {
                let end = base + dot(&slope[i * r..(i + 1) * r], a);
                base.max(end)
            }
            Dynamics::Periodic { amplitude, .. } => {
                base + amplitude[i * r..(i + 1) * r]
                    .iter()
                    .zip(a)
                    .map(|(s, ak)| (s * ak).abs())
                    .sum::<f64>()
            }
        };
        self.link.f(x_max)
    }

    /// Checks `f(X*_ij(t)) ≤ envelope` on `n_points` evenly spaced times.
    pub fn check_envelopes(&self, n_points: usize) -> Result<()> {
        let mut theta = vec![0.0; self.rank];
        for i in 0..self.n_units {
            let envelopes: Vec<f64> = (0..self.n_types).map(|j| self.rate_envelope(i, j)).collect();
            for p in 0..n_points {
                let t = if n_points == 1 { 0.0 } else { p as f64 / (n_points - 1) as f64 };
                self.theta_into(i, t, &mut theta);
                for (j, &env) in envelopes.iter().enumerate() {
                    let rate = self.link.f(dot(&theta, self.loading_row(j)));
                    if rate > env * (1.0 + 1e-12) {
                        return Err(Error::EnvelopeViolation { rate, envelope: env, t });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Points used by the pre-simulation envelope check.
const ENVELOPE_CHECK_POINTS: usize = 101;

/// Homogeneous Poisson times on `[0, 1]` at `rate`, by exponential gaps.
fn homogeneous_times(rng: &mut ChaCha8Rng, rate: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let mut t = 0.0;
    loop {
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / rate;
        if t > 1.0 {
            return out;
        }
        out.push(t);
    }
}

fn acceptance(rate: f64, envelope: f64, t: f64) -> Result<f64> {
    let p = rate / envelope;
    if p > 1.0 + 1e-12 {
        return Err(Error::EnvelopeViolation { rate, envelope, t });
    }
    Ok(p)
}

/// Independent inhomogeneous Poisson processes, one per cell, by thinning.
pub fn simulate_independent(truth: &TrueModel, seed: u64) -> Result<EventPanel> {
    truth.check_envelopes(ENVELOPE_CHECK_POINTS)?;
    let (n, jn, r) = (truth.n_units, truth.n_types, truth.rank);
    let cells: Vec<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut theta = vec![0.0; r];
            (0..jn)
                .map(|j| {
                    let mut rng = stream_rng(seed, panel_stream(i, j));
                    let envelope = truth.rate_envelope(i, j);
                    let a = truth.loading_row(j);
                    let mut accepted = Vec::new();
                    for t in homogeneous_times(&mut rng, envelope) {
                        truth.theta_into(i, t, &mut theta);
                        let p = acceptance(truth.link.f(dot(&theta, a)), envelope, t)?;
                        if rng.random::<f64>() < p {
                            accepted.push(t);
                        }
                    }
                    Ok(accepted)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    EventPanel::from_cells(n, jn, cells.into_iter().flatten().collect())
}

/// A partition of the event types into blocks shared by all units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockStructure {
    pub n_types: usize,
    /// The dependence size `φ` the partition was built for.
    pub phi: f64,
    pub blocks: Vec<Vec<usize>>,
}

impl BlockStructure {
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n_types];
        for &j in self.blocks.iter().flatten() {
            if j >= self.n_types || seen[j] {
                return Err(Error::InvalidConfig(format!("block structure repeats or exceeds type {j}")));
            }
            seen[j] = true;
        }
        if seen.iter().any(|s| !s) || self.blocks.iter().any(Vec::is_empty) {
            return Err(Error::InvalidConfig("blocks must partition all types".into()));
        }
        Ok(())
    }

    pub fn max_block_size(&self) -> usize {
        self.blocks.iter().map(Vec::len).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BlockRule {
    PowerThird,
    Explicit { sizes: Vec<usize> },
}

/// `φ(J)`: the tabulated values for the four canonical `J`, else `⌈J^(1/3)⌉`.
pub fn phi_for(n_types: usize) -> usize {
    match n_types {
        100 => 5,
        200 => 6,
        400 => 7,
        800 => 9,
        j => {
            let c = (j as f64).cbrt();
            // guard cbrt rounding on perfect cubes
            let r = c.round();
            if (r * r * r - j as f64).abs() < 1e-9 {
                r as usize
            } else {
                c.ceil() as usize
            }
        }
    }
}

/// Contiguous blocks. `PowerThird` makes `⌊J/φ⌋` blocks whose sizes differ by at
/// most one, giving the `J mod W` extra types to the leading blocks.
pub fn make_blocks(n_types: usize, rule: &BlockRule) -> Result<BlockStructure> {
    let (sizes, phi) = match rule {
        BlockRule::PowerThird => {
            let phi = phi_for(n_types).max(1);
            let w = (n_types / phi).max(1);
            let (base, extra) = (n_types / w, n_types % w);
            ((0..w).map(|k| base + usize::from(k < extra)).collect::<Vec<_>>(), phi as f64)
        }
        BlockRule::Explicit { sizes } => {
            if sizes.iter().any(|&s| s == 0) || sizes.iter().sum::<usize>() != n_types {
                return Err(Error::InvalidConfig(format!(
                    "block sizes {sizes:?} do not partition {n_types} types"
                )));
            }
            let phi = sizes.iter().copied().max().unwrap_or(0) as f64;
            (sizes.clone(), phi)
        }
    };
    let mut start = 0;
    let blocks = sizes
        .iter()
        .map(|&s| {
            let b: Vec<usize> = (start..start + s).collect();
            start += s;
            b
        })
        .collect();
    Ok(BlockStructure { n_types, phi, blocks })
}

/// Blockwise-dependent processes: one shared candidate stream per unit and
/// block, thinned to `f_k(t) = max_{j∈B_k} f(X*_ij(t))`, then each member
/// type keeps each surviving time with probability `f(X*_ij(t)) / f_k(t)`.
pub fn simulate_dependent(truth: &TrueModel, blocks: &BlockStructure, seed: u64) -> Result<EventPanel> {
    blocks.validate()?;
    if blocks.n_types != truth.n_types {
        return Err(Error::DimensionMismatch(format!(
            "blocks cover {} types, truth has {}",
            blocks.n_types, truth.n_types
        )));
    }
    truth.check_envelopes(ENVELOPE_CHECK_POINTS)?;
    let (n, jn, r) = (truth.n_units, truth.n_types, truth.rank);
    let units: Vec<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cells = vec![Vec::new(); jn];
            let mut theta = vec![0.0; r];
            let mut rates = Vec::new();
            for (k, block) in blocks.blocks.iter().enumerate() {
                let mut rng = stream_rng(seed, panel_stream(i, k));
                let envelope = block
                    .iter()
                    .map(|&j| truth.rate_envelope(i, j))
                    .fold(0.0, f64::max);
                for t in homogeneous_times(&mut rng, envelope) {
                    truth.theta_into(i, t, &mut theta);
                    rates.clear();
                    rates.extend(block.iter().map(|&j| truth.link.f(dot(&theta, truth.loading_row(j)))));
                    let block_rate = rates.iter().copied().fold(0.0, f64::max);
                    let p = acceptance(block_rate, envelope, t)?;
                    if rng.random::<f64>() >= p {
                        continue;
                    }
                    for (&j, &rate) in block.iter().zip(&rates) {
                        if rng.random::<f64>() < rate / block_rate {
                            cells[j].push(t);
                        }
                    }
                }
            }
            Ok(cells)
        })
        .collect::<Result<Vec<_>>>()?;
    EventPanel::from_cells(n, jn, units.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(setting: Setting, case: Case) -> TruthSpec {
        TruthSpec {
            setting,
            case,
            n_units: 6,
            n_types: 5,
            rank: 3,
            period: 1.0,
            seed: 42,
        }
    }

    #[test]
    fn constant_case_is_constant() {
        let t = generate_truth(&spec(Setting::S1, Case::C1)).unwrap();
        assert_eq!(t.theta_at(2, 0.0), t.theta_at(2, 0.7));
        assert!(t.theta0.iter().chain(&t.loadings).all(|v| v.abs() <= 1.8));
    }

    #[test]
    fn periodic_case_has_period() {
        let t = generate_truth(&spec(Setting::S1, Case::C3)).unwrap();
        for (a, b) in t.theta_at(1, 0.13).iter().zip(t.theta_at(1, 1.13)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn s2_halves_last_loading_column() {
        let t = generate_truth(&TruthSpec {
            n_types: 400,
            ..spec(Setting::S2, Case::C1)
        })
        .unwrap();
        let last = (0..400).map(|j| t.loadings[j * 3 + 2].abs()).fold(0.0, f64::max);
        let others = (0..400)
            .flat_map(|j| [t.loadings[j * 3].abs(), t.loadings[j * 3 + 1].abs()])
            .fold(0.0, f64::max);
        assert!(last <= 0.9 && last > 0.8, "{last}");
        assert!(others <= 1.8 && others > 1.6, "{others}");
    }

    #[test]
    fn truth_is_deterministic() {
        let s = spec(Setting::S1, Case::C2);
        assert_eq!(generate_truth(&s).unwrap(), generate_truth(&s).unwrap());
    }

    #[test]
    fn envelope_fixtures() {
        let constant = TrueModel {
            n_units: 1,
            n_types: 1,
            rank: 1,
            theta0: vec![2.0],
            loadings: vec![1.0],
            dynamics: Dynamics::Constant,
            link: LinkSpec::Exp,
        };
        assert!((constant.rate_envelope(0, 0) - 2f64.exp()).abs() < 1e-12);
        let linear = TrueModel {
            theta0: vec![1.0],
            dynamics: Dynamics::Linear { slope: vec![2.0] },
            ..constant.clone()
        };
        assert!((linear.rate_envelope(0, 0) - 3f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn block_rules() {
        let b = make_blocks(100, &BlockRule::PowerThird).unwrap();
        assert_eq!(b.phi, 5.0);
        assert_eq!(b.blocks.len(), 20);
        assert!(b.blocks.iter().all(|blk| blk.len() == 5));

        let b = make_blocks(7, &BlockRule::Explicit { sizes: vec![3, 4] }).unwrap();
        assert_eq!(b.blocks, vec![vec![0, 1, 2], vec![3, 4, 5, 6]]);

        let b = make_blocks(800, &BlockRule::PowerThird).unwrap();
        assert_eq!(b.phi, 9.0);
        assert_eq!(b.blocks.len(), 88);
        assert_eq!(b.blocks.iter().map(Vec::len).sum::<usize>(), 800);
        assert!(b.blocks.iter().all(|blk| blk.len() == 9 || blk.len() == 10));
        b.validate().unwrap();

        assert!(make_blocks(7, &BlockRule::Explicit { sizes: vec![3, 3] }).is_err());
        assert_eq!(phi_for(27), 3);
        assert_eq!(phi_for(30), 4);
    }

    #[test]
    fn simulation_is_deterministic() {
        let t = generate_truth(&spec(Setting::S1, Case::C3)).unwrap();
        assert_eq!(simulate_independent(&t, 9).unwrap(), simulate_independent(&t, 9).unwrap());
        let b = make_blocks(5, &BlockRule::Explicit { sizes: vec![2, 3] }).unwrap();
        assert_eq!(simulate_dependent(&t, &b, 9).unwrap(), simulate_dependent(&t, &b, 9).unwrap());
    }

    #[test]
    fn truth_json_round_trip() {
        let t = generate_truth(&spec(Setting::S2, Case::C3)).unwrap();
        let back: TrueModel = serde_json::from_str(&t.to_json_string().unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
