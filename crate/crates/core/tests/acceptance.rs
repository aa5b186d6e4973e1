//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --release --test acceptance -- 5 6`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::process::Command;

use dynfactor::cli::{self, ReplicationRow, RunConfig, SimRegime, StudyConfig};
use dynfactor::estimator::{self, FitConfig, Init, Preconditioner};
use dynfactor::factor_model::{uniform_grid, FactorModel};
use dynfactor::kernel::{kernel_bias_bound_check, kernel_value};
use dynfactor::likelihood::{gradients, log_pseudo_likelihood, SmoothedWeights};
use dynfactor::numeric::integrate;
use dynfactor::rotation::{principal_angles, rotate_model, varimax};
use dynfactor::selection::Penalty;
use dynfactor::simulator::{self, BlockRule, Case, Setting, TruthSpec};
use dynfactor::KernelSpec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STUDY_SEED: u64 = 20240601;

// criterion 1
const DEP_C1_RANGE: (f64, f64) = (0.07, 0.14);
const DEP_C2_RANGE: (f64, f64) = (0.08, 0.16);
const BASELINE_C1_RANGE: (f64, f64) = (0.010, 0.022);
const MAIN_REPS: usize = 10;
// criterion 2
const INDEP_C1_RANGE: (f64, f64) = (0.050, 0.095);
// criterion 3
const ORDERING_REPS: usize = 5;
const ORDERING_RATIO: f64 = 5.0;
// criterion 4
const SELECTION_REPS: usize = 10;
const STRESS_REPS: usize = 5;
// criterion 5
const OPTIMIZER_INSTANCES: usize = 200;
const FD_MAX_REL_ERROR: f64 = 1e-5;
const FEASIBILITY_SLACK: f64 = 1e-12;
const MONOTONE_SLACK: f64 = 1e-12;
const ORACLE_SLACK: f64 = 1e-3;
const ORACLE_POINTS: usize = 161;
// criterion 6
const KERNEL_MASS_TOL: f64 = 1e-10;
const DENOMINATOR_TOL: f64 = 1e-12;
const BIAS_RATIO_RANGE: (f64, f64) = (3.5, 4.5);
// criterion 7
const MC_REPS: usize = 400;
const MC_SE_LIMIT: f64 = 4.0;
const ENVELOPE_POINTS: usize = 10_000;
const MIN_PAIR_COUNT: f64 = 1.0;
// criterion 8
const VARIMAX_RECOVERY_TOL: f64 = 1e-6;
const ROTATE_X_TOL: f64 = 1e-9;
const ANGLE_TOL: f64 = 1e-8;

type CellKey = (Setting, Case, SimRegime, usize, usize, usize, bool);

#[derive(Default)]
struct Studies {
    cache: HashMap<CellKey, Vec<ReplicationRow>>,
}

impl Studies {
    fn run(&mut self, key: CellKey) -> &[ReplicationRow] {
        self.cache.entry(key).or_insert_with(|| {
            let (setting, case, regime, n_units, n_types, reps, select_rank) = key;
            let cfg = RunConfig {
                seed: STUDY_SEED,
                select: cli::SelectOptions {
                    candidates: (1..=5).collect(),
                    penalty: match regime {
                        SimRegime::Dependent => Penalty::DependentDefault,
                        SimRegime::Independent => Penalty::IndependentDefault,
                    },
                },
                study: Some(StudyConfig {
                    setting,
                    case,
                    regime,
                    n_units,
                    n_types,
                    reps,
                    rank: 3,
                    select_rank,
                    seeds: None,
                }),
                ..RunConfig::from_json_str("{}").unwrap()
            };
            let rows = cli::replicate(&cfg).expect("study config is valid");
            for r in &rows {
                assert_eq!(r.status, "ok", "replication {} of {key:?} failed", r.rep);
            }
            rows
        })
    }

    fn means(&mut self, key: CellKey) -> (f64, f64) {
        let rows = self.run(key);
        let n = rows.len() as f64;
        (
            rows.iter().map(|r| r.kernel_error.unwrap()).sum::<f64>() / n,
            rows.iter().map(|r| r.baseline_error.unwrap()).sum::<f64>() / n,
        )
    }
}

fn within(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

fn report(id: u32, ok: bool, summary: &str) -> bool {
    println!("{} criterion {id}: {summary}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn criterion_1(s: &mut Studies) -> bool {
    let (k1, b1) = s.means((Setting::S1, Case::C1, SimRegime::Dependent, 200, 100, MAIN_REPS, false));
    let (k2, _) = s.means((Setting::S1, Case::C2, SimRegime::Dependent, 200, 100, MAIN_REPS, false));
    println!("  S1/C1 dependent kernel {k1:.4} in {DEP_C1_RANGE:?} (reference 0.1006)");
    println!("  S1/C2 dependent kernel {k2:.4} in {DEP_C2_RANGE:?} (reference 0.1174)");
    println!("  S1/C1 dependent baseline {b1:.4} in {BASELINE_C1_RANGE:?} (reference 0.0154)");
    let ok = within(k1, DEP_C1_RANGE) && within(k2, DEP_C2_RANGE) && within(b1, BASELINE_C1_RANGE);
    report(1, ok, &format!("dependent regime means over {MAIN_REPS} replications"))
}

fn criterion_2(s: &mut Studies) -> bool {
    let (k, _) = s.means((Setting::S1, Case::C1, SimRegime::Independent, 200, 100, MAIN_REPS, false));
    println!("  S1/C1 independent kernel {k:.4} in {INDEP_C1_RANGE:?} (reference 0.0714)");
    report(2, within(k, INDEP_C1_RANGE), "independent regime spot check")
}

fn criterion_3(s: &mut Studies) -> bool {
    let mut ok = true;
    for regime in [SimRegime::Dependent, SimRegime::Independent] {
        for setting in [Setting::S1, Setting::S2] {
            for case in [Case::C1, Case::C2, Case::C3] {
                // reuse the larger runs of criteria 1 and 2 where they exist
                let main = setting == Setting::S1
                    && (case == Case::C1 || (case == Case::C2 && regime == SimRegime::Dependent));
                let reps = if main { MAIN_REPS } else { ORDERING_REPS };
                let (k, b) = s.means((setting, case, regime, 200, 100, reps, false));
                let cell_ok = match case {
                    Case::C1 => b < k,
                    _ => b >= ORDERING_RATIO * k,
                };
                println!("  {setting:?}/{case:?} {regime:?}: kernel {k:.4} baseline {b:.4} ratio {:.2} {}", b / k, if cell_ok { "ok" } else { "violated" });
                ok &= cell_ok;
            }
        }
    }
    report(3, ok, &format!("baseline < kernel on C1, baseline >= {ORDERING_RATIO} x kernel on C2/C3"))
}

fn criterion_4(s: &mut Studies) -> bool {
    let rows = s.run((Setting::S1, Case::C1, SimRegime::Dependent, 400, 200, SELECTION_REPS, true)).to_vec();
    let picks: Vec<usize> = rows.iter().map(|r| r.selected_rank.unwrap()).collect();
    let correct = picks.iter().filter(|&&r| r == 3).count();
    println!("  S1/C1 dependent N=400 J=200: selected ranks {picks:?}, {correct}/{SELECTION_REPS} correct");
    let stress = s.run((Setting::S2, Case::C2, SimRegime::Dependent, 200, 100, STRESS_REPS, true)).to_vec();
    let stress_picks: Vec<usize> = stress.iter().map(|r| r.selected_rank.unwrap()).collect();
    let under = stress_picks.iter().filter(|&&r| r < 3).count();
    println!("  S2/C2 dependent N=200 J=100: selected ranks {stress_picks:?}, {under} under-selections");
    report(
        4,
        correct == SELECTION_REPS && under == 0,
        "rank selection with penalty 40 r N J h^1.99",
    )
}

fn random_instance(rng: &mut ChaCha8Rng) -> (FactorModel, SmoothedWeights) {
    let n = rng.random_range(1..=6);
    let j = rng.random_range(1..=6);
    let r = rng.random_range(1..=2);
    let q = rng.random_range(2..=5);
    let bound_m = rng.random_range(0.5..8.0);
    let grid = uniform_grid(0.1, 0.9, q);
    let theta = (0..q * n * r).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loadings = (0..j * r).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut model = FactorModel::new(grid.clone(), n, j, r, theta, loadings, bound_m).unwrap();
    model.project();
    let w: Vec<f64> = (0..q * n * j)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..6.0) })
        .collect();
    (model, SmoothedWeights::from_grid_values(grid, n, j, &w, None).unwrap())
}

/// Largest relative gap between the analytic gradient and central differences.
fn fd_error(model: &FactorModel, weights: &SmoothedWeights) -> f64 {
    let g = gradients(weights, model).unwrap();
    let mut worst = 0.0f64;
    let mut probe = |analytic: f64, set: &dyn Fn(&mut FactorModel, f64), x0: f64| {
        let step = 1e-6 * x0.abs().max(1.0);
        let mut m = model.clone();
        set(&mut m, x0 + step);
        let up = log_pseudo_likelihood(weights, &m).unwrap();
        set(&mut m, x0 - step);
        let down = log_pseudo_likelihood(weights, &m).unwrap();
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0));
    };
    for k in 0..model.theta().len() {
        probe(g.theta[k], &|m, v| m.theta_mut()[k] = v, model.theta()[k]);
    }
    for k in 0..model.loadings().len() {
        probe(g.loadings[k], &|m, v| m.loadings_mut()[k] = v, model.loadings()[k]);
    }
    worst
}

/// Grid search over `θ(t_1), θ(t_2) ∈ [−√M, √M]`, `a ∈ [0, √M]` for the
/// one-unit, one-type, rank-one problem (sign symmetry fixes `a ≥ 0`).
fn grid_oracle(y: [f64; 2], bound_m: f64) -> f64 {
    let s = bound_m.sqrt();
    let pts = |lo: f64| -> Vec<f64> {
        (0..ORACLE_POINTS)
            .map(|k| lo + (s - lo) * k as f64 / (ORACLE_POINTS - 1) as f64)
            .collect()
    };
    let (thetas, amps) = (pts(-s), pts(0.0));
    let term = |y: f64, x: f64| y * x - x.exp();
    amps.iter()
        .map(|&a| {
            let best = |y: f64| thetas.iter().map(|&t| term(y, t * a)).fold(f64::NEG_INFINITY, f64::max);
            best(y[0]) + best(y[1])
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn criterion_5() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_fd = 0.0f64;
    let mut failures: HashMap<&'static str, usize> = HashMap::new();
    let mut worst_oracle_gap = f64::NEG_INFINITY;
    for idx in 0..OPTIMIZER_INSTANCES {
        let (model, weights) = random_instance(&mut rng);
        worst_fd = worst_fd.max(fd_error(&model, &weights));

        let y = [rng.random_range(0.0..4.0), if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..4.0) }];
        let tiny_m = rng.random_range(0.5..3.0);
        let tiny_weights = SmoothedWeights::from_grid_values(uniform_grid(0.2, 0.8, 2), 1, 1, &y, None).unwrap();
        let oracle = grid_oracle(y, tiny_m);

        for pre in [Preconditioner::Identity, Preconditioner::Fisher] {
            let config = FitConfig {
                rank: model.rank(),
                bound_m: model.bound_m(),
                preconditioner: pre,
                init: Init::RandomUniform { seed: idx as u64 },
                ..FitConfig::default()
            };
            let mut infeasible = 0usize;
            let mut hook = |_: usize, m: &FactorModel| {
                if m.max_row_norm() > m.radius() + FEASIBILITY_SLACK {
                    infeasible += 1;
                }
            };
            let fit = estimator::fit_weights_with_hook(&weights, &config, Some(&mut hook)).unwrap();
            if infeasible > 0 || fit.model.max_row_norm() > fit.model.radius() + FEASIBILITY_SLACK {
                *failures.entry("feasibility").or_default() += 1;
            }
            if !fit.objective_trace.windows(2).all(|w| w[1] >= w[0] - MONOTONE_SLACK) {
                *failures.entry("monotone").or_default() += 1;
            }

            let tiny = FitConfig {
                rank: 1,
                bound_m: tiny_m,
                ..config
            };
            let tiny_fit = estimator::fit_weights(&tiny_weights, &tiny).unwrap();
            let gap = oracle - tiny_fit.objective();
            worst_oracle_gap = worst_oracle_gap.max(gap);
            if gap > ORACLE_SLACK {
                *failures.entry(if pre == Preconditioner::Identity { "oracle identity" } else { "oracle fisher" }).or_default() += 1;
            }
        }
    }
    if worst_fd > FD_MAX_REL_ERROR {
        failures.insert("gradient", 1);
    }
    println!("  worst gradient relative error {worst_fd:.2e} (limit {FD_MAX_REL_ERROR:e})");
    println!("  worst oracle shortfall {worst_oracle_gap:.2e} (limit {ORACLE_SLACK:e})");
    println!("  contract violations {failures:?}");
    report(
        5,
        failures.is_empty(),
        &format!("optimizer contracts on {OPTIMIZER_INSTANCES} instances, identity and fisher steps"),
    )
}

fn criterion_6() -> bool {
    let epan = KernelSpec::epanechnikov(0.1);
    let mass = integrate(|x| kernel_value(&epan, x), -1.0, 1.0, 1e-14).unwrap();
    let mass_ok = (mass - 1.0).abs() <= KERNEL_MASS_TOL;
    println!("  Epanechnikov mass {mass:.15}");

    let mut worst_d = 0.0f64;
    for h in [0.05, 0.0566, 0.1, 0.2] {
        let spec = KernelSpec::epanechnikov(h);
        for k in 0..=1000 {
            let t = h + (1.0 - 2.0 * h) * k as f64 / 1000.0;
            worst_d = worst_d.max((spec.denominator(t) - 1.0).abs());
        }
    }
    println!("  max |D(t) - 1| on [h, 1-h]: {worst_d:.2e}");

    let curve = |s: f64| (2.0 * PI * s).sin();
    let errors: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| {
            let (smoothed, exact) = kernel_bias_bound_check(curve, &KernelSpec::epanechnikov(h), 0.25).unwrap();
            (smoothed - exact).abs()
        })
        .collect();
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    // t = 0.5 is a zero of the curvature: the odd symmetry cancels the bias
    let (mid, mid_exact) = kernel_bias_bound_check(curve, &KernelSpec::epanechnikov(0.1), 0.5).unwrap();
    println!("  bias at t=0.25 for h = 0.2, 0.1, 0.05: {:.3e}, {:.3e}, {:.3e}, ratios {ratios:.3?}; bias at t=0.5 {:.1e}", errors[0], errors[1], errors[2], (mid - mid_exact).abs());
    let ok = mass_ok
        && worst_d <= DENOMINATOR_TOL
        && ratios.iter().all(|&r| within(r, BIAS_RATIO_RANGE))
        && (mid - mid_exact).abs() <= 1e-12;
    report(6, ok, "kernel mass, denominator and bias order")
}

fn criterion_7() -> bool {
    let (n_units, n_types) = (20, 10);
    let blocks = simulator::make_blocks(n_types, &BlockRule::PowerThird).unwrap();
    let mut worst_z = 0.0f64;
    let mut worst_corr = 0.0f64;
    let corr_limit = 4.0 / (MC_REPS as f64).sqrt();
    let mut envelope_ok = true;
    let mut pairs = 0usize;
    for (c, case) in [Case::C1, Case::C2, Case::C3].into_iter().enumerate() {
        let truth = simulator::generate_truth(&TruthSpec {
            setting: Setting::S1,
            case,
            n_units,
            n_types,
            rank: 3,
            period: 1.0,
            seed: 70 + c as u64,
        })
        .unwrap();
        envelope_ok &= truth.check_envelopes(ENVELOPE_POINTS).is_ok();
        let mut rng = ChaCha8Rng::seed_from_u64(700 + c as u64);
        let cells: Vec<(usize, usize)> = (0..20)
            .map(|_| (rng.random_range(0..n_units), rng.random_range(0..n_types)))
            .collect();
        for dependent in [false, true] {
            let counts: Vec<Vec<f64>> = (0..MC_REPS)
                .map(|k| {
                    let seed = 10_000 * (c as u64 + 1) + k as u64;
                    let panel = if dependent {
                        simulator::simulate_dependent(&truth, &blocks, seed).unwrap()
                    } else {
                        simulator::simulate_independent(&truth, seed).unwrap()
                    };
                    (0..n_units * n_types)
                        .map(|cell| panel.total_count(cell / n_types, cell % n_types).unwrap() as f64)
                        .collect()
                })
                .collect();
            for &(i, j) in &cells {
                let expected = integrate(|t| truth.rate(i, j, t), 0.0, 1.0, 1e-10).unwrap();
                let xs: Vec<f64> = counts.iter().map(|row| row[i * n_types + j]).collect();
                let mean = xs.iter().sum::<f64>() / MC_REPS as f64;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (MC_REPS - 1) as f64;
                let se = (var / MC_REPS as f64).sqrt().max(1e-12);
                worst_z = worst_z.max((mean - expected).abs() / se);
            }
            if dependent {
                // the 4/sqrt(n) bound leans on the normal approximation, so each
                // block is represented by its busiest type and pairs with an
                // expected count below MIN_PAIR_COUNT are skipped
                for i in 0..n_units {
                    let busiest: Vec<(usize, f64)> = blocks
                        .blocks
                        .iter()
                        .map(|b| {
                            b.iter()
                                .map(|&j| (j, integrate(|t| truth.rate(i, j, t), 0.0, 1.0, 1e-10).unwrap()))
                                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
                        })
                        .collect();
                    for a in 0..busiest.len() {
                        for b in a + 1..busiest.len() {
                            let ((ja, ea), (jb, eb)) = (busiest[a], busiest[b]);
                            if ea.min(eb) < MIN_PAIR_COUNT {
                                continue;
                            }
                            let xa: Vec<f64> = counts.iter().map(|row| row[i * n_types + ja]).collect();
                            let xb: Vec<f64> = counts.iter().map(|row| row[i * n_types + jb]).collect();
                            worst_corr = worst_corr.max(correlation(&xa, &xb).abs());
                            pairs += 1;
                        }
                    }
                }
            }
        }
    }
    println!("  worst |mean - integral| / SE over 120 cell checks: {worst_z:.2} (limit {MC_SE_LIMIT})");
    println!("  worst cross-block |corr| over {pairs} pairs: {worst_corr:.4} (limit {corr_limit:.4}); envelopes on {ENVELOPE_POINTS} points: {envelope_ok}");
    report(7, worst_z <= MC_SE_LIMIT && worst_corr < corr_limit && envelope_ok && pairs > 0, "simulator fidelity")
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Smallest max-entry gap between `a` and any signed column permutation of `b`.
fn signed_permutation_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let r = a.ncols();
    let mut best = f64::INFINITY;
    let mut perm: Vec<usize> = (0..r).collect();
    permutations(&mut perm, 0, &mut |p| {
        let gap = (0..r)
            .map(|k| {
                let (x, y) = (a.column(k), b.column(p[k]));
                (x - y).amax().min((x + y).amax())
            })
            .fold(0.0, f64::max);
        best = best.min(gap);
    });
    best
}

fn permutations(p: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, visit);
        p.swap(k, i);
    }
}

fn criterion_8() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_recovery = 0.0f64;
    for _ in 0..20 {
        let (jn, r) = (12, 3);
        let planted = DMatrix::from_fn(jn, r, |j, k| if j % r == k { rng.random_range(0.5..2.0) } else { 0.0 });
        let q = DMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let mixed = &planted * q;
        for kaiser in [false, true] {
            let v = varimax(&mixed, kaiser);
            worst_recovery = worst_recovery.max(signed_permutation_gap(&v.rotated, &planted));
        }
    }

    let mut worst_x = 0.0f64;
    for _ in 0..20 {
        let (n, jn, r, q) = (5, 4, 3, 4);
        let theta = (0..q * n * r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loadings = (0..jn * r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = FactorModel::new(uniform_grid(0.1, 0.9, q), n, jn, r, theta, loadings, 36.0).unwrap();
        let g = DMatrix::from_fn(r, r, |i, k| rng.random_range(-1.0..1.0) + if i == k { 2.0 } else { 0.0 });
        let rotated = rotate_model(&model, &g).unwrap();
        for l in 0..q {
            worst_x = worst_x.max((model.x_at_grid(l).unwrap() - rotated.x_at_grid(l).unwrap()).amax());
        }
    }

    let e = |k: usize| DMatrix::from_fn(4, 1, |j, _| f64::from(u8::from(j == k)));
    let cols = |a: DMatrix<f64>, b: DMatrix<f64>| DMatrix::from_columns(&[a.column(0).clone_owned(), b.column(0).clone_owned()]);
    let base = cols(e(0), e(1));
    let diag = cols(e(0), (e(1) + e(2)) / 2f64.sqrt());
    let fixtures = [
        (base.clone(), [0.0, 0.0]),
        (diag, [0.0, PI / 4.0]),
        (cols(e(2), e(3)), [PI / 2.0, PI / 2.0]),
    ];
    let mut worst_angle = 0.0f64;
    for (other, expected) in fixtures {
        let pa = principal_angles(&base, &other).unwrap();
        for (got, want) in pa.angles.iter().zip(expected) {
            worst_angle = worst_angle.max((got - want).abs());
        }
    }
    println!("  varimax recovery gap {worst_recovery:.2e}; rotate_model X gap {worst_x:.2e}; principal angle error {worst_angle:.2e}");
    report(
        8,
        worst_recovery <= VARIMAX_RECOVERY_TOL && worst_x <= ROTATE_X_TOL && worst_angle <= ANGLE_TOL,
        "rotation suite",
    )
}

fn criterion_9() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.json");
    fs::write(
        &config,
        r#"{"seed": 99, "fit": {"grid_size": 11}, "select": {"candidates": [2, 3, 4]},
            "study": {"setting": "S1", "case": "C3", "regime": "dependent", "n_units": 40, "n_types": 20, "reps": 4,
                      "select_rank": true}}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("t{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_dynfactor"))
            .args(["replicate-study", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(fs::read(out.join("replications.csv")).unwrap());
    }
    let rows = String::from_utf8_lossy(&outputs[0]).lines().count() - 1;
    report(9, outputs[0] == outputs[1] && rows == 4, "replicate-study CSV identical for 1 and 8 threads")
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let mut studies = Studies::default();
    let mut failed = Vec::new();
    let criteria: [(u32, &mut dyn FnMut(&mut Studies) -> bool); 9] = [
        (5, &mut |_| criterion_5()),
        (6, &mut |_| criterion_6()),
        (7, &mut |_| criterion_7()),
        (8, &mut |_| criterion_8()),
        (9, &mut |_| criterion_9()),
        (1, &mut criterion_1),
        (2, &mut criterion_2),
        (3, &mut criterion_3),
        (4, &mut criterion_4),
    ];
    for (id, check) in criteria {
        if run(id) && !check(&mut studies) {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
