//! Factor aggregation, varimax rotation and principal angles.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::factor_model::FactorModel;

/// Relative threshold on `|R_kk|` below which a QR factor counts as singular.
const RANK_TOL: f64 = 1e-10;

const VARIMAX_MAX_SWEEPS: usize = 500;
const VARIMAX_TOL: f64 = 1e-10;
/// A sweep must also leave every pair angle below this before stopping.
const VARIMAX_ANGLE_TOL: f64 = 1e-9;

/// Time average `Θ̄` of the factors (`N × r`): trapezoid rule over the grid,
/// divided by the grid span. A static model returns its single slab.
pub fn aggregate_factors(model: &FactorModel) -> DMatrix<f64> {
    let grid = model.grid();
    if grid.len() == 1 {
        return model.theta_at(0);
    }
    let span = grid[grid.len() - 1] - grid[0];
    let mut acc = DMatrix::zeros(model.n_units(), model.rank());
    for l in 0..grid.len() - 1 {
        let w = 0.5 * (grid[l + 1] - grid[l]) / span;
        acc += (model.theta_at(l) + model.theta_at(l + 1)) * w;
    }
    acc
}

/// Raw varimax criterion `Σ_k [Σ_j a⁴_jk − (Σ_j a²_jk)²/J]`.
pub fn varimax_criterion(loadings: &DMatrix<f64>) -> f64 {
    let jn = loadings.nrows() as f64;
    loadings
        .column_iter()
        .map(|c| {
            let s2: f64 = c.iter().map(|a| a * a).sum();
            let s4: f64 = c.iter().map(|a| a.powi(4)).sum();
            s4 - s2 * s2 / jn
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Varimax {
    pub rotated: DMatrix<f64>,
    /// Orthogonal `r × r` with `rotated = loadings · rotation`.
    pub rotation: DMatrix<f64>,
    /// Criterion of `rotated`, or of the row-normalized loadings with Kaiser
    /// normalization.
    pub criterion: f64,
    /// Criterion after each sweep, starting with the unrotated value.
    pub criterion_trace: Vec<f64>,
}

/// Varimax by cyclic pairwise plane rotations; each plane rotation is the
/// exact maximizer of the criterion for its column pair. With `kaiser`, rows
/// are normalized to unit length during the search.
pub fn varimax(loadings: &DMatrix<f64>, kaiser: bool) -> Varimax {
    let (jn, r) = loadings.shape();
    let row_norms: Vec<f64> = loadings.row_iter().map(|row| row.norm()).collect();
    let mut work = loadings.clone();
    if kaiser {
        for (j, &n) in row_norms.iter().enumerate() {
            if n > 0.0 {
                work.row_mut(j).scale_mut(1.0 / n);
            }
        }
    }
    let mut rotation = DMatrix::identity(r, r);
    let mut criterion = varimax_criterion(&work);
    let mut trace = vec![criterion];
    if r >= 2 && jn > 0 {
        for _ in 0..VARIMAX_MAX_SWEEPS {
            let mut largest_angle = 0.0f64;
            for k in 0..r - 1 {
                for l in k + 1..r {
                    let phi = pair_angle(&work, k, l);
                    largest_angle = largest_angle.max(phi.abs());
                    if phi != 0.0 {
                        rotate_columns(&mut work, k, l, phi);
                        rotate_columns(&mut rotation, k, l, phi);
                    }
                }
            }
            let next = varimax_criterion(&work);
            let improvement = next - criterion;
            criterion = next;
            trace.push(criterion);
            if improvement < VARIMAX_TOL && largest_angle < VARIMAX_ANGLE_TOL {
                break;
            }
        }
    }
    let rotated = loadings * &rotation;
    Varimax {
        criterion: if kaiser { criterion } else { varimax_criterion(&rotated) },
        rotated,
        rotation,
        criterion_trace: trace,
    }
}

/// Angle maximizing the criterion over rotations of columns `k`, `l`.
fn pair_angle(m: &DMatrix<f64>, k: usize, l: usize) -> f64 {
    let jn = m.nrows() as f64;
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..m.nrows() {
        let (x, y) = (m[(j, k)], m[(j, l)]);
        let u = x * x - y * y;
        let v = 2.0 * x * y;
        a += u;
        b += v;
        c += u * u - v * v;
        d += 2.0 * u * v;
    }
    let num = d - 2.0 * a * b / jn;
    let den = c - (a * a - b * b) / jn;
    if num.abs() <= 1e-300 && den >= 0.0 {
        return 0.0;
    }
    0.25 * num.atan2(den)
}

fn rotate_columns(m: &mut DMatrix<f64>, k: usize, l: usize, phi: f64) {
    let (s, c) = phi.sin_cos();
    for j in 0..m.nrows() {
        let (x, y) = (m[(j, k)], m[(j, l)]);
        m[(j, k)] = c * x + s * y;
        m[(j, l)] = -s * x + c * y;
    }
}

/// Replaces loadings by `A G` and factors by `Θ(t_l) (Gᵀ)⁻¹`, leaving every
/// `X(t_l)` unchanged. Rows are not re-projected.
pub fn rotate_model(model: &FactorModel, transform: &DMatrix<f64>) -> Result<FactorModel> {
    let r = model.rank();
    if transform.shape() != (r, r) {
        return Err(Error::DimensionMismatch(format!(
            "transform is {:?}, model rank is {r}",
            transform.shape()
        )));
    }
    let inv_t = invert(&transform.transpose())?;
    let loadings = model.loadings_matrix() * transform;
    let mut theta = Vec::with_capacity(model.theta().len());
    for l in 0..model.n_grid() {
        let slab = model.theta_at(l) * &inv_t;
        for i in 0..model.n_units() {
            theta.extend(slab.row(i).iter().copied());
        }
    }
    let mut flat_loadings = Vec::with_capacity(model.loadings().len());
    for j in 0..model.n_types() {
        flat_loadings.extend(loadings.row(j).iter().copied());
    }
    Ok(model.with_parameters(theta, flat_loadings))
}

fn invert(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.amax();
    let svd = m.clone().svd(false, false);
    let smallest = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if scale == 0.0 || smallest <= RANK_TOL * scale {
        return Err(Error::Singular(format!("smallest singular value {smallest:e}")));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("transform is not invertible".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalAngles {
    /// Ascending, in `[0, π/2]`.
    pub angles: Vec<f64>,
    /// `sin` of each angle, same order.
    pub sines: Vec<f64>,
}

impl PrincipalAngles {
    /// `‖sin ∠‖_F`.
    pub fn sin_frobenius(&self) -> f64 {
        self.sines.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Orthonormal basis of the column space via thin QR.
fn orthonormal_basis(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if cols == 0 || rows < cols {
        return Err(Error::RankDeficient(format!("{what} is {rows}x{cols}")));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let scale = (0..cols).map(|k| m.column(k).norm()).fold(0.0, f64::max);
    for k in 0..cols {
        if r[(k, k)].abs() <= RANK_TOL * scale || scale == 0.0 {
            return Err(Error::RankDeficient(format!("{what} has dependent column {k}")));
        }
    }
    Ok(qr.q())
}

/// Principal angles between the column spaces of two `J × r` matrices.
/// Small angles come from the sines of the residual `(I − P_A) Q_B`, large
/// ones from the cosines of `Q_Aᵀ Q_B`, which keeps both ends accurate.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<PrincipalAngles> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let qa = orthonormal_basis(a, "first argument")?;
    let qb = orthonormal_basis(b, "second argument")?;
    let cross = qa.transpose() * &qb;
    let mut cosines: Vec<f64> = cross.clone().svd(false, false).singular_values.iter().map(|c| c.clamp(0.0, 1.0)).collect();
    cosines.sort_by(|x, y| y.total_cmp(x));
    let residual = &qb - &qa * &cross;
    let mut sines: Vec<f64> = residual.svd(false, false).singular_values.iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sines.sort_by(f64::total_cmp);
    let angles: Vec<f64> = cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| if c * c >= 0.5 { s.asin() } else { c.acos() })
        .collect();
    let sines = angles.iter().map(|t| t.sin()).collect();
    Ok(PrincipalAngles { angles, sines })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationResult {
    /// Orthogonal varimax rotation of the canonical loadings.
    pub q: DMatrix<f64>,
    /// `VΣQ/√N`, `J × r`.
    pub rotated_loadings: DMatrix<f64>,
    /// The model re-expressed with `rotated_loadings` as its loadings.
    pub rotated_model: FactorModel,
    pub varimax_criterion: f64,
}

impl RotationResult {
    /// `ã²_jk / Σ_l ã²_jl`, `J × r`.
    pub fn dominance_shares(&self) -> DMatrix<f64> {
        let mut out = self.rotated_loadings.map(|a| a * a);
        for mut row in out.row_iter_mut() {
            let total: f64 = row.sum();
            if total > 0.0 {
                row /= total;
            }
        }
        out
    }
}

/// Thin SVD `Θ̄Aᵀ = UΣVᵀ`, canonical loadings `VΣ/√N`, varimax on those, and
/// the model re-expressed in the rotated loading basis.
pub fn rotate(model: &FactorModel, kaiser: bool) -> Result<RotationResult> {
    let r = model.rank();
    let n = model.n_units() as f64;
    let a = model.loadings_matrix();
    let product = aggregate_factors(model) * a.transpose();
    let svd = product.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    if order.len() < r {
        return Err(Error::RankDeficient(format!("aggregated X has fewer than {r} singular values")));
    }
    let sigma_max = svd.singular_values[order[0]];
    let mut canonical = DMatrix::zeros(model.n_types(), r);
    for (k, &idx) in order.iter().take(r).enumerate() {
        let s = svd.singular_values[idx];
        if !(s > RANK_TOL * sigma_max) {
            return Err(Error::RankDeficient(format!("aggregated X has rank below {r}")));
        }
        for j in 0..model.n_types() {
            canonical[(j, k)] = vt[(idx, j)] * s / n.sqrt();
        }
    }
    let vm = varimax(&canonical, kaiser);
    // A G = V Σ Q / √N with G solved in least squares; span(A) = span(V).
    let ata = a.transpose() * &a;
    let g = invert(&ata)? * a.transpose() * &vm.rotated;
    let rotated_model = rotate_model(model, &g)?;
    Ok(RotationResult {
        q: vm.rotation,
        rotated_loadings: vm.rotated,
        rotated_model,
        varimax_criterion: vm.criterion,
    })
}
