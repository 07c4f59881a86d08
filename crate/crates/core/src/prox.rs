//! Proximal operators and the constrained subproblems of the dictionary blocks.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::{Error, Result};

/// `sign(a) * max(|a| - b, 0)`.
#[inline]
pub fn soft_threshold(a: f64, b: f64) -> f64 {
    debug_assert!(b >= 0.0);
    if a > b {
        a - b
    } else if a < -b {
        a + b
    } else {
        0.0
    }
}

pub(crate) fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_nalgebra(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Singular values of `a`, descending.
pub fn singular_values(a: &Array2<f64>) -> Result<Vec<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "singular values of non-finite matrix".into(),
        ));
    }
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let mut sv: Vec<f64> = to_nalgebra(a).singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

/// Sum of singular values.
pub fn nuclear_norm(a: &Array2<f64>) -> Result<f64> {
    Ok(singular_values(a)?.iter().sum())
}

/// Singular value thresholding: `argmin_O tau ||O||_* + 1/2 ||O - A||_F^2`.
pub fn svt(a: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::Config(format!(
            "svt threshold must be >= 0, got {tau}"
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("svt of non-finite matrix".into()));
    }
    if a.is_empty() || tau == 0.0 {
        return Ok(a.clone());
    }
    let svd = to_nalgebra(a).svd(true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD produced no U".into()))?;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD produced no Vᵀ".into()))?;
    let shrunk = svd.singular_values.map(|s| soft_threshold(s, tau));
    let out = u * DMatrix::from_diagonal(&shrunk) * v_t;
    Ok(from_nalgebra(&out))
}

#[inline]
fn weighted_point<'a>(nu: &'a [f64], m: &'a [f64], psi: f64) -> impl Iterator<Item = f64> + 'a {
    nu.iter().zip(m).map(move |(&n, &w)| w * n / (w + psi))
}

fn norm2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn check_metric(nu: &[f64], m: &[f64]) -> Result<()> {
    if nu.len() != m.len() {
        return Err(Error::Dimension(format!(
            "metric length {} differs from point length {}",
            m.len(),
            nu.len()
        )));
    }
    if let Some(bad) = m.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::Numerical(format!(
            "metric entries must be positive, found {bad}"
        )));
    }
    if nu.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "non-finite point in unit-ball QCQP".into(),
        ));
    }
    Ok(())
}

/// Result of a unit-ball QCQP solve.
#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSolution {
    pub point: Vec<f64>,
    /// Lagrange multiplier of the norm constraint (0 when inactive).
    pub multiplier: f64,
    pub iterations: usize,
}

/// `argmin 1/2 ||d - nu||²_M  s.t. ||d||₂ <= 1` with diagonal `M`, by Newton's method.
///
/// Newton runs on `phi(psi) = 1/||d(psi)|| - 1`, which is concave and increasing
/// in `psi`, so iterates started from 0 rise monotonically to the root.
pub fn qcqp_unit_ball(nu: &[f64], m: &[f64], iters: usize) -> Result<QcqpSolution> {
    check_metric(nu, m)?;
    let n0 = norm2(nu.iter().copied());
    if n0 <= 1.0 {
        return Ok(QcqpSolution {
            point: nu.to_vec(),
            multiplier: 0.0,
            iterations: 0,
        });
    }
    let mut psi = 0.0_f64;
    for it in 1..=iters {
        let mut sq = 0.0;
        let mut dsq = 0.0;
        for (&n, &w) in nu.iter().zip(m) {
            let denom = w + psi;
            let d = w * n / denom;
            sq += d * d;
            dsq += d * d / denom;
        }
        let norm = sq.sqrt();
        let phi = 1.0 / norm - 1.0;
        if phi.abs() <= 1e-15 {
            return Ok(finish(nu, m, psi, it));
        }
        // d/dpsi (1/||d||) = ||d||^-3 * Σ d_i² / (m_i + psi)
        let dphi = dsq / (sq * norm);
        let step = phi / dphi;
        let next = psi - step;
        if !next.is_finite() {
            break;
        }
        if (next - psi).abs() <= 1e-15 * psi.max(1.0) {
            return Ok(finish(nu, m, next.max(0.0), it));
        }
        psi = next.max(0.0);
    }
    Err(Error::NoConvergence(format!(
        "unit-ball Newton did not converge in {iters} iterations"
    )))
}

fn finish(nu: &[f64], m: &[f64], psi: f64, iterations: usize) -> QcqpSolution {
    let mut point: Vec<f64> = weighted_point(nu, m, psi).collect();
    // Scale off the last ulps so the constraint holds exactly.
    let n = norm2(point.iter().copied());
    if n > 1.0 {
        point.iter_mut().for_each(|v| *v /= n);
    }
    QcqpSolution {
        point,
        multiplier: psi,
        iterations,
    }
}

/// Bisection on the multiplier over `[0, hi]`; the guaranteed fallback.
pub fn qcqp_unit_ball_bisect(nu: &[f64], m: &[f64], hi: f64) -> Result<QcqpSolution> {
    check_metric(nu, m)?;
    if norm2(nu.iter().copied()) <= 1.0 {
        return Ok(QcqpSolution {
            point: nu.to_vec(),
            multiplier: 0.0,
            iterations: 0,
        });
    }
    let mut lo = 0.0_f64;
    let mut hi = hi;
    // Grow the bracket until the norm drops below one.
    while norm2(weighted_point(nu, m, hi)) > 1.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical("bisection bracket overflow".into()));
        }
    }
    let mut iterations = 0;
    while iterations < 400 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm2(weighted_point(nu, m, mid)) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(finish(nu, m, hi, iterations))
}

/// Newton with bisection fallback.
pub fn project_unit_ball(nu: &[f64], m: &[f64], iters: usize) -> Result<QcqpSolution> {
    match qcqp_unit_ball(nu, m, iters) {
        Ok(sol) => Ok(sol),
        Err(Error::NoConvergence(_)) => qcqp_unit_ball_bisect(nu, m, 1e6),
        Err(e) => Err(e),
    }
}

/// Output of [`admm_nuclear_prox`].
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    /// Unit-ball feasible atoms (flattened), best objective seen.
    pub atoms: Vec<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    /// False when the budget ran out before `||O - D|| <= tol`.
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Scaled ADMM state: auxiliary copy `O` of the stacked atoms and the dual `Y`.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub aux: Array2<f64>,
    pub dual: Array2<f64>,
    pub rho: f64,
}

/// Stacks flattened atoms as columns of an `(F·M) x K0` matrix.
pub fn stack_columns(cols: &[Vec<f64>]) -> Array2<f64> {
    let rows = cols.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows, cols.len()), |(i, k)| cols[k][i])
}

/// `1/2 Σ_k ||d_k - nu_k||²_{M_k} + mu ||D||_*`.
pub fn nuclear_prox_objective(
    atoms: &[Vec<f64>],
    nus: &[Vec<f64>],
    ms: &[Vec<f64>],
    mu: f64,
) -> Result<f64> {
    let quad: f64 = atoms
        .iter()
        .zip(nus)
        .zip(ms)
        .map(|((d, n), m)| {
            d.iter()
                .zip(n)
                .zip(m)
                .map(|((a, b), w)| 0.5 * w * (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    let nuc = if mu > 0.0 {
        mu * nuclear_norm(&stack_columns(atoms))?
    } else {
        0.0
    };
    Ok(quad + nuc)
}

/// ADMM for `min 1/2 Σ_k ||d_k - nu_k||²_{M_k} + mu_eff ||D||_*  s.t. ||d_k|| <= 1`.
pub fn admm_nuclear_prox(
    nus: &[Vec<f64>],
    ms: &[Vec<f64>],
    mu_eff: f64,
    rho: f64,
    iters: usize,
    tol: f64,
) -> Result<AdmmOutcome> {
    let free = vec![true; nus.len()];
    admm_nuclear_prox_partial(nus, ms, &free, mu_eff, rho, iters, tol)
}

/// [`admm_nuclear_prox`] where atoms with `free[k] == false` stay pinned at `nus[k]`.
///
/// The quadratic and the nuclear weight are divided by the mean metric entry of
/// the free atoms before iterating; the minimizer is unchanged but `rho` then
/// acts on a unit-scale problem.
pub fn admm_nuclear_prox_partial(
    nus: &[Vec<f64>],
    ms: &[Vec<f64>],
    free: &[bool],
    mu_eff: f64,
    rho: f64,
    iters: usize,
    tol: f64,
) -> Result<AdmmOutcome> {
    if nus.len() != ms.len() || nus.len() != free.len() {
        return Err(Error::Dimension(
            "ADMM inputs disagree on atom count".into(),
        ));
    }
    if !(rho > 1.0) {
        return Err(Error::Config(format!("rho must be > 1, got {rho}")));
    }
    if !(mu_eff >= 0.0) {
        return Err(Error::Config(format!("mu must be >= 0, got {mu_eff}")));
    }
    for (n, m) in nus.iter().zip(ms) {
        check_metric(n, m)?;
    }
    let newton_iters = 100;
    let project = |nu: &[f64], m: &[f64]| project_unit_ball(nu, m, newton_iters).map(|s| s.point);

    // Initial iterate: independent projections.
    let mut atoms: Vec<Vec<f64>> = nus
        .iter()
        .zip(ms)
        .zip(free)
        .map(|((n, m), &f)| if f { project(n, m) } else { Ok(n.clone()) })
        .collect::<Result<_>>()?;
    let objective = |atoms: &[Vec<f64>]| nuclear_prox_objective(atoms, nus, ms, mu_eff);

    let mut best = atoms.clone();
    let mut best_obj = objective(&atoms)?;
    let mut trace = vec![best_obj];
    if mu_eff == 0.0 || nus.is_empty() || !free.iter().any(|&f| f) {
        return Ok(AdmmOutcome {
            atoms,
            objective: best_obj,
            iterations: 0,
            converged: true,
            trace,
        });
    }

    let (sum, count) = ms
        .iter()
        .zip(free)
        .filter(|(_, &f)| f)
        .flat_map(|(m, _)| m.iter())
        .fold((0.0, 0usize), |(s, c), &w| (s + w, c + 1));
    let scale = sum / count as f64;
    let scaled_ms: Vec<Vec<f64>> = ms
        .iter()
        .map(|m| m.iter().map(|w| w / scale).collect())
        .collect();
    let tau = mu_eff / scale / rho;

    let rows = nus[0].len();
    let k0 = nus.len();
    let mut state = AdmmState {
        aux: stack_columns(&atoms),
        dual: Array2::zeros((rows, k0)),
        rho,
    };
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..iters {
        iterations += 1;
        // (1) per-atom QCQP on the merged quadratic
        for k in 0..k0 {
            if !free[k] {
                continue;
            }
            let m = &scaled_ms[k];
            let merged: Vec<f64> = m.iter().map(|w| w + state.rho).collect();
            let center: Vec<f64> = (0..rows)
                .map(|i| {
                    (m[i] * nus[k][i] + state.rho * state.aux[[i, k]] + state.dual[[i, k]])
                        / merged[i]
                })
                .collect();
            atoms[k] = project(&center, &merged)?;
        }
        // (2) O <- svt(D - Y/rho, mu/rho)
        let d = stack_columns(&atoms);
        let shifted = &d - &(&state.dual / state.rho);
        state.aux = svt(&shifted, tau)?;
        // (3) Y <- Y + rho (O - D)
        let gap = &state.aux - &d;
        state.dual = &state.dual + &(&gap * state.rho);

        let obj = objective(&atoms)?;
        trace.push(obj);
        if obj < best_obj {
            best_obj = obj;
            best = atoms.clone();
        }
        let gap_norm = gap.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n = trace.len();
        let settled = n >= 4 && trace[n - 1] <= trace[n - 2] && trace[n - 2] <= trace[n - 3];
        if gap_norm <= tol && settled {
            converged = true;
            break;
        }
    }
    Ok(AdmmOutcome {
        atoms: best,
        objective: best_obj,
        iterations,
        converged,
        trace,
    })
}
