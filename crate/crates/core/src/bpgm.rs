//! Block proximal gradient with diagonal majorizers.
//!
//! Each block keeps its last two iterates and the majorizers used to produce
//! them. One step is: extrapolate with weight `delta * M_cur^{-1/2} M_prev^{1/2}`,
//! take a gradient step scaled by `M^{-1}`, then apply the block's proximal map
//! in the `M` metric.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::prox::{project_unit_ball, soft_threshold};
use crate::{Error, Result};

/// Floor applied to majorizer entries before inversion.
pub const MAJORIZER_FLOOR: f64 = 1e-12;

/// Iterate history and majorizers of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    pub current: Vec<f64>,
    pub previous: Vec<f64>,
    pub m_current: Vec<f64>,
    pub m_previous: Vec<f64>,
}

impl BlockState {
    /// A block with no momentum yet.
    pub fn at_rest(x: Vec<f64>, m: Vec<f64>) -> Self {
        BlockState {
            previous: x.clone(),
            current: x,
            m_previous: m.clone(),
            m_current: m,
        }
    }
}

/// Clamps every entry to at least [`MAJORIZER_FLOOR`].
pub fn clamp_majorizer(m: &mut [f64]) {
    for v in m {
        if !(*v >= MAJORIZER_FLOOR) {
            *v = MAJORIZER_FLOOR;
        }
    }
}

/// A majorizer entry moving by more than this factor between steps resets momentum.
pub const RESET_RATIO: f64 = 10.0;

/// True when some entry of `m_current` differs from `m_previous` by more than [`RESET_RATIO`].
pub fn should_reset(m_current: &[f64], m_previous: &[f64]) -> bool {
    m_current
        .iter()
        .zip(m_previous)
        .any(|(&a, &b)| a > RESET_RATIO * b || b > RESET_RATIO * a)
}

/// `current + delta * M_cur^{-1/2} M_prev^{1/2} (current - previous)`, elementwise.
pub fn extrapolate(state: &BlockState, delta: f64) -> Result<Vec<f64>> {
    let n = state.current.len();
    if state.previous.len() != n || state.m_current.len() != n || state.m_previous.len() != n {
        return Err(Error::Dimension(
            "block state vectors differ in length".into(),
        ));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Config(format!(
            "delta must lie in [0, 1), got {delta}"
        )));
    }
    if state
        .m_current
        .iter()
        .chain(&state.m_previous)
        .any(|&m| !(m > 0.0))
    {
        return Err(Error::Numerical(
            "majorizer entries must be positive".into(),
        ));
    }
    let mut out = vec![0.0; n];
    extrapolate_into(
        &state.current,
        &state.previous,
        &state.m_current,
        &state.m_previous,
        delta,
        &mut out,
    );
    Ok(out)
}

/// Unchecked slice form of [`extrapolate`] writing into `out`.
pub fn extrapolate_into(
    current: &[f64],
    previous: &[f64],
    m_current: &[f64],
    m_previous: &[f64],
    delta: f64,
    out: &mut [f64],
) {
    for i in 0..current.len() {
        let step = current[i] - previous[i];
        out[i] = if delta == 0.0 || step == 0.0 {
            current[i]
        } else {
            current[i] + delta * (m_previous[i] / m_current[i]).sqrt() * step
        };
    }
}

/// Proximal map `argmin_x 1/2 ||x - nu||²_M + g(x)` for diagonal `M`.
pub trait ProximalOperator {
    fn apply(&self, nu: &[f64], m: &[f64]) -> Result<Vec<f64>>;
}

impl<F> ProximalOperator for F
where
    F: Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    fn apply(&self, nu: &[f64], m: &[f64]) -> Result<Vec<f64>> {
        self(nu, m)
    }
}

/// `g = 0`.
#[derive(Debug, Clone, Copy)]
pub struct Identity;

impl ProximalOperator for Identity {
    fn apply(&self, nu: &[f64], _m: &[f64]) -> Result<Vec<f64>> {
        Ok(nu.to_vec())
    }
}

/// `g = lambda ||x||_1`.
#[derive(Debug, Clone, Copy)]
pub struct L1 {
    pub lambda: f64,
}

impl ProximalOperator for L1 {
    fn apply(&self, nu: &[f64], m: &[f64]) -> Result<Vec<f64>> {
        Ok(nu
            .iter()
            .zip(m)
            .map(|(&v, &w)| soft_threshold(v, self.lambda / w))
            .collect())
    }
}

/// Indicator of the Euclidean unit ball.
#[derive(Debug, Clone, Copy)]
pub struct UnitBall {
    pub newton_iters: usize,
}

impl ProximalOperator for UnitBall {
    fn apply(&self, nu: &[f64], m: &[f64]) -> Result<Vec<f64>> {
        Ok(project_unit_ball(nu, m, self.newton_iters)?.point)
    }
}

/// `prox(x̃ - M^{-1} grad; M)`.
pub fn prox_step<P: ProximalOperator + ?Sized>(
    x_tilde: &[f64],
    grad: &[f64],
    m: &[f64],
    prox: &P,
) -> Result<Vec<f64>> {
    if grad.len() != x_tilde.len() || m.len() != x_tilde.len() {
        return Err(Error::Dimension("prox step inputs differ in length".into()));
    }
    let nu: Vec<f64> = x_tilde
        .iter()
        .zip(grad)
        .zip(m)
        .map(|((x, g), w)| x - g / w)
        .collect();
    prox.apply(&nu, m)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mat = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    SymmetricEigen::new(mat)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// True when `diag(M) - bound` is positive semidefinite up to `-1e-8`.
pub fn check_majorizer(bound: &Array2<f64>, m: &[f64]) -> bool {
    let n = m.len();
    if bound.nrows() != n || bound.ncols() != n {
        return false;
    }
    let mut diff = -bound.clone();
    for i in 0..n {
        diff[[i, i]] += m[i];
    }
    min_eigenvalue(&diff) >= -1e-8
}
