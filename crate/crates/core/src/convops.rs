//! Truncated convolution, pooling and Toeplitz constructions.
//!
//! A length-`M` filter convolved with a length-`T` activation gives a full
//! signal of length `M + T - 1`; truncation keeps `T` samples starting at
//! `floor((M - 1) / 2)`. Every kernel below uses that offset, so the dense
//! Toeplitz matrices and the direct loops describe the same linear map.
//!
//! The slice kernels (`conv_accumulate`, `adjoint_signal`, ...) are what the
//! training loop calls; the dense builders exist for majorizer checks and as
//! reference semantics in tests.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::types::Atom;
use crate::{Error, Result};

/// Samples dropped on the left by truncation for a window of `m`.
#[inline]
pub fn left_trim(m: usize) -> usize {
    (m - 1) / 2
}

/// Keeps the central `t` samples of a length `m + t - 1` signal.
///
/// Odd `m` drops `(m-1)/2` from each side; even `m` drops one fewer on the left.
pub fn truncate(x: &[f64], m: usize, t: usize) -> Result<Vec<f64>> {
    if m == 0 || t == 0 || x.len() != m + t - 1 {
        return Err(Error::Dimension(format!(
            "truncate expects length {} (M={m}, T={t}), got {}",
            (m + t).saturating_sub(1),
            x.len()
        )));
    }
    let l = left_trim(m);
    Ok(x[l..l + t].to_vec())
}

/// Full linear convolution, length `a.len() + b.len() - 1`.
pub fn full_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            out[i + j] += av * bv;
        }
    }
    out
}

/// Valid range of `t` for which `t + offset` indexes a length-`len` signal.
#[inline]
fn overlap(offset: isize, t_len: usize, len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).min(t_len as isize).max(0) as usize;
    (lo.min(hi), hi)
}

/// `out += truncate(kernel * signal)`, with `out.len() == signal.len()`.
pub fn conv_accumulate(kernel: &[f64], signal: &[f64], out: &mut [f64]) {
    conv_accumulate_scaled(kernel, signal, 1.0, out);
}

/// `out += scale * truncate(kernel * signal)`.
pub fn conv_accumulate_scaled(kernel: &[f64], signal: &[f64], scale: f64, out: &mut [f64]) {
    let t_len = signal.len();
    debug_assert_eq!(out.len(), t_len);
    let l = left_trim(kernel.len()) as isize;
    for (j, &k) in kernel.iter().enumerate() {
        let w = k * scale;
        if w == 0.0 {
            continue;
        }
        let o = l - j as isize;
        let (lo, hi) = overlap(o, t_len, t_len);
        if lo == hi {
            continue;
        }
        let src = &signal[(lo as isize + o) as usize..(hi as isize + o) as usize];
        for (dst, &s) in out[lo..hi].iter_mut().zip(src) {
            *dst += w * s;
        }
    }
}

/// Adjoint with respect to the signal: `out += T_kernelᵀ r`, `out.len() == r.len()`.
pub fn adjoint_signal_accumulate(kernel: &[f64], r: &[f64], out: &mut [f64]) {
    let t_len = r.len();
    debug_assert_eq!(out.len(), t_len);
    let l = left_trim(kernel.len()) as isize;
    for (j, &k) in kernel.iter().enumerate() {
        if k == 0.0 {
            continue;
        }
        // out[u] += k * r[u - o] with o = l - j
        let o = -(l - j as isize);
        let (lo, hi) = overlap(o, t_len, t_len);
        if lo == hi {
            continue;
        }
        let src = &r[(lo as isize + o) as usize..(hi as isize + o) as usize];
        for (dst, &v) in out[lo..hi].iter_mut().zip(src) {
            *dst += k * v;
        }
    }
}

/// Adjoint with respect to the kernel: `out[j] += Σ_t r[t] signal[t + L - j]`, `out.len() == m`.
pub fn adjoint_kernel_accumulate(signal: &[f64], r: &[f64], out: &mut [f64]) {
    let t_len = signal.len();
    debug_assert_eq!(r.len(), t_len);
    let l = left_trim(out.len()) as isize;
    for (j, o_j) in out.iter_mut().enumerate() {
        let o = l - j as isize;
        let (lo, hi) = overlap(o, t_len, t_len);
        if lo == hi {
            continue;
        }
        let src = &signal[(lo as isize + o) as usize..(hi as isize + o) as usize];
        *o_j += r[lo..hi].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `diag(|T_kernel|ᵀ |T_kernel| 1)` for the `T x T` atom-built matrix, added into `out`.
pub fn atom_majorizer_accumulate(kernel: &[f64], scale: f64, out: &mut [f64]) {
    let t_len = out.len();
    let abs: Vec<f64> = kernel.iter().map(|v| v.abs()).collect();
    let ones = vec![1.0; t_len];
    let mut row_sums = vec![0.0; t_len];
    conv_accumulate(&abs, &ones, &mut row_sums);
    let mut m = vec![0.0; t_len];
    adjoint_signal_accumulate(&abs, &row_sums, &mut m);
    for (o, v) in out.iter_mut().zip(m) {
        *o += scale * v;
    }
}

/// `diag(|T_s|ᵀ |T_s| 1)` for the `T x M` coefficient-built matrix, added into `out` (length `M`).
pub fn coeff_majorizer_accumulate(signal: &[f64], scale: f64, out: &mut [f64]) {
    let m = out.len();
    let t_len = signal.len();
    let abs: Vec<f64> = signal.iter().map(|v| v.abs()).collect();
    let ones = vec![1.0; m];
    let mut row_sums = vec![0.0; t_len];
    conv_accumulate(&ones, &abs, &mut row_sums);
    let mut acc = vec![0.0; m];
    adjoint_kernel_accumulate(&abs, &row_sums, &mut acc);
    for (o, v) in out.iter_mut().zip(acc) {
        *o += scale * v;
    }
}

/// Truncated convolution of an `F x M` atom with one length-`T` activation.
///
/// Each atom row is convolved with the same coefficient vector.
pub fn conv_truncated(atom: &Atom, coeff: ArrayView1<f64>) -> Array2<f64> {
    let coeff = coeff.to_vec();
    let mut out = Array2::zeros((atom.height(), coeff.len()));
    for (f, mut row) in out.rows_mut().into_iter().enumerate() {
        let kernel = atom.row(f).to_vec();
        conv_accumulate(&kernel, &coeff, row.as_slice_mut().expect("row-major"));
    }
    out
}

/// Which construction produced a [`ToeplitzMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToeplitzKind {
    /// `T x M`, built from an activation; multiplies an atom row.
    FromCoefficients,
    /// `T x T`, built from an atom row; multiplies an activation.
    FromAtom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzMatrix {
    pub entries: Array2<f64>,
    pub kind: ToeplitzKind,
}

impl ToeplitzMatrix {
    pub fn apply(&self, v: ArrayView1<f64>) -> Array1<f64> {
        self.entries.dot(&v)
    }

    /// Dense `diag(|T|ᵀ|T| 1)`.
    pub fn abs_majorizer(&self) -> Array1<f64> {
        let abs = self.entries.mapv(f64::abs);
        let row_sums = abs.sum_axis(ndarray::Axis(1));
        abs.t().dot(&row_sums)
    }

    /// Dense `TᵀT`.
    pub fn gram(&self) -> Array2<f64> {
        self.entries.t().dot(&self.entries)
    }
}

/// `T x M` matrix with `T d = truncate(d * coeff)` for every length-`M` `d`.
pub fn toeplitz_from_coeffs(coeff: ArrayView1<f64>, m: usize) -> Result<ToeplitzMatrix> {
    if m == 0 {
        return Err(Error::Dimension("window must be >= 1".into()));
    }
    let t_len = coeff.len();
    let l = left_trim(m) as isize;
    let entries = Array2::from_shape_fn((t_len, m), |(t, j)| {
        let i = t as isize + l - j as isize;
        if i >= 0 && (i as usize) < t_len {
            coeff[i as usize]
        } else {
            0.0
        }
    });
    Ok(ToeplitzMatrix {
        entries,
        kind: ToeplitzKind::FromCoefficients,
    })
}

/// `T x T` matrix with `T s = truncate(row * s)` for every length-`T` `s`.
pub fn toeplitz_from_atom(row: ArrayView1<f64>, t_len: usize) -> Result<ToeplitzMatrix> {
    let m = row.len();
    if m == 0 || t_len == 0 || m > 2 * t_len - 1 {
        return Err(Error::Dimension(format!(
            "atom length {m} incompatible with signal length {t_len}"
        )));
    }
    let l = left_trim(m) as isize;
    let entries = Array2::from_shape_fn((t_len, t_len), |(t, u)| {
        let j = t as isize + l - u as isize;
        if j >= 0 && (j as usize) < m {
            row[j as usize]
        } else {
            0.0
        }
    });
    Ok(ToeplitzMatrix {
        entries,
        kind: ToeplitzKind::FromAtom,
    })
}

/// Temporal pooling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Avg,
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Pooling::Avg),
            "max" => Ok(Pooling::Max),
            other => Err(Error::Config(format!("unknown pooling mode {other:?}"))),
        }
    }
}

/// Pools a `T x K` activation block over time into `K` values.
pub fn pool(activations: ArrayView2<f64>, mode: Pooling) -> Array1<f64> {
    let t_len = activations.nrows() as f64;
    activations
        .columns()
        .into_iter()
        .map(|col| match mode {
            Pooling::Avg => col.sum() / t_len,
            Pooling::Max => col.fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
        })
        .collect()
}
