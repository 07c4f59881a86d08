//! Helpers for bags with more than one row.
//!
//! Atoms span the full height `F`, slide along time only, and coefficient
//! vectors keep length `T`. Every majorizer becomes a sum of per-row 1-D
//! majorizers; the nuclear norm acts on the row-major flattened atoms.

use ndarray::{Array1, Array2};

use crate::convops::ToeplitzMatrix;
use crate::types::Atom;
use crate::{Error, Result};

/// Shape of a 2-D problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoDimProfile {
    pub height: usize,
    pub len: usize,
    pub window: usize,
}

impl TwoDimProfile {
    pub fn new(height: usize, len: usize, window: usize) -> Result<Self> {
        if height == 0 || len == 0 || window == 0 {
            return Err(Error::Dimension(
                "2-D profile sizes must be positive".into(),
            ));
        }
        Ok(TwoDimProfile {
            height,
            len,
            window,
        })
    }

    pub fn atom_len(&self) -> usize {
        self.height * self.window
    }

    /// Coefficient vectors do not grow with the height.
    pub fn coeff_len(&self) -> usize {
        self.len
    }
}

/// `diag(Σ_r scale · |T_r|ᵀ |T_r| 1)` over a stack of row operators.
pub fn accumulate_rowwise_majorizer(rows: &[ToeplitzMatrix], scale: f64) -> Result<Array1<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Dimension("no row operators".into()))?;
    let shape = first.entries.dim();
    let mut out = Array1::zeros(shape.1);
    for r in rows {
        if r.entries.dim() != shape {
            return Err(Error::Dimension("row operators differ in shape".into()));
        }
        out.scaled_add(scale, &r.abs_majorizer());
    }
    Ok(out)
}

/// `(F·M) x K0` matrix whose column `k` is atom `k` flattened row-major.
pub fn flatten_for_nuclear(atoms: &[Atom]) -> Result<Array2<f64>> {
    let Some(first) = atoms.first() else {
        return Ok(Array2::zeros((0, 0)));
    };
    let (h, w) = first.filter.dim();
    let mut out = Array2::zeros((h * w, atoms.len()));
    for (k, a) in atoms.iter().enumerate() {
        if a.filter.dim() != (h, w) {
            return Err(Error::Dimension("shared atoms differ in shape".into()));
        }
        for (i, v) in a.filter.iter().enumerate() {
            out[[i, k]] = *v;
        }
    }
    Ok(out)
}

/// Inverse of [`flatten_for_nuclear`].
pub fn unflatten(mat: &Array2<f64>, height: usize, window: usize) -> Result<Vec<Atom>> {
    if mat.nrows() != height * window {
        return Err(Error::Dimension(format!(
            "{} rows cannot hold {height}x{window} atoms",
            mat.nrows()
        )));
    }
    Ok(mat
        .columns()
        .into_iter()
        .map(|col| Atom {
            filter: Array2::from_shape_vec((height, window), col.to_vec()).expect("sized above"),
        })
        .collect())
}
