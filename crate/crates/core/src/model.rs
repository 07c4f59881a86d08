//! Reconstruction, fidelity, prediction, label losses and the training objective.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::convops::{conv_accumulate, pool, Pooling};
use crate::prox::nuclear_norm;
use crate::twodim::flatten_for_nuclear;
use crate::types::{Bag, CoefficientSet, DictionaryModel, Hyperparams, Projection};
use crate::{Error, Result};

/// Which atoms contribute to a reconstruction.
#[derive(Debug, Clone, Copy)]
pub enum Subset<'a> {
    All,
    /// Shared atoms plus the classes whose label is 1.
    SharedPlus(&'a [u8]),
    /// One class group only.
    Class(usize),
    Shared,
}

/// The three parts of a bag's fidelity.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub full: Array2<f64>,
    pub labeled: Array2<f64>,
    pub absent_energy: f64,
}

fn check_coeffs(model: &DictionaryModel, coeffs: ArrayView2<f64>) -> Result<()> {
    if coeffs.nrows() != model.total_atoms() {
        return Err(Error::Dimension(format!(
            "{} coefficient rows for {} atoms",
            coeffs.nrows(),
            model.total_atoms()
        )));
    }
    Ok(())
}

/// Adds `atom * coeff` for atom `index` into `out` (`F x T`).
pub(crate) fn add_atom(
    model: &DictionaryModel,
    index: usize,
    coeff: &[f64],
    scale: f64,
    out: &mut Array2<f64>,
) {
    if coeff.iter().all(|&v| v == 0.0) {
        return;
    }
    let atom = model.atom(index);
    for (f, mut row) in out.rows_mut().into_iter().enumerate() {
        let kernel = atom.filter.row(f);
        crate::convops::conv_accumulate_scaled(
            kernel.as_slice().expect("row-major atom"),
            coeff,
            scale,
            row.as_slice_mut().expect("row-major output"),
        );
    }
}

/// Sum of `atom * coeff` over the selected atoms, `F x T`.
pub fn reconstruct(
    model: &DictionaryModel,
    coeffs: ArrayView2<f64>,
    subset: Subset<'_>,
) -> Result<Array2<f64>> {
    check_coeffs(model, coeffs)?;
    let t_len = coeffs.ncols();
    let mut out = Array2::zeros((model.height, t_len));
    for index in 0..model.total_atoms() {
        let keep = match (subset, model.owner(index)) {
            (Subset::All, _) => true,
            (Subset::Shared, owner) => owner.is_none(),
            (Subset::SharedPlus(_), None) => true,
            (Subset::SharedPlus(labels), Some(c)) => labels[c] == 1,
            (Subset::Class(c), owner) => owner == Some(c),
        };
        if keep {
            let row = coeffs.row(index).to_vec();
            add_atom(model, index, &row, 1.0, &mut out);
        }
    }
    Ok(out)
}

fn sq_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Full, labeled and absent-class parts of a bag's reconstruction.
pub fn reconstruction_parts(
    bag: &Bag,
    model: &DictionaryModel,
    coeffs: ArrayView2<f64>,
) -> Result<Reconstruction> {
    check_coeffs(model, coeffs)?;
    let shared = reconstruct(model, coeffs, Subset::Shared)?;
    let mut full = shared.clone();
    let mut labeled = shared;
    let mut absent_energy = 0.0;
    for c in 0..model.num_classes() {
        let part = reconstruct(model, coeffs, Subset::Class(c))?;
        full += &part;
        if bag.has(c) {
            labeled += &part;
        } else {
            absent_energy += sq_norm(&part);
        }
    }
    Ok(Reconstruction {
        full,
        labeled,
        absent_energy,
    })
}

/// `||x - full||² + ||x - labeled||² + Σ_{absent c} ||D_c * S_c||²`.
pub fn fidelity(bag: &Bag, model: &DictionaryModel, coeffs: ArrayView2<f64>) -> Result<f64> {
    if bag.num_classes() != model.num_classes() || bag.height() != model.height {
        return Err(Error::Dimension("bag and model disagree on shape".into()));
    }
    let parts = reconstruction_parts(bag, model, coeffs)?;
    Ok(sq_norm(&(&bag.data - &parts.full))
        + sq_norm(&(&bag.data - &parts.labeled))
        + parts.absent_energy)
}

/// Per-class logits `z_c = pool(S_c) · w_c + b_c`.
pub fn logits(
    model: &DictionaryModel,
    coeffs: ArrayView2<f64>,
    projection: &Projection,
    mode: Pooling,
) -> Result<Array1<f64>> {
    check_coeffs(model, coeffs)?;
    if projection.num_classes() != model.num_classes() {
        return Err(Error::Dimension(
            "projection and model disagree on classes".into(),
        ));
    }
    Ok((0..model.num_classes())
        .map(|c| {
            let off = model.class_offset(c);
            let block = coeffs.slice(ndarray::s![off..off + model.kc(c), ..]);
            let pooled = pool(block.t(), mode);
            pooled.dot(&projection.weights[c]) + projection.bias[c]
        })
        .collect())
}

/// `1 / (1 + e^{z})`; large logits give low scores.
#[inline]
pub fn score_from_logit(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// `e^{z} / (1 + e^{z})`, the derivative of `log(1 + e^{z})`.
#[inline]
pub fn logistic(z: f64) -> f64 {
    score_from_logit(-z)
}

/// `log(1 + e^{z})` with the exponent clamped beyond `|z| = 30`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp()
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Label scores in `(0, 1)` for one bag.
pub fn predict(
    model: &DictionaryModel,
    coeffs: ArrayView2<f64>,
    projection: &Projection,
    mode: Pooling,
) -> Result<Array1<f64>> {
    Ok(logits(model, coeffs, projection, mode)?.mapv(score_from_logit))
}

/// Cross-entropy in logit form: `Σ_c [-(1 - y_c) z_c + log(1 + e^{z_c})]`.
pub fn cross_entropy_logits(z: &[f64], y: &[u8]) -> f64 {
    z.iter()
        .zip(y)
        .map(|(&z, &y)| -(1.0 - y as f64) * z + softplus(z))
        .sum()
}

/// Cross-entropy from scores; fails on scores of exactly 0 or 1.
pub fn cross_entropy(y_hat: &[f64], y: &[u8]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::Dimension("score and label lengths differ".into()));
    }
    let mut z = Vec::with_capacity(y_hat.len());
    for &p in y_hat {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidData(format!(
                "score {p} has no finite logit; use cross_entropy_logits"
            )));
        }
        z.push(((1.0 - p) / p).ln());
    }
    Ok(cross_entropy_logits(&z, y))
}

/// `Σ_c max(0, 1 - 2 (ŷ_c - 1)(2 y_c - 1))`, evaluated literally.
pub fn hinge(y_hat: &[f64], y: &[u8]) -> f64 {
    y_hat
        .iter()
        .zip(y)
        .map(|(&p, &y)| (1.0 - 2.0 * (p - 1.0) * (2.0 * y as f64 - 1.0)).max(0.0))
        .sum()
}

/// Objective broken into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveTerms {
    pub fidelity: f64,
    pub sparsity: f64,
    pub label: f64,
    pub nuclear: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.fidelity + self.sparsity + self.label + self.nuclear
    }
}

/// Per-bag terms `(fidelity, lambda ||S||_1, eta * CE)`.
fn bag_terms(
    bag: &Bag,
    model: &DictionaryModel,
    coeffs: ArrayView2<f64>,
    projection: &Projection,
    hp: &Hyperparams,
) -> Result<(f64, f64, f64)> {
    let fid = fidelity(bag, model, coeffs)?;
    let l1 = hp.lambda * coeffs.iter().map(|v| v.abs()).sum::<f64>();
    let label = if hp.eta > 0.0 {
        let z = logits(model, coeffs, projection, Pooling::Avg)?;
        hp.eta * cross_entropy_logits(z.as_slice().expect("contiguous"), &bag.labels)
    } else {
        0.0
    };
    Ok((fid, l1, label))
}

/// `Σ_n [F_n + lambda ||S_n||_1 + eta CE_n] + mu ||D0||_*`.
///
/// Per-bag terms are computed in parallel and summed in bag order.
pub fn objective_terms(
    bags: &[Bag],
    model: &DictionaryModel,
    coeffs: &CoefficientSet,
    projection: &Projection,
    hp: &Hyperparams,
) -> Result<ObjectiveTerms> {
    if coeffs.num_bags() != bags.len() {
        return Err(Error::Dimension(format!(
            "{} coefficient sets for {} bags",
            coeffs.num_bags(),
            bags.len()
        )));
    }
    let per_bag: Vec<(f64, f64, f64)> = bags
        .par_iter()
        .zip(coeffs.per_bag.par_iter())
        .map(|(bag, s)| bag_terms(bag, model, s.view(), projection, hp))
        .collect::<Result<_>>()?;
    let mut terms = ObjectiveTerms::default();
    for (f, s, l) in per_bag {
        terms.fidelity += f;
        terms.sparsity += s;
        terms.label += l;
    }
    if hp.mu > 0.0 && model.k0() > 0 {
        terms.nuclear = hp.mu * nuclear_norm(&flatten_for_nuclear(&model.shared)?)?;
    }
    Ok(terms)
}

pub fn objective(
    bags: &[Bag],
    model: &DictionaryModel,
    coeffs: &CoefficientSet,
    projection: &Projection,
    hp: &Hyperparams,
) -> Result<f64> {
    Ok(objective_terms(bags, model, coeffs, projection, hp)?.total())
}

/// Scores for every bag, `N x C`.
pub fn predict_all(
    model: &DictionaryModel,
    coeffs: &CoefficientSet,
    projection: &Projection,
    mode: Pooling,
) -> Result<Array2<f64>> {
    let rows: Vec<Array1<f64>> = coeffs
        .per_bag
        .par_iter()
        .map(|s| predict(model, s.view(), projection, mode))
        .collect::<Result<_>>()?;
    let c = model.num_classes();
    let mut out = Array2::zeros((rows.len(), c));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&src);
    }
    Ok(out)
}

/// Convolution of a single row kernel, used by tests of the straight-line oracles.
#[doc(hidden)]
pub fn conv_row(kernel: &[f64], signal: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    conv_accumulate(kernel, signal, &mut out);
    out
}
