//! The five block updates and the outer training loop.
//!
//! Each epoch updates, in order: shared atoms, class atoms, shared
//! coefficients, class coefficients, projection. Within a block, atoms are
//! visited in index order and every step sees the freshest iterates.
//!
//! For any atom, the smooth fidelity seen by its contribution `P = d * s` is
//! `2 ||P - γ||² + const`, so both the atom and the coefficient gradients are
//! `4 Tᵀ(T u - γ)`. We never form `γ` explicitly: `T u - γ` equals a residual
//! field that reads straight off per-bag reconstruction caches:
//!
//! - shared atoms and classes present in the bag: `(full + labeled) / 2 - x`
//! - classes absent from the bag: `(full - x + class_c) / 2`

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bpgm::{clamp_majorizer, extrapolate_into, should_reset, MAJORIZER_FLOOR};
use crate::convops::{
    adjoint_kernel_accumulate, adjoint_signal_accumulate, atom_majorizer_accumulate,
    coeff_majorizer_accumulate, conv_accumulate_scaled,
};
use crate::model::{cross_entropy_logits, logistic, reconstruct, Subset};
use crate::prox::{
    admm_nuclear_prox_partial, nuclear_norm, nuclear_prox_objective, project_unit_ball,
    soft_threshold,
};
use crate::twodim::flatten_for_nuclear;
use crate::types::{
    validate_dataset, Atom, Bag, CoefficientSet, DictionaryModel, Hyperparams, Projection,
};
use crate::{Error, Result};

/// Coefficient-only epochs run when encoding unseen bags.
pub const ENCODE_EPOCHS: usize = 20;

/// One line of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

/// Per-bag reconstructions, each `F x T`.
#[derive(Debug, Clone)]
struct BagCache {
    shared: Array2<f64>,
    class: Vec<Array2<f64>>,
    full: Array2<f64>,
    labeled: Array2<f64>,
}

impl BagCache {
    fn build(bag: &Bag, model: &DictionaryModel, coeffs: ArrayView2<f64>) -> Result<Self> {
        let shared = reconstruct(model, coeffs, Subset::Shared)?;
        let class = (0..model.num_classes())
            .map(|c| reconstruct(model, coeffs, Subset::Class(c)))
            .collect::<Result<Vec<_>>>()?;
        let mut full = shared.clone();
        let mut labeled = shared.clone();
        for (c, part) in class.iter().enumerate() {
            full += part;
            if bag.has(c) {
                labeled += part;
            }
        }
        Ok(BagCache {
            shared,
            class,
            full,
            labeled,
        })
    }

    /// Adds a change in one atom's contribution.
    fn add(&mut self, owner: Option<usize>, present: bool, delta: &Array2<f64>) {
        match owner {
            None => self.shared += delta,
            Some(c) => self.class[c] += delta,
        }
        self.full += delta;
        if owner.is_none() || present {
            self.labeled += delta;
        }
    }

    /// Row `f` of the residual field for an atom of the given owner.
    fn field_row(
        &self,
        x: &Array2<f64>,
        owner: Option<usize>,
        present: bool,
        f: usize,
        out: &mut [f64],
    ) {
        let full = self.full.row(f);
        let xr = x.row(f);
        match owner {
            Some(c) if !present => {
                let part = self.class[c].row(f);
                for t in 0..out.len() {
                    out[t] = 0.5 * (full[t] - xr[t] + part[t]);
                }
            }
            _ => {
                let lab = self.labeled.row(f);
                for t in 0..out.len() {
                    out[t] = 0.5 * (full[t] + lab[t]) - xr[t];
                }
            }
        }
    }

    fn fidelity(&self, bag: &Bag) -> f64 {
        let mut total = 0.0;
        for ((x, full), lab) in bag.data.iter().zip(&self.full).zip(&self.labeled) {
            total += (x - full) * (x - full) + (x - lab) * (x - lab);
        }
        for (c, part) in self.class.iter().enumerate() {
            if !bag.has(c) {
                total += part.iter().map(|v| v * v).sum::<f64>();
            }
        }
        total
    }
}

fn owner_present(bag: &Bag, owner: Option<usize>) -> bool {
    owner.is_some_and(|c| bag.has(c))
}

/// Previous iterates and majorizers for extrapolation.
///
/// A majorizer of `None` means the block has not stepped yet.
#[derive(Debug, Clone)]
pub struct BlockHistory {
    /// Per atom, flat layout.
    pub dict_prev: Vec<Array2<f64>>,
    /// Per atom, length `M` (shared by every row).
    pub dict_m: Vec<Option<Vec<f64>>>,
    /// Per bag, same shape as the coefficients.
    pub coeff_prev: Vec<Array2<f64>>,
    /// Per atom, length `T`; coefficient majorizers do not depend on the bag.
    pub coeff_m: Vec<Option<Vec<f64>>>,
    /// Per class, `[w, b]`.
    pub proj_prev: Vec<Array1<f64>>,
    pub proj_m: Vec<Option<Vec<f64>>>,
}

impl BlockHistory {
    fn at_rest(model: &DictionaryModel, coeffs: &CoefficientSet, projection: &Projection) -> Self {
        let k = model.total_atoms();
        BlockHistory {
            dict_prev: model.atoms().map(|a| a.filter.clone()).collect(),
            dict_m: vec![None; k],
            coeff_prev: coeffs.per_bag.clone(),
            coeff_m: vec![None; k],
            proj_prev: (0..projection.num_classes())
                .map(|c| stacked_projection(projection, c))
                .collect(),
            proj_m: vec![None; projection.num_classes()],
        }
    }
}

fn stacked_projection(p: &Projection, c: usize) -> Array1<f64> {
    let w = &p.weights[c];
    let mut out = Array1::zeros(w.len() + 1);
    out.slice_mut(ndarray::s![..w.len()]).assign(w);
    out[w.len()] = p.bias[c];
    out
}

/// Writes the extrapolated point into `out`, or `current` when momentum is reset.
fn momentum(
    current: &[f64],
    previous: &[f64],
    m: &[f64],
    m_prev: Option<&[f64]>,
    delta: f64,
    out: &mut [f64],
) {
    match m_prev {
        Some(mp) if delta > 0.0 && !should_reset(m, mp) => {
            extrapolate_into(current, previous, m, mp, delta, out)
        }
        _ => out.copy_from_slice(current),
    }
}

/// Everything the optimizer carries between steps.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub model: DictionaryModel,
    pub coeffs: CoefficientSet,
    pub projection: Projection,
    pub history: BlockHistory,
    /// `(epoch, objective)`; entry 0 is the initialization.
    pub loss_trace: Vec<(usize, f64)>,
    /// Epoch currently being run, used in diagnostics.
    pub epoch: usize,
    caches: Vec<BagCache>,
}

impl TrainerState {
    /// Random atoms of norm 0.99, zero coefficients, zero projection.
    pub fn init(bags: &[Bag], hp: &Hyperparams) -> Result<Self> {
        hp.validate()?;
        let summary = validate_dataset(bags)?;
        let kc = hp.class_atom_counts(summary.classes)?;
        if hp.window > 2 * summary.len - 1 {
            return Err(Error::Config(format!(
                "window {} is too long for signals of length {}",
                hp.window, summary.len
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let model = DictionaryModel::random(summary.height, hp.window, hp.k0, &kc, &mut rng);
        let coeffs = CoefficientSet::zeros(bags.len(), model.total_atoms(), summary.len);
        let projection = Projection::zeros(&kc);
        Self::from_parts(bags, model, coeffs, projection)
    }

    pub fn from_parts(
        bags: &[Bag],
        model: DictionaryModel,
        coeffs: CoefficientSet,
        projection: Projection,
    ) -> Result<Self> {
        let summary = validate_dataset(bags)?;
        if summary.height != model.height || summary.classes != model.num_classes() {
            return Err(Error::Dimension(format!(
                "data has {} rows and {} classes, model has {} and {}",
                summary.height,
                summary.classes,
                model.height,
                model.num_classes()
            )));
        }
        if projection.num_classes() != model.num_classes()
            || projection
                .weights
                .iter()
                .enumerate()
                .any(|(c, w)| w.len() != model.kc(c))
        {
            return Err(Error::Dimension(
                "projection does not match class dictionaries".into(),
            ));
        }
        if coeffs.num_bags() != bags.len()
            || coeffs
                .per_bag
                .iter()
                .any(|s| s.dim() != (model.total_atoms(), summary.len))
        {
            return Err(Error::Dimension(
                "coefficients do not match bags and atoms".into(),
            ));
        }
        let history = BlockHistory::at_rest(&model, &coeffs, &projection);
        let mut state = TrainerState {
            model,
            coeffs,
            projection,
            history,
            loss_trace: Vec::new(),
            epoch: 0,
            caches: Vec::new(),
        };
        state.refresh(bags)?;
        Ok(state)
    }

    /// Rebuilds the reconstruction caches; needed after editing fields directly.
    pub fn refresh(&mut self, bags: &[Bag]) -> Result<()> {
        let model = &self.model;
        self.caches = bags
            .par_iter()
            .zip(self.coeffs.per_bag.par_iter())
            .map(|(bag, s)| BagCache::build(bag, model, s.view()))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Class logits of one bag under average pooling.
    fn logits(&self, n: usize) -> Vec<f64> {
        class_logits(&self.model, &self.coeffs.per_bag[n], &self.projection)
    }

    /// Full objective, evaluated from the caches.
    pub fn objective(&self, bags: &[Bag], hp: &Hyperparams) -> Result<f64> {
        let per_bag: Vec<f64> = (0..bags.len())
            .into_par_iter()
            .map(|n| {
                let s = &self.coeffs.per_bag[n];
                let mut v = self.caches[n].fidelity(&bags[n]);
                v += hp.lambda * s.iter().map(|x| x.abs()).sum::<f64>();
                if hp.eta > 0.0 {
                    v += hp.eta * cross_entropy_logits(&self.logits(n), &bags[n].labels);
                }
                v
            })
            .collect();
        let mut total: f64 = per_bag.iter().sum();
        if hp.mu > 0.0 && self.model.k0() > 0 {
            total += hp.mu * nuclear_norm(&flatten_for_nuclear(&self.model.shared)?)?;
        }
        Ok(total)
    }
}

fn class_logits(model: &DictionaryModel, s: &Array2<f64>, projection: &Projection) -> Vec<f64> {
    let t_len = s.ncols() as f64;
    (0..model.num_classes())
        .map(|c| {
            let off = model.class_offset(c);
            let w = &projection.weights[c];
            (0..model.kc(c))
                .map(|k| w[k] * s.row(off + k).sum() / t_len)
                .sum::<f64>()
                + projection.bias[c]
        })
        .collect()
}

fn ensure_finite<'a>(
    vals: impl IntoIterator<Item = &'a f64>,
    block: &'static str,
    epoch: usize,
) -> Result<()> {
    if vals.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { block, epoch })
    }
}

/// `(α, β)` for shared atom `k`: the full and labeled reconstructions with atom `k` left out.
pub fn residual_alpha_beta(
    bag: &Bag,
    model: &DictionaryModel,
    coeffs: ArrayView2<f64>,
    k: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if k >= model.k0() {
        return Err(Error::Dimension(format!(
            "shared atom {k} out of {}",
            model.k0()
        )));
    }
    let mut without = coeffs.to_owned();
    without.row_mut(k).fill(0.0);
    let alpha = reconstruct(model, without.view(), Subset::All)?;
    let beta = reconstruct(model, without.view(), Subset::SharedPlus(&bag.labels))?;
    Ok((alpha, beta))
}

/// `4 Σ_n diag(|T_{s_n}|ᵀ|T_{s_n}| 1)`, the atom majorizer (length `M`) for a set of activations.
pub fn dict_majorizer<'a>(
    activations: impl IntoIterator<Item = &'a [f64]>,
    window: usize,
) -> Vec<f64> {
    let mut m = vec![0.0; window];
    for s in activations {
        coeff_majorizer_accumulate(s, 4.0, &mut m);
    }
    m
}

/// `4 Σ_f diag(|T_{d_f}|ᵀ|T_{d_f}| 1) + label_curvature`, the coefficient majorizer (length `T`).
///
/// `label_curvature` is `eta * w_k² / (4 T)` for class atoms and 0 for shared ones.
pub fn coeff_majorizer(atom: &Atom, t_len: usize, label_curvature: f64) -> Vec<f64> {
    let mut m = vec![label_curvature; t_len];
    for f in 0..atom.height() {
        let row = atom.row(f).to_vec();
        atom_majorizer_accumulate(&row, 4.0, &mut m);
    }
    m
}

/// `1/4 Σ_n |ŝ_n| (|ŝ_n|ᵀ 1)`, the projection majorizer.
pub fn projection_majorizer(features: &[Vec<f64>]) -> Vec<f64> {
    let dim = features.first().map_or(0, Vec::len);
    let mut m = vec![0.0; dim];
    for s in features {
        let total: f64 = s.iter().map(|v| v.abs()).sum();
        for (mi, v) in m.iter_mut().zip(s) {
            *mi += 0.25 * v.abs() * total;
        }
    }
    m
}

/// Gradient of `Σ_n [-(1 - y_n) ŝ_nᵀw + log(1 + e^{ŝ_nᵀw})]` at `w`.
pub fn projection_gradient(features: &[Vec<f64>], labels: &[u8], w: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    for (s, &y) in features.iter().zip(labels) {
        let z: f64 = s.iter().zip(w).map(|(a, b)| a * b).sum();
        let r = logistic(z) - (1.0 - y as f64);
        for (gi, v) in g.iter_mut().zip(s) {
            *gi += r * v;
        }
    }
    g
}

/// `[pool(S_c), 1]` for one bag.
fn projection_features(model: &DictionaryModel, s: &Array2<f64>, c: usize) -> Vec<f64> {
    let off = model.class_offset(c);
    let t_len = s.ncols() as f64;
    let mut v: Vec<f64> = (0..model.kc(c))
        .map(|k| s.row(off + k).sum() / t_len)
        .collect();
    v.push(1.0);
    v
}

/// `T_d(u)` for every atom row, `F x T`.
fn conv_rows(atom: &Array2<f64>, u: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros((atom.nrows(), u.len()));
    for (f, mut row) in out.rows_mut().into_iter().enumerate() {
        let kernel = atom.row(f).to_vec();
        conv_accumulate_scaled(&kernel, u, 1.0, row.as_slice_mut().expect("row-major"));
    }
    out
}

/// Atom update for flat index `idx`: gradient and majorizer summed over bags.
fn dict_step(state: &mut TrainerState, bags: &[Bag], hp: &Hyperparams, idx: usize) -> Result<()> {
    let model = &state.model;
    let (height, window) = (model.height, model.window);
    let owner = model.owner(idx);
    let block = if owner.is_none() {
        "shared dictionary"
    } else {
        "class dictionary"
    };
    let current = model.atom(idx).filter.clone();

    let activations: Vec<&[f64]> = state
        .coeffs
        .per_bag
        .iter()
        .map(|s| s.row(idx).to_slice().expect("row-major coefficients"))
        .collect();
    let raw_m = dict_majorizer(activations.iter().copied(), window);
    let idle = raw_m.iter().all(|&v| v < MAJORIZER_FLOOR);
    if idle {
        // no bag uses this atom; its gradient is zero too
        return Ok(());
    }
    let mut m = raw_m;
    clamp_majorizer(&mut m);

    let mut tilde = Array2::zeros((height, window));
    for f in 0..height {
        momentum(
            current.row(f).as_slice().expect("row-major"),
            state.history.dict_prev[idx]
                .row(f)
                .as_slice()
                .expect("row-major"),
            &m,
            state.history.dict_m[idx].as_deref(),
            hp.delta,
            tilde.row_mut(f).as_slice_mut().expect("row-major"),
        );
    }
    let step = &tilde - &current;
    let moved = step.iter().any(|&v| v != 0.0);

    let caches = &state.caches;
    let grads: Vec<Array2<f64>> = bags
        .par_iter()
        .zip(activations.par_iter())
        .zip(caches.par_iter())
        .map(|((bag, &s), cache)| {
            let mut g = Array2::zeros((height, window));
            if s.iter().all(|&v| v == 0.0) {
                return g;
            }
            let present = owner_present(bag, owner);
            let mut e = vec![0.0; s.len()];
            for f in 0..height {
                cache.field_row(&bag.data, owner, present, f, &mut e);
                if moved {
                    let k = step.row(f).to_vec();
                    conv_accumulate_scaled(&k, s, 1.0, &mut e);
                }
                adjoint_kernel_accumulate(s, &e, g.row_mut(f).as_slice_mut().expect("row-major"));
            }
            g
        })
        .collect();
    let mut grad = Array2::<f64>::zeros((height, window));
    for g in &grads {
        grad += g;
    }
    grad *= 4.0;

    let m_flat: Vec<f64> = (0..height).flat_map(|_| m.iter().copied()).collect();
    let nu: Vec<f64> = tilde
        .iter()
        .zip(grad.iter())
        .zip(&m_flat)
        .map(|((d, g), w)| d - g / w)
        .collect();
    ensure_finite(&nu, block, state.epoch)?;

    let next: Vec<f64> = match owner {
        None => shared_prox(&state.model, idx, &nu, &m_flat, hp)?,
        Some(_) => project_unit_ball(&nu, &m_flat, hp.newton_iters)?.point,
    };
    ensure_finite(&next, block, state.epoch)?;
    let next = Array2::from_shape_vec((height, window), next).expect("atom shape");

    let change = &next - &current;
    if change.iter().any(|&v| v != 0.0) {
        state
            .caches
            .par_iter_mut()
            .zip(bags.par_iter())
            .zip(activations.par_iter())
            .for_each(|((cache, bag), &s)| {
                if s.iter().any(|&v| v != 0.0) {
                    let mut delta = Array2::zeros((height, s.len()));
                    for f in 0..height {
                        let k = change.row(f).to_vec();
                        conv_accumulate_scaled(
                            &k,
                            s,
                            1.0,
                            delta.row_mut(f).as_slice_mut().expect("row-major"),
                        );
                    }
                    cache.add(owner, owner_present(bag, owner), &delta);
                }
            });
    }
    state.history.dict_prev[idx] = current;
    state.history.dict_m[idx] = Some(m);
    state.model.atom_mut(idx).filter = next;
    Ok(())
}

/// Nuclear-norm prox on the shared atoms with every atom but `idx` pinned.
///
/// Keeps the current atom whenever the solver's answer does not lower the prox objective.
fn shared_prox(
    model: &DictionaryModel,
    idx: usize,
    nu: &[f64],
    m: &[f64],
    hp: &Hyperparams,
) -> Result<Vec<f64>> {
    let k0 = model.k0();
    let mut nus: Vec<Vec<f64>> = model.shared.iter().map(Atom::to_flat).collect();
    let mut ms: Vec<Vec<f64>> = vec![vec![1.0; nu.len()]; k0];
    let current = nus[idx].clone();
    nus[idx] = nu.to_vec();
    ms[idx] = m.to_vec();
    let mut free = vec![false; k0];
    free[idx] = true;
    let outcome =
        admm_nuclear_prox_partial(&nus, &ms, &free, hp.mu, hp.rho, hp.admm_iters, hp.admm_tol)?;
    let mut at_current = outcome.atoms.clone();
    at_current[idx] = current.clone();
    let keep = nuclear_prox_objective(&at_current, &nus, &ms, hp.mu)?;
    if outcome.objective <= keep {
        Ok(outcome.atoms[idx].clone())
    } else {
        Ok(current)
    }
}

/// Shared atoms, one at a time, each followed by the nuclear-norm prox.
pub fn update_shared_dict(state: &mut TrainerState, bags: &[Bag], hp: &Hyperparams) -> Result<()> {
    for idx in 0..state.model.k0() {
        dict_step(state, bags, hp, idx)?;
    }
    Ok(())
}

/// Class atoms, class by class, each projected onto the unit ball.
pub fn update_class_dicts(state: &mut TrainerState, bags: &[Bag], hp: &Hyperparams) -> Result<()> {
    for idx in state.model.k0()..state.model.total_atoms() {
        dict_step(state, bags, hp, idx)?;
    }
    Ok(())
}

/// Label part of a class-coefficient step.
#[derive(Debug, Clone, Copy)]
struct LabelTerm {
    eta: f64,
    weight: f64,
    target: f64,
}

/// Gradient of a bag's smooth loss along one coefficient row.
///
/// `field` must hold `T u - γ` at the current row for every atom row; it is
/// shifted to the extrapolated point here.
fn coeff_gradient(
    atom: &Array2<f64>,
    field: &mut Array2<f64>,
    step: Option<&[f64]>,
    label: Option<(LabelTerm, f64)>,
) -> Vec<f64> {
    let t_len = field.ncols();
    let mut g = vec![0.0; t_len];
    for f in 0..atom.nrows() {
        let kernel = atom.row(f).to_vec();
        let e = field.row_mut(f).into_slice().expect("row-major");
        if let Some(step) = step {
            conv_accumulate_scaled(&kernel, step, 1.0, e);
        }
        adjoint_signal_accumulate(&kernel, e, &mut g);
    }
    for v in &mut g {
        *v *= 4.0;
    }
    if let Some((term, z)) = label {
        let lg = term.eta * (logistic(z) - term.target) * term.weight / t_len as f64;
        for v in &mut g {
            *v += lg;
        }
    }
    g
}

/// Shared data for a coefficient block: atoms, majorizers and momentum switches.
struct CoeffPlan {
    indices: Vec<usize>,
    atoms: Vec<Array2<f64>>,
    majorizers: Vec<Vec<f64>>,
    use_momentum: Vec<bool>,
}

/// Gradient of bag `n`'s smooth loss (fidelity plus `η` cross-entropy) along
/// the coefficient row of atom `idx`, at the current iterate.
///
/// This is the quantity the coefficient blocks step along before extrapolation.
pub fn coeff_row_gradient(
    state: &TrainerState,
    bags: &[Bag],
    hp: &Hyperparams,
    n: usize,
    idx: usize,
) -> Result<Vec<f64>> {
    let model = &state.model;
    let bag = bags
        .get(n)
        .ok_or_else(|| Error::Dimension(format!("bag {n} out of {}", bags.len())))?;
    if idx >= model.total_atoms() || state.caches.len() != bags.len() {
        return Err(Error::Dimension(format!(
            "atom {idx} or caches out of range"
        )));
    }
    let s = &state.coeffs.per_bag[n];
    let owner = model.owner(idx);
    let present = owner.is_none_or(|c| bag.has(c));
    let mut field = Array2::zeros((model.height, s.ncols()));
    for f in 0..model.height {
        let row = field.row_mut(f).into_slice().expect("row-major");
        state.caches[n].field_row(&bag.data, owner, present, f, row);
    }
    let label = owner.map(|c| {
        let term = LabelTerm {
            eta: hp.eta,
            weight: state.projection.weights[c][idx - model.class_offset(c)],
            target: 1.0 - bag.labels[c] as f64,
        };
        (term, class_logits(model, s, &state.projection)[c])
    });
    Ok(coeff_gradient(
        &model.atom(idx).filter,
        &mut field,
        None,
        label,
    ))
}

fn coeff_plan(
    state: &TrainerState,
    hp: &Hyperparams,
    indices: Vec<usize>,
    t_len: usize,
) -> CoeffPlan {
    let model = &state.model;
    let mut atoms = Vec::new();
    let mut majorizers = Vec::new();
    let mut use_momentum = Vec::new();
    for &idx in &indices {
        let curvature = match model.owner(idx) {
            Some(c) if hp.eta > 0.0 => {
                let w = state.projection.weights[c][idx - model.class_offset(c)];
                hp.eta * w * w / (4.0 * t_len as f64)
            }
            _ => 0.0,
        };
        let mut m = coeff_majorizer(model.atom(idx), t_len, curvature);
        clamp_majorizer(&mut m);
        let go = hp.delta > 0.0
            && state.history.coeff_m[idx]
                .as_deref()
                .is_some_and(|prev| !should_reset(&m, prev));
        atoms.push(model.atom(idx).filter.clone());
        majorizers.push(m);
        use_momentum.push(go);
    }
    CoeffPlan {
        indices,
        atoms,
        majorizers,
        use_momentum,
    }
}

fn coeff_block(
    state: &mut TrainerState,
    bags: &[Bag],
    hp: &Hyperparams,
    class_block: bool,
) -> Result<()> {
    let model = &state.model;
    let indices: Vec<usize> = if class_block {
        (model.k0()..model.total_atoms()).collect()
    } else {
        (0..model.k0()).collect()
    };
    if indices.is_empty() {
        return Ok(());
    }
    let t_len = bags[0].len();
    let plan = coeff_plan(state, hp, indices, t_len);
    let block = if class_block {
        "class coefficients"
    } else {
        "shared coefficients"
    };
    let epoch = state.epoch;
    let model = &state.model;
    let projection = &state.projection;
    let history_m = &state.history.coeff_m;

    bags.par_iter()
        .zip(state.coeffs.per_bag.par_iter_mut())
        .zip(state.history.coeff_prev.par_iter_mut())
        .zip(state.caches.par_iter_mut())
        .try_for_each(|(((bag, s), prev), cache)| -> Result<()> {
            let mut logits = if class_block && hp.eta > 0.0 {
                class_logits(model, s, projection)
            } else {
                Vec::new()
            };
            let mut tilde = vec![0.0; t_len];
            let mut field = Array2::zeros((model.height, t_len));
            for (i, &idx) in plan.indices.iter().enumerate() {
                let owner = model.owner(idx);
                let present = owner_present(bag, owner);
                let current = s.row(idx).to_vec();
                let m = &plan.majorizers[i];
                if plan.use_momentum[i] {
                    let p = prev.row(idx).to_vec();
                    extrapolate_into(
                        &current,
                        &p,
                        m,
                        history_m[idx].as_deref().expect("checked"),
                        hp.delta,
                        &mut tilde,
                    );
                } else {
                    tilde.copy_from_slice(&current);
                }
                let step: Vec<f64> = tilde.iter().zip(&current).map(|(a, b)| a - b).collect();
                let moved = step.iter().any(|&v| v != 0.0);

                for f in 0..model.height {
                    cache.field_row(
                        &bag.data,
                        owner,
                        present,
                        f,
                        field.row_mut(f).into_slice().expect("row-major"),
                    );
                }
                let label = match owner {
                    Some(c) if !logits.is_empty() => {
                        let k = idx - model.class_offset(c);
                        let term = LabelTerm {
                            eta: hp.eta,
                            weight: projection.weights[c][k],
                            target: 1.0 - bag.labels[c] as f64,
                        };
                        let shift: f64 = step.iter().sum::<f64>() / t_len as f64;
                        Some((term, logits[c] + term.weight * shift))
                    }
                    _ => None,
                };
                let grad = coeff_gradient(
                    &plan.atoms[i],
                    &mut field,
                    moved.then_some(&step[..]),
                    label,
                );
                let next: Vec<f64> = (0..t_len)
                    .map(|t| soft_threshold(tilde[t] - grad[t] / m[t], hp.lambda / m[t]))
                    .collect();
                ensure_finite(&next, block, epoch)?;

                let change: Vec<f64> = next.iter().zip(&current).map(|(a, b)| a - b).collect();
                if change.iter().any(|&v| v != 0.0) {
                    cache.add(owner, present, &conv_rows(&plan.atoms[i], &change));
                    if let (Some(c), Some(_)) = (owner, label) {
                        let k = idx - model.class_offset(c);
                        logits[c] +=
                            projection.weights[c][k] * change.iter().sum::<f64>() / t_len as f64;
                    }
                }
                prev.row_mut(idx).assign(&Array1::from(current));
                s.row_mut(idx).assign(&Array1::from(next));
            }
            Ok(())
        })?;
    for (i, idx) in plan.indices.into_iter().enumerate() {
        state.history.coeff_m[idx] = Some(plan.majorizers[i].clone());
    }
    Ok(())
}

/// Shared coefficients of every bag, soft-thresholded in the majorizer metric.
pub fn update_shared_coeffs(
    state: &mut TrainerState,
    bags: &[Bag],
    hp: &Hyperparams,
) -> Result<()> {
    coeff_block(state, bags, hp, false)
}

/// Class coefficients of every bag, including the label term.
pub fn update_class_coeffs(state: &mut TrainerState, bags: &[Bag], hp: &Hyperparams) -> Result<()> {
    coeff_block(state, bags, hp, true)
}

/// Logistic fit of `[w_c, b_c]` per class on the average-pooled class activations.
pub fn update_projection(state: &mut TrainerState, bags: &[Bag], hp: &Hyperparams) -> Result<()> {
    for c in 0..state.model.num_classes() {
        let features: Vec<Vec<f64>> = state
            .coeffs
            .per_bag
            .par_iter()
            .map(|s| projection_features(&state.model, s, c))
            .collect();
        let labels: Vec<u8> = bags.iter().map(|b| b.labels[c]).collect();
        let mut m = projection_majorizer(&features);
        clamp_majorizer(&mut m);
        let current = stacked_projection(&state.projection, c).to_vec();
        let mut tilde = vec![0.0; current.len()];
        momentum(
            &current,
            state.history.proj_prev[c].as_slice().expect("contiguous"),
            &m,
            state.history.proj_m[c].as_deref(),
            hp.delta,
            &mut tilde,
        );
        let grad = projection_gradient(&features, &labels, &tilde);
        let next: Vec<f64> = (0..tilde.len())
            .map(|i| tilde[i] - grad[i] / m[i])
            .collect();
        ensure_finite(&next, "projection", state.epoch)?;
        let k = next.len() - 1;
        state.projection.weights[c] = Array1::from(next[..k].to_vec());
        state.projection.bias[c] = next[k];
        state.history.proj_prev[c] = Array1::from(current);
        state.history.proj_m[c] = Some(m);
    }
    Ok(())
}

/// One epoch: the five blocks in order.
pub fn run_epoch(state: &mut TrainerState, bags: &[Bag], hp: &Hyperparams) -> Result<()> {
    state.refresh(bags)?;
    update_shared_dict(state, bags, hp)?;
    update_class_dicts(state, bags, hp)?;
    update_shared_coeffs(state, bags, hp)?;
    update_class_coeffs(state, bags, hp)?;
    update_projection(state, bags, hp)?;
    Ok(())
}

/// Trains until the relative objective change drops to `eps` or the epoch budget runs out.
///
/// `sink` sees the initialization (epoch 0) and every completed epoch.
pub fn train(
    bags: &[Bag],
    hp: &Hyperparams,
    sink: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainerState> {
    let mut state = TrainerState::init(bags, hp)?;
    train_from(&mut state, bags, hp, sink)?;
    Ok(state)
}

/// Continues training an existing state.
pub fn train_from(
    state: &mut TrainerState,
    bags: &[Bag],
    hp: &Hyperparams,
    sink: &mut dyn FnMut(&EpochRecord),
) -> Result<()> {
    hp.validate()?;
    let start = Instant::now();
    let mut record = |state: &mut TrainerState, epoch: usize, objective: f64| {
        state.loss_trace.push((epoch, objective));
        sink(&EpochRecord {
            epoch,
            objective,
            wall_time: start.elapsed().as_secs_f64(),
        });
    };
    let first = state.loss_trace.last().map_or(0, |&(e, _)| e);
    let mut prev = state.objective(bags, hp)?;
    ensure_finite([&prev], "initialization", first)?;
    if state.loss_trace.is_empty() {
        record(state, 0, prev);
    }
    for epoch in first + 1..=first + hp.epochs {
        state.epoch = epoch;
        run_epoch(state, bags, hp)?;
        let obj = state.objective(bags, hp)?;
        ensure_finite([&obj], "objective", epoch)?;
        record(state, epoch, obj);
        if (obj - prev).abs() / prev.abs().max(1e-12) <= hp.eps {
            break;
        }
        prev = obj;
    }
    Ok(())
}

/// Sparse-codes bags against a frozen model.
///
/// Labels are unknown, so every class is treated as present and the label
/// term is off; only the two coefficient blocks run.
pub fn encode(
    bags: &[Bag],
    model: &DictionaryModel,
    projection: &Projection,
    hp: &Hyperparams,
    epochs: usize,
) -> Result<CoefficientSet> {
    let c = model.num_classes();
    let unlabeled: Vec<Bag> = bags
        .iter()
        .map(|b| Bag {
            data: b.data.clone(),
            labels: vec![1; c],
            id: b.id,
        })
        .collect();
    let summary = validate_dataset(&unlabeled)?;
    let coeffs = CoefficientSet::zeros(bags.len(), model.total_atoms(), summary.len);
    let mut state =
        TrainerState::from_parts(&unlabeled, model.clone(), coeffs, projection.clone())?;
    let hp = Hyperparams {
        eta: 0.0,
        ..hp.clone()
    };
    for epoch in 1..=epochs {
        state.epoch = epoch;
        update_shared_coeffs(&mut state, &unlabeled, &hp)?;
        update_class_coeffs(&mut state, &unlabeled, &hp)?;
    }
    Ok(state.coeffs)
}
