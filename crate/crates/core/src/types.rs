//! Domain types shared by every other module.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Slack allowed on the unit-norm atom constraint.
pub const NORM_SLACK: f64 = 1e-9;

/// One labeled example: an `F x T` signal and its bag-level labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub data: Array2<f64>,
    pub labels: Vec<u8>,
    pub id: usize,
}

impl Bag {
    pub fn new(data: Array2<f64>, labels: Vec<u8>, id: usize) -> Result<Self> {
        let bag = Bag { data, labels, id };
        bag.check()?;
        Ok(bag)
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn has(&self, class: usize) -> bool {
        self.labels[class] == 1
    }

    fn check(&self) -> Result<()> {
        if self.data.nrows() == 0 || self.data.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "bag {} has empty shape {:?}",
                self.id,
                self.data.shape()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidData(format!(
                "bag {} has label value {bad}, expected 0 or 1",
                self.id
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "bag {} contains non-finite samples",
                self.id
            )));
        }
        Ok(())
    }
}

/// A convolutional filter of shape `F x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub filter: Array2<f64>,
}

impl Atom {
    pub fn new(filter: Array2<f64>) -> Result<Self> {
        let atom = Atom { filter };
        if atom.filter.is_empty() {
            return Err(Error::Dimension("atom must be at least 1 x 1".into()));
        }
        if atom.norm() > 1.0 + NORM_SLACK {
            return Err(Error::InvalidData(format!(
                "atom norm {} exceeds 1",
                atom.norm()
            )));
        }
        Ok(atom)
    }

    pub fn zeros(height: usize, window: usize) -> Self {
        Atom {
            filter: Array2::zeros((height, window)),
        }
    }

    /// Standard-normal entries rescaled to the given Frobenius norm.
    pub fn random<R: Rng + ?Sized>(height: usize, window: usize, norm: f64, rng: &mut R) -> Self {
        let mut filter = Array2::from_shape_fn((height, window), |_| rng.sample(StandardNormal));
        let n = filter.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            filter.mapv_inplace(|v| v * norm / n);
        }
        Atom { filter }
    }

    pub fn height(&self) -> usize {
        self.filter.nrows()
    }

    pub fn window(&self) -> usize {
        self.filter.ncols()
    }

    pub fn norm(&self) -> f64 {
        self.filter.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Row-major flattening, length `F * M`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.filter.iter().copied().collect()
    }

    pub fn from_flat(height: usize, window: usize, flat: &[f64]) -> Result<Self> {
        let filter = Array2::from_shape_vec((height, window), flat.to_vec())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Ok(Atom { filter })
    }

    pub fn row(&self, f: usize) -> ArrayView1<'_, f64> {
        self.filter.row(f)
    }
}

/// Shared atoms followed by per-class atom groups.
///
/// Atoms are addressed in one flat layout: shared atoms `0..K0`, then class 0,
/// class 1, and so on. Coefficient rows use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryModel {
    pub shared: Vec<Atom>,
    pub per_class: Vec<Vec<Atom>>,
    pub window: usize,
    pub height: usize,
}

impl DictionaryModel {
    pub fn new(
        shared: Vec<Atom>,
        per_class: Vec<Vec<Atom>>,
        height: usize,
        window: usize,
    ) -> Result<Self> {
        let model = DictionaryModel {
            shared,
            per_class,
            window,
            height,
        };
        for atom in model.atoms() {
            if atom.height() != height || atom.window() != window {
                return Err(Error::Dimension(format!(
                    "atom shape {:?} differs from model shape ({height}, {window})",
                    atom.filter.shape()
                )));
            }
            if atom.norm() > 1.0 + NORM_SLACK {
                return Err(Error::InvalidData(format!(
                    "atom norm {} exceeds 1",
                    atom.norm()
                )));
            }
        }
        Ok(model)
    }

    /// Gaussian atoms scaled to norm 0.99.
    pub fn random<R: Rng + ?Sized>(
        height: usize,
        window: usize,
        k0: usize,
        kc: &[usize],
        rng: &mut R,
    ) -> Self {
        let shared = (0..k0)
            .map(|_| Atom::random(height, window, 0.99, rng))
            .collect();
        let per_class = kc
            .iter()
            .map(|&k| {
                (0..k)
                    .map(|_| Atom::random(height, window, 0.99, rng))
                    .collect()
            })
            .collect();
        DictionaryModel {
            shared,
            per_class,
            window,
            height,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn k0(&self) -> usize {
        self.shared.len()
    }

    pub fn kc(&self, class: usize) -> usize {
        self.per_class[class].len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }

    /// Total number of atoms, shared included.
    pub fn total_atoms(&self) -> usize {
        self.k0() + self.per_class.iter().map(Vec::len).sum::<usize>()
    }

    /// Offset of class `c`'s first atom in the flat layout.
    pub fn class_offset(&self, class: usize) -> usize {
        self.k0() + self.per_class[..class].iter().map(Vec::len).sum::<usize>()
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.shared.iter().chain(self.per_class.iter().flatten())
    }

    pub fn atom(&self, index: usize) -> &Atom {
        let k0 = self.k0();
        if index < k0 {
            return &self.shared[index];
        }
        let mut rest = index - k0;
        for group in &self.per_class {
            if rest < group.len() {
                return &group[rest];
            }
            rest -= group.len();
        }
        panic!("atom index {index} out of range");
    }

    pub fn atom_mut(&mut self, index: usize) -> &mut Atom {
        let k0 = self.k0();
        if index < k0 {
            return &mut self.shared[index];
        }
        let mut rest = index - k0;
        for group in &mut self.per_class {
            if rest < group.len() {
                return &mut group[rest];
            }
            rest -= group.len();
        }
        panic!("atom index {index} out of range");
    }

    /// Class owning the atom at `index`, `None` for shared atoms.
    pub fn owner(&self, index: usize) -> Option<usize> {
        if index < self.k0() {
            return None;
        }
        let mut rest = index - self.k0();
        for (c, group) in self.per_class.iter().enumerate() {
            if rest < group.len() {
                return Some(c);
            }
            rest -= group.len();
        }
        None
    }

    pub fn max_atom_norm(&self) -> f64 {
        self.atoms().map(Atom::norm).fold(0.0, f64::max)
    }
}

/// Per-bag activation maps, one `K̄ x T` matrix per bag in the dictionary's flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub per_bag: Vec<Array2<f64>>,
}

impl CoefficientSet {
    pub fn zeros(num_bags: usize, total_atoms: usize, len: usize) -> Self {
        CoefficientSet {
            per_bag: (0..num_bags)
                .map(|_| Array2::zeros((total_atoms, len)))
                .collect(),
        }
    }

    pub fn num_bags(&self) -> usize {
        self.per_bag.len()
    }

    pub fn l1_norm(&self, bag: usize) -> f64 {
        self.per_bag[bag].iter().map(|v| v.abs()).sum()
    }
}

/// Block-diagonal projection from pooled class activations to logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub weights: Vec<Array1<f64>>,
    pub bias: Array1<f64>,
}

impl Projection {
    pub fn zeros(kc: &[usize]) -> Self {
        Projection {
            weights: kc.iter().map(|&k| Array1::zeros(k)).collect(),
            bias: Array1::zeros(kc.len()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Sparsity weight.
    pub lambda: f64,
    /// Label-loss weight.
    pub eta: f64,
    /// Nuclear-norm weight on the shared dictionary.
    pub mu: f64,
    /// Extrapolation factor; 0 disables extrapolation.
    pub delta: f64,
    /// ADMM penalty.
    pub rho: f64,
    /// Relative-change stopping tolerance.
    pub eps: f64,
    /// Atom length `M`.
    pub window: usize,
    pub k0: usize,
    /// Atoms per class, used unless `kc_per_class` is set.
    pub kc: usize,
    pub kc_per_class: Option<Vec<usize>>,
    pub epochs: usize,
    pub admm_iters: usize,
    pub admm_tol: f64,
    pub newton_iters: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: 0.1,
            eta: 0.01,
            mu: 0.1,
            delta: 0.9,
            rho: 2.0,
            eps: 1e-4,
            window: 30,
            k0: 1,
            kc: 5,
            kc_per_class: None,
            epochs: 60,
            admm_iters: 50,
            admm_tol: 1e-6,
            newton_iters: 50,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [("lambda", self.lambda), ("eta", self.eta), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1), got {}", self.delta));
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return bad(format!("rho must be > 1, got {}", self.rho));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if !(self.admm_tol > 0.0) {
            return bad(format!("admm tolerance must be > 0, got {}", self.admm_tol));
        }
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        if self.admm_iters == 0 || self.newton_iters == 0 {
            return bad("iteration budgets must be positive".into());
        }
        if let Some(per) = &self.kc_per_class {
            if per.contains(&0) {
                return bad("every class needs at least one atom".into());
            }
        } else if self.kc == 0 {
            return bad("kc must be >= 1".into());
        }
        Ok(())
    }

    /// Atom counts per class for a dataset with `num_classes` classes.
    pub fn class_atom_counts(&self, num_classes: usize) -> Result<Vec<usize>> {
        match &self.kc_per_class {
            Some(per) if per.len() != num_classes => Err(Error::Config(format!(
                "kc list has {} entries for {num_classes} classes",
                per.len()
            ))),
            Some(per) => Ok(per.clone()),
            None => Ok(vec![self.kc; num_classes]),
        }
    }
}

/// Shape of a validated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSummary {
    pub bags: usize,
    pub height: usize,
    pub len: usize,
    pub classes: usize,
}

/// Confirms every bag shares `F`, `T` and `C` and holds finite data with 0/1 labels.
pub fn validate_dataset(bags: &[Bag]) -> Result<DatasetSummary> {
    let first = bags
        .first()
        .ok_or_else(|| Error::InvalidData("dataset is empty".into()))?;
    let summary = DatasetSummary {
        bags: bags.len(),
        height: first.height(),
        len: first.len(),
        classes: first.num_classes(),
    };
    for bag in bags {
        bag.check()?;
        if bag.height() != summary.height
            || bag.len() != summary.len
            || bag.num_classes() != summary.classes
        {
            return Err(Error::Dimension(format!(
                "bag {} has shape {}x{} with {} labels, expected {}x{} with {}",
                bag.id,
                bag.height(),
                bag.len(),
                bag.num_classes(),
                summary.height,
                summary.len,
                summary.classes
            )));
        }
    }
    Ok(summary)
}
