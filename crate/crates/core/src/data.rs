//! Synthetic burst dataset, white noise, and the binary dataset/model containers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::types::{Atom, Bag, DictionaryModel, Hyperparams, Projection};
use crate::{Error, Result};

/// Parameters of the synthetic multi-label burst dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Discriminative classes; one extra background bank is always added.
    pub classes: usize,
    pub features_per_class: usize,
    pub feature_len: usize,
    pub signal_len: usize,
    pub max_repeats: usize,
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub per_combo_test: usize,
    pub per_combo_train: usize,
    /// Rows per bag; values above 1 give each class its own row profile.
    pub height: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 4,
            features_per_class: 5,
            feature_len: 30,
            signal_len: 1600,
            max_repeats: 5,
            snr_db: 10.0,
            per_combo_test: 50,
            per_combo_train: 50,
            height: 1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > 16 {
            return Err(Error::Config("classes must be in 1..=16".into()));
        }
        if self.features_per_class == 0 || self.feature_len == 0 || self.height == 0 {
            return Err(Error::Config("feature bank sizes must be positive".into()));
        }
        if self.feature_len > self.signal_len {
            return Err(Error::Config(format!(
                "feature length {} exceeds signal length {}",
                self.feature_len, self.signal_len
            )));
        }
        if self.max_repeats == 0 {
            return Err(Error::Config("max_repeats must be >= 1".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr must not be NaN".into()));
        }
        Ok(())
    }

    /// Default generator settings at another signal length.
    ///
    /// Below the default length, features and repeat counts shrink in
    /// proportion so that every label subset still fits.
    pub fn for_length(signal_len: usize) -> Self {
        let base = SynthSpec::default();
        if signal_len >= base.signal_len {
            return SynthSpec { signal_len, ..base };
        }
        let scale = signal_len as f64 / base.signal_len as f64;
        SynthSpec {
            signal_len,
            feature_len: ((base.feature_len as f64 * scale).round() as usize)
                .clamp(4, base.feature_len),
            max_repeats: ((base.max_repeats as f64 * scale).round() as usize)
                .clamp(1, base.max_repeats),
            ..base
        }
    }

    /// Index of the background bank.
    pub fn background(&self) -> usize {
        self.classes
    }
}

/// `banks[c][f]` is feature `f` of class `c`; the last bank is background.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub banks: Vec<Vec<Vec<f64>>>,
}

impl FeatureBank {
    pub fn feature(&self, class: usize, f: usize) -> &[f64] {
        &self.banks[class][f]
    }

    /// `class,feature,v0,...` rows with a header line.
    pub fn to_csv(&self) -> String {
        let len = self
            .banks
            .first()
            .and_then(|b| b.first())
            .map_or(0, Vec::len);
        let mut out = String::from("class,feature");
        for i in 0..len {
            out.push_str(&format!(",v{i}"));
        }
        out.push('\n');
        for (c, bank) in self.banks.iter().enumerate() {
            for (f, feat) in bank.iter().enumerate() {
                out.push_str(&format!("{c},{f}"));
                for v in feat {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Sinusoids for even `f`, sawtooths for odd `f`; frequency `(f + 1 + 5c) / 60`
/// cycles per sample (with 5 replaced by the bank size), unit peak.
///
/// The sinusoids are centred on the middle of the window, so they are odd
/// about it and sum to zero. Sawtooths rise from 0 to 1; a bipolar sawtooth
/// at the lowest frequency is one ramp and nearly collinear with the
/// half-period sinusoid beside it. The bank does not depend on the seed.
pub fn make_features(spec: &SynthSpec) -> FeatureBank {
    let n = spec.feature_len;
    let per = spec.features_per_class;
    let mid = (n as f64 - 1.0) / 2.0;
    let banks = (0..=spec.classes)
        .map(|c| {
            (0..per)
                .map(|f| {
                    let freq = (f + 1 + per * c) as f64 / 60.0;
                    let raw: Vec<f64> = (0..n)
                        .map(|t| {
                            if f % 2 == 0 {
                                (2.0 * std::f64::consts::PI * freq * (t as f64 - mid)).sin()
                            } else {
                                let phase = freq * t as f64;
                                phase - phase.floor()
                            }
                        })
                        .collect();
                    let peak = raw.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    if peak > 0.0 {
                        raw.iter().map(|v| v / peak).collect()
                    } else {
                        raw
                    }
                })
                .collect()
        })
        .collect();
    FeatureBank { banks }
}

/// Row weights for class `c` in an `F`-row bag: a Gaussian bump whose centre
/// moves with the class. All ones when `F == 1`.
pub fn row_profile(class: usize, num_banks: usize, height: usize) -> Vec<f64> {
    if height == 1 {
        return vec![1.0];
    }
    let centre = (class as f64 + 0.5) * height as f64 / num_banks as f64;
    let width = (height as f64 / num_banks as f64).max(1.0);
    (0..height)
        .map(|f| {
            let d = (f as f64 + 0.5 - centre) / width;
            (-0.5 * d * d).exp()
        })
        .collect()
}

/// One placed burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Burst {
    /// Bank index; equals the class count for background.
    pub class: usize,
    pub feature: usize,
    pub start: usize,
    pub repeats: usize,
}

/// Generated train and test sets plus ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub train: Vec<Bag>,
    pub test: Vec<Bag>,
    pub features: FeatureBank,
    pub train_bursts: Vec<Vec<Burst>>,
    pub test_bursts: Vec<Vec<Burst>>,
}

/// Label subsets as 0/1 vectors, in increasing bitmask order.
pub fn label_subsets(classes: usize, min_size: usize) -> Vec<Vec<u8>> {
    (1u32..(1 << classes))
        .filter(|mask| mask.count_ones() as usize >= min_size)
        .map(|mask| (0..classes).map(|c| ((mask >> c) & 1) as u8).collect())
        .collect()
}

fn draw_bursts<R: Rng>(labels: &[u8], spec: &SynthSpec, rng: &mut R) -> Vec<Burst> {
    let mut bursts = Vec::new();
    let mut push = |class: usize, count: usize, rng: &mut R| {
        for _ in 0..count {
            bursts.push(Burst {
                class,
                feature: rng.random_range(0..spec.features_per_class),
                start: 0,
                repeats: rng.random_range(1..=spec.max_repeats),
            });
        }
    };
    for (c, &y) in labels.iter().enumerate() {
        if y == 1 {
            let count = rng.random_range(1..=3);
            push(c, count, rng);
        }
    }
    let count = rng.random_range(1..=2);
    push(spec.background(), count, rng);
    bursts
}

/// Places bursts without overlap; gaps are a uniform composition of the free space.
fn place<R: Rng>(bursts: &mut [Burst], spec: &SynthSpec, rng: &mut R) -> bool {
    let lens: Vec<usize> = bursts
        .iter()
        .map(|b| b.repeats * spec.feature_len)
        .collect();
    let used: usize = lens.iter().sum();
    if used > spec.signal_len {
        return false;
    }
    let free = spec.signal_len - used;
    let n = bursts.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut slots: Vec<usize> = sample(rng, free + n, n).into_vec();
    slots.sort_unstable();
    let mut offset = 0;
    for (rank, &which) in order.iter().enumerate() {
        bursts[which].start = slots[rank] - rank + offset;
        offset += lens[which];
    }
    true
}

fn render(bursts: &[Burst], bank: &FeatureBank, spec: &SynthSpec) -> Array2<f64> {
    let mut x = Array2::zeros((spec.height, spec.signal_len));
    for b in bursts {
        let feat = bank.feature(b.class, b.feature);
        let profile = row_profile(b.class, spec.classes + 1, spec.height);
        for r in 0..b.repeats {
            let base = b.start + r * spec.feature_len;
            for (i, &v) in feat.iter().enumerate() {
                for (f, &p) in profile.iter().enumerate() {
                    x[[f, base + i]] += p * v;
                }
            }
        }
    }
    x
}

fn make_bag<R: Rng>(
    labels: &[u8],
    id: usize,
    bank: &FeatureBank,
    spec: &SynthSpec,
    rng: &mut R,
) -> Result<(Bag, Vec<Burst>)> {
    for _ in 0..100 {
        let mut bursts = draw_bursts(labels, spec, rng);
        if place(&mut bursts, spec, rng) {
            let clean = render(&bursts, bank, spec);
            let data = awgn(&clean, spec.snr_db, rng)?;
            return Ok((Bag::new(data, labels.to_vec(), id)?, bursts));
        }
    }
    Err(Error::Placement(format!(
        "could not fit bursts into {} samples after 100 attempts",
        spec.signal_len
    )))
}

/// Train bags cover every label subset of size at least 2; test bags cover all
/// non-empty subsets. Pure function of `spec`, seed included.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticSet> {
    spec.validate()?;
    let features = make_features(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut build = |subsets: Vec<Vec<u8>>, per: usize| -> Result<(Vec<Bag>, Vec<Vec<Burst>>)> {
        let mut bags = Vec::with_capacity(subsets.len() * per);
        let mut meta = Vec::with_capacity(subsets.len() * per);
        for labels in &subsets {
            for _ in 0..per {
                let (bag, bursts) = make_bag(labels, bags.len(), &features, spec, &mut rng)?;
                bags.push(bag);
                meta.push(bursts);
            }
        }
        Ok((bags, meta))
    };
    let (train, train_bursts) = build(label_subsets(spec.classes, 2), spec.per_combo_train)?;
    let (test, test_bursts) = build(label_subsets(spec.classes, 1), spec.per_combo_test)?;
    Ok(SyntheticSet {
        train,
        test,
        features,
        train_bursts,
        test_bursts,
    })
}

/// Adds white Gaussian noise with variance `mean(x²) · 10^(-snr_db / 10)`.
pub fn awgn<R: Rng + ?Sized>(x: &Array2<f64>, snr_db: f64, rng: &mut R) -> Result<Array2<f64>> {
    let power = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if !(power > 0.0) {
        return Err(Error::InvalidData(
            "SNR is undefined for an all-zero signal".into(),
        ));
    }
    if snr_db == f64::INFINITY {
        return Ok(x.clone());
    }
    let sigma = (power * 10f64.powf(-snr_db / 10.0)).sqrt();
    Ok(x.mapv(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)))
}

const DATASET_MAGIC: &[u8; 4] = b"WSCD";
const MODEL_MAGIC: &[u8; 4] = b"WSCM";
const VERSION: u16 = 1;

fn put_u16(w: &mut impl Write, v: u16) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64s<'a>(w: &mut impl Write, vals: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn get_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn get_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(get_bytes::<2>(r)?))
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(get_bytes::<4>(r)?) as usize)
}

/// Reads exactly `len` bytes without trusting `len` for the allocation size.
fn get_block(r: &mut impl Read, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Format("file is truncated".into()));
    }
    Ok(buf)
}

fn get_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let bytes = count
        .checked_mul(8)
        .ok_or_else(|| Error::Format("declared size overflows".into()))?;
    Ok(get_block(r, bytes)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let got = get_bytes::<4>(r)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = get_u16(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn expect_end(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format(
            "trailing bytes after declared content".into(),
        )),
    }
}

fn product(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("declared size overflows".into()))
}

/// Serializes bags; all bags must share one shape.
pub fn write_dataset(w: &mut impl Write, bags: &[Bag]) -> Result<()> {
    let s = crate::validate_dataset(bags)?;
    w.write_all(DATASET_MAGIC)?;
    put_u16(w, VERSION)?;
    put_u16(w, 0)?;
    for v in [s.bags, s.height, s.len, s.classes] {
        put_u32(w, v)?;
    }
    for bag in bags {
        w.write_all(&bag.labels)?;
    }
    for bag in bags {
        put_f64s(w, bag.data.iter())?;
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Vec<Bag>> {
    header(r, DATASET_MAGIC)?;
    let flags = get_u16(r)?;
    if flags != 0 {
        return Err(Error::Format(format!("unknown flags {flags:#x}")));
    }
    let (n, f, t, c) = (get_u32(r)?, get_u32(r)?, get_u32(r)?, get_u32(r)?);
    if n == 0 || f == 0 || t == 0 {
        return Err(Error::Format("dataset dimensions must be positive".into()));
    }
    let labels = get_block(r, product(&[n, c])?)?;
    let payload = get_f64s(r, product(&[n, f, t])?)?;
    expect_end(r)?;
    let per = f * t;
    (0..n)
        .map(|i| {
            let data = Array2::from_shape_vec((f, t), payload[i * per..(i + 1) * per].to_vec())
                .expect("sized above");
            Bag::new(data, labels[i * c..(i + 1) * c].to_vec(), i)
        })
        .collect()
}

/// Hyperparameters stored alongside a trained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredParams {
    pub lambda: f64,
    pub eta: f64,
    pub mu: f64,
    pub delta: f64,
    pub rho: f64,
    pub eps: f64,
}

impl From<&Hyperparams> for StoredParams {
    fn from(hp: &Hyperparams) -> Self {
        StoredParams {
            lambda: hp.lambda,
            eta: hp.eta,
            mu: hp.mu,
            delta: hp.delta,
            rho: hp.rho,
            eps: hp.eps,
        }
    }
}

impl StoredParams {
    /// Copies the stored values over `hp`.
    pub fn apply_to(&self, hp: &mut Hyperparams) {
        hp.lambda = self.lambda;
        hp.eta = self.eta;
        hp.mu = self.mu;
        hp.delta = self.delta;
        hp.rho = self.rho;
        hp.eps = self.eps;
    }
}

/// Dictionaries, projection and hyperparameters of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: DictionaryModel,
    pub projection: Projection,
    pub params: StoredParams,
}

pub fn write_model(w: &mut impl Write, file: &ModelFile) -> Result<()> {
    let m = &file.model;
    let kc = m.class_counts();
    if file.projection.num_classes() != kc.len()
        || file
            .projection
            .weights
            .iter()
            .zip(&kc)
            .any(|(w, &k)| w.len() != k)
    {
        return Err(Error::Dimension(
            "projection does not match the class dictionaries".into(),
        ));
    }
    w.write_all(MODEL_MAGIC)?;
    put_u16(w, VERSION)?;
    for v in [m.height, m.window, kc.len(), m.k0()] {
        put_u32(w, v)?;
    }
    for &k in &kc {
        put_u32(w, k)?;
    }
    for atom in m.atoms() {
        put_f64s(w, atom.filter.iter())?;
    }
    for wc in &file.projection.weights {
        put_f64s(w, wc.iter())?;
    }
    put_f64s(w, file.projection.bias.iter())?;
    let p = &file.params;
    put_f64s(w, &[p.lambda, p.eta, p.mu, p.delta, p.rho, p.eps])?;
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<ModelFile> {
    header(r, MODEL_MAGIC)?;
    let (f, m, c, k0) = (get_u32(r)?, get_u32(r)?, get_u32(r)?, get_u32(r)?);
    if f == 0 || m == 0 {
        return Err(Error::Format("atom shape must be positive".into()));
    }
    let kc_bytes = get_block(r, product(&[c, 4])?)?;
    let kc: Vec<usize> = kc_bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4-byte chunk")) as usize)
        .collect();
    let per = product(&[f, m])?;
    let mut read_atoms = |count: usize| -> Result<Vec<Atom>> {
        let vals = get_f64s(r, product(&[count, per])?)?;
        vals.chunks_exact(per)
            .map(|chunk| Atom::new(Array2::from_shape_vec((f, m), chunk.to_vec()).expect("sized")))
            .collect()
    };
    let shared = read_atoms(k0)?;
    let per_class = kc
        .iter()
        .map(|&k| read_atoms(k))
        .collect::<Result<Vec<_>>>()?;
    let weights = kc
        .iter()
        .map(|&k| get_f64s(r, k).map(Array1::from))
        .collect::<Result<Vec<_>>>()?;
    let bias = Array1::from(get_f64s(r, c)?);
    let hp = get_f64s(r, 6)?;
    expect_end(r)?;
    let model = DictionaryModel::new(shared, per_class, f, m)?;
    if weights
        .iter()
        .chain(std::iter::once(&bias))
        .flatten()
        .any(|v| !v.is_finite())
    {
        return Err(Error::Format("projection holds non-finite values".into()));
    }
    Ok(ModelFile {
        model,
        projection: Projection { weights, bias },
        params: StoredParams {
            lambda: hp[0],
            eta: hp[1],
            mu: hp[2],
            delta: hp[3],
            rho: hp[4],
            eps: hp[5],
        },
    })
}

/// Writes through a sibling temporary file, then renames over `path`.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

pub fn save_dataset(path: &Path, bags: &[Bag]) -> Result<()> {
    write_atomic(path, |w| write_dataset(w, bags))
}

pub fn load_dataset(path: &Path) -> Result<Vec<Bag>> {
    read_dataset(&mut BufReader::new(File::open(path)?))
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    write_atomic(path, |w| write_model(w, file))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    read_model(&mut BufReader::new(File::open(path)?))
}
