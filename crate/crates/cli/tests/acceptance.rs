//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout.
//! Correctness criteria (majorizers, descent, oracles, gradients, metrics,
//! determinism) make the process exit non-zero when they fail. The empirical
//! outcome criteria (synthetic accuracy, feature recovery, learning curve,
//! 2-D smoke) are measured and reported but do not abort the run; their
//! status is whatever the line says.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mimlcdl::bpgm::{check_majorizer, min_eigenvalue};
use mimlcdl::convops::{conv_truncated, toeplitz_from_atom, toeplitz_from_coeffs, Pooling};
use mimlcdl::data::{
    generate_synthetic, load_dataset, load_model, write_model, ModelFile, StoredParams, SynthSpec,
};
use mimlcdl::metrics::{dynamic_threshold, evaluate, label_matrix, roc_pr};
use mimlcdl::model::{cross_entropy_logits, fidelity, logits, objective, predict_all};
use mimlcdl::prox::{admm_nuclear_prox, qcqp_unit_ball, soft_threshold, svt};
use mimlcdl::train::{
    coeff_majorizer, coeff_row_gradient, dict_majorizer, encode, projection_gradient,
    projection_majorizer, train, update_class_coeffs, update_class_dicts, update_projection,
    update_shared_coeffs, update_shared_dict, TrainerState, ENCODE_EPOCHS,
};
use mimlcdl::{Atom, Bag, Hyperparams};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    /// Failing a gating criterion makes the process exit non-zero.
    gating: bool,
}

fn report(
    results: &mut Vec<Outcome>,
    name: &'static str,
    gating: bool,
    (pass, detail): (bool, String),
) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    results.push(Outcome {
        name,
        pass,
        detail,
        gating,
    });
}

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |key: &str| filter.as_deref().is_none_or(|f| key.contains(f));
    let mut results = Vec::new();
    let start = Instant::now();

    let dir = tempfile::tempdir().expect("temp dir");
    if wanted("synthetic") {
        let run = synthetic_pipeline(dir.path());
        report(&mut results, "synthetic end-to-end", false, run.accuracy);
        report(&mut results, "feature recovery", false, run.recovery);
        report(&mut results, "learning curve", false, run.curve);
    }
    if wanted("majorizer") {
        report(
            &mut results,
            "majorization validity",
            true,
            majorization_validity(),
        );
    }
    if wanted("descent") {
        report(&mut results, "descent property", true, descent_property());
    }
    if wanted("oracle") {
        report(
            &mut results,
            "oracle equivalences",
            true,
            oracle_equivalences(),
        );
    }
    if wanted("gradient") {
        report(&mut results, "gradient checks", true, gradient_checks());
    }
    if wanted("metrics") {
        report(&mut results, "metrics oracles", true, metrics_oracles());
    }
    if wanted("twodim") {
        report(&mut results, "2-D smoke test", false, two_dim_smoke());
    }
    if wanted("determinism") {
        report(&mut results, "determinism", true, determinism());
    }

    let passed = results.iter().filter(|r| r.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    let broken: Vec<_> = results.iter().filter(|r| r.gating && !r.pass).collect();
    if !broken.is_empty() {
        for r in broken {
            eprintln!("gating criterion failed: {} ({})", r.name, r.detail);
        }
        std::process::exit(1);
    }
}

fn cli(args: &[&str]) -> mimlcdl_cli::Outcome {
    let mut full = vec!["mimlcdl"];
    full.extend_from_slice(args);
    mimlcdl_cli::run_args(full).unwrap_or_else(|e| panic!("{args:?} failed: {e}"))
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

// ---------------------------------------------------------------- synthetic

struct SyntheticRun {
    accuracy: (bool, String),
    recovery: (bool, String),
    curve: (bool, String),
}

fn synthetic_pipeline(dir: &Path) -> SyntheticRun {
    let (train_f, test_f) = (dir.join("train.wscd"), dir.join("test.wscd"));
    let (features, model_f, loss_f) = (
        dir.join("features.csv"),
        dir.join("model.wscm"),
        dir.join("loss.csv"),
    );
    let (scores_f, report_f) = (dir.join("scores.csv"), dir.join("report.csv"));
    let t0 = Instant::now();
    cli(&[
        "generate",
        "--out-train",
        p(&train_f),
        "--out-test",
        p(&test_f),
        "--features-out",
        p(&features),
        "--seed",
        "0",
    ]);
    cli(&[
        "train",
        "--data",
        p(&train_f),
        "--model-out",
        p(&model_f),
        "--loss-out",
        p(&loss_f),
    ]);
    cli(&[
        "predict",
        "--model",
        p(&model_f),
        "--data",
        p(&test_f),
        "--scores-out",
        p(&scores_f),
    ]);
    let eval = cli(&[
        "eval",
        "--scores",
        p(&scores_f),
        "--labels-from",
        p(&test_f),
        "--threshold",
        "dynamic",
        "--report-out",
        p(&report_f),
    ]);
    let elapsed = t0.elapsed().as_secs_f64();
    let mimlcdl_cli::Outcome::Evaluated(report) = eval else {
        panic!("eval returned an unexpected outcome: {eval}")
    };

    let test = load_dataset(&test_f).unwrap();
    let scores = read_numeric_csv(&scores_f);
    let mut singles = Vec::new();
    for c in 0..4 {
        let rows: Vec<usize> = (0..test.len())
            .filter(|&n| {
                test[n].labels.iter().map(|&v| v as usize).sum::<usize>() == 1
                    && test[n].labels[c] == 1
            })
            .collect();
        let hits: usize = rows
            .iter()
            .map(|&n| {
                (0..4)
                    .filter(|&k| (scores[[n, k]] >= report.threshold) == (test[n].labels[k] == 1))
                    .count()
            })
            .sum();
        singles.push(hits as f64 / (4 * rows.len()) as f64);
    }
    let acc = report.metrics.accuracy;
    let accuracy = (
        acc >= 0.95 && singles.iter().all(|&a| a >= 0.90),
        format!(
            "micro accuracy {acc:.4} (need >= 0.95), subset accuracy {:.4}, single-label subsets {:?} (need >= 0.90 each), {} test bags, {elapsed:.0}s",
            report.metrics.subset_accuracy,
            singles.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>(),
            test.len()
        ),
    );

    let model = load_model(&model_f).unwrap().model;
    let bank = read_numeric_csv(&features);
    let mut best = Vec::new();
    for c in 0..4 {
        let feats: Vec<Vec<f64>> = (0..bank.nrows())
            .filter(|&r| bank[[r, 0]] as usize == c)
            .map(|r| bank.row(r).iter().skip(2).copied().collect())
            .collect();
        let off = model.class_offset(c);
        let score = (0..model.kc(c))
            .flat_map(|k| {
                let atom = model.atom(off + k).row(0).to_vec();
                feats
                    .iter()
                    .map(move |f| max_circular_ncc(&atom, f))
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max);
        best.push(score);
    }
    let recovery = (
        best.iter().all(|&b| b >= 0.80),
        format!(
            "best class-atom NCC per class {:?} (need >= 0.80 each)",
            best.iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>()
        ),
    );

    let loss = read_numeric_csv(&loss_f);
    let obj: Vec<f64> = loss.column(1).to_vec();
    let at10 = obj.get(10).copied().unwrap_or(f64::NAN);
    let last = obj.len() - 1;
    let final_change = if last == 0 {
        0.0
    } else {
        (obj[last] - obj[last - 1]).abs() / obj[last - 1].abs().max(1e-12)
    };
    let curve = (
        at10 <= 0.5 * obj[0] && final_change <= 1e-4,
        format!(
            "epoch 10 / epoch 0 = {:.4} (need <= 0.5), final relative change {final_change:.2e} after {last} epochs (need <= 1e-4)",
            at10 / obj[0]
        ),
    );
    SyntheticRun {
        accuracy,
        recovery,
        curve,
    }
}

fn read_numeric_csv(path: &Path) -> Array2<f64> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let cols = reader.headers().unwrap().len();
    let mut flat = Vec::new();
    for rec in reader.records() {
        flat.extend(rec.unwrap().iter().map(|v| v.parse::<f64>().unwrap()));
    }
    Array2::from_shape_vec((flat.len() / cols, cols), flat).unwrap()
}

/// Largest `|<a, shift(b)>| / (|a||b|)` over circular shifts, both zero-padded to a common length.
fn max_circular_ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let pad = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .copied()
            .chain(std::iter::repeat(0.0))
            .take(n)
            .collect()
    };
    let (a, b) = (pad(a), pad(b));
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (0..n)
        .map(|s| (0..n).map(|i| a[i] * b[(i + s) % n]).sum::<f64>().abs() / (na * nb))
        .fold(0.0, f64::max)
}

// --------------------------------------------------------- random instances

fn random_bags(rng: &mut ChaCha8Rng, n: usize, f: usize, t: usize, c: usize) -> Vec<Bag> {
    (0..n)
        .map(|i| {
            let data = Array2::from_shape_fn((f, t), |_| rng.random_range(-1.0..1.0));
            let labels = (0..c).map(|_| rng.random_range(0..2u8)).collect();
            Bag::new(data, labels, i).unwrap()
        })
        .collect()
}

fn tiny_hp(rng: &mut ChaCha8Rng) -> Hyperparams {
    Hyperparams {
        lambda: rng.random_range(0.0..0.3),
        eta: rng.random_range(0.0..1.0),
        mu: rng.random_range(0.0..0.5),
        delta: 0.0,
        window: rng.random_range(1..=5),
        k0: rng.random_range(0..=2),
        kc: rng.random_range(1..=2),
        seed: rng.random(),
        ..Hyperparams::default()
    }
}

/// Trainer state with random sparse coefficients and a random projection.
fn random_state(rng: &mut ChaCha8Rng, bags: &[Bag], hp: &Hyperparams) -> TrainerState {
    let mut st = TrainerState::init(bags, hp).unwrap();
    for s in &mut st.coeffs.per_bag {
        s.mapv_inplace(|_| {
            if rng.random::<f64>() < 0.5 {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        });
    }
    for w in &mut st.projection.weights {
        w.mapv_inplace(|_| rng.random_range(-3.0..3.0));
    }
    st.projection
        .bias
        .mapv_inplace(|_| rng.random_range(-1.0..1.0));
    st.refresh(bags).unwrap();
    st
}

// ------------------------------------------------------------- majorizers

fn majorization_validity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for inst in 0..100 {
        let hp = Hyperparams {
            k0: rng.random_range(1..=2),
            ..tiny_hp(&mut rng)
        };
        let f = rng.random_range(1..=3);
        let t = rng.random_range(hp.window.max(2)..=16);
        let n = rng.random_range(1..=4);
        let c = rng.random_range(1..=2);
        let bags = random_bags(&mut rng, n, f, t, c);
        let st = random_state(&mut rng, &bags, &hp);
        let model = &st.model;
        let m = hp.window;

        let mut check = |name: &str, hess: Array2<f64>, maj: &[f64]| {
            let mut diag = Array2::from_diag(&Array1::from(maj.to_vec()));
            diag -= &hess;
            worst = worst.min(min_eigenvalue(&diag));
            if !check_majorizer(&hess, maj) {
                failures.push(format!("{name}#{inst}"));
            }
        };

        // Dictionary blocks: every atom row sees 4 Σ_n T_sᵀT_s.
        for idx in 0..model.total_atoms() {
            let acts: Vec<Vec<f64>> = st
                .coeffs
                .per_bag
                .iter()
                .map(|s| s.row(idx).to_vec())
                .collect();
            let maj = dict_majorizer(acts.iter().map(Vec::as_slice), m);
            let mut hess = Array2::zeros((m, m));
            for a in &acts {
                hess += &(toeplitz_from_coeffs(Array1::from(a.clone()).view(), m)
                    .unwrap()
                    .gram()
                    * 4.0);
            }
            let name = if model.owner(idx).is_some() {
                "class dict"
            } else {
                "shared dict"
            };
            check(name, hess, &maj);
        }
        // Coefficient blocks: 4 Σ_f T_dᵀT_d, plus (η/4) w² p pᵀ with p = 1/T for class atoms.
        for idx in 0..model.total_atoms() {
            let atom = model.atom(idx);
            let w = match model.owner(idx) {
                Some(c) => st.projection.weights[c][idx - model.class_offset(c)],
                None => 0.0,
            };
            let curvature = hp.eta * w * w / (4.0 * t as f64);
            let maj = coeff_majorizer(
                &Atom {
                    filter: atom.filter.clone(),
                },
                t,
                curvature,
            );
            let mut hess = Array2::from_elem((t, t), hp.eta * w * w / (4.0 * (t * t) as f64));
            for r in 0..atom.height() {
                hess += &(toeplitz_from_atom(atom.row(r), t).unwrap().gram() * 4.0);
            }
            let name = if model.owner(idx).is_some() {
                "class coeffs"
            } else {
                "shared coeffs"
            };
            check(name, hess, &maj);
        }
        // Projection: Σ_n ¼ ŝ ŝᵀ.
        for c in 0..model.num_classes() {
            let feats: Vec<Vec<f64>> = st
                .coeffs
                .per_bag
                .iter()
                .map(|s| {
                    let off = model.class_offset(c);
                    let mut v: Vec<f64> = (0..model.kc(c))
                        .map(|k| s.row(off + k).mean().unwrap())
                        .collect();
                    v.push(1.0);
                    v
                })
                .collect();
            let dim = feats[0].len();
            let mut hess = Array2::zeros((dim, dim));
            for s in &feats {
                for i in 0..dim {
                    for j in 0..dim {
                        hess[[i, j]] += 0.25 * s[i] * s[j];
                    }
                }
            }
            check("projection", hess, &projection_majorizer(&feats));
        }
    }
    (
        failures.is_empty() && worst >= -1e-8,
        format!(
            "100 instances, all five blocks, min eigenvalue of M - H = {worst:.3e} (need >= -1e-8){}",
            if failures.is_empty() { String::new() } else { format!(", failures {failures:?}") }
        ),
    )
}

// ----------------------------------------------------------------- descent

fn descent_property() -> (bool, String) {
    type Step = fn(&mut TrainerState, &[Bag], &Hyperparams) -> mimlcdl::Result<()>;
    let blocks: [(&str, Step); 5] = [
        ("shared dict", update_shared_dict),
        ("class dict", update_class_dicts),
        ("shared coeffs", update_shared_coeffs),
        ("class coeffs", update_class_coeffs),
        ("projection", update_projection),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst_rise = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for inst in 0..20 {
        let hp = tiny_hp(&mut rng);
        let f = rng.random_range(1..=3);
        let (n, t) = (
            rng.random_range(1..=4),
            rng.random_range(hp.window.max(4)..=16),
        );
        let bags = random_bags(&mut rng, n, f, t, 2);
        let mut st = random_state(&mut rng, &bags, &hp);
        let full = |st: &TrainerState| {
            objective(&bags, &st.model, &st.coeffs, &st.projection, &hp).unwrap()
        };
        let mut last = full(&st);
        for epoch in 1..=10 {
            st.epoch = epoch;
            st.refresh(&bags).unwrap();
            for (name, step) in blocks {
                step(&mut st, &bags, &hp).unwrap();
                let now = full(&st);
                worst_rise = worst_rise.max(now - last);
                if now > last + 1e-9 || st.model.max_atom_norm() > 1.0 + 1e-9 {
                    failures.push(format!(
                        "{name} instance {inst} epoch {epoch}: {last} -> {now}"
                    ));
                }
                last = now;
            }
        }
    }
    (
        failures.is_empty(),
        format!(
            "20 instances x 10 epochs x 5 blocks with delta = 0, largest objective change {worst_rise:.3e} (slack 1e-9){}",
            failures.first().map(|f| format!(", first failure {f}")).unwrap_or_default()
        ),
    )
}

// ----------------------------------------------------------------- oracles

fn oracle_equivalences() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(300);

    // Toeplitz products against a direct truncated convolution.
    let mut toeplitz_err = 0.0_f64;
    for _ in 0..200 {
        let t: usize = rng.random_range(1..=20);
        let m = rng.random_range(1..=(2 * t - 1).min(9));
        let d: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l = (m - 1) / 2;
        let direct: Vec<f64> = (0..t)
            .map(|i| {
                (0..m)
                    .filter_map(|j| {
                        (i + l)
                            .checked_sub(j)
                            .filter(|&u| u < t)
                            .map(|u| d[j] * s[u])
                    })
                    .sum()
            })
            .collect();
        let by_atom = toeplitz_from_atom(Array1::from(d.clone()).view(), t)
            .unwrap()
            .apply(Array1::from(s.clone()).view());
        let by_coeff = toeplitz_from_coeffs(Array1::from(s.clone()).view(), m)
            .unwrap()
            .apply(Array1::from(d.clone()).view());
        // The operator does not care about the unit-norm constraint, so build the atom directly.
        let atom = Atom {
            filter: Array2::from_shape_vec((1, m), d).unwrap(),
        };
        let by_kernel = conv_truncated(&atom, Array1::from(s).view());
        for i in 0..t {
            toeplitz_err = toeplitz_err
                .max((by_atom[i] - direct[i]).abs())
                .max((by_coeff[i] - direct[i]).abs());
            toeplitz_err = toeplitz_err.max((by_kernel[[0, i]] - direct[i]).abs());
        }
    }

    // Scalar lasso: ½(x - a)² + b|x| on a grid.
    let mut soft_gap = f64::NEG_INFINITY;
    for _ in 0..200 {
        let a = rng.random_range(-3.0..3.0);
        let b = rng.random_range(0.0..2.0);
        let obj = |x: f64| 0.5 * (x - a) * (x - a) + b * x.abs();
        let grid = (-40_000..=40_000)
            .map(|i| i as f64 * 1e-4)
            .map(obj)
            .fold(f64::INFINITY, f64::min);
        soft_gap = soft_gap.max(obj(soft_threshold(a, b)) - grid);
    }

    // SVT on 2x2: ½||X - A||² + τ||X||_* against a coarse grid refined by pattern search.
    let mut svt_gap = f64::NEG_INFINITY;
    for _ in 0..20 {
        let a = Array2::from_shape_fn((2, 2), |_| rng.random_range(-2.0..2.0));
        let tau = rng.random_range(0.0..1.5);
        let obj = |x: &[f64; 4]| {
            let q: f64 = x
                .iter()
                .zip(a.iter())
                .map(|(u, v)| 0.5 * (u - v) * (u - v))
                .sum();
            q + tau * nuclear_2x2(x)
        };
        let mut best = [0.0; 4];
        let mut best_val = f64::INFINITY;
        let steps: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.2).collect();
        for &p in &steps {
            for &q in &steps {
                for &r in &steps {
                    for &s in &steps {
                        let x = [p, q, r, s];
                        let v = obj(&x);
                        if v < best_val {
                            best_val = v;
                            best = x;
                        }
                    }
                }
            }
        }
        let mut h = 0.1;
        while h > 1e-9 {
            let mut moved = false;
            for i in 0..4 {
                for sign in [-1.0, 1.0] {
                    let mut x = best;
                    x[i] += sign * h;
                    let v = obj(&x);
                    if v < best_val {
                        best_val = v;
                        best = x;
                        moved = true;
                    }
                }
            }
            if !moved {
                h *= 0.5;
            }
        }
        let x = svt(&a, tau).unwrap();
        let got = obj(&[x[[0, 0]], x[[0, 1]], x[[1, 0]], x[[1, 1]]]);
        svt_gap = svt_gap.max(got - best_val);
    }

    // Unit-ball QCQP: Newton multiplier against bisection on ||d(ψ)|| = 1.
    let mut qcqp_err = 0.0_f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let nu: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
        let got = qcqp_unit_ball(&nu, &m, 100).unwrap();
        let norm_at = |psi: f64| -> f64 {
            nu.iter()
                .zip(&m)
                .map(|(v, w)| (w * v / (w + psi)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let psi = if norm_at(0.0) <= 1.0 {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            while norm_at(hi) > 1.0 {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if norm_at(mid) > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        qcqp_err = qcqp_err.max((got.multiplier - psi).abs() / psi.max(1.0));
    }

    // Nuclear-norm prox over two unit-ball atoms against projected subgradient descent.
    let mut admm_gap = f64::NEG_INFINITY;
    for _ in 0..10 {
        let len = 3;
        let nus: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..len).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let ms: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..len).map(|_| rng.random_range(0.5..2.0)).collect())
            .collect();
        let mu = rng.random_range(0.0..1.0);
        let obj = |d: &[Vec<f64>]| -> f64 {
            let q: f64 = (0..2)
                .map(|k| {
                    (0..len)
                        .map(|i| 0.5 * ms[k][i] * (d[k][i] - nus[k][i]).powi(2))
                        .sum::<f64>()
                })
                .sum();
            q + mu * nuclear_two_columns(&d[0], &d[1])
        };
        let admm = admm_nuclear_prox(&nus, &ms, mu, 2.0, 5000, 1e-12).unwrap();
        let brute = projected_subgradient(&nus, &ms, mu, &obj);
        let feasible = admm
            .atoms
            .iter()
            .all(|d| d.iter().map(|v| v * v).sum::<f64>() <= 1.0 + 1e-9);
        admm_gap = admm_gap.max(if feasible {
            obj(&admm.atoms) - brute
        } else {
            f64::INFINITY
        });
    }

    let pass = toeplitz_err <= 1e-12
        && soft_gap <= 1e-4
        && svt_gap <= 1e-5
        && qcqp_err <= 1e-8
        && admm_gap <= 1e-4;
    (
        pass,
        format!(
            "toeplitz vs direct {toeplitz_err:.1e} (<= 1e-12), soft-threshold gap {soft_gap:.1e} (<= 1e-4), svt gap {svt_gap:.1e} (<= 1e-5), qcqp multiplier {qcqp_err:.1e} (<= 1e-8), admm gap {admm_gap:.1e} (<= 1e-4)"
        ),
    )
}

/// Sum of singular values of a row-major 2x2 matrix.
fn nuclear_2x2(x: &[f64; 4]) -> f64 {
    let fro2: f64 = x.iter().map(|v| v * v).sum();
    let det = (x[0] * x[3] - x[1] * x[2]).abs();
    (fro2 + 2.0 * det).sqrt()
}

/// `σ1 + σ2 = sqrt(||D||² + 2 sqrt(det(DᵀD)))` for a two-column matrix.
fn nuclear_two_columns(a: &[f64], b: &[f64]) -> f64 {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let (aa, bb, ab) = (dot(a, a), dot(b, b), dot(a, b));
    let gram_det = (aa * bb - ab * ab).max(0.0);
    (aa + bb + 2.0 * gram_det.sqrt()).sqrt()
}

fn projected_subgradient(
    nus: &[Vec<f64>],
    ms: &[Vec<f64>],
    mu: f64,
    obj: &dyn Fn(&[Vec<f64>]) -> f64,
) -> f64 {
    let project = |v: &mut Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
    };
    let mut d: Vec<Vec<f64>> = nus.to_vec();
    d.iter_mut().for_each(&project);
    let mut best = obj(&d);
    let mut best_d = d.clone();
    for restart in 0..2 {
        if restart == 1 {
            d = best_d.clone();
        }
        for it in 1..=200_000 {
            // Central differences stand in for a subgradient of the nonsmooth term.
            let h = 1e-7;
            let mut g = vec![vec![0.0; d[0].len()]; 2];
            for k in 0..2 {
                for i in 0..d[k].len() {
                    let mut up = d.clone();
                    up[k][i] += h;
                    let mut dn = d.clone();
                    dn[k][i] -= h;
                    g[k][i] = (obj(&up) - obj(&dn)) / (2.0 * h);
                }
            }
            let scale = if restart == 0 { 0.5 } else { 0.02 };
            let step = scale / (it as f64).sqrt() / (1.0 + mu);
            for k in 0..2 {
                for i in 0..d[k].len() {
                    d[k][i] -= step * g[k][i] / ms[k][i].max(1.0);
                }
                project(&mut d[k]);
            }
            let v = obj(&d);
            if v < best {
                best = v;
                best_d = d.clone();
            }
        }
    }
    best
}

// --------------------------------------------------------------- gradients

fn gradient_checks() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut worst_coeff = 0.0_f64;
    let mut worst_proj = 0.0_f64;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for _ in 0..50 {
        let hp = Hyperparams {
            eta: rng.random_range(0.1..1.0),
            ..tiny_hp(&mut rng)
        };
        let f = rng.random_range(1..=2);
        let t = rng.random_range(hp.window.max(4)..=12);
        let n_bags = rng.random_range(1..=3);
        let bags = random_bags(&mut rng, n_bags, f, t, 2);
        let st = random_state(&mut rng, &bags, &hp);
        let model = &st.model;
        let n = rng.random_range(0..bags.len());
        let idx = rng.random_range(model.k0()..model.total_atoms());
        let s = &st.coeffs.per_bag[n];
        let loss = |s: &Array2<f64>| {
            let z = logits(model, s.view(), &st.projection, Pooling::Avg).unwrap();
            fidelity(&bags[n], model, s.view()).unwrap()
                + hp.eta * cross_entropy_logits(z.as_slice().unwrap(), &bags[n].labels)
        };
        let g = coeff_row_gradient(&st, &bags, &hp, n, idx).unwrap();
        for i in 0..t {
            let h = 1e-6;
            let (mut up, mut dn) = (s.clone(), s.clone());
            up[[idx, i]] += h;
            dn[[idx, i]] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            worst_coeff = worst_coeff.max(rel(g[i], fd));
        }

        // Projection: gradient in ŵ = [w, b] of the summed cross-entropy for one class.
        let c = rng.random_range(0..model.num_classes());
        let feats: Vec<Vec<f64>> = st
            .coeffs
            .per_bag
            .iter()
            .map(|s| {
                let off = model.class_offset(c);
                let mut v: Vec<f64> = (0..model.kc(c))
                    .map(|k| s.row(off + k).mean().unwrap())
                    .collect();
                v.push(1.0);
                v
            })
            .collect();
        let labels: Vec<u8> = bags.iter().map(|b| b.labels[c]).collect();
        let mut w_hat = st.projection.weights[c].to_vec();
        w_hat.push(st.projection.bias[c]);
        let g = projection_gradient(&feats, &labels, &w_hat);
        let loss_w = |w_hat: &[f64]| -> f64 {
            let mut proj = st.projection.clone();
            let kc = model.kc(c);
            proj.weights[c] = Array1::from(w_hat[..kc].to_vec());
            proj.bias[c] = w_hat[kc];
            bags.iter()
                .zip(&st.coeffs.per_bag)
                .map(|(b, s)| {
                    let z = logits(model, s.view(), &proj, Pooling::Avg).unwrap();
                    cross_entropy_logits(&[z[c]], &[b.labels[c]])
                })
                .sum()
        };
        for i in 0..w_hat.len() {
            let h = 1e-6;
            let (mut up, mut dn) = (w_hat.clone(), w_hat.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (loss_w(&up) - loss_w(&dn)) / (2.0 * h);
            worst_proj = worst_proj.max(rel(g[i], fd));
        }
    }
    (
        worst_coeff <= 1e-5 && worst_proj <= 1e-5,
        format!("50 instances, worst relative error: class coefficients {worst_coeff:.1e}, projection {worst_proj:.1e} (need <= 1e-5)"),
    )
}

// ----------------------------------------------------------------- metrics

fn metrics_oracles() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut auc_err = 0.0_f64;
    let mut thr_err = 0.0_f64;
    for _ in 0..100 {
        let (n, c) = (rng.random_range(2..30), rng.random_range(1..4));
        // Coarse scores so that ties occur.
        let scores = Array2::from_shape_fn((n, c), |_| (rng.random_range(0..20) as f64) / 20.0);
        let mut labels = Array2::from_shape_fn((n, c), |_| rng.random_range(0..2u8));
        labels[[0, 0]] = 1;
        labels[[1, 0]] = 0;
        let (mut pairs, mut wins) = (0.0, 0.0);
        for (sp, lp) in scores.iter().zip(labels.iter()) {
            for (sn, ln) in scores.iter().zip(labels.iter()) {
                if *lp == 1 && *ln == 0 {
                    pairs += 1.0;
                    wins += if sp > sn {
                        1.0
                    } else if sp == sn {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let auc = roc_pr(scores.view(), labels.view()).unwrap().roc_auc;
        auc_err = auc_err.max((auc - wins / pairs).abs());

        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &scores {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        thr_err = thr_err.max((dynamic_threshold(scores.view()).unwrap() - (lo + hi) / 2.0).abs());
    }
    (
        auc_err <= 1e-12 && thr_err == 0.0,
        format!("100 instances, ROC AUC vs Mann-Whitney {auc_err:.1e} (<= 1e-12), dynamic threshold vs scan {thr_err:.1e}"),
    )
}

// ------------------------------------------------------------------- 2-D

fn two_dim_smoke() -> (bool, String) {
    let spec = SynthSpec {
        height: 20,
        per_combo_train: 4,
        per_combo_test: 4,
        seed: 7,
        ..SynthSpec::for_length(400)
    };
    let set = generate_synthetic(&spec).unwrap();
    let hp = Hyperparams {
        window: spec.feature_len,
        epochs: 30,
        ..Hyperparams::default()
    };
    let t0 = Instant::now();
    let st = match train(&set.train, &hp, &mut |_| {}) {
        Ok(st) => st,
        Err(e) => return (false, format!("training failed: {e}")),
    };
    let finite = st.loss_trace.iter().all(|(_, v)| v.is_finite());
    let max_norm = st.model.max_atom_norm();
    let coeffs = encode(&set.test, &st.model, &st.projection, &hp, ENCODE_EPOCHS).unwrap();
    let scores = predict_all(&st.model, &coeffs, &st.projection, Pooling::Avg).unwrap();
    let nan_scores = scores.iter().any(|v| !v.is_finite());
    let report = evaluate(scores.view(), label_matrix(&set.test).view(), None).unwrap();
    let acc = report.metrics.accuracy;
    (
        finite && !nan_scores && max_norm <= 1.0 + 1e-9 && acc >= 0.6,
        format!(
            "F=20, T={}, {} train / {} test bags: finite loss {finite}, max atom norm {max_norm:.6}, micro accuracy {acc:.4} (need >= 0.60), {:.0}s",
            spec.signal_len,
            set.train.len(),
            set.test.len(),
            t0.elapsed().as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------- determinism

fn determinism() -> (bool, String) {
    let spec = SynthSpec {
        per_combo_train: 2,
        per_combo_test: 1,
        seed: 11,
        ..SynthSpec::for_length(300)
    };
    let bags = generate_synthetic(&spec).unwrap().train;
    let hp = Hyperparams {
        window: spec.feature_len,
        epochs: 8,
        seed: 5,
        ..Hyperparams::default()
    };
    let run = |threads: usize| -> (Vec<u8>, f64) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let st = train(&bags, &hp, &mut |_| {}).unwrap();
            let file = ModelFile {
                model: st.model.clone(),
                projection: st.projection.clone(),
                params: StoredParams::from(&hp),
            };
            let mut bytes = Vec::new();
            write_model(&mut bytes, &file).unwrap();
            (bytes, st.loss_trace.last().unwrap().1)
        })
    };
    let (a, obj1) = run(1);
    let (b, _) = run(1);
    let (_, obj8) = run(8);
    let rel = (obj8 - obj1).abs() / obj1.abs().max(1e-12);
    (
        a == b && rel <= 1e-8,
        format!(
            "single-threaded model files identical: {} ({} bytes); 8-thread objective relative difference {rel:.1e} (need <= 1e-8)",
            a == b,
            a.len()
        ),
    )
}
