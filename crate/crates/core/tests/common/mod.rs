//! Oracles and scenario runners shared by the integration tests and the
//! acceptance target.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use qiv_core::data::{partition, IndexSet};
use qiv_core::instrument::{spectral_factor, ustat_cross_gram, whiten};
use qiv_core::plm::{self, fit_plm, nw_smooth, nw_weights};
use qiv_core::selector::{dantzig_select, threshold_select};
use qiv_core::simulator::{run_experiment, ExperimentConfig, MetricsTable};
use qiv_core::CoefficientVector;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<R: Rng>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vec<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn load_config(name: &str) -> ExperimentConfig {
    let path = repo_root().join("configs").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Result of one acceptance criterion.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- oracles

pub fn soft_threshold(v: f64, lambda: f64) -> f64 {
    v.signum() * (v.abs() - lambda).max(0.0)
}

/// `n × p` matrix with orthonormal columns.
pub fn orthonormal_design<R: Rng>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    gaussian(n, p, rng).qr().q()
}

/// `min ‖β‖₁` s.t. `‖c − Gβ‖∞ ≤ λ` by enumerating every point where `p` of the
/// hyperplanes `β_i = 0`, `(Gβ)_j = c_j ± λ` meet.
pub fn lp_brute_force(gram: &DMatrix<f64>, c: &DVector<f64>, lambda: f64) -> f64 {
    let p = gram.nrows();
    let mut planes: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..p {
        let mut e = DVector::zeros(p);
        e[i] = 1.0;
        planes.push((e, 0.0));
    }
    for j in 0..p {
        let row = gram.row(j).transpose();
        planes.push((row.clone(), c[j] - lambda));
        planes.push((row, c[j] + lambda));
    }
    let mut best = f64::INFINITY;
    for combo in combinations(planes.len(), p) {
        let a = DMatrix::from_fn(p, p, |r, k| planes[combo[r]].0[k]);
        let b = DVector::from_fn(p, |r, _| planes[combo[r]].1);
        let sv = a.clone().svd(false, false).singular_values;
        if sv.min() < 1e-10 * sv.max().max(1.0) {
            continue;
        }
        let Some(beta) = a.lu().solve(&b) else { continue };
        let viol = (c - gram * &beta).amax();
        if viol <= lambda + 1e-9 * (1.0 + lambda) {
            best = best.min(beta.lp_norm(1));
        }
    }
    best
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Direct `O(n²)` evaluation of the symmetrized pair sum.
pub fn ustat_brute(zt: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = zt.shape();
    let mut acc = DMatrix::zeros(m, m);
    for i in 0..n {
        for j in (i + 1)..n {
            let k = u.row(i).dot(&u.row(j));
            let zi = zt.row(i).transpose();
            let zj = zt.row(j).transpose();
            let kij = &zi * zj.transpose() * k;
            acc += (&kij + kij.transpose()) * 0.5;
        }
    }
    acc * (2.0 / (n as f64 * (n as f64 - 1.0)) / u.ncols() as f64)
}

// --------------------------------------------------------------- criteria

pub fn criterion_soft_threshold() -> Outcome {
    let t = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let x = orthonormal_design(64, 16, &mut r);
        let mut beta0 = DVector::zeros(16);
        for j in 0..4 {
            beta0[j] = r.random_range(-3.0..3.0);
        }
        let y = &x * beta0 + gaussian_vec(64, &mut r) * 0.3;
        let xty = x.transpose() * &y;
        let lambda = r.random_range(0.05..0.8) * xty.amax();
        let beta = dantzig_select(&x, &y, lambda, 1e-9).expect("lp solves");
        for j in 0..16 {
            worst = worst.max((beta.0[j] - soft_threshold(xty[j], lambda)).abs());
        }
    }
    let el = secs(t.elapsed());
    Outcome::new(worst < 1e-6 && el < 5.0, format!("max coordinate error {worst:.2e} over 50 instances in {el:.2}s"))
}

pub fn criterion_lp_brute_force() -> Outcome {
    let mut r = rng(202);
    let mut worst = 0.0_f64;
    for k in 0..20 {
        let p = 1 + k % 3;
        let n = 8;
        let x = gaussian(n, p, &mut r);
        let y = gaussian_vec(n, &mut r) * 2.0;
        let xty = x.transpose() * &y;
        let lambda = r.random_range(0.1..0.9) * xty.amax();
        let beta = dantzig_select(&x, &y, lambda, 1e-9).expect("lp solves");
        let lp = beta.l1_norm();
        let brute = lp_brute_force(&(x.transpose() * &x), &xty, lambda);
        worst = worst.max((lp - brute).abs());
    }
    Outcome::new(worst < 1e-4, format!("max objective gap {worst:.2e} over 20 instances with p <= 3"))
}

pub fn criterion_ustat() -> Outcome {
    let mut r = rng(303);
    let mut worst = 0.0_f64;
    for k in 0..20 {
        let n = 2 + (k * 37) % 199;
        let pq = 1 + (k * 13) % 50;
        let m = 1 + k % 6;
        let zt = gaussian(n, m, &mut r);
        let u = gaussian(n, pq, &mut r) + zt.columns(0, 1) * DMatrix::from_element(1, pq, 0.7);
        let fast = ustat_cross_gram(&zt, &u).expect("ustat");
        let brute = ustat_brute(&zt, &u);
        let rel = (&fast - &brute).amax() / brute.amax().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    Outcome::new(worst < 1e-12, format!("max relative error {worst:.2e} over 20 instances"))
}

pub fn criterion_spectral_whitening() -> Outcome {
    let mut r = rng(404);
    let mut orth = 0.0_f64;
    for _ in 0..20 {
        let m = r.random_range(2..8);
        let b = gaussian(m, m, &mut r);
        let sym = &b * b.transpose();
        let f = spectral_factor(&sym, r.random_range(1..=m), 0.01).expect("factor");
        let g = f.q1.transpose() * &f.q1;
        orth = orth.max((g - DMatrix::identity(f.rank, f.rank)).amax());
    }
    let (n, q, d) = (2000, 3, 2);
    let z = gaussian(n, q, &mut r);
    let mix = gaussian(q, 6, &mut r) * 0.5;
    let u = &z * mix + gaussian(n, 6, &mut r);
    let (zt, _) = whiten(&z, &u, &IndexSet::new((0..d).collect())).expect("whiten");
    let means = qiv_core::linalg::column_means(&zt);
    let centered = DMatrix::from_fn(n, q + d, |i, j| zt[(i, j)] - means[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let dev = (cov - DMatrix::identity(q + d, q + d)).amax();
    Outcome::new(
        orth < 1e-10 && dev < 0.1,
        format!("max |Q1'Q1 - I| = {orth:.2e}; max |cov(Ztilde) - I| = {dev:.3} at n = {n}"),
    )
}

/// `Y = θᵀZ + sin(V) + ε` with scalar `V` and `Z` correlated with `V`.
pub fn oracle_plm_sample<R: Rng>(n: usize, r: &mut R) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let unif = Uniform::new(-2.0_f64, 2.0).expect("range");
    let v = DMatrix::from_fn(n, 1, |_, _| unif.sample(r));
    let z = DMatrix::from_fn(n, 2, |i, j| {
        let e: f64 = StandardNormal.sample(r);
        if j == 0 {
            0.6 * v[(i, 0)] + e
        } else {
            (v[(i, 0)]).powi(2) * 0.3 + e
        }
    });
    let theta = [1.0, -0.5];
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(r);
        theta[0] * z[(i, 0)] + theta[1] * z[(i, 1)] + v[(i, 0)].sin() + 0.5 * e
    });
    (z, y, v)
}

pub const ORACLE_THETA: [f64; 2] = [1.0, -0.5];

/// Fit on the default bandwidth grid chosen by GCV.
pub fn oracle_fit(z: &DMatrix<f64>, y: &DVector<f64>, v: &DMatrix<f64>) -> plm::PlmFit {
    let g = plm::gcv_bandwidth(z, y, v, &plm::default_grid(v)).expect("gcv");
    fit_plm(z, y, v, g.h, None).expect("fit")
}

fn sq_err(theta: &[f64]) -> f64 {
    theta.iter().zip(ORACLE_THETA).map(|(a, b)| (a - b).powi(2)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median squared error at `n` over `reps` seeded replications.
pub fn oracle_median_error(n: usize, reps: usize, seed: u64) -> f64 {
    let errs = (0..reps)
        .map(|k| {
            let mut r = rng(seed + k as u64);
            let (z, y, v) = oracle_plm_sample(n, &mut r);
            sq_err(&oracle_fit(&z, &y, &v).theta_hat)
        })
        .collect();
    median(errs)
}

/// Fraction of (replication, coordinate) pairs whose interval covers the truth.
pub fn oracle_coverage(n: usize, reps: usize, level: f64, seed: u64) -> f64 {
    let mut hit = 0;
    for k in 0..reps {
        let mut r = rng(seed + k as u64);
        let (z, y, v) = oracle_plm_sample(n, &mut r);
        let fit = oracle_fit(&z, &y, &v);
        for (j, (lo, hi)) in plm::confidence_intervals(&fit, level).unwrap().into_iter().enumerate() {
            if lo <= ORACLE_THETA[j] && ORACLE_THETA[j] <= hi {
                hit += 1;
            }
        }
    }
    hit as f64 / (2 * reps) as f64
}

pub fn criterion_plm_oracle() -> Outcome {
    let t = Instant::now();
    let m200 = oracle_median_error(200, 100, 5_000);
    let m800 = oracle_median_error(800, 100, 6_000);
    let cov = oracle_coverage(500, 200, 0.95, 7_000);
    let el = secs(t.elapsed());
    let ratio = m800 / m200;
    Outcome::new(
        ratio < 0.6 && (0.88..=0.99).contains(&cov) && el < 300.0,
        format!("median err n=800 / n=200 = {m800:.2e} / {m200:.2e} = {ratio:.3}; coverage {cov:.3} at n=500; {el:.1}s"),
    )
}

pub fn run_config(name: &str) -> (MetricsTable, f64) {
    let cfg = load_config(name);
    let t = Instant::now();
    let table = run_experiment(&cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
    (table, secs(t.elapsed()))
}

fn cell(t: &MetricsTable, est: &str, pred: &str) -> (f64, f64) {
    let r = t.row(est, pred).unwrap_or_else(|| panic!("missing row {est}/{pred}"));
    (r.mse.unwrap_or(f64::NAN), r.pe.unwrap_or(f64::NAN))
}

pub fn criterion_experiment1() -> Outcome {
    let (t, el) = run_config("experiment1_typeI.json");
    let (m1_mse, m1_pe) = cell(&t, "m1", "adjusted");
    let (ds_mse, _) = cell(&t, "ds", "none");
    let (_, ls_pe) = cell(&t, "ls", "ls");
    let pass = m1_mse < 0.5 * ds_mse && m1_pe < ls_pe && el < 600.0 && t.reps == 50;
    Outcome::new(
        pass,
        format!(
            "MSE m1 {m1_mse:.4} vs ds {ds_mse:.4} (ratio {:.3}); PE adjusted {m1_pe:.4} vs ls {ls_pe:.4}; {} reps ok; {el:.1}s",
            m1_mse / ds_mse,
            t.reps - t.reps_failed
        ),
    )
}

pub fn criterion_experiment4() -> Outcome {
    let (t, el) = run_config("experiment4_sparse_typeI.json");
    let (m1_mse, _) = cell(&t, "m1", "adjusted");
    let (ds_mse, _) = cell(&t, "ds", "none");
    let pass = m1_mse <= 3.0 * ds_mse && el < 600.0 && (t.r_squared - 0.97).abs() < 0.005;
    Outcome::new(
        pass,
        format!(
            "MSE m1 {m1_mse:.4} vs ds {ds_mse:.4} (ratio {:.3}); R^2 {:.3}; {el:.1}s",
            m1_mse / ds_mse,
            t.r_squared
        ),
    )
}

pub fn criterion_experiment3() -> Outcome {
    let (t, el) = run_config("experiment3_sis.json");
    let (_, m1_pe) = cell(&t, "m1", "adjusted");
    let (_, ls_pe) = cell(&t, "ls", "ls");
    let pass = m1_pe < ls_pe && ls_pe >= 5.0 * m1_pe && el < 900.0 && t.config.p == 1000 && t.reps == 10;
    Outcome::new(
        pass,
        format!("PE adjusted {m1_pe:.3} vs ls {ls_pe:.3} (gap {:.1}x); {el:.1}s", ls_pe / m1_pe),
    )
}

// ------------------------------------------------------------ determinism

pub fn qiv_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_qiv"))
}

/// Runs `qiv` with `QIV_THREADS` set; panics with stderr on failure.
pub fn run_qiv(args: &[&str], threads: usize) -> std::process::Output {
    Command::new(qiv_bin())
        .args(args)
        .env("QIV_THREADS", threads.to_string())
        .output()
        .expect("spawn qiv")
}

/// Seeded design written as `y,x1..xp`: five strong predictors plus a dense
/// weak tail shifted to mean 2.
pub fn write_dataset(path: &Path, n: usize, p: usize, seed: u64) {
    let (x, y) = dataset(n, p, seed);
    let f = std::fs::File::create(path).expect("create csv");
    qiv_core::data::write_csv(f, &x, &y).expect("write csv");
}

pub fn dataset(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let mut x = gaussian(n, p, &mut r);
    for i in 0..n {
        for j in 5..p {
            x[(i, j)] += 2.0;
        }
    }
    let beta = DVector::from_fn(p, |j, _| match j {
        0 => 1.0,
        1 => 0.8,
        2 => -0.6,
        3 => 0.5,
        4 => 0.4,
        _ => 0.02 * ((j % 5) as f64),
    });
    let y = &x * beta + gaussian_vec(n, &mut r) * 0.3;
    (x, y)
}

/// Output files named in a manifest, read back in manifest order.
pub fn manifest_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            let name = o["file"].as_str().unwrap().to_string();
            let bytes = std::fs::read(dir.join(&name)).unwrap();
            (name, bytes)
        })
        .collect()
}

/// Runs every command at one and at four threads, twice each, and compares
/// all listed outputs byte for byte.
pub fn criterion_determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();
    let train = root.join("train.csv");
    let test = root.join("test.csv");
    write_dataset(&train, 60, 40, 11);
    write_dataset(&test, 25, 40, 12);
    let config = repo_root().join("configs/experiment1_typeI.json");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let mut mismatches = Vec::new();
    let mut checked = 0;
    type Files = Vec<(String, Vec<u8>)>;
    let mut runs: Vec<Vec<Files>> = vec![Vec::new(); 4];
    for (k, threads) in [1usize, 4, 1, 4].into_iter().enumerate() {
        let dir = root.join(format!("run{k}"));
        let sel = dir.join("select");
        let fit = dir.join("fit");
        let pred = dir.join("predict");
        let sim = dir.join("simulate");
        let cmds: Vec<Vec<String>> = vec![
            vec!["select".into(), "--input".into(), s(&train), "--out".into(), s(&sel), "--seed".into(), "5".into()],
            vec!["fit".into(), "--input".into(), s(&train), "--out".into(), s(&fit), "--seed".into(), "5".into()],
            vec!["predict".into(), "--fit".into(), s(&fit.join("fit.json")), "--input".into(), s(&test), "--out".into(), s(&pred)],
            vec![
                "simulate".into(),
                "--config".into(),
                s(&config),
                "--out".into(),
                s(&sim),
                "--reps".into(),
                "8".into(),
                "--threads".into(),
                threads.to_string(),
            ],
        ];
        for (c, args) in cmds.iter().enumerate() {
            let argv: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = run_qiv(&argv, threads);
            if !out.status.success() {
                return Outcome::new(false, format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
            }
            runs[c].push(manifest_outputs(&dir.join(&args[0])));
        }
    }
    let names = ["select", "fit", "predict", "simulate"];
    for (c, set) in runs.iter().enumerate() {
        for other in &set[1..] {
            checked += 1;
            if other != &set[0] {
                mismatches.push(names[c]);
            }
        }
    }
    Outcome::new(
        mismatches.is_empty(),
        format!("{checked} reruns of select/fit/predict/simulate at 1 and 4 threads; mismatches: {mismatches:?}"),
    )
}

// ------------------------------------------------------------- properties

pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new(PropConfig { cases, failure_persistence: None, ..PropConfig::default() })
}

fn matrix_strategy(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    (rows, cols).prop_flat_map(move |(n, p)| {
        prop::collection::vec(lo..hi, n * p).prop_map(move |v| DMatrix::from_row_slice(n, p, &v))
    })
}

pub fn prop_weight_normalization(cases: u32) -> Result<(), String> {
    let strat = (matrix_strategy(1..40, 1..4, -5.0, 5.0), 0.05f64..20.0, prop::collection::vec(-6.0f64..6.0, 3));
    runner(cases)
        .run(&strat, |(v, h, point)| {
            let eval = &point[..v.ncols()];
            let w = nw_weights(eval, &v, h);
            let sum: f64 = w.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "weights sum to {sum}");
            prop_assert!(w.weights.iter().all(|x| *x >= 0.0));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn prop_smoother_linearity(cases: u32) -> Result<(), String> {
    let strat = matrix_strategy(2..30, 1..3, -3.0, 3.0).prop_flat_map(|v| {
        let n = v.nrows();
        (
            Just(v),
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
            -5.0f64..5.0,
            -5.0f64..5.0,
            0.1f64..5.0,
        )
    });
    runner(cases)
        .run(&strat, |(v, u, w, a, b, h)| {
            let u = DVector::from_vec(u);
            let w = DVector::from_vec(w);
            let lhs = nw_smooth(&(&u * a + &w * b), &v, h);
            let rhs = nw_smooth(&u, &v, h) * a + nw_smooth(&w, &v, h) * b;
            let scale = 1.0 + a.abs() * u.amax() + b.abs() * w.amax();
            prop_assert!((lhs - rhs).amax() <= 1e-12 * scale);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn prop_normal_equations(cases: u32) -> Result<(), String> {
    let strat = (8usize..40, 1usize..4, 0.2f64..3.0, any::<u64>());
    runner(cases)
        .run(&strat, |(n, q, h, seed)| {
            let mut r = rng(seed);
            let v = gaussian(n, 1, &mut r);
            let z = gaussian(n, q, &mut r) + &v * DMatrix::from_element(1, q, 0.5);
            let y = gaussian_vec(n, &mut r) + z.column(0) * 2.0;
            let Ok(fit) = fit_plm(&z, &y, &v, h, None) else {
                return Err(TestCaseError::reject("singular residual gram"));
            };
            let mut zhat = z.clone();
            for j in 0..q {
                let col = z.column(j).into_owned();
                zhat.set_column(j, &(&col - nw_smooth(&col, &v, h)));
            }
            let yhat = &y - nw_smooth(&y, &v, h);
            let resid = yhat - &zhat * fit.theta();
            let score = zhat.transpose() * resid / n as f64;
            let scale = 1.0 + y.amax() * z.amax();
            prop_assert!(score.amax() <= 1e-10 * scale, "score {}", score.amax());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn prop_threshold_partition(cases: u32) -> Result<(), String> {
    let strat = (1usize..30)
        .prop_flat_map(|p| (prop::collection::vec(-2.0f64..2.0, p), 0.0f64..1.5, 1usize..6, any::<u64>()));
    runner(cases)
        .run(&strat, |(beta, tau, n, seed)| {
            let p = beta.len();
            let sel = threshold_select(&CoefficientVector(beta.clone()), tau);
            for (j, &b) in beta.iter().enumerate() {
                let expect = b.abs() >= tau && b != 0.0;
                prop_assert_eq!(sel.contains(j), expect);
            }
            let x = gaussian(n, p, &mut rng(seed));
            match partition(&x, &sel) {
                Ok(part) => {
                    prop_assert_eq!(part.reassemble(), x);
                    let mut all: Vec<usize> = part.z_indices.iter().chain(part.u_indices.iter()).collect();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..p).collect::<Vec<_>>());
                    prop_assert_eq!(part.z.ncols() + part.u.ncols(), p);
                }
                Err(_) => prop_assert!(sel.is_empty() || sel.len() == p),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn criterion_properties() -> Outcome {
    type Suite = fn(u32) -> Result<(), String>;
    let suites: [(&str, Suite); 4] = [
        ("weight normalization", prop_weight_normalization),
        ("smoother linearity", prop_smoother_linearity),
        ("normal equations", prop_normal_equations),
        ("threshold/partition round trip", prop_threshold_partition),
    ];
    let mut failures = Vec::new();
    for (name, f) in suites {
        if let Err(e) = f(1000) {
            failures.push(format!("{name}: {e}"));
        }
    }
    Outcome::new(failures.is_empty(), if failures.is_empty() { "4 suites x 1000 cases".to_string() } else { failures.join("; ") })
}
