//! Closed-form and brute-force oracles for the numerical kernels.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use qiv_core::data::IndexSet;
use qiv_core::instrument::{spectral_factor, ustat_cross_gram, whiten};
use qiv_core::selector::dantzig_select;

#[test]
fn lp_matches_soft_thresholding() {
    let o = criterion_soft_threshold();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn lp_matches_vertex_enumeration() {
    let o = criterion_lp_brute_force();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn ustat_matches_double_sum() {
    let o = criterion_ustat();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn spectral_factor_and_whitening() {
    let o = criterion_spectral_whitening();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn lp_with_lambda_above_max_correlation_is_zero() {
    let mut r = rng(7);
    let x = gaussian(30, 6, &mut r);
    let y = gaussian_vec(30, &mut r);
    let lambda = (x.transpose() * &y).amax() * 1.01;
    let beta = dantzig_select(&x, &y, lambda, 1e-9).unwrap();
    assert!(beta.0.iter().all(|b| b.abs() < 1e-8), "{:?}", beta.0);
}

#[test]
fn ustat_single_pair() {
    let zt = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
    let u = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.5, -1.0, 1.0]);
    let k = u.row(0).dot(&u.row(1));
    let zi = zt.row(0).transpose();
    let zj = zt.row(1).transpose();
    let kij = &zi * zj.transpose() * k;
    let expect = (&kij + kij.transpose()) * 0.5 / 3.0;
    let got = ustat_cross_gram(&zt, &u).unwrap();
    assert!((got - expect).amax() < 1e-14);
}

#[test]
fn ustat_matches_brute_force_50_by_20_by_4() {
    let mut r = rng(8);
    let zt = gaussian(50, 4, &mut r);
    let u = gaussian(50, 20, &mut r);
    let fast = ustat_cross_gram(&zt, &u).unwrap();
    let brute = ustat_brute(&zt, &u);
    assert!((&fast - &brute).amax() <= 1e-12 * brute.amax());
}

#[test]
fn ustat_rejects_single_row() {
    let zt = DMatrix::from_element(1, 2, 1.0);
    let u = DMatrix::from_element(1, 2, 1.0);
    assert!(ustat_cross_gram(&zt, &u).is_err());
}

#[test]
fn spectral_factor_reconstructs_rank_two_matrix() {
    let mut r = rng(9);
    let a = gaussian(5, 2, &mut r);
    let m = &a * a.transpose();
    let f = spectral_factor(&m, 2, 0.01).unwrap();
    assert_eq!(f.rank, 2);
    let rebuilt = &f.q1 * DMatrix::from_diagonal(&DVector::from_vec(f.eigenvalues.clone())) * f.q1.transpose();
    assert!((rebuilt - &m).amax() < 1e-10 * m.amax());
    assert_eq!(f.q12.shape(), (2, 2));
    assert_eq!(f.q12, f.q1.rows(3, 2).into_owned());
}

#[test]
fn spectral_factor_rejects_zero_matrix() {
    assert!(spectral_factor(&DMatrix::zeros(3, 3), 1, 0.01).is_err());
}

#[test]
fn whitened_instrument_is_uncorrelated_with_z() {
    let n = 5000;
    let mut r = rng(10);
    let z = gaussian(n, 2, &mut r);
    let e = gaussian(n, 1, &mut r);
    let ustar = z.columns(0, 1) * 0.5 + e;
    let mut u = gaussian(n, 3, &mut r);
    u.set_column(1, &ustar.column(0));
    let (zt, plan) = whiten(&z, &u, &IndexSet::new(vec![1])).unwrap();
    assert_eq!(plan.d(), 1);
    assert_eq!(zt.columns(0, 2), z.columns(0, 2));
    let ut = zt.column(2).into_owned();
    for j in 0..2 {
        let c = corr(&ut, &z.column(j).into_owned());
        assert!(c.abs() < 0.05, "corr with z{j} = {c}");
    }
    let var = ut.map(|v| v * v).mean() - ut.mean().powi(2);
    assert!((var - 1.0).abs() < 1e-8, "variance {var}");
}

fn corr(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ac = a.add_scalar(-a.mean());
    let bc = b.add_scalar(-b.mean());
    ac.dot(&bc) / (ac.norm() * bc.norm())
}
