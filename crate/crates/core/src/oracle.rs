//! Independent checks of the closed-form solutions.
//!
//! The gradient-descent minimizers here only evaluate the exact gradients of
//! the two losses; they never form `(I + λ'ZZᵀ)⁻¹`. The `check_*` functions
//! compare them (and the algebraic identities) against the closed forms on
//! seeded random instances, and back the `verify` command.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::projection::{
    calibrated_projection, calibration_matrix, calibration_matrix_svd, equalize_embedding,
    lambda_prime, orthogonal_projection, pair_difference_matrix, PositivePairSet,
    ProjectionResult, SpuriousBasis,
};

pub const DEFAULT_SEED: u64 = 20230601;

pub const GRADIENT_ORACLE_TOL: f64 = 1e-6;
pub const IDENTITY_TOL: f64 = 1e-8;
pub const SVD_ROUTE_TOL: f64 = 1e-8;
pub const PROJECTOR_TOL: f64 = 1e-10;
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Slack allowed for rounding when checking that shrinkage never grows.
pub const SHRINKAGE_SLACK: f64 = 1e-12;
/// Laws checked on a projection read back from f32 storage.
pub const STORED_PROJECTION_TOL: f64 = 1e-5;

pub const LAMBDA_GRID: [f64; 4] = [0.1, 1.0, 10.0, 1000.0];
pub const SHRINKAGE_GRID: [f64; 6] = [0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0];

/// Stopping rule and iteration cap for the descent oracles.
#[derive(Debug, Clone, Copy)]
pub struct DescentOptions {
    pub max_step: f64,
    pub grad_tol: f64,
    pub max_iterations: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_step: 1e-3,
            grad_tol: 1e-10,
            max_iterations: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Descent<T> {
    pub minimizer: T,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Step size `min(max_step, 1/L)` with `L = 2(1 + λ' Σ‖v‖²)` bounding the
/// Hessian's spectral norm, so descent is stable for any λ.
fn step_size(pairs: &PositivePairSet, lp: f64, max_step: f64) -> f64 {
    let trace: f64 = pairs.differences().map(|v| v.norm_squared()).sum();
    let lipschitz = 2.0 * (1.0 + lp * trace);
    max_step.min(1.0 / lipschitz)
}

/// Gradient descent on `‖P − P0‖²_F + λ' Σ ‖P v‖²`, starting at `P0`.
pub fn descend_calibration(
    p0: &DMatrix<f64>,
    pairs: &PositivePairSet,
    lambda: f64,
    opts: DescentOptions,
) -> Descent<DMatrix<f64>> {
    let lp = lambda_prime(lambda, pairs.len());
    let diffs: Vec<DVector<f64>> = pairs.differences().collect();
    let step = step_size(pairs, lp, opts.max_step);
    let mut p = p0.clone();
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        // ∇ = 2(P − P0) + 2λ' Σ (P v) vᵀ
        let mut grad = (&p - p0) * 2.0;
        for v in &diffs {
            let pv = &p * v;
            grad.ger(2.0 * lp, &pv, v, 1.0);
        }
        grad_norm = grad.norm();
        if grad_norm <= opts.grad_tol {
            break;
        }
        p -= grad * step;
        iterations += 1;
    }
    Descent {
        minimizer: p,
        iterations,
        grad_norm,
    }
}

/// Gradient descent on `‖z − z0‖² + λ' Σ (zᵀv)²`, starting at `z0`.
pub fn descend_equalization(
    z0: &DVector<f64>,
    pairs: &PositivePairSet,
    lambda: f64,
    opts: DescentOptions,
) -> Descent<DVector<f64>> {
    let lp = lambda_prime(lambda, pairs.len());
    let diffs: Vec<DVector<f64>> = pairs.differences().collect();
    let step = step_size(pairs, lp, opts.max_step);
    let mut z = z0.clone();
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let mut grad = (&z - z0) * 2.0;
        for v in &diffs {
            grad.axpy(2.0 * lp * z.dot(v), v, 1.0);
        }
        grad_norm = grad.norm();
        if grad_norm <= opts.grad_tol {
            break;
        }
        z.axpy(-step, &grad, 1.0);
        iterations += 1;
    }
    Descent {
        minimizer: z,
        iterations,
        grad_norm,
    }
}

pub type OracleRng = ChaCha8Rng;

pub fn rng(seed: u64) -> OracleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

pub fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, d);
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// Unit-norm pairs `normalize(c + s·a)`, `normalize(c + s·b)` sharing a
/// random content vector `c`; `spread` controls how far members sit apart.
pub fn random_pairs<R: Rng>(rng: &mut R, d: usize, count: usize, spread: f64) -> PositivePairSet {
    let pairs = (0..count)
        .map(|_| {
            let c = unit_vector(rng, d);
            let l = &c + unit_vector(rng, d) * spread;
            let r = &c + unit_vector(rng, d) * spread;
            (normalize(l), normalize(r))
        })
        .collect();
    PositivePairSet::new(d, pairs).expect("generated pairs are finite")
}

fn normalize(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

/// `m` unit columns of which only `rank` are linearly independent.
pub fn random_basis<R: Rng>(rng: &mut R, d: usize, m: usize, rank: usize) -> DMatrix<f64> {
    let rank = rank.min(m).min(d);
    let mut a = DMatrix::zeros(d, m);
    for j in 0..m {
        let col = if j < rank || rank == 0 {
            if rank == 0 {
                DVector::zeros(d)
            } else {
                unit_vector(rng, d)
            }
        } else {
            // combination of the first `rank` columns
            let mut c = DVector::zeros(d);
            for i in 0..rank {
                let w: f64 = rng.sample(StandardNormal);
                c.axpy(w, &a.column(i).into_owned(), 1.0);
            }
            normalize(c)
        };
        a.set_column(j, &col);
    }
    a
}

fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub max_deviation: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &str, instances: usize, max_deviation: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            instances,
            max_deviation,
            threshold,
            passed: max_deviation <= threshold,
        }
    }

    fn failed(name: &str, instances: usize, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            instances,
            max_deviation: f64::INFINITY,
            threshold,
            passed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn outcome_from(name: &str, instances: usize, threshold: f64, result: Result<f64>) -> CheckOutcome {
    match result {
        Ok(dev) if dev.is_finite() => CheckOutcome::new(name, instances, dev, threshold),
        _ => CheckOutcome::failed(name, instances, threshold),
    }
}

/// Random P0 of a d-dimensional space from `m < d` spurious columns (P0 = I
/// when `d == 1`).
fn random_p0<R: Rng>(rng: &mut R, d: usize) -> Result<DMatrix<f64>> {
    let m = if d > 1 { rng.random_range(0..d.min(4)) } else { 0 };
    let basis = SpuriousBasis::new(random_basis(rng, d, m, m))?;
    Ok(orthogonal_projection(&basis))
}

/// Dimension sequence starting with the scalar case.
fn dims<R: Rng>(rng: &mut R, instances: usize, max_dim: usize) -> Vec<usize> {
    (0..instances)
        .map(|i| if i == 0 { 1 } else { rng.random_range(2..=max_dim) })
        .collect()
}

/// Closed-form `P*` against gradient descent on the calibration loss.
pub fn check_calibration_oracle(
    seed: u64,
    instances: usize,
    max_dim: usize,
    max_pairs: usize,
) -> CheckOutcome {
    let name = "calibration_gradient_oracle";
    let mut rng = rng(seed);
    let mut run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, d) in dims(&mut rng, instances, max_dim).into_iter().enumerate() {
            let lambda = LAMBDA_GRID[i % LAMBDA_GRID.len()];
            let n = rng.random_range(1..=max_pairs);
            let pairs = random_pairs(&mut rng, d, n, 0.3);
            let p0 = random_p0(&mut rng, d)?;
            let closed = calibrated_projection(&p0, &pairs, lambda)?;
            let gd = descend_calibration(&p0, &pairs, lambda, DescentOptions::default());
            let dev = relative((&gd.minimizer - &closed.p_star).norm(), closed.p_star.norm());
            worst = worst.max(dev);
        }
        Ok(worst)
    };
    outcome_from(name, instances, GRADIENT_ORACLE_TOL, run())
}

/// Closed-form `z*` against gradient descent on the equalization loss.
pub fn check_equalization_oracle(
    seed: u64,
    instances: usize,
    max_dim: usize,
    max_pairs: usize,
) -> CheckOutcome {
    let name = "equalization_gradient_oracle";
    let mut rng = rng(seed);
    let mut run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, d) in dims(&mut rng, instances, max_dim).into_iter().enumerate() {
            let lambda = LAMBDA_GRID[i % LAMBDA_GRID.len()];
            let n = rng.random_range(1..=max_pairs);
            let pairs = random_pairs(&mut rng, d, n, 0.3);
            let z0 = unit_vector(&mut rng, d);
            let closed = equalize_embedding(&z0, &pairs, lambda)?;
            let gd = descend_equalization(&z0, &pairs, lambda, DescentOptions::default());
            worst = worst.max(relative((&gd.minimizer - &closed).norm(), closed.norm()));
        }
        Ok(worst)
    };
    outcome_from(name, instances, GRADIENT_ORACLE_TOL, run())
}

/// `P0 z* = P* z0` for random `(z0, S, λ, A)`.
pub fn check_equalization_identity(
    seed: u64,
    instances: usize,
    max_dim: usize,
    max_pairs: usize,
) -> CheckOutcome {
    let name = "equalization_identity";
    let mut rng = rng(seed);
    let mut run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, d) in dims(&mut rng, instances, max_dim).into_iter().enumerate() {
            let lambda = 10f64.powf(rng.random_range(-1.0..4.0));
            let n = rng.random_range(0..=max_pairs);
            let pairs = random_pairs(&mut rng, d, n, 0.3);
            let p0 = random_p0(&mut rng, d)?;
            let z0 = unit_vector(&mut rng, d);
            let result = calibrated_projection(&p0, &pairs, lambda)?;
            let z_star = equalize_embedding(&z0, &pairs, lambda)?;
            let lhs = &p0 * z_star;
            let rhs = &result.p_star * &z0;
            // P0 z0 can vanish when z0 lies in span(A); compare against ‖z0‖ then.
            let scale = rhs.norm().max(if i == 0 { 1.0 } else { 0.0 });
            worst = worst.max(relative((lhs - &rhs).norm(), scale));
        }
        Ok(worst)
    };
    outcome_from(name, instances, IDENTITY_TOL, run())
}

/// SVD route against the Cholesky route for `(d, |S|)` shapes.
pub fn check_svd_route(seed: u64, shapes: &[(usize, usize)], lambdas: &[f64]) -> CheckOutcome {
    let name = "svd_route_equivalence";
    let mut rng = rng(seed);
    let mut count = 0;
    let mut run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &(d, n) in shapes {
            let pairs = random_pairs(&mut rng, d, n, 0.3);
            for &lambda in lambdas {
                let solve = calibration_matrix(&pairs, lambda)?;
                let svd = calibration_matrix_svd(&pairs, lambda)?;
                worst = worst.max(relative((&svd - &solve).norm(), solve.norm()));
                count += 1;
            }
        }
        Ok(worst)
    };
    let result = run();
    outcome_from(name, count, SVD_ROUTE_TOL, result)
}

/// Worst symmetric / idempotent / annihilation residual of `P0` over random
/// bases `(d, m, rank)`; rank below `m` gives rank-deficient `A`.
pub fn check_projector_laws(seed: u64, shapes: &[(usize, usize, usize)]) -> CheckOutcome {
    let name = "projector_laws";
    let mut rng = rng(seed);
    let mut run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &(d, m, rank) in shapes {
            let a = random_basis(&mut rng, d, m, rank);
            let basis = SpuriousBasis::new(a.clone())?;
            let p = orthogonal_projection(&basis);
            let pn = p.norm();
            worst = worst.max(relative((&p - p.transpose()).norm(), pn));
            worst = worst.max(relative((&p * &p - &p).norm(), pn));
            worst = worst.max(relative((&p * &a).norm(), a.norm()));
        }
        Ok(worst)
    };
    outcome_from(name, shapes.len(), PROJECTOR_TOL, run())
}

/// Largest growth of `‖C(λ) v‖` between consecutive grid values, relative to
/// `‖v‖`, over every column `v` of `Z_diff`.
pub fn shrinkage_growth(pairs: &PositivePairSet, grid: &[f64]) -> Result<f64> {
    let z = pair_difference_matrix(pairs);
    let mut prev: Option<Vec<f64>> = None;
    let mut worst: f64 = 0.0;
    for &lambda in grid {
        let c = calibration_matrix(pairs, lambda)?;
        let norms: Vec<f64> = z.column_iter().map(|v| (&c * v).norm()).collect();
        if let Some(prev) = &prev {
            for ((now, before), v) in norms.iter().zip(prev).zip(z.column_iter()) {
                worst = worst.max(relative((now - before).max(0.0), v.norm()));
            }
        }
        prev = Some(norms);
    }
    Ok(worst)
}

pub fn check_monotone_shrinkage(seed: u64, instances: usize, max_dim: usize, max_pairs: usize) -> CheckOutcome {
    let name = "monotone_shrinkage";
    let mut rng = rng(seed);
    let mut run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for d in dims(&mut rng, instances, max_dim) {
            let n = rng.random_range(1..=max_pairs);
            let pairs = random_pairs(&mut rng, d, n, 0.3);
            worst = worst.max(shrinkage_growth(&pairs, &SHRINKAGE_GRID)?);
        }
        Ok(worst)
    };
    outcome_from(name, instances, SHRINKAGE_SLACK, run())
}

/// Absolute asymmetry of the calibration matrix.
pub fn check_calibration_symmetry(seed: u64, instances: usize, max_dim: usize, max_pairs: usize) -> CheckOutcome {
    let name = "calibration_symmetry";
    let mut rng = rng(seed);
    let mut run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, d) in dims(&mut rng, instances, max_dim).into_iter().enumerate() {
            let n = rng.random_range(1..=max_pairs);
            let pairs = random_pairs(&mut rng, d, n, 0.3);
            let c = calibration_matrix(&pairs, LAMBDA_GRID[i % LAMBDA_GRID.len()])?;
            worst = worst.max((&c - c.transpose()).amax());
        }
        Ok(worst)
    };
    outcome_from(name, instances, SYMMETRY_TOL, run())
}

/// Laws a stored projection must satisfy, at f32 storage tolerance.
pub fn check_stored_projection(result: &ProjectionResult) -> Vec<CheckOutcome> {
    let tol = STORED_PROJECTION_TOL;
    let p0 = &result.p0;
    let c = &result.calibration;
    let pn = p0.norm();
    let mut out = vec![
        CheckOutcome::new("file_p0_symmetric", 1, relative((p0 - p0.transpose()).norm(), pn), tol),
        CheckOutcome::new("file_p0_idempotent", 1, relative((p0 * p0 - p0).norm(), pn), tol),
        CheckOutcome::new(
            "file_calibration_symmetric",
            1,
            relative((c - c.transpose()).norm(), c.norm()),
            tol,
        ),
        CheckOutcome::new(
            "file_p_star_product",
            1,
            relative((p0 * c - &result.p_star).norm(), result.p_star.norm()),
            tol,
        ),
    ];
    let pd = nalgebra::Cholesky::new(c.clone()).is_some();
    out.push(CheckOutcome::new(
        "file_calibration_positive_definite",
        1,
        if pd { 0.0 } else { f64::INFINITY },
        tol,
    ));
    out
}

/// The default self-verification suite, sized to run in seconds.
pub fn run_suite(seed: u64) -> VerifyReport {
    let checks = vec![
        check_calibration_oracle(seed, 20, 32, 8),
        check_equalization_oracle(seed ^ 0x1, 20, 32, 8),
        check_equalization_identity(seed ^ 0x2, 100, 32, 8),
        check_svd_route(seed ^ 0x3, &[(1, 1), (8, 3), (32, 8), (64, 100), (128, 40)], &[0.1, 1.0, 1000.0]),
        check_projector_laws(
            seed ^ 0x4,
            &[(1, 1, 1), (3, 2, 1), (16, 4, 4), (32, 8, 3), (64, 16, 16), (128, 16, 7)],
        ),
        check_monotone_shrinkage(seed ^ 0x5, 10, 32, 8),
        check_calibration_symmetry(seed ^ 0x6, 10, 64, 16),
    ];
    VerifyReport { seed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn descent_reaches_hand_value() {
        let pairs = PositivePairSet::from_slices(2, &[(&[1.0, 0.0], &[0.0, 1.0])]).unwrap();
        let gd = descend_calibration(&DMatrix::identity(2, 2), &pairs, 1.0, DescentOptions::default());
        let expected = dmatrix![2.0 / 3.0, 1.0 / 3.0; 1.0 / 3.0, 2.0 / 3.0];
        assert!((gd.minimizer - expected).norm() < 1e-9);
        let z = descend_equalization(&DVector::from_vec(vec![1.0, 0.0]), &pairs, 1.0, DescentOptions::default());
        assert!((z.minimizer - DVector::from_vec(vec![2.0 / 3.0, 1.0 / 3.0])).norm() < 1e-9);
    }

    #[test]
    fn rank_deficient_basis_has_requested_rank() {
        let mut r = rng(7);
        let a = random_basis(&mut r, 10, 6, 3);
        assert_eq!(SpuriousBasis::new(a).unwrap().effective_rank(), 3);
    }

    #[test]
    fn default_suite_passes() {
        let report = run_suite(DEFAULT_SEED);
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn corrupted_projection_fails_named_check() {
        let pairs = PositivePairSet::from_slices(2, &[(&[1.0, 0.0], &[0.0, 1.0])]).unwrap();
        let mut r = calibrated_projection(&DMatrix::identity(2, 2), &pairs, 1.0).unwrap();
        assert!(check_stored_projection(&r).iter().all(|c| c.passed));
        r.p_star[(0, 1)] += 0.25;
        let failed: Vec<_> = check_stored_projection(&r)
            .into_iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        assert_eq!(failed, vec!["file_p_star_product".to_string()]);
    }
}
