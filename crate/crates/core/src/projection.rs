//! Orthogonal and calibrated projections.
//!
//! Given spurious prompt embeddings `A` (d×m) the orthogonal projector
//! `P0 = I - A (AᵀA)⁻¹ Aᵀ` removes span(A). Given positive pairs `S` whose
//! members differ only in the spurious attribute, the calibrated projection
//!
//! ```text
//! P* = P0 (I + λ' Z Zᵀ)⁻¹,   λ' = λ / |S|,   Z = [z_i - z_j]
//! ```
//!
//! minimizes `‖P - P0‖²_F + λ' Σ ‖P z_i - P z_j‖²`. The same calibration matrix
//! applied to a single embedding `z0` minimizes
//! `‖z - z0‖² + λ' Σ (zᵀz_i - zᵀz_j)²`, hence `P0 z* = P* z0`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::embedding_io::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Columns whose norm after projection falls below this fraction of their
/// input norm are treated as annihilated.
pub const ANNIHILATION_TOL: f64 = 1e-10;

/// `λ / |S|`, or zero for an empty pair set.
pub fn lambda_prime(lambda: f64, pair_count: usize) -> f64 {
    if pair_count == 0 {
        0.0
    } else {
        lambda / pair_count as f64
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidLambda(lambda))
    }
}

fn check_square(m: &DMatrix<f64>, dim: usize) -> Result<()> {
    for found in [m.nrows(), m.ncols()] {
        if found != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found,
            });
        }
    }
    Ok(())
}

fn all_finite<'a>(mut values: impl Iterator<Item = &'a f64>) -> bool {
    values.all(|v| v.is_finite())
}

/// Left singular vectors and singular values of `m`, U being d×min(d, n).
fn thin_svd(m: &DMatrix<f64>, what: &'static str) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let a = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = a.thin_svd().map_err(|_| Error::Decomposition(what))?;
    let u = svd.U();
    let s = svd.S().column_vector();
    let u = DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]);
    Ok((u, (0..s.nrows()).map(|k| s[k]).collect()))
}

/// `(m + mᵀ) / 2`, which makes the result exactly symmetric.
fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Ordered positive pairs `(z_i, z_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivePairSet {
    dim: usize,
    pairs: Vec<(DVector<f64>, DVector<f64>)>,
}

impl PositivePairSet {
    pub fn new(dim: usize, pairs: Vec<(DVector<f64>, DVector<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        for (l, r) in &pairs {
            for v in [l, r] {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: v.len(),
                    });
                }
                if !all_finite(v.iter()) {
                    return Err(Error::NonFiniteInput("positive pair"));
                }
            }
        }
        Ok(Self { dim, pairs })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    pub fn from_slices(dim: usize, pairs: &[(&[f64], &[f64])]) -> Result<Self> {
        Self::new(
            dim,
            pairs
                .iter()
                .map(|(l, r)| (DVector::from_column_slice(l), DVector::from_column_slice(r)))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(DVector<f64>, DVector<f64>)] {
        &self.pairs
    }

    /// Differences `z_i - z_j` in stored order.
    pub fn differences(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        self.pairs.iter().map(|(l, r)| l - r)
    }

    /// The pairs at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let pair = self.pairs.get(i).ok_or(Error::OutOfRange {
                what: "pair",
                index: i,
                size: self.pairs.len(),
            })?;
            out.push(pair.clone());
        }
        Self::new(self.dim, out)
    }
}

/// Spurious prompt embeddings as the columns of `A`, with the numerically
/// significant part of their span.
#[derive(Debug, Clone)]
pub struct SpuriousBasis {
    columns: DMatrix<f64>,
    effective_rank: usize,
    // orthonormal basis of the effective span, d×effective_rank
    span: DMatrix<f64>,
}

impl SpuriousBasis {
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        let (d, m) = columns.shape();
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        if !all_finite(columns.iter()) {
            return Err(Error::NonFiniteInput("spurious basis"));
        }
        if m == 0 {
            return Ok(Self {
                columns,
                effective_rank: 0,
                span: DMatrix::zeros(d, 0),
            });
        }
        let (u, singular_values) = thin_svd(&columns, "SVD of spurious basis")?;
        let sigma_max = singular_values.iter().copied().fold(0.0, f64::max);
        let tol = d.max(m) as f64 * f64::EPSILON * sigma_max;
        let keep: Vec<usize> = singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > tol)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            effective_rank: keep.len(),
            span: u.select_columns(&keep),
            columns,
        })
    }

    pub fn from_embeddings(embeddings: &EmbeddingMatrix) -> Result<Self> {
        Self::new(embeddings.as_matrix().clone())
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(dim, 0))
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn count(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn effective_rank(&self) -> usize {
        self.effective_rank
    }
}

/// Projector onto the orthogonal complement of span(A).
///
/// Uses the SVD of `A`, so repeated or nearly collinear columns give the
/// projector for their true span instead of an ill-conditioned `(AᵀA)⁻¹`.
pub fn orthogonal_projection(basis: &SpuriousBasis) -> DMatrix<f64> {
    let d = basis.dim();
    if basis.effective_rank == d {
        // span(A) is the whole space
        return DMatrix::zeros(d, d);
    }
    let mut p = DMatrix::identity(d, d);
    if basis.effective_rank > 0 {
        p -= &basis.span * basis.span.transpose();
        symmetrize(&mut p);
    }
    p
}

/// `Z_diff`: column k is `z_i - z_j` of the k-th pair. Zero columns are kept.
pub fn pair_difference_matrix(pairs: &PositivePairSet) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(pairs.dim(), pairs.len());
    for (k, diff) in pairs.differences().enumerate() {
        z.set_column(k, &diff);
    }
    z
}

/// `I + λ' Z Zᵀ`, exactly symmetric.
fn regularized_gram(z_diff: &DMatrix<f64>, lambda_prime: f64) -> DMatrix<f64> {
    let d = z_diff.nrows();
    let mut m = z_diff * z_diff.transpose();
    m *= lambda_prime;
    for i in 0..d {
        m[(i, i)] += 1.0;
    }
    symmetrize(&mut m);
    m
}

fn factor(z_diff: &DMatrix<f64>, lambda_prime: f64) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(regularized_gram(z_diff, lambda_prime))
        .ok_or(Error::Decomposition("Cholesky of I + λ'ZZᵀ"))
}

/// `(I + λ' Z Zᵀ)⁻¹` from a Cholesky factorization, for an explicit `λ'`.
pub fn calibration_from_differences(z_diff: &DMatrix<f64>, lambda_prime: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda_prime)?;
    if !all_finite(z_diff.iter()) {
        return Err(Error::NonFiniteInput("pair differences"));
    }
    let d = z_diff.nrows();
    if lambda_prime == 0.0 || z_diff.ncols() == 0 {
        return Ok(DMatrix::identity(d, d));
    }
    let mut c = factor(z_diff, lambda_prime)?.solve(&DMatrix::identity(d, d));
    symmetrize(&mut c);
    Ok(c)
}

/// Calibration matrix `(I + λ' Z Zᵀ)⁻¹` through the SPD solve.
pub fn calibration_matrix(pairs: &PositivePairSet, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    calibration_from_differences(
        &pair_difference_matrix(pairs),
        lambda_prime(lambda, pairs.len()),
    )
}

/// Calibration matrix through the SVD of `Z_diff`: `U (I + λ'Σ²)⁻¹ Uᵀ`, with
/// directions outside span(U) left unchanged.
pub fn calibration_matrix_svd(pairs: &PositivePairSet, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    let d = pairs.dim();
    let lp = lambda_prime(lambda, pairs.len());
    if lp == 0.0 {
        return Ok(DMatrix::identity(d, d));
    }
    let z = pair_difference_matrix(pairs);
    if !all_finite(z.iter()) {
        return Err(Error::NonFiniteInput("pair differences"));
    }
    let (u, singular_values) = thin_svd(&z, "SVD of Z_diff")?;
    // I + U diag(1/(1+λ'σ²) - 1) Uᵀ
    let mut scaled = u.clone();
    for (k, s) in singular_values.iter().enumerate() {
        let shrink = 1.0 / (1.0 + lp * s * s) - 1.0;
        scaled.column_mut(k).scale_mut(shrink);
    }
    let mut c = scaled * u.transpose();
    for i in 0..d {
        c[(i, i)] += 1.0;
    }
    symmetrize(&mut c);
    Ok(c)
}

/// P0, the calibration matrix and `P* = P0 · calibration`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub p0: DMatrix<f64>,
    pub calibration: DMatrix<f64>,
    pub p_star: DMatrix<f64>,
    pub lambda: f64,
    pub pair_count: usize,
    pub lambda_prime: f64,
}

impl ProjectionResult {
    pub fn dim(&self) -> usize {
        self.p0.nrows()
    }
}

/// Closed-form minimizer of the calibration loss.
///
/// When `λ = 0` or there are no pairs, `p_star` is a copy of `p0`.
pub fn calibrated_projection(
    p0: &DMatrix<f64>,
    pairs: &PositivePairSet,
    lambda: f64,
) -> Result<ProjectionResult> {
    check_lambda(lambda)?;
    let d = pairs.dim();
    check_square(p0, d)?;
    if !all_finite(p0.iter()) {
        return Err(Error::NonFiniteInput("P0"));
    }
    let lp = lambda_prime(lambda, pairs.len());
    let (calibration, p_star) = if lp == 0.0 {
        (DMatrix::identity(d, d), p0.clone())
    } else {
        let c = calibration_from_differences(&pair_difference_matrix(pairs), lp)?;
        let p_star = p0 * &c;
        (c, p_star)
    };
    Ok(ProjectionResult {
        p0: p0.clone(),
        calibration,
        p_star,
        lambda,
        pair_count: pairs.len(),
        lambda_prime: lp,
    })
}

/// Solves `(I + λ' Z Zᵀ) z = z0` for many `z0` with a single factorization.
#[derive(Debug, Clone)]
pub struct Equalizer {
    dim: usize,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl Equalizer {
    pub fn new(pairs: &PositivePairSet, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let lp = lambda_prime(lambda, pairs.len());
        let factor = if lp == 0.0 {
            None
        } else {
            Some(factor(&pair_difference_matrix(pairs), lp)?)
        };
        Ok(Self {
            dim: pairs.dim(),
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn equalize(&self, z0: &DVector<f64>) -> Result<DVector<f64>> {
        if z0.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: z0.len(),
            });
        }
        if !all_finite(z0.iter()) {
            return Err(Error::NonFiniteInput("z0"));
        }
        Ok(match &self.factor {
            Some(f) => f.solve(z0),
            None => z0.clone(),
        })
    }

    /// Equalizes every column.
    pub fn equalize_all(&self, embeddings: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if embeddings.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: embeddings.dim(),
            });
        }
        match &self.factor {
            Some(f) => EmbeddingMatrix::new(f.solve(embeddings.as_matrix())),
            None => Ok(embeddings.clone()),
        }
    }
}

/// Closed-form minimizer of the equalization loss for one embedding.
pub fn equalize_embedding(
    z0: &DVector<f64>,
    pairs: &PositivePairSet,
    lambda: f64,
) -> Result<DVector<f64>> {
    Equalizer::new(pairs, lambda)?.equalize(z0)
}

/// `‖P - P0‖²_F + λ' Σ ‖P z_i - P z_j‖²`.
pub fn calibration_loss(
    p: &DMatrix<f64>,
    p0: &DMatrix<f64>,
    pairs: &PositivePairSet,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    let d = pairs.dim();
    check_square(p, d)?;
    check_square(p0, d)?;
    let fit = (p - p0).norm_squared();
    let lp = lambda_prime(lambda, pairs.len());
    let spread: f64 = pairs.differences().map(|v| (p * v).norm_squared()).sum();
    Ok(fit + lp * spread)
}

/// `‖z - z0‖² + λ' Σ (zᵀz_i - zᵀz_j)²`.
pub fn equalization_loss(
    z: &DVector<f64>,
    z0: &DVector<f64>,
    pairs: &PositivePairSet,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    let d = pairs.dim();
    for v in [z, z0] {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    let fit = (z - z0).norm_squared();
    let lp = lambda_prime(lambda, pairs.len());
    let spread: f64 = pairs
        .pairs()
        .iter()
        .map(|(l, r)| (z.dot(l) - z.dot(r)).powi(2))
        .sum();
    Ok(fit + lp * spread)
}

/// Embeddings after projection, with the columns that were annihilated.
#[derive(Debug, Clone)]
pub struct ProjectedEmbeddings {
    pub embeddings: EmbeddingMatrix,
    pub zero_columns: Vec<usize>,
}

/// Replaces each column `x` by `proj · x`, optionally rescaled to unit norm.
///
/// Columns whose projection vanishes (relative to [`ANNIHILATION_TOL`]) are set
/// to exactly zero and reported in `zero_columns`.
pub fn apply_projection(
    matrix: &EmbeddingMatrix,
    proj: &DMatrix<f64>,
    renormalize: bool,
) -> Result<ProjectedEmbeddings> {
    check_square(proj, matrix.dim())?;
    if !all_finite(proj.iter()) {
        return Err(Error::NonFiniteInput("projection"));
    }
    let mut out = proj * matrix.as_matrix();
    let mut zero_columns = Vec::new();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let before = matrix.column(j).norm();
        let after = col.norm();
        if after <= ANNIHILATION_TOL * before || after == 0.0 {
            col.fill(0.0);
            zero_columns.push(j);
        } else if renormalize {
            col /= after;
        }
    }
    Ok(ProjectedEmbeddings {
        embeddings: EmbeddingMatrix::new(out)?,
        zero_columns,
    })
}

/// Whether an encoder tag names a model compared by cosine similarity, whose
/// prompt embeddings are unit-normalized on ingestion.
pub fn is_cosine_encoder(encoder_tag: &str) -> bool {
    let tag = encoder_tag.to_ascii_lowercase();
    tag.contains("clip") || tag.starts_with("cosine")
}

/// Applies the ingestion normalization policy to prompt embeddings.
pub fn prepare_prompts(embeddings: &EmbeddingMatrix, encoder_tag: &str) -> EmbeddingMatrix {
    if is_cosine_encoder(encoder_tag) {
        embeddings.normalized()
    } else {
        embeddings.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn unit_pair() -> PositivePairSet {
        PositivePairSet::from_slices(2, &[(&[1.0, 0.0], &[0.0, 1.0])]).unwrap()
    }

    #[test]
    fn axis_aligned_complement() {
        let basis = SpuriousBasis::new(dmatrix![1.0; 0.0; 0.0]).unwrap();
        let p = orthogonal_projection(&basis);
        assert!(close(&p, &DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0])), 1e-15));
    }

    #[test]
    fn empty_basis_gives_identity() {
        let basis = SpuriousBasis::empty(4).unwrap();
        assert_eq!(basis.effective_rank(), 0);
        assert_eq!(orthogonal_projection(&basis), DMatrix::identity(4, 4));
    }

    #[test]
    fn diagonal_rank_one_projector() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let basis = SpuriousBasis::new(dmatrix![s; s]).unwrap();
        let p = orthogonal_projection(&basis);
        assert!(close(&p, &dmatrix![0.5, -0.5; -0.5, 0.5], 1e-15));
    }

    #[test]
    fn repeated_column_handled_by_rank() {
        let basis = SpuriousBasis::new(dmatrix![1.0, 1.0; 0.0, 0.0; 0.0, 0.0]).unwrap();
        assert_eq!(basis.effective_rank(), 1);
        let p = orthogonal_projection(&basis);
        assert!(close(&p, &DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0])), 1e-15));
    }

    #[test]
    fn zero_basis_has_rank_zero() {
        let basis = SpuriousBasis::new(DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(basis.effective_rank(), 0);
    }

    #[test]
    fn non_finite_basis_rejected() {
        assert!(SpuriousBasis::new(dmatrix![f64::NAN; 1.0]).is_err());
    }

    #[test]
    fn difference_matrix_definition() {
        let z = pair_difference_matrix(&unit_pair());
        assert_eq!(z, dmatrix![1.0; -1.0]);
        let empty = pair_difference_matrix(&PositivePairSet::empty(3).unwrap());
        assert_eq!(empty.shape(), (3, 0));
        let same = PositivePairSet::from_slices(2, &[(&[0.3, 0.4], &[0.3, 0.4])]).unwrap();
        assert_eq!(pair_difference_matrix(&same), dmatrix![0.0; 0.0]);
    }

    #[test]
    fn hand_inverted_two_by_two() {
        let r = calibrated_projection(&DMatrix::identity(2, 2), &unit_pair(), 1.0).unwrap();
        let expected = dmatrix![2.0 / 3.0, 1.0 / 3.0; 1.0 / 3.0, 2.0 / 3.0];
        assert!(close(&r.calibration, &expected, 1e-14));
        assert!(close(&r.p_star, &expected, 1e-14));
        assert_eq!(r.lambda_prime, 1.0);
        assert_eq!(r.pair_count, 1);
    }

    #[test]
    fn regularizer_off_returns_p0() {
        let p0 = dmatrix![0.5, -0.5; -0.5, 0.5];
        let r = calibrated_projection(&p0, &unit_pair(), 0.0).unwrap();
        assert_eq!(r.p_star, p0);
        let r = calibrated_projection(&p0, &PositivePairSet::empty(2).unwrap(), 7.0).unwrap();
        assert_eq!(r.p_star, p0);
        assert_eq!(r.lambda_prime, 0.0);
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(matches!(
            calibrated_projection(&DMatrix::identity(2, 2), &unit_pair(), -1.0),
            Err(Error::InvalidLambda(_))
        ));
        assert!(calibration_matrix_svd(&unit_pair(), f64::NAN).is_err());
    }

    #[test]
    fn p0_shape_checked() {
        assert!(matches!(
            calibrated_projection(&DMatrix::identity(3, 3), &unit_pair(), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn svd_route_hand_value() {
        let c = calibration_matrix_svd(&unit_pair(), 1.0).unwrap();
        assert!(close(&c, &dmatrix![2.0 / 3.0, 1.0 / 3.0; 1.0 / 3.0, 2.0 / 3.0], 1e-14));
        assert_eq!(
            calibration_matrix_svd(&unit_pair(), 0.0).unwrap(),
            DMatrix::identity(2, 2)
        );
    }

    #[test]
    fn large_lambda_annihilates_difference_direction() {
        let c = calibration_matrix_svd(&unit_pair(), 1e8).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let spurious = &c * DVector::from_vec(vec![s, -s]);
        let kept = &c * DVector::from_vec(vec![s, s]);
        assert!(spurious.norm() < 1e-6);
        assert!((kept - DVector::from_vec(vec![s, s])).norm() < 1e-12);
    }

    #[test]
    fn equalize_hand_value() {
        let z0 = DVector::from_vec(vec![1.0, 0.0]);
        let z = equalize_embedding(&z0, &unit_pair(), 1.0).unwrap();
        assert!((z[0] - 2.0 / 3.0).abs() < 1e-14 && (z[1] - 1.0 / 3.0).abs() < 1e-14);
        let v = DVector::from_vec(vec![1.0, -1.0]);
        assert!((z.dot(&v).abs() - 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(equalize_embedding(&z0, &unit_pair(), 0.0).unwrap(), z0);
    }

    #[test]
    fn loss_hand_values() {
        let i2 = DMatrix::identity(2, 2);
        let empty = PositivePairSet::empty(2).unwrap();
        assert_eq!(calibration_loss(&i2, &i2, &empty, 3.0).unwrap(), 0.0);
        assert_eq!(calibration_loss(&i2, &i2, &unit_pair(), 1.0).unwrap(), 2.0);

        let z0 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(equalization_loss(&z0, &z0, &empty, 3.0).unwrap(), 0.0);
        assert_eq!(equalization_loss(&z0, &z0, &unit_pair(), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn loss_shape_mismatch() {
        let i3 = DMatrix::identity(3, 3);
        assert!(calibration_loss(&i3, &i3, &unit_pair(), 1.0).is_err());
        let z = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(equalization_loss(&z, &z, &unit_pair(), 1.0).is_err());
    }

    #[test]
    fn minimizers_beat_their_starting_points() {
        let p0 = dmatrix![0.5, -0.5; -0.5, 0.5];
        let pairs = PositivePairSet::from_slices(2, &[(&[1.0, 0.2], &[0.1, 0.9])]).unwrap();
        let r = calibrated_projection(&p0, &pairs, 5.0).unwrap();
        let at_star = calibration_loss(&r.p_star, &p0, &pairs, 5.0).unwrap();
        assert!(at_star <= calibration_loss(&p0, &p0, &pairs, 5.0).unwrap());
        for eps in [1e-3, -1e-3] {
            let perturbed = r.p_star.add_scalar(eps);
            assert!(at_star <= calibration_loss(&perturbed, &p0, &pairs, 5.0).unwrap());
        }
        let z0 = DVector::from_vec(vec![0.6, 0.8]);
        let z = equalize_embedding(&z0, &pairs, 5.0).unwrap();
        assert!(
            equalization_loss(&z, &z0, &pairs, 5.0).unwrap()
                <= equalization_loss(&z0, &z0, &pairs, 5.0).unwrap()
        );
    }

    #[test]
    fn apply_identity_is_noop() {
        let m = EmbeddingMatrix::from_columns(2, &[vec![0.3, 4.0], vec![-1.0, 2.0]]).unwrap();
        let out = apply_projection(&m, &DMatrix::identity(2, 2), false).unwrap();
        assert_eq!(out.embeddings, m);
        assert!(out.zero_columns.is_empty());
    }

    #[test]
    fn apply_and_renormalize() {
        let m = EmbeddingMatrix::from_columns(3, &[vec![1.0, 2.0, 2.0]]).unwrap();
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0]));
        let out = apply_projection(&m, &p, true).unwrap();
        let c = out.embeddings.column(0);
        let h = 2.0 / 8f64.sqrt();
        assert!(c[0].abs() < 1e-15 && (c[1] - h).abs() < 1e-15 && (c[2] - h).abs() < 1e-15);
    }

    #[test]
    fn apply_flags_annihilated_column() {
        let basis = SpuriousBasis::new(dmatrix![1.0; 1.0; 0.0]).unwrap();
        let p0 = orthogonal_projection(&basis);
        let m = EmbeddingMatrix::from_columns(3, &[vec![2.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let out = apply_projection(&m, &p0, true).unwrap();
        assert_eq!(out.zero_columns, vec![0]);
        assert_eq!(out.embeddings.column(0).as_slice(), &[0.0, 0.0, 0.0]);
        assert!((out.embeddings.column(1).norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn apply_dimension_mismatch() {
        let m = EmbeddingMatrix::from_columns(2, &[vec![1.0, 0.0]]).unwrap();
        assert!(apply_projection(&m, &DMatrix::identity(3, 3), true).is_err());
    }

    #[test]
    fn equalizer_matches_calibration_columns() {
        let pairs = PositivePairSet::from_slices(3, &[(&[1.0, 0.5, 0.0], &[0.0, 0.5, 1.0])]).unwrap();
        let eq = Equalizer::new(&pairs, 3.0).unwrap();
        let c = calibration_matrix(&pairs, 3.0).unwrap();
        let m = EmbeddingMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let out = eq.equalize_all(&m).unwrap();
        assert!(close(out.as_matrix(), &c, 1e-14));
    }

    #[test]
    fn cosine_encoder_policy() {
        assert!(is_cosine_encoder("openai/CLIP-ViT-L-14"));
        assert!(is_cosine_encoder("cosine:custom"));
        assert!(!is_cosine_encoder("synthetic"));
        let m = EmbeddingMatrix::from_columns(2, &[vec![3.0, 4.0]]).unwrap();
        assert_eq!(prepare_prompts(&m, "clip-rn50").column(0).as_slice(), &[0.6, 0.8]);
        assert_eq!(prepare_prompts(&m, "raw"), m);
    }
}
