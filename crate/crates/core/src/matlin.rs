//! Tolerance-aware matrix primitives.
//!
//! Everything the separability iteration needs from linear algebra lives
//! here: positivity tests on Hermitian matrices, rank-truncated
//! pseudoinverses, operator and trace norms, and the two block-matrix
//! reductions (Schur complement with kernel inclusion, and the real
//! `[[A, C], [C^T, A]]` to complex `A + iC` reduction).
//!
//! All routines are pure functions of their inputs.

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;

/// Numerical tolerances used throughout the decision procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    /// Relative tolerance for eigenvalue positivity, scaled by `max(1, ||M||_op)`.
    pub psd_tol: f64,
    /// Relative singular-value cutoff for pseudoinversion.
    pub pinv_rcond: f64,
    /// Absolute band inside which the separability tests are inconclusive.
    pub decision_margin: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            psd_tol: 1e-9,
            pinv_rcond: 1e-12,
            decision_margin: 1e-10,
        }
    }
}

impl ToleranceConfig {
    pub fn new(psd_tol: f64, pinv_rcond: f64, decision_margin: f64) -> Result<Self> {
        let tol = Self {
            psd_tol,
            pinv_rcond,
            decision_margin,
        };
        tol.validate()?;
        Ok(tol)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("psd_tol", self.psd_tol),
            ("pinv_rcond", self.pinv_rcond),
            ("decision_margin", self.decision_margin),
        ] {
            if !(value > 0.0 && value < 1e-2) {
                return Err(Error::InvalidTolerance { name, value });
            }
        }
        Ok(())
    }

    /// Absolute PSD threshold for a matrix of operator norm `norm`.
    pub fn psd_threshold(&self, norm: f64) -> f64 {
        self.psd_tol * norm.max(1.0)
    }
}

/// A complex Hermitian matrix. Symmetrized on construction, so the
/// Hermiticity residual is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    entries: DMatrix<C64>,
}

impl HermitianMatrix {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("hermitian matrix"));
        }
        let entries = (&m + m.adjoint()).scale(0.5);
        Ok(Self { entries })
    }

    pub fn from_real_symmetric(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(|x| C64::new(x, 0.0)))
    }

    /// Builds `re + i * im`. `re` is symmetrized and `im` antisymmetrized by
    /// the Hermitian projection.
    pub fn from_parts(re: &DMatrix<f64>, im: &DMatrix<f64>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::Shape {
                context: "real/imaginary parts",
                expected: format!("{:?}", re.shape()),
                found: format!("{:?}", im.shape()),
            });
        }
        Self::new(re.zip_map(im, C64::new))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub is_psd: bool,
    pub lambda_min: f64,
}

fn eigen<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> SymmetricEigen<T, nalgebra::Dyn> {
    SymmetricEigen::new(m.clone())
}

fn report_from_spectrum(eigenvalues: &DVector<f64>, psd_tol: f64) -> PsdReport {
    if eigenvalues.is_empty() {
        return PsdReport {
            is_psd: true,
            lambda_min: 0.0,
        };
    }
    let lambda_min = eigenvalues.min();
    let norm = eigenvalues.amax();
    PsdReport {
        is_psd: lambda_min >= -psd_tol * norm.max(1.0),
        lambda_min,
    }
}

/// Positivity test: `is_psd` iff `lambda_min >= -psd_tol * max(1, ||M||_op)`.
pub fn psd_check(m: &HermitianMatrix, tol: &ToleranceConfig) -> PsdReport {
    report_from_spectrum(&eigen(&m.entries).eigenvalues, tol.psd_tol)
}

/// [`psd_check`] for a real symmetric matrix. The input is symmetrized first.
pub fn psd_check_symmetric(m: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<PsdReport> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("symmetric matrix"));
    }
    Ok(report_from_spectrum(
        &eigen(&symmetrize(m)).eigenvalues,
        tol.psd_tol,
    ))
}

/// Smallest eigenvalue and a unit eigenvector for it.
pub fn min_eigenpair(m: &HermitianMatrix) -> (f64, DVector<C64>) {
    let eig = eigen(&m.entries);
    let (idx, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    (lambda, eig.eigenvectors.column(idx).into_owned())
}

/// Pseudoinverse of a Hermitian matrix together with an orthonormal basis
/// of the truncated (numerical) kernel.
fn hermitian_pinv<T: ComplexField<RealField = f64>>(
    m: &DMatrix<T>,
    rcond: f64,
) -> (DMatrix<T>, Vec<DVector<T>>) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), Vec::new());
    }
    let eig = eigen(m);
    let cutoff = rcond * eig.eigenvalues.amax();
    let mut scaled = eig.eigenvectors.clone();
    let mut kernel = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff {
            kernel.push(eig.eigenvectors.column(k).into_owned());
            scaled.column_mut(k).fill(T::zero());
        } else {
            scaled.column_mut(k).scale_mut(1.0 / lambda);
        }
    }
    let pinv = &scaled * eig.eigenvectors.adjoint();
    (pinv, kernel)
}

/// Moore-Penrose pseudoinverse with eigenvalues below `pinv_rcond * sigma_max` zeroed.
pub fn pseudoinverse(m: &HermitianMatrix, tol: &ToleranceConfig) -> HermitianMatrix {
    let (pinv, _) = hermitian_pinv(&m.entries, tol.pinv_rcond);
    HermitianMatrix {
        entries: (&pinv + pinv.adjoint()).scale(0.5),
    }
}

/// Real symmetric pseudoinverse plus numerical kernel basis.
pub fn pseudoinverse_symmetric(
    m: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let (pinv, kernel) = hermitian_pinv(&symmetrize(m), tol.pinv_rcond);
    (symmetrize(&pinv), kernel)
}

fn hermitian_sandwich<T: ComplexField<RealField = f64>>(
    m: &DMatrix<T>,
    c: &DMatrix<T>,
    rcond: f64,
) -> (DMatrix<T>, Vec<DVector<T>>) {
    if m.nrows() == 0 {
        return (DMatrix::zeros(c.nrows(), c.nrows()), Vec::new());
    }
    let eig = eigen(m);
    let cutoff = rcond * eig.eigenvalues.amax();
    // Rows of V^H C^H scaled by |lambda|^(-1/2); avoids forming the large
    // entries of the pseudoinverse when small eigenvalues are kept.
    let mut factor = eig.eigenvectors.adjoint() * c.adjoint();
    let mut signs = vec![0.0; m.nrows()];
    let mut kernel = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff {
            kernel.push(eig.eigenvectors.column(k).into_owned());
            factor.row_mut(k).fill(T::zero());
        } else {
            factor.row_mut(k).scale_mut(1.0 / lambda.abs().sqrt());
            signs[k] = lambda.signum();
        }
    }
    let mut signed = factor.clone();
    for (k, s) in signs.iter().enumerate() {
        if *s < 0.0 {
            signed.row_mut(k).neg_mut();
        }
    }
    (factor.adjoint() * signed, kernel)
}

/// `c m^+ c^H` for Hermitian `m`, evaluated in factored form.
pub fn sandwich(m: &HermitianMatrix, c: &DMatrix<C64>, tol: &ToleranceConfig) -> HermitianMatrix {
    let (s, _) = hermitian_sandwich(&m.entries, c, tol.pinv_rcond);
    HermitianMatrix {
        entries: (&s + s.adjoint()).scale(0.5),
    }
}

/// Real symmetric `c m^+ c^T` plus the numerical kernel basis of `m`.
pub fn sandwich_symmetric(
    m: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let (s, kernel) = hermitian_sandwich(&symmetrize(m), c, tol.pinv_rcond);
    (symmetrize(&s), kernel)
}

/// Largest singular value.
pub fn operator_norm<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Sum of singular values.
pub fn trace_norm<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().sum()
}

/// Result of the Schur-complement positivity test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchurReport {
    pub is_psd: bool,
    pub kernel_ok: bool,
    /// max ||C v|| over the numerical kernel of B.
    pub kernel_residual: f64,
    /// lambda_min of B.
    pub b_margin: f64,
    /// lambda_min of A - C B^+ C^T.
    pub complement_margin: f64,
}

/// Tolerance on `||C v||` for kernel vectors `v`.
///
/// Residuals of size `eta` on an exact kernel direction move the smallest
/// eigenvalue of the block matrix by roughly `eta^2`, hence the square root.
pub fn kernel_tolerance(c: &DMatrix<f64>, tol: &ToleranceConfig) -> f64 {
    tol.psd_tol.sqrt() * operator_norm(c).max(1.0)
}

/// Largest `||C v||` over the given vectors.
pub fn kernel_residual(c: &DMatrix<f64>, kernel: &[DVector<f64>]) -> f64 {
    kernel.iter().map(|v| (c * v).norm()).fold(0.0, f64::max)
}

/// Positivity of `M = [[A, C], [C^T, B]]` through the Schur complement of `B`:
/// `B >= 0`, `ker(B) ⊆ ker(C)` and `A - C B^+ C^T >= 0`.
pub fn schur_psd(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> Result<SchurReport> {
    check_symmetric(a, tol)?;
    check_symmetric(b, tol)?;
    if c.nrows() != a.nrows() || c.ncols() != b.nrows() {
        return Err(Error::Shape {
            context: "off-diagonal block",
            expected: format!("{}x{}", a.nrows(), b.nrows()),
            found: format!("{}x{}", c.nrows(), c.ncols()),
        });
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("off-diagonal block"));
    }
    let b_report = psd_check_symmetric(b, tol)?;
    let (term, kernel) = sandwich_symmetric(b, c, tol);
    let residual = kernel_residual(c, &kernel);
    let kernel_ok = residual <= kernel_tolerance(c, tol);
    let complement = symmetrize(&(a - term));
    let comp_report = psd_check_symmetric(&complement, tol)?;
    Ok(SchurReport {
        is_psd: b_report.is_psd && kernel_ok && comp_report.is_psd,
        kernel_ok,
        kernel_residual: residual,
        b_margin: b_report.lambda_min,
        complement_margin: comp_report.lambda_min,
    })
}

/// Positivity of `[[A, C], [C^T, A]]` for symmetric `A` and antisymmetric
/// `C`, decided on the half-size Hermitian matrix `A + iC`.
pub fn hermitian_reduce_psd(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> Result<PsdReport> {
    check_symmetric(a, tol)?;
    if c.shape() != a.shape() {
        return Err(Error::Shape {
            context: "antisymmetric block",
            expected: format!("{:?}", a.shape()),
            found: format!("{:?}", c.shape()),
        });
    }
    let residual = (c + c.transpose()).amax();
    let limit = tol.psd_threshold(c.amax());
    if !residual.is_finite() || residual > limit {
        return Err(Error::NotAntisymmetric {
            residual,
            tol: limit,
        });
    }
    let h = HermitianMatrix::from_parts(a, c)?;
    Ok(psd_check(&h, tol))
}

/// Errors unless `m` is square, finite and symmetric up to `psd_tol` (relative).
pub fn check_symmetric(m: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("symmetric matrix"));
    }
    let residual = asymmetry(m);
    let limit = tol.psd_threshold(m.amax());
    if residual > limit {
        return Err(Error::Asymmetric {
            residual,
            tol: limit,
        });
    }
    Ok(())
}

/// max |m_jk - m_kj|.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    (m - m.transpose()).amax()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()).scale(0.5)
}

pub fn antisymmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m - m.transpose()).scale(0.5)
}

/// Block-diagonal `a ⊕ b`.
pub fn direct_sum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(p + q, a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((p, a.ncols()), b.shape()).copy_from(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn j1() -> DMatrix<f64> {
        dmatrix![0.0, -1.0; 1.0, 0.0]
    }

    fn minus_i(a: &DMatrix<f64>, j: &DMatrix<f64>) -> HermitianMatrix {
        HermitianMatrix::from_parts(a, &(-j)).unwrap()
    }

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn tolerance_defaults_and_bounds() {
        let t = ToleranceConfig::default();
        assert!(t.validate().is_ok());
        assert!(ToleranceConfig::new(0.0, 1e-12, 1e-10).is_err());
        assert!(ToleranceConfig::new(1e-9, 0.5, 1e-10).is_err());
        assert!(ToleranceConfig::new(1e-9, 1e-12, f64::NAN).is_err());
    }

    #[test]
    fn psd_identity() {
        let m = HermitianMatrix::from_real_symmetric(&DMatrix::identity(2, 2)).unwrap();
        let r = psd_check(&m, &ToleranceConfig::default());
        assert!(r.is_psd);
        assert!((r.lambda_min - 1.0).abs() < 1e-15);
    }

    #[test]
    fn psd_vacuum_saturates() {
        let r = psd_check(
            &minus_i(&DMatrix::identity(2, 2), &j1()),
            &Default::default(),
        );
        assert!(r.is_psd);
        assert!(r.lambda_min.abs() < 1e-15);
    }

    #[test]
    fn psd_subvacuum_fails() {
        let a = DMatrix::identity(2, 2) * 0.5;
        let r = psd_check(&minus_i(&a, &j1()), &Default::default());
        assert!(!r.is_psd);
        assert!((r.lambda_min + 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        let m = DMatrix::from_element(2, 2, C64::new(f64::NAN, 0.0));
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn pinv_rank_deficient_diagonal() {
        let m = HermitianMatrix::from_real_symmetric(&dmatrix![2.0, 0.0; 0.0, 0.0]).unwrap();
        let p = pseudoinverse(&m, &Default::default());
        let expected = dmatrix![0.5, 0.0; 0.0, 0.0].map(|x| C64::new(x, 0.0));
        assert!((p.entries() - expected).camax() < 1e-15);
    }

    #[test]
    fn pinv_identity() {
        let m = HermitianMatrix::from_real_symmetric(&DMatrix::identity(3, 3)).unwrap();
        let p = pseudoinverse(&m, &Default::default());
        assert!((p.entries() - m.entries()).camax() < 1e-15);
    }

    #[test]
    fn pinv_vacuum_gap_matches_eigenprojector() {
        // I - iJ1 = [[1, i], [-i, 1]] has eigenvalues 0 and 2. Eigenvector for
        // 2 is (1, -i)/sqrt(2), so the projector is [[1, i], [-i, 1]] / 2.
        let m = minus_i(&DMatrix::identity(2, 2), &j1());
        let i = C64::new(0.0, 1.0);
        let one = C64::new(1.0, 0.0);
        let projector = DMatrix::from_row_slice(2, 2, &[one, i, -i, one]).scale(0.5);
        let oracle_pinv = projector.scale(0.5);
        let p = pseudoinverse(&m, &Default::default());
        assert!((p.entries() - &oracle_pinv).camax() < 1e-14);
        assert!((m.entries() * p.entries() - &projector).camax() < 1e-14);
    }

    #[test]
    fn operator_norm_examples() {
        assert_eq!(operator_norm(&DMatrix::<f64>::zeros(3, 3)), 0.0);
        assert!((operator_norm(&dmatrix![2.0, 0.0; 0.0, 1.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn operator_norm_randomized_oracle() {
        // Sample 10^4 unit vectors, then polish the best one by power
        // iteration on M^T M.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = randn(&mut rng, 4, 4);
        let mut best = DVector::zeros(4);
        let mut best_val = 0.0;
        for _ in 0..10_000 {
            let v = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let val = (&m * &v).norm();
            if val > best_val {
                best_val = val;
                best = v;
            }
        }
        let sigma = operator_norm(&m);
        assert!(best_val <= sigma + 1e-12);
        let mtm = m.transpose() * &m;
        for _ in 0..5_000 {
            best = (&mtm * &best).normalize();
        }
        assert!(((&m * &best).norm() - sigma).abs() < 1e-8);
    }

    #[test]
    fn trace_norm_examples() {
        assert!((trace_norm(&DMatrix::<f64>::identity(6, 6)) - 6.0).abs() < 1e-14);
        assert!((trace_norm(&dmatrix![3.0, 0.0; 0.0, -1.0]) - 4.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = randn(&mut rng, 5, 5);
        let psd = &g * g.transpose();
        assert!((trace_norm(&psd) - psd.trace()).abs() < 1e-10);
    }

    #[test]
    fn schur_examples() {
        let t = ToleranceConfig::default();
        let i2 = DMatrix::identity(2, 2);
        let r = schur_psd(&i2, &i2, &DMatrix::zeros(2, 2), &t).unwrap();
        assert!(r.is_psd && r.kernel_ok);
        let i1 = DMatrix::identity(1, 1);
        let r = schur_psd(&i1, &i1, &dmatrix![2.0], &t).unwrap();
        assert!(!r.is_psd && r.kernel_ok);
        assert!((r.complement_margin + 3.0).abs() < 1e-14);
    }

    #[test]
    fn schur_kernel_violation() {
        let t = ToleranceConfig::default();
        let b = dmatrix![1.0, 0.0; 0.0, 0.0];
        let c = dmatrix![0.0, 1.0];
        let r = schur_psd(&DMatrix::identity(1, 1), &b, &c, &t).unwrap();
        assert!(!r.kernel_ok);
        assert!(!r.is_psd);
    }

    #[test]
    fn schur_shape_mismatch() {
        let t = ToleranceConfig::default();
        let i2 = DMatrix::identity(2, 2);
        assert!(matches!(
            schur_psd(&i2, &i2, &DMatrix::zeros(3, 2), &t),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn reduce_examples() {
        let t = ToleranceConfig::default();
        let i2 = DMatrix::identity(2, 2);
        assert!(
            hermitian_reduce_psd(&i2, &DMatrix::zeros(2, 2), &t)
                .unwrap()
                .is_psd
        );
        let r = hermitian_reduce_psd(&i2, &(j1() * 2.0), &t).unwrap();
        assert!(!r.is_psd);
        assert!((r.lambda_min + 1.0).abs() < 1e-14);
    }

    #[test]
    fn reduce_rejects_symmetric_c() {
        let t = ToleranceConfig::default();
        let i2 = DMatrix::identity(2, 2);
        assert!(matches!(
            hermitian_reduce_psd(&i2, &i2, &t),
            Err(Error::NotAntisymmetric { .. })
        ));
    }

    #[test]
    fn direct_sum_layout() {
        let s = direct_sum(&DMatrix::identity(2, 2), &(DMatrix::identity(1, 1) * 3.0));
        assert_eq!(s.shape(), (3, 3));
        assert_eq!(s[(2, 2)], 3.0);
        assert_eq!(s[(0, 2)], 0.0);
    }

    #[test]
    fn sandwich_matches_explicit_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = randn(&mut rng, 4, 2);
        let m = &r * r.transpose();
        let c = randn(&mut rng, 3, 4);
        let (pinv, _) = pseudoinverse_symmetric(&m, &ToleranceConfig::default());
        let explicit = &c * pinv * c.transpose();
        let (s, kernel) = sandwich_symmetric(&m, &c, &ToleranceConfig::default());
        assert_eq!(kernel.len(), 2);
        assert!((s - explicit).amax() < 1e-9);
    }
}
