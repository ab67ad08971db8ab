//! Correlation matrices of Gaussian states.
//!
//! Quadratures are ordered per mode, `(x1, p1, x2, p2, ...)`, so the
//! symplectic form is block diagonal with one `[[0, -1], [1, 0]]` block per
//! mode. Data in `(x..., p...)` ordering must be permuted before use.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlin::{self, HermitianMatrix, PsdReport, ToleranceConfig};

/// The standard symplectic form `J_n`, a direct sum of `n` copies of `J_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticForm {
    n_modes: usize,
    matrix: DMatrix<f64>,
}

impl SymplecticForm {
    pub fn new(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::ZeroModes);
        }
        Ok(Self {
            n_modes,
            matrix: symplectic_matrix(n_modes),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

pub fn symplectic_form(n: usize) -> Result<SymplecticForm> {
    SymplecticForm::new(n)
}

/// `J_n` as a bare matrix. `n = 0` gives the empty matrix.
pub(crate) fn symplectic_matrix(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        j[(2 * k, 2 * k + 1)] = -1.0;
        j[(2 * k + 1, 2 * k)] = 1.0;
    }
    j
}

/// `gamma - iJ` as a Hermitian matrix.
pub(crate) fn gap_matrix(gamma: &DMatrix<f64>) -> HermitianMatrix {
    let j = symplectic_matrix(gamma.nrows() / 2);
    HermitianMatrix::from_parts(gamma, &(-j)).expect("finite square input")
}

/// `lambda_min(gamma - iJ)` together with the PSD verdict.
pub(crate) fn cm_margin(gamma: &DMatrix<f64>, tol: &ToleranceConfig) -> PsdReport {
    matlin::psd_check(&gap_matrix(gamma), tol)
}

/// Real symmetric `2n x 2n` matrix describing an `n`-mode state.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    n_modes: usize,
    gamma: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmValidity {
    pub valid: bool,
    /// `lambda_min(gamma - iJ)`.
    pub margin: f64,
}

impl CovarianceMatrix {
    /// Checks shape, finiteness and symmetry, then symmetrizes.
    pub fn new(gamma: DMatrix<f64>, tol: &ToleranceConfig) -> Result<Self> {
        if !gamma.is_square() {
            return Err(Error::NotSquare {
                rows: gamma.nrows(),
                cols: gamma.ncols(),
            });
        }
        let dim = gamma.nrows();
        if dim % 2 == 1 {
            return Err(Error::OddDimension(dim));
        }
        if dim == 0 {
            return Err(Error::ZeroModes);
        }
        matlin::check_symmetric(&gamma, tol)?;
        Ok(Self {
            n_modes: dim / 2,
            gamma: matlin::symmetrize(&gamma),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.gamma
    }

    pub fn validate(&self, tol: &ToleranceConfig) -> CmValidity {
        let r = cm_margin(&self.gamma, tol);
        CmValidity {
            valid: r.is_psd,
            margin: r.lambda_min,
        }
    }
}

/// Validity of a raw matrix as a correlation matrix.
pub fn validate_cm(gamma: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<CmValidity> {
    Ok(CovarianceMatrix::new(gamma.clone(), tol)?.validate(tol))
}

/// A correlation matrix split as `[[A, C], [C^T, B]]` with `n` modes on
/// side A and `m` on side B.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteCM {
    pub n: usize,
    pub m: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub cm: BipartiteCM,
    pub a_valid: bool,
    pub b_valid: bool,
}

impl BipartiteCM {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        for blk in [&a, &b] {
            if !blk.is_square() {
                return Err(Error::NotSquare {
                    rows: blk.nrows(),
                    cols: blk.ncols(),
                });
            }
            if blk.nrows() % 2 == 1 {
                return Err(Error::OddDimension(blk.nrows()));
            }
            if blk.nrows() == 0 {
                return Err(Error::ZeroModes);
            }
        }
        if c.shape() != (a.nrows(), b.nrows()) {
            return Err(Error::Shape {
                context: "off-diagonal block C",
                expected: format!("{}x{}", a.nrows(), b.nrows()),
                found: format!("{}x{}", c.nrows(), c.ncols()),
            });
        }
        Ok(Self {
            n: a.nrows() / 2,
            m: b.nrows() / 2,
            a,
            b,
            c,
        })
    }

    /// Splits a full matrix with `n` modes on side A and `m` on side B.
    pub fn split(gamma: &DMatrix<f64>, n: usize, m: usize, tol: &ToleranceConfig) -> Result<Split> {
        if n == 0 || m == 0 {
            return Err(Error::ZeroModes);
        }
        let cm = CovarianceMatrix::new(gamma.clone(), tol)?;
        if cm.n_modes() != n + m {
            return Err(Error::Shape {
                context: "mode counts",
                expected: format!("{}x{}", 2 * (n + m), 2 * (n + m)),
                found: format!("{}x{}", gamma.nrows(), gamma.ncols()),
            });
        }
        let g = cm.gamma();
        let (p, q) = (2 * n, 2 * m);
        let bip = Self {
            n,
            m,
            a: g.view((0, 0), (p, p)).into_owned(),
            b: g.view((p, p), (q, q)).into_owned(),
            c: g.view((0, p), (p, q)).into_owned(),
        };
        Ok(Split {
            a_valid: cm_margin(&bip.a, tol).is_psd,
            b_valid: cm_margin(&bip.b, tol).is_psd,
            cm: bip,
        })
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let (p, q) = (2 * self.n, 2 * self.m);
        let mut g = DMatrix::zeros(p + q, p + q);
        g.view_mut((0, 0), (p, p)).copy_from(&self.a);
        g.view_mut((p, p), (q, q)).copy_from(&self.b);
        g.view_mut((0, p), (p, q)).copy_from(&self.c);
        g.view_mut((p, 0), (q, p)).copy_from(&self.c.transpose());
        g
    }

    pub fn dim(&self) -> usize {
        2 * (self.n + self.m)
    }

    /// `J_{n,m} = J_n ⊕ J_m`.
    pub fn symplectic(&self) -> DMatrix<f64> {
        symplectic_matrix(self.n + self.m)
    }

    pub fn validate(&self, tol: &ToleranceConfig) -> CmValidity {
        let r = cm_margin(&self.assemble(), tol);
        CmValidity {
            valid: r.is_psd,
            margin: r.lambda_min,
        }
    }

    /// `gamma + eps * perturbation`, with the perturbation over the full space.
    pub fn perturbed(&self, perturbation: &DMatrix<f64>, eps: f64) -> Result<Self> {
        if perturbation.shape() != (self.dim(), self.dim()) {
            return Err(Error::Shape {
                context: "perturbation",
                expected: format!("{}x{}", self.dim(), self.dim()),
                found: format!("{}x{}", perturbation.nrows(), perturbation.ncols()),
            });
        }
        let g = self.assemble() + perturbation * eps;
        let (p, q) = (2 * self.n, 2 * self.m);
        Ok(Self {
            n: self.n,
            m: self.m,
            a: g.view((0, 0), (p, p)).into_owned(),
            b: g.view((p, p), (q, q)).into_owned(),
            c: g.view((0, p), (p, q)).into_owned(),
        })
    }

    pub fn shifted(&self, eps: f64) -> Self {
        Self {
            n: self.n,
            m: self.m,
            a: &self.a + DMatrix::identity(2 * self.n, 2 * self.n) * eps,
            b: &self.b + DMatrix::identity(2 * self.m, 2 * self.m) * eps,
            c: self.c.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a
            .iter()
            .chain(self.b.iter())
            .chain(self.c.iter())
            .all(|x| x.is_finite())
    }
}

/// Two-mode squeezed vacuum with squeezing `r`.
pub fn tmss(r: f64) -> BipartiteCM {
    let (ch, sh) = ((2.0 * r).cosh(), (2.0 * r).sinh());
    let mut c = DMatrix::zeros(2, 2);
    c[(0, 0)] = sh;
    c[(1, 1)] = -sh;
    BipartiteCM {
        n: 1,
        m: 1,
        a: DMatrix::identity(2, 2) * ch,
        b: DMatrix::identity(2, 2) * ch,
        c,
    }
}

/// `A ⊕ B` with no correlations.
pub fn product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<BipartiteCM> {
    BipartiteCM::new(a.clone(), b.clone(), DMatrix::zeros(a.nrows(), b.nrows()))
}

/// `n`-mode vacuum (identity).
pub fn vacuum(n: usize) -> DMatrix<f64> {
    DMatrix::identity(2 * n, 2 * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purity {
    Pure,
    Mixed,
}

/// Number of `exp(J H)` factors in a random symplectic.
const SYMPLECTIC_FACTORS: usize = 3;

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Random symplectic `S = exp(J H1) exp(J H2) exp(J H3)` with symmetric
/// `H_k` whose spectral norm is of order one.
pub fn random_symplectic(modes: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let d = 2 * modes;
    let j = symplectic_matrix(modes);
    let scale = 1.0 / (d as f64).sqrt();
    let mut s = DMatrix::identity(d, d);
    for _ in 0..SYMPLECTIC_FACTORS {
        let g = gaussian_matrix(rng, d, d, scale);
        let h = matlin::symmetrize(&g);
        s *= (&j * h).exp();
    }
    s
}

/// Random single-system CM on `modes` modes.
pub fn random_single(modes: usize, purity: Purity, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let d = 2 * modes;
    let s = random_symplectic(modes, rng);
    let mut gamma = &s * s.transpose();
    if purity == Purity::Mixed {
        let r = gaussian_matrix(rng, d, d, 1.0 / (d as f64).sqrt());
        gamma += &r * r.transpose();
    }
    matlin::symmetrize(&gamma)
}

/// Random bipartite CM. Pure states are `S S^T`, mixed ones add `R R^T`.
pub fn random_cm(n: usize, m: usize, purity: Purity, seed: u64) -> Result<BipartiteCM> {
    if n == 0 || m == 0 {
        return Err(Error::ZeroModes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = random_single(n + m, purity, &mut rng);
    Ok(BipartiteCM::split(&gamma, n, m, &ToleranceConfig::default())?.cm)
}

/// A separable state `gamma_A ⊕ gamma_B + R R^T` and its generating blocks.
#[derive(Debug, Clone)]
pub struct SeparableFixture {
    pub cm: BipartiteCM,
    pub gamma_a: DMatrix<f64>,
    pub gamma_b: DMatrix<f64>,
}

/// Separable fixture with mixed local blocks and correlated noise of scale `noise`.
pub fn random_separable(n: usize, m: usize, noise: f64, seed: u64) -> Result<SeparableFixture> {
    if n == 0 || m == 0 {
        return Err(Error::ZeroModes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma_a = random_single(n, Purity::Mixed, &mut rng);
    let gamma_b = random_single(m, Purity::Mixed, &mut rng);
    let d = 2 * (n + m);
    let r = gaussian_matrix(&mut rng, d, d, noise / (d as f64).sqrt());
    let gamma = matlin::direct_sum(&gamma_a, &gamma_b) + &r * r.transpose();
    let cm = BipartiteCM::split(
        &matlin::symmetrize(&gamma),
        n,
        m,
        &ToleranceConfig::default(),
    )?
    .cm;
    Ok(SeparableFixture {
        cm,
        gamma_a,
        gamma_b,
    })
}

/// Momentum sign flip on every B-side mode: `Λ γ Λ` with
/// `Λ = 1_{2n} ⊕ diag(1, -1, ..., 1, -1)`.
pub fn partial_transpose(bip: &BipartiteCM) -> BipartiteCM {
    let flip = |k: usize| if k % 2 == 1 { -1.0 } else { 1.0 };
    let b = DMatrix::from_fn(bip.b.nrows(), bip.b.ncols(), |r, c| {
        flip(r) * flip(c) * bip.b[(r, c)]
    });
    let c = DMatrix::from_fn(bip.c.nrows(), bip.c.ncols(), |r, c| flip(c) * bip.c[(r, c)]);
    BipartiteCM {
        n: bip.n,
        m: bip.m,
        a: bip.a.clone(),
        b,
        c,
    }
}

/// On-disk CM: `{"n": int, "m": int, "gamma": [[...], ...]}`, row-major,
/// interleaved quadrature ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmFile {
    pub n: usize,
    pub m: usize,
    pub gamma: Vec<Vec<f64>>,
}

impl CmFile {
    pub fn from_bipartite(bip: &BipartiteCM) -> Self {
        Self {
            n: bip.n,
            m: bip.m,
            gamma: matrix_to_rows(&bip.assemble()),
        }
    }

    pub fn to_bipartite(&self, tol: &ToleranceConfig) -> Result<BipartiteCM> {
        let g = rows_to_matrix(&self.gamma)?;
        if g.nrows() % 2 == 1 {
            return Err(Error::OddDimension(g.nrows()));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::ZeroModes);
        }
        if g.nrows() != 2 * (self.n + self.m) {
            return Err(Error::Shape {
                context: "gamma for declared n, m",
                expected: format!("{0}x{0}", 2 * (self.n + self.m)),
                found: format!("{}x{}", g.nrows(), g.ncols()),
            });
        }
        Ok(BipartiteCM::split(&g, self.n, self.m, tol)?.cm)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite matrix serializes")
    }
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter()
        .map(|row| row.iter().copied().collect())
        .collect()
}

/// Row-major nested vectors to a matrix. Rejects ragged and non-square input.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::NotSquare {
            rows: n,
            cols: bad.len(),
        });
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix file"));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    #[test]
    fn symplectic_one_mode() {
        let j = symplectic_form(1).unwrap();
        assert_eq!(j.matrix(), &dmatrix![0.0, -1.0; 1.0, 0.0]);
    }

    #[test]
    fn symplectic_identities() {
        for n in 1..5 {
            let j = symplectic_form(n).unwrap();
            let jm = j.matrix();
            assert_eq!(jm.transpose(), -jm);
            assert_eq!(jm * jm, -DMatrix::identity(2 * n, 2 * n));
        }
        let j2 = symplectic_matrix(2);
        assert_eq!(
            j2,
            matlin::direct_sum(&symplectic_matrix(1), &symplectic_matrix(1))
        );
        assert!(matches!(symplectic_form(0), Err(Error::ZeroModes)));
    }

    #[test]
    fn validate_examples() {
        let v = validate_cm(&vacuum(1), &tol()).unwrap();
        assert!(v.valid && v.margin.abs() < 1e-15);
        let v = validate_cm(&(vacuum(1) * 0.5), &tol()).unwrap();
        assert!(!v.valid && (v.margin + 0.5).abs() < 1e-15);
    }

    #[test]
    fn validate_rejects_odd_and_asymmetric() {
        assert!(matches!(
            validate_cm(&DMatrix::identity(3, 3), &tol()),
            Err(Error::OddDimension(3))
        ));
        let mut g = vacuum(1);
        g[(0, 1)] = 0.1;
        assert!(matches!(
            validate_cm(&g, &tol()),
            Err(Error::Asymmetric { .. })
        ));
    }

    #[test]
    fn tmss_blocks() {
        let t = tmss(0.0);
        assert_eq!(t.assemble(), DMatrix::identity(4, 4));
        let t = tmss(1.0);
        assert!((t.a[(0, 0)] - 3.762_195_691_083_631).abs() < 1e-12);
        assert!((t.c[(0, 0)] - 3.626_860_407_847_019).abs() < 1e-12);
        assert!((t.c[(1, 1)] + 3.626_860_407_847_019).abs() < 1e-12);
        for r in [0.0, 0.1, 0.5, 1.0, 2.0, 3.0] {
            assert!(tmss(r).validate(&tol()).valid, "r = {r}");
        }
    }

    #[test]
    fn split_round_trip() {
        let t = tmss(0.7);
        let g = t.assemble();
        let s = BipartiteCM::split(&g, 1, 1, &tol()).unwrap();
        assert_eq!(s.cm.assemble(), g);
        assert!(s.a_valid && s.b_valid);
        let p = product(&vacuum(1), &vacuum(2)).unwrap();
        let s = BipartiteCM::split(&p.assemble(), 1, 2, &tol()).unwrap();
        assert_eq!(s.cm.a, vacuum(1));
        assert_eq!(s.cm.b, vacuum(2));
        assert_eq!(s.cm.c, DMatrix::zeros(2, 4));
        assert!(BipartiteCM::split(&g, 1, 2, &tol()).is_err());
    }

    #[test]
    fn random_pure_has_unit_determinant() {
        for seed in 0..20 {
            let g = random_cm(2, 1, Purity::Pure, seed).unwrap().assemble();
            assert!((g.determinant() - 1.0).abs() < 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn random_outputs_are_valid() {
        for seed in 0..20 {
            for purity in [Purity::Pure, Purity::Mixed] {
                let g = random_cm(2, 2, purity, seed).unwrap();
                assert!(g.validate(&tol()).valid);
            }
        }
    }

    #[test]
    fn random_is_deterministic() {
        let a = random_cm(2, 3, Purity::Mixed, 7).unwrap();
        let b = random_cm(2, 3, Purity::Mixed, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_cm(2, 3, Purity::Mixed, 8).unwrap());
    }

    #[test]
    fn partial_transpose_of_tmss() {
        let r = 0.8;
        let pt = partial_transpose(&tmss(r));
        let sh = (2.0 * r).sinh();
        assert!((&pt.c - DMatrix::identity(2, 2) * sh).amax() < 1e-15);
        assert_eq!(pt.a, tmss(r).a);
        assert_eq!(partial_transpose(&pt), tmss(r));
    }

    #[test]
    fn partial_transpose_product_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_single(1, Purity::Pure, &mut rng);
        let b = random_single(2, Purity::Mixed, &mut rng);
        let p = product(&a, &b).unwrap();
        let pt = partial_transpose(&p);
        assert_eq!(pt.a, a);
        assert!(pt.validate(&tol()).valid);
        assert_eq!(pt.c, DMatrix::zeros(2, 4));
    }

    #[test]
    fn cm_file_errors() {
        let f = CmFile {
            n: 1,
            m: 1,
            gamma: vec![vec![1.0; 3]; 3],
        };
        assert!(matches!(
            f.to_bipartite(&tol()),
            Err(Error::OddDimension(3))
        ));
        let f = CmFile {
            n: 1,
            m: 2,
            gamma: matrix_to_rows(&vacuum(2)),
        };
        assert!(matches!(f.to_bipartite(&tol()), Err(Error::Shape { .. })));
        let f = CmFile {
            n: 1,
            m: 1,
            gamma: vec![vec![1.0; 4], vec![1.0; 3], vec![1.0; 4], vec![1.0; 4]],
        };
        assert!(matches!(
            f.to_bipartite(&tol()),
            Err(Error::NotSquare { .. })
        ));
    }
}
