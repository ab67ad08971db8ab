//! Separability certificates.
//!
//! A separable verdict at step `N` means `gamma_N >= L_N ⊕ L_N`. Walking the
//! trace backwards, each iterate `gamma_k` (`k >= 1`) admits
//! `gamma_k >= delta_k ⊕ delta_k` with
//!
//! ```text
//! gamma_B^(k) = A_k - C_k^T (A_k - delta_{k+1})^+ C_k
//! delta_k     = (delta_{k+1} + gamma_B^(k)) / 2
//! ```
//!
//! and a final Schur step on `gamma_0` yields `gamma_A = delta_1` and
//! `gamma_B = B_0 - C_0^T (A_0 - delta_1)^+ C_0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::engine::{IterationStep, IterationTrace, Termination, Verdict, VerdictKind};
use crate::error::{Error, Result};
use crate::gaussian::{cm_margin, gap_matrix, matrix_to_rows, rows_to_matrix, BipartiteCM};
use crate::matlin::{self, ToleranceConfig};

/// `gamma_0 = gamma_A ⊕ gamma_B + P` with `P >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparabilityCertificate {
    pub gamma_a: DMatrix<f64>,
    pub gamma_b: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

impl SeparabilityCertificate {
    /// Certificate for `gamma0` from candidate local blocks; `P` is the remainder.
    pub fn from_blocks(
        gamma0: &BipartiteCM,
        gamma_a: DMatrix<f64>,
        gamma_b: DMatrix<f64>,
    ) -> Result<Self> {
        check_shapes(gamma0, &gamma_a, &gamma_b)?;
        let p = matlin::symmetrize(&(gamma0.assemble() - matlin::direct_sum(&gamma_a, &gamma_b)));
        Ok(Self {
            gamma_a,
            gamma_b,
            p,
        })
    }
}

/// Diagnostics for one backward step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardStep {
    pub index: usize,
    /// max ||C^T v|| over the numerical kernel of `A_k - delta_{k+1}`.
    pub kernel_residual: f64,
    /// `lambda_min(delta_k - iJ)`; absent for the final step on `gamma_0`.
    pub delta_margin: Option<f64>,
    /// `lambda_min(gamma_k - delta_k ⊕ delta_k)`; absent for `gamma_0`.
    pub order_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub certificate: SeparabilityCertificate,
    /// From `k = N` down to `k = 0`.
    pub backward: Vec<BackwardStep>,
}

fn symmetric_min_eig(m: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<f64> {
    Ok(matlin::psd_check_symmetric(m, tol)?.lambda_min)
}

/// `C^T D^+ C` for PSD `D`, with `ker(D) ⊆ ker(C^T)` checked.
fn schur_term(
    d: &DMatrix<f64>,
    c: &DMatrix<f64>,
    index: usize,
    tol: &ToleranceConfig,
) -> Result<(DMatrix<f64>, f64)> {
    let ct = c.transpose();
    let (term, kernel) = matlin::sandwich_symmetric(d, &ct, tol);
    let residual = matlin::kernel_residual(&ct, &kernel);
    let limit = matlin::kernel_tolerance(&ct, tol);
    if residual > limit {
        return Err(Error::KernelCondition {
            step: index,
            residual,
            tol: limit,
        });
    }
    Ok((term, residual))
}

/// Builds `(gamma_A, gamma_B, P)` from a trace that ended separable.
pub fn reconstruct(
    trace: &IterationTrace,
    tol: &ToleranceConfig,
) -> Result<SeparabilityCertificate> {
    Ok(reconstruct_traced(trace, tol)?.certificate)
}

/// [`reconstruct`] plus per-step diagnostics.
///
/// The recursion tracks `E_k = A_k - delta_k` instead of `delta_k`, so that
/// `A_k - delta_{k+1} = Re X_k + E_{k+1}` is formed as a sum of PSD terms
/// rather than a difference of nearly equal matrices.
pub fn reconstruct_traced(trace: &IterationTrace, tol: &ToleranceConfig) -> Result<Reconstruction> {
    if trace.termination != Termination::SeparableBound || trace.steps.len() < 2 {
        return Err(Error::NotSeparable);
    }
    let last = trace.last();
    let dim = last.a.nrows();
    let mut excess = DMatrix::identity(dim, dim) * last.c_opnorm;
    let mut backward = vec![BackwardStep {
        index: last.index,
        kernel_residual: 0.0,
        delta_margin: Some(last.margin_l),
        order_margin: Some(order_margin(&last.to_bipartite(), &last.l_matrix(), tol)?),
    }];

    let gap_for = |step: &IterationStep, excess: &DMatrix<f64>| -> DMatrix<f64> {
        step.re_x.as_ref().expect("mapped step records Re X") + excess
    };
    for step in trace.steps[1..trace.steps.len() - 1].iter().rev() {
        let gap = gap_for(step, &excess);
        let (term, residual) = schur_term(&gap, &step.c, step.index, tol)?;
        excess = matlin::symmetrize(&((gap + term) * 0.5));
        let delta = &step.a - &excess;
        let margin = cm_margin(&delta, tol);
        if !margin.is_psd {
            return Err(Error::CertificateStep {
                step: step.index,
                margin: margin.lambda_min,
            });
        }
        backward.push(BackwardStep {
            index: step.index,
            kernel_residual: residual,
            delta_margin: Some(margin.lambda_min),
            order_margin: Some(order_margin(&step.to_bipartite(), &delta, tol)?),
        });
    }

    let gamma_a = matlin::symmetrize(&(&trace.steps[1].a - &excess));
    let first = trace.initial();
    let (term, residual) = schur_term(&gap_for(first, &excess), &first.c, 0, tol)?;
    let gamma_b = matlin::symmetrize(&(first.b() - term));
    backward.push(BackwardStep {
        index: 0,
        kernel_residual: residual,
        delta_margin: None,
        order_margin: None,
    });
    Ok(Reconstruction {
        certificate: SeparabilityCertificate::from_blocks(&first.to_bipartite(), gamma_a, gamma_b)?,
        backward,
    })
}

fn order_margin(g: &BipartiteCM, delta: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<f64> {
    symmetric_min_eig(&(g.assemble() - matlin::direct_sum(delta, delta)), tol)
}

fn check_shapes(
    gamma0: &BipartiteCM,
    gamma_a: &DMatrix<f64>,
    gamma_b: &DMatrix<f64>,
) -> Result<()> {
    for (context, blk, dim) in [
        ("gamma_A", gamma_a, 2 * gamma0.n),
        ("gamma_B", gamma_b, 2 * gamma0.m),
    ] {
        if blk.shape() != (dim, dim) {
            return Err(Error::Shape {
                context,
                expected: format!("{dim}x{dim}"),
                found: format!("{}x{}", blk.nrows(), blk.ncols()),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateCheck {
    pub valid: bool,
    /// `lambda_min(gamma_A - iJ)`, `lambda_min(gamma_B - iJ)`,
    /// `lambda_min(gamma_0 - gamma_A ⊕ gamma_B)`.
    pub margins: [f64; 3],
}

/// Audits `gamma_0 >= gamma_A ⊕ gamma_B` with both blocks CMs. Uses only
/// the certificate and `gamma_0`, never the iteration.
pub fn verify_certificate(
    gamma0: &BipartiteCM,
    cert: &SeparabilityCertificate,
    tol: &ToleranceConfig,
) -> Result<CertificateCheck> {
    check_shapes(gamma0, &cert.gamma_a, &cert.gamma_b)?;
    matlin::check_symmetric(&cert.gamma_a, tol)?;
    matlin::check_symmetric(&cert.gamma_b, tol)?;
    let a = cm_margin(&cert.gamma_a, tol);
    let b = cm_margin(&cert.gamma_b, tol);
    let remainder = gamma0.assemble() - matlin::direct_sum(&cert.gamma_a, &cert.gamma_b);
    let p = matlin::psd_check_symmetric(&remainder, tol)?;
    Ok(CertificateCheck {
        valid: a.is_psd && b.is_psd && p.is_psd,
        margins: [a.lambda_min, b.lambda_min, p.lambda_min],
    })
}

/// On-disk certificate: `{"gamma_A", "gamma_B", "P", "margins"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    #[serde(rename = "gamma_A")]
    pub gamma_a: Vec<Vec<f64>>,
    #[serde(rename = "gamma_B")]
    pub gamma_b: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub margins: [f64; 3],
}

impl CertificateFile {
    pub fn new(cert: &SeparabilityCertificate, check: &CertificateCheck) -> Self {
        Self {
            gamma_a: matrix_to_rows(&cert.gamma_a),
            gamma_b: matrix_to_rows(&cert.gamma_b),
            p: matrix_to_rows(&cert.p),
            margins: check.margins,
        }
    }

    pub fn to_certificate(&self) -> Result<SeparabilityCertificate> {
        Ok(SeparabilityCertificate {
            gamma_a: rows_to_matrix(&self.gamma_a)?,
            gamma_b: rows_to_matrix(&self.gamma_b)?,
            p: rows_to_matrix(&self.p)?,
        })
    }
}

/// Evidence for an entangled verdict: the failing positivity test and the
/// eigenvector achieving its smallest eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub step: usize,
    pub lambda_min: f64,
    /// `[re, im]` pairs.
    pub eigenvector: Vec<[f64; 2]>,
}

/// Witness of `A_N - iJ` (or of `gamma_N - iJ` when the full iterate failed).
pub fn entanglement_witness(verdict: &Verdict) -> Option<Witness> {
    if verdict.kind != VerdictKind::Entangled {
        return None;
    }
    let last = verdict.trace.last();
    let tested = match verdict.trace.termination {
        Termination::IterateNotCm { .. } => last.to_bipartite().assemble(),
        _ => last.a.clone(),
    };
    let (lambda_min, v) = matlin::min_eigenpair(&gap_matrix(&tested));
    Some(Witness {
        step: verdict.step,
        lambda_min,
        eigenvector: v.iter().map(|z| [z.re, z.im]).collect(),
    })
}
