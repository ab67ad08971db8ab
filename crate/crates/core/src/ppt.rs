//! Partial-transposition test at the correlation-matrix level.
//!
//! Positivity of the partial transpose is necessary for separability, and
//! sufficient when each side holds a single mode. It serves as an
//! independent oracle for the iterative procedure on `1 x 1` states.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gaussian::{cm_margin, partial_transpose, BipartiteCM};
use crate::matlin::{self, ToleranceConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PptReport {
    pub ppt: bool,
    /// `lambda_min(gamma~ - iJ)` for the partially transposed matrix.
    pub margin: f64,
}

pub fn ppt_check(bip: &BipartiteCM, tol: &ToleranceConfig) -> Result<PptReport> {
    if !bip.is_finite() {
        return Err(Error::NonFinite("correlation matrix"));
    }
    matlin::check_symmetric(&bip.assemble(), tol)?;
    let v = bip.validate(tol);
    if !v.valid {
        return Err(Error::InvalidCm { margin: v.margin });
    }
    let r = cm_margin(&partial_transpose(bip).assemble(), tol);
    Ok(PptReport {
        ppt: r.is_psd,
        margin: r.lambda_min,
    })
}

/// Smallest `eps` making `gamma + eps * perturbation` PPT, by bisection on
/// the sign of the PPT margin down to bracket width `width`.
///
/// The sign test is exact (`margin >= 0`), with no tolerance band.
pub fn ppt_threshold(
    gamma: &BipartiteCM,
    perturbation: &DMatrix<f64>,
    tol: &ToleranceConfig,
    width: f64,
    eps_max: f64,
) -> Result<f64> {
    let margin_at = |eps: f64| -> Result<f64> {
        Ok(ppt_check(&gamma.perturbed(perturbation, eps)?, tol)?.margin)
    };
    if margin_at(0.0)? >= 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while margin_at(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > eps_max {
            return Err(Error::BracketNotFound { eps_max });
        }
    }
    while hi - lo > width {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if margin_at(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(lo + 0.5 * (hi - lo))
}
