//! The separability decision procedure.
//!
//! Starting from `gamma_0 = [[A_0, C_0], [C_0^T, B_0]]`, each step computes
//!
//! ```text
//! X_N     = C_N (B_N - iJ)^+ C_N^T
//! A_{N+1} = B_{N+1} = A_N - Re X_N
//! C_{N+1} = -Im X_N
//! ```
//!
//! For every `N >= 1` two tests are run. If `A_N - iJ` is not positive the
//! state is entangled. If `L_N = A_N - ||C_N||_op 1` satisfies `L_N >= iJ`
//! the state is separable, and [`crate::certify`] can rebuild the
//! decomposition from the recorded trace.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{cm_margin, symplectic_matrix, BipartiteCM};
use crate::matlin::{self, HermitianMatrix, ToleranceConfig, C64};

pub const DEFAULT_MAX_ITER: usize = 200;

/// One iterate `gamma_N` with the quantities both tests need.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStep {
    pub index: usize,
    pub a: DMatrix<f64>,
    /// Only stored for `N = 0`; afterwards `B_N = A_N`.
    b0: Option<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    /// `lambda_min(A_N - iJ)`.
    pub margin_a: f64,
    /// `lambda_min(L_N - iJ)`, which equals `margin_a - c_opnorm`.
    pub margin_l: f64,
    pub c_opnorm: f64,
    pub a_trnorm: f64,
    /// `Re X_N = A_N - A_{N+1}`, set once the next iterate has been computed.
    pub re_x: Option<DMatrix<f64>>,
}

impl IterationStep {
    fn new(index: usize, g: &BipartiteCM, tol: &ToleranceConfig) -> Self {
        let margin_a = cm_margin(&g.a, tol).lambda_min;
        let c_opnorm = matlin::operator_norm(&g.c);
        Self {
            index,
            a: g.a.clone(),
            b0: (index == 0).then(|| g.b.clone()),
            c: g.c.clone(),
            margin_a,
            margin_l: margin_a - c_opnorm,
            c_opnorm,
            a_trnorm: matlin::trace_norm(&g.a),
            re_x: None,
        }
    }

    pub fn b(&self) -> &DMatrix<f64> {
        self.b0.as_ref().unwrap_or(&self.a)
    }

    pub fn to_bipartite(&self) -> BipartiteCM {
        BipartiteCM {
            n: self.a.nrows() / 2,
            m: self.b().nrows() / 2,
            a: self.a.clone(),
            b: self.b().clone(),
            c: self.c.clone(),
        }
    }

    /// `L_N = A_N - ||C_N||_op 1`.
    pub fn l_matrix(&self) -> DMatrix<f64> {
        let d = self.a.nrows();
        &self.a - DMatrix::identity(d, d) * self.c_opnorm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    /// `A_N` is not a CM.
    LocalBlockNotCm,
    /// The full iterate `gamma_N` is not a CM, so the next one is zero.
    IterateNotCm {
        margin: f64,
    },
    /// `L_N` is a CM.
    SeparableBound,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// `gamma_0, gamma_1, ..., gamma_N`.
    pub steps: Vec<IterationStep>,
    pub termination: Termination,
}

impl IterationTrace {
    pub fn initial(&self) -> &IterationStep {
        &self.steps[0]
    }

    pub fn last(&self) -> &IterationStep {
        self.steps.last().expect("trace holds gamma_0")
    }

    /// `||C_N||_op` for `N >= 1`. Decay towards zero indicates convergence
    /// to a block-diagonal fixed point.
    pub fn c_opnorm_history(&self) -> Vec<f64> {
        self.steps.iter().skip(1).map(|s| s.c_opnorm).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictKind {
    Separable,
    Entangled,
    Undecided,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictKind::Separable => "separable",
            VerdictKind::Entangled => "entangled",
            VerdictKind::Undecided => "undecided",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub kind: VerdictKind,
    /// Index `N` of the iterate that settled the question.
    pub step: usize,
    /// `margin_a` for entangled, `margin_l` for separable and undecided,
    /// `lambda_min(gamma_N - iJ)` when the full iterate stopped being a CM.
    pub margin: f64,
    pub trace: IterationTrace,
}

fn check_finite(g: &BipartiteCM, step: usize) -> Result<()> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteIterate { step })
    }
}

/// Next iterate together with `Re X`.
fn map_unchecked(g: &BipartiteCM, tol: &ToleranceConfig) -> Result<(BipartiteCM, DMatrix<f64>)> {
    let jm = symplectic_matrix(g.m);
    let gap = HermitianMatrix::from_parts(&g.b, &(-jm))?;
    let c = g.c.map(|x| C64::new(x, 0.0));
    let x = matlin::sandwich(&gap, &c, tol).into_inner();
    let re_x = matlin::symmetrize(&x.map(|z| z.re));
    let a = matlin::symmetrize(&(&g.a - &re_x));
    let c = matlin::antisymmetrize(&x.map(|z| -z.im));
    let next = BipartiteCM {
        n: g.n,
        m: g.n,
        b: a.clone(),
        a,
        c,
    };
    Ok((next, re_x))
}

/// One application of the map. The input must be a valid CM.
pub fn map_step(gamma: &BipartiteCM, tol: &ToleranceConfig) -> Result<BipartiteCM> {
    if !gamma.is_finite() {
        return Err(Error::NonFinite("iterate"));
    }
    let v = gamma.validate(tol);
    if !v.valid {
        return Err(Error::InvalidCm { margin: v.margin });
    }
    Ok(map_unchecked(gamma, tol)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingTests {
    pub entangled_fired: bool,
    pub separable_fired: bool,
    pub margin_a: f64,
    pub margin_l: f64,
}

/// Both termination tests on an iterate with `N >= 1`.
///
/// The entangled branch fires when `margin_a < -decision_margin`; the
/// separable branch when `margin_l >= -decision_margin`. Since
/// `margin_l <= margin_a` the two never fire together.
pub fn stopping_tests(step: &IterationStep, tol: &ToleranceConfig) -> Result<StoppingTests> {
    if step.index == 0 {
        return Err(Error::StepZero);
    }
    let entangled_fired = step.margin_a < -tol.decision_margin;
    Ok(StoppingTests {
        entangled_fired,
        separable_fired: !entangled_fired && step.margin_l >= -tol.decision_margin,
        margin_a: step.margin_a,
        margin_l: step.margin_l,
    })
}

/// Iterates until a test fires or `max_iter` maps have been applied.
pub fn decide(gamma0: &BipartiteCM, tol: &ToleranceConfig, max_iter: usize) -> Result<Verdict> {
    tol.validate()?;
    check_finite(gamma0, 0)?;
    matlin::check_symmetric(&gamma0.assemble(), tol)?;
    let validity = gamma0.validate(tol);
    if !validity.valid {
        return Err(Error::InvalidCm {
            margin: validity.margin,
        });
    }

    let mut steps = vec![IterationStep::new(0, gamma0, tol)];
    let mut current = gamma0.clone();
    for index in 1..=max_iter {
        let (next, re_x) =
            map_unchecked(&current, tol).map_err(|_| Error::NonFiniteIterate { step: index })?;
        check_finite(&next, index)?;
        if let Some(prev) = steps.last_mut() {
            prev.re_x = Some(re_x);
        }
        let step = IterationStep::new(index, &next, tol);
        let checks = stopping_tests(&step, tol)?;
        steps.push(step);
        let finish = |kind, margin, termination, steps| Verdict {
            kind,
            step: index,
            margin,
            trace: IterationTrace { steps, termination },
        };
        if checks.entangled_fired {
            return Ok(finish(
                VerdictKind::Entangled,
                checks.margin_a,
                Termination::LocalBlockNotCm,
                steps,
            ));
        }
        if checks.separable_fired {
            return Ok(finish(
                VerdictKind::Separable,
                checks.margin_l,
                Termination::SeparableBound,
                steps,
            ));
        }
        let full = next.validate(tol);
        if !full.valid {
            return Ok(finish(
                VerdictKind::Entangled,
                full.margin,
                Termination::IterateNotCm {
                    margin: full.margin,
                },
                steps,
            ));
        }
        current = next;
    }

    let last = steps.last().expect("gamma_0 recorded");
    Ok(Verdict {
        kind: VerdictKind::Undecided,
        step: last.index,
        margin: last.margin_l,
        trace: IterationTrace {
            steps,
            termination: Termination::MaxIter,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustSource {
    /// `gamma + eps 1` is entangled.
    Plus,
    /// `gamma - eps 1` is separable.
    Minus,
    /// Neither shifted run was conclusive; the unshifted run was.
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustVerdict {
    pub kind: VerdictKind,
    pub source: Option<RobustSource>,
    pub eps: f64,
    pub plus: Verdict,
    pub minus: Option<Verdict>,
    pub plain: Option<Verdict>,
}

impl RobustVerdict {
    /// The run whose verdict was adopted.
    pub fn deciding(&self) -> Option<&Verdict> {
        match self.source? {
            RobustSource::Plus => Some(&self.plus),
            RobustSource::Minus => self.minus.as_ref(),
            RobustSource::Plain => self.plain.as_ref(),
        }
    }
}

/// Decides `gamma` through the shifted matrices `gamma ± eps 1`.
///
/// Only two inferences are drawn: entangled at `+eps` implies entangled,
/// separable at `-eps` implies separable. Otherwise the unshifted run is
/// used when it is conclusive, and the result is undecided when it is not.
pub fn decide_robust(
    gamma0: &BipartiteCM,
    tol: &ToleranceConfig,
    eps: f64,
    max_iter: usize,
) -> Result<RobustVerdict> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    tol.validate()?;
    check_finite(gamma0, 0)?;
    let validity = gamma0.validate(tol);
    if !validity.valid {
        return Err(Error::InvalidCm {
            margin: validity.margin,
        });
    }

    let plus = decide(&gamma0.shifted(eps), tol, max_iter)?;
    let mut out = RobustVerdict {
        kind: VerdictKind::Undecided,
        source: None,
        eps,
        plus,
        minus: None,
        plain: None,
    };
    if out.plus.kind == VerdictKind::Entangled {
        out.kind = VerdictKind::Entangled;
        out.source = Some(RobustSource::Plus);
        return Ok(out);
    }

    let lowered = gamma0.shifted(-eps);
    if lowered.validate(tol).valid {
        let minus = decide(&lowered, tol, max_iter)?;
        let separable = minus.kind == VerdictKind::Separable;
        out.minus = Some(minus);
        if separable {
            out.kind = VerdictKind::Separable;
            out.source = Some(RobustSource::Minus);
            return Ok(out);
        }
    }

    let plain = decide(gamma0, tol, max_iter)?;
    if plain.kind != VerdictKind::Undecided {
        out.kind = plain.kind;
        out.source = Some(RobustSource::Plain);
    }
    out.plain = Some(plain);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub verdict: VerdictKind,
    pub steps: usize,
}

fn check_perturbation(
    gamma: &BipartiteCM,
    perturbation: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> Result<()> {
    let d = gamma.dim();
    if perturbation.shape() != (d, d) {
        return Err(Error::Shape {
            context: "perturbation",
            expected: format!("{d}x{d}"),
            found: format!("{}x{}", perturbation.nrows(), perturbation.ncols()),
        });
    }
    matlin::check_symmetric(perturbation, tol)?;
    let r = matlin::psd_check_symmetric(perturbation, tol)?;
    if !r.is_psd {
        return Err(Error::NotPsd {
            lambda_min: r.lambda_min,
        });
    }
    Ok(())
}

/// Runs [`decide`] on `gamma + eps * perturbation` for each `eps`.
///
/// The grid must be finite, non-negative and strictly increasing. Points
/// are evaluated in parallel; the output is in grid order.
pub fn sweep(
    gamma: &BipartiteCM,
    perturbation: &DMatrix<f64>,
    eps_grid: &[f64],
    tol: &ToleranceConfig,
    max_iter: usize,
) -> Result<Vec<SweepPoint>> {
    check_perturbation(gamma, perturbation, tol)?;
    if eps_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidParameter(
            "eps grid values must be finite and non-negative".into(),
        ));
    }
    if eps_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "eps grid must be strictly increasing".into(),
        ));
    }
    eps_grid
        .par_iter()
        .map(|&eps| {
            let v = decide(&gamma.perturbed(perturbation, eps)?, tol, max_iter)?;
            Ok(SweepPoint {
                eps,
                verdict: v.kind,
                steps: v.step,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdOptions {
    /// First trial upper bracket.
    pub eps_start: f64,
    /// Give up bracketing beyond this value.
    pub eps_max: f64,
    /// Stop once `hi - lo <= width`.
    pub width: f64,
    pub max_iter: usize,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self {
            eps_start: 1.0,
            eps_max: 1e6,
            width: 1e-12,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    /// Midpoint of the final bracket.
    pub eps: f64,
    pub lo: f64,
    pub hi: f64,
    /// Bracket `(lo, hi)` once found and after each bisection step.
    pub history: Vec<(f64, f64)>,
    /// Set when bisection stopped on an undecided midpoint.
    pub stopped_undecided: bool,
}

/// Smallest `eps` for which `gamma + eps * perturbation` is separable, by
/// bracketing and bisection.
pub fn find_threshold(
    gamma: &BipartiteCM,
    perturbation: &DMatrix<f64>,
    tol: &ToleranceConfig,
    opts: &ThresholdOptions,
) -> Result<Threshold> {
    check_perturbation(gamma, perturbation, tol)?;
    if !(opts.eps_start > 0.0 && opts.width > 0.0 && opts.eps_max >= opts.eps_start) {
        return Err(Error::InvalidParameter("bad threshold options".into()));
    }
    let kind_at = |eps: f64| -> Result<VerdictKind> {
        Ok(decide(&gamma.perturbed(perturbation, eps)?, tol, opts.max_iter)?.kind)
    };

    if kind_at(0.0)? == VerdictKind::Separable {
        return Ok(Threshold {
            eps: 0.0,
            lo: 0.0,
            hi: 0.0,
            history: vec![(0.0, 0.0)],
            stopped_undecided: false,
        });
    }

    let mut lo = 0.0;
    let mut hi = opts.eps_start;
    let mut history = Vec::new();
    loop {
        match kind_at(hi)? {
            VerdictKind::Separable => break,
            VerdictKind::Entangled => {
                lo = hi;
                hi *= 2.0;
                if hi > opts.eps_max {
                    return Err(Error::BracketNotFound {
                        eps_max: opts.eps_max,
                    });
                }
            }
            VerdictKind::Undecided => {
                return Ok(Threshold {
                    eps: hi,
                    lo,
                    hi,
                    history,
                    stopped_undecided: true,
                })
            }
        }
    }
    history.push((lo, hi));

    while hi - lo > opts.width {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        match kind_at(mid)? {
            VerdictKind::Separable => hi = mid,
            VerdictKind::Entangled => lo = mid,
            VerdictKind::Undecided => {
                return Ok(Threshold {
                    eps: mid,
                    lo,
                    hi,
                    history,
                    stopped_undecided: true,
                })
            }
        }
        history.push((lo, hi));
    }
    Ok(Threshold {
        eps: lo + 0.5 * (hi - lo),
        lo,
        hi,
        history,
        stopped_undecided: false,
    })
}
