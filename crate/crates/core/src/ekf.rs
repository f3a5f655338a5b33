//! Extended Kalman filter kernel shared by both estimation stages.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// State estimate and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(x: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != x.len() || p.ncols() != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} entries but covariance is {}x{}",
                x.len(),
                p.nrows(),
                p.ncols()
            )));
        }
        Ok(Self { x, p })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Stacked residuals, their Jacobian and diagonal measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    pub y: DVector<f64>,
    pub h_jac: DMatrix<f64>,
    /// Diagonal of the measurement noise covariance.
    pub q: DVector<f64>,
}

impl MeasurementBatch {
    pub fn new(y: DVector<f64>, h_jac: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        if h_jac.nrows() != y.len() || q.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} residuals, {} Jacobian rows, {} noise entries",
                y.len(),
                h_jac.nrows(),
                q.len()
            )));
        }
        Ok(Self { y, h_jac, q })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `x = f(x)`, `P = F P F^T + W`.
pub fn predict<F, J>(s: &GaussianState, f: F, f_jac: J, w: &DMatrix<f64>) -> Result<GaussianState>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let n = s.dim();
    let fj = f_jac(&s.x);
    if fj.shape() != (n, n) || w.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "state dim {n}, Jacobian {:?}, process noise {:?}",
            fj.shape(),
            w.shape()
        )));
    }
    let x = f(&s.x);
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!("f maps dim {n} to {}", x.len())));
    }
    let p = &fj * &s.p * fj.transpose() + w;
    Ok(GaussianState { x, p })
}

/// Kalman update with gain `G = P H^T S^-1`, `S = H P H^T + Q`.
///
/// Posterior covariance is `(I - G H) P`, re-symmetrized.
pub fn update(s: &GaussianState, m: &MeasurementBatch) -> Result<GaussianState> {
    let n = s.dim();
    if m.h_jac.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Jacobian has {} columns for state dim {n}",
            m.h_jac.ncols()
        )));
    }
    if m.is_empty() {
        return Ok(s.clone());
    }
    let g = kalman_gain(&s.p, &m.h_jac, &m.q)?;
    let x = &s.x + &g * &m.y;
    let p = (DMatrix::identity(n, n) - &g * &m.h_jac) * &s.p;
    let p = (&p + p.transpose()) * 0.5;
    Ok(GaussianState { x, p })
}

/// Chooses how to evaluate the gain.
///
/// With more measurements than states and positive diagonal noise, the gain
/// is evaluated through the push-through identity
/// `P H^T (H P H^T + Q)^-1 = (P^-1 + H^T Q^-1 H)^-1 H^T Q^-1`, which needs an
/// `n x n` factorization instead of an `m x m` one. Both forms give the same
/// matrix.
pub(crate) fn kalman_gain(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if h.nrows() > h.ncols() && q.iter().all(|&v| v > 0.0) {
        if let Some(g) = gain_push_through(p, h, q) {
            return Ok(g);
        }
    }
    gain_direct(p, h, q)
}

pub(crate) fn gain_direct(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let ph_t = p * h.transpose();
    let mut s = h * &ph_t;
    for (i, qi) in q.iter().enumerate() {
        s[(i, i)] += qi;
    }
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    if reciprocal_condition(chol.l_dirty()) < 1e-12 {
        return Err(Error::SingularInnovation);
    }
    // G = P H^T S^-1  <=>  S G^T = H P^T
    Ok(chol.solve(&ph_t.transpose()).transpose())
}

fn gain_push_through(p: &DMatrix<f64>, h: &DMatrix<f64>, q: &DVector<f64>) -> Option<DMatrix<f64>> {
    let p_inv = p.clone().cholesky()?.inverse();
    let mut ht_qinv = h.transpose();
    for (j, qj) in q.iter().enumerate() {
        ht_qinv.column_mut(j).scale_mut(1.0 / qj);
    }
    let info = &p_inv + &ht_qinv * h;
    let info = (&info + info.transpose()) * 0.5;
    let chol = info.cholesky()?;
    if reciprocal_condition(chol.l_dirty()) < 1e-12 {
        return None;
    }
    Some(chol.solve(&ht_qinv))
}

/// Squared ratio of the extreme diagonal entries of a Cholesky factor,
/// a cheap lower bound proxy for `1 / cond(S)`.
fn reciprocal_condition(l: &DMatrix<f64>) -> f64 {
    let d = l.diagonal();
    let (lo, hi) = d
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if hi == 0.0 {
        0.0
    } else {
        (lo / hi).powi(2)
    }
}

/// Why a filter step ran prediction only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// No measurements were available for this frame.
    NoMeasurements,
    /// Every residual failed the innovation gate.
    AllGated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Updated { used: usize, gated: usize },
    PredictionOnly(SkipReason),
}

/// Result of one predict/update cycle of a tracking filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub state: GaussianState,
    pub outcome: StepOutcome,
}

impl FilterStep {
    pub fn is_prediction_only(&self) -> bool {
        matches!(self.outcome, StepOutcome::PredictionOnly(_))
    }
}

/// Builds a batch from scalar residuals `y_i` with Jacobian rows `h_i`,
/// dropping rows whose `|y_i|` exceeds `sigma * sqrt(h_i P h_i^T + q)`.
///
/// Returns the batch and the number of dropped rows.
pub fn gated_batch(
    predicted: &GaussianState,
    rows: &[(f64, DVector<f64>)],
    q: f64,
    sigma: f64,
) -> Result<(MeasurementBatch, usize)> {
    let n = predicted.dim();
    if let Some((_, h)) = rows.iter().find(|(_, h)| h.len() != n) {
        return Err(Error::DimensionMismatch(format!("Jacobian row of length {}", h.len())));
    }
    let kept: Vec<&(f64, DVector<f64>)> = rows
        .iter()
        .filter(|(y, h)| {
            let var = (h.transpose() * &predicted.p * h)[(0, 0)] + q;
            y.abs() <= sigma * var.max(0.0).sqrt()
        })
        .collect();
    let mut h_jac = DMatrix::zeros(kept.len(), n);
    for (i, (_, h)) in kept.iter().enumerate() {
        h_jac.set_row(i, &h.transpose());
    }
    let y = DVector::from_iterator(kept.len(), kept.iter().map(|(y, _)| *y));
    let batch = MeasurementBatch::new(y, h_jac, DVector::from_element(kept.len(), q))?;
    Ok((batch, rows.len() - kept.len()))
}

/// Central finite-difference Jacobian of `f` at `x`.
///
/// Step is `1e-6 * max(|x_i|, 1)`. Used to verify analytic Jacobians.
pub fn central_difference_jacobian<F>(f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    for i in 0..x.len() {
        let step = 1e-6 * x[i].abs().max(1.0);
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[i] += step;
        lo[i] -= step;
        let diff = (f(&hi) - f(&lo)) / (2.0 * step);
        jac.set_column(i, &diff);
    }
    jac
}

/// Largest row-wise relative difference between two Jacobians, each row
/// normalized by the infinity norm of the corresponding row of `reference`.
pub fn jacobian_relative_error(analytic: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    assert_eq!(analytic.shape(), reference.shape());
    (0..reference.nrows())
        .map(|r| {
            let scale = reference.row(r).amax();
            let diff = (analytic.row(r) - reference.row(r)).amax();
            if scale < 1e-12 {
                diff
            } else {
                diff / scale
            }
        })
        .fold(0.0, f64::max)
}
