//! Linear Kalman filter over the 6-D lateral state `(x, y, ẋ, ẏ, ẍ, ÿ)`.
//!
//! The operations are pure functions over values so that the neighbor tracker
//! and the focal-UAV estimator share one implementation. [`Lkf`] wraps them
//! with an owned state and a name that is reported in numerical faults.
//!
//! The covariance update uses the simple form `P − K·H·P`, followed by
//! re-symmetrization `P ← (P + Pᵀ)/2` after every predict and correct.

use nalgebra::{Matrix2, SMatrix, SVector, SymmetricEigen};
use thiserror::Error;

use crate::geometry::Vec2;

pub type StateVector6 = SVector<f64, 6>;
pub type Covariance6 = SMatrix<f64, 6, 6>;
pub type InputMatrix = SMatrix<f64, 6, 2>;
pub type MeasurementMatrix = SMatrix<f64, 2, 6>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LkfError {
    #[error("numerical fault in filter `{filter}`: {detail}")]
    NumericalFault { filter: String, detail: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl LkfError {
    fn fault(detail: impl Into<String>) -> Self {
        LkfError::NumericalFault {
            filter: String::new(),
            detail: detail.into(),
        }
    }

    /// Attaches a filter name to a numerical fault.
    pub fn in_filter(self, name: &str) -> Self {
        match self {
            LkfError::NumericalFault { detail, .. } => LkfError::NumericalFault {
                filter: name.to_string(),
                detail,
            },
            other => other,
        }
    }
}

/// Discrete LTI model `x_k = A·x_{k−1} + B·u_k + w_k`, `w_k ~ (0, diag(q))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LkfModel {
    pub a: Covariance6,
    pub b: InputMatrix,
    pub q_diag: StateVector6,
    pub dt: f64,
}

impl LkfModel {
    pub fn new(a: Covariance6, b: InputMatrix, q_diag: StateVector6, dt: f64) -> Result<Self, LkfError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LkfError::Precondition(format!("step duration must be positive, got {dt}")));
        }
        if q_diag.iter().any(|q| !(*q >= 0.0) || !q.is_finite()) {
            return Err(LkfError::Precondition(
                "process covariance diagonal must be finite and non-negative".into(),
            ));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(LkfError::Precondition("model matrices must be finite".into()));
        }
        Ok(LkfModel { a, b, q_diag, dt })
    }

    /// Constant-acceleration point-mass model used for neighbor tracks.
    pub fn constant_acceleration(dt: f64, q_diag: StateVector6) -> Result<Self, LkfError> {
        let half_dt2 = 0.5 * dt * dt;
        #[rustfmt::skip]
        let a = Covariance6::from_row_slice(&[
            1.0, 0.0, dt,  0.0, half_dt2, 0.0,
            0.0, 1.0, 0.0, dt,  0.0,      half_dt2,
            0.0, 0.0, 1.0, 0.0, dt,       0.0,
            0.0, 0.0, 0.0, 1.0, 0.0,      dt,
            0.0, 0.0, 0.0, 0.0, 1.0,      0.0,
            0.0, 0.0, 0.0, 0.0, 0.0,      1.0,
        ]);
        Self::new(a, InputMatrix::zeros(), q_diag, dt)
    }

    pub fn has_input(&self) -> bool {
        self.b.iter().any(|v| *v != 0.0)
    }

    pub fn process_covariance(&self) -> Covariance6 {
        Covariance6::from_diagonal(&self.q_diag)
    }
}

/// Which pair of states a measurement observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Position,
    Velocity,
    Acceleration,
}

impl Channel {
    fn offset(self) -> usize {
        match self {
            Channel::Position => 0,
            Channel::Velocity => 2,
            Channel::Acceleration => 4,
        }
    }

    pub fn matrix(self) -> MeasurementMatrix {
        let mut h = MeasurementMatrix::zeros();
        h[(0, self.offset())] = 1.0;
        h[(1, self.offset() + 1)] = 1.0;
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement2 {
    pub z: Vec2,
    pub h: MeasurementMatrix,
    pub r: Matrix2<f64>,
    pub stamp: f64,
}

impl Measurement2 {
    /// Builds a measurement after checking that every row of `h` selects
    /// exactly one state with a unit coefficient and that `r` is SPD.
    pub fn new(z: Vec2, h: MeasurementMatrix, r: Matrix2<f64>, stamp: f64) -> Result<Self, LkfError> {
        for (i, row) in h.row_iter().enumerate() {
            let nonzero: Vec<f64> = row.iter().copied().filter(|v| *v != 0.0).collect();
            if nonzero.len() != 1 || nonzero[0] != 1.0 {
                return Err(LkfError::Precondition(format!(
                    "measurement matrix row {i} must contain exactly one entry equal to 1"
                )));
            }
        }
        if (r[(0, 1)] - r[(1, 0)]).abs() > 1e-12 * r.abs().max() || r.cholesky().is_none() {
            return Err(LkfError::Precondition(
                "measurement covariance must be symmetric positive definite".into(),
            ));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(LkfError::Precondition("measurement value must be finite".into()));
        }
        Ok(Measurement2 { z, h, r, stamp })
    }

    pub fn for_channel(channel: Channel, z: Vec2, r: Matrix2<f64>, stamp: f64) -> Result<Self, LkfError> {
        Self::new(z, channel.matrix(), r, stamp)
    }
}

fn symmetrize(p: &Covariance6) -> Covariance6 {
    (p + p.transpose()) * 0.5
}

fn check_finite(state: &StateVector6, cov: &Covariance6, stage: &str) -> Result<(), LkfError> {
    if state.iter().chain(cov.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LkfError::fault(format!("non-finite entries {stage}")))
    }
}

/// Prediction step: `x̂ ← A·x̂ + B·u`, `P ← A·P·Aᵀ + Q`.
pub fn predict(
    state: &StateVector6,
    cov: &Covariance6,
    model: &LkfModel,
    input: Option<&Vec2>,
) -> Result<(StateVector6, Covariance6), LkfError> {
    check_finite(state, cov, "before prediction")?;
    let mut next = model.a * state;
    match (input, model.has_input()) {
        (Some(u), true) => next += model.b * u,
        (None, false) => {}
        (Some(_), false) => {
            return Err(LkfError::Precondition("input supplied to a model without input matrix".into()))
        }
        (None, true) => return Err(LkfError::Precondition("model with input matrix requires an input".into())),
    }
    let next_cov = symmetrize(&(model.a * cov * model.a.transpose() + model.process_covariance()));
    check_finite(&next, &next_cov, "after prediction")?;
    Ok((next, next_cov))
}

/// Correction step with gain `K = P·Hᵀ·(H·P·Hᵀ + R)⁻¹`.
pub fn correct(
    state: &StateVector6,
    cov: &Covariance6,
    meas: &Measurement2,
) -> Result<(StateVector6, Covariance6), LkfError> {
    check_finite(state, cov, "before correction")?;
    let hp = meas.h * cov;
    let innovation_cov = hp * meas.h.transpose() + meas.r;
    let s_inv = innovation_cov
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| LkfError::fault("singular innovation covariance"))?;
    let gain = cov * meas.h.transpose() * s_inv;
    let innovation = meas.z - meas.h * state;
    let next = state + gain * innovation;
    let next_cov = symmetrize(&(cov - gain * hp));
    check_finite(&next, &next_cov, "after correction")?;
    Ok((next, next_cov))
}

/// Normalized estimation error squared `eᵀ·P⁻¹·e` with `e = est − true`.
pub fn nees(estimate: &StateVector6, cov: &Covariance6, truth: &StateVector6) -> Result<f64, LkfError> {
    let err = estimate - truth;
    let chol = cov
        .cholesky()
        .ok_or_else(|| LkfError::fault("covariance is not invertible"))?;
    let value = err.dot(&chol.solve(&err));
    if value.is_finite() {
        Ok(value.max(0.0))
    } else {
        Err(LkfError::fault("non-finite NEES"))
    }
}

pub fn min_eigenvalue(cov: &Covariance6) -> f64 {
    SymmetricEigen::new(*cov).eigenvalues.min()
}

/// A named filter instance owning its estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Lkf {
    pub name: String,
    pub state: StateVector6,
    pub cov: Covariance6,
}

impl Lkf {
    pub fn new(name: impl Into<String>, state: StateVector6, cov: Covariance6) -> Self {
        Lkf {
            name: name.into(),
            state,
            cov,
        }
    }

    pub fn predict(&mut self, model: &LkfModel, input: Option<&Vec2>) -> Result<(), LkfError> {
        let (x, p) = predict(&self.state, &self.cov, model, input).map_err(|e| e.in_filter(&self.name))?;
        self.state = x;
        self.cov = p;
        Ok(())
    }

    pub fn correct(&mut self, meas: &Measurement2) -> Result<(), LkfError> {
        let (x, p) = correct(&self.state, &self.cov, meas).map_err(|e| e.in_filter(&self.name))?;
        self.state = x;
        self.cov = p;
        Ok(())
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.state[0], self.state[1])
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.state[2], self.state[3])
    }

    pub fn acceleration(&self) -> Vec2 {
        Vec2::new(self.state[4], self.state[5])
    }
}
