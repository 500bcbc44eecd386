//! Constant-velocity Kalman filter over boxes parameterised as
//! `(cx, cy, s, r)`: center, area and aspect ratio. The state adds velocities
//! for center and area; aspect ratio is modelled as constant.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::BoundingBox;

pub type StateVector = SVector<f64, 7>;
pub type StateCovariance = SMatrix<f64, 7, 7>;
pub type Measurement = SVector<f64, 4>;

type MeasurementMatrix = SMatrix<f64, 4, 7>;

/// Floor for area and aspect ratio when the model drives them non-positive.
pub const MIN_POSITIVE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum KalmanError {
    #[error("innovation covariance is singular; check measurement noise configuration")]
    SingularInnovation,
}

/// Noise diagonals. Defaults are the usual SORT magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    pub initial_covariance: [f64; 7],
    pub process_noise: [f64; 7],
    pub measurement_noise: [f64; 4],
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            initial_covariance: [10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4],
            process_noise: [1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4],
            measurement_noise: [1.0, 1.0, 10.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl KalmanState {
    pub fn bbox(&self) -> BoundingBox {
        state_to_bbox(&self.mean)
    }

    pub fn position(&self) -> (f64, f64) {
        (self.mean[0], self.mean[1])
    }
}

/// Outcome of a prediction; `clamped` is set when the area had to be floored.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub state: KalmanState,
    pub clamped: bool,
}

pub fn bbox_to_measurement(b: &BoundingBox) -> Measurement {
    let (cx, cy) = b.center();
    Measurement::new(cx, cy, b.area(), b.width() / b.height())
}

fn state_to_bbox(mean: &StateVector) -> BoundingBox {
    let s = mean[2].max(MIN_POSITIVE);
    let r = mean[3].max(MIN_POSITIVE);
    let w = (s * r).sqrt();
    let h = s / w;
    BoundingBox {
        x1: mean[0] - w / 2.0,
        y1: mean[1] - h / 2.0,
        x2: mean[0] + w / 2.0,
        y2: mean[1] + h / 2.0,
    }
}

#[derive(Debug, Clone)]
pub struct KalmanFilter {
    transition: StateCovariance,
    observation: MeasurementMatrix,
    initial_covariance: StateCovariance,
    process_noise: StateCovariance,
    measurement_noise: SMatrix<f64, 4, 4>,
}

impl Default for KalmanFilter {
    fn default() -> Self {
        Self::new(&KalmanConfig::default())
    }
}

impl KalmanFilter {
    pub fn new(cfg: &KalmanConfig) -> Self {
        let mut transition = StateCovariance::identity();
        for i in 0..3 {
            transition[(i, i + 4)] = 1.0;
        }
        Self {
            transition,
            observation: MeasurementMatrix::identity(),
            initial_covariance: StateCovariance::from_diagonal(&SVector::from(cfg.initial_covariance)),
            process_noise: StateCovariance::from_diagonal(&SVector::from(cfg.process_noise)),
            measurement_noise: SMatrix::<f64, 4, 4>::from_diagonal(&SVector::from(cfg.measurement_noise)),
        }
    }

    /// State at rest on `bbox` with the configured initial covariance.
    pub fn init(&self, bbox: &BoundingBox) -> KalmanState {
        let z = bbox_to_measurement(bbox);
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        KalmanState {
            mean,
            covariance: self.initial_covariance,
        }
    }

    pub fn predict(&self, st: &KalmanState) -> Prediction {
        let mut mean = self.transition * st.mean;
        let mut clamped = false;
        if mean[2] <= 0.0 {
            mean[2] = MIN_POSITIVE;
            mean[6] = 0.0;
            clamped = true;
        }
        let covariance = symmetrize(self.transition * st.covariance * self.transition.transpose() + self.process_noise);
        Prediction {
            state: KalmanState { mean, covariance },
            clamped,
        }
    }

    pub fn update(&self, st: &KalmanState, z: &BoundingBox) -> Result<KalmanState, KalmanError> {
        let h = &self.observation;
        let innovation = bbox_to_measurement(z) - h * st.mean;
        let s = h * st.covariance * h.transpose() + self.measurement_noise;
        let s_inv = s.try_inverse().ok_or(KalmanError::SingularInnovation)?;
        if s_inv.iter().any(|v| !v.is_finite()) {
            return Err(KalmanError::SingularInnovation);
        }
        let gain = st.covariance * h.transpose() * s_inv;
        let mut mean = st.mean + gain * innovation;
        mean[2] = mean[2].max(MIN_POSITIVE);
        mean[3] = mean[3].max(MIN_POSITIVE);
        // Joseph form keeps the covariance symmetric PSD under rounding.
        let i_kh = StateCovariance::identity() - gain * h;
        let covariance =
            symmetrize(i_kh * st.covariance * i_kh.transpose() + gain * self.measurement_noise * gain.transpose());
        Ok(KalmanState { mean, covariance })
    }
}

fn symmetrize(m: StateCovariance) -> StateCovariance {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a covariance matrix.
pub fn min_eigenvalue(p: &StateCovariance) -> f64 {
    p.symmetric_eigenvalues().min()
}
