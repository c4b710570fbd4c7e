//! Gamma-Gaussian-inverse-Wishart single extended-target model.
//!
//! A `GgiwDensity` carries a Gamma density over the Poisson measurement rate,
//! a Gaussian over the kinematic state (2-D position and velocity) and an
//! inverse-Wishart over the elliptic extent. Prediction and update follow the
//! random-matrix (Feldmann-style) recursion: the measurement mean drives a
//! Kalman-type kinematic update with an extent-coupled innovation, and the
//! measurement scatter drives the extent update.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use statrs::function::gamma::ln_gamma;

use crate::numeric::{log_gaussian2, sqrt_spd2, LN_TWO_PI};
use crate::{Error, Result};

/// Extent dimension; the artifact is fixed to planar elliptic extents.
pub const EXTENT_DIM: usize = 2;

/// Gamma x Gaussian x inverse-Wishart sufficient statistic of one extended target.
#[derive(Debug, Clone, PartialEq)]
pub struct GgiwDensity {
    /// Gamma shape of the measurement-rate density.
    pub rate_shape: f64,
    /// Gamma rate (inverse scale) of the measurement-rate density.
    pub rate_rate: f64,
    /// Kinematic mean: position (x, y) then velocity (vx, vy).
    pub kin_mean: Vector4<f64>,
    /// Kinematic covariance.
    pub kin_cov: Matrix4<f64>,
    /// Inverse-Wishart degrees of freedom; must exceed `2d + 2` for the
    /// extent mean to exist.
    pub extent_dof: f64,
    /// Inverse-Wishart scale matrix.
    pub extent_scale: Matrix2<f64>,
}

impl GgiwDensity {
    /// Mean of the Gamma measurement-rate density.
    pub fn rate_mean(&self) -> f64 {
        self.rate_shape / self.rate_rate
    }

    /// Mean of the inverse-Wishart extent density, `V / (v - 2d - 2)`.
    pub fn extent_mean(&self) -> Matrix2<f64> {
        self.extent_scale / (self.extent_dof - 2.0 * EXTENT_DIM as f64 - 2.0)
    }

    /// Position part of the kinematic mean.
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.kin_mean[0], self.kin_mean[1])
    }

    /// Checks positive definiteness and parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if self.rate_shape <= 0.0 || self.rate_rate <= 0.0 {
            return Err(Error::NotPositiveDefinite("gamma parameters"));
        }
        if self.extent_dof <= 2.0 * EXTENT_DIM as f64 + 2.0 {
            return Err(Error::NotPositiveDefinite("inverse-Wishart dof"));
        }
        self.kin_cov
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("kinematic covariance"))?;
        self.extent_scale
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("extent scale"))?;
        Ok(())
    }
}

/// Linear-Gaussian motion model with survival probability and the GGIW
/// forgetting parameters.
#[derive(Debug, Clone)]
pub struct MotionModel {
    /// State transition matrix.
    pub transition: Matrix4<f64>,
    /// Process noise covariance.
    pub process_noise: Matrix4<f64>,
    /// Scan period in seconds.
    pub step_len: f64,
    /// Constant survival probability.
    pub survival: f64,
    /// Extent decorrelation time constant tau; the extent dof decays with
    /// factor `exp(-step_len / tau)` per prediction.
    pub extent_tau: f64,
    /// Gamma forgetting factor eta >= 1; mean preserved, variance scaled.
    pub rate_forgetting: f64,
}

impl MotionModel {
    /// Nearly-constant-velocity model with white-acceleration noise.
    pub fn nearly_constant_velocity(
        step_len: f64,
        accel_std: f64,
        survival: f64,
        extent_tau: f64,
        rate_forgetting: f64,
    ) -> Self {
        let mut f = Matrix4::identity();
        f[(0, 2)] = step_len;
        f[(1, 3)] = step_len;
        let t2 = step_len * step_len;
        let q11 = t2 * t2 / 4.0;
        let q12 = t2 * step_len / 2.0;
        let q22 = t2;
        let s = accel_std * accel_std;
        let mut q = Matrix4::zeros();
        q[(0, 0)] = s * q11;
        q[(1, 1)] = s * q11;
        q[(0, 2)] = s * q12;
        q[(2, 0)] = s * q12;
        q[(1, 3)] = s * q12;
        q[(3, 1)] = s * q12;
        q[(2, 2)] = s * q22;
        q[(3, 3)] = s * q22;
        MotionModel {
            transition: f,
            process_noise: q,
            step_len,
            survival,
            extent_tau,
            rate_forgetting,
        }
    }
}

/// Rectangular surveillance region with uniform clutter.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, z: &Vector2<f64>) -> bool {
        z[0] >= self.x_min && z[0] <= self.x_max && z[1] >= self.y_min && z[1] <= self.y_max
    }
}

/// Linear-Gaussian sensor with uniform Poisson clutter.
#[derive(Debug, Clone)]
pub struct SensorModel {
    /// Observation matrix mapping kinematic state to measurement space.
    pub observation: Matrix2x4<f64>,
    /// Measurement noise covariance.
    pub meas_noise: Matrix2<f64>,
    /// Detection probability.
    pub detection: f64,
    /// Expected number of clutter measurements per scan.
    pub clutter_rate: f64,
    /// Surveillance region over which clutter is uniform.
    pub region: Region,
    /// Scaling of the extent contribution to the per-measurement spread,
    /// i.e. measurements are modelled as N(Hx, rho * X + R).
    pub extent_scaling: f64,
}

impl SensorModel {
    /// Position-only observation of the standard 4-D state.
    pub fn position_sensor(
        meas_std: f64,
        detection: f64,
        clutter_rate: f64,
        region: Region,
        extent_scaling: f64,
    ) -> Self {
        let mut h = Matrix2x4::zeros();
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        SensorModel {
            observation: h,
            meas_noise: Matrix2::identity() * meas_std * meas_std,
            detection,
            clutter_rate,
            region,
            extent_scaling,
        }
    }

    /// Clutter intensity kappa(z) = lambda_fa * c(z) for z inside the region.
    pub fn clutter_intensity(&self) -> f64 {
        self.clutter_rate / self.region.area()
    }

    /// Per-measurement spread rho * Xhat + R used for gating and updates.
    pub fn effective_noise(&self, density: &GgiwDensity) -> Matrix2<f64> {
        self.meas_noise + density.extent_mean() * self.extent_scaling
    }

    /// Predicted measurement density (mean, covariance) of a single target,
    /// extent contribution included.
    pub fn predicted_measurement(&self, density: &GgiwDensity) -> (Vector2<f64>, Matrix2<f64>) {
        let mean = self.observation * density.kin_mean;
        let cov = self.observation * density.kin_cov * self.observation.transpose()
            + self.effective_noise(density);
        (mean, cov)
    }
}

/// Kalman prediction of the kinematics, forgetting of the Gamma rate and
/// decay of the inverse-Wishart dof toward its floor with the extent mean
/// preserved.
pub fn ggiw_predict(density: &GgiwDensity, motion: &MotionModel) -> Result<GgiwDensity> {
    let kin_mean = motion.transition * density.kin_mean;
    let kin_cov =
        motion.transition * density.kin_cov * motion.transition.transpose() + motion.process_noise;
    kin_cov
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("predicted kinematic covariance"))?;

    let eta = motion.rate_forgetting;
    let decay = (-motion.step_len / motion.extent_tau).exp();
    let floor = 2.0 * EXTENT_DIM as f64 + 2.0;
    let extent_dof = floor + decay * (density.extent_dof - floor);

    Ok(GgiwDensity {
        rate_shape: density.rate_shape / eta,
        rate_rate: density.rate_rate / eta,
        kin_mean,
        kin_cov,
        extent_dof,
        // Rescale so V / (v - 2d - 2) is unchanged by the dof decay.
        extent_scale: density.extent_scale * decay,
    })
}

/// log E[exp(-rate) * rate^n] under Gamma(shape, rate_param): the Poisson
/// count factor of the predictive likelihood, expressed as a ratio of Gamma
/// normalization constants.
pub fn log_count_likelihood(shape: f64, rate_param: f64, n: usize) -> f64 {
    ln_gamma(shape + n as f64) - ln_gamma(shape) + shape * rate_param.ln()
        - (shape + n as f64) * (rate_param + 1.0).ln()
}

/// log of the empty-set conditional likelihood,
/// `log(1 - P_D + P_D * E[exp(-rate)])`.
pub fn log_lik_empty(density: &GgiwDensity, sensor: &SensorModel) -> f64 {
    let log_e = log_count_likelihood(density.rate_shape, density.rate_rate, 0);
    ((1.0 - sensor.detection) + sensor.detection * log_e.exp()).ln()
}

/// Gamma posterior after observing an empty measurement set: moment match of
/// the two-component mixture {not detected: prior} + {detected, zero
/// measurements: Gamma(shape, rate + 1)}.
///
/// Kinematics and extent are untouched since the empty-set likelihood depends
/// only on the measurement rate.
pub fn ggiw_update_empty(density: &GgiwDensity, sensor: &SensorModel) -> GgiwDensity {
    let a = density.rate_shape;
    let b = density.rate_rate;
    let w_missed = 1.0 - sensor.detection;
    let w_zero = sensor.detection * log_count_likelihood(a, b, 0).exp();
    let total = w_missed + w_zero;
    if total <= 0.0 {
        // P_D = 1 and a degenerate rate; keep the zero-measurement branch.
        return GgiwDensity {
            rate_rate: b + 1.0,
            ..density.clone()
        };
    }
    let u1 = w_missed / total;
    let u2 = w_zero / total;
    let mean = u1 * a / b + u2 * a / (b + 1.0);
    let second = u1 * a * (a + 1.0) / (b * b) + u2 * a * (a + 1.0) / ((b + 1.0) * (b + 1.0));
    let var = (second - mean * mean).max(1e-12);
    GgiwDensity {
        rate_shape: mean * mean / var,
        rate_rate: mean / var,
        ..density.clone()
    }
}

/// GGIW posterior given that the measurement cell is this target's detection
/// set, and the log predictive likelihood `log <f; l_W>` including the
/// detection probability and the Gamma-marginalized count factor.
pub fn ggiw_update(
    density: &GgiwDensity,
    cell: &[Vector2<f64>],
    sensor: &SensorModel,
) -> Result<(GgiwDensity, f64)> {
    let n = cell.len();
    assert!(n >= 1, "ggiw_update requires a nonempty measurement cell");
    if sensor.detection <= 0.0 {
        return Ok((density.clone(), f64::NEG_INFINITY));
    }
    let d = EXTENT_DIM as f64;

    let mut centroid = Vector2::zeros();
    for z in cell {
        centroid += z;
    }
    centroid /= n as f64;
    let mut scatter = Matrix2::zeros();
    for z in cell {
        let dz = z - centroid;
        scatter += dz * dz.transpose();
    }

    let h = sensor.observation;
    let r_eff = sensor.effective_noise(density);
    let r_eff_chol = r_eff
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("effective measurement noise"))?;
    let predicted = h * density.kin_mean;
    let innovation_cov = h * density.kin_cov * h.transpose() + r_eff / n as f64;
    let innovation_chol = innovation_cov
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
    let innovation = centroid - predicted;

    // Kinematic update against the cell centroid.
    let gain = density.kin_cov * h.transpose() * innovation_chol.inverse();
    let kin_mean = density.kin_mean + gain * innovation;
    let kin_cov = density.kin_cov - gain * innovation_cov * gain.transpose();
    // Symmetrize against round-off.
    let kin_cov = (kin_cov + kin_cov.transpose()) * 0.5;

    // Extent update: innovation and scatter mapped back through the extent.
    let x_hat = density.extent_mean();
    let x_sqrt = sqrt_spd2(&x_hat);
    let s_inv_sqrt = sqrt_spd2(&innovation_chol.inverse());
    let n_hat = x_sqrt * s_inv_sqrt * innovation * innovation.transpose() * s_inv_sqrt * x_sqrt;
    let r_inv_sqrt = sqrt_spd2(&r_eff_chol.inverse());
    let z_hat = x_sqrt * r_inv_sqrt * scatter * r_inv_sqrt * x_sqrt;

    let updated = GgiwDensity {
        rate_shape: density.rate_shape + n as f64,
        rate_rate: density.rate_rate + 1.0,
        kin_mean,
        kin_cov,
        extent_dof: density.extent_dof + n as f64,
        extent_scale: density.extent_scale + n_hat + z_hat,
    };

    // Predictive likelihood: detection, count factor, centroid Gaussian and
    // the residual spread of the n measurements around their centroid.
    let mut log_lik = sensor.detection.ln()
        + log_count_likelihood(density.rate_shape, density.rate_rate, n)
        + log_gaussian2(&centroid, &predicted, &innovation_cov)?;
    if n > 1 {
        let log_det_r = 2.0 * r_eff_chol.l().diagonal().map(f64::ln).sum();
        let r_inv = r_eff_chol.inverse();
        log_lik += -0.5 * (n as f64 - 1.0) * (d * LN_TWO_PI + log_det_r)
            - 0.5 * d * (n as f64).ln()
            - 0.5 * (r_inv * scatter).trace();
    }
    Ok((updated, log_lik))
}
