//! Small fixed-size linear algebra and rigid-body primitives.
//!
//! Rotations are stored as 3×3 matrices. Twists are `(v, ω)` pairs where `v`
//! is the velocity of the frame origin and `ω` the angular velocity, both
//! expressed in the same frame.

use std::ops::Mul;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;
pub type MatMN = DMatrix<f64>;
pub type VecN = DVector<f64>;

/// Default relative singular-value cutoff for pseudo-inverses.
pub const DEFAULT_PINV_TOL: f64 = 1e-6;

/// Orthogonality tolerance used when accepting externally supplied rotations.
const ROTATION_INPUT_TOL: f64 = 1e-6;

/// Skew-symmetric matrix with `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Rodrigues exponential of a rotation vector.
pub fn exp_so3(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    let (a, b) = if theta < 1e-6 {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Mat3::identity() + k * a + k * k * b
}

fn orthogonality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}

pub fn check_rotation(r: &Mat3, tol: f64) -> Result<()> {
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rotation"));
    }
    let orthogonality = orthogonality_error(r);
    let det = r.determinant();
    if orthogonality > tol || (det - 1.0).abs() > tol {
        return Err(Error::NotARotation { orthogonality, det });
    }
    Ok(())
}

/// Nearest rotation in the Frobenius sense (polar decomposition).
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut q = u * v_t;
    if q.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        q = u * v_t;
    }
    q
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Builds a pose, rejecting matrices that are not rotations.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation, ROTATION_INPUT_TOL)?;
        if translation.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("translation"));
        }
        Ok(Self { rotation: orthonormalize(&rotation), translation })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Mat3::identity(), translation: t }
    }

    pub fn from_parts_unchecked(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Row-major rotation followed by translation (12 values).
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t.x, t.y, t.z,
        ]
    }

    /// Validated but stored bit for bit, so serialized poses round-trip.
    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let r = Mat3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        check_rotation(&r, ROTATION_INPUT_TOL)?;
        if v[9..].iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("translation"));
        }
        Ok(Self::from_parts_unchecked(r, Vec3::new(v[9], v[10], v[11])))
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        *self * *rhs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    /// mm/s
    pub linear: Vec3,
    /// rad/s
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x, self.linear.y, self.linear.z,
            self.angular.x, self.angular.y, self.angular.z,
        )
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 6, "twist needs 6 components");
        Self { linear: Vec3::new(v[0], v[1], v[2]), angular: Vec3::new(v[3], v[4], v[5]) }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|x| x.is_finite())
    }

    /// Re-expresses both components in another frame given its rotation.
    pub fn rotated(&self, r: &Mat3) -> Self {
        Self { linear: r * self.linear, angular: r * self.angular }
    }

    /// Uniformly scales the twist so neither part exceeds its bound.
    /// Returns the scaled twist and whether scaling happened.
    pub fn saturated(&self, max_linear: f64, max_angular: f64) -> (Self, bool) {
        let lin = self.linear.norm();
        let ang = self.angular.norm();
        let mut scale = 1.0_f64;
        if lin > max_linear {
            scale = scale.min(max_linear / lin);
        }
        if ang > max_angular {
            scale = scale.min(max_angular / ang);
        }
        if scale < 1.0 {
            (Self { linear: self.linear * scale, angular: self.angular * scale }, true)
        } else {
            (*self, false)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleAxis {
    /// rad, in `[0, pi]`
    pub theta: f64,
    pub axis: Vec3,
}

impl AngleAxis {
    pub fn identity() -> Self {
        Self { theta: 0.0, axis: Vec3::z() }
    }

    /// `theta * axis`.
    pub fn theta_u(&self) -> Vec3 {
        self.axis * self.theta
    }

    pub fn from_theta_u(tu: &Vec3) -> Self {
        let theta = tu.norm();
        if theta == 0.0 {
            Self::identity()
        } else {
            Self { theta, axis: tu / theta }
        }
    }

    pub fn to_rotation(&self) -> Mat3 {
        exp_so3(&self.theta_u())
    }
}

/// Extracts the angle-axis parameters of a rotation.
///
/// Near `theta = pi` the axis comes from the symmetric part of `R`, with the
/// sign taken from the (small) antisymmetric part.
pub fn rotation_to_angle_axis(r: &Mat3) -> Result<AngleAxis> {
    check_rotation(r, ROTATION_INPUT_TOL)?;
    let w = vee(r);
    let s = w.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < 1e-15 {
        return Ok(AngleAxis::identity());
    }
    if c > -0.9 {
        return Ok(AngleAxis { theta, axis: w / s });
    }
    // uuᵀ = (sym(R) - cosθ I) / (1 - cosθ)
    let sym = (r + r.transpose()) * 0.5;
    let b = (sym - Mat3::identity() * c) / (1.0 - c);
    let i = (0..3).max_by(|&a, &b_| b[(a, a)].total_cmp(&b[(b_, b_)])).unwrap();
    let mut axis: Vec3 = b.column(i).into_owned();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    Ok(AngleAxis { theta, axis })
}

fn check_theta(a: &AngleAxis) -> Result<()> {
    if !a.theta.is_finite() || a.theta >= std::f64::consts::PI {
        return Err(Error::AngleAtPi(a.theta));
    }
    Ok(())
}

/// Interaction matrix of the `θu` feature of `R`: `d(θu)/dt = L_θu · ω` for
/// `ω` expressed in the frame `R` maps into (`R ← exp([ω]× dt)·R`). A
/// body-frame rate `ω_b` enters as `L_θu · R · ω_b`.
pub fn l_theta_u(a: &AngleAxis) -> Result<Mat3> {
    check_theta(a)?;
    let ux = skew(&a.axis);
    let th = a.theta;
    let coeff = if th < 1e-4 {
        th * th / 12.0
    } else {
        let half = sinc(th / 2.0);
        1.0 - sinc(th) / (half * half)
    };
    Ok(Mat3::identity() - ux * (th / 2.0) + ux * ux * coeff)
}

/// Closed-form inverse of [`l_theta_u`].
pub fn l_theta_u_inverse(a: &AngleAxis) -> Result<Mat3> {
    check_theta(a)?;
    let ux = skew(&a.axis);
    let th = a.theta;
    let half = sinc(th / 2.0);
    Ok(Mat3::identity() + ux * (th / 2.0 * half * half) + ux * ux * (1.0 - sinc(th)))
}

/// Maps a twist of the tool-tip frame (expressed in that frame) to the twist
/// of the end-effector frame, for a rigid `e_T_t`.
pub fn twist_transform(e_t_t: &Pose) -> Mat6 {
    let r = e_t_t.rotation;
    let coupling = skew(&e_t_t.translation) * r;
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&coupling);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    m
}

/// Moore–Penrose pseudo-inverse; singular values below `tol * sigma_max` are
/// treated as zero.
///
/// Uses a one-sided Jacobi SVD: the matrices here are at most 6×6 and often
/// exactly rank deficient, where Jacobi stays accurate to working precision.
pub fn pseudo_inverse(m: &MatMN, tol: f64) -> MatMN {
    pseudo_inverse_with_scale(m, tol, 0.0)
}

/// As [`pseudo_inverse`], but the cutoff is `tol * max(sigma_max, scale)`.
/// Projected matrices such as `L2 (I - L1† L1)` pass the norm of the
/// unprojected `L2` so round-off left by the projection is not inverted.
pub fn pseudo_inverse_with_scale(m: &MatMN, tol: f64, scale: f64) -> MatMN {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return MatMN::zeros(cols, rows);
    }
    if rows < cols {
        return pseudo_inverse_with_scale(&m.transpose(), tol, scale).transpose();
    }
    let mut a = m.clone();
    let mut v = MatMN::identity(cols, cols);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let x = mat[(i, p)];
                        let y = mat[(i, q)];
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let mut out = MatMN::zeros(cols, rows);
    if sigma_max <= 0.0 || !sigma_max.is_finite() {
        return out;
    }
    let cutoff = tol * sigma_max.max(scale);
    for (j, &s) in sigma.iter().enumerate() {
        if s > cutoff {
            out += v.column(j) * a.column(j).transpose() / (s * s);
        }
    }
    out
}

/// `V(φ)` of the SE(3) exponential: translation part is `V(φ)·ρ`.
fn se3_left_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    let (a, b) = if theta < 1e-5 {
        (0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Mat3::identity() + k * a + k * k * b
}

/// Advances `p` by a twist expressed in `p`'s parent frame, held constant in
/// the body frame over `dt` (exact screw displacement per step).
pub fn integrate_pose(p: &Pose, tw: &Twist, dt: f64) -> Pose {
    let rt = p.rotation.transpose();
    let rho = rt * tw.linear * dt;
    let phi = rt * tw.angular * dt;
    let r_inc = exp_so3(&phi);
    let t_inc = se3_left_jacobian(&phi) * rho;
    Pose {
        rotation: orthonormalize(&(p.rotation * r_inc)),
        translation: p.translation + p.rotation * t_inc,
    }
}
