//! Task errors, interaction matrices and desired error rates.
//!
//! All interaction matrices map the end-effector twist `(v, ω)`, expressed in
//! the end-effector frame with `v` the velocity of its origin, to the error
//! rate. `L(x) = [I | -[x]×]` is the rigid-body velocity of a point `x`
//! attached to the end-effector.

use nalgebra::{DVector, Matrix3x6};

use crate::curve::{Curve3D, CurvePoint};
use crate::error::{Error, Result};
use crate::geometry::{
    l_theta_u, l_theta_u_inverse, rotation_to_angle_axis, skew, twist_transform, Mat3, MatMN, Pose, Twist,
    Vec3,
};

/// Foot-rate denominators smaller than this are treated as singular.
pub const SINGULAR_DENOMINATOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gains {
    /// RCM and UCM regulation gain (1/s).
    pub lambda: f64,
    /// Approach gain (1/s).
    pub gamma: f64,
    /// Tool-tip speed along the path (mm/s).
    pub v_tis: f64,
    /// Return gain (1/s), negative.
    pub beta_prime: f64,
    /// Curvature sensitivity (mm), negative.
    pub gamma_c: f64,
    pub sigma_max: f64,
    /// Sigmoid midpoint (mm).
    pub sigma_min: f64,
    /// Sigmoid steepness (1/mm).
    pub sigma_step: f64,
    /// Critical-zone radius (mm).
    pub d_min: f64,
    /// Dangerous-zone radius (mm).
    pub d_max: f64,
    /// Control period (s).
    pub t_e: f64,
}

impl Default for Gains {
    /// The simulation gain set of the drilling scenario.
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 1.0,
            v_tis: 4.0,
            beta_prime: -10.0,
            gamma_c: -10.0,
            sigma_max: 1.0,
            sigma_min: 1.0,
            sigma_step: 10.0,
            d_min: 0.5,
            d_max: 1.5,
            t_e: 0.008,
        }
    }
}

impl Gains {
    /// Gains used on the physical setup (slow tip, soft return).
    pub fn experimental() -> Self {
        Self { v_tis: 0.5, beta_prime: -1.25, ..Self::default() }
    }

    /// Checks the sign and ordering constraints; unstable sets are rejected.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda, self.gamma, self.v_tis, self.beta_prime, self.gamma_c, self.sigma_max, self.sigma_min,
            self.sigma_step, self.d_min, self.d_max, self.t_e,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGains("all gains must be finite".into()));
        }
        let positive = [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("v_tis", self.v_tis),
            ("sigma_max", self.sigma_max),
            ("sigma_min", self.sigma_min),
            ("sigma_step", self.sigma_step),
            ("d_min", self.d_min),
            ("t_e", self.t_e),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::InvalidGains(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.beta_prime >= 0.0 {
            return Err(Error::InvalidGains(format!("beta_prime must be < 0, got {}", self.beta_prime)));
        }
        if self.gamma_c >= 0.0 {
            return Err(Error::InvalidGains(format!("gamma_c must be < 0, got {}", self.gamma_c)));
        }
        if self.d_max <= self.d_min {
            return Err(Error::InvalidGains(format!("need d_min < d_max, got {} >= {}", self.d_min, self.d_max)));
        }
        Ok(())
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }
}

/// Error, interaction matrix and the error rate demanded from the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSignal {
    pub e: DVector<f64>,
    /// `m × 6`
    pub l: MatMN,
    pub desired_rate: DVector<f64>,
}

impl TaskSignal {
    pub fn new(e: DVector<f64>, l: MatMN, desired_rate: DVector<f64>) -> Self {
        debug_assert_eq!(l.ncols(), 6);
        debug_assert_eq!(l.nrows(), e.len());
        debug_assert_eq!(e.len(), desired_rate.len());
        Self { e, l, desired_rate }
    }

    fn from3(e: Vec3, l: Matrix3x6<f64>, rate: Vec3) -> Self {
        Self::new(
            DVector::from_column_slice(e.as_slice()),
            MatMN::from_iterator(3, 6, l.iter().copied()),
            DVector::from_column_slice(rate.as_slice()),
        )
    }

    pub fn dim(&self) -> usize {
        self.e.len()
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().chain(self.l.iter()).chain(self.desired_rate.iter()).all(|x| x.is_finite())
    }
}

/// `[I | -[x]×]`
pub fn point_velocity_matrix(x: &Vec3) -> Matrix3x6<f64> {
    let mut m = Matrix3x6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(x)));
    m
}

// ---- approach --------------------------------------------------------------

/// Pose regulation of the tip frame onto the orifice frame.
///
/// `e = (t, θu)` of `r_T_t`; the interaction matrix maps the tip twist
/// (expressed in the tip frame) to `ė`, which makes `ė = -γ e` exact.
pub fn approach_task(r_t_t: &Pose, g: &Gains) -> Result<TaskSignal> {
    let aa = rotation_to_angle_axis(&r_t_t.rotation)?;
    let r = r_t_t.rotation;
    let lw = l_theta_u(&aa)? * r;
    let tu = aa.theta_u();
    let mut e = DVector::zeros(6);
    e.rows_mut(0, 3).copy_from(&r_t_t.translation);
    e.rows_mut(3, 3).copy_from(&tu);
    let mut l = MatMN::zeros(6, 6);
    l.view_mut((0, 0), (3, 3)).copy_from(&r);
    l.view_mut((3, 3), (3, 3)).copy_from(&lw);
    let rate = &e * -g.gamma;
    Ok(TaskSignal::new(e, l, rate))
}

/// Tip-frame command `-γ L⁻¹ e` of the approach task, by block inversion.
pub fn approach_tip_twist(r_t_t: &Pose, g: &Gains) -> Result<Twist> {
    let aa = rotation_to_angle_axis(&r_t_t.rotation)?;
    let rt = r_t_t.rotation.transpose();
    let linear = rt * r_t_t.translation * -g.gamma;
    let angular = rt * l_theta_u_inverse(&aa)? * aa.theta_u() * -g.gamma;
    Ok(Twist::new(linear, angular))
}

/// Approach command expressed as an end-effector twist.
pub fn approach_command(r_t_t: &Pose, e_t_t: &Pose, g: &Gains) -> Result<Twist> {
    let tip = approach_tip_twist(r_t_t, g)?;
    let v = twist_transform(e_t_t) * tip.to_vector();
    Ok(Twist::from_slice(v.as_slice()))
}

// ---- path following ----------------------------------------------------------

/// Lateral deviation of the tip from the path and the path's foot point.
pub fn pf_error(tip: &Vec3, path: &Curve3D) -> (Vec3, CurvePoint) {
    let cp = path.project(tip);
    (tip - cp.position, cp)
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Curvature-adapted return gain; always within `[2β′, 0]`.
pub fn pf_beta(d_pf: &Vec3, cp: &CurvePoint, g: &Gains) -> f64 {
    let s = sign0(d_pf.dot(&cp.curvature.cross(&cp.tangent)));
    g.beta_prime * (1.0 + s * (1.0 - (g.gamma_c * cp.curvature.norm()).exp()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathVelocity {
    /// Commanded tip velocity (mm/s), same frame as the inputs.
    pub velocity: Vec3,
    /// Advance speed along the tangent.
    pub alpha: f64,
    pub beta: f64,
}

/// Splits `v_tis` between advancing along the tangent and returning to the
/// path; returning wins when it alone needs more than `v_tis`.
pub fn pf_velocity(d_pf: &Vec3, cp: &CurvePoint, g: &Gains) -> PathVelocity {
    let beta = pf_beta(d_pf, cp, g);
    let v_ret = d_pf * beta;
    let r2 = v_ret.norm_squared();
    let v2 = g.v_tis * g.v_tis;
    // k·v_ret vanishes on perpendicular feet; at vertices and pinned ends it
    // does not, and α solves ‖α k + v_ret‖ = v_tis instead
    let kr = cp.tangent.dot(&v_ret);
    let alpha = if r2 < v2 { (kr * kr + v2 - r2).sqrt() - kr } else { 0.0 };
    PathVelocity { velocity: cp.tangent * alpha + v_ret, alpha, beta }
}

/// Path-following task: tip velocity as a function of the end-effector twist.
/// `d_pf`, tip and velocity are all in the end-effector frame.
pub fn pf_task(d_pf: &Vec3, tip: &Vec3, v_t: &Vec3) -> TaskSignal {
    TaskSignal::from3(*d_pf, point_velocity_matrix(tip), *v_t)
}

/// Rate of the arc-length foot of a point `x` on a curve, per unit of
/// `k·ẋ`: the projector `k kᵀ / (1 - (x - p)·C)`. Zero when the foot is
/// pinned at an open end.
fn foot_projector(task: &'static str, offset: &Vec3, cp: &CurvePoint) -> Result<Mat3> {
    if cp.clamped {
        return Ok(Mat3::zeros());
    }
    let den = 1.0 - offset.dot(&cp.curvature);
    if den.abs() < SINGULAR_DENOMINATOR || !den.is_finite() {
        return Err(Error::Singular { task, denominator: den });
    }
    Ok(cp.tangent * cp.tangent.transpose() / den)
}

/// Validation identity for the lateral error: `ḋ_pf = (I - P_p) ẋ_tip` in a
/// frame where the path is fixed.
pub fn pf_error_rate(d_pf: &Vec3, cp: &CurvePoint, tip_velocity: &Vec3) -> Result<Vec3> {
    let p = foot_projector("path-following", d_pf, cp)?;
    Ok((Mat3::identity() - p) * tip_velocity)
}

// ---- RCM -----------------------------------------------------------------------

/// Offset from the tool body to the trocar point, and the body's foot point.
pub fn rcm_error(tool: &Curve3D, o_r: &Vec3) -> (Vec3, CurvePoint) {
    let tp = tool.project(o_r);
    (o_r - tp.position, tp)
}

/// `ḋ_rcm = -(I - P_t) L(O_r) v`: the trocar point is fixed in the world, so
/// it moves as `-L(O_r) v` in the end-effector frame, and the foot slides
/// along the tool by the tangential part.
pub fn rcm_interaction(d_rcm: &Vec3, tp: &CurvePoint, o_r: &Vec3) -> Result<Matrix3x6<f64>> {
    let p_t = foot_projector("RCM", d_rcm, tp)?;
    Ok(-(Mat3::identity() - p_t) * point_velocity_matrix(o_r))
}

pub fn rcm_task(d_rcm: &Vec3, tp: &CurvePoint, o_r: &Vec3, g: &Gains) -> Result<TaskSignal> {
    let l = rcm_interaction(d_rcm, tp, o_r)?;
    Ok(TaskSignal::from3(*d_rcm, l, d_rcm * -g.lambda))
}

// ---- UCM -----------------------------------------------------------------------

/// Vector from the tool foot to the closest wall point, with that wall point.
/// Equals `(O_r - p_t) - (O_r - p_h)`.
pub fn ucm_error(tp_position: &Vec3, wall: &Curve3D) -> (Vec3, CurvePoint) {
    let hp = wall.project(tp_position);
    (hp.position - tp_position, hp)
}

/// Sigmoid damping: `σ_max` deep in the critical zone, vanishing far away.
pub fn mu_obs(d_ucm: &Vec3, g: &Gains) -> f64 {
    g.sigma_max / (1.0 + (g.sigma_step * (d_ucm.norm() - g.sigma_min)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Zone {
    Critical,
    Dangerous,
    Safe,
}

pub fn zone(d_ucm: &Vec3, g: &Gains) -> Zone {
    let d = d_ucm.norm();
    if d < g.d_min {
        Zone::Critical
    } else if d <= g.d_max {
        Zone::Dangerous
    } else {
        Zone::Safe
    }
}

/// `ḋ_ucm = P_h L(p_t) - L(p_h) - (P_h - I) P_t L(O_r)`, all in the
/// end-effector frame: the tool foot slides along the tool, the wall moves
/// rigidly with the world, and the wall foot slides along the wall.
pub fn ucm_interaction(
    d_ucm: &Vec3,
    hp: &CurvePoint,
    tp: &CurvePoint,
    d_rcm: &Vec3,
    o_r: &Vec3,
) -> Result<Matrix3x6<f64>> {
    let p_t = foot_projector("UCM tool", d_rcm, tp)?;
    // wall foot offset is p_t - p_h = -d_ucm
    let p_h = foot_projector("UCM wall", &-d_ucm, hp)?;
    let l_r = point_velocity_matrix(o_r);
    Ok(p_h * point_velocity_matrix(&tp.position) - point_velocity_matrix(&hp.position)
        - (p_h - Mat3::identity()) * p_t * l_r)
}

/// UCM task; the desired rate pushes `d_ucm` to grow (away from the wall)
/// with strength `μ_obs λ`.
pub fn ucm_task(
    d_ucm: &Vec3,
    hp: &CurvePoint,
    tp: &CurvePoint,
    d_rcm: &Vec3,
    o_r: &Vec3,
    g: &Gains,
) -> Result<TaskSignal> {
    let l = ucm_interaction(d_ucm, hp, tp, d_rcm, o_r)?;
    let mu = mu_obs(d_ucm, g);
    Ok(TaskSignal::from3(*d_ucm, l, d_ucm * (mu * g.lambda)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, integrate_pose};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn line_x() -> Curve3D {
        Curve3D::segment(Vec3::new(-10.0, 0.0, 0.0), Vec3::new(10.0, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn gains_validation() {
        assert!(Gains::default().validate().is_ok());
        assert!(Gains::experimental().validate().is_ok());
        assert!(Gains { beta_prime: 1.0, ..Gains::default() }.validate().is_err());
        assert!(Gains { gamma_c: 0.0, ..Gains::default() }.validate().is_err());
        assert!(Gains { lambda: -1.0, ..Gains::default() }.validate().is_err());
        assert!(Gains { d_min: 2.0, d_max: 1.0, ..Gains::default() }.validate().is_err());
        assert!(Gains { t_e: f64::NAN, ..Gains::default() }.validate().is_err());
    }

    #[test]
    fn approach_identity_is_zero() {
        let g = Gains::default();
        let t = approach_task(&Pose::identity(), &g).unwrap();
        assert_eq!(t.e.norm(), 0.0);
        assert_eq!(approach_tip_twist(&Pose::identity(), &g).unwrap(), Twist::zero());
    }

    #[test]
    fn approach_pure_translation_heads_to_origin() {
        let g = Gains { gamma: 2.0, ..Gains::default() };
        let pose = Pose::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let t = approach_task(&pose, &g).unwrap();
        assert_eq!(t.e.as_slice(), &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let tw = approach_tip_twist(&pose, &g).unwrap();
        assert_relative_eq!(tw.linear, Vec3::new(-2.0, -4.0, -6.0), epsilon = 1e-14);
        assert_eq!(tw.angular, Vec3::zeros());
    }

    #[test]
    fn approach_command_solves_its_own_task() {
        let g = Gains::default();
        let pose = Pose::new(exp_so3(&Vec3::new(0.4, -0.8, 1.1)), Vec3::new(3.0, -1.0, 7.0)).unwrap();
        let t = approach_task(&pose, &g).unwrap();
        let tw = approach_tip_twist(&pose, &g).unwrap().to_vector();
        let rate = &t.l * DVector::from_column_slice(tw.as_slice());
        assert!((rate - &t.desired_rate).norm() < 1e-12);
    }

    #[test]
    fn approach_matrix_matches_numeric_rate() {
        let g = Gains::default();
        let pose = Pose::new(exp_so3(&Vec3::new(-1.2, 0.3, 0.9)), Vec3::new(-2.0, 5.0, 1.0)).unwrap();
        let t = approach_task(&pose, &g).unwrap();
        let tw = Twist::new(Vec3::new(0.3, -0.2, 0.5), Vec3::new(0.1, 0.4, -0.3));
        let h = 1e-6;
        // tip twist held in the tip frame: the pose moves by the body exponential
        let body = |dt: f64| {
            let world = tw.rotated(&pose.rotation);
            approach_task(&integrate_pose(&pose, &world, dt), &g).unwrap().e
        };
        let numeric = (body(h) - body(-h)) / (2.0 * h);
        let analytic = &t.l * DVector::from_column_slice(tw.to_vector().as_slice());
        assert!((numeric - analytic).norm() < 1e-6);
    }

    #[test]
    fn approach_rejects_half_turn() {
        let pose = Pose::new(exp_so3(&(Vec3::x() * PI)), Vec3::zeros()).unwrap();
        assert!(approach_task(&pose, &Gains::default()).is_err());
    }

    #[test]
    fn pf_error_cases() {
        let path = line_x();
        assert_eq!(pf_error(&Vec3::new(3.0, 0.0, 0.0), &path).0, Vec3::zeros());
        assert_eq!(pf_error(&Vec3::new(0.0, 1.0, 0.0), &path).0, Vec3::new(0.0, 1.0, 0.0));
    }

    fn circle_point(radius: f64) -> CurvePoint {
        // CCW circle in xy at angle 0: k = y, C = -x / R
        CurvePoint {
            position: Vec3::new(radius, 0.0, 0.0),
            s: 0.0,
            tangent: Vec3::y(),
            curvature: Vec3::new(-1.0 / radius, 0.0, 0.0),
            segment_index: 0,
            clamped: false,
        }
    }

    #[test]
    fn beta_on_straight_and_tie() {
        let g = Gains::default();
        let (d, cp) = pf_error(&Vec3::new(0.0, 0.3, 0.2), &line_x());
        assert_eq!(pf_beta(&d, &cp, &g), g.beta_prime);
        // d_pf along the radius is orthogonal to C × k = +z / R
        let cp = circle_point(10.0);
        assert_eq!(pf_beta(&Vec3::new(0.2, 0.0, 0.0), &cp, &g), g.beta_prime);
    }

    #[test]
    fn beta_on_circle_aligned_with_c_cross_k() {
        let g = Gains::default();
        let cp = circle_point(10.0);
        let c_cross_k = cp.curvature.cross(&cp.tangent);
        let expected = g.beta_prime * (2.0 - (-1.0f64).exp());
        assert_relative_eq!(pf_beta(&(c_cross_k.normalize() * 0.1), &cp, &g), expected, epsilon = 1e-14);
        let opposite = g.beta_prime * (-1.0f64).exp();
        assert_relative_eq!(pf_beta(&(-c_cross_k.normalize() * 0.1), &cp, &g), opposite, epsilon = 1e-14);
    }

    #[test]
    fn velocity_cases() {
        let g = Gains::default();
        let (d, cp) = pf_error(&Vec3::new(1.0, 0.0, 0.0), &line_x());
        let pv = pf_velocity(&d, &cp, &g);
        assert_eq!(pv.velocity, Vec3::new(4.0, 0.0, 0.0));

        let (d, cp) = pf_error(&Vec3::new(1.0, 1.0, 0.0), &line_x());
        let pv = pf_velocity(&d, &cp, &g);
        assert_eq!(pv.alpha, 0.0);
        assert_eq!(pv.velocity, Vec3::new(0.0, -10.0, 0.0));

        let g = Gains { v_tis: 4.0, beta_prime: -8.0, ..Gains::default() };
        let (d, cp) = pf_error(&Vec3::new(0.0, 0.0, 0.25), &line_x());
        let pv = pf_velocity(&d, &cp, &g);
        assert_relative_eq!((d * pv.beta).norm(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(pv.alpha, 12f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(pv.velocity.norm(), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn pf_matrix_lever() {
        let t = pf_task(&Vec3::zeros(), &Vec3::zeros(), &Vec3::x());
        let mut expected = MatMN::zeros(3, 6);
        expected.view_mut((0, 0), (3, 3)).fill_with_identity();
        assert_eq!(t.l, expected);

        let tip = Vec3::new(0.0, 0.0, 10.0);
        let t = pf_task(&Vec3::zeros(), &tip, &Vec3::zeros());
        let tw = DVector::from_column_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let v = &t.l * tw;
        // ω × r for ω = x, r = 10 z
        let oracle = Vec3::x().cross(&tip);
        assert_relative_eq!(Vec3::new(v[0], v[1], v[2]), oracle, epsilon = 1e-14);
        assert_eq!(oracle, Vec3::new(0.0, -10.0, 0.0));
    }

    #[test]
    fn rcm_straight_tool() {
        let tool = Curve3D::segment(Vec3::zeros(), Vec3::new(0.0, 0.0, 40.0)).unwrap();
        let (d, tp) = rcm_error(&tool, &Vec3::new(0.0, 0.0, 12.0));
        assert_eq!(d, Vec3::zeros());
        let o = Vec3::new(1.0, 0.0, 5.0);
        let (d, tp2) = rcm_error(&tool, &o);
        assert_eq!(tp2.position, Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(d, Vec3::new(1.0, 0.0, 0.0));
        let l = rcm_interaction(&d, &tp2, &o).unwrap();
        let proj = Mat3::identity() - Vec3::z() * Vec3::z().transpose();
        assert_relative_eq!(l, -proj * point_velocity_matrix(&o), epsilon = 1e-15);
        let t = rcm_task(&Vec3::zeros(), &tp, &o, &Gains::default()).unwrap();
        assert_eq!(t.desired_rate.norm(), 0.0);
    }

    #[test]
    fn rcm_singular_at_focal_point() {
        let cp = circle_point(10.0);
        // offset of one radius toward the centre puts the query at the focus
        let d = Vec3::new(-10.0, 0.0, 0.0);
        assert!(matches!(rcm_interaction(&d, &cp, &Vec3::zeros()), Err(Error::Singular { .. })));
    }

    #[test]
    fn ucm_error_geometry() {
        let n = 720;
        let rho = 3.0;
        let wall = Curve3D::closed(
            (0..n)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / n as f64;
                    Vec3::new(rho * a.cos(), rho * a.sin(), 0.0)
                })
                .collect(),
        )
        .unwrap();
        let (d, _) = ucm_error(&Vec3::zeros(), &wall);
        // inscribed polygon: the closest points are chord midpoints
        assert_relative_eq!(d.norm(), rho * (PI / n as f64).cos(), epsilon = 1e-12);
        assert!((d.norm() - rho).abs() < 1e-4);
        let on = wall.points()[17];
        assert_eq!(ucm_error(&on, &wall).0, Vec3::zeros());
    }

    #[test]
    fn mu_obs_values() {
        let g = Gains::default();
        assert_eq!(mu_obs(&Vec3::new(g.sigma_min, 0.0, 0.0), &g), g.sigma_max / 2.0);
        let far = Vec3::new(g.sigma_min + 8.0 / g.sigma_step, 0.0, 0.0);
        assert!(mu_obs(&far, &g) < 1e-3 * g.sigma_max);
        let g = Gains { sigma_max: 1.0, sigma_step: 10.0, sigma_min: 1.5, ..Gains::default() };
        assert_relative_eq!(mu_obs(&Vec3::x(), &g), 1.0 / (1.0 + (-5.0f64).exp()), epsilon = 1e-15);
        assert_relative_eq!(mu_obs(&Vec3::x(), &g), 0.9933, epsilon = 1e-4);
    }

    #[test]
    fn zones() {
        let g = Gains::default();
        assert_eq!(zone(&Vec3::new(0.1, 0.0, 0.0), &g), Zone::Critical);
        assert_eq!(zone(&Vec3::new(1.0, 0.0, 0.0), &g), Zone::Dangerous);
        assert_eq!(zone(&Vec3::new(5.0, 0.0, 0.0), &g), Zone::Safe);
    }

    #[test]
    fn ucm_straight_closed_form() {
        // straight tool and a straight wall piece: both curvature terms vanish
        let kt = Vec3::z();
        let kh = Vec3::new(1.0, 1.0, 0.0).normalize();
        let o = Vec3::new(0.3, 0.1, 8.0);
        let tp = CurvePoint { position: Vec3::new(0.0, 0.0, 8.0), s: 8.0, tangent: kt, curvature: Vec3::zeros(), segment_index: 0, clamped: false };
        let hp = CurvePoint { position: Vec3::new(2.0, -2.0, 8.0), s: 1.0, tangent: kh, curvature: Vec3::zeros(), segment_index: 0, clamped: false };
        let d_ucm = hp.position - tp.position;
        let d_rcm = o - tp.position;
        let l = ucm_interaction(&d_ucm, &hp, &tp, &d_rcm, &o).unwrap();
        let ph = kh * kh.transpose();
        let pt = kt * kt.transpose();
        let expected = ph * point_velocity_matrix(&tp.position) - point_velocity_matrix(&hp.position)
            - (ph - Mat3::identity()) * pt * point_velocity_matrix(&o);
        assert_relative_eq!(l, expected, epsilon = 1e-14);
    }
}
