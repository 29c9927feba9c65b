//! Two-level task-priority resolution of the end-effector twist.

use nalgebra::DVector;

use crate::geometry::{pseudo_inverse, pseudo_inverse_with_scale, MatMN, Twist, DEFAULT_PINV_TOL};
use crate::tasks::TaskSignal;

#[derive(Clone, Debug)]
pub struct PriorityStack {
    pub primary: TaskSignal,
    pub secondary: Option<TaskSignal>,
}

impl PriorityStack {
    pub fn single(primary: TaskSignal) -> Self {
        Self { primary, secondary: None }
    }

    pub fn two(primary: TaskSignal, secondary: TaskSignal) -> Self {
        Self { primary, secondary: Some(secondary) }
    }
}

fn to_twist(v: &DVector<f64>) -> Twist {
    Twist::from_slice(v.as_slice())
}

/// Minimum-norm least-squares twist `L† ė`.
pub fn solve_single(t: &TaskSignal, tol: f64) -> Twist {
    to_twist(&(pseudo_inverse(&t.l, tol) * &t.desired_rate))
}

/// `I - L† L`
pub fn null_projector(l: &MatMN, tol: f64) -> MatMN {
    MatMN::identity(l.ncols(), l.ncols()) - pseudo_inverse(l, tol) * l
}

/// Two-level solve. Evaluated in the recursive form (see
/// [`solve_two_level_recursive`]): the two forms agree in exact arithmetic, but
/// when `L̃2` is ill-conditioned the simplified one leaks `ε‖v‖` into the
/// primary task, and the final projection removes it.
pub fn solve_two_level(s: &PriorityStack, tol: f64) -> Twist {
    solve_two_level_recursive(s, tol)
}

/// `v = L1† ė1 + L̃2† (ė2 - L2 L1† ė1)` with `L̃2 = L2 (I - L1† L1)`.
///
/// Singular values of `L̃2` are truncated relative to `‖L2‖`: directions the
/// primary task has consumed must not come back as amplified round-off.
pub fn solve_two_level_simplified(s: &PriorityStack, tol: f64) -> Twist {
    let l1_pinv = pseudo_inverse(&s.primary.l, tol);
    let v1 = &l1_pinv * &s.primary.desired_rate;
    let Some(sec) = &s.secondary else {
        return to_twist(&v1);
    };
    let projector = MatMN::identity(6, 6) - &l1_pinv * &s.primary.l;
    let l2_tilde = &sec.l * projector;
    let residual = &sec.desired_rate - &sec.l * &v1;
    to_twist(&(v1 + pseudo_inverse_with_scale(&l2_tilde, tol, sec.l.norm()) * residual))
}

/// The unsimplified recursive form, with the projector kept explicitly:
/// `v = L1† ė1 + (I - L1† L1) L̃2† (ė2 - L2 L1† ė1)`.
pub fn solve_two_level_recursive(s: &PriorityStack, tol: f64) -> Twist {
    let l1_pinv = pseudo_inverse(&s.primary.l, tol);
    let v1 = &l1_pinv * &s.primary.desired_rate;
    let Some(sec) = &s.secondary else {
        return to_twist(&v1);
    };
    let projector = MatMN::identity(6, 6) - &l1_pinv * &s.primary.l;
    let l2_tilde = &sec.l * &projector;
    let residual = &sec.desired_rate - &sec.l * &v1;
    to_twist(&(v1 + projector * pseudo_inverse_with_scale(&l2_tilde, tol, sec.l.norm()) * residual))
}

/// Twist limits applied to every command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limits {
    /// mm/s
    pub max_linear: f64,
    /// rad/s
    pub max_angular: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_linear: 20.0, max_angular: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Solution {
    pub twist: Twist,
    /// The exact solution exceeded the limits and was scaled down.
    pub saturated: bool,
}

/// Solver configuration: pseudo-inverse cutoff and output saturation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Solver {
    pub tol: f64,
    pub limits: Limits,
}

impl Default for Solver {
    fn default() -> Self {
        Self { tol: DEFAULT_PINV_TOL, limits: Limits::default() }
    }
}

impl Solver {
    pub fn solve(&self, s: &PriorityStack) -> Solution {
        self.saturate(solve_two_level(s, self.tol))
    }

    pub fn saturate(&self, tw: Twist) -> Solution {
        let (twist, saturated) = tw.saturated(self.limits.max_linear, self.limits.max_angular);
        Solution { twist, saturated }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = DEFAULT_PINV_TOL;

    fn signal(l: MatMN, rate: &[f64]) -> TaskSignal {
        let rate = DVector::from_column_slice(rate);
        TaskSignal::new(rate.clone(), l, rate)
    }

    fn vec6(t: &Twist) -> DVector<f64> {
        DVector::from_column_slice(t.to_vector().as_slice())
    }

    #[test]
    fn single_cases() {
        let mut l = MatMN::zeros(3, 6);
        l.view_mut((0, 0), (3, 3)).fill_with_identity();
        assert_eq!(solve_single(&signal(l.clone(), &[0.0; 3]), TOL), Twist::zero());
        let tw = solve_single(&signal(l, &[1.0, 2.0, 3.0]), TOL);
        assert!((vec6(&tw) - DVector::from_column_slice(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0])).norm() < 1e-14);
    }

    #[test]
    fn single_full_row_rank_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let l = MatMN::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
            let rate: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t = signal(l.clone(), &rate);
            let tw = solve_single(&t, TOL);
            assert!((&l * vec6(&tw) - &t.desired_rate).norm() < 1e-8);
        }
    }

    #[test]
    fn absent_secondary_equals_single() {
        let l = MatMN::from_fn(3, 6, |i, j| (i * 6 + j) as f64 * 0.1 + 1.0 / (1.0 + (i + j) as f64));
        let t = signal(l, &[1.0, -1.0, 0.5]);
        assert_eq!(solve_two_level(&PriorityStack::single(t.clone()), TOL), solve_single(&t, TOL));
    }

    #[test]
    fn invertible_primary_suppresses_secondary() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let l1 = MatMN::from_fn(6, 6, |i, j| if i == j { 3.0 } else { rng.random_range(-0.5..0.5) });
        let r1: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let l2 = MatMN::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let s = PriorityStack::two(signal(l1.clone(), &r1), signal(l2, &[5.0, 5.0, 5.0]));
        let tw = solve_two_level(&s, TOL);
        let exact = l1.try_inverse().unwrap() * DVector::from_column_slice(&r1);
        assert!((vec6(&tw) - exact).norm() < 1e-10);
    }

    #[test]
    fn independent_tasks_both_exact() {
        let mut l1 = MatMN::zeros(3, 6);
        l1.view_mut((0, 0), (3, 3)).fill_with_identity();
        let mut l2 = MatMN::zeros(3, 6);
        l2.view_mut((0, 3), (3, 3)).fill_with_identity();
        let s = PriorityStack::two(signal(l1.clone(), &[1.0, 2.0, 3.0]), signal(l2.clone(), &[-1.0, 0.5, 4.0]));
        let tw = vec6(&solve_two_level(&s, TOL));
        // dense least squares on the stacked (square, invertible) system
        let mut stacked = MatMN::zeros(6, 6);
        stacked.view_mut((0, 0), (3, 6)).copy_from(&l1);
        stacked.view_mut((3, 0), (3, 6)).copy_from(&l2);
        let rhs = DVector::from_column_slice(&[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let lsq = stacked.lu().solve(&rhs).unwrap();
        assert!((tw - lsq).norm() < 1e-12);
    }

    #[test]
    fn conflicting_tasks_primary_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let l = MatMN::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let r = [0.7, -1.3, 2.0];
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let s = PriorityStack::two(signal(l.clone(), &r), signal(l.clone(), &neg));
        let tw = vec6(&solve_two_level(&s, TOL));
        let rate1 = DVector::from_column_slice(&r);
        assert!((&l * &tw - &rate1).norm() < 1e-10);
        let residual2 = (&l * &tw - DVector::from_column_slice(&neg)).norm();
        assert!((residual2 - 2.0 * rate1.norm()).abs() < 1e-10);
    }

    #[test]
    fn unreachable_secondary_reduces_to_single() {
        let mut l1 = MatMN::zeros(3, 6);
        l1.view_mut((0, 0), (3, 3)).fill_with_identity();
        // secondary lives entirely in the primary's row space
        let l2 = l1.clone() * 2.0;
        let p = signal(l1, &[1.0, 0.0, -1.0]);
        let s = PriorityStack::two(p.clone(), signal(l2, &[9.0, 9.0, 9.0]));
        assert_eq!(solve_two_level(&s, TOL), solve_single(&p, TOL));
    }

    #[test]
    fn projector_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for rank in 0..=3 {
            let a = MatMN::from_fn(3, rank, |_, _| rng.random_range(-1.0..1.0));
            let b = MatMN::from_fn(rank, 6, |_, _| rng.random_range(-1.0..1.0));
            let p = null_projector(&(a * b), TOL);
            assert!((&p * &p - &p).norm() <= 1e-9);
        }
    }

    #[test]
    fn saturation_limits() {
        let solver = Solver::default();
        let out = solver.saturate(Twist::from_slice(&[40.0, 0.0, 0.0, 0.0, 0.5, 0.0]));
        assert!(out.saturated);
        assert!((out.twist.linear.norm() - 20.0).abs() < 1e-12);
        assert!((out.twist.angular.norm() - 0.25).abs() < 1e-12);
        let out = solver.saturate(Twist::from_slice(&[1.0, 0.0, 0.0, 0.0, 0.5, 0.0]));
        assert!(!out.saturated);
    }
}
