use nalgebra::DVector;
use proptest::prelude::*;

use safepath::geometry::{
    exp_so3, integrate_pose, l_theta_u, pseudo_inverse, skew, AngleAxis, DEFAULT_PINV_TOL,
};
use safepath::hierarchy::{null_projector, solve_single, solve_two_level, PriorityStack};
use safepath::plant::Plant;
use safepath::tasks::{approach_command, approach_task, mu_obs, pf_error, pf_velocity, Gains, TaskSignal};
use safepath::{Curve3D, MatMN, Pose, Twist, Vec3};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn polyline(closed: bool) -> impl Strategy<Value = Curve3D> {
    prop::collection::vec(vec3(10.0), 3..25)
        .prop_filter_map("distinct points", move |pts| Curve3D::new(pts, closed).ok())
}

/// Low-rank `rows × 6` matrix as a product of random factors.
fn matrix() -> impl Strategy<Value = MatMN> {
    (1..=6usize, 1..=6usize).prop_flat_map(|(rows, rank)| {
        let rank = rank.min(rows);
        (prop::collection::vec(-1.0..1.0f64, rows * rank), prop::collection::vec(-1.0..1.0f64, rank * 6))
            .prop_map(move |(a, b)| MatMN::from_vec(rows, rank, a) * MatMN::from_vec(rank, 6, b))
    })
}

fn signal(l: MatMN, rate: DVector<f64>) -> TaskSignal {
    TaskSignal::new(rate.clone(), l, rate)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn skew_is_antisymmetric(v in vec3(1e3)) {
        let s = skew(&v);
        prop_assert_eq!(s + s.transpose(), safepath::Mat3::zeros());
    }

    #[test]
    fn pseudo_inverse_reconstructs(m in matrix()) {
        let p = pseudo_inverse(&m, DEFAULT_PINV_TOL);
        prop_assert!((&m * &p * &m - &m).norm() <= 1e-8 * m.norm().max(1e-300));
    }

    #[test]
    fn l_theta_u_is_well_conditioned_below_half_turn(axis in vec3(1.0), theta in 0.0..(std::f64::consts::PI - 0.1)) {
        prop_assume!(axis.norm() > 0.1);
        let a = AngleAxis::from_theta_u(&(axis.normalize() * theta));
        let svd = l_theta_u(&a).unwrap().svd(false, false);
        let cond = svd.singular_values.max() / svd.singular_values.min();
        prop_assert!(cond.is_finite() && cond < 1e3, "cond {cond}");
    }

    #[test]
    fn projection_is_idempotent(c in polyline(false), q in vec3(15.0)) {
        let once = c.project(&q).position;
        let twice = c.project(&once).position;
        prop_assert!((once - twice).norm() <= 1e-9);
    }

    #[test]
    fn distance_is_one_lipschitz(c in polyline(true), a in vec3(15.0), b in vec3(15.0)) {
        prop_assert!((c.distance(&a) - c.distance(&b)).abs() <= (a - b).norm() + 1e-12);
    }

    #[test]
    fn closed_curve_seam_is_continuous(radius in 1.0..20.0f64, n in 60..400usize) {
        let pts = (0..n).map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            Vec3::new(radius * a.cos(), radius * a.sin(), 0.0)
        }).collect();
        let c = Curve3D::closed(pts).unwrap();
        let l = c.length();
        prop_assert!((c.tangent_at(0.0) - c.tangent_at(l)).norm() <= 1e-9);
        prop_assert!((c.curvature_at(0.0) - c.curvature_at(l)).norm() <= 1e-9);
        prop_assert!((c.point_at(0.0) - c.point_at(l)).norm() <= 1e-9);
    }

    #[test]
    fn path_velocity_splits_the_speed(c in polyline(false), q in vec3(12.0), beta in -20.0..-0.5f64, gc in -20.0..-0.5f64) {
        let g = Gains { beta_prime: beta, gamma_c: gc, ..Gains::default() };
        let (d, cp) = pf_error(&q, &c);
        let pv = pf_velocity(&d, &cp, &g);
        let ret = (d * pv.beta).norm();
        if ret < g.v_tis {
            prop_assert!((pv.velocity.norm() - g.v_tis).abs() <= 1e-9);
        } else {
            prop_assert!((pv.velocity.norm() - ret).abs() <= 1e-9 * ret);
        }
        prop_assert!(pv.beta <= 0.0 && pv.beta >= 2.0 * beta);
        // the foot of an interior point is a perpendicular foot
        let pts = c.points();
        let near = |p: &Vec3| (cp.position - p).norm() <= 1e-12 * (1.0 + p.norm());
        let at_vertex = near(&pts[cp.segment_index]) || near(&pts[(cp.segment_index + 1) % pts.len()]);
        if !cp.clamped && !at_vertex {
            let along = pv.velocity.dot(&d);
            prop_assert!((along - pv.beta * d.norm_squared()).abs() <= 1e-9 * (1.0 + d.norm_squared()));
            prop_assert!(along <= 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_monotone(a in 0.0..5.0f64, b in 0.0..5.0f64) {
        prop_assume!((a - b).abs() > 1e-6);
        let g = Gains::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(mu_obs(&Vec3::new(lo, 0.0, 0.0), &g) > mu_obs(&Vec3::new(0.0, hi, 0.0), &g));
    }

    #[test]
    fn approach_error_decreases(t in vec3(10.0), rot in vec3(0.57), gamma_te in 0.01..1.0f64) {
        // with γ T_e near 2 the screw coupling of a large rotation step can
        // grow the translation error; the contraction holds up to γ T_e = 1
        let g = Gains { gamma: gamma_te / 0.008, ..Gains::default() };
        let target = Pose::identity();
        let e_t_t = Pose::from_translation(Vec3::new(0.0, 0.0, 40.0));
        let start = Pose::from_parts_unchecked(exp_so3(&rot), t);
        let mut plant = Plant::new(start * e_t_t.inverse(), g.t_e);
        let mut last = f64::INFINITY;
        for _ in 0..30 {
            let r_t_t = target * plant.measure() * e_t_t;
            let e = approach_task(&r_t_t, &g).unwrap().e.norm();
            if e < 1e-9 {
                break;
            }
            prop_assert!(e < last, "{e} after {last}");
            last = e;
            plant.step(&approach_command(&r_t_t, &e_t_t, &g).unwrap());
        }
    }

    #[test]
    fn feasible_primary_is_exact(l1 in matrix(), l2 in matrix(), x in prop::collection::vec(-1.0..1.0f64, 6)) {
        let rate1 = &l1 * DVector::from_vec(x);
        let rate2 = DVector::from_element(l2.nrows(), 0.5);
        let stack = PriorityStack::two(signal(l1.clone(), rate1.clone()), signal(l2, rate2));
        let v = DVector::from_column_slice(solve_two_level(&stack, DEFAULT_PINV_TOL).to_vector().as_slice());
        prop_assert!((&l1 * &v - &rate1).norm() <= 1e-8);
        let p = null_projector(&l1, DEFAULT_PINV_TOL);
        prop_assert!((&p * &p - &p).norm() <= 1e-9);
    }

    #[test]
    fn unreachable_secondary_reduces_to_single(l1 in matrix(), r in prop::collection::vec(-1.0..1.0f64, 6)) {
        // a secondary that only asks for what the primary already fixes
        let rate1 = DVector::from_fn(l1.nrows(), |i, _| r[i]);
        let stack = PriorityStack::two(signal(l1.clone(), rate1.clone()), signal(l1.clone(), rate1.clone()));
        let single = solve_single(&signal(l1, rate1), DEFAULT_PINV_TOL);
        let two = solve_two_level(&stack, DEFAULT_PINV_TOL);
        prop_assert!((two.to_vector() - single.to_vector()).norm() <= 1e-12);
    }

    #[test]
    fn plant_replay_is_bit_identical(tws in prop::collection::vec((vec3(5.0), vec3(0.5)), 1..50)) {
        let start = Pose::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let run = || {
            let mut p = Plant::new(start, 0.008);
            for (v, w) in &tws {
                p.step(&Twist::new(*v, *w));
            }
            p.state.w_t_e
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn integration_keeps_rotations_orthonormal(v in vec3(10.0), w in vec3(2.0)) {
        let mut p = Pose::identity();
        for _ in 0..2000 {
            p = integrate_pose(&p, &Twist::new(v, w), 0.008);
        }
        prop_assert!((p.rotation.transpose() * p.rotation - safepath::Mat3::identity()).norm() <= 1e-9);
    }
}
