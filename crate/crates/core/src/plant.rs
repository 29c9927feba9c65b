//! Ideal kinematic plant: integrates end-effector twists and measures how
//! close the tool body comes to the orifice wall.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curve::Curve3D;
use crate::geometry::{exp_so3, integrate_pose, Pose, Twist, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantState {
    pub w_t_e: Pose,
    /// Elapsed time (s), always `step_count * T_e`.
    pub t: f64,
    pub step_count: u64,
}

impl PlantState {
    pub fn new(w_t_e: Pose) -> Self {
        Self { w_t_e, t: 0.0, step_count: 0 }
    }
}

/// Applies an end-effector-frame twist for one period.
pub fn plant_step(ps: &PlantState, e_twist: &Twist, t_e: f64) -> PlantState {
    let world = e_twist.rotated(&ps.w_t_e.rotation);
    let step_count = ps.step_count + 1;
    PlantState { w_t_e: integrate_pose(&ps.w_t_e, &world, t_e), t: step_count as f64 * t_e, step_count }
}

/// Zero-mean uniform perturbation of the reported pose.
#[derive(Clone, Debug)]
pub struct PoseNoise {
    /// Per-axis translation amplitude (mm).
    pub linear: f64,
    /// Per-axis rotation-vector amplitude (rad).
    pub angular: f64,
    rng: ChaCha8Rng,
}

impl PoseNoise {
    pub fn new(linear: f64, angular: f64, seed: u64) -> Self {
        Self { linear, angular, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn sample(&mut self, amp: f64) -> Vec3 {
        if amp <= 0.0 {
            return Vec3::zeros();
        }
        Vec3::new(
            self.rng.random_range(-amp..=amp),
            self.rng.random_range(-amp..=amp),
            self.rng.random_range(-amp..=amp),
        )
    }

    pub fn perturb(&mut self, p: &Pose) -> Pose {
        let dt = self.sample(self.linear);
        let dr = self.sample(self.angular);
        Pose::from_parts_unchecked(exp_so3(&dr) * p.rotation, p.translation + dt)
    }
}

/// Plant with optional measurement noise; the true state is never perturbed.
#[derive(Clone, Debug)]
pub struct Plant {
    pub state: PlantState,
    pub t_e: f64,
    noise: Option<PoseNoise>,
}

impl Plant {
    pub fn new(w_t_e: Pose, t_e: f64) -> Self {
        Self { state: PlantState::new(w_t_e), t_e, noise: None }
    }

    pub fn with_noise(mut self, noise: PoseNoise) -> Self {
        self.noise = Some(noise);
        self
    }

    /// Pose as reported to the controller.
    pub fn measure(&mut self) -> Pose {
        match &mut self.noise {
            Some(n) => n.perturb(&self.state.w_t_e),
            None => self.state.w_t_e,
        }
    }

    pub fn step(&mut self, e_twist: &Twist) {
        self.state = plant_step(&self.state, e_twist, self.t_e);
    }
}

/// Distance between segments `p1 q1` and `p2 q2`.
pub fn segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t) = if a <= f64::EPSILON && e <= f64::EPSILON {
        (0.0, 0.0)
    } else if a <= f64::EPSILON {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > 0.0 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

fn segments(c: &Curve3D) -> impl Iterator<Item = (Vec3, Vec3)> + '_ {
    let pts = c.points();
    (0..c.segment_count()).map(move |i| (pts[i], pts[(i + 1) % pts.len()]))
}

/// Segments per bounding sphere in the wall hierarchy.
const CHUNK: usize = 16;

/// Smallest distance between the tool body and the wall, both polylines.
/// Wall segments are grouped under bounding spheres so most pairs are
/// rejected without an exact distance.
pub fn clearance(tool_in_w: &Curve3D, wall_in_w: &Curve3D) -> f64 {
    let wall: Vec<(Vec3, Vec3)> = segments(wall_in_w).collect();
    let chunks: Vec<(Vec3, f64, &[(Vec3, Vec3)])> = wall
        .chunks(CHUNK)
        .map(|ch| {
            let n = 2.0 * ch.len() as f64;
            let c = ch.iter().fold(Vec3::zeros(), |acc, (a, b)| acc + a + b) / n;
            let r = ch.iter().map(|(a, b)| (a - c).norm().max((b - c).norm())).fold(0.0, f64::max);
            (c, r, ch)
        })
        .collect();
    let (center, radius) = wall_in_w.bounding_sphere();
    // nearest tool segments first, so the bound tightens early
    let mut tool: Vec<(f64, Vec3, Vec3)> =
        segments(tool_in_w).map(|(a, b)| (segment_distance(&a, &b, &center, &center), a, b)).collect();
    tool.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut best = f64::INFINITY;
    for (to_center, a, b) in tool {
        if to_center - radius >= best {
            break;
        }
        for (c, r, ch) in &chunks {
            // no segment of the chunk is closer than this bound
            if segment_distance(&a, &b, c, c) - r >= best {
                continue;
            }
            for (p, q) in ch.iter() {
                best = best.min(segment_distance(&a, &b, p, q));
            }
        }
    }
    best
}
