#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use safepath::geometry::exp_so3;
use safepath::{Curve3D, Mat3, Pose, Vec3};

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n < 1.0 {
            return v / n;
        }
    }
}

/// Unit vector orthogonal to `k`.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, k: &Vec3) -> Vec3 {
    loop {
        let v = random_unit(rng);
        let w = v - k * k.dot(&v);
        if w.norm() > 0.1 {
            return w.normalize();
        }
    }
}

pub fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Mat3 {
    exp_so3(&(random_unit(rng) * rng.random_range(0.0..max_angle)))
}

pub fn random_pose(rng: &mut ChaCha8Rng, half_extent: f64) -> Pose {
    let t = Vec3::new(
        rng.random_range(-half_extent..half_extent),
        rng.random_range(-half_extent..half_extent),
        rng.random_range(-half_extent..half_extent),
    );
    Pose::from_parts_unchecked(random_rotation(rng, 3.0), t)
}

/// Helix piece of radius `rho` and pitch `pitch` (advance per turn), sampled
/// at arc-length `spacing` over `[-half_len, half_len]` around the point
/// `(rho, 0, 0)`. Returns the points and the exact tangent and curvature
/// vector at the middle.
pub fn helix_piece(rho: f64, pitch: f64, half_len: f64, spacing: f64) -> (Vec<Vec3>, Vec3, Vec3) {
    let c = pitch / std::f64::consts::TAU;
    let l = rho.hypot(c);
    let n = (2.0 * half_len / spacing).round() as usize;
    let pts = (0..=n)
        .map(|i| {
            let u = (-half_len + 2.0 * half_len * i as f64 / n as f64) / l;
            Vec3::new(rho * u.cos(), rho * u.sin(), c * u)
        })
        .collect();
    let tangent = Vec3::new(0.0, rho, c) / l;
    let curvature = Vec3::new(-rho / (l * l), 0.0, 0.0);
    (pts, tangent, curvature)
}

pub fn transform_all(pose: &Pose, pts: &[Vec3]) -> Vec<Vec3> {
    pts.iter().map(|p| pose.transform_point(p)).collect()
}

/// Random open or closed polyline by a random walk.
pub fn random_polyline(rng: &mut ChaCha8Rng) -> Curve3D {
    let n = rng.random_range(2..40usize);
    let closed = n >= 3 && rng.random_bool(0.3);
    let mut p = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        pts.push(p);
        p += random_unit(rng) * rng.random_range(0.1..3.0);
    }
    Curve3D::new(pts, closed).expect("random walk has distinct points")
}

/// Reads a CSV log, skipping `#` comment lines. Returns the header and rows.
pub fn read_log(path: &std::path::Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).expect("open log");
    let header = rdr.headers().expect("header").iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.expect("row").iter().map(String::from).collect()).collect();
    (header, rows)
}

/// Log contents without the creation-time header line.
pub fn log_without_timestamp(path: &std::path::Path) -> String {
    std::fs::read_to_string(path)
        .expect("read log")
        .lines()
        .filter(|l| !l.starts_with("# created"))
        .map(|l| format!("{l}\n"))
        .collect()
}
