//! Discretized 3D curves: the reference path, the tool centerline and the
//! orifice rim all share this representation.
//!
//! Text format: one point per line as three decimal reals (mm), `#` starts a
//! comment, and a leading `closed` directive marks a loop.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

const MIN_SPACING: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Curve3D {
    points: Vec<Vec3>,
    cum_s: Vec<f64>,
    closed: bool,
    length: f64,
    curvature_window: f64,
}

/// Foot of an orthogonal projection, with the local Frenet quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub position: Vec3,
    /// Arc length of the foot (mm).
    pub s: f64,
    /// Unit tangent.
    pub tangent: Vec3,
    /// `dk/ds` (1/mm), orthogonal to the tangent.
    pub curvature: Vec3,
    pub segment_index: usize,
    /// The query lies beyond an endpoint of an open curve; the foot is pinned
    /// to that endpoint.
    pub clamped: bool,
}

impl Curve3D {
    pub fn new(points: Vec<Vec3>, closed: bool) -> Result<Self> {
        let mut points = points;
        if closed && points.len() > 2 && (points[0] - points[points.len() - 1]).norm() <= MIN_SPACING {
            points.pop();
        }
        if points.len() < 2 {
            return Err(Error::CurveTooShort(points.len()));
        }
        if points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("curve point"));
        }
        let n = points.len();
        let segments = if closed { n } else { n - 1 };
        let mut cum_s = Vec::with_capacity(n);
        let mut lens = Vec::with_capacity(segments);
        cum_s.push(0.0);
        for i in 0..segments {
            let j = (i + 1) % n;
            let len = (points[j] - points[i]).norm();
            if len <= MIN_SPACING {
                return Err(Error::DegenerateSegment(i, j));
            }
            lens.push(len);
            if i + 1 < n {
                cum_s.push(cum_s[i] + len);
            }
        }
        let length = lens.iter().sum();
        let mut sorted = lens;
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        Ok(Self { points, cum_s, closed, length, curvature_window: 2.0 * median })
    }

    pub fn open(points: Vec<Vec3>) -> Result<Self> {
        Self::new(points, false)
    }

    pub fn closed(points: Vec<Vec3>) -> Result<Self> {
        Self::new(points, true)
    }

    /// Straight two-point curve.
    pub fn segment(a: Vec3, b: Vec3) -> Result<Self> {
        Self::new(vec![a, b], false)
    }

    pub fn parse(text: &str) -> Result<Self> {
        load_curve(text.as_bytes())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())?;
        load_curve(std::io::BufReader::new(f))
    }

    /// Serializes in the text format; `header` lines are emitted as comments.
    pub fn to_text(&self, header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            let _ = writeln!(out, "# {h}");
        }
        if self.closed {
            out.push_str("closed\n");
        }
        for p in &self.points {
            let _ = writeln!(out, "{:.12} {:.12} {:.12}", p.x, p.y, p.z);
        }
        out
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn cum_s(&self) -> &[f64] {
        &self.cum_s
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn first(&self) -> Vec3 {
        self.points[0]
    }

    pub fn last(&self) -> Vec3 {
        self.points[self.points.len() - 1]
    }

    pub fn segment_count(&self) -> usize {
        if self.closed {
            self.points.len()
        } else {
            self.points.len() - 1
        }
    }

    pub fn curvature_window(&self) -> f64 {
        self.curvature_window
    }

    fn seg(&self, i: usize) -> (Vec3, Vec3) {
        let n = self.points.len();
        (self.points[i], self.points[(i + 1) % n])
    }

    fn seg_dir(&self, i: usize) -> Vec3 {
        let (a, b) = self.seg(i);
        (b - a).normalize()
    }

    fn seg_end_s(&self, i: usize) -> f64 {
        if i + 1 < self.cum_s.len() {
            self.cum_s[i + 1]
        } else {
            self.length
        }
    }

    /// Wraps (closed) or clamps (open) an arc length into the curve's range.
    pub fn normalize_s(&self, s: f64) -> f64 {
        if self.closed {
            let w = s.rem_euclid(self.length);
            if w >= self.length { 0.0 } else { w }
        } else {
            s.clamp(0.0, self.length)
        }
    }

    /// Segment containing `s` (already normalized).
    fn locate(&self, s: f64) -> usize {
        let idx = self.cum_s.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(self.segment_count() - 1)
    }

    pub fn point_at(&self, s: f64) -> Vec3 {
        let s = self.normalize_s(s);
        let i = self.locate(s);
        let (a, b) = self.seg(i);
        let t = (s - self.cum_s[i]) / (self.seg_end_s(i) - self.cum_s[i]);
        a + (b - a) * t
    }

    fn vertex_tangent(&self, v: usize) -> Vec3 {
        let n = self.points.len();
        let (incoming, outgoing) = if self.closed {
            ((v + n - 1) % n, v % n)
        } else if v == 0 {
            return self.seg_dir(0);
        } else if v >= n - 1 {
            return self.seg_dir(n - 2);
        } else {
            (v - 1, v)
        };
        let avg = self.seg_dir(incoming) + self.seg_dir(outgoing);
        let norm = avg.norm();
        if norm < 1e-12 {
            self.seg_dir(incoming)
        } else {
            avg / norm
        }
    }

    /// Unit tangent; segment direction inside segments, renormalized average
    /// of the adjacent directions on vertices.
    pub fn tangent_at(&self, s: f64) -> Vec3 {
        let s = self.normalize_s(s);
        let i = self.locate(s);
        let tol = 1e-12 * self.length.max(1.0);
        if (s - self.cum_s[i]).abs() <= tol {
            return self.vertex_tangent(i);
        }
        if (self.seg_end_s(i) - s).abs() <= tol {
            return self.vertex_tangent(i + 1);
        }
        self.seg_dir(i)
    }

    /// Curvature vector `dk/ds` by central differencing of tangents over the
    /// curvature window, projected onto the tangent's orthogonal complement.
    pub fn curvature_at(&self, s: f64) -> Vec3 {
        let half = 0.5 * self.curvature_window;
        let (lo, hi) = if self.closed {
            (s - half, s + half)
        } else {
            let s = s.clamp(0.0, self.length);
            ((s - half).max(0.0), (s + half).min(self.length))
        };
        let span = hi - lo;
        if span <= 0.0 {
            return Vec3::zeros();
        }
        let dk = (self.tangent_at(hi) - self.tangent_at(lo)) / span;
        let k = self.tangent_at(s);
        dk - k * k.dot(&dk)
    }

    /// Globally closest point of the polyline to `q`; ties go to the smaller
    /// arc length.
    pub fn project(&self, q: &Vec3) -> CurvePoint {
        let mut best_d2 = f64::INFINITY;
        let mut best = (0usize, 0.0f64, 0.0f64);
        for i in 0..self.segment_count() {
            let (a, b) = self.seg(i);
            let ab = b - a;
            let raw = (q - a).dot(&ab) / ab.norm_squared();
            let t = raw.clamp(0.0, 1.0);
            let d2 = (q - (a + ab * t)).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = (i, t, raw);
            }
        }
        let (i, t, raw) = best;
        let (a, b) = self.seg(i);
        let position = a + (b - a) * t;
        let s = self.cum_s[i] + t * (self.seg_end_s(i) - self.cum_s[i]);
        let tangent = if t > 0.0 && t < 1.0 { self.seg_dir(i) } else { self.tangent_at(s) };
        let clamped = !self.closed
            && ((i == 0 && raw < 0.0) || (i == self.segment_count() - 1 && raw > 1.0));
        CurvePoint {
            position,
            s,
            tangent,
            curvature: self.curvature_at(s),
            segment_index: i,
            clamped,
        }
    }

    /// Distance from `q` to the polyline.
    pub fn distance(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.segment_count() {
            let (a, b) = self.seg(i);
            let ab = b - a;
            let t = ((q - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            best = best.min((q - (a + ab * t)).norm_squared());
        }
        best.sqrt()
    }

    /// Center and radius of a sphere enclosing every point.
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        let c = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / self.points.len() as f64;
        let r = self.points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
        (c, r)
    }

    /// The same curve expressed in another frame: `pose * point`.
    pub fn transformed(&self, pose: &Pose) -> Curve3D {
        Curve3D {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            cum_s: self.cum_s.clone(),
            closed: self.closed,
            length: self.length,
            curvature_window: self.curvature_window,
        }
    }
}

/// Reads a curve from the text format.
pub fn load_curve<R: BufRead>(reader: R) -> Result<Curve3D> {
    let mut points = Vec::new();
    let mut closed = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.eq_ignore_ascii_case("closed") {
            if !points.is_empty() {
                return Err(Error::CurveParse { line: lineno, message: "`closed` must precede the points".into() });
            }
            closed = true;
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::CurveParse {
                line: lineno,
                message: format!("expected 3 values, found {}", fields.len()),
            });
        }
        let mut xyz = [0.0; 3];
        for (slot, tok) in xyz.iter_mut().zip(&fields) {
            *slot = tok.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::CurveParse {
                line: lineno,
                message: format!("not a number: {tok:?}"),
            })?;
        }
        points.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
    }
    if points.len() < 2 {
        return Err(Error::CurveTooShort(points.len()));
    }
    Curve3D::new(points, closed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn circle(radius: f64, n: usize) -> Curve3D {
        let pts = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                Vec3::new(radius * a.cos(), radius * a.sin(), 0.0)
            })
            .collect();
        Curve3D::closed(pts).unwrap()
    }

    #[test]
    fn load_two_points() {
        let c = Curve3D::parse("0 0 0\n1 0 0\n").unwrap();
        assert!(!c.is_closed());
        assert_eq!(c.length(), 1.0);
    }

    #[test]
    fn comments_are_ignored() {
        let plain = Curve3D::parse("0 0 0\n1 0 0\n1 2 0\n").unwrap();
        let commented = Curve3D::parse("# header\n0 0 0 # origin\n\n   # blank\n1 0 0\n1 2 0\n").unwrap();
        assert_eq!(plain.points(), commented.points());
        assert_eq!(plain.length(), commented.length());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match Curve3D::parse("0 0 0\n1 x 0\n") {
            Err(Error::CurveParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match Curve3D::parse("0 0 0\n1 0\n") {
            Err(Error::CurveParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(Curve3D::parse("# nothing\n0 0 0\n"), Err(Error::CurveTooShort(1))));
        assert!(matches!(Curve3D::parse("0 0 0\n0 0 0\n"), Err(Error::DegenerateSegment(0, 1))));
    }

    #[test]
    fn closed_directive() {
        let c = Curve3D::parse("closed\n1 0 0\n0 1 0\n-1 0 0\n0 -1 0\n").unwrap();
        assert!(c.is_closed());
        assert_relative_eq!(c.length(), 4.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert!(Curve3D::parse("1 0 0\nclosed\n0 1 0\n").is_err());
    }

    #[test]
    fn unit_circle_length() {
        let text: String = (0..360)
            .map(|i| {
                let a = (i as f64).to_radians();
                format!("{} {} 0\n", a.cos(), a.sin())
            })
            .collect();
        let c = Curve3D::parse(&format!("closed\n{text}")).unwrap();
        assert!((c.length() - 2.0 * PI).abs() / (2.0 * PI) < 1e-3);
    }

    #[test]
    fn project_perpendicular_foot_and_on_curve() {
        let c = Curve3D::segment(Vec3::zeros(), Vec3::x()).unwrap();
        let p = c.project(&Vec3::new(0.5, 1.0, 0.0));
        assert_relative_eq!(p.position, Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(p.s, 0.5, epsilon = 1e-15);
        assert!(!p.clamped);
        let q = Vec3::new(0.25, 0.0, 0.0);
        assert_eq!(c.project(&q).position, q);
        assert!(c.project(&Vec3::new(2.0, 1.0, 0.0)).clamped);
    }

    #[test]
    fn projection_ties_prefer_smaller_arc_length() {
        // V shape symmetric about the query
        let c = Curve3D::open(vec![Vec3::new(-1.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0)]).unwrap();
        let p = c.project(&Vec3::new(0.0, 5.0, 0.0));
        assert_eq!(p.s, 0.0);
    }

    #[test]
    fn straight_line_tangent_and_curvature() {
        let c = Curve3D::open((0..20).map(|i| Vec3::new(i as f64 * 0.5, 0.0, 0.0)).collect()).unwrap();
        for s in [0.0, 0.25, 3.0, 5.5, 9.5, 12.0] {
            assert_relative_eq!(c.tangent_at(s), Vec3::x(), epsilon = 1e-12);
            assert_eq!(c.curvature_at(s), Vec3::zeros());
        }
    }

    #[test]
    fn circle_tangent_at_start() {
        let c = circle(1.0, 360);
        assert!((c.tangent_at(0.0) - Vec3::y()).norm() < 1e-3);
        assert!((c.tangent_at(0.0) - c.tangent_at(c.length())).norm() < 1e-9);
        assert!((c.curvature_at(0.0) - c.curvature_at(c.length())).norm() < 1e-9);
    }

    #[test]
    fn tangent_is_unit() {
        let c = circle(3.0, 100);
        for i in 0..1000 {
            let s = c.length() * i as f64 / 1000.0;
            assert!((c.tangent_at(s).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_curvature_magnitude() {
        // radius 10 at 0.5 mm spacing: 126 points
        let c = circle(10.0, 126);
        for i in 0..50 {
            let s = c.length() * i as f64 / 50.0;
            let k = c.curvature_at(s);
            assert!((k.norm() - 0.1).abs() < 0.005, "s={s} |C|={}", k.norm());
            assert!(k.dot(&c.tangent_at(s)).abs() < 1e-6);
            // points to the centre
            assert!(k.dot(&-c.point_at(s)) > 0.0);
        }
    }

    #[test]
    fn transformed_preserves_lengths() {
        let c = circle(2.0, 40);
        let pose = Pose::new(crate::geometry::exp_so3(&Vec3::new(0.3, 0.2, 0.1)), Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let t = c.transformed(&pose);
        assert_relative_eq!(t.length(), c.length(), epsilon = 1e-12);
        let q = Vec3::new(0.5, 0.1, 0.2);
        assert_relative_eq!(t.distance(&pose.transform_point(&q)), c.distance(&q), epsilon = 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let c = circle(2.0, 12);
        let back = Curve3D::parse(&c.to_text(&["generated".into()])).unwrap();
        assert!(back.is_closed());
        for (a, b) in back.points().iter().zip(c.points()) {
            assert!((a - b).norm() < 1e-11);
        }
    }
}
