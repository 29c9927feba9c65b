//! Analytic reference paths, resampled at uniform arc-length spacing.
//!
//! All paths live in the orifice frame: the entry axis is +z and the orifice
//! center is the origin, so a path that starts at `z = -lead` begins outside.

use std::fmt;
use std::str::FromStr;

use crate::curve::Curve3D;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathKind {
    Spiral,
    Drill,
    Mastoid,
    Circle,
    Line,
}

impl PathKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PathKind::Spiral => "spiral",
            PathKind::Drill => "drill",
            PathKind::Mastoid => "mastoid",
            PathKind::Circle => "circle",
            PathKind::Line => "line",
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "spiral" => PathKind::Spiral,
            "drill" => PathKind::Drill,
            "mastoid" => PathKind::Mastoid,
            "circle" => PathKind::Circle,
            "line" => PathKind::Line,
            other => return Err(Error::Config(format!("unknown path kind {other:?}"))),
        })
    }
}

/// Generator parameters (mm, turns). Not every kind reads every field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathParams {
    pub radius: f64,
    /// Advance along z per turn.
    pub pitch: f64,
    pub turns: f64,
    /// Line length, or depth of the straight portion below the orifice.
    pub length: f64,
    /// Start of the path before the orifice along -z.
    pub lead: f64,
    /// Turns over which the spiral radius grows from zero.
    pub ramp_turns: f64,
    pub spacing: f64,
}

impl Default for PathParams {
    fn default() -> Self {
        Self { radius: 5.0, pitch: 2.0, turns: 2.0, length: 10.0, lead: 0.0, ramp_turns: 1.0, spacing: 0.1 }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Resamples `f` on `[0, u_end]` at arc-length `spacing`. The final point is
/// always `f(u_end)`.
fn resample(f: impl Fn(f64) -> Vec3, u_end: f64, approx_len: f64, spacing: f64) -> Vec<Vec3> {
    let n = ((approx_len / spacing).ceil() as usize).max(1) * 64;
    let dense: Vec<Vec3> = (0..=n).map(|i| f(u_end * i as f64 / n as f64)).collect();
    let mut out = vec![dense[0]];
    let mut next = spacing;
    let mut acc = 0.0;
    for w in dense.windows(2) {
        let seg = (w[1] - w[0]).norm();
        while seg > 0.0 && acc + seg >= next {
            let a = (next - acc) / seg;
            out.push(w[0] + (w[1] - w[0]) * a);
            next += spacing;
        }
        acc += seg;
    }
    let end = dense[n];
    let last = *out.last().expect("nonempty");
    if (end - last).norm() > 1e-3 * spacing {
        out.push(end);
    } else {
        *out.last_mut().expect("nonempty") = end;
    }
    out
}

/// Builds a path and the header lines describing its generator.
pub fn generate(kind: PathKind, p: &PathParams) -> Result<(Curve3D, Vec<String>)> {
    positive("spacing", p.spacing)?;
    if !(p.lead >= 0.0 && p.lead.is_finite()) {
        return Err(Error::Config(format!("lead must be >= 0, got {}", p.lead)));
    }
    let tau = std::f64::consts::TAU;
    let z0 = -p.lead;
    let mut header = vec![format!("generator: {kind}"), format!("spacing: {}", p.spacing)];
    let curve = match kind {
        PathKind::Line => {
            positive("length", p.length)?;
            header.push(format!("x = 0, y = 0, z = {z0} + u, u in [0, {}]", p.length));
            let pts = resample(|u| Vec3::new(0.0, 0.0, z0 + u), p.length, p.length, p.spacing);
            Curve3D::open(pts)?
        }
        PathKind::Circle => {
            positive("radius", p.radius)?;
            let n = ((tau * p.radius / p.spacing).ceil() as usize).max(3);
            header.push(format!("closed, x = {r} cos(u), y = {r} sin(u), z = 0, {n} points", r = p.radius));
            let pts = (0..n)
                .map(|i| {
                    let u = tau * i as f64 / n as f64;
                    Vec3::new(p.radius * u.cos(), p.radius * u.sin(), 0.0)
                })
                .collect();
            Curve3D::closed(pts)?
        }
        PathKind::Spiral => {
            positive("radius", p.radius)?;
            positive("pitch", p.pitch)?;
            positive("turns", p.turns)?;
            header.push(format!(
                "helix: x = {r} cos(u), y = {r} sin(u), z = {z0} + {c} u / 2pi, u in [0, 2pi * {t}]",
                r = p.radius,
                c = p.pitch,
                t = p.turns
            ));
            let u_end = tau * p.turns;
            let len = p.turns * (tau * p.radius).hypot(p.pitch);
            let pts = resample(
                |u| Vec3::new(p.radius * u.cos(), p.radius * u.sin(), z0 + p.pitch * u / tau),
                u_end,
                len,
                p.spacing,
            );
            Curve3D::open(pts)?
        }
        PathKind::Drill | PathKind::Mastoid => {
            positive("radius", p.radius)?;
            positive("pitch", p.pitch)?;
            positive("turns", p.turns)?;
            positive("length", p.length)?;
            let straight = p.lead + p.length;
            let theta_end = tau * p.turns;
            positive("ramp_turns", p.ramp_turns)?;
            // the drill keeps its full radius after the ramp, the mastoid
            // cavity widens over every turn
            let ramp = if kind == PathKind::Drill { tau * p.ramp_turns.min(p.turns) } else { theta_end };
            header.push(format!("straight: x = y = 0, z from {z0} to {}", p.length));
            header.push(format!(
                "spiral: r(u) = {r} smoothstep(u / {ramp}), x = r cos(u), y = r sin(u), z = {d} + {c} u / 2pi, u in [0, {theta_end}]",
                r = p.radius,
                d = p.length,
                c = p.pitch
            ));
            let f = |u: f64| {
                if u <= straight {
                    Vec3::new(0.0, 0.0, z0 + u)
                } else {
                    let th = u - straight;
                    let r = p.radius * smoothstep(th / ramp);
                    Vec3::new(r * th.cos(), r * th.sin(), p.length + p.pitch * th / tau)
                }
            };
            let len = straight + p.turns * (tau * p.radius).hypot(p.pitch);
            Curve3D::open(resample(f, straight + theta_end, len, p.spacing))?
        }
    };
    Ok((curve, header))
}
