//! Kinematic control of a rigid surgical tool through an incision orifice:
//! tool-tip path following under a remote center of motion (RCM) or a
//! unilateral orifice-wall constraint (UCM), stacked with a two-level
//! task-priority solver, plus a deterministic plant simulator.

pub mod curve;
pub mod error;
pub mod geometry;
pub mod hierarchy;
pub mod netlink;
pub mod pathgen;
pub mod plant;
pub mod scenario;
pub mod supervisor;
pub mod tasks;

pub use curve::{Curve3D, CurvePoint};
pub use error::{Error, Result};
pub use geometry::{AngleAxis, Mat3, Mat6, MatMN, Pose, Twist, Vec3};
