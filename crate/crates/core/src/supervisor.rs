//! Three-phase control unit: approach outside the orifice, a transition in
//! which a virtual trocar slides from the path start to the orifice center,
//! and constrained path following inside.

use crate::curve::Curve3D;
use crate::error::{Error, Result};
use crate::geometry::{rotation_to_angle_axis, Mat3, Pose, Twist, Vec3};
use crate::hierarchy::{PriorityStack, Solver};
use crate::tasks::{
    approach_command, mu_obs, pf_error, pf_task, pf_velocity, rcm_error, rcm_task, ucm_error, ucm_task, Gains,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Outside,
    Transition,
    Inside,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Outside => "outside",
            Phase::Transition => "transition",
            Phase::Inside => "inside",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "outside" => Some(Phase::Outside),
            "transition" => Some(Phase::Transition),
            "inside" => Some(Phase::Inside),
            _ => None,
        }
    }
}

/// Constraint applied to the tool body once inside.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintMode {
    /// Free path following; no orifice, starts directly inside.
    None,
    Rcm,
    Ucm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorityOrder {
    ConstraintFirst,
    PathFirst,
}

/// Geometry of one session. Curves are fixed: the tool in the end-effector
/// frame, path and wall in the orifice frame.
#[derive(Clone, Debug)]
pub struct Scene {
    pub w_t_r: Pose,
    /// Initial end-effector pose.
    pub w_t_e: Pose,
    pub tool: Curve3D,
    /// Tip frame in the end-effector frame.
    pub e_t_t: Pose,
    pub path: Curve3D,
    pub wall: Option<Curve3D>,
    /// Distance of the approach target before the orifice, along its entry
    /// axis (mm).
    pub approach_offset: f64,
}

impl Scene {
    /// Tip frame at the tool's distal end, z along the final tangent.
    pub fn tip_frame(tool: &Curve3D) -> Pose {
        let z = tool.tangent_at(tool.length());
        let seed = if z.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let x = (seed - z * z.dot(&seed)).normalize();
        let y = z.cross(&x);
        Pose::from_parts_unchecked(Mat3::from_columns(&[x, y, z]), tool.last())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.approach_offset > 0.0) || !self.approach_offset.is_finite() {
            return Err(Error::Config(format!("approach_offset must be > 0, got {}", self.approach_offset)));
        }
        Ok(())
    }

    pub fn o_r_world(&self) -> Vec3 {
        self.w_t_r.translation
    }

    /// Pre-orifice approach target in the world.
    pub fn approach_target(&self) -> Pose {
        self.w_t_r * Pose::from_translation(Vec3::new(0.0, 0.0, -self.approach_offset))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupervisorConfig {
    pub mode: ConstraintMode,
    /// Arc length over which the virtual trocar reaches the orifice center;
    /// `None` uses the distance from the path start to the orifice center.
    pub s_handoff: Option<f64>,
    /// Outside→Transition thresholds (mm, rad).
    pub approach_tol_linear: f64,
    pub approach_tol_angular: f64,
    /// The tip must pass the orifice center by this much along the entry
    /// axis before the inside phase (mm).
    pub pass_margin: f64,
    pub solver: Solver,
}

impl SupervisorConfig {
    pub fn new(mode: ConstraintMode) -> Self {
        Self {
            mode,
            s_handoff: None,
            approach_tol_linear: 0.05,
            approach_tol_angular: 0.01,
            pass_margin: 0.1,
            solver: Solver::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupervisorState {
    pub phase: Phase,
    /// World position of the (virtual) trocar point.
    pub virtual_trocar: Vec3,
    /// Largest path arc length reached so far (mm).
    pub path_progress: f64,
    /// Path progress when the transition started.
    pub transition_start: f64,
    pub constraint_mode: ConstraintMode,
    pub priority_order: PriorityOrder,
    pub steps: u64,
}

/// Everything observed and commanded in one control period. Vectors are in
/// world coordinates; entries that do not apply in a phase are NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub t: f64,
    pub phase: Phase,
    pub pose: Pose,
    /// Command in the end-effector frame.
    pub twist: Twist,
    pub d_pf: Vec3,
    pub d_rcm: Vec3,
    pub d_ucm: Vec3,
    pub d_ucm_norm: f64,
    pub mu_obs: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Filled by the plant side.
    pub clearance: f64,
    pub s_p: f64,
    pub e_app_linear: f64,
    pub e_app_angular: f64,
    pub saturated: bool,
}

pub struct StepOutput {
    pub twist: Twist,
    pub record: LogRecord,
}

fn nan3() -> Vec3 {
    Vec3::repeat(f64::NAN)
}

pub struct Supervisor {
    scene: Scene,
    config: SupervisorConfig,
    gains: Gains,
    state: SupervisorState,
    path_start_world: Vec3,
    s_handoff: f64,
}

impl Supervisor {
    pub fn new(scene: Scene, config: SupervisorConfig, gains: Gains) -> Result<Self> {
        scene.validate()?;
        gains.validate()?;
        if config.mode == ConstraintMode::Ucm && scene.wall.is_none() {
            return Err(Error::Config("UCM mode needs an orifice wall curve".into()));
        }
        let path_start_world = scene.w_t_r.transform_point(&scene.path.first());
        let s_handoff = match config.s_handoff {
            Some(s) if s > 0.0 && s.is_finite() => s,
            Some(s) => return Err(Error::Config(format!("s_handoff must be > 0, got {s}"))),
            None => (scene.o_r_world() - path_start_world).norm(),
        };
        let phase = if config.mode == ConstraintMode::None { Phase::Inside } else { Phase::Outside };
        let state = SupervisorState {
            phase,
            virtual_trocar: path_start_world,
            path_progress: 0.0,
            transition_start: 0.0,
            constraint_mode: config.mode,
            priority_order: PriorityOrder::PathFirst,
            steps: 0,
        };
        Ok(Self { scene, config, gains, state, path_start_world, s_handoff: s_handoff.max(1e-9) })
    }

    pub fn state(&self) -> &SupervisorState {
        &self.state
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn gains(&self) -> &Gains {
        &self.gains
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.config
    }

    pub fn s_handoff(&self) -> f64 {
        self.s_handoff
    }

    /// Interpolation parameter of the virtual trocar in `[0, 1]`.
    pub fn trocar_parameter(&self) -> f64 {
        ((self.state.path_progress - self.state.transition_start) / self.s_handoff).clamp(0.0, 1.0)
    }

    /// Moves the virtual trocar along the segment from the path start to the
    /// orifice center according to the path progress made since the
    /// transition began.
    pub fn advance_virtual_trocar(&mut self) -> Vec3 {
        let a = self.trocar_parameter();
        let o = self.scene.o_r_world();
        self.state.virtual_trocar = self.path_start_world + (o - self.path_start_world) * a;
        self.state.virtual_trocar
    }

    /// One control period: updates the phase from the measured pose and
    /// returns the end-effector twist command.
    pub fn step(&mut self, w_t_e: &Pose, t: f64) -> Result<StepOutput> {
        let out = self.step_inner(w_t_e, t);
        match out {
            Ok(o) => {
                self.state.steps += 1;
                Ok(o)
            }
            Err(e) => Err(Error::Control { phase: self.state.phase, s_p: self.state.path_progress, source: Box::new(e) }),
        }
    }

    fn step_inner(&mut self, w_t_e: &Pose, t: f64) -> Result<StepOutput> {
        let g = self.gains;
        let e_t_w = w_t_e.inverse();
        let r_t_w = self.scene.w_t_r.inverse();
        let w_r_r = self.scene.w_t_r.rotation;
        let e_r_r = e_t_w.rotation * w_r_r;
        let tip_e = self.scene.e_t_t.translation;
        let tip_w = w_t_e.transform_point(&tip_e);

        // path following quantities, path frame then end-effector frame
        let tip_r = r_t_w.transform_point(&tip_w);
        let (d_pf_r, cp) = pf_error(&tip_r, &self.scene.path);
        let pv = pf_velocity(&d_pf_r, &cp, &g);
        if self.state.phase != Phase::Outside {
            self.state.path_progress = self.state.path_progress.max(cp.s);
        }

        let mut record = LogRecord {
            step: self.state.steps,
            t,
            phase: self.state.phase,
            pose: *w_t_e,
            twist: Twist::zero(),
            d_pf: w_r_r * d_pf_r,
            d_rcm: nan3(),
            d_ucm: nan3(),
            d_ucm_norm: f64::NAN,
            mu_obs: f64::NAN,
            alpha: pv.alpha,
            beta: pv.beta,
            clearance: f64::NAN,
            s_p: cp.s,
            e_app_linear: f64::NAN,
            e_app_angular: f64::NAN,
            saturated: false,
        };

        if self.state.phase == Phase::Outside {
            let target = self.scene.approach_target();
            let target_t_t = target.inverse() * *w_t_e * self.scene.e_t_t;
            let aa = rotation_to_angle_axis(&target_t_t.rotation)?;
            record.e_app_linear = target_t_t.translation.norm();
            record.e_app_angular = aa.theta;
            if record.e_app_linear < self.config.approach_tol_linear && aa.theta < self.config.approach_tol_angular {
                self.state.phase = Phase::Transition;
                self.state.path_progress = cp.s;
                self.state.transition_start = cp.s;
            } else {
                let cmd = approach_command(&target_t_t, &self.scene.e_t_t, &g)?;
                let sol = self.config.solver.saturate(cmd);
                record.twist = sol.twist;
                record.saturated = sol.saturated;
                return Ok(StepOutput { twist: sol.twist, record });
            }
        }

        if self.state.phase == Phase::Transition {
            self.advance_virtual_trocar();
            let entry = w_r_r.column(2).into_owned();
            let past = (tip_w - self.scene.o_r_world()).dot(&entry);
            if self.trocar_parameter() >= 1.0 && past > self.config.pass_margin {
                self.state.phase = Phase::Inside;
                self.state.virtual_trocar = self.scene.o_r_world();
            }
        }
        record.phase = self.state.phase;

        let v_t_e = e_r_r * pv.velocity;
        let d_pf_e = e_r_r * d_pf_r;
        let pf = pf_task(&d_pf_e, &tip_e, &v_t_e);

        let stack = match (self.state.phase, self.state.constraint_mode) {
            (_, ConstraintMode::None) => {
                self.state.priority_order = PriorityOrder::PathFirst;
                PriorityStack::single(pf)
            }
            (Phase::Transition, _) => {
                self.state.priority_order = PriorityOrder::PathFirst;
                let o_e = e_t_w.transform_point(&self.state.virtual_trocar);
                let (d_rcm, tp) = rcm_error(&self.scene.tool, &o_e);
                record.d_rcm = w_t_e.rotation * d_rcm;
                PriorityStack::two(pf, rcm_task(&d_rcm, &tp, &o_e, &g)?)
            }
            (_, ConstraintMode::Rcm) => {
                self.state.priority_order = PriorityOrder::ConstraintFirst;
                let o_e = e_t_w.transform_point(&self.scene.o_r_world());
                let (d_rcm, tp) = rcm_error(&self.scene.tool, &o_e);
                record.d_rcm = w_t_e.rotation * d_rcm;
                PriorityStack::two(rcm_task(&d_rcm, &tp, &o_e, &g)?, pf)
            }
            (_, ConstraintMode::Ucm) => {
                self.state.priority_order = PriorityOrder::PathFirst;
                let o_e = e_t_w.transform_point(&self.scene.o_r_world());
                let (d_rcm, tp) = rcm_error(&self.scene.tool, &o_e);
                let wall = self.scene.wall.as_ref().expect("checked at construction");
                let wall_e = wall.transformed(&(e_t_w * self.scene.w_t_r));
                let (d_ucm, hp) = ucm_error(&tp.position, &wall_e);
                record.d_rcm = w_t_e.rotation * d_rcm;
                record.d_ucm = w_t_e.rotation * d_ucm;
                record.d_ucm_norm = d_ucm.norm();
                record.mu_obs = mu_obs(&d_ucm, &g);
                PriorityStack::two(pf, ucm_task(&d_ucm, &hp, &tp, &d_rcm, &o_e, &g)?)
            }
        };
        let sol = self.config.solver.solve(&stack);
        if !sol.twist.is_finite() {
            return Err(Error::NonFinite("command twist"));
        }
        record.twist = sol.twist;
        record.saturated = sol.saturated;
        Ok(StepOutput { twist: sol.twist, record })
    }
}
