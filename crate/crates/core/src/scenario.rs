//! Scenario runner: scene construction, the control loop against a plant
//! link, CSV logs, per-phase statistics and the gain sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::curve::Curve3D;
use crate::error::{Error, Result};
use crate::geometry::{exp_so3, Mat3, Pose, Vec3};
use crate::netlink::{InProcessLink, PlantLink, TcpLink};
use crate::pathgen::{generate, PathKind, PathParams};
use crate::plant::{clearance, Plant, PoseNoise};
use crate::supervisor::{ConstraintMode, LogRecord, Phase, Scene, Supervisor, SupervisorConfig};
use crate::tasks::Gains;

/// Environment variable that redirects every output file into a directory.
pub const OUTPUT_DIR_ENV: &str = "SAFEPATH_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    PfOnly,
    RcmDrill,
    UcmMastoid,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::PfOnly => "pf-only",
            ScenarioKind::RcmDrill => "rcm-drill",
            ScenarioKind::UcmMastoid => "ucm-mastoid",
        }
    }

    pub fn mode(self) -> ConstraintMode {
        match self {
            ScenarioKind::PfOnly => ConstraintMode::None,
            ScenarioKind::RcmDrill => ConstraintMode::Rcm,
            ScenarioKind::UcmMastoid => ConstraintMode::Ucm,
        }
    }

    /// Gains used when a config does not override them.
    pub fn default_gains(self) -> Gains {
        match self {
            ScenarioKind::UcmMastoid => Gains { lambda: 0.8, gamma: 0.8, ..Gains::default() },
            _ => Gains::default(),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pf-only" => ScenarioKind::PfOnly,
            "rcm-drill" => ScenarioKind::RcmDrill,
            "ucm-mastoid" => ScenarioKind::UcmMastoid,
            other => return Err(Error::Config(format!("unknown scenario {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    /// `host:port` of a running plant server.
    Tcp(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub gains: Gains,
    /// Curve files replacing the built-in scene geometry.
    pub tool: Option<PathBuf>,
    pub path: Option<PathBuf>,
    pub wall: Option<PathBuf>,
    /// Simulated seconds; `None` runs to the path end.
    pub duration: Option<f64>,
    pub max_steps: u64,
    /// Fraction of the path length that ends the run.
    pub stop_fraction: f64,
    pub seed: u64,
    pub noise_linear: f64,
    pub noise_angular: f64,
    pub output: Option<PathBuf>,
    pub transport: Transport,
    pub approach_offset: f64,
    pub s_handoff: Option<f64>,
    /// Start perturbation of the tip frame: translation (mm) and rotation
    /// vector (rad), in the nominal start frame.
    pub start_offset: Vec3,
    pub start_rotation: Vec3,
}

impl RunConfig {
    pub fn new(scenario: ScenarioKind) -> Self {
        let (start_offset, start_rotation) = match scenario {
            ScenarioKind::PfOnly => (Vec3::new(0.8, 0.6, 0.0), Vec3::zeros()),
            _ => (Vec3::new(4.0, -3.0, -6.0), Vec3::new(0.15, -0.2, 0.1)),
        };
        Self {
            scenario,
            gains: scenario.default_gains(),
            tool: None,
            path: None,
            wall: None,
            duration: None,
            max_steps: 1_000_000,
            stop_fraction: 0.995,
            seed: 0,
            noise_linear: 0.0,
            noise_angular: 0.0,
            output: None,
            transport: Transport::InProcess,
            approach_offset: 5.0,
            s_handoff: None,
            start_offset,
            start_rotation,
        }
    }

    /// Parses flat `key = value` text. `#` starts a comment. The scenario
    /// key, if present, is applied first so gain defaults follow it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        let mut order = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
            let k = k.trim().to_string();
            if pairs.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            order.push(k);
        }
        let scenario = match pairs.get("scenario") {
            Some(s) => s.parse()?,
            None => ScenarioKind::PfOnly,
        };
        let mut cfg = RunConfig::new(scenario);
        for k in order.iter().filter(|k| *k != "scenario") {
            cfg.set(k, &pairs[k])?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value.parse::<f64>().map_err(|_| Error::Config(format!("{key}: not a number: {value:?}")))
        };
        let triple = || -> Result<Vec3> {
            let v: Vec<f64> = value
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("{key}: expected x,y,z, got {value:?}")))?;
            match v.as_slice() {
                [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
                _ => Err(Error::Config(format!("{key}: expected 3 values, got {}", v.len()))),
            }
        };
        let g = &mut self.gains;
        match key {
            "scenario" => {
                // gains edited away from the old scenario's defaults survive
                let kind: ScenarioKind = value.parse()?;
                let gains = if self.gains == self.scenario.default_gains() { kind.default_gains() } else { self.gains };
                *self = RunConfig { gains, ..RunConfig::new(kind) };
            }
            "lambda" => g.lambda = num()?,
            "gamma" => g.gamma = num()?,
            "v_tis" => g.v_tis = num()?,
            "beta_prime" => g.beta_prime = num()?,
            "gamma_c" => g.gamma_c = num()?,
            "sigma_max" => g.sigma_max = num()?,
            "sigma_min" => g.sigma_min = num()?,
            "sigma_step" => g.sigma_step = num()?,
            "d_min" => g.d_min = num()?,
            "d_max" => g.d_max = num()?,
            "t_e" => g.t_e = num()?,
            "tool" => self.tool = Some(value.into()),
            "path" => self.path = Some(value.into()),
            "wall" => self.wall = Some(value.into()),
            "duration" => self.duration = Some(num()?),
            "max_steps" => {
                self.max_steps = value.parse().map_err(|_| Error::Config(format!("max_steps: {value:?}")))?
            }
            "stop_fraction" => self.stop_fraction = num()?,
            "seed" => self.seed = value.parse().map_err(|_| Error::Config(format!("seed: {value:?}")))?,
            "noise_linear" => self.noise_linear = num()?,
            "noise_angular" => self.noise_angular = num()?,
            "output" => self.output = Some(value.into()),
            "transport" => {
                self.transport = match value {
                    "in-process" => Transport::InProcess,
                    v => Transport::Tcp(v.strip_prefix("tcp://").unwrap_or(v).to_string()),
                }
            }
            "approach_offset" => self.approach_offset = num()?,
            "s_handoff" => self.s_handoff = Some(num()?),
            "start_offset" => self.start_offset = triple()?,
            "start_rotation" => self.start_rotation = triple()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        for (name, p) in [("tool", &self.tool), ("path", &self.path), ("wall", &self.wall)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("{name} file {} does not exist", p.display())));
                }
            }
        }
        if let Some(d) = self.duration {
            if !(d > 0.0) {
                return Err(Error::Config(format!("duration must be > 0, got {d}")));
            }
        }
        if !(self.stop_fraction > 0.0 && self.stop_fraction <= 1.0) {
            return Err(Error::Config(format!("stop_fraction must be in (0, 1], got {}", self.stop_fraction)));
        }
        if !(self.noise_linear >= 0.0 && self.noise_angular >= 0.0) {
            return Err(Error::Config("noise amplitudes must be >= 0".into()));
        }
        Ok(())
    }

    /// Output file after applying the directory override.
    pub fn resolved_output(&self) -> Option<PathBuf> {
        let dir = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty());
        match (&self.output, dir) {
            (Some(p), Some(d)) => Some(Path::new(&d).join(p.file_name().unwrap_or(p.as_os_str()))),
            (None, Some(d)) => Some(Path::new(&d).join(format!("{}.csv", self.scenario))),
            (p, None) => p.clone(),
        }
    }

    /// Lines that identify the run in the CSV header. The transport is left
    /// out so in-process and loopback logs are byte-identical.
    fn describe(&self) -> String {
        let g = &self.gains;
        format!(
            "scenario={} lambda={} gamma={} v_tis={} beta_prime={} gamma_c={} sigma_max={} sigma_min={} sigma_step={} d_min={} d_max={} t_e={} seed={} noise_linear={} noise_angular={}",
            self.scenario, g.lambda, g.gamma, g.v_tis, g.beta_prime, g.gamma_c, g.sigma_max, g.sigma_min,
            g.sigma_step, g.d_min, g.d_max, g.t_e, self.seed, self.noise_linear, self.noise_angular
        )
    }
}

// ---- built-in scenes -------------------------------------------------------------

fn orifice_pose() -> Pose {
    Pose::from_parts_unchecked(exp_so3(&Vec3::new(0.3, -0.2, 0.4)), Vec3::new(20.0, -10.0, 50.0))
}

pub fn straight_tool() -> Curve3D {
    Curve3D::segment(Vec3::zeros(), Vec3::new(0.0, 0.0, 60.0)).expect("distinct points")
}

/// Straight shaft ending in a circular bend: radius 20 mm over 25°.
pub fn curved_tool() -> Curve3D {
    let mut pts: Vec<Vec3> = (0..=40).map(|i| Vec3::new(0.0, 0.0, i as f64)).collect();
    let (radius, bend) = (20.0, 25f64.to_radians());
    let n = 30;
    for i in 1..=n {
        let a = bend * i as f64 / n as f64;
        pts.push(Vec3::new(radius * (1.0 - a.cos()), 0.0, 40.0 + radius * a.sin()));
    }
    Curve3D::open(pts).expect("distinct points")
}

/// Elliptical orifice rim, semi-axes 4 and 3 mm, in the orifice plane.
pub fn ellipse_wall() -> Curve3D {
    let n = 240;
    Curve3D::closed(
        (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                Vec3::new(4.0 * a.cos(), 3.0 * a.sin(), 0.0)
            })
            .collect(),
    )
    .expect("distinct points")
}

pub fn default_path(kind: ScenarioKind, approach_offset: f64) -> Result<Curve3D> {
    let lead = 2.0 * approach_offset;
    let (k, p) = match kind {
        ScenarioKind::PfOnly => (PathKind::Spiral, PathParams { radius: 5.0, pitch: 2.0, turns: 2.0, ..Default::default() }),
        ScenarioKind::RcmDrill => (
            PathKind::Drill,
            PathParams { radius: 6.0, pitch: 2.0, turns: 3.0, length: 10.0, lead, ramp_turns: 2.0, ..Default::default() },
        ),
        ScenarioKind::UcmMastoid => (
            PathKind::Mastoid,
            PathParams { radius: 6.0, pitch: 1.0, turns: 1.5, length: 6.0, lead, ..Default::default() },
        ),
    };
    Ok(generate(k, &p)?.0)
}

/// Frame at the start of `path` with z along its tangent.
fn path_start_frame(path: &Curve3D) -> Pose {
    let z = path.tangent_at(0.0);
    let seed = if z.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let x = (seed - z * z.dot(&seed)).normalize();
    Pose::from_parts_unchecked(Mat3::from_columns(&[x, z.cross(&x), z]), path.first())
}

pub fn build_scene(cfg: &RunConfig) -> Result<Scene> {
    cfg.validate()?;
    let tool = match &cfg.tool {
        Some(p) => Curve3D::from_file(p)?,
        None if cfg.scenario == ScenarioKind::UcmMastoid => curved_tool(),
        None => straight_tool(),
    };
    let path = match &cfg.path {
        Some(p) => Curve3D::from_file(p)?,
        None => default_path(cfg.scenario, cfg.approach_offset)?,
    };
    let wall = match (&cfg.wall, cfg.scenario) {
        (Some(p), _) => Some(Curve3D::from_file(p)?),
        (None, ScenarioKind::UcmMastoid) => Some(ellipse_wall()),
        _ => None,
    };
    let e_t_t = Scene::tip_frame(&tool);
    let (w_t_r, nominal) = match cfg.scenario {
        ScenarioKind::PfOnly => (Pose::identity(), path_start_frame(&path)),
        _ => {
            let w_t_r = orifice_pose();
            (w_t_r, w_t_r * Pose::from_translation(Vec3::new(0.0, 0.0, -cfg.approach_offset)))
        }
    };
    let perturb = Pose::from_parts_unchecked(exp_so3(&cfg.start_rotation), cfg.start_offset);
    let w_t_e = nominal * perturb * e_t_t.inverse();
    let scene = Scene { w_t_r, w_t_e, tool, e_t_t, path, wall, approach_offset: cfg.approach_offset };
    scene.validate()?;
    Ok(scene)
}

// ---- statistics ------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    pub max: f64,
}

impl ChannelStats {
    /// Statistics over the finite entries; NaN everywhere if there are none.
    pub fn from_values(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        let n = v.len();
        if n == 0 {
            return Self { count: 0, mean: f64::NAN, std: f64::NAN, median: f64::NAN, max: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        v.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Self { count: n, mean, std, median, max: v[n - 1] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub steps: usize,
    pub d_pf: ChannelStats,
    pub d_rcm: ChannelStats,
    pub d_ucm: ChannelStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub scenario: ScenarioKind,
    pub steps: usize,
    pub sim_time: f64,
    pub wall_clock_s: f64,
    /// The stop condition was met without a failure.
    pub completed: bool,
    pub path_length: f64,
    pub final_progress: f64,
    pub phases: Vec<PhaseSummary>,
    pub min_d_ucm: f64,
    pub min_clearance: f64,
    pub saturated_steps: usize,
    pub failure: Option<String>,
}

fn norms(records: &[&LogRecord], f: impl Fn(&LogRecord) -> Vec3) -> Vec<f64> {
    records.iter().map(|r| f(r).norm()).collect()
}

fn finite_min(it: impl Iterator<Item = f64>) -> f64 {
    it.filter(|x| x.is_finite()).fold(f64::NAN, |a, b| if a.is_nan() { b } else { a.min(b) })
}

impl RunSummary {
    pub fn from_records(scenario: ScenarioKind, records: &[LogRecord], path_length: f64) -> Self {
        let phases = [Phase::Outside, Phase::Transition, Phase::Inside]
            .into_iter()
            .filter_map(|ph| {
                let rs: Vec<&LogRecord> = records.iter().filter(|r| r.phase == ph).collect();
                (!rs.is_empty()).then(|| PhaseSummary {
                    phase: ph,
                    steps: rs.len(),
                    d_pf: ChannelStats::from_values(&norms(&rs, |r| r.d_pf)),
                    d_rcm: ChannelStats::from_values(&norms(&rs, |r| r.d_rcm)),
                    d_ucm: ChannelStats::from_values(&norms(&rs, |r| r.d_ucm)),
                })
            })
            .collect();
        Self {
            scenario,
            steps: records.len(),
            sim_time: records.last().map_or(0.0, |r| r.t),
            wall_clock_s: 0.0,
            completed: false,
            path_length,
            final_progress: records.iter().filter(|r| r.phase != Phase::Outside).map(|r| r.s_p).fold(0.0, f64::max),
            phases,
            min_d_ucm: finite_min(records.iter().map(|r| r.d_ucm_norm)),
            min_clearance: finite_min(records.iter().map(|r| r.clearance)),
            saturated_steps: records.iter().filter(|r| r.saturated).count(),
            failure: None,
        }
    }

    pub fn phase(&self, p: Phase) -> Option<&PhaseSummary> {
        self.phases.iter().find(|s| s.phase == p)
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv("scenario", self.scenario.to_string());
        kv("steps", self.steps.to_string());
        kv("sim_time", self.sim_time.to_string());
        kv("wall_clock_s", format!("{:.3}", self.wall_clock_s));
        kv("completed", self.completed.to_string());
        kv("path_length", self.path_length.to_string());
        kv("final_progress", self.final_progress.to_string());
        kv("min_d_ucm", self.min_d_ucm.to_string());
        kv("min_clearance", self.min_clearance.to_string());
        kv("saturated_steps", self.saturated_steps.to_string());
        if let Some(f) = &self.failure {
            kv("failure", f.clone());
        }
        for ph in &self.phases {
            let p = ph.phase.as_str();
            kv(&format!("{p}.steps"), ph.steps.to_string());
            for (name, s) in [("d_pf", ph.d_pf), ("d_rcm", ph.d_rcm), ("d_ucm", ph.d_ucm)] {
                if s.count == 0 {
                    continue;
                }
                kv(&format!("{p}.{name}.mean"), s.mean.to_string());
                kv(&format!("{p}.{name}.std"), s.std.to_string());
                kv(&format!("{p}.{name}.median"), s.median.to_string());
                kv(&format!("{p}.{name}.max"), s.max.to_string());
            }
        }
        out
    }
}

// ---- CSV -------------------------------------------------------------------------

pub const CSV_COLUMNS: [&str; 36] = [
    "step", "t", "phase", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz", "vx",
    "vy", "vz", "wx", "wy", "wz", "d_pf_x", "d_pf_y", "d_pf_z", "d_rcm_x", "d_rcm_y", "d_rcm_z", "d_ucm_x",
    "d_ucm_y", "d_ucm_z", "d_ucm_norm", "mu_obs", "alpha", "beta", "clearance", "s_p",
];
/// Columns after the main block.
pub const CSV_EXTRA_COLUMNS: [&str; 3] = ["e_app_linear", "e_app_angular", "saturated"];

pub fn record_fields(r: &LogRecord) -> Vec<String> {
    let mut f = vec![r.step.to_string(), r.t.to_string(), r.phase.as_str().to_string()];
    f.extend(r.pose.to_row_major().iter().map(|x| x.to_string()));
    f.extend(r.twist.to_vector().iter().map(|x| x.to_string()));
    for v in [r.d_pf, r.d_rcm, r.d_ucm] {
        f.extend(v.iter().map(|x| x.to_string()));
    }
    for x in [r.d_ucm_norm, r.mu_obs, r.alpha, r.beta, r.clearance, r.s_p, r.e_app_linear, r.e_app_angular] {
        f.push(x.to_string());
    }
    f.push(u8::from(r.saturated).to_string());
    f
}

/// CSV log: one `#` line with the creation time, one describing the run,
/// then the column header and a row per control period.
pub struct CsvLog {
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvLog {
    pub fn create(path: &Path, cfg: &RunConfig) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        writeln!(out, "# created unix_time={stamp:.3}")?;
        writeln!(out, "# {}", cfg.describe())?;
        let mut writer = csv::Writer::from_writer(out);
        let header: Vec<&str> = CSV_COLUMNS.iter().chain(CSV_EXTRA_COLUMNS.iter()).copied().collect();
        writer.write_record(&header).map_err(csv_err)?;
        Ok(Self { writer })
    }

    pub fn write(&mut self, r: &LogRecord) -> Result<()> {
        self.writer.write_record(record_fields(r)).map_err(csv_err)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

// ---- control loop ----------------------------------------------------------------

pub struct RunOutput {
    pub records: Vec<LogRecord>,
    pub summary: RunSummary,
    /// Control failure that stopped the run early; the log holds every step
    /// up to it.
    pub failure: Option<Error>,
}

/// Runs the supervisor against `link` until the stop condition, handing
/// each record to `sink` as soon as it is complete.
pub fn simulate(
    cfg: &RunConfig,
    scene: Scene,
    link: &mut dyn PlantLink,
    sink: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<RunOutput> {
    let started = Instant::now();
    let g = cfg.gains.validated()?;
    let sup_cfg = SupervisorConfig { s_handoff: cfg.s_handoff, ..SupervisorConfig::new(cfg.scenario.mode()) };
    let path_length = scene.path.length();
    let wall_w = scene.wall.as_ref().map(|w| w.transformed(&scene.w_t_r));
    let tool = scene.tool.clone();
    let w_t_r = scene.w_t_r;
    let mut sup = Supervisor::new(scene, sup_cfg, g)?;
    let mut records = Vec::new();
    let mut failure = None;

    link.start(g.t_e)?;
    for k in 0..cfg.max_steps {
        let (w_t_e, link_w_t_r) = link.poses()?;
        if k == 0 && link_w_t_r != w_t_r {
            return Err(Error::Config("plant reports a different orifice pose than the scene".into()));
        }
        let t = k as f64 * g.t_e;
        let out = match sup.step(&w_t_e, t) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let mut rec = out.record;
        if let Some(wall) = &wall_w {
            rec.clearance = clearance(&tool.transformed(&w_t_e), wall);
        }
        sink(&rec)?;
        records.push(rec);
        let st = sup.state();
        let reached_end = st.phase == Phase::Inside && st.path_progress >= cfg.stop_fraction * path_length;
        let timed_out = cfg.duration.is_some_and(|d| t + 0.5 * g.t_e >= d);
        if reached_end || timed_out {
            break;
        }
        link.command(&out.twist)?;
    }
    link.finish()?;

    let mut summary = RunSummary::from_records(cfg.scenario, &records, path_length);
    summary.wall_clock_s = started.elapsed().as_secs_f64();
    summary.completed = failure.is_none();
    summary.failure = failure.as_ref().map(|e| e.to_string());
    Ok(RunOutput { records, summary, failure })
}

/// Builds the scene, connects the configured transport and writes the CSV
/// log if an output path is set. A control failure is reported in the
/// output after the partial log has been flushed.
pub fn run_scenario(cfg: &RunConfig) -> Result<RunOutput> {
    let scene = build_scene(cfg)?;
    let mut log = match cfg.resolved_output() {
        Some(p) => Some(CsvLog::create(&p, cfg)?),
        None => None,
    };
    let mut sink = |r: &LogRecord| match &mut log {
        Some(l) => l.write(r),
        None => Ok(()),
    };
    let out = match &cfg.transport {
        Transport::InProcess => {
            let mut plant = Plant::new(scene.w_t_e, cfg.gains.t_e);
            if cfg.noise_linear > 0.0 || cfg.noise_angular > 0.0 {
                plant = plant.with_noise(PoseNoise::new(cfg.noise_linear, cfg.noise_angular, cfg.seed));
            }
            let mut link = InProcessLink::new(plant, scene.w_t_r);
            simulate(cfg, scene, &mut link, &mut sink)
        }
        Transport::Tcp(addr) => {
            let mut link = TcpLink::connect(addr.as_str())?;
            simulate(cfg, scene, &mut link, &mut sink)
        }
    };
    if let Some(l) = &mut log {
        l.flush()?;
    }
    out
}

/// The plant a server should host for `cfg`.
pub fn plant_spec(cfg: &RunConfig) -> Result<crate::netlink::PlantSpec> {
    let scene = build_scene(cfg)?;
    let noise = (cfg.noise_linear > 0.0 || cfg.noise_angular > 0.0).then_some((
        cfg.noise_linear,
        cfg.noise_angular,
        cfg.seed,
    ));
    Ok(crate::netlink::PlantSpec { w_t_e: scene.w_t_e, w_t_r: scene.w_t_r, noise })
}

// ---- gain sweep ------------------------------------------------------------------

/// Fraction of the initial path error below which the response counts as
/// settled.
pub const SETTLE_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub beta_prime: f64,
    pub gamma_c: f64,
    /// `β′ / v_tis` (1/mm).
    pub ratio: f64,
    /// Mean ‖d_pf‖ over the second half of the run (mm).
    pub steady_state: f64,
    pub overshoots: usize,
    /// First time ‖d_pf‖ drops below the settle fraction of its initial value.
    pub settle_time: Option<f64>,
    pub summary: RunSummary,
}

/// Path-normal component of the path error: the signed distance of the tip
/// from the path along the direction it started from, expressed in the
/// moving frame (tangent, normal, binormal) of the path at the foot.
fn frame_components(path: &Curve3D, r: &LogRecord) -> [f64; 3] {
    let k = path.tangent_at(r.s_p);
    let c = path.curvature_at(r.s_p);
    let n = if c.norm() > 1e-9 {
        c.normalize()
    } else {
        let seed = if k.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        (seed - k * k.dot(&seed)).normalize()
    };
    let b = k.cross(&n);
    [r.d_pf.dot(&k), r.d_pf.dot(&n), r.d_pf.dot(&b)]
}

/// Counts sign changes of the normal and binormal error components after the
/// settle time, each with a hysteresis band of `band` mm.
pub fn count_overshoots(path: &Curve3D, records: &[LogRecord], settle_index: usize, band: f64) -> usize {
    let mut total = 0;
    for axis in [1usize, 2] {
        let mut sign = 0i8;
        for r in &records[settle_index..] {
            let c = frame_components(path, r)[axis];
            let s = if c > band {
                1
            } else if c < -band {
                -1
            } else {
                0
            };
            if s != 0 {
                if sign != 0 && s != sign {
                    total += 1;
                }
                sign = s;
            }
        }
    }
    total
}

/// Scores one pf-only run.
pub fn score_run(cfg: &RunConfig, path: &Curve3D, out: RunOutput) -> SweepCell {
    let recs = &out.records;
    let initial = recs.first().map_or(0.0, |r| r.d_pf.norm());
    let settle_index = recs.iter().position(|r| r.d_pf.norm() < SETTLE_FRACTION * initial);
    let half = recs.len() / 2;
    let tail = &recs[half..];
    let steady_state = tail.iter().map(|r| r.d_pf.norm()).sum::<f64>() / tail.len().max(1) as f64;
    let band = 0.1 * SETTLE_FRACTION * initial;
    SweepCell {
        beta_prime: cfg.gains.beta_prime,
        gamma_c: cfg.gains.gamma_c,
        ratio: cfg.gains.beta_prime / cfg.gains.v_tis,
        steady_state,
        overshoots: settle_index.map_or(0, |i| count_overshoots(path, recs, i, band)),
        settle_time: settle_index.map(|i| recs[i].t),
        summary: out.summary,
    }
}

/// One pf-only run per `(β′, γ_c)` cell, in parallel. Rows come back in grid
/// order, β′ outermost. With an output path, each cell writes its own log.
pub fn gain_sweep(base: &RunConfig, beta_primes: &[f64], gamma_cs: &[f64]) -> Result<Vec<SweepCell>> {
    if base.scenario != ScenarioKind::PfOnly {
        return Err(Error::Config("gain sweeps run on the pf-only scenario".into()));
    }
    let path = build_scene(base)?.path;
    let cells: Vec<RunConfig> = beta_primes
        .iter()
        .flat_map(|&b| gamma_cs.iter().map(move |&c| (b, c)))
        .map(|(b, c)| {
            let mut cfg = base.clone();
            cfg.gains.beta_prime = b;
            cfg.gains.gamma_c = c;
            cfg.output = base.output.as_ref().map(|p| {
                let stem = p.file_stem().map_or("sweep".into(), |s| s.to_string_lossy().into_owned());
                p.with_file_name(format!("{stem}_b{b}_c{c}.csv"))
            });
            cfg
        })
        .collect();
    let results: Vec<Result<SweepCell>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .map(|cfg| {
                let path = &path;
                scope.spawn(move || -> Result<SweepCell> {
                    let out = run_scenario(cfg)?;
                    if let Some(e) = out.failure {
                        return Err(e);
                    }
                    Ok(score_run(cfg, path, out))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep cell panicked")).collect()
    });
    results.into_iter().collect()
}

/// Sweep table as CSV text, preceded by a line stating the settle rule.
pub fn sweep_table(cells: &[SweepCell]) -> String {
    let mut out = format!(
        "# settle: first step with |d_pf| < {SETTLE_FRACTION} x initial; overshoots: sign changes of the normal/binormal error after settle\n"
    );
    out.push_str("beta_prime,gamma_c,ratio,steady_state,overshoots,settle_time,steps,inside_d_pf_mean,inside_d_pf_max\n");
    for c in cells {
        let inside = c.summary.phase(Phase::Inside);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.beta_prime,
            c.gamma_c,
            c.ratio,
            c.steady_state,
            c.overshoots,
            c.settle_time.map_or("NaN".to_string(), |t| t.to_string()),
            c.summary.steps,
            inside.map_or(f64::NAN, |p| p.d_pf.mean),
            inside.map_or(f64::NAN, |p| p.d_pf.max),
        ));
    }
    out
}
