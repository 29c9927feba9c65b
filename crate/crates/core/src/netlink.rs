//! Line protocol between a controller (client) and a plant (server).
//!
//! ```text
//! HELLO <version> <T_e>          client → server, opens a session
//! POSES <12 w_T_e> <12 w_T_r>    server → client, after HELLO and each CMD
//! CMD <6 twist>                  client → server, end-effector frame
//! BYE                            client → server, ends the session
//! ERR <code> <text>              either way, followed by close
//! ```
//!
//! Poses are rotation rows then translation. Reals are written in Rust's
//! shortest round-trip form, so a loopback session reproduces an in-process
//! run bit for bit.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Twist};
use crate::plant::{Plant, PlantState, PoseNoise};

pub const PROTOCOL_VERSION: &str = "1";
pub const DEFAULT_READ_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    Hello { version: String, t_e: f64 },
    Poses { w_t_e: [f64; 12], w_t_r: [f64; 12] },
    Cmd([f64; 6]),
    Bye,
    Err { code: String, text: String },
}

impl WireMessage {
    pub fn poses(w_t_e: &Pose, w_t_r: &Pose) -> Self {
        WireMessage::Poses { w_t_e: w_t_e.to_row_major(), w_t_r: w_t_r.to_row_major() }
    }

    pub fn cmd(t: &Twist) -> Self {
        let v = t.to_vector();
        WireMessage::Cmd([v[0], v[1], v[2], v[3], v[4], v[5]])
    }

    pub fn err(code: &str, text: impl Into<String>) -> Self {
        WireMessage::Err { code: code.to_string(), text: text.into() }
    }
}

fn push_reals(out: &mut String, xs: &[f64]) {
    for x in xs {
        out.push(' ');
        out.push_str(&x.to_string());
    }
}

/// One newline-terminated line.
pub fn encode(msg: &WireMessage) -> String {
    let mut out = String::new();
    match msg {
        WireMessage::Hello { version, t_e } => {
            out.push_str("HELLO ");
            out.push_str(version);
            push_reals(&mut out, &[*t_e]);
        }
        WireMessage::Poses { w_t_e, w_t_r } => {
            out.push_str("POSES");
            push_reals(&mut out, w_t_e);
            push_reals(&mut out, w_t_r);
        }
        WireMessage::Cmd(v) => {
            out.push_str("CMD");
            push_reals(&mut out, v);
        }
        WireMessage::Bye => out.push_str("BYE"),
        WireMessage::Err { code, text } => {
            out.push_str("ERR ");
            out.push_str(code);
            if !text.is_empty() {
                out.push(' ');
                out.push_str(&text.replace(['\n', '\r'], " "));
            }
        }
    }
    out.push('\n');
    out
}

fn protocol(line: &str, reason: impl Into<String>) -> Error {
    Error::Protocol { line: line.to_string(), reason: reason.into() }
}

fn reals<const N: usize>(line: &str, fields: &[&str]) -> Result<[f64; N]> {
    if fields.len() != N {
        return Err(protocol(line, format!("expected {N} values, found {}", fields.len())));
    }
    let mut out = [0.0; N];
    for (slot, tok) in out.iter_mut().zip(fields) {
        *slot = tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| protocol(line, format!("not a finite number: {tok:?}")))?;
    }
    Ok(out)
}

pub fn decode(line: &str) -> Result<WireMessage> {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    let fields: Vec<&str> = trimmed.split_whitespace().collect();
    let Some((&tag, rest)) = fields.split_first() else {
        return Err(protocol(trimmed, "empty line"));
    };
    match tag {
        "HELLO" => {
            if rest.len() != 2 {
                return Err(protocol(trimmed, format!("HELLO expects 2 fields, found {}", rest.len())));
            }
            let [t_e] = reals::<1>(trimmed, &rest[1..])?;
            Ok(WireMessage::Hello { version: rest[0].to_string(), t_e })
        }
        "POSES" => {
            let v = reals::<24>(trimmed, rest)?;
            let mut w_t_e = [0.0; 12];
            let mut w_t_r = [0.0; 12];
            w_t_e.copy_from_slice(&v[..12]);
            w_t_r.copy_from_slice(&v[12..]);
            Ok(WireMessage::Poses { w_t_e, w_t_r })
        }
        "CMD" => Ok(WireMessage::Cmd(reals::<6>(trimmed, rest)?)),
        "BYE" if rest.is_empty() => Ok(WireMessage::Bye),
        "BYE" => Err(protocol(trimmed, "BYE takes no fields")),
        "ERR" => {
            let Some((&code, _)) = rest.split_first() else {
                return Err(protocol(trimmed, "ERR needs a code"));
            };
            let after_tag = trimmed.trim_start()[3..].trim_start();
            let text = after_tag[code.len()..].trim().to_string();
            Ok(WireMessage::Err { code: code.to_string(), text })
        }
        _ => Err(protocol(trimmed, format!("unknown tag {tag:?}"))),
    }
}

// ---- plant links -----------------------------------------------------------------

/// What the controller sees of a plant, wherever it runs.
pub trait PlantLink {
    fn start(&mut self, t_e: f64) -> Result<()>;
    /// Latest measured `(w_T_e, w_T_r)`.
    fn poses(&mut self) -> Result<(Pose, Pose)>;
    /// Applies one command for one period.
    fn command(&mut self, twist: &Twist) -> Result<()>;
    fn finish(&mut self) -> Result<()>;
}

pub struct InProcessLink {
    pub plant: Plant,
    pub w_t_r: Pose,
}

impl InProcessLink {
    pub fn new(plant: Plant, w_t_r: Pose) -> Self {
        Self { plant, w_t_r }
    }
}

impl PlantLink for InProcessLink {
    fn start(&mut self, t_e: f64) -> Result<()> {
        self.plant.t_e = t_e;
        Ok(())
    }

    fn poses(&mut self) -> Result<(Pose, Pose)> {
        Ok((self.plant.measure(), self.w_t_r))
    }

    fn command(&mut self, twist: &Twist) -> Result<()> {
        self.plant.step(twist);
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Controller side of a TCP session.
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    latest: Option<(Pose, Pose)>,
}

impl TcpLink {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(DEFAULT_READ_TIMEOUT))?;
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: stream, latest: None })
    }

    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.writer.write_all(encode(msg).as_bytes())?;
        Ok(())
    }

    fn receive_poses(&mut self) -> Result<()> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(protocol("", "server closed the connection"));
        }
        match decode(&line)? {
            WireMessage::Poses { w_t_e, w_t_r } => {
                self.latest = Some((Pose::from_row_major(&w_t_e)?, Pose::from_row_major(&w_t_r)?));
                Ok(())
            }
            WireMessage::Err { code, text } => Err(protocol(line.trim_end(), format!("server error {code}: {text}"))),
            _ => Err(protocol(line.trim_end(), "expected POSES")),
        }
    }
}

impl PlantLink for TcpLink {
    fn start(&mut self, t_e: f64) -> Result<()> {
        self.send(&WireMessage::Hello { version: PROTOCOL_VERSION.into(), t_e })?;
        self.receive_poses()
    }

    fn poses(&mut self) -> Result<(Pose, Pose)> {
        self.latest.ok_or_else(|| protocol("", "no POSES received yet"))
    }

    fn command(&mut self, twist: &Twist) -> Result<()> {
        self.send(&WireMessage::cmd(twist))?;
        self.receive_poses()
    }

    fn finish(&mut self) -> Result<()> {
        self.send(&WireMessage::Bye)
    }
}

// ---- server ----------------------------------------------------------------------

/// Plant served to each session, reset to the same initial state.
#[derive(Clone, Debug)]
pub struct PlantSpec {
    pub w_t_e: Pose,
    pub w_t_r: Pose,
    /// Measurement noise `(linear, angular, seed)`.
    pub noise: Option<(f64, f64, u64)>,
}

impl PlantSpec {
    pub fn build(&self, t_e: f64) -> Plant {
        let plant = Plant::new(self.w_t_e, t_e);
        match self.noise {
            Some((lin, ang, seed)) => plant.with_noise(PoseNoise::new(lin, ang, seed)),
            None => plant,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionEnd {
    Bye,
    Closed,
    /// An ERR was sent and the connection dropped.
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SessionReport {
    pub end: SessionEnd,
    pub final_state: Option<PlantState>,
    pub steps: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct ServerOptions {
    pub read_timeout: Duration,
    /// Stop accepting after this many sessions.
    pub max_sessions: Option<usize>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { read_timeout: DEFAULT_READ_TIMEOUT, max_sessions: None }
    }
}

fn send_line(stream: &mut TcpStream, msg: &WireMessage) -> std::io::Result<()> {
    stream.write_all(encode(msg).as_bytes())
}

/// Runs one lock-step session on an accepted connection.
pub fn serve_session(stream: TcpStream, spec: &PlantSpec, read_timeout: Duration) -> Result<SessionReport> {
    stream.set_read_timeout(Some(read_timeout))?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut plant: Option<Plant> = None;
    let mut line = String::new();
    let fail = |writer: &mut TcpStream, code: &str, text: String, plant: &Option<Plant>| {
        let _ = send_line(writer, &WireMessage::err(code, text));
        let _ = writer.shutdown(std::net::Shutdown::Both);
        Ok(SessionReport {
            end: SessionEnd::Error,
            final_state: plant.as_ref().map(|p| p.state),
            steps: plant.as_ref().map_or(0, |p| p.state.step_count),
        })
    };
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => {
                return Ok(SessionReport {
                    end: SessionEnd::Closed,
                    final_state: plant.as_ref().map(|p| p.state),
                    steps: plant.as_ref().map_or(0, |p| p.state.step_count),
                })
            }
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                return fail(&mut writer, "TIMEOUT", format!("no message within {read_timeout:?}"), &plant);
            }
            Err(e) => return Err(e.into()),
        }
        let msg = match decode(&line) {
            Ok(m) => m,
            Err(e) => return fail(&mut writer, "PROTOCOL", e.to_string(), &plant),
        };
        match (msg, plant.as_mut()) {
            (WireMessage::Hello { version, t_e }, None) => {
                if version != PROTOCOL_VERSION {
                    return fail(&mut writer, "VERSION", format!("server speaks {PROTOCOL_VERSION}"), &plant);
                }
                if !(t_e > 0.0) {
                    return fail(&mut writer, "PROTOCOL", format!("bad period {t_e}"), &plant);
                }
                let mut p = spec.build(t_e);
                let pose = p.measure();
                send_line(&mut writer, &WireMessage::poses(&pose, &spec.w_t_r))?;
                plant = Some(p);
            }
            (WireMessage::Cmd(v), Some(p)) => {
                p.step(&Twist::from_slice(&v));
                let pose = p.measure();
                send_line(&mut writer, &WireMessage::poses(&pose, &spec.w_t_r))?;
            }
            (WireMessage::Bye, p) => {
                return Ok(SessionReport {
                    end: SessionEnd::Bye,
                    final_state: p.as_ref().map(|p| p.state),
                    steps: p.as_ref().map_or(0, |p| p.state.step_count),
                })
            }
            (other, _) => {
                let tag = encode(&other).split_whitespace().next().unwrap_or("").to_string();
                return fail(&mut writer, "PROTOCOL", format!("unexpected {tag}"), &plant);
            }
        }
    }
}

/// Accepts connections on `listener`; one session at a time owns the plant,
/// others are turned away with `ERR BUSY`. Returns the reports of completed
/// sessions once `max_sessions` is reached or `stop` is raised.
pub fn serve_plant(
    listener: TcpListener,
    spec: PlantSpec,
    options: ServerOptions,
    stop: Arc<AtomicBool>,
) -> Result<Vec<SessionReport>> {
    listener.set_nonblocking(true)?;
    let busy = Arc::new(AtomicBool::new(false));
    let mut reports = Vec::new();
    let mut handles: Vec<std::thread::JoinHandle<Result<SessionReport>>> = Vec::new();
    let mut accepted = 0usize;
    loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        // collect finished sessions
        let mut i = 0;
        while i < handles.len() {
            if handles[i].is_finished() {
                let h = handles.swap_remove(i);
                match h.join() {
                    Ok(r) => reports.push(r?),
                    Err(_) => return Err(Error::Config("session thread panicked".into())),
                }
            } else {
                i += 1;
            }
        }
        if let Some(max) = options.max_sessions {
            if reports.len() >= max && handles.is_empty() {
                break;
            }
        }
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream.set_nonblocking(false)?;
                let at_capacity = options.max_sessions.is_some_and(|m| accepted >= m);
                if at_capacity || busy.swap(true, Ordering::SeqCst) {
                    let _ = send_line(&mut stream, &WireMessage::err("BUSY", "plant owned by another session"));
                    let _ = stream.shutdown(std::net::Shutdown::Both);
                    continue;
                }
                accepted += 1;
                let spec = spec.clone();
                let busy = Arc::clone(&busy);
                let timeout = options.read_timeout;
                handles.push(std::thread::spawn(move || {
                    let out = serve_session(stream, &spec, timeout);
                    busy.store(false, Ordering::SeqCst);
                    out
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => return Err(e.into()),
        }
    }
    for h in handles {
        match h.join() {
            Ok(r) => reports.push(r?),
            Err(_) => return Err(Error::Config("session thread panicked".into())),
        }
    }
    Ok(reports)
}

/// Binds a listener, typically `127.0.0.1:0` for tests.
pub fn bind(addr: impl ToSocketAddrs) -> Result<(TcpListener, SocketAddr)> {
    let l = TcpListener::bind(addr)?;
    let a = l.local_addr()?;
    Ok((l, a))
}
