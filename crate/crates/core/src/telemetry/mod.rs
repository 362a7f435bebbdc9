//! Socket transport between the plant and the flight computer, with an
//! optional man-in-the-middle proxy running the attack engine.
//!
//! Every exchange is lock-step: the plant sends a measurement and a camera
//! message for step k and waits for the rotor command of step k (or a
//! heartbeat when the flight computer has finished). The plant sends a
//! heartbeat instead of a measurement once its horizon is exhausted.

pub mod wire;

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use crate::attack::{AttackEngine, AttackState, AttackStepLog, CameraPayload};
use crate::scenario::{
    build_attack_engine, DetectorSetup, FlightComputer, FlightLog, Plant, PlantLog, RunRecord,
    ScenarioConfig, SimError, StepRow,
};

pub use wire::{
    decode, encode, read_message, write_message, Message, StreamDecoder, Tag, WireError, HEADER_LEN,
};

fn telemetry(e: impl std::fmt::Display) -> SimError {
    SimError::Telemetry(e.to_string())
}

fn unexpected(wanted: &str, got: Option<&Message>) -> SimError {
    match got {
        Some(m) => SimError::Telemetry(format!(
            "expected {wanted}, got {:?} for step {}",
            m.tag(),
            m.step()
        )),
        None => SimError::Telemetry(format!("expected {wanted}, peer closed the stream")),
    }
}

/// Buffered, message-level view of one TCP connection.
#[derive(Debug)]
pub struct Link {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Link {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        // Lock-step traffic of small messages stalls badly under Nagle.
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }

    /// Connects, retrying refused attempts until `patience` has elapsed so
    /// that nodes may be started in any order.
    pub fn connect_patiently(addr: SocketAddr, patience: Duration) -> io::Result<Self> {
        Self::new(connect_patiently(addr, patience)?)
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), SimError> {
        write_message(&mut self.writer, msg).map_err(telemetry)
    }

    pub fn flush(&mut self) -> Result<(), SimError> {
        self.writer.flush().map_err(telemetry)
    }

    /// Next message, `None` once the peer has closed cleanly.
    pub fn recv(&mut self) -> Result<Option<Message>, SimError> {
        read_message(&mut self.reader).map_err(telemetry)
    }
}

fn connect_patiently(addr: SocketAddr, patience: Duration) -> io::Result<TcpStream> {
    let deadline = Instant::now() + patience;
    loop {
        match TcpStream::connect(addr) {
            Err(e) if e.kind() == io::ErrorKind::ConnectionRefused && Instant::now() < deadline => {
                thread::sleep(Duration::from_millis(20));
            }
            other => return other,
        }
    }
}

fn camera_message(step: u64, camera: CameraPayload) -> Message {
    match camera {
        CameraPayload::Observation(observation) => Message::Observation { step, observation },
        CameraPayload::Frame(f) => Message::Frame(f),
    }
}

fn recv_camera(link: &mut Link, step: u64) -> Result<CameraPayload, SimError> {
    match link.recv()? {
        Some(Message::Observation {
            step: s,
            observation,
        }) if s == step => Ok(CameraPayload::Observation(observation)),
        Some(Message::Frame(f)) if f.step == step => Ok(CameraPayload::Frame(f)),
        other => Err(unexpected(
            &format!("camera data for step {step}"),
            other.as_ref(),
        )),
    }
}

/// What the plant recorded over one session.
#[derive(Debug, Clone, Default)]
pub struct PlantSession {
    pub logs: Vec<PlantLog>,
    /// The flight computer ended the session (landing) before the horizon.
    pub ended_by_flight: bool,
}

/// Simulates the vehicle and serves its sensors over `link`.
pub fn plant_node(
    cfg: &ScenarioConfig,
    seed: u64,
    link: &mut Link,
) -> Result<PlantSession, SimError> {
    let mut plant = Plant::new(cfg, seed);
    let mut session = PlantSession::default();
    let mut step = 0;
    for _ in 0..cfg.steps() {
        let (y, camera, log) = plant.sense();
        step = y.step;
        link.send(&Message::Measurement(y))?;
        link.send(&camera_message(step, camera))?;
        link.flush()?;
        session.logs.push(log);
        match link.recv()? {
            Some(Message::Command { step: s, command }) if s == step => plant.actuate(&command)?,
            Some(Message::Heartbeat { .. }) => {
                session.ended_by_flight = true;
                return Ok(session);
            }
            other => {
                return Err(unexpected(
                    &format!("rotor command for step {step}"),
                    other.as_ref(),
                ))
            }
        }
        step += 1;
    }
    link.send(&Message::Heartbeat { step })?;
    link.flush()?;
    Ok(session)
}

/// Runs the flight computer against the plant (or proxy) on `link` until
/// the mission finishes or the peer ends the session.
pub fn flight_node(
    cfg: &ScenarioConfig,
    detectors: &DetectorSetup,
    link: &mut Link,
) -> Result<Vec<FlightLog>, SimError> {
    let mut fc = FlightComputer::new(cfg, detectors);
    let mut logs = Vec::new();
    loop {
        let y = match link.recv()? {
            Some(Message::Measurement(y)) => y,
            Some(Message::Heartbeat { .. }) | None => break,
            other => return Err(unexpected("a measurement", other.as_ref())),
        };
        let step = y.step;
        let camera = recv_camera(link, step)?;
        let (command, log) = fc.process(&y, &camera)?;
        let finished = log.finished;
        logs.push(log);
        if finished {
            link.send(&Message::Heartbeat { step })?;
            link.flush()?;
            break;
        }
        link.send(&Message::Command { step, command })?;
        link.flush()?;
    }
    Ok(logs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxyMode {
    /// Forward bytes untouched.
    Pass,
    /// Decode, falsify with the attack engine, re-encode.
    Attack,
}

impl std::str::FromStr for ProxyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pass" => Ok(ProxyMode::Pass),
            "attack" => Ok(ProxyMode::Attack),
            other => Err(format!(
                "unknown proxy mode {other:?} (expected pass or attack)"
            )),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProxySummary {
    /// Bytes received from the plant side.
    pub bytes_from_plant: u64,
    /// Bytes received from the flight side.
    pub bytes_from_flight: u64,
    /// Engine log per intercepted step (attack mode only).
    pub attack_logs: Vec<AttackStepLog>,
    pub attack_state: Option<AttackState>,
}

/// Copies bytes both ways until each side closes.
pub fn proxy_pass(plant: TcpStream, flight: TcpStream) -> Result<ProxySummary, SimError> {
    fn pump(mut from: TcpStream, mut to: TcpStream) -> io::Result<u64> {
        let n = io::copy(&mut from, &mut to)?;
        to.shutdown(Shutdown::Write).or_else(|e| {
            if e.kind() == io::ErrorKind::NotConnected {
                Ok(())
            } else {
                Err(e)
            }
        })?;
        Ok(n)
    }
    plant.set_nodelay(true).map_err(telemetry)?;
    flight.set_nodelay(true).map_err(telemetry)?;
    let (p2, f2) = (
        plant.try_clone().map_err(telemetry)?,
        flight.try_clone().map_err(telemetry)?,
    );
    let (up, down) = thread::scope(|s| {
        let up = s.spawn(move || pump(plant, flight));
        let down = s.spawn(move || pump(f2, p2));
        (up.join(), down.join())
    });
    let join = |r: thread::Result<io::Result<u64>>| {
        r.map_err(|_| telemetry("proxy thread panicked"))?
            .map_err(telemetry)
    };
    Ok(ProxySummary {
        bytes_from_plant: join(up)?,
        bytes_from_flight: join(down)?,
        ..ProxySummary::default()
    })
}

/// Relays one session through the attack engine.
pub fn proxy_attack(
    mut engine: AttackEngine,
    plant: &mut Link,
    flight: &mut Link,
) -> Result<ProxySummary, SimError> {
    let mut summary = ProxySummary::default();
    let count = |m: &Message| encode(m).len() as u64;
    loop {
        let y = match plant.recv()? {
            Some(Message::Measurement(y)) => y,
            Some(hb @ Message::Heartbeat { .. }) => {
                summary.bytes_from_plant += count(&hb);
                flight.send(&hb)?;
                flight.flush()?;
                break;
            }
            None => break,
            other => return Err(unexpected("a measurement", other.as_ref())),
        };
        let step = y.step;
        let camera = recv_camera(plant, step)?;
        summary.bytes_from_plant +=
            count(&Message::Measurement(y.clone())) + count(&camera_message(step, camera.clone()));
        let (y_f, camera_f) = engine
            .intercept(&y, &camera)
            .map_err(|source| SimError::Estimation { step, source })?;
        if let Some(log) = engine.last_log() {
            summary.attack_logs.push(log.clone());
        }
        flight.send(&Message::Measurement(y_f))?;
        flight.send(&camera_message(step, camera_f))?;
        flight.flush()?;
        match flight.recv()? {
            Some(msg @ Message::Command { .. }) => {
                summary.bytes_from_flight += count(&msg);
                if let Message::Command { command, .. } = &msg {
                    engine
                        .observe_command(command)
                        .map_err(|source| SimError::Estimation { step, source })?;
                }
                plant.send(&msg)?;
                plant.flush()?;
            }
            Some(hb @ Message::Heartbeat { .. }) => {
                summary.bytes_from_flight += count(&hb);
                plant.send(&hb)?;
                plant.flush()?;
                break;
            }
            None => break,
            other => return Err(unexpected("a rotor command", other.as_ref())),
        }
    }
    summary.attack_state = Some(*engine.state());
    Ok(summary)
}

/// How long a node keeps retrying a refused connection.
pub const CONNECT_PATIENCE: Duration = Duration::from_secs(10);

/// Accepts one plant connection on `listener`, connects to the flight
/// computer at `upstream` and relays the session.
pub fn serve_proxy(
    listener: &TcpListener,
    upstream: SocketAddr,
    mode: ProxyMode,
    cfg: &ScenarioConfig,
) -> Result<ProxySummary, SimError> {
    let (plant, _) = listener.accept().map_err(telemetry)?;
    let flight = connect_patiently(upstream, CONNECT_PATIENCE)
        .map_err(|e| telemetry(format!("{upstream}: {e}")))?;
    match mode {
        ProxyMode::Pass => proxy_pass(plant, flight),
        ProxyMode::Attack => {
            let mut engine_cfg = cfg.clone();
            engine_cfg.attack.enabled = true;
            let engine = build_attack_engine(&engine_cfg);
            proxy_attack(
                engine,
                &mut Link::new(plant).map_err(telemetry)?,
                &mut Link::new(flight).map_err(telemetry)?,
            )
        }
    }
}

fn join_node<T>(h: thread::ScopedJoinHandle<'_, Result<T, SimError>>) -> Result<T, SimError> {
    h.join()
        .unwrap_or_else(|_| Err(telemetry("node thread panicked")))
}

/// Runs one mission as three communicating nodes (plant, proxy, flight
/// computer) over loopback sockets and reassembles the run record.
pub fn run_split(
    cfg: &ScenarioConfig,
    seed: u64,
    detectors: &DetectorSetup,
    mode: ProxyMode,
) -> Result<RunRecord, SimError> {
    cfg.validate()?;
    let flight_listener = TcpListener::bind("127.0.0.1:0").map_err(telemetry)?;
    let proxy_listener = TcpListener::bind("127.0.0.1:0").map_err(telemetry)?;
    let flight_addr = flight_listener.local_addr().map_err(telemetry)?;
    let proxy_addr = proxy_listener.local_addr().map_err(telemetry)?;

    let (plant, proxy, flight) = thread::scope(|s| {
        let flight = s.spawn(|| {
            let (stream, _) = flight_listener.accept().map_err(telemetry)?;
            flight_node(cfg, detectors, &mut Link::new(stream).map_err(telemetry)?)
        });
        let proxy = s.spawn(|| serve_proxy(&proxy_listener, flight_addr, mode, cfg));
        let plant = Link::connect(proxy_addr)
            .map_err(telemetry)
            .and_then(|mut link| plant_node(cfg, seed, &mut link));
        (plant, join_node(proxy), join_node(flight))
    });
    // A failing node closes its sockets, so its peers end cleanly or with
    // a closed-stream error; report the root cause first.
    let flight = flight?;
    let proxy = proxy?;
    let plant = plant?;

    let n = plant.logs.len();
    if flight.len() != n || (mode == ProxyMode::Attack && proxy.attack_logs.len() != n) {
        return Err(telemetry(format!(
            "node logs disagree: plant {n}, flight {}, proxy {}",
            flight.len(),
            proxy.attack_logs.len()
        )));
    }
    let mut record = RunRecord::new(seed, cfg.mission);
    for (i, (p, f)) in plant.logs.iter().zip(&flight).enumerate() {
        record.push_with_features(
            StepRow::assemble(p, proxy.attack_logs.get(i), f),
            f.features.clone(),
        );
    }
    record.touchdown = flight.last().is_some_and(|f| f.finished);
    if let Some(state) = proxy.attack_state {
        record.attack_start = state.start_step;
        record.attack_stop = state.stop;
    }
    Ok(record)
}
