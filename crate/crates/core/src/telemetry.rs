//! Live telemetry and teleoperation over TCP.
//!
//! The server runs the policy in a single control loop and exchanges
//! newline-delimited JSON objects with any number of clients. Every object
//! carries a `"type"` field; the schema is documented in `docs/telemetry.md`.
//! Each client has a bounded outbound queue that drops its oldest message
//! when full, so a slow client never stalls the control loop.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::quadruped::{make_quadruped, QuadrupedSpec};
use crate::env::{EnvMode, Environment};
use crate::error::{Error, Result};
use crate::model::{ExperimentConfig, Task};
use crate::ppo::ActorCritic;

pub const OUTBOX_CAPACITY: usize = 64;
pub const DEFAULT_STATE_RATE_HZ: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRanges {
    pub vx: [f64; 2],
    pub vy: [f64; 2],
    pub wz: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoMessage {
    pub robot: String,
    pub joint_names: Vec<String>,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub control_hz: f64,
    pub state_hz: f64,
    pub command_ranges: CommandRanges,
    pub checkpoint_iteration: u64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    /// Simulated seconds since the last reset.
    pub time: f64,
    pub step: u64,
    pub base_pos: [f64; 3],
    /// Orientation quaternion `[w, x, y, z]`.
    pub base_quat: [f64; 4],
    pub joint_pos: Vec<f64>,
    /// Foot order FL, FR, RL, RR.
    pub foot_contact: [bool; 4],
    pub torques: Vec<f64>,
    pub reward: f64,
    /// `[vx, vy, wz]` in effect for the step that produced this state.
    pub command: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Info(InfoMessage),
    State(StateMessage),
    Command { vx: f64, vy: f64, wz: f64 },
    Reset,
    Error { message: String },
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim()).map_err(|e| Error::Other(format!("bad message: {e}")))
    }
}

/// Bounded queue that discards its oldest entry when full.
pub struct Outbox {
    q: Mutex<VecDeque<Arc<str>>>,
    cv: Condvar,
    capacity: usize,
    closed: AtomicBool,
    dropped: AtomicU64,
}

impl Outbox {
    pub fn new(capacity: usize) -> Self {
        Self {
            q: Mutex::new(VecDeque::with_capacity(capacity)),
            cv: Condvar::new(),
            capacity: capacity.max(1),
            closed: AtomicBool::new(false),
            dropped: AtomicU64::new(0),
        }
    }

    pub fn push(&self, msg: Arc<str>) {
        let mut q = self.q.lock().unwrap();
        if q.len() == self.capacity {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(msg);
        self.cv.notify_one();
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Option<Arc<str>> {
        let q = self.q.lock().unwrap();
        let (mut q, _) = self
            .cv
            .wait_timeout_while(q, timeout, |q| q.is_empty() && !self.is_closed())
            .unwrap();
        q.pop_front()
    }

    pub fn len(&self) -> usize {
        self.q.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::Relaxed);
        self.cv.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Relaxed)
    }
}

enum Inbound {
    Command([f64; 3]),
    Reset,
}

type Clients = Arc<Mutex<Vec<Arc<Outbox>>>>;

fn handle_client(
    stream: TcpStream,
    info: Arc<str>,
    clients: Clients,
    inbound: Sender<Inbound>,
    stop: Arc<AtomicBool>,
) {
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_default();
    let outbox = Arc::new(Outbox::new(OUTBOX_CAPACITY));
    outbox.push(info);
    clients.lock().unwrap().push(outbox.clone());
    log::info!("client {peer} connected");

    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(e) => {
            log::warn!("client {peer}: {e}");
            outbox.close();
            return;
        }
    };
    let out = outbox.clone();
    let stop_w = stop.clone();
    thread::spawn(move || {
        while !out.is_closed() && !stop_w.load(Ordering::Relaxed) {
            if let Some(msg) = out.pop_timeout(Duration::from_millis(100)) {
                if writer.write_all(msg.as_bytes()).is_err() {
                    break;
                }
            }
        }
        out.close();
        let _ = writer.shutdown(std::net::Shutdown::Both);
    });

    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    while !outbox.is_closed() && !stop.load(Ordering::Relaxed) {
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => {
                if !line.trim().is_empty() {
                    match Message::parse(&line) {
                        Ok(Message::Command { vx, vy, wz }) => {
                            let _ = inbound.send(Inbound::Command([vx, vy, wz]));
                        }
                        Ok(Message::Reset) => {
                            let _ = inbound.send(Inbound::Reset);
                        }
                        Ok(other) => {
                            let msg =
                                format!("clients may send only command or reset, got {other:?}");
                            outbox.push(Message::Error { message: msg }.to_line().into());
                        }
                        Err(e) => outbox.push(
                            Message::Error {
                                message: e.to_string(),
                            }
                            .to_line()
                            .into(),
                        ),
                    }
                }
                line.clear();
            }
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) => {}
            Err(_) => break,
        }
    }
    outbox.close();
    log::info!("client {peer} disconnected");
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: String,
    /// Run as fast as possible instead of pacing to wall-clock time.
    pub fast: bool,
    pub state_hz: f64,
    /// Stop after this many control steps.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub stop: Arc<AtomicBool>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8765".into(),
            fast: false,
            state_hz: DEFAULT_STATE_RATE_HZ,
            max_steps: None,
            seed: 0,
            stop: Arc::new(AtomicBool::new(false)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeSummary {
    pub steps: u64,
    pub resets: u64,
    pub states_sent: u64,
}

/// Runs the policy under teleoperation until `opts.stop` is set or
/// `opts.max_steps` is reached. `on_bound` receives the listening address.
pub fn serve(
    policy: &ActorCritic,
    cfg: &ExperimentConfig,
    meta: (u64, [u8; 32]),
    opts: &ServeOptions,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<ServeSummary> {
    if cfg.task != Task::Quadruped {
        return Err(Error::validation("task", "serve needs the quadruped task"));
    }
    let spec = Arc::new(QuadrupedSpec::from_experiment(cfg)?);
    let mut env = make_quadruped(&spec, 0, EnvMode::Eval)?;
    if policy.obs_dim() != env.obs_dim() || policy.act_dim() != env.act_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!(
                "{}-d observation, {}-d action",
                env.obs_dim(),
                env.act_dim()
            ),
            actual: format!(
                "{}-d observation, {}-d action",
                policy.obs_dim(),
                policy.act_dim()
            ),
        });
    }

    let listener = TcpListener::bind(&opts.addr).map_err(|e| Error::io(&opts.addr, e))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| Error::io(&opts.addr, e))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Error::io(&opts.addr, e))?;
    let dt = cfg.sim.dt;
    let c = &cfg.env.commands;
    let info: Arc<str> = Message::Info(InfoMessage {
        robot: "quadruped".into(),
        joint_names: cfg.robot.joints.iter().map(|j| j.name.clone()).collect(),
        obs_dim: policy.obs_dim(),
        act_dim: policy.act_dim(),
        control_hz: 1.0 / dt,
        state_hz: opts.state_hz,
        command_ranges: CommandRanges {
            vx: c.vx,
            vy: c.vy,
            wz: c.wz,
        },
        checkpoint_iteration: meta.0,
        fingerprint: crate::checkpoint::hex(&meta.1),
    })
    .to_line()
    .into();

    let clients: Clients = Arc::new(Mutex::new(Vec::new()));
    let (tx, rx): (Sender<Inbound>, Receiver<Inbound>) = channel();
    let acceptor = {
        let clients = clients.clone();
        let stop = opts.stop.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = stream.set_nonblocking(false);
                        let _ = stream.set_nodelay(true);
                        let (info, clients, tx, stop) =
                            (info.clone(), clients.clone(), tx.clone(), stop.clone());
                        thread::spawn(move || handle_client(stream, info, clients, tx, stop));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(20));
                    }
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        thread::sleep(Duration::from_millis(100));
                    }
                }
            }
        })
    };
    log::info!("serving on {addr}");
    on_bound(addr);

    let every = ((1.0 / dt) / opts.state_hz.max(1e-9)).round().max(1.0) as u64;
    let mut user_cmd = [0.0; 3];
    let mut episode = 0u64;
    let reset =
        |env: &mut crate::env::quadruped::QuadrupedEnv, cmd: [f64; 3], episode: &mut u64| {
            env.reset(opts.seed.wrapping_add(*episode));
            *episode += 1;
            env.set_command(cmd);
            env.refresh_observation()
        };
    let mut obs = reset(&mut env, user_cmd, &mut episode);
    let mut summary = ServeSummary {
        steps: 0,
        resets: 0,
        states_sent: 0,
    };
    let start = Instant::now();
    let mut paced_from = (start, 0u64);

    while !opts.stop.load(Ordering::Relaxed) && opts.max_steps.is_none_or(|m| summary.steps < m) {
        let mut changed = false;
        while let Ok(msg) = rx.try_recv() {
            match msg {
                Inbound::Command(cmd) => {
                    user_cmd = spec.env.commands.clamp(cmd);
                    env.set_command(user_cmd);
                    changed = true;
                }
                Inbound::Reset => {
                    obs = reset(&mut env, user_cmd, &mut episode);
                    summary.resets += 1;
                    changed = false;
                }
            }
        }
        if changed {
            obs = env.refresh_observation();
        }
        let action = policy.act(&obs)?;
        let t = match env.step(&action) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("control step failed ({e}); resetting");
                obs = reset(&mut env, user_cmd, &mut episode);
                summary.resets += 1;
                continue;
            }
        };
        summary.steps += 1;
        if env.steps() % every == 0 {
            let st = env.state();
            let q = st.base_quat;
            let msg = Message::State(StateMessage {
                time: env.steps() as f64 * dt,
                step: env.steps(),
                base_pos: [st.base_pos.x, st.base_pos.y, st.base_pos.z],
                base_quat: [q.w, q.i, q.j, q.k],
                joint_pos: st.q.to_vec(),
                foot_contact: st.foot_contact,
                torques: env.last_torques().0.to_vec(),
                reward: t.reward,
                command: env.command(),
            });
            let line: Arc<str> = msg.to_line().into();
            let mut cl = clients.lock().unwrap();
            cl.retain(|o| !o.is_closed());
            for o in cl.iter() {
                o.push(line.clone());
            }
            summary.states_sent += 1;
        }
        obs = if t.done.is_some() {
            summary.resets += 1;
            reset(&mut env, user_cmd, &mut episode)
        } else {
            t.obs
        };

        if !opts.fast {
            let (t0, s0) = paced_from;
            let due = t0 + Duration::from_secs_f64((summary.steps - s0) as f64 * dt);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            } else if now - due > Duration::from_millis(100) {
                paced_from = (now, summary.steps);
            }
        }
    }
    opts.stop.store(true, Ordering::Relaxed);
    for o in clients.lock().unwrap().iter() {
        o.close();
    }
    let _ = acceptor.join();
    Ok(summary)
}
