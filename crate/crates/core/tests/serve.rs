use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::channel;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use quadtorque::model::{ExperimentConfig, PolicyConfig, TerrainConfig};
use quadtorque::ppo::ActorCritic;
use quadtorque::telemetry::{serve, Message, ServeOptions, ServeSummary, StateMessage};

/// Flat ground with fall termination disabled, so only explicit resets
/// restart the episode clock.
fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        terrain: TerrainConfig::flat(),
        ..ExperimentConfig::default()
    };
    cfg.env.min_base_height = -10.0;
    cfg.env.max_tilt = 4.0;
    cfg
}

fn policy() -> ActorCritic {
    let pc = PolicyConfig {
        hidden: vec![16],
        ..PolicyConfig::default()
    };
    ActorCritic::new(48, 12, &pc, 5.0, 3)
}

struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: JoinHandle<quadtorque::Result<ServeSummary>>,
}

impl Server {
    fn start(fast: bool, max_steps: Option<u64>) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let opts = ServeOptions {
            addr: "127.0.0.1:0".into(),
            fast,
            max_steps,
            stop: stop.clone(),
            ..ServeOptions::default()
        };
        let (tx, rx) = channel();
        let handle = thread::spawn(move || {
            serve(&policy(), &config(), (7, [0xab; 32]), &opts, |a| {
                tx.send(a).unwrap()
            })
        });
        let addr = rx
            .recv_timeout(Duration::from_secs(10))
            .expect("server bound");
        Server { addr, stop, handle }
    }

    fn finish(self) -> ServeSummary {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.join().unwrap().unwrap()
    }
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    fn connect(addr: SocketAddr) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        Client {
            reader: BufReader::new(s.try_clone().unwrap()),
            writer: s,
        }
    }

    fn next(&mut self) -> Message {
        let mut line = String::new();
        self.reader.read_line(&mut line).unwrap();
        Message::parse(&line).unwrap()
    }

    fn next_state(&mut self) -> StateMessage {
        loop {
            if let Message::State(s) = self.next() {
                return s;
            }
        }
    }

    fn send(&mut self, m: &Message) {
        self.writer.write_all(m.to_line().as_bytes()).unwrap();
    }
}

#[test]
fn info_arrives_first() {
    let server = Server::start(true, None);
    let mut c = Client::connect(server.addr);
    match c.next() {
        Message::Info(info) => {
            assert_eq!(info.obs_dim, 48);
            assert_eq!(info.act_dim, 12);
            assert_eq!(info.joint_names.len(), 12);
            assert_eq!(info.checkpoint_iteration, 7);
            assert_eq!(info.fingerprint, "ab".repeat(32));
            assert_eq!(info.command_ranges.vx, [-1.0, 1.0]);
        }
        other => panic!("expected info, got {other:?}"),
    }
    server.finish();
}

#[test]
fn command_is_echoed_within_100ms() {
    let server = Server::start(false, None);
    let mut c = Client::connect(server.addr);
    let first = c.next_state();
    assert_eq!(first.command, [0.0; 3]);
    let sent = Instant::now();
    c.send(&Message::Command {
        vx: 0.5,
        vy: 0.0,
        wz: 0.0,
    });
    let echoed = loop {
        let s = c.next_state();
        if s.command == [0.5, 0.0, 0.0] {
            break sent.elapsed();
        }
        assert_eq!(s.command, [0.0; 3]);
    };
    assert!(echoed < Duration::from_millis(100), "{echoed:?}");
    for _ in 0..5 {
        assert_eq!(c.next_state().command, [0.5, 0.0, 0.0]);
    }
    server.finish();
}

#[test]
fn commands_are_clamped_to_configured_ranges() {
    let server = Server::start(true, None);
    let mut c = Client::connect(server.addr);
    c.next_state();
    c.send(&Message::Command {
        vx: 2.0,
        vy: -5.0,
        wz: 0.2,
    });
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let s = c.next_state();
        if s.command != [0.0; 3] {
            assert_eq!(s.command, [1.0, -1.0, 0.2]);
            break;
        }
        assert!(Instant::now() < deadline);
    }
    server.finish();
}

#[test]
fn reset_restarts_the_episode_clock() {
    let server = Server::start(false, None);
    let mut c = Client::connect(server.addr);
    let mut last = c.next_state();
    while last.time < 0.3 {
        let s = c.next_state();
        assert!(s.time > last.time, "clock ran backwards without a reset");
        last = s;
    }
    c.send(&Message::Reset);
    let deadline = Instant::now() + Duration::from_millis(500);
    loop {
        let s = c.next_state();
        if s.time < last.time {
            assert!(s.time < 0.1, "{}", s.time);
            break;
        }
        last = s;
        assert!(Instant::now() < deadline, "no reset observed");
    }
    assert!(server.finish().resets >= 1);
}

#[test]
fn states_stream_at_50hz_in_real_time() {
    let server = Server::start(false, None);
    let mut c = Client::connect(server.addr);
    c.next_state();
    let t0 = Instant::now();
    let mut n = 0;
    while t0.elapsed() < Duration::from_secs(2) {
        c.next_state();
        n += 1;
    }
    let hz = n as f64 / t0.elapsed().as_secs_f64();
    assert!((40.0..=60.0).contains(&hz), "{hz} Hz");
    server.finish();
}

#[test]
fn runs_without_any_client() {
    let server = Server::start(true, Some(500));
    let summary = server.handle.join().unwrap().unwrap();
    assert_eq!(summary.steps, 500);
    assert_eq!(summary.states_sent, 50);
}

#[test]
fn malformed_input_gets_an_error_reply() {
    let server = Server::start(true, None);
    let mut c = Client::connect(server.addr);
    c.writer.write_all(b"{\"type\":\"warp\"}\n").unwrap();
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        if let Message::Error { message } = c.next() {
            assert!(!message.is_empty());
            break;
        }
        assert!(Instant::now() < deadline);
    }
    server.finish();
}
