//! Server and camera agents talking over real sockets.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use ecolens::filters::Frame;
use ecolens::online::{run_simulated, LoopParams, Phase};
use ecolens::protocol::{run_camera_agent, run_server_agent, Connection, Message, Role};
use ecolens::scene::SceneModel;
use ecolens::Error;

fn params(total: u64) -> LoopParams {
    LoopParams {
        seed: 11,
        total_duration_s: total,
        ..LoopParams::default()
    }
}

fn pair() -> (TcpStream, TcpStream) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let client = TcpStream::connect(listener.local_addr().unwrap()).unwrap();
    let (server, _) = listener.accept().unwrap();
    for s in [&client, &server] {
        s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    }
    (server, client)
}

#[test]
fn loopback_run_matches_in_process_run() {
    let scene = SceneModel::default_scene();
    let (server, client) = pair();
    let cam_scene = scene.clone();
    let frames = vec![Frame::filled(4, 3, 9).unwrap(), Frame::filled(4, 3, 200).unwrap()];
    let camera = thread::spawn(move || run_camera_agent(client, cam_scene, &frames).unwrap());
    let served = run_server_agent(server, params(300), &scene);
    let report = camera.join().unwrap();

    let local = run_simulated(params(300), &scene).unwrap();
    assert_eq!(served.trace, local.trace);
    let summary = served.result.unwrap();
    assert_eq!(summary, local.summary);
    // the camera saw the summary and adopted the server's seed
    assert_eq!(report.summary.as_ref(), Some(&summary));
    assert_eq!(report.seed, 11);
    assert_eq!(report.seconds_streamed, 300);
}

#[test]
fn config_updates_land_on_phase_boundaries() {
    let scene = SceneModel::default_scene();
    let (server, client) = pair();
    let cam_scene = scene.clone();
    let camera = thread::spawn(move || run_camera_agent(client, cam_scene, &[]).unwrap());
    let served = run_server_agent(server, params(200), &scene);
    served.result.unwrap();
    let report = camera.join().unwrap();

    // every phase start in the trace matches an applied update, and the
    // streamed configuration never changes inside a phase
    let mut starts = Vec::new();
    for (i, e) in served.trace.iter().enumerate() {
        if i == 0 || served.trace[i - 1].phase != e.phase {
            starts.push((e.t_s, e.phase, e.config()));
        } else {
            assert_eq!(served.trace[i - 1].config(), e.config(), "mid-phase change at {}", e.t_s);
        }
    }
    assert_eq!(report.applied, starts);
    assert_eq!(report.bursts, starts.iter().filter(|s| s.1 == Phase::Verify).count());
}

/// Drops the connection after a fixed number of writes.
struct Flaky {
    inner: TcpStream,
    writes_left: usize,
}

impl Read for Flaky {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.inner.read(buf)
    }
}

impl Write for Flaky {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if self.writes_left == 0 {
            let _ = self.inner.shutdown(std::net::Shutdown::Both);
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "camera unplugged"));
        }
        self.writes_left -= 1;
        self.inner.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[test]
fn lost_camera_leaves_partial_trace() {
    let scene = SceneModel::default_scene();
    let (server, client) = pair();
    let cam_scene = scene.clone();
    // hello, then enough detections for part of the first exploit phase
    let camera = thread::spawn(move || {
        let flaky = Flaky {
            inner: client,
            writes_left: 1 + 23 + 30,
        };
        run_camera_agent(flaky, cam_scene, &[])
    });
    let served = run_server_agent(server, params(900), &scene);
    assert!(camera.join().unwrap().is_err());
    assert!(matches!(served.result, Err(Error::ConnectionClosed)), "{:?}", served.result);

    let full = run_simulated(params(900), &scene).unwrap().trace;
    assert!(!served.trace.is_empty());
    assert!(served.trace.len() < full.len());
    assert_eq!(served.trace[..], full[..served.trace.len()]);
}

#[test]
fn handshake_and_bye() {
    let scene = SceneModel::default_scene();
    let (server, client) = pair();
    let camera = thread::spawn(move || {
        let mut conn = Connection::new(client);
        let hello = conn.recv().unwrap();
        assert!(matches!(hello, Message::Hello { role: Role::Server, seed: 11 }));
        // a camera that greets and leaves at once
        conn.send(&Message::Hello {
            role: Role::Camera,
            seed: 11,
        })
        .unwrap();
        conn.send(&Message::Bye).unwrap();
    });
    let served = run_server_agent(server, params(100), &scene);
    camera.join().unwrap();
    assert!(served.result.is_err());
    assert!(served.trace.is_empty());
}

#[test]
fn camera_rejects_server_speaking_out_of_turn() {
    let scene = SceneModel::default_scene();
    let (server, client) = pair();
    let camera = thread::spawn(move || run_camera_agent(client, scene, &[]));
    let mut conn = Connection::new(server);
    conn.send(&Message::Hello {
        role: Role::Server,
        seed: 1,
    })
    .unwrap();
    assert!(matches!(conn.recv().unwrap(), Message::Hello { role: Role::Camera, seed: 1 }));
    conn.send(&Message::Detections {
        t_s: 0,
        accuracy: 1.0,
        power_w: 5.0,
    })
    .unwrap();
    assert!(matches!(camera.join().unwrap(), Err(Error::Protocol { .. })));
}
