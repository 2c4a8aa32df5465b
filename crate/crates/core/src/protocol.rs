//! Length-prefixed JSON messages between the camera and the edge server,
//! and the two agents that speak them.
//!
//! A frame is a 4-byte big-endian body length followed by a UTF-8 JSON
//! object whose `"type"` names the message kind. Bodies use `": "` and `", "`
//! separators, so `bye` is the 15-byte body `{"type": "bye"}`.

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::Frame;
use crate::objective::{Configuration, ObjectivePoint, MAX_BITRATE_KBPS, MIN_BITRATE_KBPS};
use crate::online::{ground_truth_config, Backend, LoopParams, OnlineLoop, Phase, SimBackend, Summary, TraceEvent};
use crate::scene::{GroundTruthBurst, SceneModel};
use crate::surrogate::MAX_THRESHOLD;

const PREFIX_CHARS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Camera,
    Server,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FramePayload {
    Pgm(#[serde(with = "base64_bytes")] Vec<u8>),
    DetectionRef(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    Hello {
        role: Role,
        seed: u64,
    },
    ConfigUpdate {
        threshold: f64,
        bitrate_kbps: u32,
        phase: Phase,
        t_s: u64,
        duration_s: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        burst_frames: Option<u32>,
    },
    GtBurstBegin {
        t_s: u64,
        frames: u32,
    },
    Frame {
        frame_index: u32,
        t_s: u64,
        #[serde(flatten)]
        payload: FramePayload,
    },
    GtBurstEnd {
        t_s: u64,
        regime: f64,
        seed: u64,
    },
    Detections {
        t_s: u64,
        accuracy: f64,
        power_w: f64,
    },
    Summary {
        summary: Summary,
    },
    Bye,
}

mod base64_bytes {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        B64.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::ConfigUpdate { .. } => "config_update",
            Message::GtBurstBegin { .. } => "gt_burst_begin",
            Message::Frame { .. } => "frame",
            Message::GtBurstEnd { .. } => "gt_burst_end",
            Message::Detections { .. } => "detections",
            Message::Summary { .. } => "summary",
            Message::Bye => "bye",
        }
    }

    pub fn config_update(config: &Configuration, phase: Phase, t_s: u64, duration_s: u64) -> Self {
        Message::ConfigUpdate {
            threshold: config.threshold,
            bitrate_kbps: config.bitrate_kbps,
            phase,
            t_s,
            duration_s,
            burst_frames: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Message::ConfigUpdate {
                threshold,
                bitrate_kbps,
                ..
            } => {
                if !(0.0..=MAX_THRESHOLD).contains(threshold)
                    || !(MIN_BITRATE_KBPS..=MAX_BITRATE_KBPS).contains(bitrate_kbps)
                {
                    return Err(Error::OutOfBox {
                        threshold: *threshold,
                        bitrate_kbps: *bitrate_kbps,
                    });
                }
            }
            Message::GtBurstEnd { regime, .. } if !(0.0..=1.0).contains(regime) => {
                return Err(Error::invalid(format!("regime {regime} outside [0, 1]")));
            }
            Message::Detections { accuracy, power_w, .. } if !accuracy.is_finite() || !power_w.is_finite() => {
                return Err(Error::invalid("non-finite detection measurement"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// serde_json formatter with `": "` / `", "` separators.
struct SpacedFormatter;

impl serde_json::ser::Formatter for SpacedFormatter {
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            w.write_all(b", ")
        }
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            w.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        w.write_all(b": ")
    }
}

/// Serialized body without the length prefix.
pub fn encode_body(msg: &Message) -> Result<Vec<u8>> {
    msg.validate()?;
    let mut body = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut body, SpacedFormatter);
    msg.serialize(&mut ser)?;
    Ok(body)
}

pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let body = encode_body(msg)?;
    let len = u32::try_from(body.len())
        .map_err(|_| Error::invalid(format!("message body of {} bytes exceeds the 32-bit length field", body.len())))?;
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoded<'a> {
    Complete { message: Message, rest: &'a [u8] },
    NeedMore,
}

fn protocol_error(message: impl ToString, body: &[u8]) -> Error {
    Error::Protocol {
        message: message.to_string(),
        prefix: String::from_utf8_lossy(body).chars().take(PREFIX_CHARS).collect(),
    }
}

pub fn decode_body(body: &[u8]) -> Result<Message> {
    let msg: Message = serde_json::from_slice(body).map_err(|e| protocol_error(e, body))?;
    msg.validate().map_err(|e| protocol_error(e, body))?;
    Ok(msg)
}

/// Parses one frame from the front of `buf` if it is complete.
pub fn decode(buf: &[u8]) -> Result<Decoded<'_>> {
    let Some(header) = buf.get(..4) else {
        return Ok(Decoded::NeedMore);
    };
    let len = u32::from_be_bytes(header.try_into().expect("4 bytes")) as usize;
    let Some(body) = buf.get(4..4 + len) else {
        return Ok(Decoded::NeedMore);
    };
    Ok(Decoded::Complete {
        message: decode_body(body)?,
        rest: &buf[4 + len..],
    })
}

/// Blocking framed transport over any byte stream.
#[derive(Debug)]
pub struct Connection<S> {
    stream: S,
}

impl<S: Read + Write> Connection<S> {
    pub fn new(stream: S) -> Self {
        Connection { stream }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }

    pub fn send(&mut self, msg: &Message) -> Result<()> {
        self.stream.write_all(&encode(msg)?)?;
        self.stream.flush()?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Message> {
        let mut header = [0u8; 4];
        read_exact_or_closed(&mut self.stream, &mut header)?;
        let len = u32::from_be_bytes(header) as usize;
        let mut body = vec![0u8; len];
        read_exact_or_closed(&mut self.stream, &mut body)?;
        decode_body(&body)
    }

    fn expect<T>(&mut self, what: &str, pick: impl FnOnce(Message) -> Option<T>) -> Result<T> {
        let msg = self.recv()?;
        let kind = msg.kind();
        pick(msg).ok_or_else(|| Error::Protocol {
            message: format!("expected {what}, got {kind}"),
            prefix: String::new(),
        })
    }
}

fn read_exact_or_closed(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof | io::ErrorKind::ConnectionReset | io::ErrorKind::BrokenPipe => {
            Error::ConnectionClosed
        }
        _ => Error::Io(e),
    })
}

/// Server-side view of a remote camera. Scoring against bursts happens
/// locally on the server's copy of the scene.
pub struct RemoteBackend<S> {
    conn: Connection<S>,
    scene: SceneModel,
}

impl<S: Read + Write> RemoteBackend<S> {
    pub fn new(conn: Connection<S>, scene: SceneModel) -> Self {
        RemoteBackend { conn, scene }
    }

    pub fn connection(&mut self) -> &mut Connection<S> {
        &mut self.conn
    }

    fn detections(&mut self, t_s: u64, seconds: u64) -> Result<Vec<ObjectivePoint>> {
        (t_s..t_s + seconds)
            .map(|t| {
                let (at, point) = self.conn.expect("detections", |m| match m {
                    Message::Detections { t_s, accuracy, power_w } => Some((t_s, ObjectivePoint::new(accuracy, power_w))),
                    _ => None,
                })?;
                if at != t {
                    return Err(Error::Protocol {
                        message: format!("detections for t={at}, expected t={t}"),
                        prefix: String::new(),
                    });
                }
                Ok(point)
            })
            .collect()
    }
}

impl<S: Read + Write> Backend for RemoteBackend<S> {
    fn verify(&mut self, t_s: u64, seconds: u64, frames: u32) -> Result<(GroundTruthBurst, Vec<ObjectivePoint>)> {
        let gt = ground_truth_config();
        self.conn.send(&Message::ConfigUpdate {
            threshold: gt.threshold,
            bitrate_kbps: gt.bitrate_kbps,
            phase: Phase::Verify,
            t_s,
            duration_s: seconds,
            burst_frames: Some(frames),
        })?;
        let count = self.conn.expect("gt_burst_begin", |m| match m {
            Message::GtBurstBegin { frames, .. } => Some(frames),
            _ => None,
        })?;
        for _ in 0..count {
            self.conn.expect("frame", |m| matches!(m, Message::Frame { .. }).then_some(()))?;
        }
        let (end_t, regime, seed) = self.conn.expect("gt_burst_end", |m| match m {
            Message::GtBurstEnd { t_s, regime, seed } => Some((t_s, regime, seed)),
            _ => None,
        })?;
        let burst = GroundTruthBurst {
            t_s: end_t as f64,
            frames: count,
            regime,
            seed,
        };
        Ok((burst, self.detections(t_s, seconds)?))
    }

    fn stream(&mut self, t_s: u64, seconds: u64, config: &Configuration, phase: Phase) -> Result<Vec<ObjectivePoint>> {
        self.conn.send(&Message::config_update(config, phase, t_s, seconds))?;
        self.detections(t_s, seconds)
    }

    fn evaluate(&mut self, burst: &GroundTruthBurst, config: &Configuration) -> Result<f64> {
        Ok(self.scene.evaluate_burst(burst, config))
    }
}

/// What the server agent produced. `trace` is kept even when `result`
/// is an error.
#[derive(Debug)]
pub struct ServerRun {
    pub trace: Vec<TraceEvent>,
    pub result: Result<Summary>,
}

/// Drives the online loop against a camera on the other end of `stream`.
pub fn run_server_agent<S: Read + Write>(stream: S, params: LoopParams, scene: &SceneModel) -> ServerRun {
    let mut lp = match OnlineLoop::new(params.clone(), scene) {
        Ok(lp) => lp,
        Err(e) => {
            return ServerRun {
                trace: Vec::new(),
                result: Err(e),
            }
        }
    };
    let mut backend = RemoteBackend::new(Connection::new(stream), scene.clone());
    let result = serve_session(&mut lp, &mut backend, params.seed);
    ServerRun {
        trace: lp.trace().to_vec(),
        result,
    }
}

fn serve_session<S: Read + Write>(lp: &mut OnlineLoop, backend: &mut RemoteBackend<S>, seed: u64) -> Result<Summary> {
    let conn = backend.connection();
    conn.send(&Message::Hello {
        role: Role::Server,
        seed,
    })?;
    conn.expect("camera hello", |m| match m {
        Message::Hello { role: Role::Camera, .. } => Some(()),
        _ => None,
    })?;
    let summary = lp.run(backend)?;
    let conn = backend.connection();
    conn.send(&Message::Summary {
        summary: summary.clone(),
    })?;
    conn.send(&Message::Bye)?;
    conn.expect("bye", |m| matches!(m, Message::Bye).then_some(()))?;
    Ok(summary)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraReport {
    pub seed: u64,
    pub phases: usize,
    pub bursts: usize,
    pub seconds_streamed: u64,
    pub applied: Vec<(u64, Phase, Configuration)>,
    pub summary: Option<Summary>,
}

/// Camera side: simulates capture from `scene`, answers config updates and
/// burst requests, and exits on `bye`. Burst frames carry PGM bytes cycled
/// from `frames` when given, otherwise a detection reference.
pub fn run_camera_agent<S: Read + Write>(stream: S, scene: SceneModel, frames: &[Frame]) -> Result<CameraReport> {
    let mut conn = Connection::new(stream);
    let seed = conn.expect("server hello", |m| match m {
        Message::Hello { role: Role::Server, seed } => Some(seed),
        _ => None,
    })?;
    conn.send(&Message::Hello {
        role: Role::Camera,
        seed,
    })?;
    let mut sim = SimBackend::new(scene, seed);
    let mut report = CameraReport {
        seed,
        ..CameraReport::default()
    };
    loop {
        match conn.recv()? {
            Message::ConfigUpdate {
                threshold,
                bitrate_kbps,
                phase,
                t_s,
                duration_s,
                burst_frames,
            } => {
                let config = Configuration::online(threshold, bitrate_kbps);
                report.phases += 1;
                report.applied.push((t_s, phase, config));
                let points = if phase == Phase::Verify {
                    let count = burst_frames.unwrap_or(0);
                    let (burst, points) = sim.capture(t_s, duration_s, count);
                    conn.send(&Message::GtBurstBegin { t_s, frames: count })?;
                    for i in 0..count {
                        let payload = if frames.is_empty() {
                            FramePayload::DetectionRef(format!("t{t_s}/f{i}"))
                        } else {
                            FramePayload::Pgm(frames[i as usize % frames.len()].to_pgm())
                        };
                        conn.send(&Message::Frame {
                            frame_index: i,
                            t_s,
                            payload,
                        })?;
                    }
                    conn.send(&Message::GtBurstEnd {
                        t_s,
                        regime: burst.regime,
                        seed: burst.seed,
                    })?;
                    report.bursts += 1;
                    points
                } else {
                    sim.measure(t_s, duration_s, &config)
                };
                for (i, p) in points.iter().enumerate() {
                    conn.send(&Message::Detections {
                        t_s: t_s + i as u64,
                        accuracy: p.accuracy,
                        power_w: p.power_w,
                    })?;
                }
                report.seconds_streamed += duration_s;
            }
            Message::Summary { summary } => report.summary = Some(summary),
            Message::Bye => {
                // the peer may already be gone
                let _ = conn.send(&Message::Bye);
                return Ok(report);
            }
            other => {
                return Err(Error::Protocol {
                    message: format!("unexpected {} on camera", other.kind()),
                    prefix: String::new(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bye_is_fifteen_bytes() {
        let bytes = encode(&Message::Bye).unwrap();
        assert_eq!(&bytes[..4], &15u32.to_be_bytes());
        assert_eq!(&bytes[4..], br#"{"type": "bye"}"#);
    }

    #[test]
    fn config_update_round_trips_exactly() {
        let m = Message::config_update(&Configuration::online(0.01, 400), Phase::Exploit, 70, 60);
        let bytes = encode(&m).unwrap();
        match decode(&bytes).unwrap() {
            Decoded::Complete { message, rest } => {
                assert_eq!(message, m);
                assert!(rest.is_empty());
                let Message::ConfigUpdate { threshold, bitrate_kbps, .. } = message else {
                    panic!()
                };
                assert_eq!(threshold, 0.01);
                assert_eq!(bitrate_kbps, 400);
            }
            Decoded::NeedMore => panic!("complete frame"),
        }
    }

    #[test]
    fn short_input_needs_more() {
        let bytes = encode(&Message::Bye).unwrap();
        for cut in 0..bytes.len() {
            assert_eq!(decode(&bytes[..cut]).unwrap(), Decoded::NeedMore);
        }
    }

    #[test]
    fn concatenated_frames_split() {
        let a = Message::Hello {
            role: Role::Server,
            seed: 7,
        };
        let b = Message::Detections {
            t_s: 3,
            accuracy: 0.91,
            power_w: 4.97,
        };
        let mut bytes = encode(&a).unwrap();
        let second = encode(&b).unwrap();
        bytes.extend_from_slice(&second);
        let Decoded::Complete { message, rest } = decode(&bytes).unwrap() else {
            panic!()
        };
        assert_eq!(message, a);
        assert_eq!(rest, &second[..]);
    }

    #[test]
    fn malformed_bodies_rejected_with_prefix() {
        let frame = |body: &[u8]| {
            let mut v = (body.len() as u32).to_be_bytes().to_vec();
            v.extend_from_slice(body);
            v
        };
        let err = decode(&frame(br#"{"type": "launch"}"#)).unwrap_err();
        match err {
            Error::Protocol { prefix, .. } => assert_eq!(prefix, r#"{"type": "launch"}"#),
            e => panic!("{e}"),
        }
        assert!(decode(&frame(b"not json")).is_err());
        assert!(decode(&frame(br#"{"type":"config_update","threshold":0.5,"bitrate_kbps":400,"phase":"explore","t_s":0,"duration_s":4}"#)).is_err());
    }

    #[test]
    fn frame_payloads_round_trip() {
        for payload in [FramePayload::Pgm(vec![0, 255, 7]), FramePayload::DetectionRef("t0/f1".into())] {
            let m = Message::Frame {
                frame_index: 1,
                t_s: 0,
                payload,
            };
            let bytes = encode(&m).unwrap();
            let Decoded::Complete { message, .. } = decode(&bytes).unwrap() else {
                panic!()
            };
            assert_eq!(message, m);
        }
    }
}
