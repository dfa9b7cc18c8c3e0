//! Wire protocol for the round exchange: length-prefixed binary frames over
//! either in-process byte channels or TCP loopback.
//!
//! Layout is fixed little-endian. A frame is `length: u32` (payload bytes),
//! `msg_type: u8`, then the payload. Vectors are a `u32` count followed by
//! f64 values.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};

use crate::algorithms::{
    choose_orientation, lambda_at, local_update_fedagrac, local_update_fedprox,
    server_round_fedavg, server_round_fednova, AlgorithmKind, CalibrationState,
};
use crate::engine::{evaluate, round_bytes, RunConfig, RunOutput};
use crate::error::{FedsimError, Result};
use crate::heterogeneity::draw_steps;
use crate::numeric::{weighted_sum, ParamVector, RngStream};
use crate::oracle::best_oracle;

pub const MAX_PAYLOAD: usize = 64 * 1024 * 1024;

const TYPE_BROADCAST: u8 = 1;
const TYPE_REPORT: u8 = 2;
const TYPE_KBAR: u8 = 3;
const TYPE_ORIENTATION: u8 = 4;
const TYPE_SHUTDOWN: u8 = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    Broadcast {
        round: u32,
        model: Vec<f64>,
        nu: Option<Vec<f64>>,
    },
    Report {
        client_id: u32,
        model: Vec<f64>,
        steps: u32,
    },
    KbarAnnounce {
        round: u32,
        kbar: f64,
    },
    Orientation {
        client_id: u32,
        vector: Vec<f64>,
    },
    Shutdown,
}

fn put_vector(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FedsimError::Protocol {
                offset: self.base + self.pos,
                message: "truncated payload".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn vector(&mut self) -> Result<Vec<f64>> {
        let count = self.u32()? as usize;
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            v.push(self.f64()?);
        }
        Ok(v)
    }
}

/// Serializes a message into one complete frame.
pub fn encode(body: &MessageBody) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let msg_type = match body {
        MessageBody::Broadcast { round, model, nu } => {
            payload.extend_from_slice(&round.to_le_bytes());
            put_vector(&mut payload, model);
            match nu {
                Some(v) => {
                    payload.push(1);
                    put_vector(&mut payload, v);
                }
                None => payload.push(0),
            }
            TYPE_BROADCAST
        }
        MessageBody::Report {
            client_id,
            model,
            steps,
        } => {
            payload.extend_from_slice(&client_id.to_le_bytes());
            put_vector(&mut payload, model);
            payload.extend_from_slice(&steps.to_le_bytes());
            TYPE_REPORT
        }
        MessageBody::KbarAnnounce { round, kbar } => {
            payload.extend_from_slice(&round.to_le_bytes());
            payload.extend_from_slice(&kbar.to_le_bytes());
            TYPE_KBAR
        }
        MessageBody::Orientation { client_id, vector } => {
            payload.extend_from_slice(&client_id.to_le_bytes());
            put_vector(&mut payload, vector);
            TYPE_ORIENTATION
        }
        MessageBody::Shutdown => TYPE_SHUTDOWN,
    };
    if payload.len() > MAX_PAYLOAD {
        return Err(FedsimError::Protocol {
            offset: 0,
            message: format!("payload {} exceeds 64 MiB cap", payload.len()),
        });
    }
    let mut frame = Vec::with_capacity(5 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.push(msg_type);
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Decodes the first complete frame; returns the body and the byte count
/// consumed (trailing bytes are the caller's remainder).
pub fn decode(bytes: &[u8]) -> Result<(MessageBody, usize)> {
    if bytes.len() < 5 {
        return Err(FedsimError::Protocol {
            offset: bytes.len(),
            message: "truncated frame header".into(),
        });
    }
    let length = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    if length > MAX_PAYLOAD {
        return Err(FedsimError::Protocol {
            offset: 0,
            message: format!("declared payload {length} exceeds 64 MiB cap"),
        });
    }
    let msg_type = bytes[4];
    if bytes.len() < 5 + length {
        return Err(FedsimError::Protocol {
            offset: bytes.len(),
            message: format!("truncated frame: header declares {length} payload bytes"),
        });
    }
    let mut cur = Cursor {
        bytes: &bytes[5..5 + length],
        pos: 0,
        base: 5,
    };
    let body = match msg_type {
        TYPE_BROADCAST => {
            let round = cur.u32()?;
            let model = cur.vector()?;
            let nu = if cur.u8()? != 0 { Some(cur.vector()?) } else { None };
            MessageBody::Broadcast { round, model, nu }
        }
        TYPE_REPORT => MessageBody::Report {
            client_id: cur.u32()?,
            model: cur.vector()?,
            steps: cur.u32()?,
        },
        TYPE_KBAR => MessageBody::KbarAnnounce {
            round: cur.u32()?,
            kbar: cur.f64()?,
        },
        TYPE_ORIENTATION => MessageBody::Orientation {
            client_id: cur.u32()?,
            vector: cur.vector()?,
        },
        TYPE_SHUTDOWN => MessageBody::Shutdown,
        other => {
            return Err(FedsimError::Protocol {
                offset: 4,
                message: format!("unknown type {other}"),
            })
        }
    };
    if cur.pos != length {
        return Err(FedsimError::Protocol {
            offset: 5 + cur.pos,
            message: format!("length mismatch: {} payload bytes unread", length - cur.pos),
        });
    }
    Ok((body, 5 + length))
}

/// One end of a bidirectional frame pipe.
pub trait Duplex: Send {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()>;
    fn recv_frame(&mut self) -> Result<Vec<u8>>;

    fn send(&mut self, body: &MessageBody) -> Result<()> {
        self.send_frame(&encode(body)?)
    }

    fn recv(&mut self) -> Result<MessageBody> {
        let frame = self.recv_frame()?;
        let (body, consumed) = decode(&frame)?;
        if consumed != frame.len() {
            return Err(FedsimError::Protocol {
                offset: consumed,
                message: "trailing bytes after frame".into(),
            });
        }
        Ok(body)
    }
}

/// In-process transport: each frame travels as one owned byte buffer.
pub struct ChannelDuplex {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl ChannelDuplex {
    pub fn pair() -> (ChannelDuplex, ChannelDuplex) {
        let (a_tx, b_rx) = channel();
        let (b_tx, a_rx) = channel();
        (
            ChannelDuplex { tx: a_tx, rx: a_rx },
            ChannelDuplex { tx: b_tx, rx: b_rx },
        )
    }
}

impl Duplex for ChannelDuplex {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.tx.send(frame.to_vec()).map_err(|_| FedsimError::Protocol {
            offset: 0,
            message: "peer closed channel".into(),
        })
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        self.rx.recv().map_err(|_| FedsimError::Protocol {
            offset: 0,
            message: "peer closed channel".into(),
        })
    }
}

/// TCP loopback transport.
pub struct TcpDuplex {
    stream: TcpStream,
}

impl TcpDuplex {
    pub fn new(stream: TcpStream) -> Self {
        TcpDuplex { stream }
    }
}

impl Duplex for TcpDuplex {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.stream.write_all(frame)?;
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        let mut header = [0u8; 5];
        self.stream.read_exact(&mut header)?;
        let length = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
        if length > MAX_PAYLOAD {
            return Err(FedsimError::Protocol {
                offset: 0,
                message: format!("declared payload {length} exceeds 64 MiB cap"),
            });
        }
        let mut frame = vec![0u8; 5 + length];
        frame[..5].copy_from_slice(&header);
        self.stream.read_exact(&mut frame[5..])?;
        Ok(frame)
    }
}

fn expect_vector(v: Vec<f64>) -> Result<ParamVector> {
    ParamVector::new(v)
}

/// Client-side round loop. Pulls broadcasts, runs the local update, pushes
/// the report, and for the calibrated method services the second phase
/// (K-bar announce, orientation upload).
pub fn client_loop<D: Duplex>(config: &RunConfig, client: usize, conn: &mut D) -> Result<()> {
    // hello: an empty orientation identifies this connection
    conn.send(&MessageBody::Orientation {
        client_id: client as u32,
        vector: vec![],
    })?;
    let mut nu_i = config.objective.exact_gradient(client, &config.x_init)?;
    loop {
        match conn.recv()? {
            MessageBody::Shutdown => return Ok(()),
            MessageBody::Broadcast { round, model, nu } => {
                let round = round as usize;
                let x = expect_vector(model)?;
                let plan = draw_steps(
                    &config.step_schedule,
                    round,
                    config.num_clients(),
                    &config.weights,
                    config.seed,
                )?;
                let k_i = plan.steps[client];
                let mut stream = RngStream::for_client_round(config.seed, client, round);
                let report = match &config.algorithm {
                    AlgorithmKind::FedaGrac { schedule, .. } => {
                        let nu_global = expect_vector(nu.ok_or_else(|| FedsimError::Protocol {
                            offset: 0,
                            message: "broadcast missing nu".into(),
                        })?)?;
                        local_update_fedagrac(
                            &x,
                            &nu_global,
                            &nu_i,
                            k_i,
                            config.eta,
                            lambda_at(schedule, round),
                            &config.objective,
                            client,
                            &mut stream,
                        )
                    }
                    AlgorithmKind::FedProx { mu_prox } => local_update_fedprox(
                        &x, k_i, config.eta, *mu_prox, &config.objective, client, &mut stream,
                    ),
                    AlgorithmKind::FedAvg | AlgorithmKind::FedNova => {
                        crate::algorithms::local_update_fedavg(
                            &x, k_i, config.eta, &config.objective, client, &mut stream,
                        )
                    }
                };
                let report = match report {
                    Ok(r) => r,
                    Err(e) => {
                        conn.send(&MessageBody::Shutdown)?;
                        return Err(e);
                    }
                };
                conn.send(&MessageBody::Report {
                    client_id: client as u32,
                    model: report.final_model.values().to_vec(),
                    steps: k_i as u32,
                })?;
                if matches!(config.algorithm, AlgorithmKind::FedaGrac { .. }) {
                    let kbar = match conn.recv()? {
                        MessageBody::KbarAnnounce { kbar, .. } => kbar,
                        MessageBody::Shutdown => return Ok(()),
                        other => {
                            return Err(FedsimError::Protocol {
                                offset: 0,
                                message: format!("expected kbar announce, got {other:?}"),
                            })
                        }
                    };
                    let policy = match &config.algorithm {
                        AlgorithmKind::FedaGrac { policy, .. } => *policy,
                        _ => unreachable!(),
                    };
                    let orientation = choose_orientation(policy, k_i, kbar, &report);
                    nu_i = orientation.clone();
                    conn.send(&MessageBody::Orientation {
                        client_id: client as u32,
                        vector: orientation.values().to_vec(),
                    })?;
                }
            }
            other => {
                return Err(FedsimError::Protocol {
                    offset: 0,
                    message: format!("unexpected message {other:?}"),
                })
            }
        }
    }
}

/// Coordinator over already-established connections, one per client, sorted
/// by the hello's client id before the first round.
pub fn coordinate<D: Duplex>(config: &RunConfig, mut conns: Vec<D>) -> Result<RunOutput> {
    config.validate()?;
    let m = config.num_clients();
    if conns.len() != m {
        return Err(FedsimError::Protocol {
            offset: 0,
            message: format!("expected {m} connections, got {}", conns.len()),
        });
    }
    // map connections to client ids via hello messages
    let mut labeled: Vec<(usize, D)> = Vec::with_capacity(m);
    for mut conn in conns.drain(..) {
        match conn.recv()? {
            MessageBody::Orientation { client_id, vector } if vector.is_empty() => {
                labeled.push((client_id as usize, conn));
            }
            other => {
                return Err(FedsimError::Protocol {
                    offset: 0,
                    message: format!("expected hello, got {other:?}"),
                })
            }
        }
    }
    labeled.sort_by_key(|(id, _)| *id);
    let mut conns: Vec<D> = labeled.into_iter().map(|(_, c)| c).collect();

    let oracle = if config.compute_oracle {
        best_oracle(&config.objective, &config.weights).ok()
    } else {
        None
    };
    let f_star = oracle.as_ref().map(|o| o.f_star);
    let is_fedagrac = matches!(config.algorithm, AlgorithmKind::FedaGrac { .. });

    let mut x = config.x_init.clone();
    let mut nu = if is_fedagrac {
        Some(CalibrationState::init(&config.objective, &config.weights, &x)?.nu)
    } else {
        None
    };
    let mut records = vec![evaluate(config, &x, 0, 0.0, (0, 0), f_star)?];
    let mut failure = None;

    'rounds: for round in 1..=config.rounds {
        for conn in conns.iter_mut() {
            conn.send(&MessageBody::Broadcast {
                round: round as u32,
                model: x.values().to_vec(),
                nu: nu.as_ref().map(|v| v.values().to_vec()),
            })?;
        }
        let mut finals: Vec<Option<(ParamVector, usize)>> = (0..m).map(|_| None).collect();
        for conn in conns.iter_mut() {
            match conn.recv()? {
                MessageBody::Report {
                    client_id,
                    model,
                    steps,
                } => {
                    finals[client_id as usize] = Some((expect_vector(model)?, steps as usize));
                }
                MessageBody::Shutdown => {
                    failure = Some(format!("client aborted during round {round}"));
                    break 'rounds;
                }
                other => {
                    return Err(FedsimError::Protocol {
                        offset: 0,
                        message: format!("expected report, got {other:?}"),
                    })
                }
            }
        }
        let reports: Vec<(ParamVector, usize)> = finals
            .into_iter()
            .map(|f| {
                f.ok_or(FedsimError::Protocol {
                    offset: 0,
                    message: "missing client report".into(),
                })
            })
            .collect::<Result<_>>()?;
        let kbar: f64 = config
            .weights
            .iter()
            .zip(&reports)
            .map(|(w, (_, k))| w * *k as f64)
            .sum();

        // bytes accounting reuses the engine's rules via lightweight reports
        let pseudo: Vec<crate::algorithms::ClientReport> = reports
            .iter()
            .map(|(model, k)| crate::algorithms::ClientReport {
                final_model: model.clone(),
                steps: *k,
                first_grad: ParamVector::zeros(0),
                avg_grad: ParamVector::zeros(0),
                bytes_sent: 0,
            })
            .collect();
        let bytes = round_bytes(config, &pseudo, kbar);

        x = match &config.algorithm {
            AlgorithmKind::FedNova => server_round_fednova(&x, &pseudo, &config.weights, config.eta)?,
            _ => server_round_fedavg(&pseudo, &config.weights)?,
        };

        if is_fedagrac {
            for conn in conns.iter_mut() {
                conn.send(&MessageBody::KbarAnnounce {
                    round: round as u32,
                    kbar,
                })?;
            }
            let mut orientations: Vec<Option<ParamVector>> = (0..m).map(|_| None).collect();
            for conn in conns.iter_mut() {
                match conn.recv()? {
                    MessageBody::Orientation { client_id, vector } => {
                        orientations[client_id as usize] = Some(expect_vector(vector)?);
                    }
                    other => {
                        return Err(FedsimError::Protocol {
                            offset: 0,
                            message: format!("expected orientation, got {other:?}"),
                        })
                    }
                }
            }
            let collected: Vec<ParamVector> = orientations
                .into_iter()
                .map(|o| {
                    o.ok_or(FedsimError::Protocol {
                        offset: 0,
                        message: "missing orientation".into(),
                    })
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&ParamVector> = collected.iter().collect();
            nu = Some(weighted_sum(&config.weights, &refs)?);
        }

        if round % config.eval_every == 0 || round == config.rounds {
            records.push(evaluate(config, &x, round, kbar, bytes, f_star)?);
        }
    }

    for conn in conns.iter_mut() {
        let _ = conn.send(&MessageBody::Shutdown);
    }
    Ok(RunOutput {
        records,
        final_model: x,
        oracle,
        failure,
    })
}

/// Full run over in-process byte channels: M client threads, one coordinator.
pub fn run_channels(config: &RunConfig) -> Result<RunOutput> {
    let m = config.num_clients();
    let mut server_side = Vec::with_capacity(m);
    let mut client_side = Vec::with_capacity(m);
    for _ in 0..m {
        let (a, b) = ChannelDuplex::pair();
        server_side.push(a);
        client_side.push(b);
    }
    std::thread::scope(|scope| {
        for (client, mut conn) in client_side.into_iter().enumerate() {
            let config = &*config;
            scope.spawn(move || {
                let _ = client_loop(config, client, &mut conn);
            });
        }
        coordinate(config, server_side)
    })
}

/// Full run over TCP loopback. `port` 0 picks an ephemeral port.
pub fn run_tcp(config: &RunConfig, port: u16) -> Result<RunOutput> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    let addr = listener.local_addr()?;
    let m = config.num_clients();
    std::thread::scope(|scope| {
        for client in 0..m {
            let config = &*config;
            scope.spawn(move || {
                let stream = TcpStream::connect(addr).expect("loopback connect");
                stream.set_nodelay(true).ok();
                let mut conn = TcpDuplex::new(stream);
                let _ = client_loop(config, client, &mut conn);
            });
        }
        let mut conns = Vec::with_capacity(m);
        for _ in 0..m {
            let (stream, _) = listener.accept()?;
            stream.set_nodelay(true).ok();
            conns.push(TcpDuplex::new(stream));
        }
        coordinate(config, conns)
    })
}
