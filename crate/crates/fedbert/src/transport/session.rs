//! Session logic on top of the frame layer: a lock-step TCP server, the
//! matching client, and a single-threaded in-process loopback.
//!
//! The loopback is the reference: it pushes every message through the same
//! encode/parse calls a socket run uses, so weights are truncated to single
//! precision at identical points and a socket run with the same config and
//! seed lands on bitwise-identical global weights.
//!
//! The server never touches training data. Clients hold their shards, train
//! locally, and put only weight tensors and counts on the wire; local losses
//! stay on the clients, which is why transport round logs carry no losses.

use std::io::{BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::data::LabeledText;
use crate::fed::{
    aggregate, derive_seed, local_train, partition, ClientState, ClientUpdate, FedError,
    FederationConfig, RoundLog,
};
use crate::model::{init_params, AdamHyper, EncoderConfig, ParameterSet};
use crate::tokenizer::Vocabulary;
use crate::transport::wire::{
    deframe, done_payload, error_payload, frame, global_payload, join_payload, parse_done,
    parse_error, parse_global, parse_join, parse_update, update_payload, MsgType, WireError,
};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("expected {expected} clients by the join deadline, got {joined}")]
    JoinDeadline { expected: usize, joined: usize },
    #[error("client {client} sent an update for round {got}, expected round {expected}")]
    WrongRound { client: u32, expected: u32, got: u32 },
    #[error("peer reported an error: {0}")]
    Remote(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// Which way a message travels; used by the loopback tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToServer,
    ToClient,
}

struct Conn {
    client_id: u32,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

fn accept_joined_clients(
    listener: &TcpListener,
    expected: usize,
    join_timeout: Duration,
) -> Result<Vec<Conn>, TransportError> {
    let deadline = Instant::now() + join_timeout;
    listener.set_nonblocking(true)?;
    let mut conns: Vec<Conn> = Vec::with_capacity(expected);
    while conns.len() < expected {
        let stream = match listener.accept() {
            Ok((stream, _)) => stream,
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(TransportError::JoinDeadline { expected, joined: conns.len() });
                }
                std::thread::sleep(Duration::from_millis(5));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        let remaining = deadline.saturating_duration_since(Instant::now());
        stream.set_read_timeout(Some(remaining.max(Duration::from_millis(1))))?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let (msg, payload) = match deframe(&mut reader) {
            Err(WireError::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) =>
            {
                return Err(TransportError::JoinDeadline { expected, joined: conns.len() });
            }
            other => other?,
        };
        if msg != MsgType::Join {
            return Err(TransportError::Protocol(format!(
                "expected JOIN as the first message, got {msg:?}"
            )));
        }
        let client_id = parse_join(&payload)?;
        if client_id as usize >= expected {
            return Err(TransportError::Protocol(format!(
                "client id {client_id} out of range for {expected} clients"
            )));
        }
        if conns.iter().any(|c| c.client_id == client_id) {
            return Err(TransportError::Protocol(format!("duplicate JOIN for client {client_id}")));
        }
        stream.set_read_timeout(None)?;
        conns.push(Conn { client_id, reader, writer: stream });
    }
    conns.sort_by_key(|c| c.client_id);
    Ok(conns)
}

/// Drives the round protocol over real connections. Expects every client to
/// connect and JOIN within `join_timeout`, then runs `config.rounds` lock-step
/// rounds and closes with DONE. Aggregation never starts until all updates
/// for the round are in.
pub fn run_server(
    listener: &TcpListener,
    config: &FederationConfig,
    enc_cfg: &EncoderConfig,
    seed: u64,
    join_timeout: Duration,
) -> Result<(ParameterSet, Vec<RoundLog>), TransportError> {
    config.validate()?;
    let mut conns = accept_joined_clients(listener, config.n_clients, join_timeout)?;

    let mut global = init_params(enc_cfg, seed);
    let mut logs = Vec::with_capacity(config.rounds as usize);
    for round in 0..config.rounds {
        if let Some(k) = config.reinit_every {
            if round > 0 && round % k == 0 {
                global = init_params(enc_cfg, derive_seed(seed, round, u32::MAX));
            }
        }
        let started = Instant::now();
        let broadcast = frame(MsgType::Global, &global_payload(round, &global)?);
        for conn in &mut conns {
            conn.writer.write_all(&broadcast)?;
        }
        let mut updates = Vec::with_capacity(conns.len());
        for conn in &mut conns {
            let (msg, payload) = deframe(&mut conn.reader)?;
            match msg {
                MsgType::Update => {}
                MsgType::Error => return Err(TransportError::Remote(parse_error(&payload))),
                other => {
                    return Err(TransportError::Protocol(format!(
                        "expected UPDATE from client {}, got {other:?}",
                        conn.client_id
                    )))
                }
            }
            let (got, n_examples, params) = parse_update(&payload)?;
            if got != round {
                let text = format!("update for round {got} arrived during round {round}");
                let _ = conn.writer.write_all(&frame(MsgType::Error, &error_payload(&text)));
                return Err(TransportError::WrongRound {
                    client: conn.client_id,
                    expected: round,
                    got,
                });
            }
            // Losses are client-private and never transmitted.
            updates.push(ClientUpdate {
                client_id: conn.client_id,
                round,
                params,
                n_examples,
                loss: 0.0,
            });
        }
        global = aggregate(&updates, config.aggregation)?;
        logs.push(RoundLog {
            round,
            client_losses: Vec::new(),
            agg_mode: config.aggregation,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    let done = frame(MsgType::Done, &done_payload(config.rounds));
    for conn in &mut conns {
        conn.writer.write_all(&done)?;
    }
    Ok((global, logs))
}

/// Connects a participant: JOIN, then answer every GLOBAL with a trained
/// UPDATE until DONE arrives. Returns the round count from DONE.
pub fn run_client(
    stream: TcpStream,
    client_id: u32,
    shard: Vec<LabeledText>,
    vocab: &Vocabulary,
    enc_cfg: &EncoderConfig,
    local_epochs: u32,
    batch_size: usize,
    seed: u64,
) -> Result<u32, TransportError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    writer.write_all(&frame(MsgType::Join, &join_payload(client_id)))?;
    // The placeholder weights are replaced by the first broadcast before any
    // training touches them.
    let mut client = ClientState::new(
        client_id,
        shard,
        vocab,
        enc_cfg.max_len,
        ParameterSet::from_tensors(Vec::new()),
    );
    loop {
        let (msg, payload) = deframe(&mut reader)?;
        match msg {
            MsgType::Global => {
                let (round, global) = parse_global(&payload)?;
                let update = local_train(
                    &mut client,
                    &global,
                    enc_cfg,
                    round,
                    local_epochs,
                    batch_size,
                    AdamHyper::default(),
                    derive_seed(seed, round, client_id),
                )?;
                let up = update_payload(round, update.n_examples, &update.params)?;
                writer.write_all(&frame(MsgType::Update, &up))?;
            }
            MsgType::Done => return Ok(parse_done(&payload)?),
            MsgType::Error => return Err(TransportError::Remote(parse_error(&payload))),
            other => {
                return Err(TransportError::Protocol(format!(
                    "unexpected {other:?} from the server"
                )))
            }
        }
    }
}

/// The whole protocol in one thread, no sockets. Every message passes through
/// the same payload encode/parse pair the socket path uses, and `tap` sees
/// each one with its direction, which is what the serialization audit hooks
/// into.
pub fn run_loopback<F>(
    config: &FederationConfig,
    enc_cfg: &EncoderConfig,
    vocab: &Vocabulary,
    train: &[LabeledText],
    seed: u64,
    mut tap: F,
) -> Result<(ParameterSet, Vec<RoundLog>), TransportError>
where
    F: FnMut(Direction, MsgType, &[u8]),
{
    config.validate()?;
    if vocab.size() != enc_cfg.vocab_size {
        return Err(FedError::InvalidConfig(format!(
            "vocabulary has {} tokens but the encoder expects {}",
            vocab.size(),
            enc_cfg.vocab_size
        ))
        .into());
    }
    let shards = partition(train, config)?;
    let mut clients: Vec<ClientState> = shards
        .into_iter()
        .enumerate()
        .map(|(i, shard)| {
            ClientState::new(
                i as u32,
                shard,
                vocab,
                enc_cfg.max_len,
                ParameterSet::from_tensors(Vec::new()),
            )
        })
        .collect();
    for client in &clients {
        tap(Direction::ToServer, MsgType::Join, &join_payload(client.client_id));
    }

    let mut global = init_params(enc_cfg, seed);
    let mut logs = Vec::with_capacity(config.rounds as usize);
    for round in 0..config.rounds {
        if let Some(k) = config.reinit_every {
            if round > 0 && round % k == 0 {
                global = init_params(enc_cfg, derive_seed(seed, round, u32::MAX));
            }
        }
        let started = Instant::now();
        let gp = global_payload(round, &global)?;
        for _ in &clients {
            tap(Direction::ToClient, MsgType::Global, &gp);
        }
        let mut updates = Vec::with_capacity(clients.len());
        for client in &mut clients {
            let (got, broadcast) = parse_global(&gp)?;
            let update = local_train(
                client,
                &broadcast,
                enc_cfg,
                got,
                config.local_epochs,
                config.batch_size,
                AdamHyper::default(),
                derive_seed(seed, got, client.client_id),
            )?;
            let up = update_payload(got, update.n_examples, &update.params)?;
            tap(Direction::ToServer, MsgType::Update, &up);
            let (round_back, n_examples, params) = parse_update(&up)?;
            updates.push(ClientUpdate {
                client_id: client.client_id,
                round: round_back,
                params,
                n_examples,
                loss: 0.0,
            });
        }
        global = aggregate(&updates, config.aggregation)?;
        logs.push(RoundLog {
            round,
            client_losses: Vec::new(),
            agg_mode: config.aggregation,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    let dp = done_payload(config.rounds);
    for _ in &clients {
        tap(Direction::ToClient, MsgType::Done, &dp);
    }
    Ok((global, logs))
}
