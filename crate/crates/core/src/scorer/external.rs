//! Client for scorers running out of process (model sidecars).
//!
//! A connection carries many in-flight score requests at once; responses are
//! matched back to callers by request id, so the peer may answer out of
//! order. A malformed line or EOF breaks the connection and fails every
//! pending request with a retryable transport error; when the client knows
//! how to reconnect, the next attempt re-runs the handshake on a fresh
//! connection.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};

use super::protocol::{encode, Request, Response, WireToken, PROTOCOL_VERSION};
use super::{HandshakeInfo, ScoreRequest, Scorer, ScorerDescriptor, ScorerKind, VocabularySource};
use crate::error::{Error, Result, ScoreError};
use crate::stimulus::{Token, Vocabulary};

/// Natural-log values from the wire become log2 here and nowhere else.
pub fn ln_to_log2(ln_p: f64) -> f64 {
    ln_p / std::f64::consts::LN_2
}

// float32 softmax output can land a hair above zero
const POSITIVE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// `cmd:program arg...`, spoken to over stdin/stdout.
    Command(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err(Error::Config("empty tcp address".into()));
            }
            Ok(Endpoint::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("cmd:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(Error::Config("empty scorer command".into()));
            }
            Ok(Endpoint::Command(argv))
        } else {
            Err(Error::Config(format!(
                "unrecognised endpoint {s:?} (expected tcp://host:port or cmd:program args)"
            )))
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
            Endpoint::Command(argv) => write!(f, "cmd:{}", argv.join(" ")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub timeout: Duration,
    pub max_attempts: u32,
    pub max_in_flight: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            max_in_flight: 64,
        }
    }
}

pub type ReadHalf = Box<dyn Read + Send>;
pub type WriteHalf = Box<dyn Write + Send>;
pub type Connector =
    Box<dyn Fn() -> io::Result<(ReadHalf, WriteHalf, Option<Child>)> + Send + Sync>;

#[derive(Debug)]
enum Reply {
    LnP(f64),
    Ids(Vec<u32>),
}

type ReplySender = mpsc::Sender<Result<Reply, ScoreError>>;

struct Connection {
    writer: Mutex<WriteHalf>,
    pending: Mutex<HashMap<u64, ReplySender>>,
    broken: Mutex<Option<String>>,
}

impl Connection {
    fn broken_reason(&self) -> Option<String> {
        self.broken.lock().unwrap().clone()
    }

    fn fail_all(&self, reason: &str) {
        let mut broken = self.broken.lock().unwrap();
        if broken.is_none() {
            *broken = Some(reason.to_string());
        }
        drop(broken);
        for (_, tx) in self.pending.lock().unwrap().drain() {
            let _ = tx.send(Err(ScoreError::Transport(reason.to_string())));
        }
    }

    fn route(&self, id: u64, reply: Result<Reply, ScoreError>) {
        match self.pending.lock().unwrap().remove(&id) {
            Some(tx) => {
                let _ = tx.send(reply);
            }
            None => debug!("dropping response for unknown or expired request {id}"),
        }
    }

    fn send(&self, request: &Request) -> io::Result<()> {
        let line = encode(request);
        let mut w = self.writer.lock().unwrap();
        w.write_all(line.as_bytes())?;
        w.flush()
    }
}

fn read_record(reader: &mut impl BufRead) -> Result<Response> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Err(Error::Protocol("connection closed during handshake".into()));
    }
    serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Protocol(format!("malformed record {:?}: {e}", line.trim_end())))
}

fn write_record(writer: &mut dyn Write, request: &Request) -> Result<()> {
    writer.write_all(encode(request).as_bytes())?;
    writer.flush()?;
    Ok(())
}

/// Runs hello + vocab on a fresh stream pair.
fn handshake(
    reader: &mut impl BufRead,
    writer: &mut dyn Write,
) -> Result<(HandshakeInfo, Vec<WireToken>)> {
    write_record(
        writer,
        &Request::Hello {
            proto: PROTOCOL_VERSION,
        },
    )?;
    let info = match read_record(reader)? {
        Response::Hello {
            proto,
            model,
            vocab_size,
        } => {
            if proto != PROTOCOL_VERSION {
                return Err(Error::Protocol(format!(
                    "protocol version mismatch: client speaks {PROTOCOL_VERSION}, scorer speaks {proto}"
                )));
            }
            HandshakeInfo {
                proto,
                model,
                vocab_size,
            }
        }
        Response::Error { reason, .. } => {
            return Err(Error::Protocol(format!("handshake rejected: {reason}")))
        }
        other => return Err(Error::Protocol(format!("expected hello, got {other:?}"))),
    };

    write_record(writer, &Request::Vocab {})?;
    let mut tokens = Vec::with_capacity(info.vocab_size);
    loop {
        match read_record(reader)? {
            Response::Vocab {
                tokens: chunk,
                more,
            } => {
                tokens.extend(chunk);
                if !more {
                    break;
                }
            }
            Response::Error { reason, .. } => {
                return Err(Error::Protocol(format!(
                    "vocabulary fetch failed: {reason}"
                )))
            }
            other => return Err(Error::Protocol(format!("expected vocab, got {other:?}"))),
        }
    }
    if tokens.len() != info.vocab_size {
        return Err(Error::Protocol(format!(
            "hello announced {} tokens but vocab returned {}",
            info.vocab_size,
            tokens.len()
        )));
    }
    Ok((info, tokens))
}

fn spawn_reader(conn: Arc<Connection>, mut reader: BufReader<ReadHalf>) {
    thread::Builder::new()
        .name("scorer-reader".into())
        .spawn(move || {
            let mut line = String::new();
            loop {
                line.clear();
                match reader.read_line(&mut line) {
                    Ok(0) => {
                        conn.fail_all("scorer closed the connection");
                        return;
                    }
                    Ok(_) => {}
                    Err(e) => {
                        conn.fail_all(&format!("read failed: {e}"));
                        return;
                    }
                }
                let record = line.trim_end();
                if record.is_empty() {
                    continue;
                }
                match serde_json::from_str::<Response>(record) {
                    Ok(Response::Score { id, ln_p }) => conn.route(id, Ok(Reply::LnP(ln_p))),
                    Ok(Response::Tokenize { id, ids }) => conn.route(id, Ok(Reply::Ids(ids))),
                    Ok(Response::Error {
                        id: Some(id),
                        reason,
                    }) => conn.route(id, Err(ScoreError::Remote(reason))),
                    Ok(Response::Error { id: None, reason }) => {
                        warn!("scorer error without request id: {reason}");
                    }
                    Ok(other) => {
                        conn.fail_all(&format!("unexpected record {other:?}"));
                        return;
                    }
                    Err(e) => {
                        conn.fail_all(&format!("malformed response {record:?}: {e}"));
                        return;
                    }
                }
            }
        })
        .expect("spawn scorer reader thread");
}

struct Slots {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct ExternalScorer {
    current: Mutex<Arc<Connection>>,
    connector: Option<Connector>,
    children: Mutex<Vec<Child>>,
    next_id: AtomicU64,
    slots: Slots,
    options: ClientOptions,
    info: HandshakeInfo,
}

impl ExternalScorer {
    /// Connects to `endpoint`, runs the handshake and returns the scorer with
    /// the model vocabulary (special tokens already excluded).
    pub fn connect(endpoint: &Endpoint, options: ClientOptions) -> Result<(Self, Vocabulary)> {
        let endpoint = endpoint.clone();
        let connector: Connector = Box::new(move || open(&endpoint));
        Self::with_connector(connector, options)
    }

    pub fn with_connector(
        connector: Connector,
        options: ClientOptions,
    ) -> Result<(Self, Vocabulary)> {
        let (r, w, child) = connector()?;
        Self::establish(r, w, child, Some(connector), options)
    }

    /// Single-use connection over existing streams; no reconnection.
    pub fn from_streams(
        reader: ReadHalf,
        writer: WriteHalf,
        options: ClientOptions,
    ) -> Result<(Self, Vocabulary)> {
        Self::establish(reader, writer, None, None, options)
    }

    fn establish(
        reader: ReadHalf,
        mut writer: WriteHalf,
        child: Option<Child>,
        connector: Option<Connector>,
        options: ClientOptions,
    ) -> Result<(Self, Vocabulary)> {
        if options.max_in_flight == 0 || options.max_attempts == 0 {
            return Err(Error::Config(
                "max_in_flight and max_attempts must be positive".into(),
            ));
        }
        let mut reader = BufReader::new(reader);
        let (info, wire_tokens) = handshake(&mut reader, &mut writer)?;
        let vocab = build_vocabulary(&wire_tokens)?;
        let conn = Arc::new(Connection {
            writer: Mutex::new(writer),
            pending: Mutex::new(HashMap::new()),
            broken: Mutex::new(None),
        });
        spawn_reader(conn.clone(), reader);
        let scorer = ExternalScorer {
            current: Mutex::new(conn),
            connector,
            children: Mutex::new(child.into_iter().collect()),
            next_id: AtomicU64::new(0),
            slots: Slots {
                used: Mutex::new(0),
                freed: Condvar::new(),
                limit: options.max_in_flight,
            },
            options,
            info,
        };
        Ok((scorer, vocab))
    }

    pub fn info(&self) -> &HandshakeInfo {
        &self.info
    }

    /// Live connection, reconnecting first if the current one is broken and
    /// a connector is available.
    fn connection(&self) -> Result<Arc<Connection>, ScoreError> {
        let mut current = self.current.lock().unwrap();
        let Some(reason) = current.broken_reason() else {
            return Ok(current.clone());
        };
        let Some(connector) = &self.connector else {
            return Err(ScoreError::Transport(reason));
        };
        warn!("scorer connection lost ({reason}); reconnecting");
        let transport = |e: String| ScoreError::Transport(e);
        let (r, mut w, child) = connector().map_err(|e| transport(e.to_string()))?;
        let mut reader = BufReader::new(r);
        let (info, _) = handshake(&mut reader, &mut w).map_err(|e| transport(e.to_string()))?;
        if info.vocab_size != self.info.vocab_size || info.model != self.info.model {
            return Err(transport(format!(
                "reconnected to a different model ({} / {} tokens)",
                info.model, info.vocab_size
            )));
        }
        let conn = Arc::new(Connection {
            writer: Mutex::new(w),
            pending: Mutex::new(HashMap::new()),
            broken: Mutex::new(None),
        });
        spawn_reader(conn.clone(), reader);
        if let Some(child) = child {
            self.children.lock().unwrap().push(child);
        }
        *current = conn.clone();
        Ok(conn)
    }

    fn call(&self, make: impl Fn(u64) -> Request) -> Result<Reply, ScoreError> {
        let _slot = self.slots.acquire();
        let mut last = ScoreError::Timeout { attempts: 0 };
        for attempt in 1..=self.options.max_attempts {
            let conn = match self.connection() {
                Ok(c) => c,
                Err(e) => {
                    last = e;
                    continue;
                }
            };
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            let (tx, rx) = mpsc::channel();
            conn.pending.lock().unwrap().insert(id, tx);
            if let Some(reason) = conn.broken_reason() {
                conn.pending.lock().unwrap().remove(&id);
                last = ScoreError::Transport(reason);
                continue;
            }
            if let Err(e) = conn.send(&make(id)) {
                conn.fail_all(&format!("write failed: {e}"));
                last = ScoreError::Transport(e.to_string());
                continue;
            }
            match rx.recv_timeout(self.options.timeout) {
                Ok(Ok(reply)) => return Ok(reply),
                Ok(Err(e)) if e.is_retryable() => last = e,
                Ok(Err(e)) => return Err(e),
                Err(_) => {
                    conn.pending.lock().unwrap().remove(&id);
                    last = ScoreError::Timeout { attempts: attempt };
                }
            }
            debug!("request attempt {attempt} failed: {last}");
        }
        Err(last)
    }

    /// Tokenizes raw text with the scorer's own tokenizer.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, ScoreError> {
        match self.call(|id| Request::Tokenize {
            id,
            text: text.to_string(),
        })? {
            Reply::Ids(ids) => Ok(ids),
            Reply::LnP(_) => Err(ScoreError::Transport(
                "score reply to tokenize request".into(),
            )),
        }
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        for child in self.children.lock().unwrap().iter_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Scorer for ExternalScorer {
    fn descriptor(&self) -> ScorerDescriptor {
        ScorerDescriptor {
            name: self.info.model.clone(),
            kind: ScorerKind::External,
            vocabulary_source: VocabularySource::FetchedFromScorer,
        }
    }

    fn score(&self, request: ScoreRequest<'_>) -> Result<f64, ScoreError> {
        if request.context.is_empty() {
            return Err(ScoreError::EmptyContext);
        }
        let reply = self.call(|id| Request::Score {
            id,
            context: request.context.to_vec(),
            target: request.target,
        })?;
        let ln_p = match reply {
            Reply::LnP(v) => v,
            Reply::Ids(_) => {
                return Err(ScoreError::Transport(
                    "tokenize reply to score request".into(),
                ))
            }
        };
        if !ln_p.is_finite() || ln_p > POSITIVE_SLACK {
            return Err(ScoreError::InvalidValue(ln_p));
        }
        Ok(ln_to_log2(ln_p.min(0.0)))
    }

    fn handshake(&self) -> Option<HandshakeInfo> {
        Some(self.info.clone())
    }
}

fn build_vocabulary(wire: &[WireToken]) -> Result<Vocabulary> {
    let tokens = wire
        .iter()
        .map(|t| Token::new(t.id, t.surface.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut vocab = Vocabulary::new(tokens)?;
    for t in wire.iter().filter(|t| t.special) {
        vocab.exclude(t.id)?;
    }
    Ok(vocab)
}

fn open(endpoint: &Endpoint) -> io::Result<(ReadHalf, WriteHalf, Option<Child>)> {
    match endpoint {
        Endpoint::Tcp(addr) => {
            let stream = TcpStream::connect(addr)?;
            stream.set_nodelay(true)?;
            let reader = stream.try_clone()?;
            Ok((Box::new(reader), Box::new(stream), None))
        }
        Endpoint::Command(argv) => {
            let mut child = Command::new(&argv[0])
                .args(&argv[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            Ok((Box::new(stdout), Box::new(stdin), Some(child)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            "tcp://127.0.0.1:9000".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("127.0.0.1:9000".into())
        );
        assert_eq!(
            "cmd:python3 -m refscorer --mode causal"
                .parse::<Endpoint>()
                .unwrap(),
            Endpoint::Command(vec![
                "python3".into(),
                "-m".into(),
                "refscorer".into(),
                "--mode".into(),
                "causal".into()
            ])
        );
        assert!("http://x".parse::<Endpoint>().is_err());
        assert!("cmd:".parse::<Endpoint>().is_err());
    }

    #[test]
    fn log_base_conversion() {
        assert!((ln_to_log2(0.5f64.ln()) + 1.0).abs() < 1e-15);
        assert_eq!(ln_to_log2(0.0), 0.0);
    }
}
