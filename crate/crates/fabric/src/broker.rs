//! Embedded topic-log broker.
//!
//! Each topic is an append-only sequence of result envelopes numbered from
//! 0 without gaps. With a directory configured, every publish is appended
//! to `<dir>/<topic>.log` as a length-prefixed frame and fsynced before the
//! sequence number is returned.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Cursor, Read, Seek, SeekFrom};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use log::{debug, warn};
use parking_lot::Mutex;

use crate::canonical::{from_canonical, to_canonical};
use crate::envelope::ResultEnvelope;
use crate::wire::{self, read_frame, write_frame, Message, TopicRecord};

pub fn results_topic(experiment_id: &str) -> String {
    format!("results/{experiment_id}")
}

fn topic_file_name(topic: &str) -> String {
    let safe: String =
        topic.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
    format!("{safe}.log")
}

/// Reads a topic log, truncating a torn or corrupt tail in place.
pub fn read_topic_log(path: &Path) -> io::Result<Vec<ResultEnvelope>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut cur = Cursor::new(&bytes[..]);
    let mut out = Vec::new();
    let mut good = 0u64;
    loop {
        let parsed = match read_frame(&mut cur) {
            Ok(None) => break,
            Ok(Some(frame)) => std::str::from_utf8(&frame)
                .ok()
                .and_then(|t| from_canonical::<TopicRecord>(t).ok())
                .filter(|r| r.seq == out.len() as u64),
            Err(_) => None,
        };
        match parsed {
            Some(r) => {
                out.push(r.envelope);
                good = cur.position();
            }
            None => {
                warn!("topic log {}: corrupt tail after {} records, truncating", path.display(), out.len());
                OpenOptions::new().write(true).open(path)?.set_len(good)?;
                break;
            }
        }
    }
    Ok(out)
}

struct Topic {
    records: Vec<ResultEnvelope>,
    file: Option<File>,
    subscribers: Vec<Sender<TopicRecord>>,
}

pub struct Broker {
    dir: Option<PathBuf>,
    topics: Mutex<HashMap<String, Arc<Mutex<Topic>>>>,
}

impl Broker {
    pub fn in_memory() -> Arc<Self> {
        Arc::new(Self { dir: None, topics: Mutex::new(HashMap::new()) })
    }

    /// A broker persisting topics under `dir`; existing logs are reloaded.
    pub fn open(dir: &Path) -> io::Result<Arc<Self>> {
        fs::create_dir_all(dir)?;
        Ok(Arc::new(Self { dir: Some(dir.to_path_buf()), topics: Mutex::new(HashMap::new()) }))
    }

    pub fn topic_path(&self, topic: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(topic_file_name(topic)))
    }

    fn topic(&self, name: &str) -> io::Result<Arc<Mutex<Topic>>> {
        let mut topics = self.topics.lock();
        if let Some(t) = topics.get(name) {
            return Ok(t.clone());
        }
        let (records, file) = match self.topic_path(name) {
            Some(path) => {
                let records = read_topic_log(&path)?;
                let mut f = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
                f.seek(SeekFrom::End(0))?;
                (records, Some(f))
            }
            None => (Vec::new(), None),
        };
        let t = Arc::new(Mutex::new(Topic { records, file, subscribers: Vec::new() }));
        topics.insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Appends durably, then pushes to live subscribers.
    pub fn publish(&self, topic: &str, envelope: ResultEnvelope) -> io::Result<u64> {
        let t = self.topic(topic)?;
        let mut t = t.lock();
        let seq = t.records.len() as u64;
        let record = TopicRecord { seq, envelope };
        if let Some(f) = t.file.as_mut() {
            let text = to_canonical(&record).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            write_frame(f, text.as_bytes())?;
            f.sync_data()?;
        }
        t.subscribers.retain(|s| s.send(record.clone()).is_ok());
        t.records.push(record.envelope);
        Ok(seq)
    }

    /// Records from `from` onward, then the live tail, in sequence order.
    pub fn subscribe(&self, topic: &str, from: u64) -> io::Result<Receiver<TopicRecord>> {
        let t = self.topic(topic)?;
        let mut t = t.lock();
        let (tx, rx) = unbounded();
        for (i, e) in t.records.iter().enumerate().skip(from as usize) {
            let _ = tx.send(TopicRecord { seq: i as u64, envelope: e.clone() });
        }
        t.subscribers.push(tx);
        Ok(rx)
    }

    pub fn poll(&self, topic: &str, cursor: u64, max_items: usize) -> io::Result<(Vec<TopicRecord>, u64)> {
        let t = self.topic(topic)?;
        let t = t.lock();
        let start = (cursor as usize).min(t.records.len());
        let end = start.saturating_add(max_items).min(t.records.len());
        let records = t.records[start..end]
            .iter()
            .enumerate()
            .map(|(i, e)| TopicRecord { seq: (start + i) as u64, envelope: e.clone() })
            .collect();
        Ok((records, end.max(cursor as usize) as u64))
    }

    pub fn len(&self, topic: &str) -> io::Result<u64> {
        Ok(self.topic(topic)?.lock().records.len() as u64)
    }

    /// Drops live subscriber channels, ending their streams.
    pub fn disconnect_subscribers(&self) {
        for t in self.topics.lock().values() {
            t.lock().subscribers.clear();
        }
    }
}

/// Serves one broker-protocol connection whose first message was `first`.
pub fn serve_connection(broker: &Broker, mut stream: TcpStream, first: Message, stop: &AtomicBool, allow_sub: bool) {
    let mut next = Some(first);
    loop {
        let msg = match next.take() {
            Some(m) => m,
            None => match wire::recv(&mut stream) {
                Ok(Some(m)) => m,
                _ => return,
            },
        };
        let reply = match msg {
            Message::Pub { topic, envelope } => match broker.publish(&topic, envelope) {
                Ok(seq) => Message::Ack { seq: Some(seq), records: vec![], next_cursor: None },
                Err(e) => Message::Error { message: format!("append failed: {e}") },
            },
            Message::Poll { topic, cursor, max_items } => match broker.poll(&topic, cursor, max_items) {
                Ok((records, next)) => Message::Ack { seq: None, records, next_cursor: Some(next) },
                Err(e) => Message::Error { message: e.to_string() },
            },
            Message::Sub { topic, from } if allow_sub => {
                stream_subscription(broker, stream, &topic, from, stop);
                return;
            }
            Message::Sub { .. } => Message::Error { message: "subscriptions disabled".into() },
            other => Message::Error { message: format!("unexpected message on broker connection: {other:?}") },
        };
        if wire::send(&mut stream, &reply).is_err() {
            return;
        }
    }
}

fn stream_subscription(broker: &Broker, mut stream: TcpStream, topic: &str, from: u64, stop: &AtomicBool) {
    let rx = match broker.subscribe(topic, from) {
        Ok(rx) => rx,
        Err(e) => {
            let _ = wire::send(&mut stream, &Message::Error { message: e.to_string() });
            return;
        }
    };
    while !stop.load(Ordering::Relaxed) {
        match rx.recv_timeout(Duration::from_millis(200)) {
            Ok(record) => {
                if wire::send(&mut stream, &Message::Record { record }).is_err() {
                    return;
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

/// Tracks open sockets so a stopping server can sever them.
#[derive(Default, Clone)]
pub(crate) struct ConnectionSet(Arc<Mutex<HashMap<u64, TcpStream>>>, Arc<AtomicU64>);

impl ConnectionSet {
    pub(crate) fn add(&self, s: &TcpStream) -> Option<u64> {
        let id = self.1.fetch_add(1, Ordering::Relaxed);
        s.try_clone().ok().map(|c| {
            self.0.lock().insert(id, c);
            id
        })
    }

    pub(crate) fn remove(&self, id: Option<u64>) {
        if let Some(id) = id {
            self.0.lock().remove(&id);
        }
    }

    pub(crate) fn close_all(&self) {
        for (_, s) in self.0.lock().drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

/// Stand-alone TCP front end for a broker.
pub struct BrokerServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: ConnectionSet,
    accept: Option<JoinHandle<()>>,
}

impl BrokerServer {
    pub fn bind(addr: &str, broker: Arc<Broker>) -> io::Result<Self> {
        Self::bind_with(addr, broker, true)
    }

    /// `allow_sub = false` refuses subscriptions, forcing consumers to poll.
    pub fn bind_with(addr: &str, broker: Arc<Broker>, allow_sub: bool) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns = ConnectionSet::default();
        let (stop2, conns2) = (stop.clone(), conns.clone());
        let accept = thread::Builder::new().name("broker-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::Relaxed) {
                    break;
                }
                let Ok(mut stream) = stream else { continue };
                let (broker, stop, conns) = (broker.clone(), stop2.clone(), conns2.clone());
                thread::spawn(move || {
                    let id = conns.add(&stream);
                    if let Ok(Some(first)) = wire::recv(&mut stream) {
                        serve_connection(&broker, stream, first, &stop, allow_sub);
                    }
                    conns.remove(id);
                });
            }
        })?;
        Ok(Self { addr: local, stop, conns, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and severs every open connection.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        self.conns.close_all();
    }
}

impl Drop for BrokerServer {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.shutdown();
        }
    }
}

fn connect(addr: &str, timeout: Duration) -> io::Result<TcpStream> {
    let mut last = io::Error::new(io::ErrorKind::AddrNotAvailable, format!("cannot resolve {addr}"));
    for a in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

pub(crate) fn connect_addr(addr: &str, timeout: Duration) -> io::Result<TcpStream> {
    connect(addr, timeout)
}

/// Request/reply client for PUB and POLL.
pub struct BrokerClient {
    addr: String,
    stream: Option<TcpStream>,
    timeout: Duration,
}

impl BrokerClient {
    pub fn new(addr: &str) -> Self {
        Self { addr: addr.into(), stream: None, timeout: Duration::from_secs(10) }
    }

    fn request(&mut self, msg: &Message) -> io::Result<Message> {
        if self.stream.is_none() {
            let s = connect(&self.addr, self.timeout)?;
            s.set_read_timeout(Some(self.timeout))?;
            self.stream = Some(s);
        }
        let s = self.stream.as_mut().expect("connected");
        let reply = wire::send(s, msg).and_then(|_| wire::recv(s));
        match reply {
            Ok(Some(Message::Error { message })) => Err(io::Error::other(message)),
            Ok(Some(m)) => Ok(m),
            Ok(None) => {
                self.stream = None;
                Err(io::ErrorKind::ConnectionAborted.into())
            }
            Err(e) => {
                self.stream = None;
                Err(e)
            }
        }
    }

    pub fn publish(&mut self, topic: &str, envelope: &ResultEnvelope) -> io::Result<u64> {
        match self.request(&Message::Pub { topic: topic.into(), envelope: envelope.clone() })? {
            Message::Ack { seq: Some(seq), .. } => Ok(seq),
            other => Err(io::Error::other(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn poll(&mut self, topic: &str, cursor: u64, max_items: usize) -> io::Result<(Vec<TopicRecord>, u64)> {
        match self.request(&Message::Poll { topic: topic.into(), cursor, max_items })? {
            Message::Ack { records, next_cursor: Some(next), .. } => Ok((records, next)),
            other => Err(io::Error::other(format!("unexpected reply {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
}

impl Backoff {
    pub const PUBLISHER: Backoff = Backoff { base: Duration::from_millis(500), cap: Duration::from_secs(30) };

    pub fn delay(&self, failures: u32) -> Duration {
        let factor = 2u32.saturating_pow(failures.saturating_sub(1).min(16));
        self.base.saturating_mul(factor).min(self.cap)
    }
}

pub const PUBLISH_BUFFER: usize = 10_000;

type AckCallback = Box<dyn FnOnce(u64) + Send>;

/// Sink for results on the worker side.
pub trait ResultSink: Send + Sync {
    /// Queues `envelope`; `on_ack` runs once the broker has durably stored it.
    fn publish(&self, topic: &str, envelope: ResultEnvelope, on_ack: Option<AckCallback>);
}

impl ResultSink for Broker {
    fn publish(&self, topic: &str, envelope: ResultEnvelope, on_ack: Option<AckCallback>) {
        match Broker::publish(self, topic, envelope) {
            Ok(seq) => {
                if let Some(cb) = on_ack {
                    cb(seq)
                }
            }
            Err(e) => panic!("result log append failed: {e}"),
        }
    }
}

/// Buffered, retrying publisher to a remote broker. `publish` blocks only
/// when `PUBLISH_BUFFER` envelopes are already waiting.
pub struct Publisher {
    tx: Mutex<Option<Sender<(String, ResultEnvelope, Option<AckCallback>)>>>,
    pending: Arc<AtomicUsize>,
    worker: Mutex<Option<JoinHandle<()>>>,
    stop: Arc<AtomicBool>,
}

impl Publisher {
    pub fn start(addr: &str, backoff: Backoff) -> Self {
        Self::with_capacity(addr, backoff, PUBLISH_BUFFER)
    }

    pub fn with_capacity(addr: &str, backoff: Backoff, capacity: usize) -> Self {
        let (tx, rx) = bounded::<(String, ResultEnvelope, Option<AckCallback>)>(capacity);
        let pending = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let (pending2, stop2, addr) = (pending.clone(), stop.clone(), addr.to_string());
        let worker = thread::Builder::new()
            .name("publisher".into())
            .spawn(move || {
                let mut client = BrokerClient::new(&addr);
                for (topic, env, cb) in rx {
                    let mut failures = 0u32;
                    loop {
                        match client.publish(&topic, &env) {
                            Ok(seq) => {
                                if let Some(cb) = cb {
                                    cb(seq);
                                }
                                break;
                            }
                            Err(e) => {
                                if stop2.load(Ordering::Relaxed) {
                                    return;
                                }
                                failures += 1;
                                let d = backoff.delay(failures);
                                debug!("publish of {} failed ({e}); retry in {:?}", env.task_id, d);
                                thread::sleep(d);
                            }
                        }
                    }
                    pending2.fetch_sub(1, Ordering::SeqCst);
                }
            })
            .expect("spawn publisher");
        Self { tx: Mutex::new(Some(tx)), pending, worker: Mutex::new(Some(worker)), stop }
    }

    /// Envelopes queued or in flight.
    pub fn pending(&self) -> usize {
        self.pending.load(Ordering::SeqCst)
    }

    /// Waits until every queued envelope is acknowledged.
    pub fn flush(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.pending() > 0 {
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(10));
        }
        true
    }

    /// Abandons anything not yet delivered and stops the sender thread.
    pub fn close(&self) {
        self.stop.store(true, Ordering::Relaxed);
        self.tx.lock().take();
        if let Some(h) = self.worker.lock().take() {
            let _ = h.join();
        }
    }
}

impl ResultSink for Publisher {
    fn publish(&self, topic: &str, envelope: ResultEnvelope, on_ack: Option<AckCallback>) {
        let tx = self.tx.lock().clone();
        if let Some(tx) = tx {
            self.pending.fetch_add(1, Ordering::SeqCst);
            if tx.send((topic.into(), envelope, on_ack)).is_err() {
                self.pending.fetch_sub(1, Ordering::SeqCst);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsumerMode {
    /// Push first, falling back to polling after repeated failures.
    Auto,
    PollOnly,
}

pub const FALLBACK_AFTER_FAILURES: u32 = 3;

#[derive(Debug, Default)]
pub struct ConsumerStats {
    pub push_failures: AtomicU64,
    pub switches_to_poll: AtomicU64,
    pub switches_to_push: AtomicU64,
    pub polls: AtomicU64,
}

/// Remote consumer of one topic, delivering records in sequence order from
/// a cursor. Survives broker restarts by reconnecting from its cursor.
pub struct RemoteConsumer {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    pub stats: Arc<ConsumerStats>,
}

impl RemoteConsumer {
    pub fn start(addr: &str, topic: &str, from: u64, mode: ConsumerMode, retry: Duration) -> (Self, Receiver<TopicRecord>) {
        let (tx, rx) = unbounded();
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(ConsumerStats::default());
        let (addr, topic, stop2, stats2) = (addr.to_string(), topic.to_string(), stop.clone(), stats.clone());
        let handle = thread::Builder::new()
            .name("consumer".into())
            .spawn(move || consume_loop(&addr, &topic, from, mode, retry, &tx, &stop2, &stats2))
            .expect("spawn consumer");
        (Self { stop, handle: Some(handle), stats }, rx)
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for RemoteConsumer {
    fn drop(&mut self) {
        self.halt();
    }
}

const POLL_BATCH: usize = 256;

#[allow(clippy::too_many_arguments)]
fn consume_loop(
    addr: &str,
    topic: &str,
    from: u64,
    mode: ConsumerMode,
    retry: Duration,
    out: &Sender<TopicRecord>,
    stop: &AtomicBool,
    stats: &ConsumerStats,
) {
    let mut cursor = from;
    let mut pushing = mode == ConsumerMode::Auto;
    let mut failures = 0u32;
    let mut client = BrokerClient::new(addr);
    client.timeout = Duration::from_secs(2);
    while !stop.load(Ordering::Relaxed) {
        if pushing {
            match push_session(addr, topic, &mut cursor, out, stop) {
                Ok(()) => return,
                Err(e) => {
                    failures += 1;
                    stats.push_failures.fetch_add(1, Ordering::Relaxed);
                    debug!("subscription to {topic} failed ({e}), failure {failures}");
                    if failures >= FALLBACK_AFTER_FAILURES {
                        pushing = false;
                        stats.switches_to_poll.fetch_add(1, Ordering::Relaxed);
                    }
                    thread::sleep(retry);
                }
            }
        } else {
            match client.poll(topic, cursor, POLL_BATCH) {
                Ok((records, next)) => {
                    stats.polls.fetch_add(1, Ordering::Relaxed);
                    let caught_up = records.len() < POLL_BATCH;
                    for r in records {
                        if r.seq == cursor {
                            cursor += 1;
                            if out.send(r).is_err() {
                                return;
                            }
                        }
                    }
                    cursor = cursor.max(next);
                    if mode == ConsumerMode::Auto && failures > 0 && caught_up {
                        // Polling works again; give push another chance.
                        failures = 0;
                        pushing = true;
                        stats.switches_to_push.fetch_add(1, Ordering::Relaxed);
                    } else if caught_up {
                        thread::sleep(retry);
                    }
                }
                Err(_) => thread::sleep(retry),
            }
        }
    }
}

/// Streams a SUB session; `Ok` only when asked to stop.
fn push_session(
    addr: &str,
    topic: &str,
    cursor: &mut u64,
    out: &Sender<TopicRecord>,
    stop: &AtomicBool,
) -> io::Result<()> {
    let mut stream = connect(addr, Duration::from_secs(2))?;
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    wire::send(&mut stream, &Message::Sub { topic: topic.into(), from: *cursor })?;
    let mut reader = BufReader::new(stream.try_clone()?);
    loop {
        if stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        match read_message_patiently(&mut reader, stop) {
            Ok(Some(Message::Record { record })) => {
                if record.seq == *cursor {
                    *cursor += 1;
                    if out.send(record).is_err() {
                        return Ok(());
                    }
                }
            }
            Ok(Some(Message::Error { message })) => return Err(io::Error::other(message)),
            Ok(Some(_)) => return Err(io::Error::other("unexpected message on subscription")),
            Ok(None) => return Err(io::ErrorKind::ConnectionAborted.into()),
            Err(e) => return Err(e),
        }
    }
}

/// Reads one frame, tolerating read timeouts between frames (they only
/// serve to notice `stop`). Partial frames keep accumulating.
fn read_message_patiently<R: Read>(r: &mut R, stop: &AtomicBool) -> io::Result<Option<Message>> {
    let mut buf = Vec::new();
    let mut need = 4usize;
    let mut have_len = false;
    loop {
        if stop.load(Ordering::Relaxed) {
            return Err(io::ErrorKind::Interrupted.into());
        }
        let mut chunk = vec![0u8; need - buf.len()];
        match r.read(&mut chunk) {
            Ok(0) => {
                return if buf.is_empty() && !have_len { Ok(None) } else { Err(io::ErrorKind::UnexpectedEof.into()) }
            }
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted) => continue,
            Err(e) => return Err(e),
        }
        if buf.len() == need {
            if !have_len {
                let n = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
                if n > wire::MAX_FRAME {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
                }
                have_len = true;
                buf.clear();
                need = n;
                if n == 0 {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, "empty message frame"));
                }
            } else {
                let text = std::str::from_utf8(&buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                return from_canonical(text).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e));
            }
        }
    }
}

pub(crate) fn read_patiently<R: Read>(r: &mut R, stop: &AtomicBool) -> io::Result<Option<Message>> {
    read_message_patiently(r, stop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn env(i: u64) -> ResultEnvelope {
        ResultEnvelope::valid(&format!("e:{i}:1"), vec![i as f64, 0.5], 1.0, 2.0, "w")
    }

    #[test]
    fn publish_sequences_and_poll() {
        let b = Broker::in_memory();
        assert_eq!(b.poll("t", 0, 10).unwrap(), (vec![], 0));
        for i in 0..5 {
            assert_eq!(b.publish("t", env(i)).unwrap(), i);
        }
        let (recs, next) = b.poll("t", 0, 2).unwrap();
        assert_eq!(recs.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(next, 2);
        let (recs, next) = b.poll("t", 4, 10).unwrap();
        assert_eq!((recs.len(), next), (1, 5));
    }

    #[test]
    fn subscribers_replay_then_follow() {
        let b = Broker::in_memory();
        for i in 0..5 {
            b.publish("t", env(i)).unwrap();
        }
        let a = b.subscribe("t", 0).unwrap();
        let c = b.subscribe("t", 3).unwrap();
        b.publish("t", env(5)).unwrap();
        let seqs = |rx: &Receiver<TopicRecord>| rx.try_iter().map(|r| r.seq).collect::<Vec<_>>();
        assert_eq!(seqs(&a), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(seqs(&c), vec![3, 4, 5]);
    }

    #[test]
    fn log_survives_reopen_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        {
            let b = Broker::open(dir.path()).unwrap();
            for i in 0..3 {
                b.publish("results/x", env(i)).unwrap();
            }
        }
        let path = dir.path().join("results_x.log");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[0, 0, 1, 0, b'{']).unwrap();
        drop(f);
        let b = Broker::open(dir.path()).unwrap();
        assert_eq!(b.len("results/x").unwrap(), 3);
        assert_eq!(b.publish("results/x", env(3)).unwrap(), 3);
        assert_eq!(read_topic_log(&path).unwrap().len(), 4);
    }

    #[test]
    fn backoff_schedule() {
        let b = Backoff::PUBLISHER;
        let secs: Vec<f64> = (1..=8).map(|k| b.delay(k).as_secs_f64()).collect();
        assert_eq!(secs, vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 30.0, 30.0]);
    }
}
