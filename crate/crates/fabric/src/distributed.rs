//! Coordinator/worker runner over TCP. The coordinator and the broker share
//! one listening port: the first frame of a connection decides whether it
//! is a worker session (REGISTER) or a broker session (SUB/PUB/POLL).

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use log::{debug, info, warn};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::{self, serve_connection, Backoff, Broker, ConnectionSet, Publisher, ResultSink};
use crate::canonical::SCHEMA_VERSION;
use crate::clock;
use crate::envelope::{ResultEnvelope, TaskEnvelope};
use crate::execute::execute;
use crate::registry::Registry;
use crate::runners::{publish_closed, Runner, RunnerKind};
use crate::wire::{self, Message};

pub const DEFAULT_HEARTBEAT: Duration = Duration::from_secs(5);
pub const DEFAULT_WORKER_GRACE: u32 = 3;
pub const DEFAULT_REQUEUE_LIMIT: u32 = 5;
pub const REQUEUE_EXHAUSTED: &str = "requeue limit exceeded after worker losses";

#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    pub listen_address: String,
    pub experiment_id: String,
    pub topic: String,
    pub manifest: BTreeMap<String, String>,
    pub heartbeat_interval: Duration,
    pub worker_grace: u32,
    pub requeue_limit: u32,
    /// Total slots expected across workers; reported by `slots()`.
    pub expected_slots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerState {
    Idle,
    Busy,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerInfo {
    pub worker_id: String,
    pub slots: usize,
    pub running: usize,
    pub last_heartbeat: f64,
    pub state: WorkerState,
}

enum Event {
    Submit(TaskEnvelope),
    Register { worker_id: String, slots: usize, conn: u64, writer: Sender<Message>, stream: TcpStream },
    Heartbeat { worker_id: String, conn: u64 },
    TaskAck { worker_id: String, conn: u64, task_id: String },
    Disconnected { worker_id: String, conn: u64 },
    Snapshot(Sender<Vec<WorkerInfo>>),
    Shutdown(Sender<()>),
}

struct Worker {
    slots: usize,
    conn: u64,
    writer: Sender<Message>,
    stream: TcpStream,
    in_flight: BTreeMap<String, (TaskEnvelope, u32)>,
    last_heartbeat: Instant,
    last_heartbeat_wall: f64,
}

struct State {
    cfg: CoordinatorConfig,
    broker: Arc<Broker>,
    queue: VecDeque<(TaskEnvelope, u32)>,
    workers: BTreeMap<String, Worker>,
    lost: BTreeMap<String, WorkerInfo>,
}

impl State {
    fn dispatch(&mut self) {
        while !self.queue.is_empty() {
            let pick = self
                .workers
                .iter()
                .filter(|(_, w)| w.in_flight.len() < w.slots)
                .min_by_key(|(id, w)| (w.in_flight.len(), (*id).clone()))
                .map(|(id, _)| id.clone());
            let Some(id) = pick else { break };
            let (env, requeues) = self.queue.pop_front().expect("non-empty");
            let w = self.workers.get_mut(&id).expect("picked worker");
            if w.writer.send(Message::Task { envelope: env.clone() }).is_err() {
                self.queue.push_front((env, requeues));
                self.lose(&id, "writer closed");
                continue;
            }
            debug!("dispatched {} to {id}", env.task_id);
            w.in_flight.insert(env.task_id.clone(), (env, requeues));
        }
    }

    fn lose(&mut self, worker_id: &str, why: &str) {
        let Some(w) = self.workers.remove(worker_id) else { return };
        warn!("worker {worker_id} lost ({why}); requeueing {} task(s)", w.in_flight.len());
        let _ = w.stream.shutdown(std::net::Shutdown::Both);
        self.lost.insert(
            worker_id.to_string(),
            WorkerInfo {
                worker_id: worker_id.to_string(),
                slots: w.slots,
                running: 0,
                last_heartbeat: w.last_heartbeat_wall,
                state: WorkerState::Lost,
            },
        );
        for (_, (env, requeues)) in w.in_flight.into_iter().rev() {
            let requeues = requeues + 1;
            if requeues > self.cfg.requeue_limit {
                let now = clock::now();
                let r = ResultEnvelope::failed(&env.task_id, REQUEUE_EXHAUSTED, now, now, "coordinator");
                if let Err(e) = self.broker.publish(&self.cfg.topic, r) {
                    warn!("could not publish requeue failure for {}: {e}", env.task_id);
                }
            } else {
                self.queue.push_front((env, requeues));
            }
        }
    }

    fn sweep(&mut self) {
        let limit = self.cfg.heartbeat_interval * self.cfg.worker_grace;
        let silent: Vec<String> = self
            .workers
            .iter()
            .filter(|(_, w)| w.last_heartbeat.elapsed() > limit)
            .map(|(id, _)| id.clone())
            .collect();
        for id in silent {
            self.lose(&id, "heartbeat timeout");
        }
    }

    fn snapshot(&self) -> Vec<WorkerInfo> {
        let mut out: Vec<WorkerInfo> = self
            .workers
            .iter()
            .map(|(id, w)| WorkerInfo {
                worker_id: id.clone(),
                slots: w.slots,
                running: w.in_flight.len(),
                last_heartbeat: w.last_heartbeat_wall,
                state: if w.in_flight.is_empty() { WorkerState::Idle } else { WorkerState::Busy },
            })
            .collect();
        out.extend(self.lost.values().filter(|l| !self.workers.contains_key(&l.worker_id)).cloned());
        out
    }

    fn handle(&mut self, ev: Event) -> bool {
        match ev {
            Event::Submit(env) => self.queue.push_back((env, 0)),
            Event::Register { worker_id, slots, conn, writer, stream } => {
                if self.workers.contains_key(&worker_id) {
                    self.lose(&worker_id, "re-registered");
                }
                self.lost.remove(&worker_id);
                info!("worker {worker_id} registered with {slots} slot(s)");
                self.workers.insert(
                    worker_id,
                    Worker {
                        slots,
                        conn,
                        writer,
                        stream,
                        in_flight: BTreeMap::new(),
                        last_heartbeat: Instant::now(),
                        last_heartbeat_wall: clock::now(),
                    },
                );
            }
            Event::Heartbeat { worker_id, conn } => {
                if let Some(w) = self.workers.get_mut(&worker_id).filter(|w| w.conn == conn) {
                    w.last_heartbeat = Instant::now();
                    w.last_heartbeat_wall = clock::now();
                }
            }
            Event::TaskAck { worker_id, conn, task_id } => {
                if let Some(w) = self.workers.get_mut(&worker_id).filter(|w| w.conn == conn) {
                    w.in_flight.remove(&task_id);
                    w.last_heartbeat = Instant::now();
                }
            }
            Event::Disconnected { worker_id, conn } => {
                if self.workers.get(&worker_id).is_some_and(|w| w.conn == conn) {
                    self.lose(&worker_id, "connection closed");
                }
            }
            Event::Snapshot(reply) => {
                let _ = reply.send(self.snapshot());
            }
            Event::Shutdown(done) => {
                for w in self.workers.values() {
                    let _ = w.writer.send(Message::Shutdown);
                }
                let _ = done.send(());
                return false;
            }
        }
        self.dispatch();
        true
    }
}

/// Distributed runner: serves worker registrations, dispatches tasks, and
/// hosts the result broker on the same port.
pub struct Coordinator {
    addr: SocketAddr,
    events: Sender<Event>,
    broker: Arc<Broker>,
    topic: String,
    slots: usize,
    closed: AtomicBool,
    stop: Arc<AtomicBool>,
    conns: ConnectionSet,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Coordinator {
    pub fn start(cfg: CoordinatorConfig, broker: Arc<Broker>) -> io::Result<Self> {
        let listener = TcpListener::bind(&cfg.listen_address)?;
        let addr = listener.local_addr()?;
        let (events, rx) = unbounded::<Event>();
        let stop = Arc::new(AtomicBool::new(false));
        let conns = ConnectionSet::default();
        let mut state = State {
            cfg: cfg.clone(),
            broker: broker.clone(),
            queue: VecDeque::new(),
            workers: BTreeMap::new(),
            lost: BTreeMap::new(),
        };
        let interval = cfg.heartbeat_interval;
        let state_thread = thread::Builder::new().name("coordinator".into()).spawn(move || {
            let mut last_sweep = Instant::now();
            loop {
                let wait = interval.saturating_sub(last_sweep.elapsed()).max(Duration::from_millis(1));
                match rx.recv_timeout(wait) {
                    Ok(ev) => {
                        if !state.handle(ev) {
                            return;
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return,
                }
                if last_sweep.elapsed() >= interval {
                    state.sweep();
                    state.dispatch();
                    last_sweep = Instant::now();
                }
            }
        })?;
        let ctx = Arc::new(AcceptContext {
            events: events.clone(),
            broker: broker.clone(),
            stop: stop.clone(),
            conns: conns.clone(),
            manifest: cfg.manifest.clone(),
            experiment_id: cfg.experiment_id.clone(),
            topic: cfg.topic.clone(),
            advertised: addr.to_string(),
            heartbeat: cfg.heartbeat_interval,
            next_conn: AtomicU64::new(1),
        });
        let accept_thread = thread::Builder::new().name("coordinator-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if ctx.stop.load(Ordering::Relaxed) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let ctx = ctx.clone();
                thread::spawn(move || ctx.serve(stream));
            }
        })?;
        Ok(Self {
            addr,
            events,
            broker,
            topic: cfg.topic,
            slots: cfg.expected_slots,
            closed: AtomicBool::new(false),
            stop,
            conns,
            threads: Mutex::new(vec![state_thread, accept_thread]),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn workers(&self) -> Vec<WorkerInfo> {
        let (tx, rx) = bounded(1);
        if self.events.send(Event::Snapshot(tx)).is_err() {
            return Vec::new();
        }
        rx.recv_timeout(Duration::from_secs(5)).unwrap_or_default()
    }

    /// Waits until at least `n` workers are registered.
    pub fn wait_for_workers(&self, n: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if self.workers().iter().filter(|w| w.state != WorkerState::Lost).count() >= n {
                return true;
            }
            thread::sleep(Duration::from_millis(20));
        }
        false
    }
}

impl Runner for Coordinator {
    fn submit(&self, envelope: TaskEnvelope) {
        if self.closed.load(Ordering::SeqCst) || self.events.send(Event::Submit(envelope.clone())).is_err() {
            publish_closed(self.broker.as_ref(), &self.topic, &envelope, "coordinator");
        }
    }

    fn kind(&self) -> RunnerKind {
        RunnerKind::Distributed
    }

    fn slots(&self) -> usize {
        self.slots
    }

    /// Sends SHUTDOWN to every worker, then closes all connections.
    fn shutdown(&self) {
        if self.closed.swap(true, Ordering::SeqCst) {
            return;
        }
        let (tx, rx) = bounded(1);
        if self.events.send(Event::Shutdown(tx)).is_ok() {
            let _ = rx.recv_timeout(Duration::from_secs(5));
        }
        // let SHUTDOWN frames drain before severing sockets
        thread::sleep(Duration::from_millis(100));
        self.stop.store(true, Ordering::Relaxed);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        self.conns.close_all();
        for t in self.threads.lock().drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Coordinator {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct AcceptContext {
    events: Sender<Event>,
    broker: Arc<Broker>,
    stop: Arc<AtomicBool>,
    conns: ConnectionSet,
    manifest: BTreeMap<String, String>,
    experiment_id: String,
    topic: String,
    advertised: String,
    heartbeat: Duration,
    next_conn: AtomicU64,
}

impl AcceptContext {
    fn serve(&self, mut stream: TcpStream) {
        let _ = stream.set_nodelay(true);
        let id = self.conns.add(&stream);
        match wire::recv(&mut stream) {
            Ok(Some(Message::Register { schema_version, worker_id, slots, manifest })) => {
                self.serve_worker(stream, schema_version, worker_id, slots, manifest)
            }
            Ok(Some(first)) => serve_connection(&self.broker, stream, first, &self.stop, true),
            _ => {}
        }
        self.conns.remove(id);
    }

    fn ack(&self, accepted: bool, reason: Option<String>) -> Message {
        Message::RegisterAck {
            accepted,
            reason,
            schema_version: SCHEMA_VERSION.into(),
            experiment_id: self.experiment_id.clone(),
            manifest: self.manifest.clone(),
            broker_address: self.advertised.clone(),
            topic: self.topic.clone(),
            heartbeat_interval: self.heartbeat.as_secs_f64(),
        }
    }

    fn serve_worker(
        &self,
        mut stream: TcpStream,
        schema_version: String,
        worker_id: String,
        slots: usize,
        manifest: BTreeMap<String, String>,
    ) {
        let mut problems = Vec::new();
        if schema_version != SCHEMA_VERSION {
            problems.push(format!("schema version {schema_version}, coordinator speaks {SCHEMA_VERSION}"));
        }
        if slots == 0 {
            problems.push("worker offers no slots".into());
        }
        for (k, v) in &self.manifest {
            match manifest.get(k) {
                None => problems.push(format!("{k}: missing on worker (coordinator has {v})")),
                Some(w) if w != v => problems.push(format!("{k}: worker version {w}, coordinator version {v}")),
                _ => {}
            }
        }
        if !problems.is_empty() {
            let reason = format!("registration refused: {}", problems.join("; "));
            warn!("worker {worker_id}: {reason}");
            let _ = wire::send(&mut stream, &self.ack(false, Some(reason)));
            return;
        }
        if wire::send(&mut stream, &self.ack(true, None)).is_err() {
            return;
        }
        let conn = self.next_conn.fetch_add(1, Ordering::Relaxed);
        let (wtx, wrx) = unbounded::<Message>();
        let Ok(mut wstream) = stream.try_clone() else { return };
        let Ok(ctl) = stream.try_clone() else { return };
        thread::spawn(move || {
            for msg in wrx {
                if wire::send(&mut wstream, &msg).is_err() {
                    break;
                }
            }
        });
        let register = Event::Register { worker_id: worker_id.clone(), slots, conn, writer: wtx, stream: ctl };
        if self.events.send(register).is_err() {
            return;
        }
        let mut reader = BufReader::new(stream);
        loop {
            match wire::recv(&mut reader) {
                Ok(Some(Message::Heartbeat { .. })) => {
                    let _ = self.events.send(Event::Heartbeat { worker_id: worker_id.clone(), conn });
                }
                Ok(Some(Message::TaskAck { task_id })) => {
                    let _ = self.events.send(Event::TaskAck { worker_id: worker_id.clone(), conn, task_id });
                }
                Ok(Some(other)) => debug!("ignoring {other:?} from {worker_id}"),
                Ok(None) | Err(_) => break,
            }
        }
        let _ = self.events.send(Event::Disconnected { worker_id, conn });
    }
}

// ----- worker daemon -------------------------------------------------------

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub coordinator_address: String,
    pub worker_id: String,
    pub slots: usize,
    pub task_timeout: Duration,
    pub register_backoff: Backoff,
    /// Give up on the first registration after this long (`None`: never).
    pub register_deadline: Option<Duration>,
    /// Give up re-registering after a lost connection after this long.
    pub reconnect_deadline: Duration,
    /// Time allowed for in-flight tasks when shutting down.
    pub shutdown_grace: Duration,
    pub publish_backoff: Backoff,
}

impl WorkerConfig {
    pub fn new(coordinator_address: &str, slots: usize) -> Self {
        Self {
            coordinator_address: coordinator_address.into(),
            worker_id: format!("worker-{}", std::process::id()),
            slots,
            task_timeout: crate::execute::DEFAULT_TASK_TIMEOUT,
            register_backoff: Backoff { base: Duration::from_millis(250), cap: Duration::from_secs(5) },
            register_deadline: None,
            reconnect_deadline: Duration::from_secs(60),
            shutdown_grace: Duration::from_secs(30),
            publish_backoff: Backoff::PUBLISHER,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("{0}")]
    Refused(String),
    #[error("coordinator unreachable: {0}")]
    Unreachable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerExit {
    /// The coordinator sent SHUTDOWN.
    Shutdown,
    /// The local interrupt flag was raised.
    Interrupted,
    /// The coordinator stayed unreachable past the reconnect deadline.
    Disconnected,
}

struct Session {
    reader: BufReader<TcpStream>,
    writer: Arc<Mutex<TcpStream>>,
    broker_address: String,
    topic: String,
    heartbeat: Duration,
}

fn register_once(cfg: &WorkerConfig, registry: &Registry) -> Result<Session, WorkerError> {
    let unreachable = |e: io::Error| WorkerError::Unreachable(e.to_string());
    let mut stream = broker::connect_addr(&cfg.coordinator_address, Duration::from_secs(5)).map_err(unreachable)?;
    stream.set_read_timeout(Some(Duration::from_secs(10))).map_err(unreachable)?;
    let hello = Message::Register {
        schema_version: SCHEMA_VERSION.into(),
        worker_id: cfg.worker_id.clone(),
        slots: cfg.slots,
        manifest: registry.manifest(),
    };
    wire::send(&mut stream, &hello).map_err(unreachable)?;
    match wire::recv(&mut stream).map_err(unreachable)? {
        Some(Message::RegisterAck { accepted: false, reason, .. }) => {
            Err(WorkerError::Refused(reason.unwrap_or_else(|| "registration refused".into())))
        }
        Some(Message::RegisterAck { accepted: true, broker_address, topic, heartbeat_interval, .. }) => {
            let broker_address = if broker_address.starts_with("0.0.0.0") || broker_address.starts_with("[::]") {
                cfg.coordinator_address.clone()
            } else {
                broker_address
            };
            stream.set_read_timeout(Some(Duration::from_millis(200))).map_err(unreachable)?;
            let writer = Arc::new(Mutex::new(stream.try_clone().map_err(unreachable)?));
            Ok(Session {
                reader: BufReader::new(stream),
                writer,
                broker_address,
                topic,
                heartbeat: Duration::from_secs_f64(heartbeat_interval.max(0.01)),
            })
        }
        Some(other) => Err(WorkerError::Protocol(format!("expected REGISTER_ACK, got {other:?}"))),
        None => Err(WorkerError::Unreachable("connection closed during registration".into())),
    }
}

fn register_with_backoff(
    cfg: &WorkerConfig,
    registry: &Registry,
    deadline: Option<Instant>,
    interrupt: &AtomicBool,
) -> Result<Option<Session>, WorkerError> {
    let mut failures = 0;
    loop {
        match register_once(cfg, registry) {
            Ok(s) => return Ok(Some(s)),
            Err(WorkerError::Unreachable(e)) => {
                failures += 1;
                if deadline.is_some_and(|d| Instant::now() >= d) {
                    return Err(WorkerError::Unreachable(e));
                }
                let delay = cfg.register_backoff.delay(failures);
                debug!("registration attempt {failures} failed ({e}); retrying in {delay:?}");
                let until = Instant::now() + delay;
                while Instant::now() < until {
                    if interrupt.load(Ordering::Relaxed) {
                        return Ok(None);
                    }
                    thread::sleep(Duration::from_millis(20));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Runs a worker until SHUTDOWN, interrupt, or permanent disconnection.
/// In-flight tasks are finished and their results flushed (within
/// `shutdown_grace`) before returning.
pub fn run_worker(cfg: WorkerConfig, registry: Registry, interrupt: Arc<AtomicBool>) -> Result<WorkerExit, WorkerError> {
    let first_deadline = cfg.register_deadline.map(|d| Instant::now() + d);
    let Some(mut session) = register_with_backoff(&cfg, &registry, first_deadline, &interrupt)? else {
        return Ok(WorkerExit::Interrupted);
    };
    info!("worker {} registered with {}", cfg.worker_id, cfg.coordinator_address);
    let publisher = Arc::new(Publisher::start(&session.broker_address, cfg.publish_backoff));
    let current_writer: Arc<Mutex<Arc<Mutex<TcpStream>>>> = Arc::new(Mutex::new(session.writer.clone()));
    let running = Arc::new(AtomicUsize::new(0));
    let topic = session.topic.clone();

    // execution slots
    let (task_tx, task_rx) = unbounded::<TaskEnvelope>();
    let slot_threads: Vec<JoinHandle<()>> = (0..cfg.slots)
        .map(|i| {
            let rx: Receiver<TaskEnvelope> = task_rx.clone();
            let (registry, publisher, writer, running, topic) =
                (registry.clone(), publisher.clone(), current_writer.clone(), running.clone(), topic.clone());
            let (worker_id, timeout) = (cfg.worker_id.clone(), cfg.task_timeout);
            thread::Builder::new()
                .name(format!("slot-{i}"))
                .spawn(move || {
                    for env in rx {
                        let result = execute(&registry, &env, &worker_id, timeout);
                        let task_id = env.task_id.clone();
                        let writer = writer.clone();
                        let running = running.clone();
                        publisher.publish(
                            &topic,
                            result,
                            Some(Box::new(move |_| {
                                running.fetch_sub(1, Ordering::SeqCst);
                                let w = writer.lock().clone();
                                let _ = wire::send(&mut *w.lock(), &Message::TaskAck { task_id });
                            })),
                        );
                    }
                })
                .expect("spawn slot")
        })
        .collect();

    // heartbeats
    let hb_stop = Arc::new(AtomicBool::new(false));
    let heartbeat = {
        let (writer, running, stop, id) = (current_writer.clone(), running.clone(), hb_stop.clone(), cfg.worker_id.clone());
        let interval = session.heartbeat;
        thread::spawn(move || {
            let mut next = Instant::now();
            while !stop.load(Ordering::Relaxed) {
                if Instant::now() >= next {
                    let w = writer.lock().clone();
                    let msg = Message::Heartbeat { worker_id: id.clone(), running: running.load(Ordering::SeqCst) };
                    let _ = wire::send(&mut *w.lock(), &msg);
                    next = Instant::now() + interval;
                }
                thread::sleep(Duration::from_millis(20).min(interval));
            }
        })
    };

    let exit = loop {
        match broker::read_patiently(&mut session.reader, &interrupt) {
            Ok(Some(Message::Task { envelope })) => {
                running.fetch_add(1, Ordering::SeqCst);
                let _ = task_tx.send(envelope);
            }
            Ok(Some(Message::Shutdown)) => break WorkerExit::Shutdown,
            Ok(Some(Message::Cancel { task_id })) => debug!("cancel for {task_id} ignored; evaluations run to completion"),
            Ok(Some(other)) => debug!("ignoring {other:?}"),
            Err(e) if e.kind() == io::ErrorKind::Interrupted && interrupt.load(Ordering::Relaxed) => {
                break WorkerExit::Interrupted
            }
            Ok(None) | Err(_) => {
                warn!("lost connection to coordinator; re-registering");
                let deadline = Some(Instant::now() + cfg.reconnect_deadline);
                match register_with_backoff(&cfg, &registry, deadline, &interrupt) {
                    Ok(Some(s)) => {
                        *current_writer.lock() = s.writer.clone();
                        session = s;
                    }
                    Ok(None) => break WorkerExit::Interrupted,
                    Err(WorkerError::Unreachable(_)) => break WorkerExit::Disconnected,
                    Err(e) => {
                        hb_stop.store(true, Ordering::Relaxed);
                        return Err(e);
                    }
                }
            }
        }
    };

    // drain: no new tasks, finish running ones, flush results
    drop(task_tx);
    let deadline = Instant::now() + cfg.shutdown_grace;
    for t in slot_threads {
        while !t.is_finished() && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(10));
        }
        if t.is_finished() {
            let _ = t.join();
        }
    }
    let left = deadline.saturating_duration_since(Instant::now());
    if !publisher.flush(left) {
        warn!("{} result(s) not delivered before shutdown grace expired", publisher.pending());
    }
    publisher.close();
    hb_stop.store(true, Ordering::Relaxed);
    let _ = heartbeat.join();
    info!("worker {} exiting ({exit:?})", cfg.worker_id);
    Ok(exit)
}

/// A worker on a background thread, for tests and local closure runs.
pub struct LocalWorker {
    pub interrupt: Arc<AtomicBool>,
    pub handle: JoinHandle<Result<WorkerExit, WorkerError>>,
}

pub fn spawn_local_worker(cfg: WorkerConfig, registry: Registry) -> LocalWorker {
    let interrupt = Arc::new(AtomicBool::new(false));
    let flag = interrupt.clone();
    let handle = thread::spawn(move || run_worker(cfg, registry, flag));
    LocalWorker { interrupt, handle }
}
