//! Execution backends behind one dispatch interface. Every runner delivers
//! its results by publishing them to a result sink (the broker topic).

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use log::warn;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::broker::ResultSink;
use crate::canonical::{from_canonical, to_canonical};
use crate::clock;
use crate::envelope::{ResultEnvelope, TaskEnvelope};
use crate::execute::execute;
use crate::registry::Registry;

pub const RUNNER_CLOSED: &str = "runner closed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerKind {
    InProcess,
    BatchSubprocess,
    Distributed,
}

pub trait Runner: Send + Sync {
    /// Non-blocking. After shutdown, a failed result is published instead.
    fn submit(&self, envelope: TaskEnvelope);
    fn kind(&self) -> RunnerKind;
    /// Execution slots this runner was configured with.
    fn slots(&self) -> usize;
    /// Stops accepting work and waits for running tasks to finish.
    fn shutdown(&self);
}

pub(crate) fn publish_closed(sink: &dyn ResultSink, topic: &str, envelope: &TaskEnvelope, worker_id: &str) {
    let now = clock::now();
    sink.publish(topic, ResultEnvelope::failed(&envelope.task_id, RUNNER_CLOSED, now, now, worker_id), None);
}

/// Shared plumbing: a task queue drained by `slots` threads.
struct SlotPool {
    tx: Mutex<Option<Sender<TaskEnvelope>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    closed: AtomicBool,
}

impl SlotPool {
    fn start<F>(slots: usize, name: &str, work: F) -> Self
    where
        F: Fn(TaskEnvelope) + Send + Sync + 'static,
    {
        let (tx, rx): (Sender<TaskEnvelope>, Receiver<TaskEnvelope>) = unbounded();
        let work = Arc::new(work);
        let threads = (0..slots)
            .map(|i| {
                let (rx, work) = (rx.clone(), work.clone());
                thread::Builder::new()
                    .name(format!("{name}-{i}"))
                    .spawn(move || {
                        for env in rx {
                            work(env);
                        }
                    })
                    .expect("spawn slot thread")
            })
            .collect();
        Self { tx: Mutex::new(Some(tx)), threads: Mutex::new(threads), closed: AtomicBool::new(false) }
    }

    /// Returns the envelope back if the pool is closed.
    fn push(&self, env: TaskEnvelope) -> Result<(), TaskEnvelope> {
        match self.tx.lock().as_ref() {
            Some(tx) => tx.send(env).map_err(|e| e.0),
            None => Err(env),
        }
    }

    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.tx.lock().take();
        let threads: Vec<_> = self.threads.lock().drain(..).collect();
        for t in threads {
            let _ = t.join();
        }
    }
}

/// Thread pool in the submitting process.
pub struct InProcessRunner {
    pool: SlotPool,
    slots: usize,
    sink: Arc<dyn ResultSink>,
    topic: String,
}

pub const IN_PROCESS_WORKER: &str = "in-process";

impl InProcessRunner {
    pub fn start(slots: usize, registry: Registry, sink: Arc<dyn ResultSink>, topic: &str, timeout: Duration) -> Self {
        assert!(slots >= 1, "runner needs at least one slot");
        let (sink2, topic2) = (sink.clone(), topic.to_string());
        let pool = SlotPool::start(slots, "in-process", move |env| {
            let result = execute(&registry, &env, IN_PROCESS_WORKER, timeout);
            sink2.publish(&topic2, result, None);
        });
        Self { pool, slots, sink, topic: topic.into() }
    }
}

impl Runner for InProcessRunner {
    fn submit(&self, envelope: TaskEnvelope) {
        if let Err(env) = self.pool.push(envelope) {
            publish_closed(self.sink.as_ref(), &self.topic, &env, IN_PROCESS_WORKER);
        }
    }

    fn kind(&self) -> RunnerKind {
        RunnerKind::InProcess
    }

    fn slots(&self) -> usize {
        self.slots
    }

    fn shutdown(&self) {
        self.pool.close();
    }
}

/// Command line that executes one envelope: reads it from stdin, writes a
/// result envelope to stdout.
#[derive(Debug, Clone)]
pub struct BatchCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
}

/// One subprocess per task, started no earlier than `queue_latency` after
/// submission (a stand-in for a cluster batch scheduler).
pub struct BatchRunner {
    pool: SlotPool,
    slots: usize,
    sink: Arc<dyn ResultSink>,
    topic: String,
    children: Arc<AtomicUsize>,
}

/// Grace given to a child beyond the task timeout before it is killed.
const CHILD_KILL_MARGIN: Duration = Duration::from_secs(5);

impl BatchRunner {
    pub fn start(
        slots: usize,
        queue_latency: Duration,
        command: BatchCommand,
        sink: Arc<dyn ResultSink>,
        topic: &str,
        timeout: Duration,
    ) -> Self {
        assert!(slots >= 1, "runner needs at least one slot");
        let children = Arc::new(AtomicUsize::new(0));
        let (sink2, topic2, children2) = (sink.clone(), topic.to_string(), children.clone());
        let pool = SlotPool::start(slots, "batch", move |env| {
            let release = env.submitted_at + queue_latency.as_secs_f64();
            let wait = release - clock::now();
            if wait > 0.0 {
                thread::sleep(Duration::from_secs_f64(wait));
            }
            children2.fetch_add(1, Ordering::SeqCst);
            let result = run_child(&command, &env, timeout + CHILD_KILL_MARGIN);
            children2.fetch_sub(1, Ordering::SeqCst);
            sink2.publish(&topic2, result, None);
        });
        Self { pool, slots, sink, topic: topic.into(), children }
    }

    /// Subprocesses currently alive.
    pub fn running_children(&self) -> usize {
        self.children.load(Ordering::SeqCst)
    }
}

fn run_child(cmd: &BatchCommand, env: &TaskEnvelope, kill_after: Duration) -> ResultEnvelope {
    let started = clock::now();
    let fail = |msg: String| ResultEnvelope::failed(&env.task_id, msg, started, clock::now(), "batch");
    let payload = match to_canonical(env) {
        Ok(p) => p,
        Err(e) => return fail(format!("cannot serialize envelope: {e}")),
    };
    let mut child = match Command::new(&cmd.program)
        .args(&cmd.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return fail(format!("cannot spawn {}: {e}", cmd.program.display())),
    };
    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(payload.as_bytes());
    });
    let out_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let err_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let deadline = Instant::now() + kill_after;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => return fail(format!("waiting for child failed: {e}")),
        }
    };
    let _ = writer.join();
    let out = out_reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    match status {
        None => fail(format!("subprocess killed after {:.1} s", kill_after.as_secs_f64())),
        Some(s) if !s.success() => fail(format!("subprocess exited with {s}: {}", err.trim())),
        Some(_) => match from_canonical::<ResultEnvelope>(out.trim()) {
            Ok(r) if r.task_id == env.task_id => r,
            Ok(r) => fail(format!("subprocess answered for task {}", r.task_id)),
            Err(e) => fail(format!("unparseable subprocess output ({e}): {}", out.trim())),
        },
    }
}

impl Runner for BatchRunner {
    fn submit(&self, envelope: TaskEnvelope) {
        if let Err(env) = self.pool.push(envelope) {
            publish_closed(self.sink.as_ref(), &self.topic, &env, "batch");
        }
    }

    fn kind(&self) -> RunnerKind {
        RunnerKind::BatchSubprocess
    }

    fn slots(&self) -> usize {
        self.slots
    }

    fn shutdown(&self) {
        self.pool.close();
    }
}

/// Body of the batch subprocess: envelope on stdin, result on stdout.
pub fn exec_task_main<R: Read, W: Write>(registry: &Registry, timeout: Duration, mut input: R, mut output: W) -> std::io::Result<()> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let env: TaskEnvelope = from_canonical(text.trim())
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad task envelope: {e}")))?;
    let worker = format!("batch-{}", std::process::id());
    let result = execute(registry, &env, &worker, timeout);
    let line = to_canonical(&result).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    if result.status == crate::envelope::ResultStatus::Failed {
        warn!("task {} failed: {}", env.task_id, result.error_text.as_deref().unwrap_or(""));
    }
    writeln!(output, "{line}")?;
    output.flush()
}
