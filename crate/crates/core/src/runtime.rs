//! Deterministic rendezvous scheduler.
//!
//! A [`Network`] owns a closed set of channels and processes. Every channel
//! has exactly one writing process and one reading process, and a transfer
//! happens only in a cycle where both ends offer it. Each call to
//! [`Network::step`] matches all ready pairs first and then commits them
//! together, so the result never depends on the order processes are visited.
//!
//! Cost model: one cycle per step that completes at least one rendezvous.
//! Everything a process computes between two communications is free.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constructs::ValueTree;

/// A value carried on a data channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(pub i64);

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Token sent on end-of-transmission channels.
pub const EOT_TOKEN: Word = Word(1);

/// Two's-complement word width. Arithmetic wraps modulo `2^bits`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Width(u32);

impl Width {
    pub const DEFAULT: Width = Width(16);

    pub fn new(bits: u32) -> Result<Self, BuildError> {
        if (2..=64).contains(&bits) {
            Ok(Width(bits))
        } else {
            Err(BuildError::Width(bits))
        }
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn min_value(self) -> i64 {
        (-(1i128 << (self.0 - 1))) as i64
    }

    pub fn max_value(self) -> i64 {
        ((1i128 << (self.0 - 1)) - 1) as i64
    }

    pub fn contains(self, w: Word) -> bool {
        (self.min_value()..=self.max_value()).contains(&w.0)
    }

    pub fn wrap(self, v: i128) -> Word {
        let modulus = 1i128 << self.0;
        let mut r = v.rem_euclid(modulus);
        if r >= modulus / 2 {
            r -= modulus;
        }
        Word(r as i64)
    }

    pub fn add(self, a: Word, b: Word) -> Word {
        self.wrap(a.0 as i128 + b.0 as i128)
    }

    pub fn mul(self, a: Word, b: Word) -> Word {
        self.wrap(a.0 as i128 * b.0 as i128)
    }
}

impl Default for Width {
    fn default() -> Self {
        Width::DEFAULT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChanId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    Data,
    Eot,
}

pub type Cont = Box<dyn FnOnce() -> Proc + Send>;
pub type RecvCont = Box<dyn FnOnce(Word) -> Proc + Send>;
pub type JoinCont = Box<dyn FnOnce(Vec<ValueTree>) -> Proc + Send>;
type SeqCont = Box<dyn FnOnce(ValueTree) -> Proc + Send>;

/// One input alternative of a prioritized choice.
pub struct Guard {
    pub chan: ChanId,
    pub then: RecvCont,
}

impl Guard {
    pub fn new(chan: ChanId, then: impl FnOnce(Word) -> Proc + Send + 'static) -> Self {
        Guard {
            chan,
            then: Box::new(then),
        }
    }
}

/// A suspended sequential behaviour.
///
/// `Choice` is an input-only prioritized alternative: among the guards whose
/// writer is ready, the earliest listed fires. A single-guard choice is a
/// plain receive. `Par` runs its branches as sub-threads of the same process
/// and resumes with `join` once all of them have finished.
pub enum Proc {
    Done(ValueTree),
    Send { chan: ChanId, value: Word, next: Cont },
    Choice(Vec<Guard>),
    Par { branches: Vec<Proc>, join: JoinCont },
    Fail(String),
}

impl fmt::Debug for Proc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proc::Done(v) => write!(f, "Done({v:?})"),
            Proc::Send { chan, value, .. } => write!(f, "Send({chan:?}, {value})"),
            Proc::Choice(gs) => {
                let chans: Vec<_> = gs.iter().map(|g| g.chan.0).collect();
                write!(f, "Choice({chans:?})")
            }
            Proc::Par { branches, .. } => write!(f, "Par({branches:?})"),
            Proc::Fail(m) => write!(f, "Fail({m})"),
        }
    }
}

impl Proc {
    pub fn skip() -> Proc {
        Proc::Done(ValueTree::unit())
    }

    pub fn send(chan: ChanId, value: Word, next: impl FnOnce() -> Proc + Send + 'static) -> Proc {
        Proc::Send {
            chan,
            value,
            next: Box::new(next),
        }
    }

    pub fn recv(chan: ChanId, then: impl FnOnce(Word) -> Proc + Send + 'static) -> Proc {
        Proc::Choice(vec![Guard::new(chan, then)])
    }

    /// Prioritized input choice; the list order is the priority order.
    pub fn prialt(guards: Vec<Guard>) -> Result<Proc, BuildError> {
        if guards.is_empty() {
            return Err(BuildError::EmptyChoice);
        }
        Ok(Proc::Choice(guards))
    }

    pub fn par(
        branches: Vec<Proc>,
        join: impl FnOnce(Vec<ValueTree>) -> Proc + Send + 'static,
    ) -> Proc {
        Proc::Par {
            branches,
            join: Box::new(join),
        }
    }

    /// Interleaving that terminates once every branch has.
    pub fn interleave(branches: Vec<Proc>) -> Proc {
        Proc::par(branches, |_| Proc::skip())
    }

    /// Sequential composition: run `self`, then continue with its result.
    pub fn then(self, k: impl FnOnce(ValueTree) -> Proc + Send + 'static) -> Proc {
        self.then_boxed(Box::new(k))
    }

    fn then_boxed(self, k: SeqCont) -> Proc {
        match self {
            Proc::Done(v) => k(v),
            Proc::Send { chan, value, next } => Proc::Send {
                chan,
                value,
                next: Box::new(move || next().then_boxed(k)),
            },
            Proc::Choice(guards) => {
                let slot = Arc::new(Mutex::new(Some(k)));
                Proc::Choice(
                    guards
                        .into_iter()
                        .map(|g| {
                            let slot = Arc::clone(&slot);
                            let then = g.then;
                            Guard {
                                chan: g.chan,
                                then: Box::new(move |w| {
                                    let k = slot
                                        .lock()
                                        .expect("continuation slot poisoned")
                                        .take()
                                        .expect("choice resumed twice");
                                    then(w).then_boxed(k)
                                }),
                            }
                        })
                        .collect(),
                )
            }
            Proc::Par { branches, join } => Proc::Par {
                branches,
                join: Box::new(move |vs| join(vs).then_boxed(k)),
            },
            Proc::Fail(m) => Proc::Fail(m),
        }
    }
}

/// Index of the alternative that fires: the first one listed whose channel is
/// ready. `None` means the caller stays blocked this cycle.
pub fn select_priority(alternatives: &[ChanId], ready: impl Fn(ChanId) -> bool) -> Option<usize> {
    alternatives.iter().position(|&c| ready(c))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BuildError {
    #[error("channel `{channel}` is already written by `{existing}`; `{attempted}` cannot also write it")]
    DuplicateWriter {
        channel: String,
        existing: String,
        attempted: String,
    },
    #[error("channel `{channel}` is already read by `{existing}`; `{attempted}` cannot also read it")]
    DuplicateReader {
        channel: String,
        existing: String,
        attempted: String,
    },
    #[error("channel `{channel}` has no {missing}")]
    Dangling {
        channel: String,
        missing: &'static str,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("prioritized choice needs at least one alternative")]
    EmptyChoice,
    #[error("invalid arity: {0}")]
    Arity(String),
    #[error("word width {0} is outside the supported range")]
    Width(u32),
    #[error("the network has already started running")]
    AlreadyStarted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockedProcess {
    pub name: String,
    /// Offered events, written `chan!` for outputs and `chan?` for inputs.
    pub offers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadlockReport {
    pub cycle: u64,
    pub blocked: Vec<BlockedProcess>,
}

impl fmt::Display for DeadlockReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "deadlock at cycle {}:", self.cycle)?;
        for b in &self.blocked {
            write!(f, " [{} offers {}]", b.name, b.offers.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("{0}")]
    Deadlock(DeadlockReport),
    #[error("cycle budget of {max_cycles} exhausted before termination")]
    CycleBudgetExceeded { max_cycles: u64 },
    #[error("protocol violation in `{process}`: {message}")]
    Protocol { process: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub cycles: u64,
    pub communications: u64,
    /// Area proxy: process instances, counting statically instantiated
    /// sub-processes inside a process body.
    pub process_count: u64,
    /// Area proxy: declared channels, including process-internal ones.
    pub channel_count: u64,
    pub items_out: u64,
    pub throughput: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transfer {
    pub cycle: u64,
    pub chan: ChanId,
    pub value: Word,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProcessStatus {
    Runnable,
    Blocked,
    Terminated,
}

#[derive(Debug, Clone)]
pub struct ChannelInfo {
    pub name: String,
    pub kind: ChannelKind,
    pub writer: Option<ProcessId>,
    pub reader: Option<ProcessId>,
    pub output: bool,
}

struct ProcessSlot {
    name: String,
    instances: usize,
    body: Option<Proc>,
    result: Option<ValueTree>,
}

enum ThreadState {
    Ready(Proc),
    Joining {
        pending: usize,
        results: Vec<Option<ValueTree>>,
        join: JoinCont,
    },
    Blank,
}

struct Thread {
    process: ProcessId,
    parent: Option<(usize, usize)>,
    state: ThreadState,
}

#[derive(Debug, Clone)]
struct StreamMonitor {
    name: String,
    eot_count: u32,
    data_count: u64,
}

#[derive(Clone, Copy)]
enum MonitorRole {
    Data(usize),
    Eot(usize),
}

pub struct Network {
    width: Width,
    channels: Vec<ChannelInfo>,
    processes: Vec<ProcessSlot>,
    threads: Vec<Option<Thread>>,
    free_threads: Vec<usize>,
    monitors: Vec<StreamMonitor>,
    roles: Vec<Option<MonitorRole>>,
    chan_counts: Vec<u64>,
    cycle: u64,
    communications: u64,
    items_out: u64,
    trace: Option<Vec<Transfer>>,
    warnings: Vec<String>,
    started: bool,
}

impl fmt::Debug for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network")
            .field("width", &self.width)
            .field("channels", &self.channels.len())
            .field("processes", &self.processes.len())
            .field("cycle", &self.cycle)
            .finish()
    }
}

impl Network {
    pub fn new(width: Width) -> Self {
        Network {
            width,
            channels: Vec::new(),
            processes: Vec::new(),
            threads: Vec::new(),
            free_threads: Vec::new(),
            monitors: Vec::new(),
            roles: Vec::new(),
            chan_counts: Vec::new(),
            cycle: 0,
            communications: 0,
            items_out: 0,
            trace: None,
            warnings: Vec::new(),
            started: false,
        }
    }

    /// Keep every transfer for later inspection.
    pub fn record_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn width(&self) -> Width {
        self.width
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn channel(&mut self, name: impl Into<String>, kind: ChannelKind) -> ChanId {
        let id = ChanId(self.channels.len());
        self.channels.push(ChannelInfo {
            name: name.into(),
            kind,
            writer: None,
            reader: None,
            output: false,
        });
        self.roles.push(None);
        self.chan_counts.push(0);
        id
    }

    pub fn channel_info(&self, chan: ChanId) -> &ChannelInfo {
        &self.channels[chan.0]
    }

    pub fn channels(&self) -> &[ChannelInfo] {
        &self.channels
    }

    /// Watch a top-level stream: data must stop once its EOT has passed, and
    /// exactly one EOT must have passed when the network terminates.
    pub fn monitor_stream(&mut self, name: impl Into<String>, data: &[ChanId], eot: ChanId) {
        let idx = self.monitors.len();
        self.monitors.push(StreamMonitor {
            name: name.into(),
            eot_count: 0,
            data_count: 0,
        });
        for c in data {
            self.roles[c.0] = Some(MonitorRole::Data(idx));
        }
        self.roles[eot.0] = Some(MonitorRole::Eot(idx));
    }

    /// Data transfers on these channels count towards `items_out`.
    pub fn mark_output(&mut self, chans: &[ChanId]) {
        for c in chans {
            self.channels[c.0].output = true;
        }
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Declare a process reading `reads` and writing `writes`. A channel in
    /// both lists is internal to the process. `instances` is the number of
    /// hardware process instances the body stands for (area proxy).
    pub fn add_process(
        &mut self,
        name: impl Into<String>,
        instances: usize,
        reads: &[ChanId],
        writes: &[ChanId],
        body: Proc,
    ) -> Result<ProcessId, BuildError> {
        if self.started {
            return Err(BuildError::AlreadyStarted);
        }
        let name = name.into();
        let pid = ProcessId(self.processes.len());
        // check everything before binding anything, so a failed add leaves
        // the network untouched
        let mut seen_r = BTreeSet::new();
        for c in reads {
            let info = &self.channels[c.0];
            if let Some(existing) = info.reader {
                return Err(BuildError::DuplicateReader {
                    channel: info.name.clone(),
                    existing: self.processes[existing.0].name.clone(),
                    attempted: name,
                });
            }
            if !seen_r.insert(*c) {
                return Err(BuildError::DuplicateReader {
                    channel: info.name.clone(),
                    existing: name.clone(),
                    attempted: name,
                });
            }
        }
        let mut seen_w = BTreeSet::new();
        for c in writes {
            let info = &self.channels[c.0];
            if let Some(existing) = info.writer {
                return Err(BuildError::DuplicateWriter {
                    channel: info.name.clone(),
                    existing: self.processes[existing.0].name.clone(),
                    attempted: name,
                });
            }
            if !seen_w.insert(*c) {
                return Err(BuildError::DuplicateWriter {
                    channel: info.name.clone(),
                    existing: name.clone(),
                    attempted: name,
                });
            }
        }
        for c in reads {
            self.channels[c.0].reader = Some(pid);
        }
        for c in writes {
            self.channels[c.0].writer = Some(pid);
        }
        self.processes.push(ProcessSlot {
            name,
            instances: instances.max(1),
            body: Some(body),
            result: None,
        });
        Ok(pid)
    }

    pub fn process_name(&self, pid: ProcessId) -> &str {
        &self.processes[pid.0].name
    }

    pub fn process_count(&self) -> u64 {
        self.processes.iter().map(|p| p.instances as u64).sum()
    }

    pub fn declared_processes(&self) -> usize {
        self.processes.len()
    }

    pub fn channel_count(&self) -> u64 {
        self.channels.len() as u64
    }

    /// The value a terminated process finished with (what STORE captured).
    pub fn result(&self, pid: ProcessId) -> Option<&ValueTree> {
        self.processes[pid.0].result.as_ref()
    }

    pub fn status(&self, pid: ProcessId) -> ProcessStatus {
        if self.processes[pid.0].result.is_some() {
            ProcessStatus::Terminated
        } else if !self.started {
            ProcessStatus::Runnable
        } else {
            ProcessStatus::Blocked
        }
    }

    pub fn all_terminated(&self) -> bool {
        self.processes.iter().all(|p| p.result.is_some())
    }

    pub fn trace(&self) -> Option<&[Transfer]> {
        self.trace.as_deref()
    }

    pub fn communications_on(&self, chan: ChanId) -> u64 {
        self.chan_counts[chan.0]
    }

    /// Total transfers on channels whose name starts with `prefix`.
    pub fn communications_with_prefix(&self, prefix: &str) -> u64 {
        self.channels
            .iter()
            .zip(&self.chan_counts)
            .filter(|(c, _)| c.name.starts_with(prefix))
            .map(|(_, n)| *n)
            .sum()
    }

    /// Closedness check: every channel has one writer and one reader.
    pub fn validate(&self) -> Result<(), BuildError> {
        for c in &self.channels {
            if c.writer.is_none() {
                return Err(BuildError::Dangling {
                    channel: c.name.clone(),
                    missing: "writer",
                });
            }
            if c.reader.is_none() {
                return Err(BuildError::Dangling {
                    channel: c.name.clone(),
                    missing: "reader",
                });
            }
        }
        Ok(())
    }

    pub fn metrics(&self) -> TraceMetrics {
        TraceMetrics {
            cycles: self.cycle,
            communications: self.communications,
            process_count: self.process_count(),
            channel_count: self.channel_count(),
            items_out: self.items_out,
            throughput: (self.cycle > 0).then(|| self.items_out as f64 / self.cycle as f64),
        }
    }

    fn start(&mut self) -> Result<(), RunError> {
        if self.started {
            return Ok(());
        }
        self.validate()?;
        self.started = true;
        for pid in 0..self.processes.len() {
            let body = self.processes[pid]
                .body
                .take()
                .expect("process body consumed twice");
            let tid = self.alloc_thread(Thread {
                process: ProcessId(pid),
                parent: None,
                state: ThreadState::Ready(body),
            });
            self.normalize(tid)?;
        }
        Ok(())
    }

    fn alloc_thread(&mut self, t: Thread) -> usize {
        if let Some(tid) = self.free_threads.pop() {
            self.threads[tid] = Some(t);
            tid
        } else {
            self.threads.push(Some(t));
            self.threads.len() - 1
        }
    }

    fn protocol(&self, pid: ProcessId, message: String) -> RunError {
        RunError::Protocol {
            process: self.processes[pid.0].name.clone(),
            message,
        }
    }

    /// Run zero-cost steps (spawning, joining, termination) until the thread
    /// is blocked on a communication or gone.
    fn normalize(&mut self, tid: usize) -> Result<(), RunError> {
        loop {
            let th = self.threads[tid].as_mut().expect("normalize on a dead thread");
            let pid = th.process;
            let state = std::mem::replace(&mut th.state, ThreadState::Blank);
            match state {
                ThreadState::Ready(Proc::Done(v)) => return self.finish_thread(tid, v),
                ThreadState::Ready(Proc::Par { branches, join }) => {
                    if branches.is_empty() {
                        th.state = ThreadState::Ready(join(Vec::new()));
                        continue;
                    }
                    let n = branches.len();
                    th.state = ThreadState::Joining {
                        pending: n,
                        results: (0..n).map(|_| None).collect(),
                        join,
                    };
                    for (slot, b) in branches.into_iter().enumerate() {
                        let child = self.alloc_thread(Thread {
                            process: pid,
                            parent: Some((tid, slot)),
                            state: ThreadState::Ready(b),
                        });
                        self.normalize(child)?;
                    }
                    return Ok(());
                }
                ThreadState::Ready(Proc::Fail(msg)) => return Err(self.protocol(pid, msg)),
                ThreadState::Ready(Proc::Send { chan, value, next }) => {
                    if self.channels[chan.0].writer != Some(pid) {
                        let msg = format!("sends on `{}` which it does not write", self.channels[chan.0].name);
                        return Err(self.protocol(pid, msg));
                    }
                    let th = self.threads[tid].as_mut().expect("live thread");
                    th.state = ThreadState::Ready(Proc::Send { chan, value, next });
                    return Ok(());
                }
                ThreadState::Ready(Proc::Choice(guards)) => {
                    if guards.is_empty() {
                        return Err(self.protocol(pid, BuildError::EmptyChoice.to_string()));
                    }
                    if let Some(g) = guards.iter().find(|g| self.channels[g.chan.0].reader != Some(pid)) {
                        let msg = format!("receives on `{}` which it does not read", self.channels[g.chan.0].name);
                        return Err(self.protocol(pid, msg));
                    }
                    let th = self.threads[tid].as_mut().expect("live thread");
                    th.state = ThreadState::Ready(Proc::Choice(guards));
                    return Ok(());
                }
                other @ ThreadState::Joining { .. } => {
                    th.state = other;
                    return Ok(());
                }
                ThreadState::Blank => unreachable!("blank thread state"),
            }
        }
    }

    fn finish_thread(&mut self, tid: usize, v: ValueTree) -> Result<(), RunError> {
        let th = self.threads[tid].take().expect("finishing a dead thread");
        self.free_threads.push(tid);
        match th.parent {
            None => {
                self.processes[th.process.0].result = Some(v);
                Ok(())
            }
            Some((ptid, slot)) => {
                let parent = self.threads[ptid].as_mut().expect("orphaned thread");
                let done = match &mut parent.state {
                    ThreadState::Joining { pending, results, .. } => {
                        results[slot] = Some(v);
                        *pending -= 1;
                        *pending == 0
                    }
                    _ => unreachable!("parent is not joining"),
                };
                if done {
                    let ThreadState::Joining { results, join, .. } =
                        std::mem::replace(&mut parent.state, ThreadState::Blank)
                    else {
                        unreachable!()
                    };
                    let results = results.into_iter().map(|r| r.expect("joined branch")).collect();
                    parent.state = ThreadState::Ready(join(results));
                    return self.normalize(ptid);
                }
                Ok(())
            }
        }
    }

    /// Advance one cycle. Returns the number of transfers; zero means no
    /// rendezvous was possible and the cycle counter did not move.
    pub fn step(&mut self) -> Result<usize, RunError> {
        self.start()?;

        let mut writers: BTreeMap<ChanId, usize> = BTreeMap::new();
        let mut readers: Vec<(ProcessId, usize)> = Vec::new();
        for (tid, slot) in self.threads.iter().enumerate() {
            let Some(th) = slot else { continue };
            match &th.state {
                ThreadState::Ready(Proc::Send { chan, .. }) => {
                    writers.entry(*chan).or_insert(tid);
                }
                ThreadState::Ready(Proc::Choice(_)) => readers.push((th.process, tid)),
                _ => {}
            }
        }
        // lowest process id wins contended writers
        readers.sort();

        let mut taken = BTreeSet::new();
        let mut matches: Vec<(ChanId, usize, usize, usize)> = Vec::new();
        for &(_, rtid) in &readers {
            let Some(Thread { state: ThreadState::Ready(Proc::Choice(guards)), .. }) = &self.threads[rtid] else {
                continue;
            };
            let chans: Vec<ChanId> = guards.iter().map(|g| g.chan).collect();
            if let Some(gi) = select_priority(&chans, |c| writers.contains_key(&c) && !taken.contains(&c)) {
                let c = chans[gi];
                taken.insert(c);
                matches.push((c, writers[&c], rtid, gi));
            }
        }
        if matches.is_empty() {
            return Ok(0);
        }
        matches.sort_by_key(|m| m.0);
        self.cycle += 1;

        // commit: every matched pair moves on together
        let mut resumed: Vec<(usize, Proc)> = Vec::with_capacity(matches.len() * 2);
        for &(chan, wtid, rtid, gi) in &matches {
            let w = self.threads[wtid].as_mut().expect("writer thread");
            let ThreadState::Ready(Proc::Send { value, next, .. }) = std::mem::replace(&mut w.state, ThreadState::Blank)
            else {
                unreachable!("matched writer is not sending")
            };
            let r = self.threads[rtid].as_mut().expect("reader thread");
            let ThreadState::Ready(Proc::Choice(guards)) = std::mem::replace(&mut r.state, ThreadState::Blank) else {
                unreachable!("matched reader is not choosing")
            };
            let guard = guards.into_iter().nth(gi).expect("guard index");
            self.observe(chan, value, r_pid(&self.threads, rtid))?;
            resumed.push((wtid, next()));
            resumed.push((rtid, (guard.then)(value)));
        }
        for (tid, p) in resumed.iter_mut().map(|(t, p)| (*t, std::mem::replace(p, Proc::skip()))) {
            self.threads[tid].as_mut().expect("resumed thread").state = ThreadState::Ready(p);
        }
        for &(tid, _) in &resumed {
            if self.threads[tid].is_some() {
                self.normalize(tid)?;
            }
        }
        Ok(matches.len())
    }

    fn observe(&mut self, chan: ChanId, value: Word, reader: ProcessId) -> Result<(), RunError> {
        self.communications += 1;
        self.chan_counts[chan.0] += 1;
        let info = &self.channels[chan.0];
        if info.output && info.kind == ChannelKind::Data {
            self.items_out += 1;
        }
        if let Some(t) = self.trace.as_mut() {
            t.push(Transfer {
                cycle: self.cycle,
                chan,
                value,
            });
        }
        match self.roles[chan.0] {
            Some(MonitorRole::Data(m)) => {
                let mon = &mut self.monitors[m];
                if mon.eot_count > 0 {
                    let msg = format!("data on stream `{}` after its EOT", mon.name);
                    return Err(self.protocol(reader, msg));
                }
                mon.data_count += 1;
            }
            Some(MonitorRole::Eot(m)) => {
                let mon = &mut self.monitors[m];
                mon.eot_count += 1;
                if mon.eot_count > 1 {
                    let msg = format!("second EOT on stream `{}`", mon.name);
                    return Err(self.protocol(reader, msg));
                }
            }
            None => {}
        }
        Ok(())
    }

    fn blocked_report(&self) -> DeadlockReport {
        let mut per: BTreeMap<ProcessId, Vec<String>> = BTreeMap::new();
        for th in self.threads.iter().flatten() {
            match &th.state {
                ThreadState::Ready(Proc::Send { chan, .. }) => per
                    .entry(th.process)
                    .or_default()
                    .push(format!("{}!", self.channels[chan.0].name)),
                ThreadState::Ready(Proc::Choice(gs)) => {
                    for g in gs {
                        per.entry(th.process)
                            .or_default()
                            .push(format!("{}?", self.channels[g.chan.0].name));
                    }
                }
                _ => {}
            }
        }
        DeadlockReport {
            cycle: self.cycle,
            blocked: per
                .into_iter()
                .map(|(pid, offers)| BlockedProcess {
                    name: self.processes[pid.0].name.clone(),
                    offers,
                })
                .collect(),
        }
    }

    /// A stuck writer still offering data on a stream that already ended is
    /// a protocol fault, not a plain deadlock.
    fn data_after_eot(&self) -> Option<RunError> {
        for th in self.threads.iter().flatten() {
            if let ThreadState::Ready(Proc::Send { chan, .. }) = &th.state {
                if let Some(MonitorRole::Data(m)) = self.roles[chan.0] {
                    if self.monitors[m].eot_count > 0 {
                        let msg = format!("data offered on stream `{}` after its EOT", self.monitors[m].name);
                        return Some(self.protocol(th.process, msg));
                    }
                }
            }
        }
        None
    }

    pub fn run_to_completion(&mut self, max_cycles: u64) -> Result<TraceMetrics, RunError> {
        self.start()?;
        while !self.all_terminated() {
            if self.cycle >= max_cycles {
                return Err(RunError::CycleBudgetExceeded { max_cycles });
            }
            if self.step()? == 0 {
                if let Some(e) = self.data_after_eot() {
                    return Err(e);
                }
                return Err(RunError::Deadlock(self.blocked_report()));
            }
        }
        for mon in &self.monitors {
            if mon.eot_count != 1 {
                return Err(RunError::Protocol {
                    process: mon.name.clone(),
                    message: format!("stream ended with {} EOT signals", mon.eot_count),
                });
            }
        }
        Ok(self.metrics())
    }

    /// Number of data transfers seen on monitored streams, per stream name.
    pub fn stream_summary(&self) -> Vec<(String, u64, u32)> {
        self.monitors
            .iter()
            .map(|m| (m.name.clone(), m.data_count, m.eot_count))
            .collect()
    }
}

fn r_pid(threads: &[Option<Thread>], tid: usize) -> ProcessId {
    threads[tid].as_ref().map(|t| t.process).expect("reader thread")
}
