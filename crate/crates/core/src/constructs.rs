//! Items, streams, vectors and their compositions as channel bundles, plus
//! the utility processes that drive and drain them.

use std::sync::{Arc, Mutex};

use crate::runtime::{BuildError, ChanId, ChannelKind, Guard, Network, Proc, ProcessId, Word, EOT_TOKEN};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Item,
    Stream(Box<Shape>),
    Vector(usize, Box<Shape>),
}

impl Shape {
    pub fn stream(inner: Shape) -> Shape {
        Shape::Stream(Box::new(inner))
    }

    pub fn vector(n: usize, inner: Shape) -> Shape {
        Shape::Vector(n, Box::new(inner))
    }

    /// Sub-producers a parallel PRD needs for this shape.
    pub fn parallel_width(&self) -> usize {
        match self {
            Shape::Item => 1,
            Shape::Stream(s) => s.parallel_width(),
            Shape::Vector(n, s) => n * s.parallel_width(),
        }
    }

    pub fn has_wide_stream_vector(&self, limit: usize) -> bool {
        match self {
            Shape::Item => false,
            Shape::Stream(s) => s.has_wide_stream_vector(limit),
            Shape::Vector(n, s) => {
                (*n > limit && matches!(**s, Shape::Stream(_))) || s.has_wide_stream_vector(limit)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Port {
    Item(ChanId),
    Stream { elements: Box<Port>, eot: ChanId },
    Vector(Vec<Port>),
}

impl Port {
    pub fn shape(&self) -> Shape {
        match self {
            Port::Item(_) => Shape::Item,
            Port::Stream { elements, .. } => Shape::stream(elements.shape()),
            Port::Vector(parts) => Shape::vector(parts.len(), parts[0].shape()),
        }
    }

    pub fn channels(&self) -> Vec<ChanId> {
        let mut out = Vec::new();
        self.collect(&mut out, true);
        out
    }

    /// Channels carrying words, excluding every EOT channel.
    pub fn data_channels(&self) -> Vec<ChanId> {
        let mut out = Vec::new();
        self.collect(&mut out, false);
        out
    }

    fn collect(&self, out: &mut Vec<ChanId>, with_eot: bool) {
        match self {
            Port::Item(c) => out.push(*c),
            Port::Stream { elements, eot } => {
                elements.collect(out, with_eot);
                if with_eot {
                    out.push(*eot);
                }
            }
            Port::Vector(parts) => parts.iter().for_each(|p| p.collect(out, with_eot)),
        }
    }

    /// Channels on which a fresh construct of this port can begin.
    pub fn first_channels(&self) -> Vec<ChanId> {
        match self {
            Port::Item(c) => vec![*c],
            Port::Stream { elements, eot } => {
                let mut v = vec![*eot];
                v.extend(elements.first_channels());
                v
            }
            Port::Vector(parts) => parts[0].first_channels(),
        }
    }

    pub fn item(&self) -> Result<ChanId, BuildError> {
        match self {
            Port::Item(c) => Ok(*c),
            other => Err(BuildError::ShapeMismatch(format!("expected an item port, found {:?}", other.shape()))),
        }
    }

    pub fn stream_parts(&self) -> Result<(&Port, ChanId), BuildError> {
        match self {
            Port::Stream { elements, eot } => Ok((elements, *eot)),
            other => Err(BuildError::ShapeMismatch(format!("expected a stream port, found {:?}", other.shape()))),
        }
    }

    pub fn vector_parts(&self) -> Result<&[Port], BuildError> {
        match self {
            Port::Vector(parts) => Ok(parts),
            other => Err(BuildError::ShapeMismatch(format!("expected a vector port, found {:?}", other.shape()))),
        }
    }
}

/// Plain data carried by a construct.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ValueTree {
    Scalar(Word),
    List(Vec<ValueTree>),
}

impl ValueTree {
    pub fn unit() -> ValueTree {
        ValueTree::List(Vec::new())
    }

    pub fn scalar(v: i64) -> ValueTree {
        ValueTree::Scalar(Word(v))
    }

    pub fn words(ws: &[i64]) -> ValueTree {
        ValueTree::List(ws.iter().map(|&w| ValueTree::scalar(w)).collect())
    }

    pub fn nested(rows: &[Vec<i64>]) -> ValueTree {
        ValueTree::List(rows.iter().map(|r| ValueTree::words(r)).collect())
    }

    pub fn as_word(&self) -> Option<Word> {
        match self {
            ValueTree::Scalar(w) => Some(*w),
            ValueTree::List(_) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[ValueTree]> {
        match self {
            ValueTree::List(v) => Some(v),
            ValueTree::Scalar(_) => None,
        }
    }

    /// Flat list of words, if this is a list of scalars.
    pub fn to_words(&self) -> Option<Vec<i64>> {
        self.as_list()?.iter().map(|v| v.as_word().map(|w| w.0)).collect()
    }

    pub fn to_nested(&self) -> Option<Vec<Vec<i64>>> {
        self.as_list()?.iter().map(|v| v.to_words()).collect()
    }

    pub fn conforms(&self, shape: &Shape) -> bool {
        match (self, shape) {
            (ValueTree::Scalar(_), Shape::Item) => true,
            (ValueTree::List(vs), Shape::Stream(s)) => vs.iter().all(|v| v.conforms(s)),
            (ValueTree::List(vs), Shape::Vector(n, s)) => vs.len() == *n && vs.iter().all(|v| v.conforms(s)),
            _ => false,
        }
    }
}

/// A word already taken off `chan` by a prioritized choice, to be handed to
/// the receiver of the construct it begins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prefetch {
    pub chan: ChanId,
    pub value: Word,
}

fn build_port(net: &mut Network, shape: &Shape, name: &str, monitor: bool) -> Result<Port, BuildError> {
    match shape {
        Shape::Item => Ok(Port::Item(net.channel(name, ChannelKind::Data))),
        Shape::Stream(inner) => {
            let elements = build_port(net, inner, &format!("{name}.e"), false)?;
            let eot = net.channel(format!("{name}.eot"), ChannelKind::Eot);
            if monitor {
                net.monitor_stream(name, &elements.channels(), eot);
            }
            Ok(Port::Stream {
                elements: Box::new(elements),
                eot,
            })
        }
        Shape::Vector(n, inner) => {
            if *n == 0 {
                return Err(BuildError::Arity(format!("vector port `{name}` needs at least one element")));
            }
            (0..*n)
                .map(|i| build_port(net, inner, &format!("{name}[{i}]"), monitor))
                .collect::<Result<_, _>>()
                .map(Port::Vector)
        }
    }
}

/// Allocate channels for `shape`. Streams that are not nested inside another
/// stream get a protocol monitor.
pub fn new_port(net: &mut Network, shape: &Shape, name: &str) -> Result<Port, BuildError> {
    build_port(net, shape, name, true)
}

/// Channels private to one process body, reused across activations, so
/// never monitored.
pub fn internal_port(net: &mut Network, shape: &Shape, name: &str) -> Result<Port, BuildError> {
    build_port(net, shape, name, false)
}

fn check_value(port: &Port, data: &ValueTree) -> Result<(), BuildError> {
    let shape = port.shape();
    if data.conforms(&shape) {
        Ok(())
    } else {
        Err(BuildError::ShapeMismatch(format!("value {data:?} does not fit {shape:?}")))
    }
}

/// Send a construct: streams element by element then EOT, vectors in parallel.
pub fn send_tree(port: &Port, value: ValueTree) -> Proc {
    match (port, value) {
        (Port::Item(c), ValueTree::Scalar(w)) => Proc::send(*c, w, Proc::skip),
        (Port::Stream { elements, eot }, ValueTree::List(vs)) => send_stream((**elements).clone(), *eot, vs, 0),
        (Port::Vector(parts), ValueTree::List(vs)) if parts.len() == vs.len() => {
            Proc::interleave(parts.iter().zip(vs).map(|(p, v)| send_tree(p, v)).collect())
        }
        (p, v) => Proc::Fail(format!("cannot send {v:?} on a {:?} port", p.shape())),
    }
}

fn send_stream(elements: Port, eot: ChanId, vs: Vec<ValueTree>, i: usize) -> Proc {
    if i == vs.len() {
        return Proc::send(eot, EOT_TOKEN, Proc::skip);
    }
    let v = vs[i].clone();
    send_tree(&elements, v).then(move |_| send_stream(elements, eot, vs, i + 1))
}

/// Receive one construct. `pre` is a word already taken from one of the
/// port's first channels.
pub fn recv_tree(port: &Port, pre: Option<Prefetch>) -> Proc {
    match port {
        Port::Item(c) => match pre {
            Some(p) if p.chan == *c => Proc::Done(ValueTree::Scalar(p.value)),
            _ => Proc::recv(*c, |w| Proc::Done(ValueTree::Scalar(w))),
        },
        Port::Vector(parts) => {
            let branches = parts
                .iter()
                .map(|p| {
                    let mine = pre.filter(|x| p.channels().contains(&x.chan));
                    recv_tree(p, mine)
                })
                .collect();
            Proc::par(branches, |vs| Proc::Done(ValueTree::List(vs)))
        }
        Port::Stream { elements, eot } => {
            let elements = (**elements).clone();
            match pre {
                Some(p) if p.chan == *eot => Proc::Done(ValueTree::List(Vec::new())),
                Some(p) => recv_tree(&elements, Some(p)).then({
                    let eot = *eot;
                    move |v| recv_stream(elements, eot, vec![v])
                }),
                None => recv_stream(elements, *eot, Vec::new()),
            }
        }
    }
}

fn recv_stream(elements: Port, eot: ChanId, acc: Vec<ValueTree>) -> Proc {
    let acc = Arc::new(Mutex::new(Some(acc)));
    let take = |a: &Arc<Mutex<Option<Vec<ValueTree>>>>| a.lock().expect("stream buffer").take().expect("stream buffer taken");
    let mut guards = Vec::new();
    {
        let acc = Arc::clone(&acc);
        guards.push(Guard::new(eot, move |_| Proc::Done(ValueTree::List(take(&acc)))));
    }
    for c in elements.first_channels() {
        let acc = Arc::clone(&acc);
        let elements = elements.clone();
        guards.push(Guard::new(c, move |w| {
            let mut acc = take(&acc);
            recv_tree(&elements, Some(Prefetch { chan: c, value: w })).then(move |v| {
                acc.push(v);
                recv_stream(elements, eot, acc)
            })
        }));
    }
    Proc::Choice(guards)
}

/// Depth-first, one word at a time; the single-port memory access pattern.
pub fn send_serial(port: &Port, value: ValueTree) -> Proc {
    match (port, value) {
        (Port::Item(c), ValueTree::Scalar(w)) => Proc::send(*c, w, Proc::skip),
        (Port::Stream { elements, eot }, ValueTree::List(vs)) => {
            let eot = *eot;
            seq_all((**elements).clone(), vs, move || Proc::send(eot, EOT_TOKEN, Proc::skip))
        }
        (Port::Vector(parts), ValueTree::List(vs)) if parts.len() == vs.len() => {
            let pairs: Vec<(Port, ValueTree)> = parts.iter().cloned().zip(vs).collect();
            seq_pairs(pairs, 0)
        }
        (p, v) => Proc::Fail(format!("cannot send {v:?} on a {:?} port", p.shape())),
    }
}

fn seq_all(port: Port, vs: Vec<ValueTree>, last: impl FnOnce() -> Proc + Send + 'static) -> Proc {
    let pairs = vs.into_iter().map(|v| (port.clone(), v)).collect();
    seq_pairs(pairs, 0).then(move |_| last())
}

fn seq_pairs(pairs: Vec<(Port, ValueTree)>, i: usize) -> Proc {
    if i == pairs.len() {
        return Proc::skip();
    }
    let (p, v) = pairs[i].clone();
    send_serial(&p, v).then(move |_| seq_pairs(pairs, i + 1))
}

/// Receive state for a consumer that takes one word per cycle in any order
/// the producer offers.
#[derive(Clone, Debug)]
pub enum Cursor {
    Item {
        chan: ChanId,
        value: Option<Word>,
    },
    Vector(Vec<Cursor>),
    Stream {
        elements: Port,
        eot: ChanId,
        items: Vec<ValueTree>,
        current: Option<Box<Cursor>>,
        done: bool,
    },
    /// A stream of flat vectors, written as independent columns: component
    /// i of element t is the t-th word on channel i. EOT is accepted once
    /// every column has the same length.
    Columns {
        chans: Vec<ChanId>,
        eot: ChanId,
        cols: Vec<Vec<Word>>,
        done: bool,
    },
}

impl Cursor {
    pub fn new(port: &Port) -> Cursor {
        match port {
            Port::Item(c) => Cursor::Item { chan: *c, value: None },
            Port::Vector(parts) => Cursor::Vector(parts.iter().map(Cursor::new).collect()),
            Port::Stream { elements, eot } if flat_vector(elements) => {
                let chans = elements.channels();
                Cursor::Columns {
                    cols: vec![Vec::new(); chans.len()],
                    chans,
                    eot: *eot,
                    done: false,
                }
            }
            Port::Stream { elements, eot } => Cursor::Stream {
                elements: (**elements).clone(),
                eot: *eot,
                items: Vec::new(),
                current: None,
                done: false,
            },
        }
    }

    pub fn complete(&self) -> bool {
        match self {
            Cursor::Item { value, .. } => value.is_some(),
            Cursor::Vector(cs) => cs.iter().all(Cursor::complete),
            Cursor::Stream { done, .. } | Cursor::Columns { done, .. } => *done,
        }
    }

    /// Channels this cursor will accept next, highest priority first.
    pub fn expected(&self) -> Vec<ChanId> {
        match self {
            Cursor::Item { chan, value } => {
                if value.is_none() {
                    vec![*chan]
                } else {
                    Vec::new()
                }
            }
            Cursor::Vector(cs) => cs.iter().flat_map(Cursor::expected).collect(),
            Cursor::Stream { elements, eot, current, done, .. } => {
                if *done {
                    Vec::new()
                } else if let Some(cur) = current {
                    cur.expected()
                } else {
                    let mut v = vec![*eot];
                    v.extend(elements.first_channels());
                    v
                }
            }
            Cursor::Columns { chans, eot, cols, done } => {
                if *done {
                    return Vec::new();
                }
                let mut v = Vec::new();
                if cols.iter().all(|c| c.len() == cols[0].len()) {
                    v.push(*eot);
                }
                v.extend(chans.iter().copied());
                v
            }
        }
    }

    /// Accept a word; returns false if this cursor was not expecting `chan`.
    pub fn deliver(&mut self, chan: ChanId, w: Word) -> bool {
        match self {
            Cursor::Item { chan: c, value } => {
                if *c == chan && value.is_none() {
                    *value = Some(w);
                    true
                } else {
                    false
                }
            }
            Cursor::Vector(cs) => cs.iter_mut().any(|c| c.expected().contains(&chan) && c.deliver(chan, w)),
            Cursor::Stream { elements, eot, items, current, done } => {
                if *done {
                    return false;
                }
                if current.is_none() {
                    if chan == *eot {
                        *done = true;
                        return true;
                    }
                    *current = Some(Box::new(Cursor::new(elements)));
                }
                let cur = current.as_mut().expect("element cursor");
                if !cur.deliver(chan, w) {
                    return false;
                }
                if cur.complete() {
                    items.push(cur.value());
                    *current = None;
                }
                true
            }
            Cursor::Columns { chans, eot, cols, done } => {
                if *done {
                    return false;
                }
                if chan == *eot {
                    *done = true;
                    return true;
                }
                match chans.iter().position(|&c| c == chan) {
                    Some(i) => {
                        cols[i].push(w);
                        true
                    }
                    None => false,
                }
            }
        }
    }

    pub fn value(&self) -> ValueTree {
        match self {
            Cursor::Item { value, .. } => ValueTree::Scalar(value.unwrap_or_default()),
            Cursor::Vector(cs) => ValueTree::List(cs.iter().map(Cursor::value).collect()),
            Cursor::Stream { items, .. } => ValueTree::List(items.clone()),
            Cursor::Columns { cols, .. } => {
                let len = cols.first().map_or(0, Vec::len);
                ValueTree::List(
                    (0..len)
                        .map(|t| ValueTree::List(cols.iter().map(|c| ValueTree::Scalar(c[t])).collect()))
                        .collect(),
                )
            }
        }
    }
}

fn flat_vector(p: &Port) -> bool {
    matches!(p, Port::Vector(parts) if parts.iter().all(|q| matches!(q, Port::Item(_))))
}

fn serial_recv(cursor: Cursor) -> Proc {
    if cursor.complete() {
        return Proc::Done(cursor.value());
    }
    let expected = cursor.expected();
    let slot = Arc::new(Mutex::new(Some(cursor)));
    Proc::Choice(
        expected
            .into_iter()
            .map(|c| {
                let slot = Arc::clone(&slot);
                Guard::new(c, move |w| {
                    let mut cur = slot.lock().expect("cursor").take().expect("cursor taken");
                    if !cur.deliver(c, w) {
                        return Proc::Fail("word arrived on an unexpected channel".into());
                    }
                    serial_recv(cur)
                })
            })
            .collect(),
    )
}

/// Receive a construct one word per cycle.
pub fn recv_serial(port: &Port) -> Proc {
    serial_recv(Cursor::new(port))
}

/// PRD: drive `port` with `data`.
pub fn prd(net: &mut Network, name: &str, port: &Port, data: ValueTree) -> Result<ProcessId, BuildError> {
    check_value(port, &data)?;
    let width = net.width();
    if let Some(bad) = out_of_range(&data, width) {
        return Err(BuildError::ShapeMismatch(format!("word {bad} does not fit {} bits", width.bits())));
    }
    net.add_process(name, port.shape().parallel_width(), &[], &port.channels(), send_tree(port, data))
}

fn out_of_range(v: &ValueTree, width: crate::runtime::Width) -> Option<Word> {
    match v {
        ValueTree::Scalar(w) => (!width.contains(*w)).then_some(*w),
        ValueTree::List(vs) => vs.iter().find_map(|x| out_of_range(x, width)),
    }
}

/// STORE: consume one construct; the value is available from
/// [`Network::result`] once the process has terminated.
pub fn store(net: &mut Network, name: &str, port: &Port) -> Result<ProcessId, BuildError> {
    net.add_process(name, port.shape().parallel_width(), &port.channels(), &[], recv_tree(port, None))
}

/// SINK: consume one construct and discard it.
pub fn sink(net: &mut Network, name: &str, port: &Port) -> Result<ProcessId, BuildError> {
    let body = recv_tree(port, None).then(|_| Proc::skip());
    net.add_process(name, port.shape().parallel_width(), &port.channels(), &[], body)
}

/// Replicate everything arriving on `input` to every port in `outputs`.
pub fn broadcast(net: &mut Network, name: &str, input: &Port, outputs: &[Port]) -> Result<ProcessId, BuildError> {
    if outputs.is_empty() {
        return Err(BuildError::Arity(format!("broadcast `{name}` needs at least one output")));
    }
    let shape = input.shape();
    if let Some(o) = outputs.iter().find(|o| o.shape() != shape) {
        return Err(BuildError::ShapeMismatch(format!(
            "broadcast `{name}`: output {:?} differs from input {shape:?}",
            o.shape()
        )));
    }
    let writes: Vec<ChanId> = outputs.iter().flat_map(Port::channels).collect();
    net.add_process(name, 1, &input.channels(), &writes, broadcast_body(input, outputs.to_vec()))
}

pub fn broadcast_body(input: &Port, outputs: Vec<Port>) -> Proc {
    match input {
        Port::Stream { elements, eot } => {
            let outs: Vec<(Port, ChanId)> = outputs
                .iter()
                .map(|o| match o {
                    Port::Stream { elements, eot } => ((**elements).clone(), *eot),
                    _ => unreachable!("shapes checked"),
                })
                .collect();
            broadcast_stream((**elements).clone(), *eot, outs)
        }
        _ => recv_tree(input, None).then(move |v| {
            Proc::interleave(outputs.iter().map(|o| send_tree(o, v.clone())).collect())
        }),
    }
}

fn broadcast_stream(elements: Port, eot: ChanId, outs: Vec<(Port, ChanId)>) -> Proc {
    let mut guards = Vec::new();
    {
        let eots: Vec<ChanId> = outs.iter().map(|o| o.1).collect();
        guards.push(Guard::new(eot, move |_| {
            Proc::interleave(eots.iter().map(|&e| Proc::send(e, EOT_TOKEN, Proc::skip)).collect())
        }));
    }
    for c in elements.first_channels() {
        let elements = elements.clone();
        let outs = outs.clone();
        guards.push(Guard::new(c, move |w| {
            recv_tree(&elements, Some(Prefetch { chan: c, value: w })).then(move |v| {
                let sends = outs.iter().map(|(p, _)| send_tree(p, v.clone())).collect();
                Proc::interleave(sends).then(move |_| broadcast_stream(elements, eot, outs))
            })
        }));
    }
    Proc::Choice(guards)
}

/// Single-port memory read: emits `data` one word per cycle.
pub fn bank_source(net: &mut Network, name: &str, port: &Port, data: ValueTree) -> Result<ProcessId, BuildError> {
    check_value(port, &data)?;
    net.add_process(name, 1, &[], &port.channels(), send_serial(port, data))
}

/// Maximum number of memory banks usable concurrently by one sink.
pub const CONCURRENT_BANKS: usize = 4;

/// Single-port memory write: absorbs one word per cycle and keeps the result.
pub fn bank_sink(net: &mut Network, name: &str, port: &Port) -> Result<ProcessId, BuildError> {
    let shape = port.shape();
    if shape.has_wide_stream_vector(CONCURRENT_BANKS) {
        net.warn(format!(
            "`{name}` collects more than {CONCURRENT_BANKS} concurrent streams; exceeds available memory banks"
        ));
    }
    net.add_process(name, 1, &port.channels(), &[], recv_serial(port))
}

/// Compose a producer and a consumer over a fresh hidden port of `shape`.
pub fn feed<A, B>(
    net: &mut Network,
    shape: &Shape,
    name: &str,
    producer: impl FnOnce(&mut Network, &Port) -> Result<A, BuildError>,
    consumer: impl FnOnce(&mut Network, &Port) -> Result<B, BuildError>,
) -> Result<(A, B), BuildError> {
    let mid = new_port(net, shape, name)?;
    let a = producer(net, &mid)?;
    let b = consumer(net, &mid)?;
    Ok((a, b))
}
