//! Process refinements of map, zipWith and foldr over streams and vectors,
//! pipeline builders, and the systolic cell.

use std::sync::{Arc, Mutex};

use crate::constructs::{internal_port, new_port, recv_tree, send_tree, Port, Prefetch, Shape, ValueTree};
use crate::runtime::{BuildError, ChanId, Guard, Network, Proc, ProcessId, Width, Word, EOT_TOKEN};

pub type UnaryFn = dyn Fn(&Port, &Port, Option<Prefetch>) -> Proc + Send + Sync;
pub type BinaryFn = dyn Fn(&Port, &Port, &Port, Option<Prefetch>, Option<Prefetch>) -> Proc + Send + Sync;

/// One activation of a process F with one input and one output construct.
#[derive(Clone)]
pub struct Unary {
    pub body: Arc<UnaryFn>,
    pub instances: usize,
}

/// One activation of a process F with two inputs and one output.
#[derive(Clone)]
pub struct Binary {
    pub body: Arc<BinaryFn>,
    pub instances: usize,
}

impl Unary {
    pub fn new(body: impl Fn(&Port, &Port, Option<Prefetch>) -> Proc + Send + Sync + 'static) -> Unary {
        Unary {
            body: Arc::new(body),
            instances: 1,
        }
    }

    /// Lift a function on items.
    pub fn word(f: impl Fn(Word) -> Word + Send + Sync + 'static) -> Unary {
        let f = Arc::new(f);
        Unary::new(move |i, o, pre| {
            let f = Arc::clone(&f);
            let o = o.clone();
            recv_tree(i, pre).then(move |v| match v {
                ValueTree::Scalar(w) => send_tree(&o, ValueTree::Scalar(f(w))),
                other => Proc::Fail(format!("expected an item, got {other:?}")),
            })
        })
    }

    /// Lift a function on whole constructs.
    pub fn tree(f: impl Fn(ValueTree) -> ValueTree + Send + Sync + 'static) -> Unary {
        let f = Arc::new(f);
        Unary::new(move |i, o, pre| {
            let f = Arc::clone(&f);
            let o = o.clone();
            recv_tree(i, pre).then(move |v| send_tree(&o, f(v)))
        })
    }
}

impl Binary {
    pub fn new(
        body: impl Fn(&Port, &Port, &Port, Option<Prefetch>, Option<Prefetch>) -> Proc + Send + Sync + 'static,
    ) -> Binary {
        Binary {
            body: Arc::new(body),
            instances: 1,
        }
    }

    /// Read both inputs in either order, then write `f(a, b)`.
    pub fn word(f: impl Fn(Word, Word) -> Word + Send + Sync + 'static) -> Binary {
        let f = Arc::new(f);
        Binary::new(move |a, b, o, pa, pb| {
            let f = Arc::clone(&f);
            let o = o.clone();
            Proc::par(vec![recv_tree(a, pa), recv_tree(b, pb)], move |vs| {
                match (vs[0].as_word(), vs[1].as_word()) {
                    (Some(x), Some(y)) => send_tree(&o, ValueTree::Scalar(f(x, y))),
                    _ => Proc::Fail(format!("expected two items, got {vs:?}")),
                }
            })
        })
    }

    pub fn tree(f: impl Fn(ValueTree, ValueTree) -> ValueTree + Send + Sync + 'static) -> Binary {
        let f = Arc::new(f);
        Binary::new(move |a, b, o, pa, pb| {
            let f = Arc::clone(&f);
            let o = o.clone();
            Proc::par(vec![recv_tree(a, pa), recv_tree(b, pb)], move |mut vs| {
                let y = vs.pop().expect("two branches");
                let x = vs.pop().expect("two branches");
                send_tree(&o, f(x, y))
            })
        })
    }
}

pub fn add_body(width: Width) -> Binary {
    Binary::word(move |a, b| width.add(a, b))
}

pub fn mul_body(width: Width) -> Binary {
    Binary::word(move |a, b| width.mul(a, b))
}

pub fn first_projection() -> Binary {
    Binary::tree(|a, _| a)
}

/// A statically instantiated sub-network that runs inside another process
/// and can be restarted once per activation of its host.
#[derive(Clone)]
pub struct Inline {
    pub make: Arc<dyn Fn() -> Proc + Send + Sync>,
    pub internal: Vec<ChanId>,
    pub instances: usize,
}

fn expect_same(what: &str, a: &Shape, b: &Shape) -> Result<(), BuildError> {
    if a == b {
        Ok(())
    } else {
        Err(BuildError::ShapeMismatch(format!("{what}: {a:?} vs {b:?}")))
    }
}

fn vector_len(what: &str, p: &Port) -> Result<usize, BuildError> {
    let n = p.vector_parts()?.len();
    if n == 0 {
        return Err(BuildError::Arity(format!("{what} needs n >= 1")));
    }
    Ok(n)
}

fn shared<T>(v: T) -> Arc<Mutex<Option<T>>> {
    Arc::new(Mutex::new(Some(v)))
}

fn take<T>(slot: &Arc<Mutex<Option<T>>>) -> T {
    slot.lock().expect("slot").take().expect("slot taken twice")
}

pub fn smap_body(f: Unary, input: &Port, output: &Port) -> Result<Proc, BuildError> {
    let (ie, ieot) = input.stream_parts()?;
    let (oe, oeot) = output.stream_parts()?;
    Ok(smap_loop(f, ie.clone(), ieot, oe.clone(), oeot))
}

fn smap_loop(f: Unary, ie: Port, ieot: ChanId, oe: Port, oeot: ChanId) -> Proc {
    let mut guards = vec![Guard::new(ieot, move |_| Proc::send(oeot, EOT_TOKEN, Proc::skip))];
    for c in ie.first_channels() {
        let (f, ie, oe) = (f.clone(), ie.clone(), oe.clone());
        guards.push(Guard::new(c, move |w| {
            (f.body)(&ie, &oe, Some(Prefetch { chan: c, value: w }))
                .then(move |_| smap_loop(f, ie, ieot, oe, oeot))
        }));
    }
    Proc::Choice(guards)
}

/// SMAP: apply F to every element of a stream, forwarding EOT.
pub fn smap(net: &mut Network, name: &str, f: Unary, input: &Port, output: &Port) -> Result<ProcessId, BuildError> {
    let body = smap_body(f.clone(), input, output)?;
    net.add_process(name, 1 + f.instances, &input.channels(), &output.channels(), body)
}

/// VMAP: n independent instances of F, one per vector element.
pub fn vmap(net: &mut Network, name: &str, f: Unary, input: &Port, output: &Port) -> Result<Vec<ProcessId>, BuildError> {
    let n = vector_len("vmap", input)?;
    let ins = input.vector_parts()?;
    let outs = output.vector_parts()?;
    if outs.len() != n {
        return Err(BuildError::Arity(format!("vmap: {n} inputs, {} outputs", outs.len())));
    }
    (0..n)
        .map(|i| {
            net.add_process(
                format!("{name}[{i}]"),
                f.instances,
                &ins[i].channels(),
                &outs[i].channels(),
                (f.body)(&ins[i], &outs[i], None),
            )
        })
        .collect()
}

pub fn szipwith_body(f: Binary, a: &Port, b: &Port, out: &Port) -> Result<Proc, BuildError> {
    let (ae, aeot) = a.stream_parts()?;
    let (be, beot) = b.stream_parts()?;
    let (oe, oeot) = out.stream_parts()?;
    Ok(szip_loop(f, (ae.clone(), aeot), (be.clone(), beot), (oe.clone(), oeot)))
}

fn szip_loop(f: Binary, a: (Port, ChanId), b: (Port, ChanId), o: (Port, ChanId)) -> Proc {
    let mut guards = Vec::new();
    {
        let (b, o) = (b.clone(), o.clone());
        guards.push(Guard::new(a.1, move |_| {
            let mut gs = vec![Guard::new(b.1, move |_| Proc::send(o.1, EOT_TOKEN, Proc::skip))];
            for c in b.0.first_channels() {
                gs.push(Guard::new(c, |_| Proc::Fail("zipped streams differ in length: first ended early".into())));
            }
            Proc::Choice(gs)
        }));
    }
    for ca in a.0.first_channels() {
        let (f, a, b, o) = (f.clone(), a.clone(), b.clone(), o.clone());
        guards.push(Guard::new(ca, move |wa| {
            let pa = Prefetch { chan: ca, value: wa };
            let mut gs = vec![Guard::new(b.1, |_| {
                Proc::Fail("zipped streams differ in length: second ended early".into())
            })];
            for cb in b.0.first_channels() {
                let (f, a, b, o) = (f.clone(), a.clone(), b.clone(), o.clone());
                gs.push(Guard::new(cb, move |wb| {
                    let pb = Prefetch { chan: cb, value: wb };
                    (f.body)(&a.0, &b.0, &o.0, Some(pa), Some(pb)).then(move |_| szip_loop(f, a, b, o))
                }));
            }
            Proc::Choice(gs)
        }));
    }
    Proc::Choice(guards)
}

/// SZIPWITH: combine two streams elementwise; their EOTs must pair up.
pub fn szipwith(net: &mut Network, name: &str, f: Binary, a: &Port, b: &Port, out: &Port) -> Result<ProcessId, BuildError> {
    let body = szipwith_body(f.clone(), a, b, out)?;
    let mut reads = a.channels();
    reads.extend(b.channels());
    net.add_process(name, 1 + f.instances, &reads, &out.channels(), body)
}

type ZipParts<'a> = (&'a [Port], &'a [Port], &'a [Port]);

fn zip_parts<'a>(a: &'a Port, b: &'a Port, out: &'a Port) -> Result<ZipParts<'a>, BuildError> {
    let n = vector_len("vzipwith", a)?;
    let (pa, pb, po) = (a.vector_parts()?, b.vector_parts()?, out.vector_parts()?);
    if pb.len() != n || po.len() != n {
        return Err(BuildError::Arity(format!("vzipwith: lengths {n}, {}, {}", pb.len(), po.len())));
    }
    Ok((pa, pb, po))
}

/// All n instances of F interleaved; `pre_a` is routed to the element of
/// `a` it was taken from.
pub fn vzipwith_body(f: &Binary, a: &Port, b: &Port, out: &Port, pre_a: Option<Prefetch>) -> Result<Proc, BuildError> {
    let (pa, pb, po) = zip_parts(a, b, out)?;
    Ok(Proc::interleave(
        (0..pa.len())
            .map(|i| {
                let mine = pre_a.filter(|p| pa[i].channels().contains(&p.chan));
                (f.body)(&pa[i], &pb[i], &po[i], mine, None)
            })
            .collect(),
    ))
}

/// VZIPWITH as one restartable body (all n instances interleaved).
pub fn vzipwith_inline(f: Binary, a: &Port, b: &Port, out: &Port) -> Result<Inline, BuildError> {
    let (pa, pb, po) = zip_parts(a, b, out)?;
    let (pa, pb, po) = (pa.to_vec(), pb.to_vec(), po.to_vec());
    let n = pa.len();
    let instances = n * f.instances;
    Ok(Inline {
        make: Arc::new(move || {
            Proc::interleave((0..n).map(|i| (f.body)(&pa[i], &pb[i], &po[i], None, None)).collect())
        }),
        internal: Vec::new(),
        instances,
    })
}

/// VZIPWITH: n parallel instances of F over paired elements.
pub fn vzipwith(net: &mut Network, name: &str, f: Binary, a: &Port, b: &Port, out: &Port) -> Result<Vec<ProcessId>, BuildError> {
    let (pa, pb, po) = zip_parts(a, b, out)?;
    (0..pa.len())
        .map(|i| {
            let mut reads = pa[i].channels();
            reads.extend(pb[i].channels());
            net.add_process(
                format!("{name}[{i}]"),
                f.instances,
                &reads,
                &po[i].channels(),
                (f.body)(&pa[i], &pb[i], &po[i], None, None),
            )
        })
        .collect()
}

struct FoldWiring {
    ins: Vec<Port>,
    chain: Vec<Port>,
}

fn fold_wiring(net: &mut Network, name: &str, input: &Port, out: &Port, internal: bool) -> Result<FoldWiring, BuildError> {
    let n = vector_len("vfoldr", input)?;
    let ins = input.vector_parts()?.to_vec();
    let elem = ins[0].shape();
    expect_same("vfoldr output", &elem, &out.shape())?;
    let mut chain = vec![out.clone()];
    for i in 1..=n {
        let label = format!("{name}.acc{i}");
        chain.push(if internal {
            internal_port(net, &elem, &label)?
        } else {
            new_port(net, &elem, &label)?
        });
    }
    Ok(FoldWiring { ins, chain })
}

/// VFOLDR: a chain of n F processes folding right-to-left from seed `e`.
/// Element i is combined with the fold of elements i+1.. and passed left.
pub fn vfoldr(net: &mut Network, name: &str, f: Binary, e: ValueTree, input: &Port, out: &Port) -> Result<Vec<ProcessId>, BuildError> {
    let FoldWiring { ins, chain } = fold_wiring(net, name, input, out, false)?;
    let n = ins.len();
    let mut pids = vec![crate::constructs::prd(net, &format!("{name}.seed"), &chain[n], e)?];
    for i in 0..n {
        let mut reads = ins[i].channels();
        reads.extend(chain[i + 1].channels());
        pids.push(net.add_process(
            format!("{name}[{i}]"),
            f.instances,
            &reads,
            &chain[i].channels(),
            (f.body)(&ins[i], &chain[i + 1], &chain[i], None, None),
        )?);
    }
    Ok(pids)
}

pub fn vfoldr_inline(net: &mut Network, name: &str, f: Binary, e: ValueTree, input: &Port, out: &Port) -> Result<Inline, BuildError> {
    let FoldWiring { ins, chain } = fold_wiring(net, name, input, out, true)?;
    if !e.conforms(&chain[0].shape()) {
        return Err(BuildError::ShapeMismatch(format!("vfoldr seed {e:?}")));
    }
    let n = ins.len();
    let internal = chain[1..].iter().flat_map(Port::channels).collect();
    Ok(Inline {
        make: Arc::new(move || {
            let mut branches = vec![send_tree(&chain[n], e.clone())];
            branches.extend((0..n).map(|i| (f.body)(&ins[i], &chain[i + 1], &chain[i], None, None)));
            Proc::interleave(branches)
        }),
        internal,
        instances: 1 + n * f.instances,
    })
}

pub fn add_proc(net: &mut Network, name: &str, in1: &Port, in2: &Port, out: &Port) -> Result<ProcessId, BuildError> {
    let f = add_body(net.width());
    net.add_process(name, 1, &[in1.item()?, in2.item()?], &[out.item()?], (f.body)(in1, in2, out, None, None))
}

pub fn mul_proc(net: &mut Network, name: &str, in1: &Port, in2: &Port, out: &Port) -> Result<ProcessId, BuildError> {
    let f = mul_body(net.width());
    net.add_process(name, 1, &[in1.item()?, in2.item()?], &[out.item()?], (f.body)(in1, in2, out, None, None))
}

pub type StepFn = dyn Fn(&ValueTree, &ValueTree, &ValueTree) -> ValueTree + Send + Sync;

/// `h [] x = e`, `h (a:s) x = f a x (h s x)`; the pipeline computes
/// `map (h m)`.
#[derive(Clone)]
pub struct PipelineSpecArgs {
    pub f: Arc<StepFn>,
    pub e: ValueTree,
    pub m: Vec<ValueTree>,
}

impl PipelineSpecArgs {
    /// Direct functional evaluation of `h m x`.
    pub fn h(&self, x: &ValueTree) -> ValueTree {
        self.m.iter().rev().fold(self.e.clone(), |y, a| (self.f)(a, x, &y))
    }
}

#[derive(Clone)]
struct Tuple {
    xs: Port,
    xeot: ChanId,
    ys: Port,
    yeot: ChanId,
}

impl Tuple {
    fn new(net: &mut Network, name: &str, x: &Shape, y: &Shape) -> Result<Tuple, BuildError> {
        let xp = new_port(net, &Shape::stream(x.clone()), &format!("{name}.x"))?;
        let yp = new_port(net, &Shape::stream(y.clone()), &format!("{name}.y"))?;
        let (xs, xeot) = xp.stream_parts()?;
        let (ys, yeot) = yp.stream_parts()?;
        Ok(Tuple {
            xs: xs.clone(),
            xeot,
            ys: ys.clone(),
            yeot,
        })
    }

    fn channels(&self) -> Vec<ChanId> {
        let mut v = self.xs.channels();
        v.push(self.xeot);
        v.extend(self.ys.channels());
        v.push(self.yeot);
        v
    }

    fn send_eots(&self) -> Proc {
        Proc::interleave(vec![
            Proc::send(self.xeot, EOT_TOKEN, Proc::skip),
            Proc::send(self.yeot, EOT_TOKEN, Proc::skip),
        ])
    }

    fn send(&self, x: ValueTree, y: ValueTree) -> Proc {
        Proc::interleave(vec![send_tree(&self.xs, x), send_tree(&self.ys, y)])
    }

    /// On the tuple's EOT the y stream must end too.
    fn recv_then(
        &self,
        on_eot: impl FnOnce() -> Proc + Send + 'static,
        on_item: impl Fn(ValueTree, ValueTree) -> Proc + Send + Sync + 'static,
    ) -> Proc {
        let on_eot = shared(on_eot);
        let on_item = Arc::new(on_item);
        let mut guards = Vec::new();
        {
            let ys = self.ys.clone();
            let yeot = self.yeot;
            guards.push(Guard::new(self.xeot, move |_| {
                let mut gs = vec![Guard::new(yeot, move |_| take(&on_eot)())];
                for c in ys.first_channels() {
                    gs.push(Guard::new(c, |_| Proc::Fail("accumulator stream outlived its argument stream".into())));
                }
                Proc::Choice(gs)
            }));
        }
        for c in self.xs.first_channels() {
            let this = self.clone();
            let on_item = Arc::clone(&on_item);
            guards.push(Guard::new(c, move |w| {
                let pre = Prefetch { chan: c, value: w };
                let mut gs = vec![Guard::new(this.yeot, |_| {
                    Proc::Fail("accumulator stream ended before its argument stream".into())
                })];
                for cy in this.ys.first_channels() {
                    let ys = this.ys.clone();
                    gs.push(Guard::new(cy, move |wy| recv_tree(&ys, Some(Prefetch { chan: cy, value: wy }))));
                }
                // both halves of the tuple arrive in parallel
                Proc::par(vec![recv_tree(&this.xs, Some(pre)), Proc::Choice(gs)], move |mut vs| {
                    let y = vs.pop().expect("pair");
                    let x = vs.pop().expect("pair");
                    on_item(x, y)
                })
            }));
        }
        Proc::Choice(guards)
    }
}

fn initial_loop(ie: Port, ieot: ChanId, out: Tuple, e: ValueTree) -> Proc {
    let mut guards = Vec::new();
    {
        let out = out.clone();
        guards.push(Guard::new(ieot, move |_| out.send_eots()));
    }
    for c in ie.first_channels() {
        let (ie, out, e) = (ie.clone(), out.clone(), e.clone());
        guards.push(Guard::new(c, move |w| {
            recv_tree(&ie, Some(Prefetch { chan: c, value: w })).then(move |x| {
                out.send(x, e.clone()).then(move |_| initial_loop(ie, ieot, out, e))
            })
        }));
    }
    Proc::Choice(guards)
}

fn stage_loop(input: Tuple, out: Tuple, a: ValueTree, f: Arc<StepFn>) -> Proc {
    let next = input.clone();
    let eot_out = out.clone();
    input.recv_then(
        move || eot_out.send_eots(),
        move |x, y| {
            let y2 = f(&a, &x, &y);
            let (next, out, a, f) = (next.clone(), out.clone(), a.clone(), Arc::clone(&f));
            out.send(x, y2).then(move |_| stage_loop(next, out, a, f))
        },
    )
}

fn final_loop(input: Tuple, oe: Port, oeot: ChanId) -> Proc {
    let next = input.clone();
    input.recv_then(
        move || Proc::send(oeot, EOT_TOKEN, Proc::skip),
        move |_x, y| {
            let (next, oe) = (next.clone(), oe.clone());
            send_tree(&oe, y).then(move |_| final_loop(next, oe, oeot))
        },
    )
}

/// `MAP(initial) >> MAP(f' a) for a in reverse(m) >> MAP(final)`.
/// Returns the pids in pipeline order.
pub fn decompose_map(
    net: &mut Network,
    name: &str,
    args: PipelineSpecArgs,
    input: &Port,
    output: &Port,
) -> Result<Vec<ProcessId>, BuildError> {
    if args.m.is_empty() {
        return Err(BuildError::Arity("decompose_map needs a non-empty argument list".into()));
    }
    let (ie, ieot) = input.stream_parts()?;
    let (oe, oeot) = output.stream_parts()?;
    let (xs, ys) = (ie.shape(), oe.shape());
    if !args.e.conforms(&ys) {
        return Err(BuildError::ShapeMismatch(format!("seed {:?} does not fit {ys:?}", args.e)));
    }
    let k = args.m.len();
    let links = (0..=k)
        .map(|i| Tuple::new(net, &format!("{name}.t{i}"), &xs, &ys))
        .collect::<Result<Vec<_>, _>>()?;

    let mut pids = Vec::with_capacity(k + 2);
    pids.push(net.add_process(
        format!("{name}.initial"),
        1,
        &input.channels(),
        &links[0].channels(),
        initial_loop(ie.clone(), ieot, links[0].clone(), args.e.clone()),
    )?);
    for (s, a) in args.m.iter().rev().enumerate() {
        pids.push(net.add_process(
            format!("{name}.stage{s}"),
            1,
            &links[s].channels(),
            &links[s + 1].channels(),
            stage_loop(links[s].clone(), links[s + 1].clone(), a.clone(), Arc::clone(&args.f)),
        )?);
    }
    pids.push(net.add_process(
        format!("{name}.final"),
        1,
        &links[k].channels(),
        &output.channels(),
        final_loop(links[k].clone(), oe.clone(), oeot),
    )?);
    Ok(pids)
}

/// Builds stage `index` between `left` and `right`, with an optional
/// sideways output.
pub type Stage = Arc<dyn Fn(&mut Network, &str, &Port, &Port, Option<&Port>, usize) -> Result<ProcessId, BuildError> + Send + Sync>;

/// Linear chain of n stages over hidden channels shaped like `input`.
pub fn pipe(net: &mut Network, name: &str, n: usize, stage: Stage, input: &Port, output: &Port) -> Result<Vec<ProcessId>, BuildError> {
    if n < 2 {
        return Err(BuildError::Arity(format!("pipe `{name}` needs at least 2 stages, got {n}")));
    }
    let shape = input.shape();
    let mids = (0..n - 1)
        .map(|c| new_port(net, &shape, &format!("{name}.mid{c}")))
        .collect::<Result<Vec<_>, _>>()?;
    (0..n)
        .map(|c| {
            let left = if c == 0 { input } else { &mids[c - 1] };
            let right = if c == n - 1 { output } else { &mids[c] };
            stage(net, &format!("{name}[{c}]"), left, right, None, c)
        })
        .collect()
}

/// Pipeline whose stage i also emits on `turnouts[i]`.
pub fn turnout_pipe(
    net: &mut Network,
    name: &str,
    n: usize,
    stage: Stage,
    input: &Port,
    through_out: &Port,
    turnouts: &Port,
) -> Result<Vec<ProcessId>, BuildError> {
    if n == 0 {
        return Err(BuildError::Arity(format!("turnout pipe `{name}` needs at least one stage")));
    }
    let outs = turnouts.vector_parts()?;
    if outs.len() != n {
        return Err(BuildError::Arity(format!("turnout pipe `{name}`: {n} stages, {} turnouts", outs.len())));
    }
    expect_same("turnout pipe through-stream", &input.shape(), &through_out.shape())?;
    let shape = input.shape();
    let mids = (0..n.saturating_sub(1))
        .map(|c| new_port(net, &shape, &format!("{name}.mid{c}")))
        .collect::<Result<Vec<_>, _>>()?;
    (0..n)
        .map(|c| {
            let left = if c == 0 { input } else { &mids[c - 1] };
            let right = if c == n - 1 { through_out } else { &mids[c] };
            stage(net, &format!("{name}[{c}]"), left, right, Some(&outs[c]), c)
        })
        .collect()
}

/// One activation of a cell holding `a`.
pub fn cell_body(width: Width, a: Word, up: ChanId, left: ChanId, right: ChanId, down: ChanId) -> Proc {
    Proc::recv(up, move |u| {
        Proc::recv(left, move |l| {
            Proc::send(right, width.add(width.mul(u, a), l), move || Proc::send(down, u, Proc::skip))
        })
    })
}

pub fn cell(net: &mut Network, name: &str, a: Word, up: &Port, left: &Port, right: &Port, down: &Port) -> Result<ProcessId, BuildError> {
    let (u, l, r, d) = (up.item()?, left.item()?, right.item()?, down.item()?);
    net.add_process(name, 1, &[u, l], &[r, d], cell_body(net.width(), a, u, l, r, d))
}

fn row_arity(args: &[Word], ups: &[Port], downs: &[Port]) -> Result<(), BuildError> {
    let m = args.len();
    if m == 0 || ups.len() != m || downs.len() != m {
        return Err(BuildError::Arity(format!(
            "systolic row: {m} coefficients, {} ups, {} downs",
            ups.len(),
            downs.len()
        )));
    }
    Ok(())
}

/// A row of cells chained left to right; cell c reads `up[c]` and writes
/// `down[c]`.
pub fn systolic_pipe(
    net: &mut Network,
    name: &str,
    args: &[Word],
    left: &Port,
    up: &Port,
    right: &Port,
    down: &Port,
) -> Result<Vec<ProcessId>, BuildError> {
    let (ups, downs) = (up.vector_parts()?, down.vector_parts()?);
    row_arity(args, ups, downs)?;
    let m = args.len();
    let mids = (0..m - 1)
        .map(|c| new_port(net, &Shape::Item, &format!("{name}.mid{c}")))
        .collect::<Result<Vec<_>, _>>()?;
    (0..m)
        .map(|c| {
            let l = if c == 0 { left } else { &mids[c - 1] };
            let r = if c == m - 1 { right } else { &mids[c] };
            cell(net, &format!("{name}[{c}]"), args[c], &ups[c], l, r, &downs[c])
        })
        .collect()
}

/// Repeating cell: one activation per element of the `up` stream, ending
/// with it. `left` of `None` stands for a constant zero producer.
pub fn cell_loop_body(width: Width, a: Word, up: &Port, left: Option<ChanId>, right: ChanId, down: ChanId) -> Result<Proc, BuildError> {
    let (ue, ueot) = up.stream_parts()?;
    Ok(cell_loop(width, a, ue.item()?, ueot, left, right, down))
}

fn cell_loop(width: Width, a: Word, up: ChanId, ueot: ChanId, left: Option<ChanId>, right: ChanId, down: ChanId) -> Proc {
    let fire = move |u: Word, l: Word| {
        Proc::send(right, width.add(width.mul(u, a), l), move || {
            Proc::send(down, u, move || cell_loop(width, a, up, ueot, left, right, down))
        })
    };
    Proc::Choice(vec![
        Guard::new(ueot, |_| Proc::skip()),
        Guard::new(up, move |u| match left {
            Some(l) => Proc::recv(l, move |lv| fire(u, lv)),
            None => fire(u, Word(0)),
        }),
    ])
}

/// A row of m repeating cells. Cell c takes its column from `ups[c]`
/// (a stream), passes it on to `downs[c]`, and the partial sums run left to
/// right from a zero seed into `right`.
pub fn systolic_row(
    net: &mut Network,
    name: &str,
    args: &[Word],
    ups: &Port,
    right: &Port,
    downs: &Port,
) -> Result<Vec<ProcessId>, BuildError> {
    let (up_parts, down_parts) = (ups.vector_parts()?, downs.vector_parts()?);
    row_arity(args, up_parts, down_parts)?;
    let m = args.len();
    let w = net.width();
    let mids: Vec<ChanId> = (0..m - 1)
        .map(|c| new_port(net, &Shape::Item, &format!("{name}.mid{c}")).and_then(|p| p.item()))
        .collect::<Result<_, _>>()?;
    let right = right.item()?;
    (0..m)
        .map(|c| {
            let left = if c == 0 { None } else { Some(mids[c - 1]) };
            let r = if c == m - 1 { right } else { mids[c] };
            let d = down_parts[c].item()?;
            let mut reads = up_parts[c].channels();
            reads.extend(left);
            let body = cell_loop_body(w, args[c], &up_parts[c], left, r, d)?;
            // the first cell also stands for the zero seed producer
            net.add_process(format!("{name}[{c}]"), if c == 0 { 2 } else { 1 }, &reads, &[r, d], body)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructs::{prd, store};

    fn net() -> Network {
        Network::new(Width::DEFAULT)
    }

    fn item(net: &mut Network, name: &str) -> Port {
        new_port(net, &Shape::Item, name).unwrap()
    }

    #[test]
    fn add_and_mul_wrap() {
        for (f, a, b, want) in [("add", 2, 3, 5), ("mul", -3, 4, -12), ("mul", 256, 256, 0)] {
            let mut n = net();
            let (x, y, z) = (item(&mut n, "x"), item(&mut n, "y"), item(&mut n, "z"));
            prd(&mut n, "a", &x, ValueTree::scalar(a)).unwrap();
            prd(&mut n, "b", &y, ValueTree::scalar(b)).unwrap();
            if f == "add" {
                add_proc(&mut n, "f", &x, &y, &z).unwrap();
            } else {
                mul_proc(&mut n, "f", &x, &y, &z).unwrap();
            }
            let s = store(&mut n, "s", &z).unwrap();
            n.run_to_completion(10).unwrap();
            assert_eq!(n.result(s), Some(&ValueTree::scalar(want)));
        }
    }

    #[test]
    fn smap_empty_stream_single_eot() {
        let mut n = net();
        let sh = Shape::stream(Shape::Item);
        let (i, o) = (new_port(&mut n, &sh, "i").unwrap(), new_port(&mut n, &sh, "o").unwrap());
        prd(&mut n, "p", &i, ValueTree::unit()).unwrap();
        smap(&mut n, "smap", Unary::word(|w| Word(w.0 + 1)), &i, &o).unwrap();
        let s = store(&mut n, "s", &o).unwrap();
        n.run_to_completion(10).unwrap();
        assert_eq!(n.result(s), Some(&ValueTree::unit()));
        assert_eq!(o.channels().iter().map(|c| n.communications_on(*c)).sum::<u64>(), 1);
    }

    #[test]
    fn vfoldr_mul_seeded_one() {
        let mut n = net();
        let v = new_port(&mut n, &Shape::vector(2, Shape::Item), "v").unwrap();
        let o = item(&mut n, "o");
        prd(&mut n, "p", &v, ValueTree::words(&[3, 4])).unwrap();
        let w = n.width();
        vfoldr(&mut n, "fold", mul_body(w), ValueTree::scalar(1), &v, &o).unwrap();
        let s = store(&mut n, "s", &o).unwrap();
        n.run_to_completion(20).unwrap();
        assert_eq!(n.result(s), Some(&ValueTree::scalar(12)));
    }

    #[test]
    fn zero_width_replicators_rejected() {
        let mut n = net();
        let i = item(&mut n, "i");
        assert!(matches!(vmap(&mut n, "v", Unary::word(|w| w), &i, &i), Err(BuildError::ShapeMismatch(_))));
        assert!(matches!(new_port(&mut n, &Shape::vector(0, Shape::Item), "z"), Err(BuildError::Arity(_))));
        let sh = Shape::stream(Shape::Item);
        let (a, b) = (new_port(&mut n, &sh, "a").unwrap(), new_port(&mut n, &sh, "b").unwrap());
        let stage: Stage = Arc::new(|_, _, _, _, _, _| unreachable!());
        assert!(matches!(pipe(&mut n, "p", 1, stage, &a, &b), Err(BuildError::Arity(_))));
    }

    #[test]
    fn single_cell_activation() {
        let mut n = net();
        let (u, l, r, d) = (item(&mut n, "u"), item(&mut n, "l"), item(&mut n, "r"), item(&mut n, "d"));
        prd(&mut n, "pu", &u, ValueTree::scalar(3)).unwrap();
        prd(&mut n, "pl", &l, ValueTree::scalar(4)).unwrap();
        cell(&mut n, "cell", Word(2), &u, &l, &r, &d).unwrap();
        let (sr, sd) = (store(&mut n, "sr", &r).unwrap(), store(&mut n, "sd", &d).unwrap());
        n.run_to_completion(10).unwrap();
        assert_eq!(n.result(sr), Some(&ValueTree::scalar(10)));
        assert_eq!(n.result(sd), Some(&ValueTree::scalar(3)));
    }
}
