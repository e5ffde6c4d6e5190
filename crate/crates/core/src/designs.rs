//! Five matrix-multiplication networks. Each reads `bss` from a single-port
//! memory bank and writes `css` to another; `ass` is held on chip.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinators::{
    add_body, decompose_map, mul_body, smap_body, systolic_row, turnout_pipe, vfoldr, vfoldr_inline,
    vzipwith, vzipwith_body, PipelineSpecArgs, Stage, Unary,
};
use crate::constructs::{
    bank_sink, bank_source, broadcast, internal_port, new_port, prd, recv_tree, send_tree, sink, Port, Prefetch, Shape,
    ValueTree,
};
use crate::oracle::{scalarp_ref, Matrix};
use crate::runtime::{BuildError, ChanId, Guard, Network, Proc, ProcessId, RunError, TraceMetrics, Width, Word, EOT_TOKEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DesignId {
    #[serde(rename = "d1")]
    D1DataParallel,
    #[serde(rename = "d2")]
    D2Stream,
    #[serde(rename = "d3")]
    D3Pipeline,
    #[serde(rename = "d4")]
    D4TurnoutPipeline,
    #[serde(rename = "d5")]
    D5MultilevelSystolic,
}

impl DesignId {
    pub const ALL: [DesignId; 5] = [
        DesignId::D1DataParallel,
        DesignId::D2Stream,
        DesignId::D3Pipeline,
        DesignId::D4TurnoutPipeline,
        DesignId::D5MultilevelSystolic,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            DesignId::D1DataParallel => "d1",
            DesignId::D2Stream => "d2",
            DesignId::D3Pipeline => "d3",
            DesignId::D4TurnoutPipeline => "d4",
            DesignId::D5MultilevelSystolic => "d5",
        }
    }

    /// Designs whose structure does not depend on k.
    pub fn is_pipelined(self) -> bool {
        matches!(
            self,
            DesignId::D3Pipeline | DesignId::D4TurnoutPipeline | DesignId::D5MultilevelSystolic
        )
    }
}

impl fmt::Display for DesignId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DesignId {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DesignId::ALL
            .into_iter()
            .find(|d| d.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DesignError::UnknownDesign(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub k: usize,
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.n, self.m, self.k)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("unknown design `{0}`")]
    UnknownDesign(String),
    #[error("invalid dimensions: {0}")]
    Dims(String),
    #[error("{design}: {source}")]
    Build { design: DesignId, source: BuildError },
    #[error("{design}: {source}")]
    Run { design: DesignId, source: RunError },
    #[error("{design}: output does not have the expected shape")]
    Output { design: DesignId },
}

/// How D1 obtains the per-column copies of `ass`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum D1Layout {
    /// One producer whose output is broadcast to every column.
    Broadcast,
    /// A separate producer per column.
    PerColumnProducer,
}

pub struct BuiltDesign {
    pub design: DesignId,
    pub dims: Dims,
    pub net: Network,
    pub output: ProcessId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRun {
    pub design: DesignId,
    pub dims: (usize, usize, usize),
    pub css: Matrix,
    pub metrics: TraceMetrics,
    pub raw_output: Vec<Vec<i64>>,
    pub warnings: Vec<String>,
}

fn check_dims(ass: &Matrix, bss: &Matrix, width: Width) -> Result<Dims, DesignError> {
    let dims = Dims {
        n: ass.n_rows(),
        m: ass.n_cols(),
        k: bss.n_cols(),
    };
    if dims.n == 0 || dims.m == 0 || dims.k == 0 {
        return Err(DesignError::Dims(format!("{dims}: every dimension must be at least 1")));
    }
    if bss.n_rows() != dims.m {
        return Err(DesignError::Dims(format!(
            "ass is {}x{} but bss columns have length {}",
            dims.n,
            dims.m,
            bss.n_rows()
        )));
    }
    if !ass.fits(width) || !bss.fits(width) {
        return Err(DesignError::Dims(format!("entries exceed {} bits", width.bits())));
    }
    Ok(dims)
}

fn item_vec(n: usize) -> Shape {
    Shape::vector(n, Shape::Item)
}

fn words(ws: &[i64]) -> Vec<Word> {
    ws.iter().map(|&w| Word(w)).collect()
}

fn scalarp_tree(a: &ValueTree, x: &ValueTree, width: Width) -> Option<Word> {
    let a = words(&a.to_words()?);
    let x = words(&x.to_words()?);
    scalarp_ref(&a, &x, width).ok()
}

fn build_d1(net: &mut Network, ass: &Matrix, bss: &Matrix, dims: Dims, layout: D1Layout) -> Result<ProcessId, BuildError> {
    let Dims { n, m, k } = dims;
    let w = net.width();
    let ass_shape = Shape::vector(n, item_vec(m));
    let ass_val = ValueTree::nested(&ass.rows());

    let bss_port = new_port(net, &Shape::vector(k, item_vec(m)), "d1.bss")?;
    bank_source(net, "d1.bank_in", &bss_port, ValueTree::nested(&bss.cols()))?;
    let css_port = new_port(net, &Shape::vector(k, item_vec(n)), "d1.css")?;

    let cols: Vec<Port> = (0..k)
        .map(|j| new_port(net, &ass_shape, &format!("d1.col{j}.ass")))
        .collect::<Result<_, _>>()?;
    match layout {
        D1Layout::Broadcast => {
            let src = new_port(net, &ass_shape, "d1.ass")?;
            prd(net, "d1.prd_ass", &src, ass_val)?;
            broadcast(net, "d1.broadcast_ass", &src, &cols)?;
        }
        D1Layout::PerColumnProducer => {
            for (j, c) in cols.iter().enumerate() {
                prd(net, &format!("d1.prd_ass{j}"), c, ass_val.clone())?;
            }
        }
    }

    let bs_parts = bss_port.vector_parts()?.to_vec();
    let css_cols = css_port.vector_parts()?.to_vec();
    for j in 0..k {
        let pre = format!("d1.col{j}");
        let copies: Vec<Port> = (0..n)
            .map(|i| new_port(net, &item_vec(m), &format!("{pre}.bs{i}")))
            .collect::<Result<_, _>>()?;
        broadcast(net, &format!("{pre}.broadcast_bs"), &bs_parts[j], &copies)?;
        let rows = cols[j].vector_parts()?.to_vec();
        let outs = css_cols[j].vector_parts()?.to_vec();
        for i in 0..n {
            let prods = new_port(net, &item_vec(m), &format!("{pre}.row{i}.prods"))?;
            vzipwith(net, &format!("{pre}.row{i}.mul"), mul_body(w), &rows[i], &copies[i], &prods)?;
            vfoldr(net, &format!("{pre}.row{i}.sum"), add_body(w), ValueTree::scalar(0), &prods, &outs[i])?;
        }
    }
    net.mark_output(&css_port.data_channels());
    bank_sink(net, "d1.bank_out", &css_port)
}

/// Column process for D2: take `bs`, then run SMAP(VSCALARP(bs)) over the
/// stream of rows.
fn build_d2_column(net: &mut Network, j: usize, m: usize, bs: &Port, rows: &Port, out: &Port) -> Result<ProcessId, BuildError> {
    let w = net.width();
    let pre = format!("d2.col{j}");
    let bsp = internal_port(net, &item_vec(m), &format!("{pre}.bs"))?;
    let prods = internal_port(net, &item_vec(m), &format!("{pre}.prods"))?;
    let (row_elems, _) = rows.stream_parts()?;
    let (out_elem, _) = out.stream_parts()?;
    let fold = vfoldr_inline(net, &format!("{pre}.sum"), add_body(w), ValueTree::scalar(0), &prods, out_elem)?;
    // validate the zip wiring once at build time
    vzipwith_body(&mul_body(w), row_elems, &bsp, &prods, None)?;

    let mut internal = bsp.channels();
    internal.extend(prods.channels());
    internal.extend(fold.internal.iter().copied());
    let instances = 2 + m + fold.instances;

    let (rows_c, out_c, bsp_c, prods_c) = (rows.clone(), out.clone(), bsp.clone(), prods.clone());
    let body = recv_tree(bs, None).then(move |bs_val| {
        let vscalarp = Unary::new(move |ie, _oe, pre: Option<Prefetch>| {
            let zip = vzipwith_body(&mul_body(w), ie, &bsp_c, &prods_c, pre).unwrap_or_else(|e| Proc::Fail(e.to_string()));
            Proc::interleave(vec![send_tree(&bsp_c, bs_val.clone()), zip, (fold.make)()])
        });
        smap_body(vscalarp, &rows_c, &out_c).unwrap_or_else(|e| Proc::Fail(e.to_string()))
    });

    let mut reads = bs.channels();
    reads.extend(rows.channels());
    reads.extend(internal.iter().copied());
    let mut writes = out.channels();
    writes.extend(internal);
    net.add_process(pre, instances, &reads, &writes, body)
}

fn build_d2(net: &mut Network, ass: &Matrix, bss: &Matrix, dims: Dims) -> Result<ProcessId, BuildError> {
    let Dims { n: _, m, k } = dims;
    let rows_shape = Shape::stream(item_vec(m));
    let src = new_port(net, &rows_shape, "d2.ass")?;
    prd(net, "d2.prd_ass", &src, ValueTree::nested(&ass.rows()))?;
    let copies: Vec<Port> = (0..k)
        .map(|j| new_port(net, &rows_shape, &format!("d2.col{j}.ass")))
        .collect::<Result<_, _>>()?;
    broadcast(net, "d2.broadcast_ass", &src, &copies)?;

    let bss_port = new_port(net, &Shape::vector(k, item_vec(m)), "d2.bss")?;
    bank_source(net, "d2.bank_in", &bss_port, ValueTree::nested(&bss.cols()))?;
    let css_port = new_port(net, &Shape::vector(k, Shape::stream(Shape::Item)), "d2.css")?;
    let bs_parts = bss_port.vector_parts()?.to_vec();
    let outs = css_port.vector_parts()?.to_vec();
    for j in 0..k {
        build_d2_column(net, j, m, &bs_parts[j], &copies[j], &outs[j])?;
    }
    net.mark_output(&css_port.data_channels());
    bank_sink(net, "d2.bank_out", &css_port)
}

fn build_d3(net: &mut Network, ass: &Matrix, bss: &Matrix, dims: Dims) -> Result<ProcessId, BuildError> {
    let w = net.width();
    let bss_port = new_port(net, &Shape::stream(item_vec(dims.m)), "d3.bss")?;
    bank_source(net, "d3.bank_in", &bss_port, ValueTree::nested(&bss.cols()))?;
    let css_port = new_port(net, &Shape::stream(Shape::stream(Shape::Item)), "d3.css")?;
    let args = PipelineSpecArgs {
        f: Arc::new(move |a: &ValueTree, x: &ValueTree, y: &ValueTree| {
            let mut ys = y.as_list().map(<[ValueTree]>::to_vec).unwrap_or_default();
            ys.push(ValueTree::Scalar(scalarp_tree(a, x, w).unwrap_or_default()));
            ValueTree::List(ys)
        }),
        e: ValueTree::unit(),
        m: ass.rows().iter().map(|r| ValueTree::words(r)).collect(),
    };
    decompose_map(net, "d3.pipe", args, &bss_port, &css_port)?;
    net.mark_output(&css_port.data_channels());
    bank_sink(net, "d3.bank_out", &css_port)
}

fn d4_stage_loop(a: ValueTree, w: Width, left: Port, right: Port, down: Port) -> Proc {
    let (le, leot) = left.stream_parts().map(|(e, c)| (e.clone(), c)).expect("stream");
    let (re, reot) = right.stream_parts().map(|(e, c)| (e.clone(), c)).expect("stream");
    let (de, deot) = down.stream_parts().map(|(e, c)| (e.clone(), c)).expect("stream");
    let mut guards = vec![Guard::new(leot, move |_| {
        Proc::interleave(vec![
            Proc::send(reot, EOT_TOKEN, Proc::skip),
            Proc::send(deot, EOT_TOKEN, Proc::skip),
        ])
    })];
    for c in le.first_channels() {
        let (a, left, right, down, le, re, de) = (a.clone(), left.clone(), right.clone(), down.clone(), le.clone(), re.clone(), de.clone());
        guards.push(Guard::new(c, move |v| {
            recv_tree(&le, Some(Prefetch { chan: c, value: v })).then(move |bs| {
                let c_ij = scalarp_tree(&a, &bs, w).unwrap_or_default();
                send_tree(&de, ValueTree::Scalar(c_ij))
                    .then(move |_| send_tree(&re, bs))
                    .then(move |_| d4_stage_loop(a, w, left, right, down))
            })
        }));
    }
    Proc::Choice(guards)
}

fn build_d4(net: &mut Network, ass: &Matrix, bss: &Matrix, dims: Dims) -> Result<ProcessId, BuildError> {
    let w = net.width();
    let through = Shape::stream(item_vec(dims.m));
    let bss_port = new_port(net, &through, "d4.bss")?;
    bank_source(net, "d4.bank_in", &bss_port, ValueTree::nested(&bss.cols()))?;
    let rest = new_port(net, &through, "d4.through")?;
    let css_port = new_port(net, &Shape::vector(dims.n, Shape::stream(Shape::Item)), "d4.css")?;
    let rows: Vec<ValueTree> = ass.rows().iter().map(|r| ValueTree::words(r)).collect();
    let stage: Stage = Arc::new(move |net: &mut Network, name: &str, left: &Port, right: &Port, down: Option<&Port>, i: usize| {
        let down = down.ok_or_else(|| BuildError::Arity("turnout stage without a turnout".into()))?;
        let mut writes = right.channels();
        writes.extend(down.channels());
        let body = d4_stage_loop(rows[i].clone(), w, left.clone(), right.clone(), down.clone());
        net.add_process(name, 1, &left.channels(), &writes, body)
    });
    turnout_pipe(net, "d4.pipe", dims.n, stage, &bss_port, &rest, &css_port)?;
    sink(net, "d4.sink", &rest)?;
    net.mark_output(&css_port.data_channels());
    bank_sink(net, "d4.bank_out", &css_port)
}

/// Row controller: split each column of the through-stream into the cells'
/// up streams; on EOT close them, then close the outgoing through-stream.
fn d5_row_loop(le: Port, leot: ChanId, ups: Vec<(Port, ChanId)>, reot: ChanId) -> Proc {
    let mut guards = Vec::new();
    {
        let eots: Vec<ChanId> = ups.iter().map(|u| u.1).collect();
        guards.push(Guard::new(leot, move |_| {
            Proc::interleave(eots.iter().map(|&e| Proc::send(e, EOT_TOKEN, Proc::skip)).collect())
                .then(move |_| Proc::send(reot, EOT_TOKEN, Proc::skip))
        }));
    }
    for c in le.first_channels() {
        let (le, ups) = (le.clone(), ups.clone());
        guards.push(Guard::new(c, move |v| {
            recv_tree(&le, Some(Prefetch { chan: c, value: v })).then(move |bs| {
                let heads = Port::Vector(ups.iter().map(|u| u.0.clone()).collect());
                send_tree(&heads, bs).then(move |_| d5_row_loop(le, leot, ups, reot))
            })
        }));
    }
    Proc::Choice(guards)
}

fn build_d5(net: &mut Network, ass: &Matrix, bss: &Matrix, dims: Dims) -> Result<ProcessId, BuildError> {
    let Dims { n, m, .. } = dims;
    let through = Shape::stream(item_vec(m));
    let bss_port = new_port(net, &through, "d5.bss")?;
    bank_source(net, "d5.bank_in", &bss_port, ValueTree::nested(&bss.cols()))?;
    let rest = new_port(net, &through, "d5.through")?;
    let css_port = new_port(net, &Shape::stream(item_vec(n)), "d5.css")?;
    let (css_elems, css_eot) = css_port.stream_parts().map(|(e, c)| (e.clone(), c))?;
    let rows = ass.rows();

    let stage: Stage = Arc::new(move |net: &mut Network, name: &str, left: &Port, right: &Port, turnout: Option<&Port>, i: usize| {
        let result = turnout.ok_or_else(|| BuildError::Arity("systolic row without a result channel".into()))?;
        let (le, leot) = left.stream_parts()?;
        let (re, reot) = right.stream_parts()?;
        let ups = new_port(net, &Shape::vector(m, Shape::stream(Shape::Item)), &format!("{name}.up"))?;
        let heads: Vec<(Port, ChanId)> = ups
            .vector_parts()?
            .iter()
            .map(|u| u.stream_parts().map(|(e, c)| (e.clone(), c)))
            .collect::<Result<_, _>>()?;
        let pid = net.add_process(
            name,
            1,
            &left.channels(),
            &[ups.channels(), vec![reot]].concat(),
            d5_row_loop(le.clone(), leot, heads, reot),
        )?;
        systolic_row(net, &format!("{name}.cells"), &words(&rows[i]), &ups, result, re)?;
        Ok(pid)
    });
    turnout_pipe(net, "d5.pipe", n, stage, &bss_port, &rest, &css_elems)?;

    let body = recv_tree(&rest, None).then(move |_| Proc::send(css_eot, EOT_TOKEN, Proc::skip));
    net.add_process("d5.sink", 1, &rest.channels(), &[css_eot], body)?;
    net.mark_output(&css_port.data_channels());
    bank_sink(net, "d5.bank_out", &css_port)
}

pub fn build(design: DesignId, ass: &Matrix, bss: &Matrix, width: Width) -> Result<BuiltDesign, DesignError> {
    build_with_layout(design, ass, bss, width, D1Layout::Broadcast)
}

/// As [`build`]; `layout` only affects D1.
pub fn build_with_layout(
    design: DesignId,
    ass: &Matrix,
    bss: &Matrix,
    width: Width,
    layout: D1Layout,
) -> Result<BuiltDesign, DesignError> {
    let dims = check_dims(ass, bss, width)?;
    let mut net = Network::new(width);
    let output = match design {
        DesignId::D1DataParallel => build_d1(&mut net, ass, bss, dims, layout),
        DesignId::D2Stream => build_d2(&mut net, ass, bss, dims),
        DesignId::D3Pipeline => build_d3(&mut net, ass, bss, dims),
        DesignId::D4TurnoutPipeline => build_d4(&mut net, ass, bss, dims),
        DesignId::D5MultilevelSystolic => build_d5(&mut net, ass, bss, dims),
    }
    .and_then(|pid| net.validate().map(|_| pid))
    .map_err(|source| DesignError::Build { design, source })?;
    Ok(BuiltDesign {
        design,
        dims,
        net,
        output,
    })
}

fn transpose(rows: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

impl BuiltDesign {
    /// Run to completion and put the result in column order.
    pub fn run(mut self, max_cycles: u64) -> Result<DesignRun, DesignError> {
        let design = self.design;
        let metrics = self
            .net
            .run_to_completion(max_cycles)
            .map_err(|source| DesignError::Run { design, source })?;
        let raw = self
            .net
            .result(self.output)
            .and_then(ValueTree::to_nested)
            .ok_or(DesignError::Output { design })?;
        let cols = match design {
            DesignId::D1DataParallel | DesignId::D2Stream | DesignId::D5MultilevelSystolic => raw.clone(),
            // each column arrives last row first
            DesignId::D3Pipeline => raw.iter().map(|c| c.iter().rev().copied().collect()).collect(),
            DesignId::D4TurnoutPipeline => transpose(&raw),
        };
        let Dims { n, m, k } = self.dims;
        if cols.len() != k || cols.iter().any(|c| c.len() != n) {
            return Err(DesignError::Output { design });
        }
        let css = Matrix::from_cols(n, &cols).map_err(|_| DesignError::Output { design })?;
        Ok(DesignRun {
            design,
            dims: (n, m, k),
            css,
            metrics,
            raw_output: raw,
            warnings: self.net.warnings().to_vec(),
        })
    }
}

pub fn run_design(design: DesignId, ass: &Matrix, bss: &Matrix, width: Width, max_cycles: u64) -> Result<DesignRun, DesignError> {
    build(design, ass, bss, width)?.run(max_cycles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::mmult_ref;

    fn sample() -> (Matrix, Matrix) {
        let ass = Matrix::from_rows(&[vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]).unwrap();
        let bss = Matrix::from_cols(3, &[vec![1, 0, 2], vec![-1, 3, 1], vec![2, 2, -2]]).unwrap();
        (ass, bss)
    }

    #[test]
    fn every_design_matches_oracle_on_sample() {
        let (ass, bss) = sample();
        let want = mmult_ref(&ass, &bss, Width::DEFAULT).unwrap();
        for d in DesignId::ALL {
            let run = run_design(d, &ass, &bss, Width::DEFAULT, 10_000).unwrap();
            assert_eq!(run.css, want, "{d}");
            assert_eq!(run.metrics.items_out, 9, "{d}");
        }
    }

    #[test]
    fn design_ids_parse() {
        assert_eq!("d3".parse::<DesignId>().unwrap(), DesignId::D3Pipeline);
        assert!("d9".parse::<DesignId>().is_err());
    }

    #[test]
    fn rejects_bad_dims() {
        let ass = Matrix::from_rows(&[vec![1, 2]]).unwrap();
        let bss = Matrix::from_cols(3, &[vec![1, 2, 3]]).unwrap();
        assert!(matches!(build(DesignId::D1DataParallel, &ass, &bss, Width::DEFAULT), Err(DesignError::Dims(_))));
    }
}
