use std::sync::Arc;

use procnet::combinators::{
    add_body, cell, decompose_map, mul_body, smap, szipwith, systolic_pipe, vfoldr, vmap, vzipwith, Binary,
    PipelineSpecArgs, Unary,
};
use procnet::constructs::{new_port, prd, store, Shape, ValueTree};
use procnet::runtime::{Network, Width, Word};
use proptest::prelude::*;

const W: Width = Width::DEFAULT;

fn word() -> impl Strategy<Value = i64> {
    W.min_value()..=W.max_value()
}

fn stream() -> Shape {
    Shape::stream(Shape::Item)
}

fn vector(n: usize) -> Shape {
    Shape::vector(n, Shape::Item)
}

fn affine(a: i64, b: i64) -> impl Fn(Word) -> Word + Send + Sync + Clone {
    move |x| W.add(W.mul(Word(a), x), Word(b))
}

fn run_unary(in_shape: Shape, out_shape: Shape, data: &[i64], vector_map: bool, a: i64, b: i64) -> ValueTree {
    let mut n = Network::new(W);
    let i = new_port(&mut n, &in_shape, "in").unwrap();
    let o = new_port(&mut n, &out_shape, "out").unwrap();
    prd(&mut n, "src", &i, ValueTree::words(data)).unwrap();
    let f = Unary::word(affine(a, b));
    if vector_map {
        vmap(&mut n, "map", f, &i, &o).unwrap();
    } else {
        smap(&mut n, "map", f, &i, &o).unwrap();
    }
    let s = store(&mut n, "dst", &o).unwrap();
    n.run_to_completion(1000).unwrap();
    n.result(s).unwrap().clone()
}

fn run_binary(shape: Shape, xs: &[i64], ys: &[i64], vector_zip: bool) -> ValueTree {
    let mut n = Network::new(W);
    let a = new_port(&mut n, &shape, "a").unwrap();
    let b = new_port(&mut n, &shape, "b").unwrap();
    let o = new_port(&mut n, &shape, "out").unwrap();
    prd(&mut n, "pa", &a, ValueTree::words(xs)).unwrap();
    prd(&mut n, "pb", &b, ValueTree::words(ys)).unwrap();
    if vector_zip {
        vzipwith(&mut n, "zip", mul_body(W), &a, &b, &o).unwrap();
    } else {
        szipwith(&mut n, "zip", mul_body(W), &a, &b, &o).unwrap();
    }
    let s = store(&mut n, "dst", &o).unwrap();
    n.run_to_completion(1000).unwrap();
    n.result(s).unwrap().clone()
}

fn products(xs: &[i64], ys: &[i64]) -> ValueTree {
    let v: Vec<i64> = xs.iter().zip(ys).map(|(x, y)| W.mul(Word(*x), Word(*y)).0).collect();
    ValueTree::words(&v)
}

fn pairs(max: usize, min: usize) -> impl Strategy<Value = (Vec<i64>, Vec<i64>)> {
    (min..=max).prop_flat_map(|len| (prop::collection::vec(word(), len), prop::collection::vec(word(), len)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn smap_agrees(data in prop::collection::vec(word(), 0..=8), a in word(), b in word()) {
        let f = affine(a, b);
        let want: Vec<i64> = data.iter().map(|x| f(Word(*x)).0).collect();
        prop_assert_eq!(run_unary(stream(), stream(), &data, false, a, b), ValueTree::words(&want));
    }

    #[test]
    fn vmap_agrees(data in prop::collection::vec(word(), 1..=8), a in word(), b in word()) {
        let f = affine(a, b);
        let want: Vec<i64> = data.iter().map(|x| f(Word(*x)).0).collect();
        let sh = vector(data.len());
        prop_assert_eq!(run_unary(sh.clone(), sh, &data, true, a, b), ValueTree::words(&want));
    }

    #[test]
    fn szipwith_agrees((xs, ys) in pairs(8, 0)) {
        prop_assert_eq!(run_binary(stream(), &xs, &ys, false), products(&xs, &ys));
    }

    #[test]
    fn vzipwith_agrees((xs, ys) in pairs(8, 1)) {
        prop_assert_eq!(run_binary(vector(xs.len()), &xs, &ys, true), products(&xs, &ys));
    }

    #[test]
    fn vfoldr_agrees(data in prop::collection::vec(word(), 1..=8), e in word(), use_mul in any::<bool>()) {
        let mut n = Network::new(W);
        let i = new_port(&mut n, &vector(data.len()), "in").unwrap();
        let o = new_port(&mut n, &Shape::Item, "out").unwrap();
        prd(&mut n, "src", &i, ValueTree::words(&data)).unwrap();
        let f: Binary = if use_mul { mul_body(W) } else { add_body(W) };
        vfoldr(&mut n, "fold", f, ValueTree::scalar(e), &i, &o).unwrap();
        let s = store(&mut n, "dst", &o).unwrap();
        n.run_to_completion(1000).unwrap();
        let want = data.iter().rev().fold(Word(e), |acc, x| {
            if use_mul { W.mul(Word(*x), acc) } else { W.add(Word(*x), acc) }
        });
        prop_assert_eq!(n.result(s).unwrap(), &ValueTree::Scalar(want));
    }

    #[test]
    fn decompose_map_agrees(
        xs in prop::collection::vec(word(), 0..=8),
        m in prop::collection::vec(word(), 1..=5),
        e in word(),
        c in -4i64..=4,
    ) {
        // f a x y = a*x + c*y
        let f = Arc::new(move |a: &ValueTree, x: &ValueTree, y: &ValueTree| {
            let (a, x, y) = (a.as_word().unwrap(), x.as_word().unwrap(), y.as_word().unwrap());
            ValueTree::Scalar(W.add(W.mul(a, x), W.mul(Word(c), y)))
        });
        let args = PipelineSpecArgs {
            f,
            e: ValueTree::scalar(e),
            m: m.iter().map(|v| ValueTree::scalar(*v)).collect(),
        };
        let mut n = Network::new(W);
        let i = new_port(&mut n, &stream(), "in").unwrap();
        let o = new_port(&mut n, &stream(), "out").unwrap();
        prd(&mut n, "src", &i, ValueTree::words(&xs)).unwrap();
        decompose_map(&mut n, "pipe", args, &i, &o).unwrap();
        let s = store(&mut n, "dst", &o).unwrap();
        n.run_to_completion(10_000).unwrap();
        let want: Vec<i64> = xs
            .iter()
            .map(|x| m.iter().rev().fold(Word(e), |y, a| W.add(W.mul(Word(*a), Word(*x)), W.mul(Word(c), y))).0)
            .collect();
        prop_assert_eq!(n.result(s).unwrap(), &ValueTree::words(&want));
    }
}

#[test]
fn decompose_map_with_growing_accumulator() {
    // f a x y = y ++ [a + x], e = []
    let f = Arc::new(|a: &ValueTree, x: &ValueTree, y: &ValueTree| {
        let mut v = y.to_words().unwrap();
        v.push(W.add(a.as_word().unwrap(), x.as_word().unwrap()).0);
        ValueTree::words(&v)
    });
    let args = PipelineSpecArgs {
        f,
        e: ValueTree::unit(),
        m: vec![ValueTree::scalar(10), ValueTree::scalar(20), ValueTree::scalar(30)],
    };
    let want: Vec<ValueTree> = [1, 2].iter().map(|x| args.h(&ValueTree::scalar(*x))).collect();
    let mut n = Network::new(W);
    let i = new_port(&mut n, &stream(), "in").unwrap();
    let o = new_port(&mut n, &Shape::stream(stream()), "out").unwrap();
    prd(&mut n, "src", &i, ValueTree::words(&[1, 2])).unwrap();
    decompose_map(&mut n, "pipe", args, &i, &o).unwrap();
    let s = store(&mut n, "dst", &o).unwrap();
    n.run_to_completion(1000).unwrap();
    assert_eq!(n.result(s).unwrap(), &ValueTree::List(want));
    assert_eq!(n.result(s).unwrap().to_nested().unwrap(), vec![vec![31, 21, 11], vec![32, 22, 12]]);
}

#[test]
fn szipwith_length_mismatch_fails() {
    let mut n = Network::new(W);
    let a = new_port(&mut n, &stream(), "a").unwrap();
    let b = new_port(&mut n, &stream(), "b").unwrap();
    let o = new_port(&mut n, &stream(), "o").unwrap();
    prd(&mut n, "pa", &a, ValueTree::words(&[1, 2])).unwrap();
    prd(&mut n, "pb", &b, ValueTree::words(&[1])).unwrap();
    szipwith(&mut n, "zip", mul_body(W), &a, &b, &o).unwrap();
    store(&mut n, "dst", &o).unwrap();
    assert!(n.run_to_completion(100).is_err());
}

#[test]
fn cell_computes_right_and_down() {
    let mut n = Network::new(W);
    let ports: Vec<_> = ["u", "l", "r", "d"].iter().map(|s| new_port(&mut n, &Shape::Item, s).unwrap()).collect();
    prd(&mut n, "pu", &ports[0], ValueTree::scalar(3)).unwrap();
    prd(&mut n, "pl", &ports[1], ValueTree::scalar(4)).unwrap();
    cell(&mut n, "cell", Word(2), &ports[0], &ports[1], &ports[2], &ports[3]).unwrap();
    let sr = store(&mut n, "sr", &ports[2]).unwrap();
    let sd = store(&mut n, "sd", &ports[3]).unwrap();
    n.run_to_completion(10).unwrap();
    assert_eq!(n.result(sr), Some(&ValueTree::scalar(10)));
    assert_eq!(n.result(sd), Some(&ValueTree::scalar(3)));
}

#[test]
fn systolic_pipe_row() {
    let mut n = Network::new(W);
    let left = new_port(&mut n, &Shape::Item, "left").unwrap();
    let up = new_port(&mut n, &vector(3), "up").unwrap();
    let right = new_port(&mut n, &Shape::Item, "right").unwrap();
    let down = new_port(&mut n, &vector(3), "down").unwrap();
    prd(&mut n, "zero", &left, ValueTree::scalar(0)).unwrap();
    prd(&mut n, "ups", &up, ValueTree::words(&[4, 5, 6])).unwrap();
    systolic_pipe(&mut n, "row", &[Word(1), Word(2), Word(3)], &left, &up, &right, &down).unwrap();
    let sr = store(&mut n, "sr", &right).unwrap();
    let sd = store(&mut n, "sd", &down).unwrap();
    n.run_to_completion(20).unwrap();
    assert_eq!(n.result(sr), Some(&ValueTree::scalar(32)));
    assert_eq!(n.result(sd), Some(&ValueTree::words(&[4, 5, 6])));
}
