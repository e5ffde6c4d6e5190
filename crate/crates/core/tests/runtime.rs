use procnet::constructs::{new_port, prd, store, Port, Shape, ValueTree};
use procnet::runtime::{BuildError, ChannelKind, Guard, Network, Proc, RunError, Width, Word};

fn net() -> Network {
    Network::new(Width::DEFAULT)
}

#[test]
fn prialt_takes_first_ready_guard() {
    let mut n = net();
    let a = n.channel("a", ChannelKind::Data);
    let b = n.channel("b", ChannelKind::Data);
    let out = n.channel("out", ChannelKind::Data);
    n.add_process("wa", 1, &[], &[a], Proc::send(a, Word(1), Proc::skip)).unwrap();
    n.add_process("wb", 1, &[], &[b], Proc::send(b, Word(2), Proc::skip)).unwrap();
    // picks b first because it is listed first, then drains a
    let body = Proc::prialt(vec![
        Guard::new(b, move |x| Proc::recv(a, move |y| Proc::send(out, Word(x.0 * 10 + y.0), Proc::skip))),
        Guard::new(a, move |y| Proc::recv(b, move |x| Proc::send(out, Word(y.0 * 10 + x.0), Proc::skip))),
    ])
    .unwrap();
    n.add_process("sel", 1, &[a, b], &[out], body).unwrap();
    let p = Port::Item(out);
    let s = store(&mut n, "s", &p).unwrap();
    n.run_to_completion(10).unwrap();
    assert_eq!(n.result(s), Some(&ValueTree::scalar(21)));
}

#[test]
fn empty_choice_rejected() {
    assert!(matches!(Proc::prialt(vec![]), Err(BuildError::EmptyChoice)));
}

#[test]
fn deadlock_names_both_processes() {
    let mut n = net();
    let x = n.channel("x", ChannelKind::Data);
    let y = n.channel("y", ChannelKind::Data);
    n.add_process("left", 1, &[y], &[x], Proc::recv(y, move |_| Proc::send(x, Word(0), Proc::skip)))
        .unwrap();
    n.add_process("right", 1, &[x], &[y], Proc::recv(x, move |_| Proc::send(y, Word(0), Proc::skip)))
        .unwrap();
    match n.run_to_completion(10) {
        Err(RunError::Deadlock(r)) => {
            let names: Vec<&str> = r.blocked.iter().map(|b| b.name.as_str()).collect();
            assert!(names.contains(&"left") && names.contains(&"right"));
            let text = r.to_string();
            assert!(text.contains("y?") && text.contains("x?"), "{text}");
        }
        other => panic!("expected deadlock, got {other:?}"),
    }
}

#[test]
fn duplicate_writer_is_build_error() {
    let mut n = net();
    let c = n.channel("c", ChannelKind::Data);
    n.add_process("p1", 1, &[], &[c], Proc::send(c, Word(1), Proc::skip)).unwrap();
    let e = n.add_process("p2", 1, &[], &[c], Proc::send(c, Word(2), Proc::skip)).unwrap_err();
    match e {
        BuildError::DuplicateWriter { channel, existing, attempted } => {
            assert_eq!((channel.as_str(), existing.as_str(), attempted.as_str()), ("c", "p1", "p2"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn dangling_channel_fails_validation() {
    let mut n = net();
    let c = n.channel("c", ChannelKind::Data);
    n.add_process("p", 1, &[], &[c], Proc::send(c, Word(1), Proc::skip)).unwrap();
    assert!(matches!(
        n.run_to_completion(5),
        Err(RunError::Build(BuildError::Dangling { missing: "reader", .. }))
    ));
}

#[test]
fn stream_of_two_items_costs_three_communications() {
    let mut n = net();
    let sh = Shape::stream(Shape::Item);
    let p = new_port(&mut n, &sh, "s").unwrap();
    prd(&mut n, "prd", &p, ValueTree::words(&[5, 6])).unwrap();
    let s = store(&mut n, "store", &p).unwrap();
    let m = n.run_to_completion(20).unwrap();
    assert_eq!(m.communications, 3);
    assert_eq!(m.cycles, 3);
    assert_eq!(n.result(s), Some(&ValueTree::words(&[5, 6])));
    assert_eq!(n.stream_summary(), vec![("s".to_string(), 2, 1)]);
}

#[test]
fn vector_moves_in_one_cycle() {
    let mut n = net();
    let p = new_port(&mut n, &Shape::vector(4, Shape::Item), "v").unwrap();
    prd(&mut n, "prd", &p, ValueTree::words(&[1, 2, 3, 4])).unwrap();
    let s = store(&mut n, "store", &p).unwrap();
    let m = n.run_to_completion(5).unwrap();
    assert_eq!((m.cycles, m.communications), (1, 4));
    assert_eq!(n.result(s), Some(&ValueTree::words(&[1, 2, 3, 4])));
}

#[test]
fn prd_rejects_out_of_range_word() {
    let mut n = Network::new(Width::new(8).unwrap());
    let p = new_port(&mut n, &Shape::Item, "i").unwrap();
    assert!(prd(&mut n, "prd", &p, ValueTree::scalar(200)).is_err());
}

#[test]
fn double_eot_is_protocol_error() {
    let mut n = net();
    let sh = Shape::stream(Shape::Item);
    let p = new_port(&mut n, &sh, "s").unwrap();
    let (_, eot) = p.stream_parts().unwrap();
    let data: Vec<_> = p.data_channels();
    n.add_process(
        "bad",
        1,
        &[],
        &[data[0], eot],
        Proc::send(eot, Word(1), move || Proc::send(eot, Word(1), Proc::skip)),
    )
    .unwrap();
    let sink = Proc::recv(eot, move |_| Proc::recv(eot, |_| Proc::skip()));
    n.add_process("sink", 1, &[data[0], eot], &[], sink).unwrap();
    assert!(matches!(n.run_to_completion(10), Err(RunError::Protocol { .. })));
}

#[test]
fn budget_exhaustion_reported() {
    let mut n = net();
    let sh = Shape::stream(Shape::Item);
    let p = new_port(&mut n, &sh, "s").unwrap();
    prd(&mut n, "prd", &p, ValueTree::words(&[1, 2, 3])).unwrap();
    store(&mut n, "store", &p).unwrap();
    assert!(matches!(n.run_to_completion(2), Err(RunError::CycleBudgetExceeded { max_cycles: 2 })));
}

#[test]
fn traces_are_deterministic() {
    let run = || {
        let mut n = net();
        n.record_trace();
        let sh = Shape::stream(Shape::vector(3, Shape::Item));
        let p = new_port(&mut n, &sh, "s").unwrap();
        prd(&mut n, "prd", &p, ValueTree::nested(&[vec![1, 2, 3], vec![4, 5, 6]])).unwrap();
        store(&mut n, "store", &p).unwrap();
        n.run_to_completion(50).unwrap();
        format!("{:?}", n.trace().unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn width_wraps_twos_complement() {
    let w = Width::new(8).unwrap();
    assert_eq!(w.add(Word(127), Word(1)), Word(-128));
    assert_eq!(w.mul(Word(16), Word(16)), Word(0));
    assert!(Width::new(1).is_err() && Width::new(65).is_err());
}
