use procnet::bench::{
    cmd_compare, cmd_run, cmd_sweep_k, main_with_args, read_reports_csv, read_reports_json, write_reports, BenchError,
    Config, Format, RunReport, EXIT_OK, EXIT_STUCK, EXIT_USAGE,
};
use procnet::designs::{DesignId, Dims};

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with_args(std::iter::once("procnet").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn reports(cfg: &Config) -> Vec<RunReport> {
    cmd_run(cfg).unwrap().into_iter().map(|o| o.report).collect()
}

fn small() -> Config {
    Config {
        dims: vec![Dims { n: 2, m: 3, k: 2 }, Dims { n: 3, m: 2, k: 3 }],
        ..Config::default()
    }
}

#[test]
fn json_round_trip() {
    let rs = reports(&small());
    let mut buf = Vec::new();
    write_reports(&mut buf, &rs, Format::Json).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.contains("\"throughput_items_per_cycle\""));
    assert_eq!(read_reports_json(&text).unwrap(), rs);
}

#[test]
fn csv_round_trip_with_warnings() {
    let cfg = Config {
        designs: vec![DesignId::D4TurnoutPipeline, DesignId::D1DataParallel],
        dims: vec![Dims { n: 6, m: 2, k: 2 }],
        ..Config::default()
    };
    let rs = reports(&cfg);
    assert!(rs.iter().any(|r| !r.warnings.is_empty()));
    let mut buf = Vec::new();
    write_reports(&mut buf, &rs, Format::Csv).unwrap();
    assert_eq!(read_reports_csv(&String::from_utf8(buf).unwrap()).unwrap(), rs);
}

#[test]
fn reports_are_ordered_and_reproducible() {
    let a = reports(&small());
    let keys: Vec<_> = a.iter().map(|r| (r.design, r.dims)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(a, reports(&small()));
    assert!(a.iter().all(|r| r.verified));
}

#[test]
fn compare_sorts_by_throughput() {
    let out = cmd_compare(&small()).unwrap();
    let t: Vec<f64> = out.iter().map(|o| o.report.throughput_items_per_cycle).collect();
    assert!(t.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn compare_needs_two_designs() {
    let cfg = Config {
        designs: vec![DesignId::D2Stream],
        ..Config::default()
    };
    assert!(matches!(cmd_compare(&cfg), Err(BenchError::Usage(_))));
    assert_eq!(cli(&["compare", "--designs", "d2"]).0, EXIT_USAGE);
}

#[test]
fn sweep_rejects_non_pipelined() {
    let (code, _, err) = cli(&["sweep-k", "--designs", "d3,d2"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("compare"), "{err}");
}

#[test]
fn sweep_is_affine_with_baseline() {
    let cfg = Config {
        designs: vec![DesignId::D3Pipeline, DesignId::D5MultilevelSystolic],
        dims: vec![Dims { n: 2, m: 2, k: 4 }],
        ..Config::default()
    };
    let series = cmd_sweep_k(&cfg).unwrap();
    assert_eq!(series.len(), 2);
    for s in &series {
        let ks: Vec<usize> = s.points.iter().map(|p| p.k).collect();
        assert_eq!(ks, vec![1, 4, 8, 16]);
        assert!(s.affine, "{s:?}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(cli(&["run", "--dims", "2,2,2", "--format", "json"]).0, EXIT_OK);
    let (code, out, _) = cli(&["run", "--designs", "d3", "--max-cycles", "1", "--format", "json"]);
    assert_eq!(code, EXIT_STUCK);
    let rs = read_reports_json(&out).unwrap();
    assert!(!rs[0].verified && rs[0].warnings[0].contains("budget"));
    assert_eq!(cli(&["run", "--width", "65"]).0, EXIT_USAGE);
    assert_eq!(cli(&["run", "--width", "3"]).0, EXIT_USAGE);
    assert_eq!(cli(&["run", "--designs", "d9"]).0, EXIT_USAGE);
    assert_eq!(cli(&["run", "--dims", "2,2"]).0, EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]).0, EXIT_USAGE);
}

#[test]
fn cli_json_is_byte_identical_across_runs() {
    let args = ["run", "--dims", "3,3,3", "--dims", "2,4,3", "--seed", "17", "--format", "json"];
    assert_eq!(cli(&args).1, cli(&args).1);
}

#[test]
fn small_values_flag() {
    let (code, out, _) = cli(&["run", "--designs", "d5", "--small-values", "--dims", "4,4,4", "--format", "csv"]);
    assert_eq!(code, EXIT_OK);
    assert!(read_reports_csv(&out).unwrap()[0].verified);
}
