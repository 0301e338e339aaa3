use std::fs;
use std::process::Command;

use graphfid::montecarlo::{decode_samples, MCConfig};
use graphfid::sweep::{
    format_sig12, linspace, parse_config, parse_config_text, read_csv, run_sweep, write_csv, write_csv_to, GraphSpec,
    Method, NoiseSpec, RunConfig, CSV_HEADER,
};
use graphfid::Error;

fn args(s: &str) -> Vec<String> {
    std::iter::once("graphfid".to_string())
        .chain(s.split_whitespace().map(String::from))
        .collect()
}

fn parse(s: &str) -> graphfid::Result<RunConfig> {
    parse_config(args(s))
}

fn config_msg(r: graphfid::Result<RunConfig>) -> String {
    match r {
        Err(Error::Config(m)) => m,
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn documented_invocations() {
    let cfg = parse("--graph 1d-cluster --n 1000 --method transfer --p-min 0.05 --p-max 0.74 --p-steps 70").unwrap();
    assert_eq!(cfg.graph, GraphSpec::Ring { n: 1000 });
    assert_eq!(
        cfg.noise,
        NoiseSpec::Depolarizing {
            p_min: 0.05,
            p_max: 0.74,
            steps: 70
        }
    );
    assert_eq!(cfg.mc, None);

    let cfg = parse("--graph 2d-regular --d 6 --nx 16 --ny 16 --method mc --seed 7").unwrap();
    assert_eq!(cfg.graph, GraphSpec::Regular2d { d: 6, nx: 16, ny: 16 });
    assert_eq!(
        cfg.mc,
        Some(MCConfig {
            seed: 7,
            ..MCConfig::default()
        })
    );

    let msg = config_msg(parse("--graph 2d-regular --d 3 --nx 5 --ny 4 --method mc"));
    assert!(msg.contains("nx must be even"), "{msg}");
}

#[test]
fn incompatible_methods_fail_fast() {
    for (line, needle) in [
        ("--graph 2d-regular --d 4 --nx 4 --ny 4 --method transfer", "requires --graph 1d-cluster"),
        ("--graph 2d-regular --d 6 --nx 4 --ny 4 --method mf", "cluster state"),
        ("--graph 3d-regular --d 5 --nx 4 --ny 4 --nz 4 --method mf", "cluster state"),
        ("--graph 1d-cluster --n 8 --method closed-form", "requires --graph complete"),
        ("--graph 1d-cluster --n 8 --method transfer --px 0.1 --py 0.1 --pz 0.1", "--px/--py/--pz require"),
        ("--graph 1d-cluster --n 8 --method exact --px 0.1 --py 0.1", "same number of times"),
        ("--graph 1d-cluster --n 8 --method exact --px 0.1 --py 0.1 --pz 0.1 --p-min 0.1", "--p-min"),
        ("--graph 1d-cluster --n 8 --method exact --seed 3", "only applies to --method mc"),
        ("--graph 1d-cluster --n 8 --method exact --dump-samples x.bin", "only applies to --method mc"),
        ("--graph 1d-cluster --n 22 --method exact", "enumeration cap"),
        ("--graph 1d-cluster --n 7 --method exact", "even number"),
        ("--graph 1d-cluster --nx 8 --method exact", "--nx does not apply"),
        ("--graph 2d-regular --d 4 --nx 4 --method exact", "--ny is required"),
        ("--graph 3d-regular --d 9 --nx 4 --ny 4 --nz 4 --method mc", "5..=8"),
        ("--graph complete --n 5", "--method is required"),
        ("--n 5 --method exact", "--graph is required"),
        ("--graph 1d-cluster --n 8 --method exact --p-min 0.5 --p-max 0.2", "below --p-max"),
        ("--graph 1d-cluster --n 8 --method exact --p-max 0.8", "[0, 0.75]"),
        ("--graph 1d-cluster --n 8 --method mc --sweeps 10", "sweeps"),
        ("--graph 1d-cluster --n 8 --method spin-exact --px 0.1 --py 0 --pz 0.1", "use exact solver"),
        ("--graph 1d-cluster --n 8 --method exact --px 0.3 --py 0.1 --pz 0.1 --px 0.1 --py 0.1 --pz 0.1", "ascending"),
        ("--graph hexagon --n 8 --method exact", "unknown graph"),
        ("--graph 1d-cluster --n 8 --method fast", "unknown method"),
        ("--graph 1d-cluster --n 8 --method exact --bogus 1", "--bogus"),
    ] {
        let msg = config_msg(parse(line));
        assert!(msg.contains(needle), "{line}: {msg}");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    fs::write(
        &path,
        "# comment\ngraph = 2d-regular\nd = 4\nnx = 4\nny = 6 # trailing\n\nmethod = mc\nburn_in = 100\nseed = 3\n",
    )
    .unwrap();
    let cfg = parse(&format!("--config {} --seed 9 --ny 4", path.display())).unwrap();
    assert_eq!(cfg.graph, GraphSpec::Regular2d { d: 4, nx: 4, ny: 4 });
    let mc = cfg.mc.unwrap();
    assert_eq!((mc.seed, mc.burn_in), (9, 100));
}

#[test]
fn config_file_errors_name_the_line() {
    match parse_config_text("graph = complete\ncolour = blue\n") {
        Err(Error::Parse { line: 2, msg }) => assert!(msg.contains("colour")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_config_text("graph complete\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse_config_text("n =\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse_config_text("n = many\n"), Err(Error::Config(_))));
    assert!(matches!(parse_config_text("config = other.conf\n"), Err(Error::Parse { .. })));
    let v = parse_config_text("px = 0.1\npx = 0.2\np_min = 0.3\n").unwrap();
    assert_eq!(v.px, vec![0.1, 0.2]);
    assert_eq!(v.p_min, Some(0.3));
}

#[test]
fn linear_grid_is_inclusive() {
    let g = linspace(0.05, 0.74, 70);
    assert_eq!(g.len(), 70);
    assert_eq!((g[0], g[69]), (0.05, 0.74));
    assert!((g[1] - 0.06).abs() < 1e-15);
    assert_eq!(linspace(0.3, 0.3, 1), vec![0.3]);
}

#[test]
fn exact_ring_sweep() {
    let cfg = parse("--graph 1d-cluster --n 10 --method exact --p-min 0.05 --p-max 0.7 --p-steps 20").unwrap();
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.rows.len(), 20);
    for r in &out.rows {
        assert_eq!((r.err_fidelity, r.err_energy, r.err_specific_heat), (0.0, 0.0, 0.0));
        assert!(r.fidelity_per_qubit > 0.0 && r.fidelity_per_qubit <= 1.0);
        assert!((r.log_fidelity - 10.0 * r.fidelity_per_qubit.ln()).abs() < 1e-9);
        assert_eq!(r.method, Method::Exact);
        assert_eq!(r.seed, None);
        assert_eq!(r.graph_descriptor, "1d-cluster:10");
    }
    assert!(out.rows.windows(2).all(|w| w[0].p < w[1].p));
}

#[test]
fn solvers_agree_on_a_ring() {
    let grid = "--p-min 0.05 --p-max 0.7 --p-steps 14";
    let rows = |m: &str| run_sweep(&parse(&format!("--graph 1d-cluster --n 8 --method {m} {grid}")).unwrap()).unwrap().rows;
    let exact = rows("exact");
    for other in [rows("spin-exact"), rows("transfer")] {
        for (a, b) in exact.iter().zip(&other) {
            assert!((a.log_fidelity - b.log_fidelity).abs() < 1e-10);
            assert!((a.energy_per_qubit.unwrap() - b.energy_per_qubit.unwrap()).abs() < 1e-6);
            assert!((a.specific_heat_per_qubit.unwrap() - b.specific_heat_per_qubit.unwrap()).abs() < 1e-5);
        }
    }
}

#[test]
fn closed_form_matches_direct_formula() {
    let cfg = parse("--graph complete --n 50 --method closed-form --p-min 0.01 --p-max 0.74 --p-steps 30").unwrap();
    for r in run_sweep(&cfg).unwrap().rows {
        let q = 2.0 * r.p / 3.0;
        let f: f64 = 0.5 * ((1.0 - q).powi(50) + q.powi(50) + (1.0 - 2.0 * q).powi(50));
        assert!((r.log_fidelity - f.ln()).abs() < 1e-12);
        assert_eq!(r.energy_per_qubit, None);
        assert_eq!(r.specific_heat_per_qubit, None);
    }
}

#[test]
fn general_noise_rows() {
    let cfg = parse("--graph 1d-cluster --n 8 --method exact --px 0.1 --py 0 --pz 0.05 --px 0.05 --py 0.1 --pz 0.15").unwrap();
    let rows = run_sweep(&cfg).unwrap().rows;
    assert_eq!(rows.len(), 2);
    assert!((rows[0].p - 0.15).abs() < 1e-15);
    assert_eq!(rows[0].energy_per_qubit, None);
    assert!(rows[1].energy_per_qubit.is_some());
}

fn meta<'a>(out: &'a graphfid::sweep::SweepOutput, key: &str) -> Vec<&'a str> {
    out.metadata.iter().filter(|(k, _)| k == key).map(|(_, v)| v.as_str()).collect()
}

#[test]
fn flags_land_in_metadata() {
    let cfg = parse("--graph 1d-cluster --n 6 --method spin-exact --px 0.05 --py 0.05 --pz 0.05 --px 0.6 --py 0.05 --pz 0.05")
        .unwrap();
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(meta(&out, "negative-coupling"), ["rows 1"]);
    assert!(meta(&out, "metastable").is_empty());

    let cfg = parse("--graph 1d-cluster --n 6 --method mc --p-min 0.1 --p-max 0.7 --p-steps 3 --sweeps 2000 --burn-in 500")
        .unwrap();
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(meta(&out, "metastable"), ["none"]);
    assert!(meta(&out, "negative-coupling").is_empty());
}

#[test]
fn csv_layout() {
    let cfg = parse("--graph complete --n 4 --method closed-form --p-steps 1 --p-min 0.2").unwrap();
    let out = run_sweep(&cfg).unwrap();

    let mut empty = Vec::new();
    write_csv_to(&mut empty, &[], &out.metadata).unwrap();
    let text = String::from_utf8(empty).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data, vec![CSV_HEADER.join(",")]);
    assert!(text.lines().filter(|l| l.starts_with('#')).count() >= 4);

    let mut one = Vec::new();
    write_csv_to(&mut one, &out.rows, &out.metadata).unwrap();
    let text = String::from_utf8(one).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 2);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("0.2,"), "{last}");
    assert!(last.ends_with(",closed-form,complete:4,"), "{last}");
}

#[test]
fn sig12_formatting() {
    assert_eq!(format_sig12(0.0), "0");
    assert_eq!(format_sig12(0.5), "0.5");
    assert_eq!(format_sig12(1.0 / 3.0), "0.333333333333");
    assert_eq!(format_sig12(-2.0 / 3.0 * 1e-7), "-6.66666666667e-8");
    assert_eq!(format_sig12(123456789012345.0), "1.23456789012e14");
    assert_eq!(format_sig12(f64::INFINITY), "inf");
}

#[test]
fn preamble_reconstructs_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    for line in [
        "--graph 3d-regular --d 6 --nx 3 --ny 3 --nz 3 --method mf --p-min 0.1 --p-max 0.7 --p-steps 7",
        "--graph 1d-cluster --n 6 --method mc --sweeps 400 --burn-in 100 --thin 1 --bins 8 --seed 5 --p-steps 3",
        "--graph 1d-cluster --n 6 --method exact --px 0.1 --py 0.2 --pz 0.05",
    ] {
        let cfg = parse(line).unwrap();
        let out = run_sweep(&cfg).unwrap();
        write_csv(&out.rows, &out.metadata, &path).unwrap();
        let table = read_csv(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(table.rows, out.rows.iter().map(|r| reparsed(r)).collect::<Vec<_>>());
        let again = RunConfig::from_values(parse_config_text(&table.config_text()).unwrap()).unwrap();
        assert_eq!(again, cfg, "{line}");
    }
}

/// A row after one write/read cycle.
fn reparsed(r: &graphfid::sweep::SweepRow) -> graphfid::sweep::SweepRow {
    let mut buf = Vec::new();
    write_csv_to(&mut buf, std::slice::from_ref(r), &[]).unwrap();
    read_csv(&String::from_utf8(buf).unwrap()).unwrap().rows.remove(0)
}

#[test]
fn read_csv_rejects_malformed_input() {
    let header = CSV_HEADER.join(",");
    assert!(read_csv("p,beta\n").is_err());
    assert!(read_csv(&format!("{header}\n0.1,2\n")).is_err());
    let bad_method = format!("{header}\n0.1,2,0.9,-1,,,0,0,0,magic,ring,\n");
    assert!(matches!(read_csv(&bad_method), Err(Error::Parse { line: 2, .. })));
    let bad_number = format!("# k: v\n{header}\n0.1,x,0.9,-1,,,0,0,0,exact,ring,\n");
    assert!(matches!(read_csv(&bad_number), Err(Error::Parse { line: 3, .. })));
    assert!(read_csv("#nocolon\n").is_err());
}

#[test]
fn write_failure_names_the_path() {
    let err = write_csv(&[], &[], std::path::Path::new("/nonexistent/dir/out.csv")).unwrap_err();
    assert!(matches!(err, Error::Io { ref path, .. } if path.contains("nonexistent")));
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphfid"))
}

#[test]
fn binary_exit_codes() {
    let help = bin().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8(help.stdout).unwrap();
    for flag in [
        "--graph", "--n ", "--nx", "--ny", "--nz", "--d ", "--method", "--p-min", "--p-max", "--p-steps", "--px", "--py",
        "--pz", "--sweeps", "--burn-in", "--thin", "--bins", "--seed", "--output", "--config", "--dump-samples",
    ] {
        assert!(text.contains(flag), "help lacks {flag}");
    }

    let ok = bin().args(["--graph", "1d-cluster", "--n", "6", "--method", "transfer", "--p-steps", "5"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let table = read_csv(&String::from_utf8(ok.stdout).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 5);

    let config = bin().args(["--graph", "1d-cluster", "--n", "5", "--method", "exact"]).output().unwrap();
    assert_eq!(config.status.code(), Some(2));
    assert!(String::from_utf8(config.stderr).unwrap().contains("even"));
    assert_eq!(bin().arg("--what").output().unwrap().status.code(), Some(2));

    let io = bin()
        .args(["--graph", "1d-cluster", "--n", "6", "--method", "exact", "--output", "/nonexistent/dir/x.csv"])
        .output()
        .unwrap();
    assert_eq!(io.status.code(), Some(3));
}

#[test]
fn binary_writes_sample_dump() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("mc.csv");
    let dump = dir.path().join("mc.bin");
    let out = bin()
        .args(["--graph", "1d-cluster", "--n", "6", "--method", "mc", "--p-min", "0.2", "--p-max", "0.6"])
        .args(["--p-steps", "3", "--sweeps", "400", "--burn-in", "100", "--thin", "2", "--bins", "8"])
        .arg("--output")
        .arg(&csv)
        .arg("--dump-samples")
        .arg(&dump)
        .output()
        .unwrap();
    assert!(out.status.success());
    let series = decode_samples(&fs::read(&dump).unwrap()).unwrap();
    assert!(!series.is_empty());
    assert_eq!(series.len() % 2, 0);
    assert!(series.iter().all(|s| s.len() == 200));
    assert!(series.iter().flatten().all(|&e| (0.0..=6.0 * 3.0).contains(&e)));
    assert_eq!(read_csv(&fs::read_to_string(&csv).unwrap()).unwrap().rows.len(), 3);
}
