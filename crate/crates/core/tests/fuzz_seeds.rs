//! Replays the checked-in fuzz corpus seeds. Seeds named `bad_*` or
//! `truncated*` must be rejected, every other seed must parse and round-trip.

use std::fs;
use std::path::{Path, PathBuf};

use graphfid::montecarlo::{decode_samples, encode_samples};
use graphfid::pauli::WeightHistogram;
use graphfid::sweep::{parse_config_text, read_csv, write_csv_to, RunConfig};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>, bool)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let valid = !(name.starts_with("bad_") || name.starts_with("truncated"));
            let bytes = fs::read(&p).unwrap();
            (p, bytes, valid)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn config_seeds() {
    for (path, bytes, valid) in seeds("config_text") {
        let text = String::from_utf8(bytes).unwrap();
        let parsed = parse_config_text(&text).and_then(RunConfig::from_values);
        assert_eq!(parsed.is_ok(), valid, "{}: {parsed:?}", path.display());
        if let Ok(cfg) = parsed {
            let again = parse_config_text(&cfg.to_config_text()).and_then(RunConfig::from_values).unwrap();
            assert_eq!(again, cfg, "{}", path.display());
        }
    }
}

#[test]
fn histogram_seeds() {
    for (path, bytes, valid) in seeds("histogram_csv") {
        let (&n, rest) = bytes.split_first().unwrap();
        let parsed = WeightHistogram::from_csv(usize::from(n), std::str::from_utf8(rest).unwrap());
        assert_eq!(parsed.is_ok(), valid, "{}: {parsed:?}", path.display());
        if let Ok(h) = parsed {
            assert_eq!(h.total(), 1u64 << n);
            assert_eq!(WeightHistogram::from_csv(h.n(), &h.to_csv()).unwrap(), h);
        }
    }
}

#[test]
fn sweep_csv_seeds() {
    for (path, bytes, valid) in seeds("sweep_csv") {
        let text = String::from_utf8(bytes).unwrap();
        let parsed = read_csv(&text);
        assert_eq!(parsed.is_ok(), valid, "{}: {parsed:?}", path.display());
        if let Ok(table) = parsed {
            assert!(!table.rows.is_empty());
            let mut buf = Vec::new();
            write_csv_to(&mut buf, &table.rows, &table.metadata).unwrap();
            assert_eq!(String::from_utf8(buf).unwrap(), text, "{}", path.display());
        }
    }
}

#[test]
fn sample_dump_seeds() {
    for (path, bytes, valid) in seeds("sample_dump") {
        let parsed = decode_samples(&bytes);
        assert_eq!(parsed.is_ok(), valid, "{}: {parsed:?}", path.display());
        if let Ok(series) = parsed {
            let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
            assert_eq!(encode_samples(&refs), bytes);
        }
    }
}
