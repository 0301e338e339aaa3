#![no_main]

use graphfid::montecarlo::{decode_samples, encode_samples};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(series) = decode_samples(data) else { return };
    let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
    assert_eq!(encode_samples(&refs), data);
});
