#![no_main]

use graphfid::pauli::WeightHistogram;
use libfuzzer_sys::fuzz_target;

// First byte picks the qubit count, the rest is the table.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let Ok(hist) = WeightHistogram::from_csv(usize::from(n % 80), text) else { return };
    let again = WeightHistogram::from_csv(hist.n(), &hist.to_csv()).expect("rendered histogram must parse");
    assert_eq!(again, hist);
});
