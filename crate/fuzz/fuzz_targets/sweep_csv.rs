#![no_main]

use graphfid::sweep::{read_csv, write_csv_to};
use libfuzzer_sys::fuzz_target;

// Writing is lossy once (12 significant digits), then stable.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(table) = read_csv(text) else { return };
    let mut first = Vec::new();
    write_csv_to(&mut first, &table.rows, &table.metadata).expect("write");
    let reread = read_csv(std::str::from_utf8(&first).expect("utf8")).expect("rendered table must parse");
    let mut second = Vec::new();
    write_csv_to(&mut second, &reread.rows, &reread.metadata).expect("write");
    assert_eq!(first, second);
});
