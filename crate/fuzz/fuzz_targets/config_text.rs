#![no_main]

use graphfid::sweep::{parse_config_text, RunConfig};
use libfuzzer_sys::fuzz_target;

// Validation builds the graph and the noise grid, so keep sizes small.
const MAX_SIDE: usize = 64;
const MAX_STEPS: usize = 1000;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(values) = parse_config_text(text) else { return };
    let sides = [values.n, values.nx, values.ny, values.nz, values.d];
    if sides.iter().flatten().any(|&s| s > MAX_SIDE) || values.p_steps.is_some_and(|s| s > MAX_STEPS) {
        return;
    }
    let Ok(cfg) = RunConfig::from_values(values) else { return };
    let text = cfg.to_config_text();
    let again = parse_config_text(&text)
        .and_then(RunConfig::from_values)
        .expect("rendered config must parse");
    assert_eq!(again.to_config_text(), text);
});
