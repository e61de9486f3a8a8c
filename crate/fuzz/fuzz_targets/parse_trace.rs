#![no_main]

use centaur_sim::cache::{parse_trace, render_trace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trace) = parse_trace(text) {
        assert_eq!(parse_trace(&render_trace(&trace)).unwrap(), trace);
    }
});
