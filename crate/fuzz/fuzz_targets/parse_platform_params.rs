#![no_main]

use centaur_sim::perf::PlatformParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = PlatformParams::parse(text) {
        let again = PlatformParams::parse(&p.to_kv().render()).expect("rendered params parse");
        assert_eq!(again, p);
    }
});
