#![no_main]

use centaur_sim::report::RunSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = RunSpec::parse(text) {
        let again = RunSpec::parse(&spec.to_kv().render()).expect("rendered spec parses");
        assert_eq!(again, spec);
    }
});
