#![no_main]

use centaur_sim::workload::ModelConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ModelConfig::parse(text) {
        let again = ModelConfig::parse(&cfg.to_kv().render()).expect("rendered config parses");
        assert_eq!(again, cfg);
    }
});
