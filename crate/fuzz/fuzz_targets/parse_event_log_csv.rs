#![no_main]

use centaur_sim::engine::EventLog;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(log) = EventLog::parse_csv(text) {
        let _ = log.summary();
        let again = EventLog::parse_csv(&log.to_csv_string()).expect("rendered log parses");
        assert_eq!(again.events(), log.events());
    }
});
