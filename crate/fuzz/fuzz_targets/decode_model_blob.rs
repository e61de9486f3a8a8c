#![no_main]

use centaur_sim::workload::decode_model;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_model(data) {
        let floats: usize = m.tables.iter().map(|t| t.rows() * t.cols()).sum::<usize>()
            + m.bottom.iter().chain(&m.top).map(|l| l.in_dim() * l.out_dim() + l.out_dim()).sum::<usize>();
        assert!(floats * 4 <= data.len());
    }
});
