#![no_main]

use fedcom::sim::read_metrics_from;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_metrics_from(data) {
        let width = rows.first().map_or(0, |r| r.workers.len());
        assert!(rows.iter().all(|r| r.workers.len() == width));
    }
});
