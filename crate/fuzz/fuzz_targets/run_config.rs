#![no_main]

use fedcom::sim::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let text = cfg.to_text();
        let again = RunConfig::parse(&text).expect("rendered config must parse");
        assert_eq!(again.to_text(), text);
    }
});
