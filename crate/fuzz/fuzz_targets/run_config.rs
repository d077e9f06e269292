#![no_main]

use libfuzzer_sys::fuzz_target;
use sce_core::run::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let json = serde_json::to_string(&cfg).expect("config serializes");
        let back = RunConfig::from_json(&json).expect("serialized config parses");
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }
});
