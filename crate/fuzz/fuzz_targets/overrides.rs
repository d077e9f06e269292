#![no_main]

use libfuzzer_sys::fuzz_target;
use sce_core::recovery::{parse_overrides, resolve_overrides, Override};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = resolve_overrides(text);
    if let Ok(list) = parse_overrides(text) {
        for o in list {
            let back: Override = o.to_string().parse().expect("displayed override parses");
            assert_eq!(back, o);
        }
    }
});
