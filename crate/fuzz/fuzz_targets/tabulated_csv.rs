#![no_main]

use libfuzzer_sys::fuzz_target;
use sce_core::density::{make_tabulated, parse_tabulated_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((x, v)) = parse_tabulated_csv(text) {
        assert_eq!(x.len(), v.len());
        if x.len() <= 4096 {
            if let Ok(d) = make_tabulated(&x, &v) {
                let c = d.cdf(d.median());
                assert!((c - 0.5).abs() < 1e-6, "cdf at median {c}");
            }
        }
    }
});
